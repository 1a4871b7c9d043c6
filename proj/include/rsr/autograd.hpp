#pragma once

// Tape-based reverse-mode differentiation over rsr::Tensor.
//
// A Tape records every primitive applied to at least one input that needs a
// gradient. Values that need no gradient are stored as constants so a Var
// handle always refers to a node. backward() walks the tape once in reverse
// recording order and consumes it.

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rsr/tensor.hpp"

namespace rsr::ag {

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  scale,
  matmul,
  linear,
  conv2d,
  relu,
  reshape,
  sum,
  mean,
  variance,
  sign,
  abs_sum,
  softmax_xent,
  clamp,
  channel_noise,
  channel_affine,
};

std::string_view op_name(Op op);

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar with respect to every leaf that required one.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const;
  bool contains(Var leaf) const { return grads_.count(leaf.id()) != 0; }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

class Tape {
 public:
  /// Accumulates into the parents' gradients; a null slot needs no gradient.
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op. If no input requires a gradient the output is stored as
  /// a constant and `fn` is dropped.
  Var record(Op op, std::span<const Var> inputs, Tensor value, BackwardFn fn);

  Gradients backward(Var output);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend class Var;
  struct Node {
    Op op = Op::leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
  };
  const Node& node(Var v) const;

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// Primitives. All inputs must live on the same tape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// (m x k) * (k x n)
Var matmul(Var a, Var b);
/// x(batch x in) * w(out x in)^T
Var linear(Var x, Var w);
/// x(B x C x H x W), w(O x C x kh x kw), stride 1, symmetric zero padding.
Var conv2d(Var x, Var w, std::size_t padding);
Var relu(Var a);
Var reshape(Var a, Shape shape);
Var sum(Var a);
Var mean(Var a);
/// Population variance (divides by N).
Var variance(Var a);
/// Elementwise sign with sign(0) = 0; gradient is zero everywhere.
Var sign(Var a);
Var abs_sum(Var a);
/// Mean over the batch of softmax cross-entropy; logits are (batch x classes).
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
Var clamp(Var a, double lo, double hi);
/// w + alpha[c] * eta for output channel c (leading axis of w); eta is a
/// constant of w's shape.
Var channel_noise(Var w, Var alpha, const Tensor& eta);
/// x * scale[c] + shift[c] over axis 1 of x; scale and shift are constants.
Var channel_affine(Var x, std::span<const double> scale, std::span<const double> shift);

/// Central-difference gradient of a scalar function.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h);

/// Per-sample softmax cross-entropy, computed without a tape.
std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const int> labels);

}  // namespace rsr::ag
