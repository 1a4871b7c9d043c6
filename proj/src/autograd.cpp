#include "rsr/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "rsr/kernels.hpp"

namespace rsr::ag {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "subtract";
    case Op::mul: return "multiply";
    case Op::scale: return "scale";
    case Op::matmul: return "matmul";
    case Op::linear: return "linear";
    case Op::conv2d: return "conv2d";
    case Op::relu: return "relu";
    case Op::reshape: return "reshape";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::variance: return "variance";
    case Op::sign: return "sign";
    case Op::abs_sum: return "abs_sum";
    case Op::softmax_xent: return "softmax_cross_entropy";
    case Op::clamp: return "clamp";
    case Op::channel_noise: return "channel_noise";
    case Op::channel_affine: return "channel_affine";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an unbound Var");
  return tape_->node(*this).value;
}

bool Var::requires_grad() const { return tape_ && tape_->node(*this).requires_grad; }

const Tensor& Gradients::operator[](Var leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw Error("no gradient recorded for this leaf");
  return it->second;
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw Error("Var does not belong to this tape");
  return nodes_[v.id_];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (consumed_) throw Error("cannot record on a consumed tape");
  nodes_.push_back(Node{Op::leaf, {}, std::move(value), requires_grad, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Op op, std::span<const Var> inputs, Tensor value, BackwardFn fn) {
  if (consumed_) throw Error("cannot record on a consumed tape");
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw Error(std::string(op_name(op)) + ": inputs live on different tapes");
    n.inputs.push_back(v.id_);
    n.requires_grad = n.requires_grad || nodes_[v.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var output) {
  if (consumed_) throw Error("backward called on a consumed tape");
  const Node& out = node(output);
  if (out.value.size() != 1)
    throw ShapeError("backward needs a scalar output, got shape " + to_string(out.value.shape()));

  std::vector<Tensor> grads(nodes_.size());
  grads[output.id_] = Tensor(out.value.shape(), 1.0);
  std::vector<Tensor*> slots;
  for (std::size_t id = output.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.op == Op::leaf || !n.requires_grad || grads[id].empty() || !n.backward) continue;
    slots.assign(n.inputs.size(), nullptr);
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      const std::size_t in = n.inputs[j];
      if (!nodes_[in].requires_grad) continue;
      if (grads[in].empty()) grads[in] = Tensor::zeros_like(nodes_[in].value);
      slots[j] = &grads[in];
    }
    n.backward(grads[id], slots);
    grads[id] = Tensor();
  }

  Gradients result;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (n.op != Op::leaf || !n.requires_grad) continue;
    result.grads_.emplace(id, grads[id].empty() ? Tensor::zeros_like(n.value) : std::move(grads[id]));
  }
  consumed_ = true;
  for (Node& n : nodes_) n.backward = nullptr;
  return result;
}

namespace {

[[noreturn]] void shape_mismatch(Op op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + to_string(a) + " vs " +
                   to_string(b));
}

Tape& tape_of(Var a) {
  if (!a.tape()) throw Error("use of an unbound Var");
  return *a.tape();
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

void accumulate(Tensor* dst, const Tensor& g, double s = 1.0) {
  if (!dst) return;
  for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += s * g[i];
}

Var reduce_to_scalar(Op op, Var a, double value, Tape::BackwardFn fn) {
  const Var in[] = {a};
  return tape_of(a).record(op, in, Tensor::scalar(value), std::move(fn));
}

}  // namespace

Var add(Var a, Var b) {
  if (a.shape() != b.shape()) shape_mismatch(Op::add, a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const Var in[] = {a, b};
  return tape_of(a).record(Op::add, in, std::move(out), [](const Tensor& g, auto gi) {
    accumulate(gi[0], g);
    accumulate(gi[1], g);
  });
}

Var sub(Var a, Var b) {
  if (a.shape() != b.shape()) shape_mismatch(Op::sub, a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const Var in[] = {a, b};
  return tape_of(a).record(Op::sub, in, std::move(out), [](const Tensor& g, auto gi) {
    accumulate(gi[0], g);
    accumulate(gi[1], g, -1.0);
  });
}

Var mul(Var a, Var b) {
  if (a.shape() != b.shape()) shape_mismatch(Op::mul, a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const Tensor* av = &a.value();
  const Tensor* bv = &b.value();
  const Var in[] = {a, b};
  return tape_of(a).record(Op::mul, in, std::move(out), [av, bv](const Tensor& g, auto gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * (*bv)[i];
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * (*av)[i];
  });
}

Var scale(Var a, double s) {
  const Var in[] = {a};
  return tape_of(a).record(Op::scale, in, map(a.value(), [s](double v) { return s * v; }),
                           [s](const Tensor& g, auto gi) { accumulate(gi[0], g, s); });
}

Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_mismatch(Op::matmul, sa, sb);
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor out(Shape{m, n});
  kernels::gemm_nn(m, n, k, a.value().data(), b.value().data(), out.data());
  const Tensor* av = &a.value();
  const Tensor* bv = &b.value();
  const Var in[] = {a, b};
  return tape_of(a).record(Op::matmul, in, std::move(out), [=](const Tensor& g, auto gi) {
    if (gi[0]) kernels::gemm_nt(m, k, n, g.data(), bv->data(), gi[0]->data());
    if (gi[1]) kernels::gemm_tn(k, n, m, av->data(), g.data(), gi[1]->data());
  });
}

Var linear(Var x, Var w) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[1]) shape_mismatch(Op::linear, sx, sw);
  const std::size_t batch = sx[0], in_dim = sx[1], out_dim = sw[0];
  Tensor out(Shape{batch, out_dim});
  kernels::gemm_nt(batch, out_dim, in_dim, x.value().data(), w.value().data(), out.data());
  const Tensor* xv = &x.value();
  const Tensor* wv = &w.value();
  const Var in[] = {x, w};
  return tape_of(x).record(Op::linear, in, std::move(out), [=](const Tensor& g, auto gi) {
    if (gi[0]) kernels::gemm_nn(batch, in_dim, out_dim, g.data(), wv->data(), gi[0]->data());
    if (gi[1]) kernels::gemm_tn(out_dim, in_dim, batch, g.data(), xv->data(), gi[1]->data());
  });
}

Var conv2d(Var x, Var w, std::size_t padding) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1]) shape_mismatch(Op::conv2d, sx, sw);
  if (sw[2] > sx[2] + 2 * padding || sw[3] > sx[3] + 2 * padding)
    throw ShapeError("conv2d: kernel " + to_string(sw) + " larger than padded input " +
                     to_string(sx) + " with padding " + std::to_string(padding));
  kernels::ConvGeometry geo{sx[0], sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], padding};
  Tensor out(Shape{geo.batch, geo.out_channels, geo.out_h(), geo.out_w()});
  std::shared_ptr<std::vector<double>> cols;
  if (w.requires_grad()) cols = std::make_shared<std::vector<double>>(geo.batch * geo.patch() * geo.positions());
  kernels::conv2d_forward(geo, x.value().data(), w.value().data(), out.data(),
                          cols ? std::span<double>(*cols) : std::span<double>());
  const Tensor* wv = &w.value();
  const Var in[] = {x, w};
  return tape_of(x).record(Op::conv2d, in, std::move(out), [=](const Tensor& g, auto gi) {
    if (gi[0]) kernels::conv2d_backward_input(geo, wv->data(), g.data(), gi[0]->data());
    if (gi[1]) kernels::conv2d_backward_weight(geo, *cols, g.data(), gi[1]->data());
  });
}

Var relu(Var a) {
  const Tensor* av = &a.value();
  const Var in[] = {a};
  return tape_of(a).record(Op::relu, in, map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }),
                           [av](const Tensor& g, auto gi) {
                             for (std::size_t i = 0; i < g.size(); ++i)
                               if ((*av)[i] > 0.0) (*gi[0])[i] += g[i];
                           });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const Var in[] = {a};
  return tape_of(a).record(Op::reshape, in, std::move(out),
                           [](const Tensor& g, auto gi) { accumulate(gi[0], g); });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return reduce_to_scalar(Op::sum, a, s, [](const Tensor& g, auto gi) {
    for (auto& v : gi[0]->data()) v += g[0];
  });
}

Var mean(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const double n = static_cast<double>(a.value().size());
  return reduce_to_scalar(Op::mean, a, s / n, [n](const Tensor& g, auto gi) {
    for (auto& v : gi[0]->data()) v += g[0] / n;
  });
}

Var variance(Var a) {
  const Tensor* av = &a.value();
  return reduce_to_scalar(Op::variance, a, population_variance(av->data()),
                          [av](const Tensor& g, auto gi) {
                            const double n = static_cast<double>(av->size());
                            double m = 0.0;
                            for (double v : av->data()) m += v;
                            m /= n;
                            for (std::size_t i = 0; i < av->size(); ++i)
                              (*gi[0])[i] += g[0] * 2.0 * ((*av)[i] - m) / n;
                          });
}

Var sign(Var a) {
  const Var in[] = {a};
  return tape_of(a).record(Op::sign, in, map(a.value(), [](double v) {
                             return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                           }),
                           [](const Tensor&, auto) {});
}

Var abs_sum(Var a) {
  const Tensor* av = &a.value();
  double s = 0.0;
  for (double v : av->data()) s += std::abs(v);
  return reduce_to_scalar(Op::abs_sum, a, s, [av](const Tensor& g, auto gi) {
    for (std::size_t i = 0; i < av->size(); ++i) {
      const double v = (*av)[i];
      (*gi[0])[i] += g[0] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
    }
  });
}

namespace {

// Row-wise softmax into `probs`; returns per-row log-sum-exp.
std::vector<double> softmax_rows(const Tensor& logits, std::vector<double>& probs) {
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  probs.assign(logits.size(), 0.0);
  std::vector<double> lse(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = logits.data().data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - mx) / s;
    lse[b] = mx + std::log(s);
  }
  return lse;
}

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("softmax_cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  for (int t : labels)
    if (t < 0 || static_cast<std::size_t>(t) >= logits.dim(1))
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(t) + " out of range for " +
                       std::to_string(logits.dim(1)) + " classes");
}

}  // namespace

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  check_labels(logits.value(), labels);
  const std::size_t batch = logits.value().dim(0), classes = logits.value().dim(1);
  auto probs = std::make_shared<std::vector<double>>();
  const auto lse = softmax_rows(logits.value(), *probs);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b)
    loss += lse[b] - logits.value()[b * classes + static_cast<std::size_t>(labels[b])];
  loss /= static_cast<double>(batch);
  std::vector<int> targets(labels.begin(), labels.end());
  return reduce_to_scalar(Op::softmax_xent, logits, loss,
                          [=](const Tensor& g, auto gi) {
                            const double s = g[0] / static_cast<double>(batch);
                            for (std::size_t b = 0; b < batch; ++b)
                              for (std::size_t c = 0; c < classes; ++c) {
                                const double onehot =
                                    static_cast<std::size_t>(targets[b]) == c ? 1.0 : 0.0;
                                (*gi[0])[b * classes + c] += s * ((*probs)[b * classes + c] - onehot);
                              }
                          });
}

Var clamp(Var a, double lo, double hi) {
  const Tensor* av = &a.value();
  const Var in[] = {a};
  return tape_of(a).record(Op::clamp, in,
                           map(a.value(), [=](double v) { return std::min(std::max(v, lo), hi); }),
                           [=](const Tensor& g, auto gi) {
                             for (std::size_t i = 0; i < g.size(); ++i)
                               if ((*av)[i] >= lo && (*av)[i] <= hi) (*gi[0])[i] += g[i];
                           });
}

Var channel_noise(Var w, Var alpha, const Tensor& eta) {
  const Shape& sw = w.shape();
  if (eta.shape() != sw) shape_mismatch(Op::channel_noise, sw, eta.shape());
  if (sw.empty() || alpha.value().size() != sw[0])
    throw ShapeError("channel_noise: alpha has " + std::to_string(alpha.value().size()) +
                     " entries but weight " + to_string(sw) + " has " +
                     std::to_string(sw.empty() ? 0 : sw[0]) + " output channels");
  const std::size_t channels = sw[0], chunk = w.value().size() / channels;
  Tensor out(sw);
  const Tensor& wv = w.value();
  const Tensor& av = alpha.value();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = c * chunk; i < (c + 1) * chunk; ++i) out[i] = wv[i] + av[c] * eta[i];
  auto noise = std::make_shared<Tensor>(eta);
  const Var in[] = {w, alpha};
  return tape_of(w).record(Op::channel_noise, in, std::move(out), [=](const Tensor& g, auto gi) {
    accumulate(gi[0], g);
    if (gi[1])
      for (std::size_t c = 0; c < channels; ++c) {
        double s = 0.0;
        for (std::size_t i = c * chunk; i < (c + 1) * chunk; ++i) s += g[i] * (*noise)[i];
        (*gi[1])[c] += s;
      }
  });
}

Var channel_affine(Var x, std::span<const double> scale_c, std::span<const double> shift_c) {
  const Shape& sx = x.shape();
  if (sx.size() < 2 || scale_c.size() != sx[1] || shift_c.size() != sx[1])
    throw ShapeError("channel_affine: input " + to_string(sx) + " vs " +
                     std::to_string(scale_c.size()) + " channel constants");
  const std::size_t channels = sx[1];
  const std::size_t inner = x.value().size() / (sx[0] * channels);
  std::vector<double> sc(scale_c.begin(), scale_c.end()), sh(shift_c.begin(), shift_c.end());
  Tensor out(sx);
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const std::size_t c = (i / inner) % channels;
    out[i] = xv[i] * sc[c] + sh[c];
  }
  const Var in[] = {x};
  return tape_of(x).record(Op::channel_affine, in, std::move(out),
                           [=](const Tensor& g, auto gi) {
                             for (std::size_t i = 0; i < g.size(); ++i)
                               (*gi[0])[i] += g[i] * sc[(i / inner) % channels];
                           });
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  if (!(h > 0.0)) throw Error("finite_difference_gradient: step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  std::vector<double> probs;
  const auto lse = softmax_rows(logits, probs);
  std::vector<double> out(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b)
    out[b] = lse[b] - logits[b * logits.dim(1) + static_cast<std::size_t>(labels[b])];
  return out;
}

}  // namespace rsr::ag
