#pragma once

// Small parametric models with channel-wise noise injection (CNI) on their
// weights. Every conv/dense layer carries one trainable noise scale per
// output channel; at each noisy forward pass the weight used is
//
//   W~ = W + alpha[c] * eta,   eta ~ N(0, var(W)) i.i.d., masked if pruned
//
// where var(W) is the population variance of the whole stored tensor and is
// treated as a constant for differentiation.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rsr/autograd.hpp"
#include "rsr/tensor.hpp"

namespace rsr::nn {

using rsr::to_string;

enum class LayerKind : std::uint8_t { input_normalize, dense, conv2d, relu, flatten };

std::string_view to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;   // in_dim or in_channels
  std::size_t out = 0;  // out_dim or out_channels
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t padding = 0;

  bool parametric() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
  Shape weight_shape() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NoiseState {
  std::vector<double> alpha;
  bool enabled = true;

  friend bool operator==(const NoiseState&, const NoiseState&) = default;
};

struct Layer {
  LayerSpec spec;
  Tensor weight;
  NoiseState noise;
  std::optional<Tensor> mask;  // 1.0 keeps, 0.0 pruned

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

inline constexpr double kDefaultAlpha = 0.25;

class Model {
 public:
  std::string arch = "custom";
  double width_multiplier = 1.0;
  Shape input_shape;  // per sample, e.g. {C, H, W}
  std::size_t num_classes = 0;
  Normalization normalization;
  std::vector<Layer> layers;
  std::uint64_t seed = 0;

  /// Indices into `layers` of the conv/dense layers, in order.
  std::vector<std::size_t> parametric_layers() const;
  /// Number of conv/dense weights (noise scales excluded).
  std::size_t weight_count() const;
  bool has_masks() const;
  void set_noise_enabled(bool enabled);
  bool noise_enabled() const;

  friend bool operator==(const Model&, const Model&) = default;
};

/// Hidden width after scaling: max(1, round(w * base)).
std::size_t scaled_width(std::size_t base, double width_multiplier);

/// Builds a model from explicit layer specs; weights are He-initialised from
/// `seed`, noise scales set to kDefaultAlpha. The leading input_normalize
/// layer is added automatically.
Model build_model(std::string arch, Shape input_shape, std::size_t num_classes,
                  Normalization normalization, std::vector<LayerSpec> specs, std::uint64_t seed,
                  double width_multiplier = 1.0);

/// Shipped architectures: "linear", "mlp-small", "cnn-small".
Model make_model(std::string_view arch, Shape input_shape, std::size_t num_classes,
                 Normalization normalization, double width_multiplier, std::uint64_t seed);

/// Selects which noise realisation a forward pass uses.
struct NoiseDraw {
  bool enabled = false;
  std::uint64_t id = 0;
};

/// Hands out consecutive draw ids so every forward pass sees fresh noise.
class NoiseStream {
 public:
  NoiseStream(bool enabled, std::uint64_t base) : enabled_(enabled), next_(base) {}
  NoiseDraw next() { return {enabled_, next_++}; }
  bool enabled() const { return enabled_; }

 private:
  bool enabled_;
  std::uint64_t next_;
};

inline NoiseDraw noiseless() { return {}; }

double layer_variance(const Tensor& w);

/// sigma * z (times the mask), the constant noise tensor for one layer and
/// one draw. `stream` identifies the parametric layer.
Tensor noise_tensor(const Tensor& w, const std::optional<Tensor>& mask, std::uint64_t seed,
                    std::uint32_t stream, std::uint64_t draw);

/// Value-level CNI transform. Returns `w` unchanged when the draw or the
/// layer's noise is disabled.
Tensor cni_transform(const Tensor& w, const NoiseState& noise, const std::optional<Tensor>& mask,
                     std::uint64_t seed, std::uint32_t stream, NoiseDraw draw);

/// Parameters placed on a tape; index i belongs to the i-th parametric layer.
struct BoundParams {
  std::vector<ag::Var> weights;
  std::vector<ag::Var> alphas;
};

BoundParams bind_parameters(ag::Tape& tape, const Model& model, bool requires_grad);

/// Logits (batch x classes). x is (batch x input_shape...) with pixels in
/// [0, 1]; normalisation happens inside.
ag::Var forward(ag::Tape& tape, const Model& model, const BoundParams& params, ag::Var x,
                NoiseDraw draw);

/// Per-channel (x - mean) / std, the model's fixed first layer.
ag::Var normalize_input(const Model& model, ag::Var x);

/// Forward pass without gradients.
Tensor predict(const Model& model, const Tensor& x, NoiseDraw draw);

std::vector<int> argmax_rows(const Tensor& logits);

/// Checks that x is (batch x model.input_shape).
void check_input(const Model& model, const Tensor& x);

}  // namespace rsr::nn
