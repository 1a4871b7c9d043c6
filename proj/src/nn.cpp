#include "rsr/nn.hpp"

#include <cmath>

#include "rsr/rng.hpp"

namespace rsr::nn {

namespace {
constexpr std::uint32_t kInitStream = 0x40000000u;
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::input_normalize: return "input_normalize";
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

Shape LayerSpec::weight_shape() const {
  switch (kind) {
    case LayerKind::dense: return {out, in};
    case LayerKind::conv2d: return {out, in, kernel_h, kernel_w};
    default: return {};
  }
}

std::vector<std::size_t> Model::parametric_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].spec.parametric()) idx.push_back(i);
  return idx;
}

std::size_t Model::weight_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    if (l.spec.parametric()) n += l.weight.size();
  return n;
}

bool Model::has_masks() const {
  for (const auto& l : layers)
    if (l.spec.parametric() && l.mask) return true;
  return false;
}

void Model::set_noise_enabled(bool enabled) {
  for (auto& l : layers)
    if (l.spec.parametric()) l.noise.enabled = enabled;
}

bool Model::noise_enabled() const {
  for (const auto& l : layers)
    if (l.spec.parametric() && l.noise.enabled) return true;
  return false;
}

std::size_t scaled_width(std::size_t base, double width_multiplier) {
  if (!(width_multiplier > 0.0)) throw Error("width multiplier must be positive");
  const auto w = static_cast<std::size_t>(std::llround(width_multiplier * static_cast<double>(base)));
  return w < 1 ? 1 : w;
}

Model build_model(std::string arch, Shape input_shape, std::size_t num_classes,
                  Normalization normalization, std::vector<LayerSpec> specs, std::uint64_t seed,
                  double width_multiplier) {
  if (input_shape.empty()) throw ShapeError("model input shape must be non-empty");
  if (num_classes < 2) throw Error("a classifier needs at least two classes");
  const std::size_t channels = input_shape.size() >= 3 ? input_shape[0] : 1;
  if (normalization.mean.empty()) normalization.mean.assign(channels, 0.0);
  if (normalization.stddev.empty()) normalization.stddev.assign(channels, 1.0);
  if (normalization.mean.size() != channels || normalization.stddev.size() != channels)
    throw Error("normalization constants must have one entry per input channel");

  Model m;
  m.arch = std::move(arch);
  m.width_multiplier = width_multiplier;
  m.input_shape = std::move(input_shape);
  m.num_classes = num_classes;
  m.normalization = std::move(normalization);
  m.seed = seed;
  m.layers.push_back(Layer{LayerSpec{LayerKind::input_normalize}, {}, {}, {}});
  std::uint32_t param_index = 0;
  for (const LayerSpec& spec : specs) {
    Layer layer{spec, {}, {}, {}};
    if (spec.parametric()) {
      const Shape ws = spec.weight_shape();
      layer.weight = Tensor(ws);
      const double fan_in = static_cast<double>(layer.weight.size() / spec.out);
      const double stddev = std::sqrt(2.0 / fan_in);
      for (std::size_t i = 0; i < layer.weight.size(); ++i)
        layer.weight[i] =
            stddev * counter_normal(seed, kInitStream + param_index, 0, static_cast<std::uint32_t>(i));
      layer.noise.alpha.assign(spec.out, kDefaultAlpha);
      ++param_index;
    }
    m.layers.push_back(std::move(layer));
  }
  return m;
}

Model make_model(std::string_view arch, Shape input_shape, std::size_t num_classes,
                 Normalization normalization, double width_multiplier, std::uint64_t seed) {
  const std::size_t flat = shape_size(input_shape);
  std::vector<LayerSpec> specs;
  if (arch == "linear") {
    specs = {{LayerKind::flatten}, {LayerKind::dense, flat, num_classes}};
  } else if (arch == "mlp-small") {
    const std::size_t h1 = scaled_width(128, width_multiplier);
    const std::size_t h2 = scaled_width(64, width_multiplier);
    specs = {{LayerKind::flatten},
             {LayerKind::dense, flat, h1},
             {LayerKind::relu},
             {LayerKind::dense, h1, h2},
             {LayerKind::relu},
             {LayerKind::dense, h2, num_classes}};
  } else if (arch == "cnn-small") {
    if (input_shape.size() != 3) throw ShapeError("cnn-small needs a (C, H, W) input shape");
    if (input_shape[1] < 5 || input_shape[2] < 5)
      throw ShapeError("cnn-small needs images of at least 5x5, got " + to_string(input_shape));
    const std::size_t c1 = scaled_width(16, width_multiplier);
    const std::size_t c2 = scaled_width(32, width_multiplier);
    const std::size_t spatial = (input_shape[1] - 4) * (input_shape[2] - 4);
    specs = {{LayerKind::conv2d, input_shape[0], c1, 3, 3, 0},
             {LayerKind::relu},
             {LayerKind::conv2d, c1, c2, 3, 3, 0},
             {LayerKind::relu},
             {LayerKind::flatten},
             {LayerKind::dense, c2 * spatial, num_classes}};
  } else {
    throw Error("unknown architecture '" + std::string(arch) + "'");
  }
  return build_model(std::string(arch), std::move(input_shape), num_classes, std::move(normalization),
                     std::move(specs), seed, width_multiplier);
}

double layer_variance(const Tensor& w) {
  if (w.empty()) throw Error("layer_variance of an empty tensor");
  return population_variance(w.data());
}

Tensor noise_tensor(const Tensor& w, const std::optional<Tensor>& mask, std::uint64_t seed,
                    std::uint32_t stream, std::uint64_t draw) {
  const double sigma = std::sqrt(layer_variance(w));
  Tensor eta(w.shape());
  for (std::size_t i = 0; i < eta.size(); ++i)
    eta[i] = sigma * counter_normal(seed, stream, draw, static_cast<std::uint32_t>(i));
  if (mask) {
    if (mask->shape() != w.shape())
      throw ShapeError("mask shape " + to_string(mask->shape()) + " differs from weight " +
                       to_string(w.shape()));
    for (std::size_t i = 0; i < eta.size(); ++i) eta[i] *= (*mask)[i];
  }
  return eta;
}

Tensor cni_transform(const Tensor& w, const NoiseState& noise, const std::optional<Tensor>& mask,
                     std::uint64_t seed, std::uint32_t stream, NoiseDraw draw) {
  if (w.rank() == 0 || noise.alpha.size() != w.dim(0))
    throw ShapeError("cni: alpha has " + std::to_string(noise.alpha.size()) +
                     " entries but weight " + to_string(w.shape()) + " has " +
                     std::to_string(w.rank() ? w.dim(0) : 0) + " output channels");
  if (!draw.enabled || !noise.enabled) return w;
  ag::Tape tape;
  const Tensor eta = noise_tensor(w, mask, seed, stream, draw.id);
  const ag::Var wv = tape.constant(w);
  const ag::Var av = tape.constant(Tensor(Shape{noise.alpha.size()}, noise.alpha));
  return ag::channel_noise(wv, av, eta).value();
}

BoundParams bind_parameters(ag::Tape& tape, const Model& model, bool requires_grad) {
  BoundParams p;
  for (const auto& l : model.layers) {
    if (!l.spec.parametric()) continue;
    p.weights.push_back(tape.leaf(l.weight, requires_grad));
    p.alphas.push_back(tape.leaf(Tensor(Shape{l.noise.alpha.size()}, l.noise.alpha), requires_grad));
  }
  return p;
}

void check_input(const Model& model, const Tensor& x) {
  Shape expected{x.rank() ? x.dim(0) : 0};
  expected.insert(expected.end(), model.input_shape.begin(), model.input_shape.end());
  if (x.shape() != expected)
    throw ShapeError("model input: expected (batch x " + to_string(model.input_shape) + "), got " +
                     to_string(x.shape()));
}

ag::Var normalize_input(const Model& model, ag::Var x) {
  const auto& norm = model.normalization;
  std::vector<double> sc(norm.mean.size()), sh(norm.mean.size());
  for (std::size_t c = 0; c < sc.size(); ++c) {
    sc[c] = 1.0 / norm.stddev[c];
    sh[c] = -norm.mean[c] / norm.stddev[c];
  }
  if (x.value().rank() != 2) return ag::channel_affine(x, sc, sh);
  // (batch x features) inputs are treated as a single channel
  const std::size_t batch = x.value().dim(0), features = x.value().dim(1);
  ag::Var h = ag::reshape(x, Shape{batch, 1, features});
  h = ag::channel_affine(h, sc, sh);
  return ag::reshape(h, Shape{batch, features});
}

ag::Var forward(ag::Tape& tape, const Model& model, const BoundParams& params, ag::Var x,
                NoiseDraw draw) {
  if (x.tape() != &tape) throw Error("forward: input lives on another tape");
  check_input(model, x.value());
  const std::size_t batch = x.value().dim(0);
  ag::Var h = x;
  std::uint32_t p = 0;
  for (const Layer& layer : model.layers) {
    switch (layer.spec.kind) {
      case LayerKind::input_normalize:
        h = normalize_input(model, h);
        break;
      case LayerKind::dense:
      case LayerKind::conv2d: {
        if (p >= params.weights.size()) throw Error("bound parameters do not match the model");
        ag::Var w = params.weights[p];
        if (draw.enabled && layer.noise.enabled) {
          const Tensor eta = noise_tensor(w.value(), layer.mask, model.seed, p, draw.id);
          w = ag::channel_noise(w, params.alphas[p], eta);
        }
        h = layer.spec.kind == LayerKind::dense ? ag::linear(h, w)
                                                : ag::conv2d(h, w, layer.spec.padding);
        ++p;
        break;
      }
      case LayerKind::relu:
        h = ag::relu(h);
        break;
      case LayerKind::flatten:
        h = ag::reshape(h, Shape{batch, h.value().size() / batch});
        break;
    }
  }
  if (h.value().rank() != 2 || h.value().dim(1) != model.num_classes)
    throw ShapeError("model output " + to_string(h.value().shape()) + " is not (batch x " +
                     std::to_string(model.num_classes) + ")");
  return h;
}

Tensor predict(const Model& model, const Tensor& x, NoiseDraw draw) {
  ag::Tape tape;
  const BoundParams params = bind_parameters(tape, model, false);
  return forward(tape, model, params, tape.constant(x), draw).value();
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows needs a matrix, got " + to_string(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (logits[r * cols + c] > logits[r * cols + best]) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace rsr::nn
