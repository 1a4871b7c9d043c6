#pragma once

// Hand-rolled generators and comparison helpers shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "rsr/autograd.hpp"
#include "rsr/dataset.hpp"
#include "rsr/nn.hpp"
#include "rsr/rng.hpp"
#include "rsr/tensor.hpp"

namespace rsr::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Entries bounded away from zero, for functions with a kink there.
inline Tensor away_from_zero(Rng& rng, Shape shape, double margin = 0.05) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    const double m = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

inline std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

/// Small random network: optional conv stack (random channels, kernels and
/// padding) then one or two dense layers.
inline nn::Model random_model(Rng& rng, bool with_conv = true) {
  const std::size_t c = pick(rng, 1, 2);
  const std::size_t hw = pick(rng, 5, 7);
  const std::size_t classes = pick(rng, 2, 4);
  std::vector<nn::LayerSpec> specs;
  std::size_t ch = c, h = hw, w = hw;
  if (with_conv) {
    const std::size_t convs = pick(rng, 1, 2);
    for (std::size_t i = 0; i < convs; ++i) {
      const std::size_t k = pick(rng, 1, 3);
      const std::size_t pad = pick(rng, 0, 1);
      const std::size_t out = pick(rng, 1, 3);
      specs.push_back({nn::LayerKind::conv2d, ch, out, k, k, pad});
      specs.push_back({nn::LayerKind::relu});
      ch = out;
      h = h + 2 * pad - k + 1;
      w = w + 2 * pad - k + 1;
    }
  }
  specs.push_back({nn::LayerKind::flatten});
  std::size_t in = ch * h * w;
  if (rng.uniform() < 0.5) {
    const std::size_t hidden = pick(rng, 2, 6);
    specs.push_back({nn::LayerKind::dense, in, hidden});
    specs.push_back({nn::LayerKind::relu});
    in = hidden;
  }
  specs.push_back({nn::LayerKind::dense, in, classes});
  nn::Normalization norm{std::vector<double>(c, 0.5), std::vector<double>(c, 0.25)};
  nn::Model m = nn::build_model("random", {c, hw, hw}, classes, norm, specs, rng.next());
  for (std::size_t id : m.parametric_layers())
    for (double& a : m.layers[id].noise.alpha) a = rng.uniform(0.0, 0.5);
  return m;
}

inline Tensor random_input(Rng& rng, const nn::Model& m, std::size_t batch) {
  Shape s{batch};
  s.insert(s.end(), m.input_shape.begin(), m.input_shape.end());
  return random_tensor(rng, s, 0.0, 1.0);
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const Tensor& a, const Tensor& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale < 1e-12 ? std::sqrt(d) : std::sqrt(d) / scale;
}

/// Gradient of f at x from the tape, with f built by `build`.
inline Tensor tape_gradient(const std::function<ag::Var(ag::Tape&, ag::Var)>& build,
                            const Tensor& x) {
  ag::Tape tape;
  ag::Var v = tape.leaf(x, true);
  ag::Var out = build(tape, v);
  return tape.backward(out)[v];
}

inline double tape_value(const std::function<ag::Var(ag::Tape&, ag::Var)>& build, const Tensor& x) {
  ag::Tape tape;
  return build(tape, tape.constant(x)).value().item();
}

/// Small synthetic split shared by tests that need a trained model.
inline data::DataSplit small_synthetic(std::size_t n_train = 400, std::size_t n_test = 200,
                                       std::uint64_t seed = 3) {
  data::SyntheticSpec s;
  s.n_train = n_train;
  s.n_test = n_test;
  s.seed = seed;
  return data::make_synthetic(s);
}

}  // namespace rsr::testing
