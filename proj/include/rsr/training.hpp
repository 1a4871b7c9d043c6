#pragma once

// Minimises the ensemble objective
//
//   a * CE(f(x), y) + (1 - a) * CE(f(x_adv), y) + lambda * sum_l |W_l|_1
//
// with SGD + momentum, where x_adv is a PGD example crafted against the
// current (noisy) model and the lasso term covers conv/dense weights only.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rsr/attacks.hpp"
#include "rsr/dataset.hpp"
#include "rsr/nn.hpp"

namespace rsr::train {

using rsr::to_string;

enum class Mode : std::uint8_t { plain, pgd_only, cni_only, lasso_only, rsr };

std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

bool uses_noise(Mode m);
bool uses_adversarial(Mode m);
bool uses_lasso(Mode m);

struct TrainConfig {
  Mode mode = Mode::rsr;
  double a = 0.5;  // weight of the clean term
  double lambda = 1e-5;
  double lr = 0.05;
  double momentum = 0.9;
  int epochs = 10;
  std::size_t batch_size = 64;
  /// Multiply lr by lr_decay every lr_decay_every epochs (0 disables).
  int lr_decay_every = 0;
  double lr_decay = 0.1;
  attack::AttackSpec attack = attack::AttackSpec::pgd(8.0 / 255.0, 7);
  std::uint64_t seed = 0;
  /// Monitor samples scored each epoch; PGD accuracy is skipped when 0.
  std::size_t history_samples = 0;

  void validate() const;
  /// lambda as applied by the mode (zero unless the mode uses the lasso).
  double effective_lambda() const { return uses_lasso(mode) ? lambda : 0.0; }
};

struct StepMetrics {
  int epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double clean_loss = 0.0;
  double adv_loss = 0.0;  // 0 when the mode has no adversarial term
  double lasso = 0.0;     // sum |W|, unweighted
  double weight_grad_norm = 0.0;
  double alpha_grad_norm = 0.0;
  double lr = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double clean_accuracy = 0.0;
  std::optional<double> pgd_accuracy;
  double lasso_magnitude = 0.0;
  double frac_below_1e5 = 0.0;
  double mean_abs_alpha = 0.0;
};

struct TrainResult {
  nn::Model model;
  std::vector<EpochRecord> history;
};

using StepCallback = std::function<void(const StepMetrics&)>;
using EpochCallback = std::function<void(const nn::Model&, const EpochRecord&)>;

/// sum over conv/dense layers of |W|_1 on the tape (noise scales excluded).
/// The subgradient at an exact zero is 0.
ag::Var lasso_penalty(const nn::BoundParams& params);

struct LossTerms {
  ag::Var total;
  double clean = 0.0;
  double adv = 0.0;
  double lasso = 0.0;  // unweighted
};

/// a * CE(x) + (1 - a) * CE(x_adv) + lambda * lasso, with the terms the
/// mode disables left out. Each forward pass takes its own noise draw.
/// `x_adv` is ignored by modes without an adversarial term.
LossTerms ensemble_loss(ag::Tape& tape, const nn::Model& model, const nn::BoundParams& params,
                        const Tensor& x, const Tensor& x_adv, std::span<const int> y,
                        const TrainConfig& cfg, nn::NoiseStream& noise);

/// One optimiser step on a batch; updates `model` and `velocity` in place.
/// Velocity layout matches bind_parameters: weights then alphas per layer.
struct Optimizer {
  std::vector<Tensor> weight_velocity;
  std::vector<std::vector<double>> alpha_velocity;
};

Optimizer make_optimizer(const nn::Model& model);

StepMetrics train_step(nn::Model& model, Optimizer& opt, const Tensor& x, std::span<const int> y,
                       const TrainConfig& cfg, double lr, nn::NoiseStream& noise,
                       std::uint64_t sample_offset);

/// Trains a copy of `init`. Noise scales are switched off in the result for
/// modes without noise injection. `monitor` feeds the per-epoch history.
TrainResult train(const nn::Model& init, const data::Dataset& train_set, const TrainConfig& cfg,
                  const data::Dataset* monitor = nullptr, const StepCallback& on_step = {},
                  const EpochCallback& on_epoch = {});

/// sum |W| over conv/dense weights, without a tape.
double lasso_magnitude(const nn::Model& model);

}  // namespace rsr::train
