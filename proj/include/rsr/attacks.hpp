#pragma once

// L-infinity adversarial attacks: FGSM, PGD, a simplified zeroth-order
// (finite-difference) black-box attack, and transfer attacks.
//
// Every returned example x' satisfies |x' - x|_inf <= epsilon and
// lower <= x' <= upper when both are evaluated in floating point.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsr/nn.hpp"

namespace rsr::attack {

using rsr::to_string;

enum class Family : std::uint8_t { fgsm, pgd, zoo_fd, transfer };

std::string_view to_string(Family f);
Family family_from_string(std::string_view s);

struct AttackSpec {
  Family family = Family::pgd;
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int num_steps = 7;
  bool random_start = false;
  double lower = 0.0;
  double upper = 1.0;
  std::uint64_t seed = 0;
  // zoo_fd only
  double fd_step = 1e-4;
  std::size_t coords_per_iter = 128;
  std::uint64_t query_budget = std::numeric_limits<std::uint64_t>::max();

  void validate() const;

  static AttackSpec fgsm(double epsilon);
  /// PGD with step size epsilon / 4.
  static AttackSpec pgd(double epsilon, int steps);
  static AttackSpec zoo(double epsilon, int iterations, std::uint64_t budget);
};

/// Clamps into [origin - eps, origin + eps] intersected with [lo, hi]. The
/// ball faces are nudged inward by an ulp when rounding would otherwise let
/// |result - origin| exceed eps.
void project_linf(std::span<double> candidate, std::span<const double> origin, double epsilon,
                  double lo, double hi);
Tensor project_linf(const Tensor& candidate, const Tensor& origin, double epsilon, double lo,
                    double hi);

/// A differentiable loss of the input, recorded on the given tape.
using InputLoss = std::function<ag::Var(ag::Tape&, ag::Var x)>;

Tensor input_gradient(const InputLoss& loss, const Tensor& x);

Tensor fgsm(const InputLoss& loss, const Tensor& x, double epsilon, double lo = 0.0,
            double hi = 1.0);
/// `sample_offset` keys the per-sample random starts.
Tensor pgd(const InputLoss& loss, const Tensor& x, const AttackSpec& spec,
           std::uint64_t sample_offset = 0);

/// Mean cross-entropy of the model; each call draws the next noise id.
InputLoss model_loss(const nn::Model& model, std::span<const int> labels, nn::NoiseStream& noise);

Tensor fgsm(const nn::Model& model, const Tensor& x, std::span<const int> labels, double epsilon,
            nn::NoiseStream& noise);
Tensor pgd(const nn::Model& model, const Tensor& x, std::span<const int> labels,
           const AttackSpec& spec, nn::NoiseStream& noise, std::uint64_t sample_offset = 0);

/// Black-box access: logits for a batch of inputs, nothing else.
using Scorer = std::function<Tensor(const Tensor& batch)>;

Scorer model_scorer(const nn::Model& model, nn::NoiseStream& noise);

/// Symmetric finite-difference estimate of d CE / d x on the listed
/// coordinates of a single sample (batch of one); other entries are zero.
Tensor zoo_gradient_estimate(const Scorer& scorer, const Tensor& x, int label,
                             std::span<const std::size_t> coords, double h,
                             std::uint64_t& queries);

struct ZooResult {
  Tensor adversarial;
  std::uint64_t queries = 0;
  bool budget_exhausted = false;
};

/// Per sample: estimate the gradient on a random coordinate subset, take a
/// signed step, project; keep the highest-loss iterate and stop early once
/// the sample is misclassified. The budget applies to each sample.
ZooResult zoo_fd_attack(const Scorer& scorer, const Tensor& x, std::span<const int> labels,
                        const AttackSpec& spec, std::uint64_t sample_offset = 0);

// --- evaluation -----------------------------------------------------------

/// Noise-stream bases used by evaluations, so repeated evaluations of a
/// model (or of its pruned variants) see the same noise realisations.
inline constexpr std::uint64_t kAttackNoiseBase = 1ull << 40;
inline constexpr std::uint64_t kEvalNoiseBase = 2ull << 40;

struct EvalOptions {
  bool inference_noise = true;  // ignored for models without noise
  std::size_t batch_size = 100;
};

double accuracy(const nn::Model& model, const Tensor& x, std::span<const int> labels,
                const EvalOptions& opts);

struct AttackOutcome {
  AttackSpec spec;
  double accuracy = 0.0;
  std::uint64_t queries = 0;
  std::size_t budget_exhausted = 0;  // samples whose zoo budget ran out
};

/// Adversarial copies of x under `spec` (fgsm, pgd or zoo_fd).
Tensor generate(const nn::Model& model, const Tensor& x, std::span<const int> labels,
                const AttackSpec& spec, const EvalOptions& opts, AttackOutcome* outcome = nullptr);

/// Accuracy (percent) on adversarial copies of x.
AttackOutcome attacked_accuracy(const nn::Model& model, const Tensor& x, std::span<const int> labels,
                                const AttackSpec& spec, const EvalOptions& opts);

struct EvaluationReport {
  std::size_t samples = 0;
  bool inference_noise = false;
  double clean_accuracy = 0.0;
  std::vector<AttackOutcome> attacks;
  // transfer attacks only
  double source_accuracy = 0.0;
};

EvaluationReport evaluate(const nn::Model& model, const Tensor& x, std::span<const int> labels,
                          std::span<const AttackSpec> attacks, const EvalOptions& opts);

/// PGD examples crafted on `source`, scored on `target`. The report's first
/// attack holds the target's accuracy under transfer; source_accuracy is the
/// source's own white-box accuracy.
EvaluationReport transfer_attack(const nn::Model& source, const nn::Model& target, const Tensor& x,
                                 std::span<const int> labels, const AttackSpec& spec,
                                 const EvalOptions& opts);

struct SuccessRate {
  double percent = 0.0;
  std::size_t attacked = 0;  // correctly classified samples the attack ran on
  std::size_t offered = 0;
  std::uint64_t queries = 0;
};

/// Percentage of initially correct samples that the attack flips.
SuccessRate attack_success_rate(const nn::Model& target, const Tensor& x, std::span<const int> labels,
                                const AttackSpec& spec, const EvalOptions& opts);

}  // namespace rsr::attack
