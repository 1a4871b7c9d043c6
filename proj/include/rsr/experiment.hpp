#pragma once

// Experiment driver: train, evaluate, prune and re-evaluate over several
// trials, then write checkpoints and reports under the output directory.
//
// Layout of output_dir:
//   config.ini               resolved configuration
//   trial_<k>/epoch_<e>.ckpt model after each training epoch
//   trial_<k>/model.ckpt     trained model
//   trial_<k>/pruned.ckpt    pruned model with packed sparse weights
//   trial_<k>/history.csv|json
//   trial_<k>/report.json
//   results.csv|json         one row per trial plus mean and std rows
//   failures.log             one line per failed trial
//
// Nothing time- or host-dependent is written, so two runs of the same
// config produce identical bytes.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsr/attacks.hpp"
#include "rsr/config.hpp"
#include "rsr/pruning.hpp"
#include "rsr/report_io.hpp"
#include "rsr/training.hpp"

namespace rsr::exp {

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  attack::EvaluationReport before;
  std::optional<attack::EvaluationReport> after;  // set when pruning ran
  std::optional<prune::SparsityReport> sparsity;
  double near_zero_1e3 = 0.0;  // fraction of |w| < 1e-3 after training
  std::vector<train::EpochRecord> history;
};

struct TrialOutput {
  nn::Model trained;
  std::optional<nn::Model> pruned;
  TrialResult result;
};

/// Per-trial seed derived from the experiment seed.
std::uint64_t trial_seed(std::uint64_t experiment_seed, int trial);

/// Freshly initialised model for the config's architecture and data.
nn::Model initial_model(const cfg::ExperimentConfig& c, const data::DataSplit& data,
                        std::uint64_t seed);

/// Test samples used for evaluation.
data::Dataset eval_set(const cfg::ExperimentConfig& c, const data::DataSplit& data);

/// Clean and attacked accuracy of one model.
attack::EvaluationReport evaluate(const nn::Model& model, const data::Dataset& d,
                                  std::span<const attack::AttackSpec> attacks,
                                  const attack::EvalOptions& opts);

/// Prunes `model` as the config's [prune] section says.
prune::PruneResult prune_model(const nn::Model& model, const cfg::PruneConfig& p);

/// One trial in memory; `on_epoch` sees the model after every epoch.
TrialOutput run_trial(const cfg::ExperimentConfig& c, const data::DataSplit& data, int trial,
                      const train::EpochCallback& on_epoch = {});

struct ExperimentResult {
  std::vector<TrialResult> trials;
  std::vector<std::string> failures;
  io::CsvTable table;
};

/// Runs every trial and writes the layout above. A failing trial is logged
/// and the remaining trials still run.
ExperimentResult run_experiment(const cfg::ExperimentConfig& c, std::ostream* log = nullptr);

/// Summary table: one row per trial, then mean and std rows.
io::CsvTable results_table(const cfg::ExperimentConfig& c, const std::vector<TrialResult>& trials);
io::json trial_json(const TrialResult& r);

// --- sweeps ----------------------------------------------------------------

enum class SweepParam { gamma, sparsity, lambda, width };

std::string_view to_string(SweepParam p);
SweepParam sweep_param_from_string(std::string_view s);

struct SweepPoint {
  int trial = 0;
  double value = 0.0;
  double clean_accuracy = 0.0;
  double attack_accuracy = 0.0;  // first configured attack
  double sparsity_percent = 0.0;
  double gamma = 0.0;
  double near_zero_1e3 = 0.0;
  std::string error;  // set when this row failed; the numbers are then NaN
};

struct SweepResult {
  SweepParam param = SweepParam::sparsity;
  std::vector<SweepPoint> points;
};

/// gamma and sparsity sweeps train once per trial and prune per value;
/// lambda and width sweeps retrain per value. Values must be sorted
/// ascending. A failing row is recorded and the sweep continues.
SweepResult sweep(const cfg::ExperimentConfig& c, SweepParam param, std::span<const double> values,
                  std::ostream* log = nullptr);

io::CsvTable sweep_table(const SweepResult& r);

// --- histograms ------------------------------------------------------------

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  bool log10_magnitude = false;
};

/// Histogram of one conv/dense layer's weights (all of them when `layer` is
/// empty) over [min, max], or of log10 |w| over nonzero weights. When every
/// value is equal the range is widened by 0.5 on each side, so the mass
/// lands in a single middle bin.
Histogram weight_histogram(const nn::Model& model, std::size_t bins,
                           std::optional<std::size_t> layer = std::nullopt,
                           bool log10_magnitude = false);

io::CsvTable histogram_table(const Histogram& h);

}  // namespace rsr::exp
