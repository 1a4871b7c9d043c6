#pragma once

// Experiment configuration, read from and written to INI files. Unknown
// sections or keys are rejected so a typo cannot silently fall back to a
// default.
//
//   [experiment] name, trials, seed, output_dir
//   [data]       source (synthetic|cifar10), cifar_dir, n_train, n_test,
//                image_size, noise_std, distractors, seed, max_train,
//                max_test, eval_samples
//   [model]      arch, width
//   [train]      mode, a, lambda, lr, momentum, epochs, batch_size,
//                lr_decay_every, lr_decay, history_samples
//   [attack]     epsilon, step_size, steps, random_start
//   [prune]      target_sparsity or gamma (at most one)
//   [eval]       noise, batch_size, attacks (comma list of fgsm, pgd,
//                zoo_fd), zoo_iterations, zoo_budget, zoo_coords

#include <cstdint>
#include <filesystem>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include "rsr/attacks.hpp"
#include "rsr/dataset.hpp"
#include "rsr/training.hpp"

namespace rsr::cfg {

struct DataConfig {
  std::string source = "synthetic";
  std::filesystem::path cifar_dir;
  data::SyntheticSpec synthetic;
  std::optional<std::size_t> max_train;
  std::optional<std::size_t> max_test;
  /// Test samples used for evaluation (0 = all).
  std::size_t eval_samples = 0;
};

struct ModelConfig {
  std::string arch = "cnn-small";
  double width = 1.0;
};

struct PruneConfig {
  std::optional<double> target_sparsity;  // percent
  std::optional<double> gamma;
  bool enabled() const { return target_sparsity || gamma; }
};

struct EvalConfig {
  bool noise = true;
  std::size_t batch_size = 100;
  std::vector<attack::Family> attacks = {attack::Family::pgd};
  int zoo_iterations = 10;
  std::uint64_t zoo_budget = 20000;
  std::size_t zoo_coords = 128;
};

struct ExperimentConfig {
  std::string name = "experiment";
  int trials = 1;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/experiment";
  DataConfig data;
  ModelConfig model;
  train::TrainConfig train;
  PruneConfig prune;
  EvalConfig eval;

  void validate() const;
  /// Evaluation attack specs derived from [attack] and [eval].
  std::vector<attack::AttackSpec> eval_attacks() const;
};

/// `overrides` are "section.key=value" strings applied on top of the text.
ExperimentConfig parse_ini(const std::string& text, std::span<const std::string> overrides = {});
ExperimentConfig load_ini(const std::filesystem::path& path,
                          std::span<const std::string> overrides = {});
/// Canonical INI text; parse_ini(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& c);

/// Loads the dataset the config names.
data::DataSplit load_data(const DataConfig& d);

}  // namespace rsr::cfg
