#pragma once

#include <optional>
#include <vector>

#include "rsr/nn.hpp"

namespace rsr::prune {

struct LayerSparsity {
  std::size_t layer_id = 0;  // index into Model::layers
  std::size_t total_weights = 0;
  std::size_t zero_weights = 0;
  double sparsity_percent = 0.0;
};

struct SparsityReport {
  std::vector<LayerSparsity> per_layer;
  double global_sparsity_percent = 0.0;
  double gamma = 0.0;
  std::optional<double> clean_acc_before;
  std::optional<double> clean_acc_after;
  std::optional<double> pgd_acc_before;
  std::optional<double> pgd_acc_after;
};

/// Counts weights that compare equal to 0.0, per conv/dense layer and overall.
SparsityReport sparsity(const nn::Model& model);

struct PruneResult {
  nn::Model model;
  SparsityReport report;
};

/// Zeroes every conv/dense weight with |w| < gamma (strict) and records the
/// survivors in the layer masks. Noise scales are untouched.
PruneResult prune_threshold(const nn::Model& model, double gamma);

/// Smallest gamma taken from the sorted |w| distribution whose strict
/// threshold zeroes at least target_percent of all conv/dense weights.
/// With weights {0.1, 0.2, 0.3, 0.4} and a 50% target this is 0.3.
double gamma_for_target_sparsity(const nn::Model& model, double target_percent);

/// Fraction of conv/dense weights with |w| < tol.
double near_zero_fraction(const nn::Model& model, double tol);

}  // namespace rsr::prune
