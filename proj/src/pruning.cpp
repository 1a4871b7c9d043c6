#include "rsr/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rsr::prune {

SparsityReport sparsity(const nn::Model& model) {
  SparsityReport r;
  std::size_t total = 0, zeros = 0;
  for (std::size_t id : model.parametric_layers()) {
    const Tensor& w = model.layers[id].weight;
    const auto z = static_cast<std::size_t>(std::count(w.data().begin(), w.data().end(), 0.0));
    r.per_layer.push_back({id, w.size(), z, 100.0 * static_cast<double>(z) / static_cast<double>(w.size())});
    total += w.size();
    zeros += z;
  }
  r.global_sparsity_percent =
      total ? 100.0 * static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
  return r;
}

PruneResult prune_threshold(const nn::Model& model, double gamma) {
  if (!(gamma >= 0.0)) throw Error("prune threshold must be non-negative");
  nn::Model pruned = model;
  for (std::size_t id : pruned.parametric_layers()) {
    nn::Layer& layer = pruned.layers[id];
    Tensor mask = layer.mask ? *layer.mask : Tensor(layer.weight.shape(), 1.0);
    for (std::size_t i = 0; i < layer.weight.size(); ++i) {
      if (std::abs(layer.weight[i]) < gamma) mask[i] = 0.0;
      if (mask[i] == 0.0) layer.weight[i] = 0.0;
    }
    layer.mask = std::move(mask);
  }
  SparsityReport report = sparsity(pruned);
  report.gamma = gamma;
  return {std::move(pruned), std::move(report)};
}

double gamma_for_target_sparsity(const nn::Model& model, double target_percent) {
  if (!(target_percent >= 0.0) || target_percent >= 100.0)
    throw Error("target sparsity must be in [0, 100), got " + std::to_string(target_percent));
  std::vector<double> mags;
  for (std::size_t id : model.parametric_layers())
    for (double w : model.layers[id].weight.data()) mags.push_back(std::abs(w));
  if (mags.empty()) throw Error("model has no prunable weights");
  std::sort(mags.begin(), mags.end());
  // number of weights that must fall strictly below gamma
  const double exact = target_percent * static_cast<double>(mags.size()) / 100.0;
  const auto needed = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  if (needed == 0) return 0.0;
  const double last_pruned = mags[needed - 1];
  const auto next = std::upper_bound(mags.begin(), mags.end(), last_pruned);
  if (next != mags.end()) return *next;
  return std::nextafter(last_pruned, std::numeric_limits<double>::infinity());
}

double near_zero_fraction(const nn::Model& model, double tol) {
  std::size_t total = 0, small = 0;
  for (std::size_t id : model.parametric_layers())
    for (double w : model.layers[id].weight.data()) {
      ++total;
      if (std::abs(w) < tol) ++small;
    }
  return total ? static_cast<double>(small) / static_cast<double>(total) : 0.0;
}

}  // namespace rsr::prune
