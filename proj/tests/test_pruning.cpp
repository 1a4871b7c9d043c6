#include <doctest.h>

#include <algorithm>

#include "rsr/pruning.hpp"
#include "rsr/sparse.hpp"
#include "support.hpp"

using namespace rsr;

namespace {

// two-class dense layer holding `w` row-major; w.size() must be even
nn::Model dense_with(std::vector<double> w) {
  const std::size_t n = w.size() / 2;
  nn::Model m = nn::build_model("custom", {n}, 2, {{0.0}, {1.0}}, {{nn::LayerKind::dense, n, 2}}, 1);
  m.layers[1].weight = Tensor(Shape{2, n}, std::move(w));
  return m;
}

double min_nonzero(const nn::Model& m) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t id : m.parametric_layers())
    for (double w : m.layers[id].weight.data())
      if (w != 0.0) best = std::min(best, std::abs(w));
  return best;
}

}  // namespace

TEST_CASE("pruning worked examples") {
  const auto r = prune::prune_threshold(dense_with({0.1, -0.005, 0.02, 0.3, -0.001, 0.04}), 0.01);
  CHECK(r.model.layers[1].weight == Tensor(Shape{2, 3}, {0.1, 0.0, 0.02, 0.3, 0.0, 0.04}));
  CHECK(r.report.global_sparsity_percent == doctest::Approx(100.0 / 3.0));
  CHECK(r.report.gamma == 0.01);
  CHECK(*r.model.layers[1].mask == Tensor(Shape{2, 3}, {1.0, 0.0, 1.0, 1.0, 0.0, 1.0}));

  const nn::Model four = dense_with({0.1, 0.2, 0.3, 0.4});
  CHECK(prune::gamma_for_target_sparsity(four, 50.0) == 0.3);
  CHECK(prune::gamma_for_target_sparsity(four, 0.0) == 0.0);
  CHECK_THROWS_AS(prune::gamma_for_target_sparsity(four, 100.0), Error);
  CHECK_THROWS_AS(prune::gamma_for_target_sparsity(four, -1.0), Error);

  // equal magnitudes cannot be split, so the threshold moves past all of them
  const nn::Model ties = dense_with({0.5, 0.5, 0.5, 0.5});
  const double g = prune::gamma_for_target_sparsity(ties, 50.0);
  CHECK(prune::sparsity(prune::prune_threshold(ties, g).model).global_sparsity_percent == 100.0);
}

TEST_CASE("one zeroed layer next to an equal untouched layer is 50% sparse") {
  nn::Model m = nn::build_model("custom", {4}, 4, {{0.0}, {1.0}},
                                {{nn::LayerKind::dense, 4, 4}, {nn::LayerKind::dense, 4, 4}}, 1);
  for (double& w : m.layers[1].weight.data()) w = 0.0;
  for (double& w : m.layers[2].weight.data()) w = 1.0;
  const auto rep = prune::sparsity(m);
  CHECK(rep.global_sparsity_percent == 50.0);
  CHECK(rep.per_layer[0].sparsity_percent == 100.0);
  CHECK(rep.per_layer[1].sparsity_percent == 0.0);
}

TEST_CASE("pruning properties on random models") {
  Rng rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    const nn::Model m = testing::random_model(rng);
    const double target = rng.uniform(0.0, 99.0);
    const double g = prune::gamma_for_target_sparsity(m, target);
    const auto r = prune::prune_threshold(m, g);
    CHECK(r.report.global_sparsity_percent >= target - 1e-9);
    CHECK(min_nonzero(r.model) >= g);
    CHECK(prune::prune_threshold(r.model, g).model == r.model);  // idempotent
    for (std::size_t id : m.parametric_layers()) {
      const auto& before = m.layers[id];
      const auto& after = r.model.layers[id];
      CHECK(after.noise == before.noise);
      for (std::size_t i = 0; i < before.weight.size(); ++i) {
        if (std::abs(before.weight[i]) < g) CHECK(after.weight[i] == 0.0);
        else CHECK(after.weight[i] == before.weight[i]);
      }
    }
  }
}

TEST_CASE("sparsity is monotone in gamma") {
  Rng rng(62);
  const nn::Model m = testing::random_model(rng);
  double last = -1.0;
  for (double g = 0.0; g < 1.5; g += 0.05) {
    const double s = prune::sparsity(prune::prune_threshold(m, g).model).global_sparsity_percent;
    CHECK(s >= last);
    last = s;
  }
}

TEST_CASE("near-zero fraction") {
  const nn::Model m = dense_with({1e-6, -1e-4, 0.5, 0.0});
  CHECK(prune::near_zero_fraction(m, 1e-5) == 0.5);
  CHECK(prune::near_zero_fraction(m, 1e-3) == 0.75);
}

TEST_CASE("packing round-trips and reports its size") {
  Rng rng(63);
  for (int trial = 0; trial < 30; ++trial) {
    const nn::Model m = testing::random_model(rng);
    const nn::Model p = prune::prune_threshold(m, rng.uniform(0.0, 0.5)).model;
    const auto packed = sparse::pack_sparse(p);
    const auto ids = p.parametric_layers();
    REQUIRE(packed.size() == ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto& l = p.layers[ids[k]];
      CHECK(sparse::unpack_weight(packed[k]) == l.weight);
      CHECK(sparse::unpack_mask(packed[k]) == l.mask);
      const std::size_t nnz = static_cast<std::size_t>(
          std::count(l.mask->data().begin(), l.mask->data().end(), 1.0));
      CHECK(packed[k].values.size() == nnz);
      CHECK(packed[k].packed_bytes() == (l.weight.dim(0) + 1) * 4 + nnz * 12);
      CHECK(packed[k].variance == nn::layer_variance(l.weight));
    }
    CHECK(sparse::unpack_model(sparse::make_sparse_model(p)) == p);
    // unpruned layers are stored whole
    const auto dense = sparse::pack_sparse(m);
    CHECK(dense[0].dense);
    CHECK(sparse::unpack_model(sparse::make_sparse_model(m)) == m);
  }
}

TEST_CASE("sparse forward equals dense forward bit for bit") {
  Rng rng(64);
  for (int trial = 0; trial < 30; ++trial) {
    nn::Model m = testing::random_model(rng);
    m = prune::prune_threshold(m, rng.uniform(0.0, 0.4)).model;
    if (trial % 4 == 0) m.layers[m.parametric_layers()[0]].noise.enabled = false;
    const auto sm = sparse::make_sparse_model(m);
    const Tensor x = testing::random_input(rng, m, 3);
    CHECK(sparse::sparse_forward(sm, x, nn::noiseless()) == nn::predict(m, x, nn::noiseless()));
    const nn::NoiseDraw d{true, rng.next()};
    CHECK(sparse::sparse_forward(sm, x, d) == nn::predict(m, x, d));
  }
}
