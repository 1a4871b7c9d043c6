// Serial reference kernels against the OpenMP ones, and dense against
// packed sparse inference at several sparsity levels.

#include <benchmark/benchmark.h>

#include <vector>

#include "rsr/kernels.hpp"
#include "rsr/nn.hpp"
#include "rsr/pruning.hpp"
#include "rsr/rng.hpp"
#include "rsr/sparse.hpp"

namespace {

using namespace rsr;

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <auto Gemm>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Gemm(n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}
BENCHMARK(BM_gemm<kernels::ref::gemm_nn>)->Name("gemm_nn/ref")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<kernels::gemm_nn>)->Name("gemm_nn/omp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<kernels::ref::gemm_nt>)->Name("gemm_nt/ref")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<kernels::gemm_nt>)->Name("gemm_nt/omp")->Arg(64)->Arg(128)->Arg(256);

kernels::ConvGeometry conv_geo(std::size_t batch) {
  return {batch, 16, 10, 10, 32, 3, 3, 0};
}

void BM_conv_ref(benchmark::State& state) {
  const auto g = conv_geo(static_cast<std::size_t>(state.range(0)));
  const auto x = random_vec(g.batch * g.in_sample(), 3);
  const auto w = random_vec(g.out_channels * g.patch(), 4);
  std::vector<double> out(g.batch * g.out_sample());
  for (auto _ : state) {
    std::fill(out.begin(), out.end(), 0.0);
    kernels::ref::conv2d_forward(g, x, w, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_conv_ref)->Name("conv2d_forward/ref")->Arg(16)->Arg(64);

void BM_conv_omp(benchmark::State& state) {
  const auto g = conv_geo(static_cast<std::size_t>(state.range(0)));
  const auto x = random_vec(g.batch * g.in_sample(), 3);
  const auto w = random_vec(g.out_channels * g.patch(), 4);
  std::vector<double> out(g.batch * g.out_sample());
  for (auto _ : state) {
    std::fill(out.begin(), out.end(), 0.0);
    kernels::conv2d_forward(g, x, w, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_conv_omp)->Name("conv2d_forward/omp")->Arg(16)->Arg(64);

// cnn-small on 1x12x12 inputs, pruned to state.range(0) percent.
struct InferenceFixture {
  nn::Model dense;
  sparse::SparseModel packed;
  Tensor x;
  explicit InferenceFixture(double sparsity) {
    nn::Model m = nn::make_model("cnn-small", {1, 12, 12}, 4, {{0.5}, {0.25}}, 1.0, 7);
    if (sparsity > 0.0)
      m = prune::prune_threshold(m, prune::gamma_for_target_sparsity(m, sparsity)).model;
    dense = m;
    packed = sparse::make_sparse_model(m);
    x = Tensor(Shape{64, 1, 12, 12}, random_vec(64 * 144, 5));
  }
};

void BM_dense_forward(benchmark::State& state) {
  InferenceFixture f(static_cast<double>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(nn::predict(f.dense, f.x, nn::noiseless()));
}
BENCHMARK(BM_dense_forward)->Name("forward/dense")->Arg(0)->Arg(90);

void BM_sparse_forward(benchmark::State& state) {
  InferenceFixture f(static_cast<double>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(sparse::sparse_forward(f.packed, f.x, nn::noiseless()));
}
BENCHMARK(BM_sparse_forward)->Name("forward/sparse")->Arg(0)->Arg(50)->Arg(90)->Arg(99);

}  // namespace

BENCHMARK_MAIN();
