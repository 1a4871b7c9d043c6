#include <doctest.h>

#include "rsr/kernels.hpp"
#include "rsr/rng.hpp"
#include "support.hpp"

using namespace rsr;
using testing::pick;

namespace {

std::vector<double> vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Random CSR matrix with roughly `density` of its entries kept, plus the
// equivalent dense matrix.
struct RandomCsr {
  std::size_t rows, cols;
  std::vector<std::uint32_t> offsets{0}, indices;
  std::vector<double> values, dense;
  RandomCsr(Rng& rng, std::size_t r, std::size_t c, double density)
      : rows(r), cols(c), dense(r * c, 0.0) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j)
        if (rng.uniform() < density) {
          indices.push_back(static_cast<std::uint32_t>(j));
          values.push_back(rng.uniform(-1.0, 1.0));
          dense[i * c + j] = values.back();
        }
      offsets.push_back(static_cast<std::uint32_t>(indices.size()));
    }
  }
  kernels::CsrView view() const { return {rows, cols, offsets, indices, values}; }
};

}  // namespace

TEST_CASE("parallel gemm kernels match the serial reference bit for bit") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = pick(rng, 1, 40), n = pick(rng, 1, 40), k = pick(rng, 1, 40);
    const auto a = vec(rng, m * k), b = vec(rng, k * n), bt = vec(rng, n * k), at = vec(rng, k * m);
    const auto c0 = vec(rng, m * n);
    auto c1 = c0, c2 = c0;
    kernels::gemm_nn(m, n, k, a, b, c1);
    kernels::ref::gemm_nn(m, n, k, a, b, c2);
    CHECK(c1 == c2);
    c1 = c2 = c0;
    kernels::gemm_nt(m, n, k, a, bt, c1);
    kernels::ref::gemm_nt(m, n, k, a, bt, c2);
    CHECK(c1 == c2);
    c1 = c2 = c0;
    kernels::gemm_tn(m, n, k, at, b, c1);
    kernels::ref::gemm_tn(m, n, k, at, b, c2);
    CHECK(c1 == c2);
  }
}

TEST_CASE("gemm against a hand-computed product") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};  // 2x3
  const std::vector<double> b{7, 8, 9, 10, 11, 12};  // 3x2
  std::vector<double> c(4, 1.0);
  kernels::gemm_nn(2, 2, 3, a, b, c);
  CHECK(c == std::vector<double>{59, 65, 140, 155});
}

TEST_CASE("im2col conv forward matches direct convolution bit for bit") {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    kernels::ConvGeometry g{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 3, 8), pick(rng, 3, 8),
                            pick(rng, 1, 4), 0, 0, pick(rng, 0, 2)};
    g.kernel_h = pick(rng, 1, 3);
    g.kernel_w = pick(rng, 1, 3);
    const auto x = vec(rng, g.batch * g.in_sample());
    const auto w = vec(rng, g.out_channels * g.patch());
    std::vector<double> o1(g.batch * g.out_sample()), o2(o1.size());
    kernels::conv2d_forward(g, x, w, o1);
    kernels::ref::conv2d_forward(g, x, w, o2);
    CHECK(o1 == o2);

    const auto gout = vec(rng, o1.size());
    std::vector<double> dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size());
    kernels::conv2d_backward_input(g, w, gout, dx1);
    kernels::ref::conv2d_backward_input(g, w, gout, dx2);
    std::vector<double> cols(g.batch * g.patch() * g.positions());
    kernels::conv2d_forward(g, x, w, o1, cols);
    kernels::conv2d_backward_weight(g, cols, gout, dw1);
    kernels::ref::conv2d_backward_weight(g, x, gout, dw2);
    for (std::size_t i = 0; i < dx1.size(); ++i) CHECK(dx1[i] == doctest::Approx(dx2[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < dw1.size(); ++i) CHECK(dw1[i] == doctest::Approx(dw2[i]).epsilon(1e-12));
  }
}

TEST_CASE("3x3 ones convolved with a 2x2 ones kernel gives all fours") {
  kernels::ConvGeometry g{1, 1, 3, 3, 1, 2, 2, 0};
  std::vector<double> x(9, 1.0), w(4, 1.0), out(4);
  kernels::conv2d_forward(g, x, w, out);
  CHECK(out == std::vector<double>(4, 4.0));
}

TEST_CASE("CSR kernels equal the dense kernels on the masked matrix") {
  Rng rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t rows = pick(rng, 1, 20), cols = pick(rng, 1, 30), n = pick(rng, 1, 10);
    const RandomCsr s(rng, rows, cols, rng.uniform());
    const auto b = vec(rng, cols * n);
    std::vector<double> c1(rows * n), c2(rows * n);
    kernels::csr_gemm(s.view(), n, b, c1);
    kernels::gemm_nn(rows, n, cols, s.dense, b, c2);
    CHECK(c1 == c2);

    const auto x = vec(rng, n * cols);
    std::vector<double> o1(n * rows), o2(n * rows);
    kernels::csr_linear(s.view(), n, x, o1);
    kernels::gemm_nt(n, rows, cols, x, s.dense, o2);
    CHECK(o1 == o2);
  }
}

TEST_CASE("tensor basics") {
  CHECK(shape_size({2, 3, 4}) == 24);
  CHECK(to_string(Shape{2, 3}) == "[2, 3]");
  CHECK_THROWS_AS(Tensor::scalar(1).dim(1), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2}).item(), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>(3)), ShapeError);
  const Tensor t(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(t.slice_rows(1, 3) == Tensor(Shape{2, 2}, {3, 4, 5, 6}));
  const std::vector<std::size_t> rows{2, 0};
  CHECK(gather_rows(t, rows) == Tensor(Shape{2, 2}, {5, 6, 1, 2}));
  CHECK(population_variance(std::vector<double>{1, -1, 1, -1}) == 1.0);
  CHECK(population_variance(std::vector<double>{3, 3, 3}) == 0.0);
  CHECK(population_variance(std::vector<double>{0, 2}) == 1.0);
}
