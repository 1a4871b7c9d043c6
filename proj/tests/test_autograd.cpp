#include <doctest.h>

#include "rsr/autograd.hpp"
#include "support.hpp"

using namespace rsr;
using testing::relative_error;
using testing::tape_gradient;
using testing::tape_value;

namespace {

using Builder = std::function<ag::Var(ag::Tape&, ag::Var)>;

// Finite-difference check of d/dx sum(f(x) * r) for a random constant r.
double fd_error(Rng& rng, const std::function<ag::Var(ag::Tape&, ag::Var)>& f, const Tensor& x) {
  ag::Tape probe;
  const Shape out_shape = f(probe, probe.constant(x)).shape();
  const Tensor r = testing::random_tensor(rng, out_shape);
  const Builder loss = [&](ag::Tape& t, ag::Var v) { return ag::sum(ag::mul(f(t, v), t.constant(r))); };
  const Tensor analytic = tape_gradient(loss, x);
  const Tensor numeric = ag::finite_difference_gradient(
      [&](const Tensor& p) { return tape_value(loss, p); }, x, 1e-6);
  return relative_error(analytic, numeric);
}

}  // namespace

TEST_CASE("every primitive's gradient matches central differences") {
  Rng rng(21);
  for (int trial = 0; trial < 8; ++trial) {
    const Tensor a = testing::random_tensor(rng, {3, 4});
    const Tensor b = testing::random_tensor(rng, {3, 4});
    const Tensor m = testing::random_tensor(rng, {4, 5});
    const Tensor w = testing::random_tensor(rng, {2, 4});
    const Tensor img = testing::random_tensor(rng, {2, 2, 5, 5});
    const Tensor ker = testing::random_tensor(rng, {3, 2, 3, 3});
    const Tensor kinked = testing::away_from_zero(rng, {3, 4});
    const Tensor eta = testing::random_tensor(rng, {3, 2, 2});
    const Tensor alpha = testing::random_tensor(rng, {3});
    const std::vector<int> labels{0, 2, 1};
    const std::vector<double> sc{0.5, -2.0}, sh{0.1, 0.3};

    CHECK(fd_error(rng, [&](ag::Tape& t, ag::Var x) { return ag::add(x, t.constant(b)); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape& t, ag::Var x) { return ag::sub(t.constant(b), x); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::mul(x, x); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::scale(x, -1.7); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape& t, ag::Var x) { return ag::matmul(x, t.constant(m)); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape& t, ag::Var x) { return ag::matmul(t.constant(a), x); }, m) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape& t, ag::Var x) { return ag::linear(x, t.constant(w)); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape& t, ag::Var x) { return ag::linear(t.constant(a), x); }, w) < 1e-6);
    for (std::size_t pad : {0u, 1u}) {
      CHECK(fd_error(rng, [&](ag::Tape& t, ag::Var x) { return ag::conv2d(x, t.constant(ker), pad); }, img) < 1e-6);
      CHECK(fd_error(rng, [&](ag::Tape& t, ag::Var x) { return ag::conv2d(t.constant(img), x, pad); }, ker) < 1e-6);
    }
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::relu(x); }, kinked) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::reshape(x, {4, 3}); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::sum(x); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::mean(x); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::variance(x); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::abs_sum(x); }, kinked) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::softmax_cross_entropy(x, labels); }, a) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::clamp(x, -0.5, 0.5); }, a) < 1e-5);
    CHECK(fd_error(rng, [&](ag::Tape& t, ag::Var x) { return ag::channel_noise(x, t.constant(alpha), eta); }, eta) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape& t, ag::Var x) { return ag::channel_noise(t.constant(eta), x, eta); }, alpha) < 1e-6);
    CHECK(fd_error(rng, [&](ag::Tape&, ag::Var x) { return ag::channel_affine(x, sc, sh); }, img) < 1e-6);
  }
}

TEST_CASE("sign has a zero gradient and sign(0) = 0") {
  const Tensor x(Shape{3}, {-2.0, 0.0, 5.0});
  ag::Tape tape;
  ag::Var v = tape.leaf(x, true);
  ag::Var s = ag::sign(v);
  CHECK(s.value() == Tensor(Shape{3}, {-1.0, 0.0, 1.0}));
  const auto g = tape.backward(ag::sum(s));
  CHECK(g[v] == Tensor(Shape{3}, 0.0));
}

TEST_CASE("cross-entropy gradient for logits [2, 0] with label 0") {
  ag::Tape tape;
  ag::Var z = tape.leaf(Tensor(Shape{1, 2}, {2.0, 0.0}), true);
  const std::vector<int> y{0};
  const auto g = tape.backward(ag::softmax_cross_entropy(z, y));
  const double p1 = 1.0 / (1.0 + std::exp(2.0));
  CHECK(g[z][0] == doctest::Approx(-p1));
  CHECK(g[z][1] == doctest::Approx(p1));
  CHECK(g[z][0] == doctest::Approx(-0.1192).epsilon(1e-3));
}

TEST_CASE("small worked examples") {
  SUBCASE("relu") {
    ag::Tape tape;
    ag::Var x = tape.leaf(Tensor(Shape{3}, {-1.0, 0.5, 2.0}), true);
    ag::Var r = ag::relu(x);
    CHECK(r.value() == Tensor(Shape{3}, {0.0, 0.5, 2.0}));
    CHECK(tape.backward(ag::sum(r))[x] == Tensor(Shape{3}, {0.0, 1.0, 1.0}));
  }
  SUBCASE("identity matmul") {
    ag::Tape tape;
    const Tensor a(Shape{2, 2}, {1.0, 2.0, 3.0, 4.0});
    ag::Var out = ag::matmul(tape.constant(a), tape.constant(Tensor(Shape{2, 2}, {1, 0, 0, 1})));
    CHECK(out.value() == a);
  }
  SUBCASE("conv of ones") {
    ag::Tape tape;
    ag::Var out = ag::conv2d(tape.constant(Tensor(Shape{1, 1, 3, 3}, 1.0)),
                             tape.constant(Tensor(Shape{1, 1, 2, 2}, 1.0)), 0);
    CHECK(out.value() == Tensor(Shape{1, 1, 2, 2}, 4.0));
  }
  SUBCASE("derivative of x^2 at 3") {
    const Tensor g = ag::finite_difference_gradient(
        [](const Tensor& t) { return t[0] * t[0]; }, Tensor(Shape{1}, 3.0), 1e-5);
    CHECK(g[0] == doctest::Approx(6.0));
    const Tensor t = tape_gradient([](ag::Tape&, ag::Var x) { return ag::sum(ag::mul(x, x)); },
                                   Tensor(Shape{1}, 3.0));
    CHECK(t[0] == 6.0);
  }
}

TEST_CASE("a variable used twice accumulates both paths") {
  const Tensor g = tape_gradient(
      [](ag::Tape&, ag::Var x) { return ag::sum(ag::add(ag::scale(x, 2.0), ag::mul(x, x))); },
      Tensor(Shape{2}, {1.0, -3.0}));
  CHECK(g == Tensor(Shape{2}, {4.0, -4.0}));
}

TEST_CASE("backward misuse is an error") {
  ag::Tape tape;
  ag::Var x = tape.leaf(Tensor(Shape{2}, 1.0), true);
  CHECK_THROWS_AS(tape.backward(ag::scale(x, 2.0)), Error);
  ag::Var s = ag::sum(x);
  tape.backward(s);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(s), Error);
  ag::Tape other;
  ag::Var y = other.leaf(Tensor(Shape{2}, 1.0), true);
  CHECK_THROWS_AS(tape.constant(Tensor(Shape{2}, 1.0)), Error);
  ag::Tape third;
  ag::Var z = third.constant(Tensor(Shape{2}, 1.0));
  CHECK_THROWS_AS(ag::add(y, z), Error);
  CHECK_THROWS_AS(ag::add(y, other.constant(Tensor(Shape{3}, 1.0))), ShapeError);
}

TEST_CASE("ops on constants record no gradient") {
  ag::Tape tape;
  ag::Var c = tape.constant(Tensor(Shape{2}, 1.0));
  ag::Var r = ag::relu(c);
  CHECK_FALSE(r.requires_grad());
  ag::Var x = tape.leaf(Tensor(Shape{2}, 1.0), true);
  ag::Var s = ag::sum(ag::add(x, r));
  const auto g = tape.backward(s);
  CHECK(g.contains(x));
  CHECK_FALSE(g.contains(c));
}

TEST_CASE("cross-entropy rejects bad labels") {
  ag::Tape tape;
  ag::Var z = tape.constant(Tensor(Shape{1, 2}, 0.0));
  const std::vector<int> bad{2}, wrong_count{0, 1};
  CHECK_THROWS_AS(ag::softmax_cross_entropy(z, bad), ShapeError);
  CHECK_THROWS_AS(ag::softmax_cross_entropy(z, wrong_count), ShapeError);
}
