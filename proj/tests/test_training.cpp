#include <doctest.h>

#include "rsr/pruning.hpp"
#include "rsr/training.hpp"
#include "support.hpp"

using namespace rsr;
using train::Mode;
using train::TrainConfig;

namespace {

data::Dataset tiny_set(Rng& rng, std::size_t n) {
  data::Dataset d;
  d.images = testing::random_tensor(rng, {n, 1, 12, 12}, 0.0, 1.0);
  d.labels = testing::random_labels(rng, n, 4);
  d.num_classes = 4;
  return d;
}

nn::Model tiny_cnn(std::uint64_t seed) {
  return nn::make_model("cnn-small", {1, 12, 12}, 4, {{0.5}, {0.25}}, 0.25, seed);
}

}  // namespace

TEST_CASE("lasso penalty value and subgradient") {
  nn::Model m = nn::build_model("custom", {2}, 2, {{0.0}, {1.0}}, {{nn::LayerKind::dense, 2, 2}}, 1);
  m.layers[1].weight = Tensor(Shape{2, 2}, {1, -2, 0, 3});
  ag::Tape tape;
  const auto p = nn::bind_parameters(tape, m, true);
  ag::Var l = train::lasso_penalty(p);
  CHECK(l.value().item() == 6.0);
  CHECK(ag::scale(l, 0.1).value().item() == doctest::Approx(0.6));
  const auto g = tape.backward(l);
  CHECK(g[p.weights[0]] == Tensor(Shape{2, 2}, {1, -1, 0, 1}));
  CHECK(g[p.alphas[0]] == Tensor(Shape{2}, 0.0));
  CHECK(train::lasso_magnitude(m) == 6.0);
}

TEST_CASE("mode switches") {
  CHECK(train::mode_from_string("rsr") == Mode::rsr);
  CHECK_THROWS_AS(train::mode_from_string("adam"), Error);
  CHECK(train::uses_noise(Mode::rsr));
  CHECK_FALSE(train::uses_noise(Mode::pgd_only));
  CHECK(train::uses_noise(Mode::cni_only));
  CHECK_FALSE(train::uses_adversarial(Mode::plain));
  CHECK(train::uses_lasso(Mode::lasso_only));
  TrainConfig c;
  c.mode = Mode::pgd_only;
  c.lambda = 0.5;
  CHECK(c.effective_lambda() == 0.0);
  c.a = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("with a = 1 the adversarial term contributes no gradient") {
  Rng rng(51);
  nn::Model m = testing::random_model(rng);
  m.set_noise_enabled(false);
  const Tensor x = testing::random_input(rng, m, 4);
  const Tensor x_adv = testing::random_input(rng, m, 4);
  const auto y = testing::random_labels(rng, 4, m.num_classes);
  TrainConfig c;
  c.mode = Mode::pgd_only;
  c.a = 1.0;
  auto grads = [&](const Tensor& xa, Mode mode) {
    c.mode = mode;
    ag::Tape tape;
    const auto p = nn::bind_parameters(tape, m, true);
    nn::NoiseStream noise(false, 0);
    const auto terms = train::ensemble_loss(tape, m, p, x, xa, y, c, noise);
    return tape.backward(terms.total)[p.weights[0]];
  };
  CHECK(grads(x_adv, Mode::pgd_only) == grads(x, Mode::pgd_only));
  CHECK(grads(x_adv, Mode::pgd_only) == grads(x_adv, Mode::plain));
}

TEST_CASE("ensemble loss combines its terms") {
  Rng rng(52);
  nn::Model m = testing::random_model(rng);
  m.set_noise_enabled(false);
  const Tensor x = testing::random_input(rng, m, 3);
  const Tensor xa = testing::random_input(rng, m, 3);
  const auto y = testing::random_labels(rng, 3, m.num_classes);
  TrainConfig c;
  c.mode = Mode::rsr;
  c.a = 0.3;
  c.lambda = 0.01;
  ag::Tape tape;
  const auto p = nn::bind_parameters(tape, m, true);
  nn::NoiseStream noise(false, 0);
  const auto t = train::ensemble_loss(tape, m, p, x, xa, y, c, noise);
  CHECK(t.total.value().item() ==
        doctest::Approx(0.3 * t.clean + 0.7 * t.adv + 0.01 * train::lasso_magnitude(m)));
  CHECK(t.lasso == doctest::Approx(train::lasso_magnitude(m)));
}

TEST_CASE("one SGD step on a two-weight dense layer by hand") {
  nn::Model m = nn::build_model("custom", {2}, 2, {{0.0}, {1.0}}, {{nn::LayerKind::dense, 2, 2}}, 1);
  m.layers[1].weight = Tensor(Shape{2, 2}, {0.5, -0.25, 0.0, 1.0});
  m.set_noise_enabled(false);
  const Tensor x(Shape{1, 2}, {1.0, 0.5});
  const std::vector<int> y{0};
  TrainConfig c;
  c.mode = Mode::lasso_only;
  c.lambda = 0.1;
  c.momentum = 0.9;
  c.attack = attack::AttackSpec::pgd(0.0, 1);  // x_adv == x, so the two CE terms sum to one
  auto opt = train::make_optimizer(m);
  nn::NoiseStream noise(false, 0);

  // logits z = W x = [0.375, 0.5]; p = softmax(z); dCE/dz = p - e0; dCE/dW = (p - e0) x^T
  const double p1 = 1.0 / (1.0 + std::exp(0.375 - 0.5)), p0 = 1.0 - p1;
  const double g[4] = {(p0 - 1.0) * 1.0 + 0.1, (p0 - 1.0) * 0.5 - 0.1, p1 * 1.0 + 0.0, p1 * 0.5 + 0.1};
  const double w0[4] = {0.5, -0.25, 0.0, 1.0};
  train::train_step(m, opt, x, y, c, 0.5, noise, 0);
  for (int i = 0; i < 4; ++i) CHECK(m.layers[1].weight[i] == doctest::Approx(w0[i] - 0.5 * g[i]));
  // the second step applies momentum to the stored velocity
  const Tensor w1 = m.layers[1].weight;
  const Tensor v1 = opt.weight_velocity[0];
  for (int i = 0; i < 4; ++i) CHECK(v1[i] == doctest::Approx(g[i]));
  train::train_step(m, opt, x, y, c, 0.5, noise, 1);
  for (int i = 0; i < 4; ++i)
    CHECK(m.layers[1].weight[i] == doctest::Approx(w1[i] - 0.5 * opt.weight_velocity[0][i]));
}

TEST_CASE("pgd_only with epsilon 0 takes the plain update") {
  Rng rng(53);
  const data::Dataset d = tiny_set(rng, 40);
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 20;
  c.lr = 0.01;
  c.mode = Mode::pgd_only;
  c.attack = attack::AttackSpec::pgd(0.0, 2);
  const auto adv = train::train(tiny_cnn(1), d, c).model;
  c.mode = Mode::plain;
  const auto plain = train::train(tiny_cnn(1), d, c).model;
  // the two halves of the gradient are accumulated separately, so only rounding differs
  for (std::size_t id : adv.parametric_layers())
    for (std::size_t i = 0; i < adv.layers[id].weight.size(); ++i)
      CHECK(adv.layers[id].weight[i] ==
            doctest::Approx(plain.layers[id].weight[i]).epsilon(1e-9).scale(1e-12));
}

TEST_CASE("training is deterministic and records history") {
  Rng rng(54);
  const data::Dataset d = tiny_set(rng, 30);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.lr = 0.01;
  c.attack = attack::AttackSpec::pgd(4.0 / 255.0, 2);
  c.history_samples = 10;
  std::size_t steps = 0;
  const auto a = train::train(tiny_cnn(2), d, c, nullptr, [&](const train::StepMetrics&) { ++steps; });
  const auto b = train::train(tiny_cnn(2), d, c);
  CHECK(a.model == b.model);
  CHECK(steps == 4);
  REQUIRE(a.history.size() == 2);
  CHECK(a.history[1].pgd_accuracy.has_value());
  CHECK(a.history[1].mean_abs_alpha > 0.0);
  c.seed = 99;
  CHECK_FALSE(train::train(tiny_cnn(2), d, c).model == a.model);
}

TEST_CASE("zero epochs returns the initial model") {
  Rng rng(55);
  const data::Dataset d = tiny_set(rng, 10);
  TrainConfig c;
  c.epochs = 0;
  const nn::Model init = tiny_cnn(3);
  const auto r = train::train(init, d, c);
  CHECK(r.model == init);
  CHECK(r.history.empty());
}

TEST_CASE("modes without noise switch it off; alpha only moves with noise") {
  Rng rng(56);
  const data::Dataset d = tiny_set(rng, 20);
  TrainConfig c;
  c.epochs = 1;
  c.lr = 0.01;
  c.attack = attack::AttackSpec::pgd(4.0 / 255.0, 1);
  c.mode = Mode::pgd_only;
  const auto off = train::train(tiny_cnn(4), d, c).model;
  CHECK_FALSE(off.noise_enabled());
  for (std::size_t id : off.parametric_layers())
    for (double a : off.layers[id].noise.alpha) CHECK(a == nn::kDefaultAlpha);
  c.mode = Mode::cni_only;
  const auto on = train::train(tiny_cnn(4), d, c).model;
  CHECK(on.noise_enabled());
  bool moved = false;
  for (std::size_t id : on.parametric_layers())
    for (double a : on.layers[id].noise.alpha) moved |= a != nn::kDefaultAlpha;
  CHECK(moved);
}

TEST_CASE("masked weights stay exactly zero through training") {
  Rng rng(57);
  const data::Dataset d = tiny_set(rng, 32);
  const nn::Model pruned = prune::prune_threshold(tiny_cnn(5), 0.05).model;
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.lr = 0.01;
  c.attack = attack::AttackSpec::pgd(4.0 / 255.0, 2);
  const auto m = train::train(pruned, d, c).model;
  for (std::size_t id : m.parametric_layers()) {
    const auto& l = m.layers[id];
    REQUIRE(l.mask.has_value());
    for (std::size_t i = 0; i < l.weight.size(); ++i)
      if ((*l.mask)[i] == 0.0) CHECK(l.weight[i] == 0.0);
  }
}

TEST_CASE("divergence is reported with the offending layer") {
  Rng rng(58);
  const data::Dataset d = tiny_set(rng, 8);
  nn::Model m = tiny_cnn(6);
  m.layers[m.parametric_layers()[1]].weight[0] = std::numeric_limits<double>::infinity();
  TrainConfig c;
  c.epochs = 1;
  c.mode = Mode::plain;
  try {
    train::train(m, d, c);
    FAIL("expected a divergence error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer") != std::string::npos);
  }
}
