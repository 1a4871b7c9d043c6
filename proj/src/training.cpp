#include "rsr/training.hpp"

#include <cmath>
#include <numeric>

#include "rsr/pruning.hpp"
#include "rsr/rng.hpp"

namespace rsr::train {

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::plain: return "plain";
    case Mode::pgd_only: return "pgd_only";
    case Mode::cni_only: return "cni_only";
    case Mode::lasso_only: return "lasso_only";
    case Mode::rsr: return "rsr";
  }
  return "?";
}

Mode mode_from_string(std::string_view s) {
  for (Mode m : {Mode::plain, Mode::pgd_only, Mode::cni_only, Mode::lasso_only, Mode::rsr})
    if (s == to_string(m)) return m;
  throw Error("unknown training mode '" + std::string(s) +
              "' (expected plain, pgd_only, cni_only, lasso_only or rsr)");
}

bool uses_noise(Mode m) { return m == Mode::cni_only || m == Mode::rsr; }
bool uses_adversarial(Mode m) { return m != Mode::plain; }
bool uses_lasso(Mode m) { return m == Mode::lasso_only || m == Mode::rsr; }

void TrainConfig::validate() const {
  if (!(a >= 0.0 && a <= 1.0)) throw Error("training: a must lie in [0, 1]");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("training: lambda must be >= 0");
  if (!(lr > 0.0)) throw Error("training: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("training: momentum must lie in [0, 1)");
  if (epochs < 0) throw Error("training: epochs must be >= 0");
  if (batch_size == 0) throw Error("training: batch_size must be > 0");
  if (lr_decay_every < 0 || !(lr_decay > 0.0)) throw Error("training: bad learning-rate decay");
  if (uses_adversarial(mode)) attack.validate();
}

double lasso_magnitude(const nn::Model& model) {
  double s = 0.0;
  for (std::size_t id : model.parametric_layers())
    for (double w : model.layers[id].weight.data()) s += std::abs(w);
  return s;
}

Optimizer make_optimizer(const nn::Model& model) {
  Optimizer opt;
  for (std::size_t id : model.parametric_layers()) {
    opt.weight_velocity.push_back(Tensor::zeros_like(model.layers[id].weight));
    opt.alpha_velocity.emplace_back(model.layers[id].noise.alpha.size(), 0.0);
  }
  return opt;
}

namespace {

void check_finite(const nn::Model& model, std::span<const std::size_t> ids, std::size_t p,
                  const Tensor& g, const char* what) {
  if (g.all_finite()) return;
  const std::size_t id = ids[p];
  throw Error("training diverged: non-finite " + std::string(what) + " gradient in layer " +
              std::to_string(id) + " (" + std::string(nn::to_string(model.layers[id].spec.kind)) +
              ")");
}

}  // namespace

ag::Var lasso_penalty(const nn::BoundParams& params) {
  if (params.weights.empty()) throw Error("lasso_penalty: model has no conv/dense layers");
  ag::Var l1 = ag::abs_sum(params.weights[0]);
  for (std::size_t p = 1; p < params.weights.size(); ++p)
    l1 = ag::add(l1, ag::abs_sum(params.weights[p]));
  return l1;
}

LossTerms ensemble_loss(ag::Tape& tape, const nn::Model& model, const nn::BoundParams& params,
                        const Tensor& x, const Tensor& x_adv, std::span<const int> y,
                        const TrainConfig& cfg, nn::NoiseStream& noise) {
  LossTerms t;
  ag::Var clean = ag::softmax_cross_entropy(
      nn::forward(tape, model, params, tape.constant(x), noise.next()), y);
  t.clean = clean.value().item();
  t.total = clean;
  if (uses_adversarial(cfg.mode)) {
    ag::Var adv = ag::softmax_cross_entropy(
        nn::forward(tape, model, params, tape.constant(x_adv), noise.next()), y);
    t.adv = adv.value().item();
    t.total = ag::add(ag::scale(clean, cfg.a), ag::scale(adv, 1.0 - cfg.a));
  }
  ag::Var l1 = lasso_penalty(params);
  t.lasso = l1.value().item();
  const double lambda = cfg.effective_lambda();
  if (lambda > 0.0) t.total = ag::add(t.total, ag::scale(l1, lambda));
  return t;
}

StepMetrics train_step(nn::Model& model, Optimizer& opt, const Tensor& x, std::span<const int> y,
                       const TrainConfig& cfg, double lr, nn::NoiseStream& noise,
                       std::uint64_t sample_offset) {
  Tensor x_adv;
  if (uses_adversarial(cfg.mode)) x_adv = attack::pgd(model, x, y, cfg.attack, noise, sample_offset);

  ag::Tape tape;
  const nn::BoundParams params = nn::bind_parameters(tape, model, true);
  const LossTerms terms = ensemble_loss(tape, model, params, x, x_adv, y, cfg, noise);
  StepMetrics m;
  m.lr = lr;
  m.clean_loss = terms.clean;
  m.adv_loss = terms.adv;
  m.lasso = terms.lasso;
  m.loss = terms.total.value().item();
  if (!std::isfinite(m.loss)) {
    // name the first layer whose weights went bad, if any did
    for (std::size_t id : model.parametric_layers())
      if (!model.layers[id].weight.all_finite())
        throw Error("training diverged: non-finite loss; first non-finite weights in layer " +
                    std::to_string(id) + " (" + std::string(nn::to_string(model.layers[id].spec.kind)) +
                    ")");
    throw Error("training diverged: non-finite loss with finite weights (check lr and inputs)");
  }
  const ag::Gradients grads = tape.backward(terms.total);

  const auto ids = model.parametric_layers();
  const bool noisy = uses_noise(cfg.mode);
  double wn = 0.0, an = 0.0;
  for (std::size_t p = 0; p < ids.size(); ++p) {
    nn::Layer& layer = model.layers[ids[p]];
    const Tensor& gw = grads[params.weights[p]];
    check_finite(model, ids, p, gw, "weight");
    Tensor& vw = opt.weight_velocity[p];
    for (std::size_t i = 0; i < gw.size(); ++i) {
      if (layer.mask && (*layer.mask)[i] == 0.0) {
        vw[i] = 0.0;
        layer.weight[i] = 0.0;
        continue;
      }
      wn += gw[i] * gw[i];
      vw[i] = cfg.momentum * vw[i] + gw[i];
      layer.weight[i] -= lr * vw[i];
    }
    if (!noisy) continue;
    const Tensor& ga = grads[params.alphas[p]];
    check_finite(model, ids, p, ga, "noise-scale");
    auto& va = opt.alpha_velocity[p];
    for (std::size_t c = 0; c < ga.size(); ++c) {
      an += ga[c] * ga[c];
      va[c] = cfg.momentum * va[c] + ga[c];
      layer.noise.alpha[c] -= lr * va[c];
    }
  }
  m.weight_grad_norm = std::sqrt(wn);
  m.alpha_grad_norm = std::sqrt(an);
  return m;
}

TrainResult train(const nn::Model& init, const data::Dataset& train_set, const TrainConfig& cfg,
                  const data::Dataset* monitor, const StepCallback& on_step,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  train_set.validate();
  if (train_set.size() == 0) throw Error("training: empty training set");
  TrainResult res{init, {}};
  if (cfg.epochs == 0) return res;
  nn::Model& model = res.model;
  model.set_noise_enabled(uses_noise(cfg.mode));
  Optimizer opt = make_optimizer(model);
  nn::NoiseStream noise(uses_noise(cfg.mode), 0);

  const data::Dataset& mon = monitor ? *monitor : train_set;
  const std::size_t mon_n =
      std::min(mon.size(), cfg.history_samples ? cfg.history_samples : std::size_t{500});
  const data::Dataset mon_subset = mon.slice(0, mon_n);

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  double lr = cfg.lr;
  std::uint64_t seen = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.lr_decay_every > 0 && epoch > 0 && epoch % cfg.lr_decay_every == 0) lr *= cfg.lr_decay;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0x65706f6368ull));
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      const std::size_t e = std::min(n, b + cfg.batch_size);
      const data::Dataset batch =
          train_set.gather(std::span<const std::size_t>(order).subspan(b, e - b));
      TrainConfig step_cfg = cfg;
      step_cfg.attack.seed = mix_seed(cfg.attack.seed, cfg.seed, static_cast<std::uint64_t>(epoch));
      StepMetrics m = train_step(model, opt, batch.images, batch.labels, step_cfg, lr, noise, seen);
      m.epoch = epoch;
      m.step = steps;
      seen += e - b;
      loss_sum += m.loss;
      ++steps;
      if (on_step) on_step(m);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    if (mon_n > 0) {
      const attack::EvalOptions eo;
      rec.clean_accuracy = attack::accuracy(model, mon_subset.images, mon_subset.labels, eo);
      if (cfg.history_samples > 0)
        rec.pgd_accuracy =
            attack::attacked_accuracy(model, mon_subset.images, mon_subset.labels, cfg.attack, eo)
                .accuracy;
    }
    rec.lasso_magnitude = lasso_magnitude(model);
    rec.frac_below_1e5 = prune::near_zero_fraction(model, 1e-5);
    double alpha_sum = 0.0;
    std::size_t alpha_n = 0;
    for (std::size_t id : model.parametric_layers())
      for (double a : model.layers[id].noise.alpha) {
        alpha_sum += std::abs(a);
        ++alpha_n;
      }
    rec.mean_abs_alpha = alpha_n ? alpha_sum / static_cast<double>(alpha_n) : 0.0;
    res.history.push_back(rec);
    if (on_epoch) on_epoch(model, rec);
  }
  return res;
}

}  // namespace rsr::train
