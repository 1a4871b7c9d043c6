#include "rsr/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rsr/rng.hpp"

namespace rsr::attack {

std::string_view to_string(Family f) {
  switch (f) {
    case Family::fgsm: return "fgsm";
    case Family::pgd: return "pgd";
    case Family::zoo_fd: return "zoo_fd";
    case Family::transfer: return "transfer";
  }
  return "?";
}

Family family_from_string(std::string_view s) {
  if (s == "fgsm") return Family::fgsm;
  if (s == "pgd") return Family::pgd;
  if (s == "zoo_fd" || s == "zoo") return Family::zoo_fd;
  if (s == "transfer") return Family::transfer;
  throw Error("unknown attack family '" + std::string(s) + "'");
}

void AttackSpec::validate() const {
  if (!std::isfinite(epsilon) || epsilon < 0.0) throw Error("attack epsilon must be >= 0");
  if (!(lower < upper)) throw Error("attack bounds need lower < upper");
  if (num_steps < 1) throw Error("attack num_steps must be >= 1");
  if (family == Family::fgsm && num_steps != 1) throw Error("fgsm takes exactly one step");
  // with epsilon 0 every step is projected away, so a zero step is harmless
  if (family != Family::fgsm && !(step_size > 0.0) && !(epsilon == 0.0 && step_size == 0.0))
    throw Error("attack step_size must be > 0");
  if (family == Family::zoo_fd) {
    if (!(fd_step > 0.0)) throw Error("zoo_fd fd_step must be > 0");
    if (coords_per_iter == 0) throw Error("zoo_fd needs at least one coordinate per iteration");
  }
}

AttackSpec AttackSpec::fgsm(double epsilon) {
  AttackSpec s;
  s.family = Family::fgsm;
  s.epsilon = epsilon;
  s.step_size = epsilon;
  s.num_steps = 1;
  return s;
}

AttackSpec AttackSpec::pgd(double epsilon, int steps) {
  AttackSpec s;
  s.family = Family::pgd;
  s.epsilon = epsilon;
  s.step_size = epsilon / 4.0;
  s.num_steps = steps;
  return s;
}

AttackSpec AttackSpec::zoo(double epsilon, int iterations, std::uint64_t budget) {
  AttackSpec s = pgd(epsilon, iterations);
  s.family = Family::zoo_fd;
  s.query_budget = budget;
  return s;
}

namespace {

double sgn(double g) { return static_cast<double>((g > 0.0) - (g < 0.0)); }

}  // namespace

void project_linf(std::span<double> candidate, std::span<const double> origin, double epsilon,
                  double lo, double hi) {
  if (candidate.size() != origin.size())
    throw ShapeError("project_linf: candidate and origin differ in size");
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const double x = origin[i];
    double a = std::max(lo, x - epsilon);
    double b = std::min(hi, x + epsilon);
    while (x - a > epsilon) a = std::nextafter(a, inf);
    while (b - x > epsilon) b = std::nextafter(b, -inf);
    if (a > b)
      throw Error("project_linf: origin " + std::to_string(x) + " lies outside the box by more "
                  "than epsilon");
    candidate[i] = std::min(std::max(candidate[i], a), b);
  }
}

Tensor project_linf(const Tensor& candidate, const Tensor& origin, double epsilon, double lo,
                    double hi) {
  if (candidate.shape() != origin.shape())
    throw ShapeError("project_linf: shapes " + to_string(candidate.shape()) + " and " +
                     to_string(origin.shape()));
  Tensor out = candidate;
  project_linf(out.data(), origin.data(), epsilon, lo, hi);
  return out;
}

Tensor input_gradient(const InputLoss& loss, const Tensor& x) {
  ag::Tape tape;
  ag::Var xv = tape.leaf(x, true);
  ag::Var l = loss(tape, xv);
  return tape.backward(l)[xv];
}

Tensor fgsm(const InputLoss& loss, const Tensor& x, double epsilon, double lo, double hi) {
  const Tensor g = input_gradient(loss, x);
  Tensor cand = x;
  for (std::size_t i = 0; i < cand.size(); ++i) cand[i] = x[i] + epsilon * sgn(g[i]);
  project_linf(cand.data(), x.data(), epsilon, lo, hi);
  return cand;
}

Tensor pgd(const InputLoss& loss, const Tensor& x, const AttackSpec& spec,
           std::uint64_t sample_offset) {
  spec.validate();
  Tensor adv = x;
  if (spec.random_start) {
    const std::size_t per = x.rank() > 0 && x.dim(0) > 0 ? x.size() / x.dim(0) : x.size();
    // reseeded per sample so starts do not depend on batching
    for (std::size_t s = 0; per > 0 && s < adv.size() / per; ++s) {
      Rng rng(mix_seed(spec.seed, sample_offset + s, 0x7374617274ull));
      for (std::size_t j = 0; j < per; ++j)
        adv[s * per + j] += rng.uniform(-spec.epsilon, spec.epsilon);
    }
    project_linf(adv.data(), x.data(), spec.epsilon, spec.lower, spec.upper);
  }
  for (int step = 0; step < spec.num_steps; ++step) {
    const Tensor g = input_gradient(loss, adv);
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += spec.step_size * sgn(g[i]);
    project_linf(adv.data(), x.data(), spec.epsilon, spec.lower, spec.upper);
  }
  return adv;
}

InputLoss model_loss(const nn::Model& model, std::span<const int> labels, nn::NoiseStream& noise) {
  std::vector<int> y(labels.begin(), labels.end());
  return [&model, &noise, y = std::move(y)](ag::Tape& tape, ag::Var x) {
    const nn::BoundParams params = nn::bind_parameters(tape, model, false);
    ag::Var logits = nn::forward(tape, model, params, x, noise.next());
    return ag::softmax_cross_entropy(logits, y);
  };
}

Tensor fgsm(const nn::Model& model, const Tensor& x, std::span<const int> labels, double epsilon,
            nn::NoiseStream& noise) {
  return fgsm(model_loss(model, labels, noise), x, epsilon);
}

Tensor pgd(const nn::Model& model, const Tensor& x, std::span<const int> labels,
           const AttackSpec& spec, nn::NoiseStream& noise, std::uint64_t sample_offset) {
  return pgd(model_loss(model, labels, noise), x, spec, sample_offset);
}

Scorer model_scorer(const nn::Model& model, nn::NoiseStream& noise) {
  return [&model, &noise](const Tensor& batch) { return nn::predict(model, batch, noise.next()); };
}

Tensor zoo_gradient_estimate(const Scorer& scorer, const Tensor& x, int label,
                             std::span<const std::size_t> coords, double h,
                             std::uint64_t& queries) {
  if (x.rank() == 0 || x.dim(0) != 1) throw ShapeError("zoo_gradient_estimate needs a batch of one");
  const std::size_t dim = x.size();
  Shape bshape = x.shape();
  bshape[0] = 2 * coords.size();
  Tensor batch(bshape);
  for (std::size_t k = 0; k < coords.size(); ++k) {
    if (coords[k] >= dim) throw Error("zoo_gradient_estimate: coordinate out of range");
    auto plus = batch.data().subspan(2 * k * dim, dim);
    auto minus = batch.data().subspan((2 * k + 1) * dim, dim);
    std::copy(x.data().begin(), x.data().end(), plus.begin());
    std::copy(x.data().begin(), x.data().end(), minus.begin());
    plus[coords[k]] += h;
    minus[coords[k]] -= h;
  }
  Tensor g(x.shape());
  if (coords.empty()) return g;
  const Tensor logits = scorer(batch);
  queries += batch.dim(0);
  const std::vector<int> labels(batch.dim(0), label);
  const std::vector<double> loss = ag::cross_entropy_per_sample(logits, labels);
  for (std::size_t k = 0; k < coords.size(); ++k)
    g[coords[k]] = (loss[2 * k] - loss[2 * k + 1]) / (2.0 * h);
  return g;
}

ZooResult zoo_fd_attack(const Scorer& scorer, const Tensor& x, std::span<const int> labels,
                        const AttackSpec& spec, std::uint64_t sample_offset) {
  spec.validate();
  if (x.rank() == 0 || labels.size() != x.dim(0))
    throw ShapeError("zoo_fd_attack: " + std::to_string(labels.size()) + " labels for input " +
                     to_string(x.shape()));
  ZooResult res;
  res.adversarial = x;
  const std::size_t n = x.dim(0);
  const std::size_t dim = n ? x.size() / n : 0;
  const std::size_t ncoords = std::min(spec.coords_per_iter, dim);
  std::vector<std::size_t> order(dim);

  for (std::size_t i = 0; i < n; ++i) {
    const Tensor x0 = x.slice_rows(i, i + 1);
    const int y = labels[i];
    const std::span<const int> ys(&labels[i], 1);
    std::uint64_t used = 0;
    auto exhausted = [&](std::uint64_t more) { return spec.query_budget - used < more; };

    if (exhausted(1)) {
      res.budget_exhausted = true;
      continue;
    }
    const Tensor logits0 = scorer(x0);
    used += 1;
    double best_loss = ag::cross_entropy_per_sample(logits0, ys)[0];
    Tensor best = x0;
    if (nn::argmax_rows(logits0)[0] == y) {
      Tensor cur = x0;
      for (int it = 0; it < spec.num_steps; ++it) {
        if (exhausted(2 * ncoords + 1)) {
          res.budget_exhausted = true;
          break;
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(mix_seed(spec.seed, sample_offset + i, static_cast<std::uint64_t>(it)));
        for (std::size_t k = 0; k < ncoords; ++k) std::swap(order[k], order[k + rng.below(dim - k)]);
        const std::span<const std::size_t> coords(order.data(), ncoords);
        const Tensor g = zoo_gradient_estimate(scorer, cur, y, coords, spec.fd_step, used);
        for (std::size_t j = 0; j < dim; ++j) cur[j] += spec.step_size * sgn(g[j]);
        project_linf(cur.data(), x0.data(), spec.epsilon, spec.lower, spec.upper);
        const Tensor logits = scorer(cur);
        used += 1;
        const double loss = ag::cross_entropy_per_sample(logits, ys)[0];
        if (nn::argmax_rows(logits)[0] != y) {
          best = cur;
          break;
        }
        if (loss > best_loss) {
          best_loss = loss;
          best = cur;
        }
      }
    }
    std::copy(best.data().begin(), best.data().end(), res.adversarial.data().begin() + i * dim);
    res.queries += used;
  }
  return res;
}

namespace {

void check_labels(const Tensor& x, std::span<const int> labels, const char* who) {
  if (x.rank() == 0 || labels.size() != x.dim(0))
    throw ShapeError(std::string(who) + ": " + std::to_string(labels.size()) +
                     " labels for input " + to_string(x.shape()));
  if (labels.empty()) throw Error(std::string(who) + ": no samples");
}

bool noisy(const nn::Model& model, const EvalOptions& opts) {
  return opts.inference_noise && model.noise_enabled();
}

std::size_t batch_of(const EvalOptions& opts) { return std::max<std::size_t>(1, opts.batch_size); }

}  // namespace

double accuracy(const nn::Model& model, const Tensor& x, std::span<const int> labels,
                const EvalOptions& opts) {
  check_labels(x, labels, "accuracy");
  nn::NoiseStream noise(noisy(model, opts), kEvalNoiseBase);
  const std::size_t n = labels.size(), bs = batch_of(opts);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < n; b += bs) {
    const std::size_t e = std::min(n, b + bs);
    const std::vector<int> pred = nn::argmax_rows(nn::predict(model, x.slice_rows(b, e), noise.next()));
    for (std::size_t i = b; i < e; ++i) correct += pred[i - b] == labels[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

Tensor generate(const nn::Model& model, const Tensor& x, std::span<const int> labels,
                const AttackSpec& spec, const EvalOptions& opts, AttackOutcome* outcome) {
  check_labels(x, labels, "generate");
  spec.validate();
  nn::NoiseStream noise(noisy(model, opts), kAttackNoiseBase);
  if (outcome) {
    *outcome = AttackOutcome{};
    outcome->spec = spec;
  }
  if (spec.family == Family::zoo_fd) {
    ZooResult r = zoo_fd_attack(model_scorer(model, noise), x, labels, spec);
    if (outcome) {
      outcome->queries = r.queries;
      outcome->budget_exhausted = r.budget_exhausted ? 1 : 0;
    }
    return std::move(r.adversarial);
  }
  if (spec.family == Family::transfer)
    throw Error("transfer attacks need a source model; use transfer_attack");

  Tensor adv(x.shape());
  const std::size_t n = labels.size(), bs = batch_of(opts), per = x.size() / n;
  for (std::size_t b = 0; b < n; b += bs) {
    const std::size_t e = std::min(n, b + bs);
    const Tensor xb = x.slice_rows(b, e);
    const auto yb = labels.subspan(b, e - b);
    const Tensor ab = spec.family == Family::fgsm
                          ? fgsm(model_loss(model, yb, noise), xb, spec.epsilon, spec.lower, spec.upper)
                          : pgd(model_loss(model, yb, noise), xb, spec, b);
    std::copy(ab.data().begin(), ab.data().end(), adv.data().begin() + b * per);
  }
  return adv;
}

AttackOutcome attacked_accuracy(const nn::Model& model, const Tensor& x, std::span<const int> labels,
                                const AttackSpec& spec, const EvalOptions& opts) {
  AttackOutcome out;
  const Tensor adv = generate(model, x, labels, spec, opts, &out);
  out.accuracy = accuracy(model, adv, labels, opts);
  return out;
}

EvaluationReport evaluate(const nn::Model& model, const Tensor& x, std::span<const int> labels,
                          std::span<const AttackSpec> attacks, const EvalOptions& opts) {
  EvaluationReport r;
  r.samples = labels.size();
  r.inference_noise = noisy(model, opts);
  r.clean_accuracy = accuracy(model, x, labels, opts);
  for (const AttackSpec& s : attacks) r.attacks.push_back(attacked_accuracy(model, x, labels, s, opts));
  return r;
}

EvaluationReport transfer_attack(const nn::Model& source, const nn::Model& target, const Tensor& x,
                                 std::span<const int> labels, const AttackSpec& spec,
                                 const EvalOptions& opts) {
  if (source.input_shape != target.input_shape || source.num_classes != target.num_classes)
    throw ShapeError("transfer_attack: source takes " + to_string(source.input_shape) + " with " +
                     std::to_string(source.num_classes) + " classes, target takes " +
                     to_string(target.input_shape) + " with " +
                     std::to_string(target.num_classes));
  AttackSpec crafted = spec;
  if (crafted.family == Family::transfer) crafted.family = Family::pgd;
  AttackOutcome out;
  const Tensor adv = generate(source, x, labels, crafted, opts, &out);
  out.spec = spec;
  out.accuracy = accuracy(target, adv, labels, opts);
  EvaluationReport r;
  r.samples = labels.size();
  r.inference_noise = noisy(target, opts);
  r.clean_accuracy = accuracy(target, x, labels, opts);
  r.source_accuracy = accuracy(source, adv, labels, opts);
  r.attacks.push_back(out);
  return r;
}

SuccessRate attack_success_rate(const nn::Model& target, const Tensor& x, std::span<const int> labels,
                                const AttackSpec& spec, const EvalOptions& opts) {
  check_labels(x, labels, "attack_success_rate");
  nn::NoiseStream noise(noisy(target, opts), kEvalNoiseBase);
  const std::size_t n = labels.size(), bs = batch_of(opts);
  std::vector<std::size_t> keep;
  for (std::size_t b = 0; b < n; b += bs) {
    const std::size_t e = std::min(n, b + bs);
    const std::vector<int> pred = nn::argmax_rows(nn::predict(target, x.slice_rows(b, e), noise.next()));
    for (std::size_t i = b; i < e; ++i)
      if (pred[i - b] == labels[i]) keep.push_back(i);
  }
  if (keep.empty())
    throw Error("attack_success_rate: the target classifies none of the samples correctly");
  const Tensor xs = gather_rows(x, keep);
  std::vector<int> ys;
  ys.reserve(keep.size());
  for (std::size_t i : keep) ys.push_back(labels[i]);
  const AttackOutcome o = attacked_accuracy(target, xs, ys, spec, opts);
  SuccessRate r;
  r.offered = n;
  r.attacked = keep.size();
  r.percent = 100.0 - o.accuracy;
  r.queries = o.queries;
  return r;
}

}  // namespace rsr::attack
