#include "rsr/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>

#include "rsr/checkpoint.hpp"
#include "rsr/rng.hpp"
#include "rsr/sparse.hpp"

namespace rsr::exp {

namespace fs = std::filesystem;

std::uint64_t trial_seed(std::uint64_t experiment_seed, int trial) {
  return mix_seed(experiment_seed, static_cast<std::uint64_t>(trial), 0x747269616cull);
}

nn::Model initial_model(const cfg::ExperimentConfig& c, const data::DataSplit& data,
                        std::uint64_t seed) {
  return nn::make_model(c.model.arch, data.train.sample_shape(), data.train.num_classes,
                        data.normalization, c.model.width, seed);
}

data::Dataset eval_set(const cfg::ExperimentConfig& c, const data::DataSplit& data) {
  const std::size_t n = c.data.eval_samples ? std::min(c.data.eval_samples, data.test.size())
                                            : data.test.size();
  if (n == 0) throw Error("experiment: the test split is empty");
  return data.test.slice(0, n);
}

attack::EvaluationReport evaluate(const nn::Model& model, const data::Dataset& d,
                                  std::span<const attack::AttackSpec> attacks,
                                  const attack::EvalOptions& opts) {
  return attack::evaluate(model, d.images, d.labels, attacks, opts);
}

prune::PruneResult prune_model(const nn::Model& model, const cfg::PruneConfig& p) {
  if (!p.enabled()) throw Error("prune_model: no target_sparsity or gamma configured");
  const double gamma =
      p.gamma ? *p.gamma : prune::gamma_for_target_sparsity(model, *p.target_sparsity);
  return prune::prune_threshold(model, gamma);
}

namespace {

std::vector<attack::AttackSpec> trial_attacks(const cfg::ExperimentConfig& c, std::uint64_t seed) {
  auto specs = c.eval_attacks();
  for (auto& s : specs) s.seed = seed;
  return specs;
}

attack::EvalOptions eval_options(const cfg::ExperimentConfig& c) {
  return {c.eval.noise, c.eval.batch_size};
}

double first_attack(const attack::EvaluationReport& r) {
  return r.attacks.empty() ? std::nan("") : r.attacks.front().accuracy;
}

train::TrainResult train_trial(const cfg::ExperimentConfig& c, const data::DataSplit& data,
                               const data::Dataset& monitor, std::uint64_t seed,
                               const train::EpochCallback& on_epoch = {}) {
  train::TrainConfig tc = c.train;
  tc.seed = seed;
  tc.attack.seed = seed;
  return train::train(initial_model(c, data, seed), data.train, tc, &monitor, {}, on_epoch);
}

}  // namespace

TrialOutput run_trial(const cfg::ExperimentConfig& c, const data::DataSplit& data, int trial,
                      const train::EpochCallback& on_epoch) {
  const std::uint64_t seed = trial_seed(c.seed, trial);
  const data::Dataset eval = eval_set(c, data);
  train::TrainResult tr = train_trial(c, data, eval, seed, on_epoch);
  const auto attacks = trial_attacks(c, seed);
  const auto opts = eval_options(c);

  TrialOutput out;
  TrialResult& r = out.result;
  r.trial = trial;
  r.seed = seed;
  r.history = std::move(tr.history);
  r.before = evaluate(tr.model, eval, attacks, opts);
  r.near_zero_1e3 = prune::near_zero_fraction(tr.model, 1e-3);
  if (c.prune.enabled()) {
    prune::PruneResult pr = prune_model(tr.model, c.prune);
    r.after = evaluate(pr.model, eval, attacks, opts);
    pr.report.clean_acc_before = r.before.clean_accuracy;
    pr.report.clean_acc_after = r.after->clean_accuracy;
    if (!attacks.empty()) {
      pr.report.pgd_acc_before = first_attack(r.before);
      pr.report.pgd_acc_after = first_attack(*r.after);
    }
    r.sparsity = pr.report;
    out.pruned = std::move(pr.model);
  }
  out.trained = std::move(tr.model);
  return out;
}

io::json trial_json(const TrialResult& r) {
  io::json j = {{"trial", r.trial},
                {"seed", r.seed},
                {"before_pruning", io::to_json(r.before)},
                {"near_zero_1e-3", r.near_zero_1e3}};
  if (r.after) j["after_pruning"] = io::to_json(*r.after);
  if (r.sparsity) j["sparsity"] = io::to_json(*r.sparsity);
  return j;
}

namespace {

struct Column {
  std::string name;
  std::function<double(const TrialResult&)> get;
  std::string (*fmt)(double);
};

std::vector<Column> result_columns(const cfg::ExperimentConfig& c) {
  std::vector<Column> cols;
  cols.push_back({"clean_acc", [](const TrialResult& r) { return r.before.clean_accuracy; },
                  io::fixed2});
  for (std::size_t i = 0; i < c.eval.attacks.size(); ++i)
    cols.push_back({std::string(attack::to_string(c.eval.attacks[i])) + "_acc",
                    [i](const TrialResult& r) { return r.before.attacks.at(i).accuracy; },
                    io::fixed2});
  cols.push_back({"near_zero_1e-3", [](const TrialResult& r) { return r.near_zero_1e3; }, io::exact});
  if (c.prune.enabled()) {
    cols.push_back({"gamma", [](const TrialResult& r) { return r.sparsity->gamma; }, io::exact});
    cols.push_back({"sparsity",
                    [](const TrialResult& r) { return r.sparsity->global_sparsity_percent; },
                    io::fixed2});
    cols.push_back({"clean_acc_pruned", [](const TrialResult& r) { return r.after->clean_accuracy; },
                    io::fixed2});
    for (std::size_t i = 0; i < c.eval.attacks.size(); ++i)
      cols.push_back({std::string(attack::to_string(c.eval.attacks[i])) + "_acc_pruned",
                      [i](const TrialResult& r) { return r.after->attacks.at(i).accuracy; },
                      io::fixed2});
  }
  return cols;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

}  // namespace

io::CsvTable results_table(const cfg::ExperimentConfig& c, const std::vector<TrialResult>& trials) {
  const auto cols = result_columns(c);
  io::CsvTable t;
  t.schema = "rsr-results/1";
  t.header = {"trial", "seed", "mode", "lambda"};
  for (const auto& col : cols) t.header.push_back(col.name);
  const std::string mode(train::to_string(c.train.mode));
  const std::string lambda = io::exact(c.train.effective_lambda());
  for (const auto& r : trials) {
    std::vector<std::string> row = {std::to_string(r.trial), std::to_string(r.seed), mode, lambda};
    for (const auto& col : cols) row.push_back(col.fmt(col.get(r)));
    t.rows.push_back(std::move(row));
  }
  std::vector<std::string> mean_row = {"mean", "", mode, lambda};
  std::vector<std::string> std_row = {"std", "", mode, lambda};
  for (const auto& col : cols) {
    std::vector<double> v;
    for (const auto& r : trials) v.push_back(col.get(r));
    const auto [m, s] = mean_std(v);
    mean_row.push_back(col.fmt(m));
    std_row.push_back(col.fmt(s));
  }
  t.rows.push_back(std::move(mean_row));
  t.rows.push_back(std::move(std_row));
  return t;
}

namespace {

void write_trial(const fs::path& dir, const TrialOutput& out) {
  ckpt::save_model(dir / "model.ckpt", out.trained);
  if (out.pruned) ckpt::save(dir / "pruned.ckpt", {*out.pruned, sparse::pack_sparse(*out.pruned)});
  ckpt::write_file(dir / "history.csv", io::to_csv(io::history_table(out.result.history)));
  ckpt::write_file(dir / "history.json", io::dump(io::to_json(out.result.history)));
  ckpt::write_file(dir / "report.json", io::dump(trial_json(out.result)));
}

}  // namespace

ExperimentResult run_experiment(const cfg::ExperimentConfig& c, std::ostream* log) {
  c.validate();
  fs::create_directories(c.output_dir);
  ckpt::write_file(c.output_dir / "config.ini", cfg::to_ini(c));
  const data::DataSplit data = cfg::load_data(c.data);

  ExperimentResult res;
  for (int t = 0; t < c.trials; ++t) {
    const fs::path final_dir = c.output_dir / ("trial_" + std::to_string(t));
    const fs::path partial = c.output_dir / ("trial_" + std::to_string(t) + ".partial");
    try {
      fs::remove_all(partial);
      TrialOutput out = run_trial(c, data, t, [&](const nn::Model& m, const train::EpochRecord& e) {
        ckpt::save_model(partial / ("epoch_" + std::to_string(e.epoch + 1) + ".ckpt"), m);
      });
      write_trial(partial, out);
      fs::remove_all(final_dir);
      fs::rename(partial, final_dir);
      if (log) {
        *log << "trial " << t + 1 << "/" << c.trials << ": clean "
             << io::fixed2(out.result.before.clean_accuracy);
        for (const auto& a : out.result.before.attacks)
          *log << ", " << attack::to_string(a.spec.family) << " " << io::fixed2(a.accuracy);
        if (out.result.after)
          *log << " | pruned to " << io::fixed2(out.result.sparsity->global_sparsity_percent)
               << "%: clean " << io::fixed2(out.result.after->clean_accuracy) << ", attack "
               << io::fixed2(first_attack(*out.result.after));
        *log << "\n";
      }
      res.trials.push_back(std::move(out.result));
    } catch (const std::exception& e) {
      fs::remove_all(partial);
      res.failures.push_back("trial " + std::to_string(t) + ": " + e.what());
      if (log) *log << "trial " << t + 1 << "/" << c.trials << " failed: " << e.what() << "\n";
    }
  }

  res.table = results_table(c, res.trials);
  ckpt::write_file(c.output_dir / "results.csv", io::to_csv(res.table));
  io::json trials = io::json::array();
  for (const auto& r : res.trials) trials.push_back(trial_json(r));
  io::json summary = io::json::object();
  for (const auto& row : res.table.rows)
    if (row[0] == "mean" || row[0] == "std")
      for (std::size_t i = 4; i < row.size(); ++i) summary[row[0]][res.table.header[i]] = row[i];
  const io::json j = {{"schema", "rsr-results/1"},
                      {"name", c.name},
                      {"mode", train::to_string(c.train.mode)},
                      {"trials", trials},
                      {"summary", summary},
                      {"failures", res.failures}};
  ckpt::write_file(c.output_dir / "results.json", io::dump(j));
  std::string failures;
  for (const auto& f : res.failures) failures += f + "\n";
  ckpt::write_file(c.output_dir / "failures.log", failures);
  return res;
}

std::string_view to_string(SweepParam p) {
  switch (p) {
    case SweepParam::gamma: return "gamma";
    case SweepParam::sparsity: return "sparsity";
    case SweepParam::lambda: return "lambda";
    case SweepParam::width: return "width";
  }
  return "?";
}

SweepParam sweep_param_from_string(std::string_view s) {
  for (SweepParam p : {SweepParam::gamma, SweepParam::sparsity, SweepParam::lambda, SweepParam::width})
    if (s == to_string(p)) return p;
  throw Error("unknown sweep parameter '" + std::string(s) +
              "' (expected gamma, sparsity, lambda or width)");
}

SweepResult sweep(const cfg::ExperimentConfig& c, SweepParam param, std::span<const double> values,
                  std::ostream* log) {
  c.validate();
  if (values.empty()) throw Error("sweep: no values given");
  if (!std::is_sorted(values.begin(), values.end()))
    throw Error("sweep: values must be sorted ascending");
  const data::DataSplit data = cfg::load_data(c.data);
  const data::Dataset eval = eval_set(c, data);
  const auto opts = eval_options(c);
  SweepResult res;
  res.param = param;
  const bool prune_sweep = param == SweepParam::gamma || param == SweepParam::sparsity;

  auto score = [&](const nn::Model& m, int t, double v, double gamma,
                   std::span<const attack::AttackSpec> attacks, double near_zero) {
    const auto rep = evaluate(m, eval, attacks, opts);
    SweepPoint p{t, v, rep.clean_accuracy, first_attack(rep),
                 prune::sparsity(m).global_sparsity_percent, gamma, near_zero, ""};
    if (log)
      *log << to_string(param) << " = " << io::exact(v) << " (trial " << t << "): clean "
           << io::fixed2(p.clean_accuracy) << ", attack " << io::fixed2(p.attack_accuracy)
           << ", sparsity " << io::fixed2(p.sparsity_percent) << "%\n";
    res.points.push_back(p);
  };

  auto failed = [&](int t, double v, const std::exception& e) {
    const double nan = std::nan("");
    res.points.push_back({t, v, nan, nan, nan, nan, nan, e.what()});
    if (log) *log << to_string(param) << " = " << io::exact(v) << " (trial " << t
                  << ") failed: " << e.what() << "\n";
  };

  for (int t = 0; t < c.trials; ++t) {
    const std::uint64_t seed = trial_seed(c.seed, t);
    const auto attacks = trial_attacks(c, seed);
    if (prune_sweep) {
      std::optional<nn::Model> trained;
      try {
        trained = train_trial(c, data, eval, seed).model;
      } catch (const std::exception& e) {
        for (double v : values) failed(t, v, e);
        continue;
      }
      const double nz = prune::near_zero_fraction(*trained, 1e-3);
      for (double v : values) {
        try {
          cfg::PruneConfig pc;
          if (param == SweepParam::gamma) pc.gamma = v;
          else pc.target_sparsity = v;
          const prune::PruneResult pr = prune_model(*trained, pc);
          score(pr.model, t, v, pr.report.gamma, attacks, nz);
        } catch (const std::exception& e) {
          failed(t, v, e);
        }
      }
    } else {
      for (double v : values) {
        try {
          cfg::ExperimentConfig cv = c;
          if (param == SweepParam::lambda) cv.train.lambda = v;
          else cv.model.width = v;
          cv.validate();
          nn::Model m = train_trial(cv, data, eval, seed).model;
          const double nz = prune::near_zero_fraction(m, 1e-3);
          double gamma = 0.0;
          if (cv.prune.enabled()) {
            prune::PruneResult pr = prune_model(m, cv.prune);
            gamma = pr.report.gamma;
            m = std::move(pr.model);
          }
          score(m, t, v, gamma, attacks, nz);
        } catch (const std::exception& e) {
          failed(t, v, e);
        }
      }
    }
  }
  return res;
}

io::CsvTable sweep_table(const SweepResult& r) {
  io::CsvTable t;
  t.schema = "rsr-sweep/1";
  t.header = {"trial", std::string(to_string(r.param)), "clean_acc", "attack_acc",
              "sparsity",  "gamma", "near_zero_1e-3", "status"};
  for (const auto& p : r.points) {
    if (!p.error.empty()) {
      t.rows.push_back({std::to_string(p.trial), io::exact(p.value), "", "", "", "", "",
                        "failed: " + p.error});
      continue;
    }
    t.rows.push_back({std::to_string(p.trial), io::exact(p.value), io::fixed2(p.clean_accuracy),
                      io::fixed2(p.attack_accuracy), io::fixed2(p.sparsity_percent),
                      io::exact(p.gamma), io::exact(p.near_zero_1e3), "ok"});
  }
  return t;
}

Histogram weight_histogram(const nn::Model& model, std::size_t bins,
                           std::optional<std::size_t> layer, bool log10_magnitude) {
  if (bins < 2) throw Error("weight_histogram: bins must be >= 2");
  std::vector<std::size_t> ids = model.parametric_layers();
  if (layer) {
    if (std::find(ids.begin(), ids.end(), *layer) == ids.end())
      throw Error("weight_histogram: layer " + std::to_string(*layer) +
                  " is not a conv/dense layer of this model");
    ids = {*layer};
  }
  std::vector<double> v;
  for (std::size_t id : ids)
    for (double w : model.layers[id].weight.data()) {
      if (!log10_magnitude) v.push_back(w);
      else if (w != 0.0) v.push_back(std::log10(std::abs(w)));
    }
  Histogram h;
  h.log10_magnitude = log10_magnitude;
  h.total = v.size();
  h.counts.assign(bins, 0);
  if (v.empty()) return h;
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  h.lo = *mn;
  h.hi = *mx;
  if (h.lo == h.hi) {
    h.lo -= 0.5;
    h.hi += 0.5;
  }
  const double width = h.hi - h.lo;
  for (double x : v) {
    auto b = static_cast<std::size_t>((x - h.lo) / width * static_cast<double>(bins));
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

io::CsvTable histogram_table(const Histogram& h) {
  io::CsvTable t;
  t.schema = h.log10_magnitude ? "rsr-histogram-log10/1" : "rsr-histogram/1";
  t.header = {"bin", "lo", "hi", "count"};
  const double step = h.counts.size() ? (h.hi - h.lo) / static_cast<double>(h.counts.size()) : 0.0;
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double lo = h.lo + step * static_cast<double>(b);
    const double hi = b + 1 == h.counts.size() ? h.hi : h.lo + step * static_cast<double>(b + 1);
    t.rows.push_back({std::to_string(b), io::exact(lo), io::exact(hi), std::to_string(h.counts[b])});
  }
  return t;
}

}  // namespace rsr::exp
