// Command-line front end: rsr <verb> [options]. Run `rsr --help` or
// `rsr <verb> --help` for the options of each verb.

#include <CLI11.hpp>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "rsr/checkpoint.hpp"
#include "rsr/config.hpp"
#include "rsr/experiment.hpp"
#include "rsr/report_io.hpp"
#include "rsr/sparse.hpp"

namespace {

using namespace rsr;
namespace fs = std::filesystem;

std::vector<std::string> overrides;

cfg::ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? cfg::parse_ini("", overrides) : cfg::load_ini(path, overrides);
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error("not a number: '" + item + "'");
    }
  }
  return out;
}

void print_table(const io::CsvTable& t) {
  std::vector<std::size_t> width(t.header.size());
  for (std::size_t i = 0; i < t.header.size(); ++i) width[i] = t.header[i].size();
  for (const auto& r : t.rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i)
      std::cout << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << r[i];
    std::cout << "\n";
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

void print_report(const attack::EvaluationReport& r) {
  std::cout << "samples " << r.samples << ", inference noise " << (r.inference_noise ? "on" : "off")
            << "\nclean accuracy " << io::fixed2(r.clean_accuracy) << "%\n";
  for (const auto& a : r.attacks) {
    std::cout << attack::to_string(a.spec.family) << " (eps " << io::exact(a.spec.epsilon)
              << ", steps " << a.spec.num_steps << ") accuracy " << io::fixed2(a.accuracy) << "%";
    if (a.spec.family == attack::Family::zoo_fd)
      std::cout << ", queries " << a.queries << (a.budget_exhausted ? ", budget exhausted" : "");
    std::cout << "\n";
  }
}

void print_sparsity(const prune::SparsityReport& r) {
  std::cout << "gamma " << io::exact(r.gamma) << ", global sparsity "
            << io::fixed2(r.global_sparsity_percent) << "%\n";
  for (const auto& l : r.per_layer)
    std::cout << "  layer " << l.layer_id << ": " << l.zero_weights << "/" << l.total_weights
              << " zero (" << io::fixed2(l.sparsity_percent) << "%)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust sparse training toolkit: adversarial training with channel-wise noise "
               "injection and lasso, pruning, attacks and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--set", overrides, "Config override section.key=value (repeatable)")
      ->type_name("KEY=VALUE");

  std::string config, model_path, out, source_path, family = "pgd", dir, param, values;
  int trial = 0;
  bool no_noise = false, log_scale = false;
  std::optional<double> gamma, target;
  std::size_t bins = 50;
  std::optional<std::size_t> layer;

  auto* train_cmd = app.add_subcommand("train", "Train one model from a config");
  train_cmd->add_option("-c,--config", config, "INI config")->check(CLI::ExistingFile);
  train_cmd->add_option("-o,--out", out, "Checkpoint to write")->required();
  train_cmd->add_option("--trial", trial, "Trial index (selects the seed)");

  auto* eval_cmd = app.add_subcommand("evaluate", "Clean and attacked accuracy of a checkpoint");
  eval_cmd->add_option("-m,--model", model_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("-c,--config", config, "INI config (data, attacks)")->check(CLI::ExistingFile);
  eval_cmd->add_flag("--no-noise", no_noise, "Disable inference-time noise");
  eval_cmd->add_option("--json", out, "Also write the report as JSON");

  auto* attack_cmd = app.add_subcommand("attack", "Craft adversarial examples and dump them");
  attack_cmd->add_option("-m,--model", model_path, "Target model")->required()->check(CLI::ExistingFile);
  attack_cmd->add_option("-c,--config", config)->check(CLI::ExistingFile);
  attack_cmd->add_option("-f,--family", family, "fgsm, pgd, zoo_fd or transfer");
  attack_cmd->add_option("--source", source_path, "Source model for transfer")->check(CLI::ExistingFile);
  attack_cmd->add_option("-o,--out", out, "Tensor file; a .json sidecar is written next to it")->required();
  attack_cmd->add_flag("--no-noise", no_noise);

  auto* prune_cmd = app.add_subcommand("prune", "Magnitude-prune a checkpoint");
  prune_cmd->add_option("-m,--model", model_path)->required()->check(CLI::ExistingFile);
  auto* g_opt = prune_cmd->add_option("--gamma", gamma, "Absolute threshold");
  prune_cmd->add_option("--sparsity", target, "Target sparsity in percent")->excludes(g_opt);
  prune_cmd->add_option("-o,--out", out, "Pruned checkpoint (with packed sparse weights)")->required();
  prune_cmd->add_option("-c,--config", config, "Score before/after on the config's data")
      ->check(CLI::ExistingFile);

  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep gamma, sparsity, lambda or width");
  sweep_cmd->add_option("-c,--config", config)->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("-p,--param", param)->required();
  sweep_cmd->add_option("-v,--values", values, "Comma-separated values")->required();
  sweep_cmd->add_option("-o,--out", out, "CSV output");

  auto* hist_cmd = app.add_subcommand("histogram", "Histogram of conv/dense weights");
  hist_cmd->add_option("-m,--model", model_path)->required()->check(CLI::ExistingFile);
  hist_cmd->add_option("-b,--bins", bins);
  hist_cmd->add_option("-l,--layer", layer, "Layer index (default: all conv/dense layers)");
  hist_cmd->add_flag("--log", log_scale, "Histogram of log10 |w| over nonzero weights");
  hist_cmd->add_option("-o,--out", out, "CSV output");

  auto* report_cmd = app.add_subcommand("report", "Print the results table of an experiment");
  report_cmd->add_option("-d,--dir", dir)->required()->check(CLI::ExistingDirectory);

  auto* exp_cmd = app.add_subcommand("experiment", "Run all trials of a config and write reports");
  exp_cmd->add_option("-c,--config", config)->required()->check(CLI::ExistingFile);
  exp_cmd->add_option("-o,--out", dir, "Override experiment.output_dir");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const auto c = config_or_default(config);
      const auto data = cfg::load_data(c.data);
      const auto seed = exp::trial_seed(c.seed, trial);
      train::TrainConfig tc = c.train;
      tc.seed = seed;
      tc.attack.seed = seed;
      const data::Dataset monitor = exp::eval_set(c, data);
      const auto res = train::train(exp::initial_model(c, data, seed), data.train, tc, &monitor);
      for (const auto& e : res.history)
        std::cout << "epoch " << e.epoch + 1 << ": loss " << io::exact(e.mean_loss) << ", clean "
                  << io::fixed2(e.clean_accuracy) << "%"
                  << (e.pgd_accuracy ? ", pgd " + io::fixed2(*e.pgd_accuracy) + "%" : "") << "\n";
      ckpt::save_model(out, res.model);
      fs::path hist = fs::path(out).replace_extension(".history.csv");
      ckpt::write_file(hist, io::to_csv(io::history_table(res.history)));
      std::cout << "wrote " << out << " and " << hist.string() << "\n";
    } else if (*eval_cmd) {
      const auto c = config_or_default(config);
      const nn::Model m = ckpt::load_model(model_path);
      const auto d = exp::eval_set(c, cfg::load_data(c.data));
      const auto attacks = c.eval_attacks();
      const auto rep = exp::evaluate(m, d, attacks, {c.eval.noise && !no_noise, c.eval.batch_size});
      print_report(rep);
      if (!out.empty()) ckpt::write_file(out, io::dump(io::to_json(rep)));
    } else if (*attack_cmd) {
      const auto c = config_or_default(config);
      const nn::Model target_model = ckpt::load_model(model_path);
      const auto d = exp::eval_set(c, cfg::load_data(c.data));
      attack::AttackSpec spec = c.train.attack;
      spec.family = attack::family_from_string(family);
      spec.seed = c.seed;
      if (spec.family == attack::Family::fgsm) spec = attack::AttackSpec::fgsm(c.train.attack.epsilon);
      if (spec.family == attack::Family::zoo_fd) {
        spec.num_steps = c.eval.zoo_iterations;
        spec.query_budget = c.eval.zoo_budget;
        spec.coords_per_iter = c.eval.zoo_coords;
      }
      const attack::EvalOptions opts{c.eval.noise && !no_noise, c.eval.batch_size};
      io::json sidecar;
      Tensor adv;
      if (spec.family == attack::Family::transfer) {
        if (source_path.empty()) throw Error("transfer attacks need --source");
        const nn::Model source = ckpt::load_model(source_path);
        attack::AttackSpec crafted = spec;
        crafted.family = attack::Family::pgd;
        adv = attack::generate(source, d.images, d.labels, crafted, opts);
        const auto rep = attack::transfer_attack(source, target_model, d.images, d.labels, spec, opts);
        print_report(rep);
        std::cout << "source white-box accuracy " << io::fixed2(rep.source_accuracy) << "%\n";
        sidecar = io::to_json(rep);
      } else {
        attack::AttackOutcome o;
        adv = attack::generate(target_model, d.images, d.labels, spec, opts, &o);
        o.accuracy = attack::accuracy(target_model, adv, d.labels, opts);
        attack::EvaluationReport rep;
        rep.samples = d.size();
        rep.inference_noise = opts.inference_noise && target_model.noise_enabled();
        rep.clean_accuracy = attack::accuracy(target_model, d.images, d.labels, opts);
        rep.attacks.push_back(o);
        print_report(rep);
        sidecar = io::to_json(rep);
      }
      sidecar["labels"] = d.labels;
      sidecar["shape"] = adv.shape();
      ckpt::save_tensor(out, adv);
      ckpt::write_file(fs::path(out).replace_extension(".json"), io::dump(sidecar));
      std::cout << "wrote " << out << "\n";
    } else if (*prune_cmd) {
      if (!gamma && !target) throw Error("prune needs --gamma or --sparsity");
      const nn::Model m = ckpt::load_model(model_path);
      cfg::PruneConfig pc;
      pc.gamma = gamma;
      pc.target_sparsity = target;
      auto pr = exp::prune_model(m, pc);
      if (!config.empty()) {
        const auto c = config_or_default(config);
        const auto d = exp::eval_set(c, cfg::load_data(c.data));
        const auto attacks = c.eval_attacks();
        const attack::EvalOptions opts{c.eval.noise, c.eval.batch_size};
        const auto before = exp::evaluate(m, d, attacks, opts);
        const auto after = exp::evaluate(pr.model, d, attacks, opts);
        pr.report.clean_acc_before = before.clean_accuracy;
        pr.report.clean_acc_after = after.clean_accuracy;
        if (!attacks.empty()) {
          pr.report.pgd_acc_before = before.attacks.front().accuracy;
          pr.report.pgd_acc_after = after.attacks.front().accuracy;
          std::cout << "clean " << io::fixed2(before.clean_accuracy) << "% -> "
                    << io::fixed2(after.clean_accuracy) << "%, attack "
                    << io::fixed2(before.attacks.front().accuracy) << "% -> "
                    << io::fixed2(after.attacks.front().accuracy) << "%\n";
        }
      }
      print_sparsity(pr.report);
      ckpt::save(out, {pr.model, sparse::pack_sparse(pr.model)});
      ckpt::write_file(fs::path(out).replace_extension(".json"), io::dump(io::to_json(pr.report)));
      std::cout << "wrote " << out << "\n";
    } else if (*sweep_cmd) {
      const auto c = config_or_default(config);
      const auto vals = parse_values(values);
      const auto res = exp::sweep(c, exp::sweep_param_from_string(param), vals, &std::cerr);
      const auto table = exp::sweep_table(res);
      print_table(table);
      if (!out.empty()) ckpt::write_file(out, io::to_csv(table));
    } else if (*hist_cmd) {
      const auto h = exp::weight_histogram(ckpt::load_model(model_path), bins, layer, log_scale);
      const auto table = exp::histogram_table(h);
      if (out.empty()) print_table(table);
      else ckpt::write_file(out, io::to_csv(table));
    } else if (*report_cmd) {
      const auto table = io::parse_csv(ckpt::read_file(fs::path(dir) / "results.csv"));
      std::cout << "schema " << table.schema << "\n";
      print_table(table);
      const std::string failures = ckpt::read_file(fs::path(dir) / "failures.log");
      if (!failures.empty()) std::cout << "\nfailed trials:\n" << failures;
    } else if (*exp_cmd) {
      auto c = config_or_default(config);
      if (!dir.empty()) c.output_dir = dir;
      const auto res = exp::run_experiment(c, &std::cerr);
      print_table(res.table);
      std::cout << "wrote " << c.output_dir.string() << "\n";
      return res.failures.empty() ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
