#include "rsr/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace rsr::cfg {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw Error("config: " + key + " = '" + raw + "' is not a valid number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error("config: " + key + " = '" + raw + "' is not a boolean");
}

// Reads keys from one section and remembers which were consumed.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (!tree_) return std::nullopt;
    auto it = tree_->find(key);
    if (it == tree_->not_found()) return std::nullopt;
    return trim(it->second.data());
  }
  std::string full(const std::string& key) const { return name_ + "." + key; }

  void str(const std::string& key, std::string& out) {
    if (auto v = raw(key)) out = *v;
  }
  template <typename T>
  void num(const std::string& key, T& out) {
    if (auto v = raw(key)) out = parse_number<T>(full(key), *v);
  }
  template <typename T>
  void opt_num(const std::string& key, std::optional<T>& out) {
    if (auto v = raw(key); v && !v->empty()) out = parse_number<T>(full(key), *v);
  }
  void boolean(const std::string& key, bool& out) {
    if (auto v = raw(key)) out = parse_bool(full(key), *v);
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, child] : *tree_)
      if (!used_.count(key)) throw Error("config: unknown key '" + full(key) + "'");
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<attack::Family> parse_attacks(const std::string& raw) {
  std::vector<attack::Family> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto f = attack::family_from_string(item);
    if (f == attack::Family::transfer)
      throw Error("config: eval.attacks cannot list transfer (it needs a source model)");
    out.push_back(f);
  }
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (trials < 1) throw Error("config: experiment.trials must be >= 1");
  if (data.source != "synthetic" && data.source != "cifar10")
    throw Error("config: data.source must be synthetic or cifar10, got '" + data.source + "'");
  if (data.source == "cifar10" && data.cifar_dir.empty())
    throw Error("config: data.cifar_dir is required for cifar10");
  if (data.source == "synthetic" && data.synthetic.n_train == 0)
    throw Error("config: data.n_train must be > 0");
  if (!(model.width > 0.0)) throw Error("config: model.width must be > 0");
  if (prune.target_sparsity && prune.gamma)
    throw Error("config: set prune.target_sparsity or prune.gamma, not both");
  if (prune.target_sparsity && !(*prune.target_sparsity >= 0.0 && *prune.target_sparsity < 100.0))
    throw Error("config: prune.target_sparsity must lie in [0, 100)");
  if (prune.gamma && !(*prune.gamma >= 0.0)) throw Error("config: prune.gamma must be >= 0");
  if (eval.batch_size == 0) throw Error("config: eval.batch_size must be > 0");
  train.validate();
  for (const auto& s : eval_attacks()) s.validate();
}

std::vector<attack::AttackSpec> ExperimentConfig::eval_attacks() const {
  std::vector<attack::AttackSpec> out;
  for (attack::Family f : eval.attacks) {
    attack::AttackSpec s = train.attack;
    s.family = f;
    s.seed = seed;
    if (f == attack::Family::fgsm) s = attack::AttackSpec::fgsm(train.attack.epsilon);
    if (f == attack::Family::zoo_fd) {
      s.num_steps = eval.zoo_iterations;
      s.query_budget = eval.zoo_budget;
      s.coords_per_iter = eval.zoo_coords;
      s.random_start = false;
    }
    out.push_back(s);
  }
  return out;
}

ExperimentConfig parse_ini(const std::string& text, std::span<const std::string> overrides) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot == 0 || dot + 1 >= eq ||
        o.find('.', dot + 1) < eq)
      throw Error("config: override '" + o + "' is not of the form section.key=value");
    tree.put(o.substr(0, eq), o.substr(eq + 1));
  }
  static const std::set<std::string> known = {"experiment", "data", "model", "train",
                                              "attack",     "prune", "eval"};
  for (const auto& [name, child] : tree) {
    if (!known.count(name)) throw Error("config: unknown section [" + name + "]");
    if (!child.data().empty()) throw Error("config: key '" + name + "' outside any section");
  }
  auto section = [&](const std::string& name) {
    auto it = tree.find(name);
    return Section(it == tree.not_found() ? nullptr : &it->second, name);
  };

  ExperimentConfig c;
  {
    Section s = section("experiment");
    s.str("name", c.name);
    s.num("trials", c.trials);
    s.num("seed", c.seed);
    std::string out = c.output_dir.string();
    s.str("output_dir", out);
    c.output_dir = out;
    s.reject_unknown();
  }
  {
    Section s = section("data");
    s.str("source", c.data.source);
    std::string dir = c.data.cifar_dir.string();
    s.str("cifar_dir", dir);
    c.data.cifar_dir = dir;
    s.num("n_train", c.data.synthetic.n_train);
    s.num("n_test", c.data.synthetic.n_test);
    s.num("image_size", c.data.synthetic.image_size);
    s.num("noise_std", c.data.synthetic.noise_std);
    s.num("distractors", c.data.synthetic.distractors);
    s.num("seed", c.data.synthetic.seed);
    s.opt_num("max_train", c.data.max_train);
    s.opt_num("max_test", c.data.max_test);
    s.num("eval_samples", c.data.eval_samples);
    s.reject_unknown();
  }
  {
    Section s = section("model");
    s.str("arch", c.model.arch);
    s.num("width", c.model.width);
    s.reject_unknown();
  }
  {
    Section s = section("train");
    if (auto m = s.raw("mode")) c.train.mode = train::mode_from_string(*m);
    s.num("a", c.train.a);
    s.num("lambda", c.train.lambda);
    s.num("lr", c.train.lr);
    s.num("momentum", c.train.momentum);
    s.num("epochs", c.train.epochs);
    s.num("batch_size", c.train.batch_size);
    s.num("lr_decay_every", c.train.lr_decay_every);
    s.num("lr_decay", c.train.lr_decay);
    s.num("history_samples", c.train.history_samples);
    s.reject_unknown();
  }
  {
    Section s = section("attack");
    auto& a = c.train.attack;
    s.num("epsilon", a.epsilon);
    a.step_size = a.epsilon / 4.0;
    s.num("step_size", a.step_size);
    s.num("steps", a.num_steps);
    s.boolean("random_start", a.random_start);
    s.reject_unknown();
  }
  {
    Section s = section("prune");
    s.opt_num("target_sparsity", c.prune.target_sparsity);
    s.opt_num("gamma", c.prune.gamma);
    s.reject_unknown();
  }
  {
    Section s = section("eval");
    s.boolean("noise", c.eval.noise);
    s.num("batch_size", c.eval.batch_size);
    if (auto a = s.raw("attacks")) c.eval.attacks = parse_attacks(*a);
    s.num("zoo_iterations", c.eval.zoo_iterations);
    s.num("zoo_budget", c.eval.zoo_budget);
    s.num("zoo_coords", c.eval.zoo_coords);
    s.reject_unknown();
  }
  c.train.seed = c.seed;
  c.train.attack.seed = c.seed;
  c.validate();
  return c;
}

ExperimentConfig load_ini(const std::filesystem::path& path,
                          std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_ini(ss.str(), overrides);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "[experiment]\nname = " << c.name << "\ntrials = " << c.trials << "\nseed = " << c.seed
    << "\noutput_dir = " << c.output_dir.string() << "\n\n";
  const auto& sy = c.data.synthetic;
  o << "[data]\nsource = " << c.data.source << "\ncifar_dir = " << c.data.cifar_dir.string()
    << "\nn_train = " << sy.n_train << "\nn_test = " << sy.n_test
    << "\nimage_size = " << sy.image_size << "\nnoise_std = " << fmt(sy.noise_std)
    << "\ndistractors = " << sy.distractors << "\nseed = " << sy.seed << "\nmax_train = "
    << (c.data.max_train ? std::to_string(*c.data.max_train) : "") << "\nmax_test = "
    << (c.data.max_test ? std::to_string(*c.data.max_test) : "")
    << "\neval_samples = " << c.data.eval_samples << "\n\n";
  o << "[model]\narch = " << c.model.arch << "\nwidth = " << fmt(c.model.width) << "\n\n";
  const auto& t = c.train;
  o << "[train]\nmode = " << train::to_string(t.mode) << "\na = " << fmt(t.a)
    << "\nlambda = " << fmt(t.lambda) << "\nlr = " << fmt(t.lr) << "\nmomentum = " << fmt(t.momentum)
    << "\nepochs = " << t.epochs << "\nbatch_size = " << t.batch_size
    << "\nlr_decay_every = " << t.lr_decay_every << "\nlr_decay = " << fmt(t.lr_decay)
    << "\nhistory_samples = " << t.history_samples << "\n\n";
  o << "[attack]\nepsilon = " << fmt(t.attack.epsilon) << "\nstep_size = " << fmt(t.attack.step_size)
    << "\nsteps = " << t.attack.num_steps
    << "\nrandom_start = " << (t.attack.random_start ? "true" : "false") << "\n\n";
  o << "[prune]\n";
  if (c.prune.target_sparsity) o << "target_sparsity = " << fmt(*c.prune.target_sparsity) << "\n";
  if (c.prune.gamma) o << "gamma = " << fmt(*c.prune.gamma) << "\n";
  o << "\n[eval]\nnoise = " << (c.eval.noise ? "true" : "false")
    << "\nbatch_size = " << c.eval.batch_size << "\nattacks = ";
  for (std::size_t i = 0; i < c.eval.attacks.size(); ++i)
    o << (i ? "," : "") << attack::to_string(c.eval.attacks[i]);
  o << "\nzoo_iterations = " << c.eval.zoo_iterations << "\nzoo_budget = " << c.eval.zoo_budget
    << "\nzoo_coords = " << c.eval.zoo_coords << "\n";
  return o.str();
}

data::DataSplit load_data(const DataConfig& d) {
  if (d.source == "cifar10") return data::load_cifar10(d.cifar_dir, d.max_train, d.max_test);
  if (d.source == "synthetic") return data::make_synthetic(d.synthetic);
  throw Error("unknown data source '" + d.source + "'");
}

}  // namespace rsr::cfg
