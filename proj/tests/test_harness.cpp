#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rsr/checkpoint.hpp"
#include "rsr/config.hpp"
#include "rsr/dataset.hpp"
#include "rsr/experiment.hpp"
#include "rsr/pruning.hpp"
#include "rsr/report_io.hpp"
#include "support.hpp"

using namespace rsr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

std::string cifar_records(std::size_t n, unsigned char label_mod = 10) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(static_cast<char>(i % label_mod));
    for (std::size_t j = 0; j < 3072; ++j) s.push_back(static_cast<char>((i + j) % 256));
  }
  return s;
}

const char* kTinyConfig = R"(
[experiment]
name = tiny
trials = 2
seed = 4
[data]
n_train = 48
n_test = 24
[model]
width = 0.25
[train]
mode = rsr
lambda = 1e-3
lr = 0.01
epochs = 1
batch_size = 16
[attack]
steps = 2
[prune]
target_sparsity = 50
[eval]
attacks = fgsm, pgd
)";

}  // namespace

TEST_CASE("synthetic data is deterministic, balanced and in range") {
  data::SyntheticSpec s;
  s.n_train = 200;
  s.n_test = 80;
  s.seed = 9;
  const auto a = data::make_synthetic(s);
  const auto b = data::make_synthetic(s);
  CHECK(a.train.images == b.train.images);
  CHECK(a.test.labels == b.test.labels);
  CHECK(a.train.images.shape() == Shape{200, 1, 12, 12});
  CHECK(a.train.num_classes == 4);
  std::vector<int> counts(4, 0);
  for (int y : a.train.labels) ++counts[static_cast<std::size_t>(y)];
  for (int c : counts) CHECK(c == 50);
  for (double v : a.train.images.data()) CHECK((v >= 0.0 && v <= 1.0));
  s.seed = 10;
  CHECK_FALSE(data::make_synthetic(s).train.images == a.train.images);
  s.n_train = 0;
  CHECK_THROWS_AS(data::make_synthetic(s), Error);
}

TEST_CASE("dataset slicing and validation") {
  const auto d = testing::small_synthetic(40, 8).train;
  const auto s = d.slice(10, 20);
  CHECK(s.size() == 10);
  CHECK(s.labels[0] == d.labels[10]);
  const std::vector<std::size_t> rows{3, 1};
  const auto g = d.gather(rows);
  CHECK(g.images.slice_rows(0, 1) == d.images.slice_rows(3, 4));
  data::Dataset bad = d;
  bad.labels[0] = 7;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("cifar batch reader") {
  TempDir dir("rsr_cifar_unit");
  write_bytes(dir.path / "ok.bin", cifar_records(5));
  const auto d = data::read_cifar10_batch(dir.path / "ok.bin", 5);
  CHECK(d.images.shape() == Shape{5, 3, 32, 32});
  CHECK(d.labels == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(d.images[0] == 0.0);
  CHECK(d.images[1] == 1.0 / 255.0);
  CHECK(d.images[3072] == 1.0 / 255.0);  // second record starts one step later

  std::string truncated = cifar_records(3);
  truncated.resize(truncated.size() - 100);
  write_bytes(dir.path / "short.bin", truncated);
  try {
    data::read_cifar10_batch(dir.path / "short.bin", std::nullopt);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("short.bin") != std::string::npos);
    CHECK(msg.find("offset 6146") != std::string::npos);
  }
  CHECK_THROWS_AS(data::read_cifar10_batch(dir.path / "ok.bin", 6), Error);

  std::string bad_label = cifar_records(2);
  bad_label[3073] = 12;
  write_bytes(dir.path / "label.bin", bad_label);
  CHECK_THROWS_WITH_AS(data::read_cifar10_batch(dir.path / "label.bin", 2),
                       doctest::Contains("offset 3073"), Error);
  CHECK_THROWS_AS(data::load_cifar10(dir.path / "missing"), Error);
}

TEST_CASE("config parsing") {
  const auto c = cfg::parse_ini(kTinyConfig);
  CHECK(c.name == "tiny");
  CHECK(c.trials == 2);
  CHECK(c.train.mode == train::Mode::rsr);
  CHECK(c.train.lambda == 1e-3);
  CHECK(c.train.attack.step_size == c.train.attack.epsilon / 4.0);
  CHECK(c.train.seed == 4);
  CHECK(*c.prune.target_sparsity == 50.0);
  CHECK(c.eval_attacks().size() == 2);
  CHECK(c.eval_attacks()[0].family == attack::Family::fgsm);

  CHECK(cfg::parse_ini(cfg::to_ini(c)).train.lambda == c.train.lambda);
  CHECK(cfg::to_ini(cfg::parse_ini(cfg::to_ini(c))) == cfg::to_ini(c));

  const std::vector<std::string> over{"train.epochs=7", "model.width=0.5"};
  const auto o = cfg::parse_ini(kTinyConfig, over);
  CHECK(o.train.epochs == 7);
  CHECK(o.model.width == 0.5);
  const std::vector<std::string> typo{"train.epoch=7"};
  CHECK_THROWS_AS(cfg::parse_ini(kTinyConfig, typo), Error);
  const std::vector<std::string> malformed{"epochs=7"};
  CHECK_THROWS_AS(cfg::parse_ini(kTinyConfig, malformed), Error);

  CHECK_THROWS_WITH_AS(cfg::parse_ini("[train]\nlearning_rate = 0.1\n"),
                       doctest::Contains("train.learning_rate"), Error);
  CHECK_THROWS_AS(cfg::parse_ini("[trainer]\nlr = 0.1\n"), Error);
  CHECK_THROWS_AS(cfg::parse_ini("[train]\nlr = fast\n"), Error);
  CHECK_THROWS_AS(cfg::parse_ini("[train]\nepochs = 3.5\n"), Error);
  CHECK_THROWS_AS(cfg::parse_ini("[eval]\nnoise = maybe\n"), Error);
  CHECK_THROWS_AS(cfg::parse_ini("[prune]\ngamma = 0.1\ntarget_sparsity = 50\n"), Error);
  CHECK_THROWS_AS(cfg::parse_ini("[data]\nsource = mnist\n"), Error);
}

TEST_CASE("csv round trip and formatting") {
  io::CsvTable t{"demo/1", {"a", "b"}, {{"1", "x,y"}, {"2", "say \"hi\""}, {"3", ""}}};
  const std::string text = io::to_csv(t);
  CHECK(text.rfind("# schema: demo/1\n", 0) == 0);
  CHECK(io::parse_csv(text) == t);
  CHECK(t.column("b") == 1);
  CHECK_THROWS_AS(t.column("c"), Error);
  CHECK(io::fixed2(12.345) == "12.35");
  CHECK(std::stod(io::exact(0.1)) == 0.1);
  CHECK(io::exact(0.1) == "0.1");
  CHECK_THROWS_AS(io::parse_csv("# schema: x\na,b\n1\n"), Error);
}

TEST_CASE("weight histograms") {
  Rng rng(71);
  nn::Model m = nn::make_model("cnn-small", {1, 12, 12}, 4, {{0.5}, {0.25}}, 0.5, 1);
  const auto pruned = prune::prune_threshold(m, prune::gamma_for_target_sparsity(m, 90.0)).model;
  const auto h = exp::weight_histogram(pruned, 21);
  CHECK(h.total == pruned.weight_count());
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}) == h.total);
  const std::size_t peak = *std::max_element(h.counts.begin(), h.counts.end());
  CHECK(static_cast<double>(peak) >= 0.9 * static_cast<double>(h.total));

  const auto h2 = exp::weight_histogram(pruned, 42);
  CHECK(std::accumulate(h2.counts.begin(), h2.counts.end(), std::size_t{0}) == h.total);
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    CHECK(h.counts[b] == h2.counts[2 * b] + h2.counts[2 * b + 1]);

  const auto lg = exp::weight_histogram(pruned, 10, std::nullopt, true);
  CHECK(lg.total < h.total);  // zeros are left out of the log histogram

  const std::size_t first = m.parametric_layers()[0];
  CHECK(exp::weight_histogram(m, 5, first).total == m.layers[first].weight.size());
  CHECK_THROWS_AS(exp::weight_histogram(m, 5, std::size_t{1000}), Error);
  CHECK_THROWS_AS(exp::weight_histogram(m, 1), Error);

  nn::Model flat = m;
  for (std::size_t id : flat.parametric_layers())
    for (double& w : flat.layers[id].weight.data()) w = 0.25;
  const auto hf = exp::weight_histogram(flat, 4);
  CHECK(hf.lo == -0.25);
  CHECK(hf.hi == 0.75);
  CHECK(hf.counts[2] == hf.total);
  CHECK(exp::histogram_table(hf).rows.size() == 4);
  (void)rng;
}

TEST_CASE("experiment runs are reproducible byte for byte") {
  // config.ini records output_dir, so both runs write to the same place
  TempDir a("rsr_exp_a");
  auto c = cfg::parse_ini(kTinyConfig);
  c.output_dir = a.path / "run";
  const std::vector<std::string> files = {"config.ini", "results.csv", "results.json", "failures.log",
                                          "trial_0/model.ckpt", "trial_0/pruned.ckpt",
                                          "trial_0/epoch_1.ckpt", "trial_1/report.json",
                                          "trial_1/history.csv"};
  std::ostringstream log;
  const auto ra = exp::run_experiment(c, &log);
  std::vector<std::string> first;
  for (const auto& f : files) {
    INFO(f);
    REQUIRE(fs::exists(a.path / "run" / f));
    first.push_back(ckpt::read_file(a.path / "run" / f));
  }
  const auto rb = exp::run_experiment(c);
  CHECK(ra.failures.empty());
  CHECK(ra.trials.size() == 2);
  CHECK(ra.table == rb.table);
  CHECK(log.str().find("trial 1") != std::string::npos);
  for (std::size_t i = 0; i < files.size(); ++i) {
    INFO(files[i]);
    CHECK(ckpt::read_file(a.path / "run" / files[i]) == first[i]);
  }
  const auto table = io::parse_csv(ckpt::read_file(a.path / "run" / "results.csv"));
  CHECK(table.schema == "rsr-results/1");
  CHECK(table.rows.size() == 4);  // two trials, mean, std
  CHECK(table.rows[2][0] == "mean");
  CHECK(table.column("fgsm_acc_pruned") > table.column("sparsity"));
  const auto pruned = ckpt::load(a.path / "run" / "trial_0" / "pruned.ckpt");
  CHECK(pruned.packed.has_value());
  CHECK(prune::sparsity(pruned.model).global_sparsity_percent >= 50.0);
}

TEST_CASE("sweeps") {
  auto c = cfg::parse_ini(kTinyConfig);
  c.trials = 1;
  c.output_dir = fs::temp_directory_path() / "rsr_unused";
  const std::vector<double> values{0.0, 50.0, 90.0};
  const auto r = exp::sweep(c, exp::SweepParam::sparsity, values);
  REQUIRE(r.points.size() == 3);
  CHECK(r.points[0].sparsity_percent == 0.0);
  CHECK(r.points[2].sparsity_percent >= 90.0);
  CHECK(r.points[1].gamma <= r.points[2].gamma);
  const auto t = exp::sweep_table(r);
  CHECK(t.schema == "rsr-sweep/1");
  CHECK(t.rows.size() == 3);
  const std::vector<double> unsorted{50.0, 0.0};
  CHECK_THROWS_AS(exp::sweep(c, exp::SweepParam::sparsity, unsorted), Error);
  CHECK_THROWS_AS(exp::sweep_param_from_string("depth"), Error);
  // a value that cannot be applied fails its row only
  const std::vector<double> bad{50.0, 100.0};
  const auto rb = exp::sweep(c, exp::SweepParam::sparsity, bad);
  CHECK(rb.points[0].error.empty());
  CHECK_FALSE(rb.points[1].error.empty());
  CHECK(std::isnan(rb.points[1].clean_accuracy));
}
