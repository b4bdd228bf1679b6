#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "modnet/config_file.hpp"
#include "modnet/harness.hpp"
#include "modnet/manifest.hpp"

using namespace modnet;
using namespace modnet::vqa;

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const char* name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

// tiny but real dataset directory for fast runs
std::string tiny_extract_dir(const char* name, int n_train = 84, uint64_t seed = 5) {
  DataGenSpec spec;
  spec.task = "extract-single";
  spec.seed = seed;
  spec.n_train = n_train;
  spec.n_val = 84;
  spec.n_ood = 84;
  spec.r_train = 2;
  spec.r_test = 2;
  std::string dir = fresh_dir(name);
  write_dataset_dir(spec, dir);
  return dir;
}

TrainConfig tiny_config(const std::string& data_dir, int steps, int channels = 6) {
  TrainConfig cfg;
  cfg.data_dir = data_dir;
  cfg.steps = steps;
  cfg.batch_size = 16;
  cfg.lr = 1e-3;
  cfg.eval_every = 0;
  cfg.max_eval_examples = 0;
  cfg.library = LibraryConfig::parse_name("all-all-all");
  cfg.library.channels = channels;
  cfg.library.embedding_dim = channels;
  return cfg;
}

}  // namespace

TEST_CASE("config files parse typed values and flag bad lines") {
  auto cfg = ConfigFile::parse_string(
      "# comment\n"
      "library.name = group-all-all\n"
      "train.lr = 1e-3\n"
      "train.steps = 500\n"
      "sweep.r_values = 1, 2, 5\n"
      "train.resume = true\n",
      "test.cfg");
  CHECK(cfg.get_str("library.name") == "group-all-all");
  CHECK(cfg.get_double("train.lr", 0) == 1e-3);
  CHECK(cfg.get_int("train.steps", 0) == 500);
  CHECK(cfg.get_int_list("sweep.r_values") == std::vector<int>{1, 2, 5});
  CHECK(cfg.get_bool("train.resume", false));
  CHECK(cfg.get_str("missing", "fallback") == "fallback");
  CHECK_NOTHROW(cfg.ensure_all_consumed());

  CHECK_THROWS_WITH_AS((void)ConfigFile::parse_string("a = 1\nbroken line\n", "x.cfg"),
                       doctest::Contains("x.cfg:2"), ParseError);
  auto dup = "k = 1\nk = 2\n";
  CHECK_THROWS_AS((void)ConfigFile::parse_string(dup, "d.cfg"), ParseError);
  auto bad = ConfigFile::parse_string("n = twelve\n", "b.cfg");
  CHECK_THROWS_WITH_AS((void)bad.get_int("n", 0), doctest::Contains("b.cfg:1"), ConfigError);
  auto unused = ConfigFile::parse_string("typo.key = 1\n", "u.cfg");
  CHECK_THROWS_AS(unused.ensure_all_consumed(), ConfigError);
}

TEST_CASE("dataset directories are reproducible byte-for-byte") {
  DataGenSpec spec;
  spec.task = "extract-single";
  spec.seed = 7;
  spec.n_train = spec.n_val = spec.n_ood = 84;
  spec.r_train = spec.r_test = 2;
  std::string a = fresh_dir("modnet_dgen_a");
  std::string b = fresh_dir("modnet_dgen_b");
  auto ma = write_dataset_dir(spec, a);
  auto mb = write_dataset_dir(spec, b);
  for (const char* f : {"train.bin", "val.bin", "ood.bin"}) {
    CHECK(ma["run"]["artifact_hashes"][f] == mb["run"]["artifact_hashes"][f]);
    CHECK(sha256_file((fs::path(a) / f).string()) == ma["run"]["artifact_hashes"][f].get<std::string>());
  }
  auto dd = DataDir::open(a);
  CHECK(dd.registry.subtasks.size() == 21);
  CHECK(dd.manifest["task"] == "extract-single");
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("the ood shard is byte-identical across r values of a data run") {
  DataGenSpec spec;
  spec.task = "extract-single";
  spec.seed = 11;
  spec.n_train = spec.n_val = spec.n_ood = 84;
  spec.r_test = 2;
  std::string h1, h2;
  for (int r : {1, 3}) {
    spec.r_train = r;
    std::string dir = fresh_dir(r == 1 ? "modnet_dr_a" : "modnet_dr_b");
    auto m = write_dataset_dir(spec, dir);
    (r == 1 ? h1 : h2) = m["run"]["artifact_hashes"]["ood.bin"].get<std::string>();
    fs::remove_all(dir);
  }
  CHECK(h1 == h2);
}

TEST_CASE("evaluate: constant-answer model scores exactly one half on a balanced set") {
  std::string dir = tiny_extract_dir("modnet_eval_const");
  auto data = DataDir::open(dir);
  DatasetFile val(data.val_path);

  LibraryConfig lc = LibraryConfig::parse_name("all-all-all");
  lc.channels = 6;
  lc.embedding_dim = 6;
  auto lib = build_library<float>(lc, data.registry, 3);
  // force the final linear layer to a constant verdict
  for (auto& v : lib.classifiers[0].at("fc2.weight")->value) v = 0.0f;
  lib.classifiers[0].at("fc2.bias")->value = {5.0f, 0.0f};

  auto res = evaluate(lib, data.registry, val, 64);
  CHECK(res.accuracy == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(res.total == val.size());
  fs::remove_all(dir);
}

TEST_CASE("evaluate: oracle logits give accuracy one; overall equals weighted mean") {
  // hand-written dataset where the answer is constant per question, plus a
  // per-sub-task classifier whose bias encodes that answer
  std::string dir = fresh_dir("modnet_eval_oracle");
  SubtaskRegistry reg;
  reg.groups = {"g"};
  reg.subtasks = {"alpha", "beta"};
  reg.group_map = {0, 0};

  {
    DatasetWriter w((fs::path(dir) / "data.bin").string());
    Rng rng(3);
    for (int i = 0; i < 12; ++i) {
      Example e;
      e.image_size = 28;
      e.images.emplace_back(3 * 28 * 28);
      for (auto& v : e.images[0]) v = static_cast<float>(rng.uniform(0, 1));
      e.layout = i % 3 == 0 ? "alpha" : "beta";  // 4 alpha, 8 beta
      e.label = e.layout == "alpha" ? 1 : 0;
      w.append(e);
    }
    w.close();
  }
  DatasetFile data((fs::path(dir) / "data.bin").string());

  LibraryConfig lc;
  lc.channels = 6;
  lc.embedding_dim = 6;
  lc.classifier = Modularity::SubTask;
  auto lib = build_library<float>(lc, reg, 9);
  for (int k = 0; k < 2; ++k) {
    for (auto& v : lib.classifiers[static_cast<size_t>(k)].at("fc2.weight")->value) v = 0.0f;
    lib.classifiers[static_cast<size_t>(k)].at("fc2.bias")->value =
        k == 0 ? std::vector<float>{0.0f, 5.0f} : std::vector<float>{5.0f, 0.0f};
  }
  auto res = evaluate(lib, reg, data, 8);
  CHECK(res.accuracy == 1.0);

  // weighted-mean identity on an imperfect model
  auto lib2 = build_library<float>(lc, reg, 10);
  auto res2 = evaluate(lib2, reg, data, 8);
  double weighted = 0;
  int total = 0;
  for (auto& [q, acc] : res2.per_question) {
    weighted += acc * res2.counts.at(q);
    total += res2.counts.at(q);
  }
  CHECK(total == res2.total);
  CHECK(res2.accuracy == doctest::Approx(weighted / total).epsilon(1e-12));
  fs::remove_all(dir);
}

TEST_CASE("train: zero steps yields initial-model metrics near chance") {
  std::string dir = tiny_extract_dir("modnet_train0", 84, 21);
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    auto cfg = tiny_config(dir, 0);
    cfg.model_seed = seed;
    std::string out = fresh_dir("modnet_train0_out");
    auto res = train_run(cfg, out);
    CHECK(res.loss_curve.empty());
    CHECK(res.final_val_acc >= 0.45);
    CHECK(res.final_val_acc <= 0.55);
    fs::remove_all(out);
  }
  fs::remove_all(dir);
}

TEST_CASE("train: same seed reproduces loss curves and checkpoints bit-for-bit") {
  std::string dir = tiny_extract_dir("modnet_train_repro");
  auto cfg = tiny_config(dir, 12);
  std::string out1 = fresh_dir("modnet_repro_1");
  std::string out2 = fresh_dir("modnet_repro_2");
  auto r1 = train_run(cfg, out1);
  auto r2 = train_run(cfg, out2);
  CHECK(r1.loss_curve == r2.loss_curve);
  CHECK(sha256_file(r1.checkpoint_path) == sha256_file(r2.checkpoint_path));

  auto cfg3 = cfg;
  cfg3.model_seed = 99;
  std::string out3 = fresh_dir("modnet_repro_3");
  auto r3 = train_run(cfg3, out3);
  CHECK(r1.loss_curve != r3.loss_curve);
  for (auto& d : {out1, out2, out3}) fs::remove_all(d);
  fs::remove_all(dir);
}

TEST_CASE("train: loss falls on a learnable toy problem and the model beats chance") {
  std::string dir = tiny_extract_dir("modnet_train_learn", 420, 31);
  auto cfg = tiny_config(dir, 260, 8);
  cfg.batch_size = 32;
  cfg.eval_every = 130;
  std::string out = fresh_dir("modnet_learn_out");
  auto res = train_run(cfg, out);
  REQUIRE(res.loss_curve.size() == 260);
  double head = 0, tail = 0;
  for (int i = 0; i < 40; ++i) {
    head += res.loss_curve[static_cast<size_t>(i)];
    tail += res.loss_curve[res.loss_curve.size() - 1 - static_cast<size_t>(i)];
  }
  CHECK(tail / 40 < head / 40 - 0.02);
  CHECK(res.final_val_acc > 0.55);
  CHECK(res.val_curve.size() == 2);  // one periodic point + the final one
  CHECK(res.loss_trend_ok);

  // checkpoint reload reproduces evaluation
  auto direct = evaluate_checkpoint(res.checkpoint_path, DataDir::open(dir).val_path);
  CHECK(direct.accuracy == doctest::Approx(res.final_val_acc).epsilon(1e-12));
  fs::remove_all(out);
  fs::remove_all(dir);
}

TEST_CASE("selection is a pure function of in-distribution accuracy") {
  CHECK(select_best({0.5, 0.9, 0.7}) == 1);
  CHECK(select_best({0.5}) == 0);
  CHECK(select_best({0.7, 0.7}) == 0);  // ties keep the first
  CHECK_THROWS_AS((void)select_best({}), UsageError);

  // perturbation test: permuting OOD accuracies cannot move the selection,
  // because the selector never sees them
  std::vector<RunResult> runs(3);
  runs[0].final_val_acc = 0.6;
  runs[1].final_val_acc = 0.9;
  runs[2].final_val_acc = 0.8;
  runs[0].ood_acc = 0.99;
  runs[1].ood_acc = 0.01;
  runs[2].ood_acc = 0.5;
  std::vector<double> vals;
  for (auto& r : runs) vals.push_back(r.final_val_acc);
  int before = select_best(vals);
  std::swap(runs[0].ood_acc, runs[1].ood_acc);
  std::swap(runs[1].ood_acc, runs[2].ood_acc);
  std::vector<double> vals_after;
  for (auto& r : runs) vals_after.push_back(r.final_val_acc);
  CHECK(select_best(vals_after) == before);
}

TEST_CASE("grid search trains each candidate and marks one selected") {
  std::string dir = tiny_extract_dir("modnet_grid");
  auto cfg = tiny_config(dir, 6);
  std::string out = fresh_dir("modnet_grid_out");
  auto grid = grid_search(cfg, {1e-3, 1e-2}, out);
  REQUIRE(grid.runs.size() == 2);
  CHECK(grid.selected >= 0);
  CHECK(grid.selected < 2);
  double best = std::max(grid.runs[0].final_val_acc, grid.runs[1].final_val_acc);
  CHECK(grid.runs[static_cast<size_t>(grid.selected)].final_val_acc == best);

  auto single = grid_search(cfg, {1e-3}, fresh_dir("modnet_grid_single"));
  CHECK(single.selected == 0);
  fs::remove_all(out);
  fs::remove_all(dir);
}

TEST_CASE("report files round-trip and merge") {
  std::vector<SweepCell> cells;
  for (int r : {1, 2}) {
    for (const char* lib : {"all-all-all", "group-all-all"}) {
      SweepCell c;
      c.task = "extract-single";
      c.library = lib;
      c.r = r;
      c.realized_pct = 3.1 * r;
      c.seed = 7;
      c.lr = 1e-3;
      c.id_val_acc = 0.9;
      c.ood_acc = 0.5 + 0.1 * r;
      c.selected = true;
      c.per_question_ood = {{"green", 0.5}, {"cat_2", 0.75}};
      cells.push_back(c);
    }
  }
  std::string dir = fresh_dir("modnet_report");
  write_report(cells, dir);
  for (const char* f : {"results.csv", "results.json", "breakdown.csv", "plotdata.json", "ood_accuracy.svg"})
    CHECK(fs::exists(fs::path(dir) / f));
  auto back = read_results_csv((fs::path(dir) / "results.csv").string());
  REQUIRE(back.size() == cells.size());
  for (size_t i = 0; i < cells.size(); ++i) {
    CHECK(back[i].library == cells[i].library);
    CHECK(back[i].r == cells[i].r);
    CHECK(back[i].ood_acc == doctest::Approx(cells[i].ood_acc).epsilon(1e-9));
    CHECK(back[i].selected == cells[i].selected);
  }
  fs::remove_all(dir);
}

TEST_CASE("one-cell sweep produces the full report and resume skips verified cells") {
  SweepConfig sweep;
  sweep.data.task = "extract-single";
  sweep.data.seed = 13;
  sweep.data.n_train = sweep.data.n_val = sweep.data.n_ood = 84;
  sweep.data.r_test = 2;
  sweep.r_values = {1};
  sweep.libraries = {"all-all-all"};
  sweep.lr_grid = {1e-3};
  sweep.model_seeds = {5};
  sweep.base = tiny_config("", 6);

  std::string out = fresh_dir("modnet_sweep");
  auto res = run_data_run(sweep, out);
  CHECK(res.failures.empty());
  REQUIRE(res.cells.size() == 1);
  CHECK(res.cells[0].selected);
  CHECK(res.cells[0].realized_pct > 0);
  auto rows = read_results_csv((fs::path(out) / "results.csv").string());
  CHECK(rows.size() == 1);

  auto before = fs::last_write_time(fs::path(out) / "r1" / "all-all-all" / "seed5" / "cell.json");
  auto res2 = run_data_run(sweep, out, /*resume=*/true);
  CHECK(res2.cells.size() == 1);
  CHECK(res2.cells[0].ood_acc == doctest::Approx(res.cells[0].ood_acc).epsilon(1e-9));
  auto after = fs::last_write_time(fs::path(out) / "r1" / "all-all-all" / "seed5" / "cell.json");
  CHECK(before == after);  // cell was not retrained
  fs::remove_all(out);
}
