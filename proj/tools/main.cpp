// modnet command line: dataset generation, training, evaluation, sweeps and
// report merging for modular-network experiments. All randomness flows from
// explicit --seed flags / config keys; MODNET_THREADS caps parallelism.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "modnet/config_file.hpp"
#include "modnet/gradcheck.hpp"
#include "modnet/harness.hpp"
#include "modnet/manifest.hpp"

namespace fs = std::filesystem;
using namespace modnet;

namespace {

std::string join_args(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i) out += ' ';
    out += argv[i];
  }
  return out;
}

// dataset size presets; train/steps presets live in config files
void apply_profile(const std::string& profile, const std::string& task, vqa::DataGenSpec& spec) {
  bool desk = profile != "paper";
  if (task == "sqoop") {
    spec.n_train = desk ? 20160 : 200000;
    spec.n_val = desk ? 4800 : 40000;
    spec.n_ood = desk ? 4800 : 40000;
  } else if (task == "extract-single" || task == "extract-multi") {
    spec.n_train = desk ? 20160 : 210000;
    spec.n_val = desk ? 4200 : 42000;
    spec.n_ood = desk ? 4200 : 42000;
  } else {
    spec.n_train = desk ? 20160 : 210000;
    spec.n_val = desk ? 4800 : 42000;
    spec.n_ood = desk ? 4800 : 42000;
  }
}

int cmd_gen_data(const std::string& command_line, const std::string& task, const std::string& out,
                 vqa::DataGenSpec spec, const std::string& profile) {
  spec.task = task;
  if (spec.n_train == 0) apply_profile(profile, task, spec);
  auto manifest = vqa::write_dataset_dir(spec, out, command_line);
  std::cout << "wrote dataset '" << out << "' (" << manifest["counts"]["train"] << " train / "
            << manifest["counts"]["val"] << " val / " << manifest["counts"]["ood"] << " ood examples)\n";
  return 0;
}

int cmd_train(const std::string& command_line, const std::string& config_path, const std::string& out,
              bool dry_run) {
  auto file = ConfigFile::parse_file(config_path);
  TrainConfig cfg = parse_train_config(file);
  if (dry_run) {
    std::cout << cfg.to_json().dump(2) << "\n";
    return 0;
  }
  if (out.empty()) throw ConfigError("train: --out is required (unless --dry-run)");
  ManifestBuilder mb(command_line);
  mb.set_config(cfg.to_json());
  mb.set_seeds({{"data_seed", cfg.data_seed}, {"model_seed", cfg.model_seed}});
  mb.add_input(config_path);
  auto data = vqa::DataDir::open(cfg.data_dir);
  for (auto& p : {data.train_path, data.val_path, data.ood_path}) mb.add_input(p);

  auto result = train_run(cfg, out);
  mb.add_artifact((fs::path(out) / "result.json").string());
  mb.add_artifact(result.checkpoint_path);
  mb.finish(out);
  std::cout << "final in-distribution validation accuracy " << result.final_val_acc
            << ", ood accuracy " << result.ood_acc << " (wall " << result.wall_seconds << "s)\n"
            << "run directory: " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& command_line, const std::string& checkpoint, const std::string& data,
             const std::string& split, const std::string& out) {
  std::string dataset_path = data;
  if (fs::is_directory(data)) {
    auto dd = vqa::DataDir::open(data);
    if (split == "train") dataset_path = dd.train_path;
    else if (split == "val") dataset_path = dd.val_path;
    else if (split == "ood") dataset_path = dd.ood_path;
    else throw ConfigError("eval: --split must be train, val or ood, got '" + split + "'");
  }
  auto res = evaluate_checkpoint(checkpoint, dataset_path);
  nlohmann::json j;
  j["accuracy"] = res.accuracy;
  j["examples"] = res.total;
  j["per_question"] = res.per_question;
  j["per_question_counts"] = res.counts;
  std::cout << "accuracy " << res.accuracy << " over " << res.total << " examples\n";
  if (!out.empty()) {
    ManifestBuilder mb(command_line);
    mb.add_input(checkpoint);
    mb.add_input(dataset_path);
    fs::create_directories(out);
    std::string path = (fs::path(out) / "eval.json").string();
    std::ofstream f(path, std::ios::trunc);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("cannot write '" + path + "'");
    f.close();
    mb.add_artifact(path);
    mb.finish(out);
  }
  return 0;
}

int cmd_sweep(const std::string& command_line, const std::string& config_path, const std::string& out,
              bool resume) {
  auto file = ConfigFile::parse_file(config_path);
  SweepConfig sweep = parse_sweep_config(file);
  if (sweep.data.n_train == 0) apply_profile("desk", sweep.data.task, sweep.data);
  ManifestBuilder mb(command_line);
  mb.add_input(config_path);
  mb.set_seeds({{"data_seed", sweep.data.seed}, {"model_seeds", sweep.model_seeds}});

  auto result = run_data_run(sweep, out, resume);
  for (auto& f : result.failures) mb.add_failure(f);
  for (const char* f : {"results.csv", "results.json", "breakdown.csv", "plotdata.json"})
    mb.add_artifact((fs::path(out) / f).string());
  mb.finish(out);
  std::cout << "sweep complete: " << result.cells.size() << " rows, " << result.failures.size()
            << " failed cells (" << out << ")\n";
  for (auto& f : result.failures) std::cerr << "  failed: " << f << "\n";
  return result.failures.empty() ? 0 : 3;
}

int cmd_report(const std::string& command_line, const std::vector<std::string>& dirs,
               const std::string& out) {
  std::vector<SweepCell> merged;
  for (auto& dir : dirs) {
    std::string csv = (fs::path(dir) / "results.csv").string();
    try {
      auto cells = read_results_csv(csv);
      merged.insert(merged.end(), cells.begin(), cells.end());
    } catch (const Error& e) {
      throw ConfigError("report: directory '" + dir + "' is not a compatible sweep output: " + e.what());
    }
  }
  write_report(merged, out);
  ManifestBuilder mb(command_line);
  for (auto& dir : dirs) mb.add_input((fs::path(dir) / "results.csv").string());
  for (const char* f : {"results.csv", "results.json", "breakdown.csv", "plotdata.json"})
    mb.add_artifact((fs::path(out) / f).string());
  mb.finish(out);
  std::cout << "merged " << merged.size() << " rows from " << dirs.size() << " directories into " << out
            << "\n";
  return 0;
}

int cmd_selftest() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::cout << (ok ? "[pass] " : "[FAIL] ") << name << "\n";
    failures += ok ? 0 : 1;
  };

  {
    Rng rng(1);
    auto x = Tensor<double>::create({2, 3, 6, 6});
    for (auto& v : x->value) v = rng.uniform(-1, 1);
    auto w = Tensor<double>::create({4, 3, 3, 3}, true);
    for (auto& v : w->value) v = rng.uniform(-0.4, 0.4);
    auto report = grad_check([&] { return sum(relu(conv2d(x, w, TensorPtr<double>(), 1, 1))); },
                             {{"w", w}}, 1e-4, 1e-6);
    check("conv2d gradients vs central differences", report.ok());
  }
  {
    SubtaskRegistry reg;
    reg.groups = {"g"};
    reg.subtasks = {"t0", "t1"};
    reg.group_map = {0, 0};
    LibraryConfig cfg;
    cfg.channels = 4;
    cfg.embedding_dim = 4;
    auto lib = build_library<double>(cfg, reg, 2);
    Rng rng(2);
    auto sx = Tensor<double>::create({2, 4, 5, 5});
    auto sy = Tensor<double>::create({2, 4, 5, 5});
    for (auto& v : sx->value) v = rng.uniform(-1, 1);
    for (auto& v : sy->value) v = rng.uniform(-1, 1);
    std::vector<std::pair<std::string, TensorPtr<double>>> params;
    for (auto& [n, t] : lib.intermediates[0].items) params.emplace_back(n, t);
    auto report = grad_check([&] { return sum(find_forward(lib, 1, sx, sy)); }, params, 1e-4, 1e-6);
    check("find module gradients", report.ok());
  }
  {
    bool ok = true;
    for (uint64_t seed = 0; seed < 3; ++seed) {
      auto split = vqa::generate_combinations(2, 2, seed);
      auto cov = vqa::instance_coverage(split.train);
      for (int c : cov) ok = ok && c >= 2;
      for (auto& t : split.train) ok = ok && !split.test_contains(t);
    }
    check("combination sampling coverage and disjointness", ok);
  }
  {
    auto glyphs = vqa::SyntheticGlyphs::digits();
    Rng rng(3);
    auto glyph = glyphs->sample(7, vqa::GlyphSplit::Train, rng);
    vqa::Combination bright{7, 2, 0, 0}, dark{7, 2, 2, 0};
    std::vector<float> cb(3 * 28 * 28, 0.0f), cd(3 * 28 * 28, 0.0f);
    vqa::render_object(cb, 28, glyph, bright, 14, 14);
    vqa::render_object(cd, 28, glyph, dark, 14, 14);
    bool ok = true;
    for (size_t i = 0; i < cb.size(); ++i) ok = ok && cd[i] == cb[i] * 0.4f;
    check("light factor is an exact pixel ratio", ok);
  }
  std::cout << (failures == 0 ? "selftest passed" : "selftest FAILED") << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modular-network VQA engine"};
  app.require_subcommand(1);
  std::string command_line = join_args(argc, argv);

  auto* gen = app.add_subcommand("gen-data", "generate a dataset directory");
  std::string task = "extract-single", gen_out, profile;
  vqa::DataGenSpec spec;
  gen->add_option("--task", task, "extract-single|extract-multi|compare-pair|compare-spatial|sqoop");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", spec.seed, "data seed");
  gen->add_option("--n-train", spec.n_train, "training examples");
  gen->add_option("--n-val", spec.n_val, "in-distribution validation examples");
  gen->add_option("--n-ood", spec.n_ood, "out-of-distribution test examples");
  gen->add_option("--r-train", spec.r_train, "minimum train occurrences per attribute instance");
  gen->add_option("--r-test", spec.r_test, "minimum test occurrences per attribute instance");
  gen->add_option("--glyphs", spec.glyphs, "synthetic|mnist");
  gen->add_option("--mnist-dir", spec.mnist_dir, "directory with the four MNIST idx files");
  gen->add_option("--objects", spec.sqoop_objects, "sqoop: number of objects");
  gen->add_option("--objects-per-image", spec.sqoop_objects_per_image, "sqoop: 2 or 5");
  gen->add_option("--max-ood-pairs", spec.sqoop_max_ood_pairs, "sqoop: held-out pairs in the ood set");
  gen->add_option("--profile", profile, "desk|paper dataset-size preset");

  auto* train = app.add_subcommand("train", "train one model from a config file");
  std::string train_config, train_out;
  bool dry_run = false;
  train->add_option("--config", train_config, "key-value config file")->required();
  train->add_option("--out", train_out, "run directory");
  train->add_flag("--dry-run", dry_run, "print the resolved config and exit");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_split = "ood", eval_out;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory or .bin shard")->required();
  eval->add_option("--split", eval_split, "train|val|ood when --data is a directory");
  eval->add_option("--out", eval_out, "optional output directory for eval.json");

  auto* sweep = app.add_subcommand("sweep", "run a data-run x library x seed sweep");
  std::string sweep_config, sweep_out;
  bool resume = false;
  sweep->add_option("--config", sweep_config, "sweep config file")->required();
  sweep->add_option("--out", sweep_out, "sweep output directory")->required();
  sweep->add_flag("--resume", resume, "skip cells whose manifests verify");

  auto* report = app.add_subcommand("report", "merge sweep outputs into one report");
  std::vector<std::string> report_dirs;
  std::string report_out;
  report->add_option("dirs", report_dirs, "sweep directories")->required();
  report->add_option("--out", report_out, "merged report directory")->required();

  auto* selftest = app.add_subcommand("selftest", "run the built-in oracle checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(command_line, task, gen_out, spec, profile);
    if (*train) return cmd_train(command_line, train_config, train_out, dry_run);
    if (*eval) return cmd_eval(command_line, eval_ckpt, eval_data, eval_split, eval_out);
    if (*sweep) return cmd_sweep(command_line, sweep_config, sweep_out, resume);
    if (*report) return cmd_report(command_line, report_dirs, report_out);
    if (*selftest) return cmd_selftest();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
