#include "modnet/datagen.hpp"

#include <filesystem>
#include <fstream>

#include "modnet/manifest.hpp"

namespace modnet::vqa {

namespace {

bool is_mnist_task(const std::string& task) {
  return task == "extract-single" || task == "extract-multi" || task == "compare-pair" ||
         task == "compare-spatial";
}

}  // namespace

void DataGenSpec::validate() const {
  if (!is_mnist_task(task) && task != "sqoop")
    throw ConfigError("unknown task '" + task +
                      "' (expected extract-single, extract-multi, compare-pair, compare-spatial, sqoop)");
  if (n_train <= 0 || n_val <= 0 || n_ood <= 0)
    throw ConfigError("dataset sizes must be positive (n_train/n_val/n_ood)");
  if (glyphs != "synthetic" && glyphs != "mnist")
    throw ConfigError("glyphs must be 'synthetic' or 'mnist', got '" + glyphs + "'");
  if (glyphs == "mnist" && mnist_dir.empty())
    throw ConfigError("mnist glyphs need --mnist-dir pointing at the idx files");
}

SubtaskRegistry registry_for_task(const std::string& task, const DataGenSpec& spec) {
  if (task == "extract-single" || task == "extract-multi") return extraction_registry();
  if (task == "compare-pair") return pair_comparison_registry();
  if (task == "compare-spatial") return spatial_registry();
  if (task == "sqoop") {
    auto sq = SqoopSpec::make(spec.sqoop_objects, spec.sqoop_objects_per_image, spec.seed);
    return sqoop_registry(sq.objects);
  }
  throw ConfigError("unknown task '" + task + "'");
}

nlohmann::json write_dataset_dir(const DataGenSpec& spec, const std::string& dir,
                                 const std::string& command_line) {
  spec.validate();
  std::filesystem::create_directories(dir);

  ManifestBuilder mb(command_line.empty() ? ("gen-data --task " + spec.task) : command_line);
  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["task"] = spec.task;
  meta["seed"] = spec.seed;
  meta["glyphs"] = spec.glyphs;
  meta["counts"] = {{"train", spec.n_train}, {"val", spec.n_val}, {"ood", spec.n_ood}};
  meta["files"] = {{"train", "train.bin"}, {"val", "val.bin"}, {"ood", "ood.bin"}};

  auto write_file = [&](const std::string& name, const std::function<void(const ExampleSink&)>& gen) {
    std::string path = (std::filesystem::path(dir) / name).string();
    DatasetWriter w(path);
    gen(w.sink());
    w.close();
    mb.add_artifact(path);
    return path;
  };

  SubtaskRegistry reg = registry_for_task(spec.task, spec);
  meta["subtasks"] = reg.subtasks;
  meta["groups"] = reg.groups;
  meta["group_map"] = reg.group_map;

  if (is_mnist_task(spec.task)) {
    std::unique_ptr<GlyphSource> glyphs;
    if (spec.glyphs == "synthetic") {
      glyphs = SyntheticGlyphs::digits();
    } else {
      auto p = std::filesystem::path(spec.mnist_dir);
      glyphs = std::make_unique<MnistGlyphs>((p / "train-images-idx3-ubyte").string(),
                                             (p / "train-labels-idx1-ubyte").string(),
                                             (p / "t10k-images-idx3-ubyte").string(),
                                             (p / "t10k-labels-idx1-ubyte").string());
    }

    auto split = generate_combinations(spec.r_train, spec.r_test, spec.seed);
    meta["r_train"] = spec.r_train;
    meta["r_test"] = spec.r_test;
    meta["train_combination_count"] = split.train.size();
    meta["test_combination_count"] = split.test.size();
    meta["realized_train_pct"] = 100.0 * static_cast<double>(split.train.size()) / kNumCombinations;
    auto combos_json = [](const std::vector<Combination>& cs) {
      nlohmann::json arr = nlohmann::json::array();
      for (auto& c : cs) arr.push_back({c.category, c.color, c.light, c.size});
      return arr;
    };
    meta["train_combinations"] = combos_json(split.train);
    meta["test_combinations"] = combos_json(split.test);
    meta["attributes"] = {{"colors", kColorNames},
                          {"light_factors", kLightFactors},
                          {"size_factors", kSizeFactors}};

    auto run = [&](const std::string& name, GlyphSplit gsplit, bool test_combos) {
      MnistTaskOptions opt;
      opt.n = name == "train.bin" ? spec.n_train : (name == "val.bin" ? spec.n_val : spec.n_ood);
      opt.glyph_split = gsplit;
      opt.use_test_combinations = test_combos;
      opt.seed = mix_seed(spec.seed, test_combos ? 0xf00dull : (gsplit == GlyphSplit::Train ? 1 : 2));
      write_file(name, [&](const ExampleSink& sink) {
        if (spec.task == "extract-single") gen_attr_extraction(split, false, *glyphs, opt, sink);
        else if (spec.task == "extract-multi") gen_attr_extraction(split, true, *glyphs, opt, sink);
        else if (spec.task == "compare-pair") gen_attr_comparison(split, *glyphs, opt, sink);
        else gen_spatial_mnist(split, *glyphs, opt, sink);
      });
    };
    run("train.bin", GlyphSplit::Train, false);
    run("val.bin", GlyphSplit::Val, false);
    run("ood.bin", GlyphSplit::Test, true);
  } else {
    auto sq = SqoopSpec::make(spec.sqoop_objects, spec.sqoop_objects_per_image, spec.seed);
    meta["sqoop"] = {{"objects", sq.objects},
                     {"objects_per_image", sq.objects_per_image},
                     {"pairing", sq.pairing},
                     {"max_ood_pairs", spec.sqoop_max_ood_pairs}};
    auto train_qs = sqoop_questions(sq, false, 0, spec.seed);
    auto ood_qs = sqoop_questions(sq, true, spec.sqoop_max_ood_pairs, spec.seed);
    meta["sqoop"]["train_questions"] = train_qs.size();
    meta["sqoop"]["ood_questions"] = ood_qs.size();

    auto run = [&](const std::string& name, bool ood, uint64_t salt) {
      SqoopOptions opt;
      opt.n = name == "train.bin" ? spec.n_train : (name == "val.bin" ? spec.n_val : spec.n_ood);
      opt.ood = ood;
      opt.max_ood_pairs = spec.sqoop_max_ood_pairs;
      opt.seed = mix_seed(spec.seed, salt);
      write_file(name, [&](const ExampleSink& sink) { gen_sqoop(sq, opt, sink); });
    };
    run("train.bin", false, 1);
    run("val.bin", false, 2);
    run("ood.bin", true, 3);
  }

  nlohmann::json seeds;
  seeds["data_seed"] = spec.seed;
  mb.set_seeds(seeds);
  nlohmann::json cfg;
  cfg["task"] = spec.task;
  cfg["n_train"] = spec.n_train;
  cfg["n_val"] = spec.n_val;
  cfg["n_ood"] = spec.n_ood;
  cfg["r_train"] = spec.r_train;
  cfg["r_test"] = spec.r_test;
  cfg["glyphs"] = spec.glyphs;
  mb.set_config(cfg);
  return mb.finish(dir, meta);
}

DataDir DataDir::open(const std::string& dir) {
  DataDir d;
  d.dir = dir;
  std::string mpath = (std::filesystem::path(dir) / "manifest.json").string();
  std::ifstream in(mpath);
  if (!in) throw IoError("cannot open dataset manifest '" + mpath + "'");
  try {
    in >> d.manifest;
  } catch (const std::exception& e) {
    throw FormatError("bad dataset manifest '" + mpath + "': " + e.what());
  }
  d.registry.subtasks = d.manifest.at("subtasks").get<std::vector<std::string>>();
  d.registry.groups = d.manifest.at("groups").get<std::vector<std::string>>();
  d.registry.group_map = d.manifest.at("group_map").get<std::vector<int>>();
  d.registry.validate();
  auto files = d.manifest.at("files");
  d.train_path = (std::filesystem::path(dir) / files.at("train").get<std::string>()).string();
  d.val_path = (std::filesystem::path(dir) / files.at("val").get<std::string>()).string();
  d.ood_path = (std::filesystem::path(dir) / files.at("ood").get<std::string>()).string();
  return d;
}

}  // namespace modnet::vqa
