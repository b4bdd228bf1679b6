#include "modnet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "modnet/checkpoint.hpp"
#include "modnet/config_file.hpp"
#include "modnet/manifest.hpp"

namespace modnet {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Executable view of a dataset file: parsed unique layouts plus per-example
// indices, ready for execute_mixed.
struct LoadedData {
  const vqa::DatasetFile* file = nullptr;
  std::vector<ProgramLayout> layouts;
  std::vector<int> example_layout;
  std::vector<std::string> root_names;  // per unique layout

  static LoadedData index(const vqa::DatasetFile& file, const SubtaskRegistry& reg) {
    LoadedData d;
    d.file = &file;
    std::map<std::string, int> seen;
    d.example_layout.resize(static_cast<size_t>(file.size()));
    for (int i = 0; i < file.size(); ++i) {
      const std::string& text = file.layout(i);
      auto it = seen.find(text);
      int id;
      if (it == seen.end()) {
        id = static_cast<int>(d.layouts.size());
        seen.emplace(text, id);
        d.layouts.push_back(parse_layout(text, reg));
        const auto& l = d.layouts.back();
        d.root_names.push_back(reg.subtasks[static_cast<size_t>(l.nodes[static_cast<size_t>(l.root)].subtask)]);
      } else {
        id = it->second;
      }
      d.example_layout[static_cast<size_t>(i)] = id;
    }
    return d;
  }

  // assemble slot images + labels + layout ids for a list of example indices
  void gather(const std::vector<int>& idx, std::vector<TensorPtr<float>>& slots, std::vector<int>& which,
              std::vector<int>& labels) const {
    int B = static_cast<int>(idx.size());
    int S = file->image_size();
    int n_slots = file->images_per_example();
    int64_t plane = static_cast<int64_t>(3) * S * S;
    slots.clear();
    for (int s = 0; s < n_slots; ++s) slots.push_back(Tensor<float>::create({B, 3, S, S}));
    which.resize(static_cast<size_t>(B));
    labels.resize(static_cast<size_t>(B));
    std::vector<float*> dst(static_cast<size_t>(n_slots));
    for (int b = 0; b < B; ++b) {
      for (int s = 0; s < n_slots; ++s) dst[static_cast<size_t>(s)] = slots[static_cast<size_t>(s)]->value.data() + b * plane;
      file->read_images(idx[static_cast<size_t>(b)], dst);
      which[static_cast<size_t>(b)] = example_layout[static_cast<size_t>(idx[static_cast<size_t>(b)])];
      labels[static_cast<size_t>(b)] = file->label(idx[static_cast<size_t>(b)]);
    }
  }
};

EvalResult evaluate_loaded(const Library<float>& lib, const LoadedData& data, int batch_size, int limit) {
  NoGradGuard no_grad;
  int N = data.file->size();
  std::vector<int> indices;
  if (limit > 0 && limit < N) {
    for (int i = 0; i < limit; ++i)
      indices.push_back(static_cast<int>(static_cast<int64_t>(i) * N / limit));
  } else {
    indices.resize(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) indices[static_cast<size_t>(i)] = i;
  }

  EvalResult res;
  std::map<std::string, std::pair<int, int>> tally;  // root -> (correct, total)
  for (size_t at = 0; at < indices.size(); at += static_cast<size_t>(batch_size)) {
    std::vector<int> chunk(indices.begin() + static_cast<int64_t>(at),
                           indices.begin() + static_cast<int64_t>(std::min(indices.size(), at + static_cast<size_t>(batch_size))));
    std::vector<TensorPtr<float>> slots;
    std::vector<int> which, labels;
    data.gather(chunk, slots, which, labels);
    auto logits = execute_mixed<float>(data.layouts, which, slots, lib, /*train=*/false);
    auto pred = argmax_rows(logits);
    for (size_t b = 0; b < chunk.size(); ++b) {
      auto& [correct, total] = tally[data.root_names[static_cast<size_t>(which[b])]];
      correct += pred[b] == labels[b] ? 1 : 0;
      total += 1;
    }
  }
  int correct_sum = 0;
  for (auto& [name, ct] : tally) {
    res.per_question[name] = static_cast<double>(ct.first) / std::max(1, ct.second);
    res.counts[name] = ct.second;
    correct_sum += ct.first;
    res.total += ct.second;
  }
  res.accuracy = res.total > 0 ? static_cast<double>(correct_sum) / res.total : 0.0;
  return res;
}

}  // namespace

EvalResult evaluate(const Library<float>& lib, const SubtaskRegistry& registry, const vqa::DatasetFile& data,
                    int batch_size, int limit) {
  return evaluate_loaded(lib, LoadedData::index(data, registry), batch_size, limit);
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["steps"] = steps;
  j["optimizer"] = opt_kind_name(optimizer);
  j["data_seed"] = data_seed;
  j["model_seed"] = model_seed;
  j["eval_every"] = eval_every;
  j["max_eval_examples"] = max_eval_examples;
  j["eval_batch"] = eval_batch;
  j["data_dir"] = data_dir;
  j["library"] = {{"name", library.name()},
                  {"channels", library.channels},
                  {"embedding_dim", library.embedding_dim},
                  {"embedding_init_std", library.embedding_init_std},
                  {"vector_hidden", library.vector_hidden}};
  j["threads"] = worker_threads();
  j["loss"] = "softmax_cross_entropy";
  return j;
}

nlohmann::json RunResult::to_json() const {
  nlohmann::json j;
  j["loss_curve"] = loss_curve;
  auto& vc = j["val_curve"] = nlohmann::json::array();
  for (auto& p : val_curve)
    vc.push_back({{"step", p.step}, {"accuracy", p.accuracy}, {"wall_seconds", p.wall_seconds}});
  j["final_val_acc"] = final_val_acc;
  j["ood_acc"] = ood_acc;
  j["per_question_ood"] = per_question_ood;
  j["per_question_ood_counts"] = per_question_ood_counts;
  j["wall_seconds"] = wall_seconds;
  j["loss_trend_ok"] = loss_trend_ok;
  j["realized_train_pct"] = realized_train_pct;
  j["checkpoint"] = checkpoint_path;
  j["config"] = config_snapshot;
  return j;
}

RunResult RunResult::from_json(const nlohmann::json& j) {
  RunResult r;
  r.loss_curve = j.at("loss_curve").get<std::vector<float>>();
  for (auto& p : j.at("val_curve"))
    r.val_curve.push_back({p.at("step").get<int>(), p.at("accuracy").get<double>(),
                           p.at("wall_seconds").get<double>()});
  r.final_val_acc = j.at("final_val_acc").get<double>();
  r.ood_acc = j.at("ood_acc").get<double>();
  r.per_question_ood = j.at("per_question_ood").get<std::map<std::string, double>>();
  r.per_question_ood_counts = j.at("per_question_ood_counts").get<std::map<std::string, int>>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.loss_trend_ok = j.at("loss_trend_ok").get<bool>();
  r.realized_train_pct = j.at("realized_train_pct").get<double>();
  r.checkpoint_path = j.at("checkpoint").get<std::string>();
  r.config_snapshot = j.at("config");
  return r;
}

RunResult train_run(const TrainConfig& cfg, const std::string& out_dir) {
  auto t0 = Clock::now();
  if (cfg.steps < 0) throw ConfigError("train: steps must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (cfg.library.use_batchnorm && cfg.batch_size < 2)
    throw ConfigError("train: batch size must be >= 2 when batch normalization is enabled");

  auto data = vqa::DataDir::open(cfg.data_dir);
  vqa::DatasetFile train_file(data.train_path);
  vqa::DatasetFile val_file(data.val_path);
  vqa::DatasetFile ood_file(data.ood_path);
  auto train_data = LoadedData::index(train_file, data.registry);
  auto val_data = LoadedData::index(val_file, data.registry);
  auto ood_data = LoadedData::index(ood_file, data.registry);

  LibraryConfig lib_cfg = cfg.library;
  lib_cfg.embedding_dim = lib_cfg.channels;
  auto lib = build_library<float>(lib_cfg, data.registry, cfg.model_seed);
  Optimizer<float> opt(lib.trainable_params(), cfg.optimizer, static_cast<float>(cfg.lr));

  RunResult result;
  result.config_snapshot = cfg.to_json();
  result.config_snapshot["library"]["name"] = lib_cfg.name();
  result.realized_train_pct = data.manifest.value("realized_train_pct", -1.0);

  // epoch-shuffled batch stream; partial tail batches roll into a reshuffle
  Rng shuffle_rng(mix_seed(cfg.data_seed, 0xba7cull));
  std::vector<int> order(static_cast<size_t>(train_file.size()));
  size_t cursor = order.size();  // trigger shuffle on first use
  auto next_batch = [&](std::vector<int>& idx) {
    idx.clear();
    for (int i = 0; i < cfg.batch_size; ++i) {
      if (cursor >= order.size()) {
        for (size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
  };

  std::vector<int> batch_idx;
  std::vector<TensorPtr<float>> slots;
  std::vector<int> which, labels;
  for (int step = 0; step < cfg.steps; ++step) {
    next_batch(batch_idx);
    train_data.gather(batch_idx, slots, which, labels);
    auto logits = execute_mixed<float>(train_data.layouts, which, slots, lib, /*train=*/true);
    auto loss = softmax_cross_entropy(logits, labels);
    float loss_v = loss->value[0];
    if (!std::isfinite(loss_v))
      throw InternalError("training diverged: non-finite loss " + std::to_string(loss_v) + " at step " +
                          std::to_string(step) + " (lr " + std::to_string(cfg.lr) + ")");
    backward(loss);
    opt.step();
    result.loss_curve.push_back(loss_v);

    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.steps) {
      auto ev = evaluate_loaded(lib, val_data, cfg.eval_batch, cfg.max_eval_examples);
      result.val_curve.push_back({step + 1, ev.accuracy, seconds_since(t0)});
    }
  }

  // validation at the last iteration drives selection; no early stopping
  auto val = evaluate_loaded(lib, val_data, cfg.eval_batch, 0);
  result.final_val_acc = val.accuracy;
  result.val_curve.push_back({cfg.steps, val.accuracy, seconds_since(t0)});
  auto ood = evaluate_loaded(lib, ood_data, cfg.eval_batch, 0);
  result.ood_acc = ood.accuracy;
  result.per_question_ood = ood.per_question;
  result.per_question_ood_counts = ood.counts;

  if (result.loss_curve.size() >= 200) {
    size_t mid = result.loss_curve.size() / 2;
    double head = 0, middle = 0;
    for (size_t i = 0; i < 100; ++i) head += result.loss_curve[i];
    for (size_t i = mid - 50; i < mid + 50; ++i) middle += result.loss_curve[i];
    result.loss_trend_ok = middle < head;
  }

  std::filesystem::create_directories(out_dir);
  result.checkpoint_path = (std::filesystem::path(out_dir) / "checkpoint.bin").string();
  nlohmann::json ck_meta;
  ck_meta["library"] = {{"name", lib_cfg.name()},
                        {"channels", lib_cfg.channels},
                        {"embedding_init_std", lib_cfg.embedding_init_std},
                        {"vector_hidden", lib_cfg.vector_hidden}};
  ck_meta["registry"] = {{"subtasks", data.registry.subtasks},
                         {"groups", data.registry.groups},
                         {"group_map", data.registry.group_map}};
  ck_meta["model_seed"] = cfg.model_seed;
  save_checkpoint(result.checkpoint_path, lib.named_params(), ck_meta);

  result.wall_seconds = seconds_since(t0);
  std::ofstream rj((std::filesystem::path(out_dir) / "result.json").string(), std::ios::trunc);
  rj << result.to_json().dump(2) << "\n";
  if (!rj) throw IoError("cannot write result.json under '" + out_dir + "'");
  return result;
}

Library<float> library_from_checkpoint(const std::string& checkpoint_path) {
  auto ck = load_checkpoint(checkpoint_path);
  SubtaskRegistry reg;
  reg.subtasks = ck.meta.at("registry").at("subtasks").get<std::vector<std::string>>();
  reg.groups = ck.meta.at("registry").at("groups").get<std::vector<std::string>>();
  reg.group_map = ck.meta.at("registry").at("group_map").get<std::vector<int>>();
  LibraryConfig cfg = LibraryConfig::parse_name(ck.meta.at("library").at("name").get<std::string>());
  cfg.channels = ck.meta.at("library").at("channels").get<int>();
  cfg.embedding_dim = cfg.channels;
  cfg.vector_hidden = ck.meta.at("library").value("vector_hidden", cfg.vector_hidden);
  auto lib = build_library<float>(cfg, reg, ck.meta.value("model_seed", 0ull));
  for (auto& [name, t] : lib.named_params()) {
    const auto& e = ck.at(name);
    if (e.shape != t->shape)
      throw ConfigError("checkpoint parameter '" + name + "' has shape mismatch");
    t->value = e.data;
  }
  return lib;
}

EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const std::string& dataset_path,
                               int batch_size, int limit) {
  auto lib = library_from_checkpoint(checkpoint_path);
  vqa::DatasetFile file(dataset_path);
  try {
    return evaluate(lib, lib.registry, file, batch_size, limit);
  } catch (const ParseError& e) {
    throw ConfigError("checkpoint registry does not cover the dataset's sub-tasks: " + std::string(e.what()));
  }
}

int select_best(const std::vector<double>& val_accuracies) {
  if (val_accuracies.empty()) throw UsageError("select_best: empty candidate list");
  int best = 0;
  for (int i = 1; i < static_cast<int>(val_accuracies.size()); ++i)
    if (val_accuracies[static_cast<size_t>(i)] > val_accuracies[static_cast<size_t>(best)]) best = i;
  return best;
}

namespace {

void apply_library_keys(const ConfigFile& cfg, LibraryConfig& lib) {
  lib = LibraryConfig::parse_name(cfg.get_str("library.name", lib.name()));
  lib.channels = cfg.get_int("library.channels", lib.channels);
  lib.embedding_dim = lib.channels;
  lib.embedding_init_std = static_cast<float>(cfg.get_double("library.embedding_init_std", lib.embedding_init_std));
  lib.vector_hidden = cfg.get_int("library.vector_hidden", lib.vector_hidden);
}

void apply_train_keys(const ConfigFile& cfg, TrainConfig& t) {
  t.lr = cfg.get_double("train.lr", t.lr);
  t.batch_size = cfg.get_int("train.batch", t.batch_size);
  t.steps = cfg.get_int("train.steps", t.steps);
  t.optimizer = parse_opt_kind(cfg.get_str("train.optimizer", opt_kind_name(t.optimizer)));
  t.data_seed = cfg.get_u64("train.data_seed", t.data_seed);
  t.model_seed = cfg.get_u64("train.model_seed", t.model_seed);
  t.eval_every = cfg.get_int("train.eval_every", t.eval_every);
  t.max_eval_examples = cfg.get_int("train.max_eval", t.max_eval_examples);
  t.eval_batch = cfg.get_int("train.eval_batch", t.eval_batch);
}

}  // namespace

TrainConfig parse_train_config(const ConfigFile& cfg) {
  TrainConfig t;
  t.data_dir = cfg.get_str("data.dir");
  apply_library_keys(cfg, t.library);
  apply_train_keys(cfg, t);
  cfg.ensure_all_consumed();
  return t;
}

SweepConfig parse_sweep_config(const ConfigFile& cfg) {
  SweepConfig s;
  s.data.task = cfg.get_str("sweep.task", s.data.task);
  s.r_values = cfg.has("sweep.r_values") ? cfg.get_int_list("sweep.r_values") : std::vector<int>{1};
  s.data.r_test = cfg.get_int("sweep.r_test", s.data.r_test);
  s.libraries = cfg.has("sweep.libraries") ? cfg.get_list("sweep.libraries")
                                           : std::vector<std::string>{"all-all-all"};
  s.lr_grid = cfg.has("sweep.grid") ? cfg.get_double_list("sweep.grid") : std::vector<double>{1e-3};
  if (cfg.has("sweep.seeds")) {
    s.model_seeds.clear();
    for (int v : cfg.get_int_list("sweep.seeds")) s.model_seeds.push_back(static_cast<uint64_t>(v));
  } else {
    s.model_seeds = {1};
  }
  s.data.seed = cfg.get_u64("sweep.data_seed", 1);
  s.data.n_train = cfg.get_int("sweep.n_train", 0);
  s.data.n_val = cfg.get_int("sweep.n_val", 0);
  s.data.n_ood = cfg.get_int("sweep.n_ood", 0);
  s.data.glyphs = cfg.get_str("sweep.glyphs", s.data.glyphs);
  s.data.mnist_dir = cfg.get_str("sweep.mnist_dir", s.data.mnist_dir);
  s.data.sqoop_objects = cfg.get_int("sweep.objects", s.data.sqoop_objects);
  s.data.sqoop_objects_per_image = cfg.get_int("sweep.objects_per_image", s.data.sqoop_objects_per_image);
  s.data.sqoop_max_ood_pairs = cfg.get_int("sweep.max_ood_pairs", s.data.sqoop_max_ood_pairs);
  apply_library_keys(cfg, s.base.library);
  apply_train_keys(cfg, s.base);
  s.base.data_seed = s.data.seed;
  cfg.ensure_all_consumed();
  return s;
}

GridResult grid_search(const TrainConfig& base, const std::vector<double>& lr_grid,
                       const std::string& out_dir) {
  if (lr_grid.empty()) throw ConfigError("grid search: empty learning-rate grid");
  GridResult grid;
  grid.lrs = lr_grid;
  std::vector<std::string> diagnostics;
  for (double lr : lr_grid) {
    TrainConfig cfg = base;
    cfg.lr = lr;
    std::string run_dir = (std::filesystem::path(out_dir) / ("lr_" + std::to_string(lr))).string();
    try {
      grid.runs.push_back(train_run(cfg, run_dir));
    } catch (const InternalError& e) {
      // diverged run: record a placeholder so selection can skip it
      RunResult failed;
      failed.final_val_acc = -1;
      failed.config_snapshot = cfg.to_json();
      failed.loss_trend_ok = false;
      grid.runs.push_back(failed);
      diagnostics.push_back("lr " + std::to_string(lr) + ": " + e.what());
    }
  }
  std::vector<double> val_accs;
  bool any_ok = false;
  for (auto& r : grid.runs) {
    val_accs.push_back(r.final_val_acc);
    any_ok = any_ok || r.final_val_acc >= 0;
  }
  if (!any_ok) {
    std::string all;
    for (auto& d : diagnostics) all += "\n  " + d;
    throw InternalError("grid search: every run diverged:" + all);
  }
  grid.selected = select_best(val_accs);
  return grid;
}

}  // namespace modnet
