#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "modnet/datagen.hpp"
#include "modnet/executor.hpp"
#include "modnet/optim.hpp"

namespace modnet {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 64;
  int steps = 1000;
  OptKind optimizer = OptKind::Adam;
  uint64_t data_seed = 1;   // batch order; dataset bytes carry their own seed
  uint64_t model_seed = 1;  // parameter initialization
  int eval_every = 250;
  int max_eval_examples = 2000;  // cap for periodic validation; 0 = full
  int eval_batch = 256;
  LibraryConfig library;
  std::string data_dir;

  nlohmann::json to_json() const;
};

struct ValPoint {
  int step = 0;
  double accuracy = 0;
  double wall_seconds = 0;
};

struct RunResult {
  std::vector<float> loss_curve;  // one entry per optimizer step
  std::vector<ValPoint> val_curve;
  double final_val_acc = 0;
  double ood_acc = 0;
  std::map<std::string, double> per_question_ood;
  std::map<std::string, int> per_question_ood_counts;
  double wall_seconds = 0;
  bool loss_trend_ok = true;
  double realized_train_pct = -1;
  std::string checkpoint_path;
  nlohmann::json config_snapshot;

  nlohmann::json to_json() const;
  static RunResult from_json(const nlohmann::json& j);
};

struct EvalResult {
  double accuracy = 0;
  int total = 0;
  std::map<std::string, double> per_question;  // keyed by root sub-task name
  std::map<std::string, int> counts;
};

// Eval-mode accuracy over a dataset file; `limit` > 0 evaluates an
// evenly-strided subset.
EvalResult evaluate(const Library<float>& lib, const SubtaskRegistry& registry, const vqa::DatasetFile& data,
                    int batch_size, int limit = 0);

// Trains per the config: shuffled batches, constant learning rate, periodic
// in-distribution validation, final checkpoint + result files in out_dir.
RunResult train_run(const TrainConfig& cfg, const std::string& out_dir);

// Rebuild a library from a checkpoint written by train_run.
Library<float> library_from_checkpoint(const std::string& checkpoint_path);
EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const std::string& dataset_path,
                               int batch_size = 256, int limit = 0);

// Model selection is a pure function of in-distribution validation
// accuracies; out-of-distribution numbers never enter.
int select_best(const std::vector<double>& val_accuracies);

struct GridResult {
  std::vector<double> lrs;
  std::vector<RunResult> runs;
  int selected = -1;
};

GridResult grid_search(const TrainConfig& base, const std::vector<double>& lr_grid,
                       const std::string& out_dir);

// ---- sweeps (data-runs x libraries x seeds) -------------------------------

struct SweepCell {
  std::string task;
  std::string library;
  int r = 0;
  double realized_pct = 0;
  uint64_t seed = 0;
  double lr = 0;
  double id_val_acc = 0;
  double ood_acc = 0;
  bool selected = false;
  std::map<std::string, double> per_question_ood;
};

struct SweepConfig {
  vqa::DataGenSpec data;           // task, sizes, glyphs; r_train varies per cell
  std::vector<int> r_values;
  std::vector<std::string> libraries;
  std::vector<double> lr_grid;
  std::vector<uint64_t> model_seeds;
  TrainConfig base;                // steps, batch, optimizer, eval settings
};

struct SweepResult {
  std::vector<SweepCell> cells;    // every run; selected rows flagged
  std::vector<std::string> failures;
};

SweepResult run_data_run(const SweepConfig& sweep, const std::string& out_dir, bool resume = false);

// report files: results.csv / results.json / breakdown.csv / plotdata.json /
// ood_accuracy.svg
void write_report(const std::vector<SweepCell>& cells, const std::string& dir);
std::vector<SweepCell> read_results_csv(const std::string& path);

// run-config file bindings (see README for the key-value schema)
class ConfigFile;
TrainConfig parse_train_config(const ConfigFile& cfg);
SweepConfig parse_sweep_config(const ConfigFile& cfg);

}  // namespace modnet
