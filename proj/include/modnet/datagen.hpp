#pragma once

#include <string>

#include <json.hpp>

#include "modnet/dataset.hpp"
#include "modnet/library.hpp"

namespace modnet::vqa {

// One generated dataset directory: train.bin (train combinations / allowed
// questions, training glyph pool), val.bin (same distribution, validation
// glyph pool), ood.bin (held-out combinations or question pairs, test glyph
// pool), plus manifest.json carrying the question registry and provenance.
struct DataGenSpec {
  std::string task = "extract-single";  // extract-single|extract-multi|compare-pair|compare-spatial|sqoop
  uint64_t seed = 1;
  int n_train = 0, n_val = 0, n_ood = 0;
  int r_train = 5, r_test = 5;
  std::string glyphs = "synthetic";  // synthetic|mnist
  std::string mnist_dir;             // directory with the four idx files
  int sqoop_objects = 36;
  int sqoop_objects_per_image = 5;
  int sqoop_max_ood_pairs = 12;

  void validate() const;
};

SubtaskRegistry registry_for_task(const std::string& task, const DataGenSpec& spec);

// writes the three shards + manifest.json; returns the manifest
nlohmann::json write_dataset_dir(const DataGenSpec& spec, const std::string& dir,
                                 const std::string& command_line = "");

// reads a dataset directory written by write_dataset_dir
struct DataDir {
  std::string dir;
  nlohmann::json manifest;
  SubtaskRegistry registry;
  std::string train_path, val_path, ood_path;
  static DataDir open(const std::string& dir);
};

}  // namespace modnet::vqa
