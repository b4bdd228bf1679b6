#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "modnet/tensor.hpp"

namespace modnet {

// Parameter container file: a little-endian u64 JSON-header length, the JSON
// header (format version, precision, parameter names + shapes, free-form
// meta), then the raw float32 payloads concatenated in header order. Offsets
// into the payload follow from the shapes.
struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry& at(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, TensorPtr<float>>>& params,
                     const nlohmann::json& meta);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace modnet
