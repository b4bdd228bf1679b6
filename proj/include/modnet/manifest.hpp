#pragma once

#include <string>

#include <json.hpp>

namespace modnet {

std::string sha256_file(const std::string& path);
std::string sha256_bytes(const void* data, size_t len);

std::string iso8601_now();

// Common run section embedded in every output directory's manifest.json:
// command line, resolved config, seeds, input/artifact hashes, timestamps,
// tool version. Hashes make results traceable to exact input bytes.
class ManifestBuilder {
 public:
  explicit ManifestBuilder(std::string command);

  void set_config(nlohmann::json config) { config_ = std::move(config); }
  void set_seeds(nlohmann::json seeds) { seeds_ = std::move(seeds); }
  void add_input(const std::string& path);
  void add_artifact(const std::string& path);
  void add_failure(const std::string& what) { failures_.push_back(what); }

  // merged into `extra` under the "run" key and written to dir/manifest.json
  nlohmann::json finish(const std::string& dir, nlohmann::json extra = nlohmann::json::object());

 private:
  std::string command_;
  std::string started_;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json seeds_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::object();
  nlohmann::json artifacts_ = nlohmann::json::object();
  std::vector<std::string> failures_;
};

}  // namespace modnet
