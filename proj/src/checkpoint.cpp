#include "modnet/checkpoint.hpp"

#include <cstdint>
#include <fstream>

namespace modnet {

const CheckpointEntry& Checkpoint::at(const std::string& name) const {
  for (auto& e : entries)
    if (e.name == name) return e;
  throw IndexError("checkpoint: no parameter named '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (auto& e : entries)
    if (e.name == name) return true;
  return false;
}

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, TensorPtr<float>>>& params,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["precision"] = "float32";
  header["meta"] = meta;
  auto& plist = header["params"] = nlohmann::json::array();
  for (auto& [name, t] : params) plist.push_back({{"name", name}, {"shape", t->shape}});

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  std::string js = header.dump();
  uint64_t len = js.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (auto& [name, t] : params)
    out.write(reinterpret_cast<const char*>(t->value.data()),
              static_cast<std::streamsize>(t->value.size() * sizeof(float)));
  if (!out) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw FormatError("checkpoint '" + path + "': truncated header length");
  std::string js(len, '\0');
  in.read(js.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint '" + path + "': truncated JSON header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(js);
  } catch (const std::exception& e) {
    throw FormatError("checkpoint '" + path + "': bad JSON header: " + e.what());
  }
  if (header.value("format_version", 0) != 1)
    throw FormatError("checkpoint '" + path + "': unsupported format version");
  if (header.value("precision", "") != "float32")
    throw FormatError("checkpoint '" + path + "': unsupported precision");

  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (auto& p : header.at("params")) {
    CheckpointEntry e;
    e.name = p.at("name").get<std::string>();
    e.shape = p.at("shape").get<std::vector<int>>();
    int64_t n = 1;
    for (int d : e.shape) n *= d;
    e.data.resize(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(e.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in)
      throw FormatError("checkpoint '" + path + "': truncated payload for '" + e.name + "' at byte " +
                        std::to_string(static_cast<int64_t>(in.tellg())));
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

}  // namespace modnet
