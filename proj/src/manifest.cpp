#include "modnet/manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "modnet/common.hpp"

namespace modnet {

namespace {

std::string hex(const unsigned char* digest, unsigned len) {
  static const char* alphabet = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(alphabet[digest[i] >> 4]);
    out.push_back(alphabet[digest[i] & 0xF]);
  }
  return out;
}

struct DigestCtx {
  EVP_MD_CTX* ctx;
  DigestCtx() : ctx(EVP_MD_CTX_new()) {
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
      throw InternalError("sha256 init failed");
  }
  ~DigestCtx() { EVP_MD_CTX_free(ctx); }
  std::string finish() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    if (EVP_DigestFinal_ex(ctx, digest, &len) != 1) throw InternalError("sha256 final failed");
    return hex(digest, len);
  }
};

}  // namespace

std::string sha256_bytes(const void* data, size_t len) {
  DigestCtx d;
  if (EVP_DigestUpdate(d.ctx, data, len) != 1) throw InternalError("sha256 update failed");
  return d.finish();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for hashing");
  DigestCtx d;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    std::streamsize got = in.gcount();
    if (got > 0 && EVP_DigestUpdate(d.ctx, buf, static_cast<size_t>(got)) != 1)
      throw InternalError("sha256 update failed");
  }
  return d.finish();
}

std::string iso8601_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

ManifestBuilder::ManifestBuilder(std::string command)
    : command_(std::move(command)), started_(iso8601_now()) {}

void ManifestBuilder::add_input(const std::string& path) { inputs_[path] = sha256_file(path); }

void ManifestBuilder::add_artifact(const std::string& path) {
  artifacts_[std::filesystem::path(path).filename().string()] = sha256_file(path);
}

nlohmann::json ManifestBuilder::finish(const std::string& dir, nlohmann::json extra) {
  nlohmann::json run;
  run["command"] = command_;
  run["config"] = config_;
  run["seeds"] = seeds_;
  run["input_hashes"] = inputs_;
  run["artifact_hashes"] = artifacts_;
  run["started_at"] = started_;
  run["finished_at"] = iso8601_now();
  run["tool_version"] = kVersion;
  if (!failures_.empty()) run["failures"] = failures_;
  extra["run"] = run;

  std::filesystem::create_directories(dir);
  std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  out << extra.dump(2) << "\n";
  if (!out) throw IoError("manifest write failed for '" + path + "'");
  return extra;
}

}  // namespace modnet
