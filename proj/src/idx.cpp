#include <cstdint>
#include <fstream>

#include "modnet/glyphs.hpp"

namespace modnet::vqa {

namespace {

uint32_t read_be32(std::istream& in, const std::string& path, int64_t offset, const char* what) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw FormatError("idx '" + path + "': truncated " + what + " at byte " + std::to_string(offset));
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

IdxData load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open idx file '" + path + "'");
  uint32_t magic = read_be32(in, path, 0, "magic");
  // 0x00000800 | dtype u8 (0x08) | number of dims
  if ((magic & 0xFFFFFF00u) != 0x00000800u)
    throw FormatError("idx '" + path + "': bad magic 0x" + [&] {
      char buf[16];
      snprintf(buf, sizeof(buf), "%08x", magic);
      return std::string(buf);
    }() + " at byte 0 (expected unsigned-byte idx, 0x000008xx)");
  int ndim = static_cast<int>(magic & 0xFFu);
  if (ndim < 1 || ndim > 3)
    throw FormatError("idx '" + path + "': unsupported dimension count " + std::to_string(ndim));

  IdxData idx;
  int64_t count = 1;
  for (int i = 0; i < ndim; ++i) {
    uint32_t d = read_be32(in, path, 4 + 4 * i, "dimension size");
    idx.dims.push_back(static_cast<int>(d));
    count *= d;
  }
  idx.data.resize(static_cast<size_t>(count));
  in.read(reinterpret_cast<char*>(idx.data.data()), count);
  if (!in)
    throw FormatError("idx '" + path + "': truncated payload at byte " +
                      std::to_string(4 + 4 * ndim + in.gcount()) + " (expected " + std::to_string(count) +
                      " bytes)");
  return idx;
}

void write_idx(const std::string& path, const IdxData& idx) {
  if (idx.dims.empty() || idx.dims.size() > 3) throw UsageError("write_idx: 1-3 dimensions supported");
  int64_t count = 1;
  for (int d : idx.dims) count *= d;
  if (count != static_cast<int64_t>(idx.data.size()))
    throw UsageError("write_idx: dims do not match payload size");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_be32(out, 0x00000800u | static_cast<uint32_t>(idx.dims.size()));
  for (int d : idx.dims) write_be32(out, static_cast<uint32_t>(d));
  out.write(reinterpret_cast<const char*>(idx.data.data()), static_cast<std::streamsize>(idx.data.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

MnistGlyphs::MnistGlyphs(const std::string& train_images, const std::string& train_labels,
                         const std::string& test_images, const std::string& test_labels) {
  auto load_pair = [&](const std::string& images_path, const std::string& labels_path,
                       std::vector<std::pair<int, int>>& out) {
    IdxData images = load_idx(images_path);
    IdxData labels = load_idx(labels_path);
    if (images.dims.size() != 3)
      throw FormatError("idx '" + images_path + "': expected 3 dims for images, got " +
                        std::to_string(images.dims.size()));
    if (labels.dims.size() != 1)
      throw FormatError("idx '" + labels_path + "': expected 1 dim for labels");
    if (images.dims[0] != labels.dims[0])
      throw FormatError("idx: image count " + std::to_string(images.dims[0]) + " != label count " +
                        std::to_string(labels.dims[0]));
    int h = images.dims[1], w = images.dims[2];
    if (h != 28 || w != 28)
      throw FormatError("idx '" + images_path + "': expected 28x28 glyphs, got " + std::to_string(h) + "x" +
                        std::to_string(w));
    for (int i = 0; i < images.dims[0]; ++i) {
      GlyphBitmap g;
      g.size = 28;
      g.pix.resize(28 * 28);
      for (int p = 0; p < 28 * 28; ++p)
        g.pix[static_cast<size_t>(p)] = images.data[static_cast<size_t>(i) * 28 * 28 + p] / 255.0f;
      int label = labels.data[static_cast<size_t>(i)];
      if (label < 0 || label > 9)
        throw FormatError("idx '" + labels_path + "': label " + std::to_string(label) + " out of range");
      out.emplace_back(static_cast<int>(bitmaps_.size()), label);
      bitmaps_.push_back(std::move(g));
    }
  };

  std::vector<std::pair<int, int>> train_items, test_items;
  load_pair(train_images, train_labels, train_items);
  load_pair(test_images, test_labels, test_items);

  for (auto& pools : pools_) pools.assign(10, {});
  // fixed a-priori split of the training file: first 50K train, rest val
  size_t split_at = std::min<size_t>(50000, train_items.size());
  for (size_t i = 0; i < train_items.size(); ++i) {
    auto [idx, label] = train_items[i];
    pools_[i < split_at ? 0 : 1][static_cast<size_t>(label)].push_back(idx);
  }
  for (auto& [idx, label] : test_items) pools_[2][static_cast<size_t>(label)].push_back(idx);
}

int MnistGlyphs::pool_size(int category, GlyphSplit split) const {
  return static_cast<int>(pools_[static_cast<int>(split)][static_cast<size_t>(category)].size());
}

GlyphBitmap MnistGlyphs::sample(int category, GlyphSplit split, Rng& rng) const {
  if (category < 0 || category > 9)
    throw IndexError("mnist glyphs: category " + std::to_string(category) + " out of range");
  const auto& pool = pools_[static_cast<int>(split)][static_cast<size_t>(category)];
  if (pool.empty())
    throw GenerationError("mnist glyphs: empty pool for category " + std::to_string(category));
  return bitmaps_[static_cast<size_t>(pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))])];
}

}  // namespace modnet::vqa
