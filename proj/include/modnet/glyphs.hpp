#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "modnet/common.hpp"

namespace modnet::vqa {

// IDX container (big-endian magic + dims, raw unsigned bytes).
struct IdxData {
  std::vector<int> dims;
  std::vector<uint8_t> data;
};
IdxData load_idx(const std::string& path);
void write_idx(const std::string& path, const IdxData& idx);

struct GlyphBitmap {
  int size = 28;
  std::vector<float> pix;  // grayscale in [0,1], row-major
};

enum class GlyphSplit { Train, Val, Test };

// Source of 28x28 grayscale glyph instances per category.
class GlyphSource {
 public:
  virtual ~GlyphSource() = default;
  virtual GlyphBitmap sample(int category, GlyphSplit split, Rng& rng) const = 0;
  virtual int num_categories() const = 0;
  virtual std::string kind() const = 0;
};

// Built-in stroke-font glyphs (digits 0-9 and letters a-z) rasterized with a
// small seeded affine jitter, so the suite runs without external files.
class SyntheticGlyphs : public GlyphSource {
 public:
  // categories: indices into the symbol list passed here, e.g. {"0","1",...}
  explicit SyntheticGlyphs(std::vector<std::string> symbols);
  static std::unique_ptr<SyntheticGlyphs> digits();

  GlyphBitmap sample(int category, GlyphSplit split, Rng& rng) const override;
  int num_categories() const override { return static_cast<int>(symbols_.size()); }
  std::string kind() const override { return "synthetic"; }

 private:
  std::vector<std::string> symbols_;
};

// Renders one stroke-font symbol ('0'-'9', 'a'-'z') without jitter.
GlyphBitmap render_stroke_glyph(char symbol, int size = 28);

// Real MNIST digits from IDX files, split a priori: first 50K training-file
// digits -> Train, remaining 10K -> Val, the test file -> Test.
class MnistGlyphs : public GlyphSource {
 public:
  MnistGlyphs(const std::string& train_images, const std::string& train_labels,
              const std::string& test_images, const std::string& test_labels);

  GlyphBitmap sample(int category, GlyphSplit split, Rng& rng) const override;
  int num_categories() const override { return 10; }
  std::string kind() const override { return "mnist"; }
  int pool_size(int category, GlyphSplit split) const;

 private:
  std::vector<GlyphBitmap> bitmaps_;
  std::vector<std::vector<int>> pools_[3];  // per split, per category
};

}  // namespace modnet::vqa
