#pragma once

#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "modnet/combinations.hpp"
#include "modnet/glyphs.hpp"
#include "modnet/render.hpp"

namespace modnet::vqa {

// One VQA example: one or two RGB float images, a serialized program layout,
// and a yes/no label. The combination/position metadata is for generator
// tests and is not serialized.
struct Example {
  int image_size = 28;
  std::vector<std::vector<float>> images;  // each 3 * S * S, row-major CHW
  std::string layout;
  uint8_t label = 0;  // 1 = yes

  std::vector<Combination> combinations;
  std::vector<std::pair<int, int>> centers;
};

using ExampleSink = std::function<void(const Example&)>;

// Binary shard: per example a fixed header (image count, dims, label byte,
// layout length) followed by raw little-endian float32 image data and the
// UTF-8 layout string.
class DatasetWriter {
 public:
  explicit DatasetWriter(const std::string& path);
  ~DatasetWriter();
  void append(const Example& e);
  void close();
  int count() const { return count_; }
  ExampleSink sink() {
    return [this](const Example& e) { append(e); };
  }

 private:
  std::ofstream out_;
  std::string path_;
  int count_ = 0;
};

class DatasetFile {
 public:
  explicit DatasetFile(const std::string& path);
  int size() const { return static_cast<int>(offsets_.size()); }
  int image_size() const { return image_size_; }
  int images_per_example() const { return images_per_example_; }
  const std::string& layout(int i) const { return layouts_.at(static_cast<size_t>(i)); }
  int label(int i) const { return labels_.at(static_cast<size_t>(i)); }
  // reads the i-th example's image data into per-slot buffers
  void read_images(int i, const std::vector<float*>& dst) const;
  Example read(int i) const;

 private:
  std::string path_;
  mutable std::ifstream in_;
  std::vector<int64_t> offsets_;  // offset of float payload per example
  std::vector<std::string> layouts_;
  std::vector<uint8_t> labels_;
  int image_size_ = 0;
  int images_per_example_ = 0;
};

// --- VQA-MNIST task generators -------------------------------------------
// All generators emit examples with exact per-question label balance and are
// deterministic in (inputs, seed). Train-side examples draw objects from
// split.train; out-of-distribution ones from split.test.

struct MnistTaskOptions {
  int n = 0;
  GlyphSplit glyph_split = GlyphSplit::Train;
  bool use_test_combinations = false;
  uint64_t seed = 0;
};

// `multi = false`: one object on 28x28, question = one of the 21 attribute
// instances. `multi = true`: a second confounding object, 64x64 canvas.
void gen_attr_extraction(const CombinationSplit& split, bool multi, const GlyphSource& glyphs,
                         const MnistTaskOptions& opt, const ExampleSink& emit);

// Pairs of separated 28x28 images; layout = relation root over two
// attribute-type leaves.
void gen_attr_comparison(const CombinationSplit& split, const GlyphSource& glyphs,
                         const MnistTaskOptions& opt, const ExampleSink& emit);

// One 64x64 image with two objects; leaves are attribute instances that
// unambiguously identify the two objects; root is a spatial relation. Every
// sampled question is emitted twice, once with answer yes and once no.
void gen_spatial_mnist(const CombinationSplit& split, const GlyphSource& glyphs,
                       const MnistTaskOptions& opt, const ExampleSink& emit);

// --- SQOOP -----------------------------------------------------------------

struct SqoopSpec {
  std::vector<std::string> objects;            // single-character glyph names
  int objects_per_image = 5;
  int canvas = 64;
  int glyph_px = 14;
  std::vector<std::pair<int, int>> pairing;    // undirected perfect matching

  // objects: letters then digits (d0..d9) up to num_objects; pairing is a
  // seeded random perfect matching
  static SqoopSpec make(int num_objects, int objects_per_image, uint64_t seed);
  void validate() const;
  bool pair_allowed(int x, int y) const;
  int object_index(const std::string& name) const;
};

struct SqoopQuestion {
  int x = 0, y = 0;
  int relation = 0;  // index into kSpatialRelations
};

// Question lists: training questions cover every allowed ordered pair x all
// relations; OOD questions are a seeded sample of held-out pairs (all of
// them when max_pairs <= 0).
std::vector<SqoopQuestion> sqoop_questions(const SqoopSpec& spec, bool ood, int max_pairs, uint64_t seed);

struct SqoopOptions {
  int n = 0;
  bool ood = false;
  int max_ood_pairs = 12;
  uint64_t seed = 0;
};

void gen_sqoop(const SqoopSpec& spec, const SqoopOptions& opt, const ExampleSink& emit);

}  // namespace modnet::vqa
