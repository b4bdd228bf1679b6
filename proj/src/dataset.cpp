#include "modnet/dataset.hpp"

#include <cstring>

namespace modnet::vqa {

namespace {

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& in, const std::string& path, const char* what) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw FormatError("dataset '" + path + "': truncated " + what);
  return v;
}

}  // namespace

DatasetWriter::DatasetWriter(const std::string& path)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
  if (!out_) throw IoError("cannot open dataset file '" + path + "' for writing");
}

DatasetWriter::~DatasetWriter() {
  if (out_.is_open()) out_.close();
}

void DatasetWriter::append(const Example& e) {
  if (e.images.empty() || e.images.size() > 2)
    throw UsageError("dataset: examples carry 1 or 2 images, got " + std::to_string(e.images.size()));
  size_t plane = static_cast<size_t>(3) * e.image_size * e.image_size;
  for (auto& img : e.images)
    if (img.size() != plane)
      throw ShapeError("dataset: image buffer size " + std::to_string(img.size()) +
                       " does not match 3x" + std::to_string(e.image_size) + "x" +
                       std::to_string(e.image_size));
  write_u32(out_, static_cast<uint32_t>(e.images.size()));
  write_u32(out_, 3);
  write_u32(out_, static_cast<uint32_t>(e.image_size));
  write_u32(out_, static_cast<uint32_t>(e.image_size));
  out_.put(static_cast<char>(e.label));
  write_u32(out_, static_cast<uint32_t>(e.layout.size()));
  for (auto& img : e.images)
    out_.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size() * 4));
  out_.write(e.layout.data(), static_cast<std::streamsize>(e.layout.size()));
  if (!out_) throw IoError("write failed for dataset '" + path_ + "'");
  ++count_;
}

void DatasetWriter::close() {
  out_.close();
  if (out_.fail()) throw IoError("close failed for dataset '" + path_ + "'");
}

DatasetFile::DatasetFile(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open dataset file '" + path + "'");
  for (;;) {
    uint32_t n_images = 0;
    in_.read(reinterpret_cast<char*>(&n_images), 4);
    if (in_.eof()) break;
    if (!in_) throw FormatError("dataset '" + path + "': truncated record header");
    uint32_t channels = read_u32(in_, path, "channel count");
    uint32_t h = read_u32(in_, path, "height");
    uint32_t w = read_u32(in_, path, "width");
    int label = in_.get();
    if (label == EOF) throw FormatError("dataset '" + path + "': truncated label");
    uint32_t layout_len = read_u32(in_, path, "layout length");
    if (channels != 3 || h != w || n_images < 1 || n_images > 2 || layout_len > 4096)
      throw FormatError("dataset '" + path + "': implausible record header at example " +
                        std::to_string(offsets_.size()));
    if (offsets_.empty()) {
      image_size_ = static_cast<int>(h);
      images_per_example_ = static_cast<int>(n_images);
    } else if (image_size_ != static_cast<int>(h) || images_per_example_ != static_cast<int>(n_images)) {
      throw FormatError("dataset '" + path + "': heterogeneous image dims at example " +
                        std::to_string(offsets_.size()));
    }
    offsets_.push_back(static_cast<int64_t>(in_.tellg()));
    int64_t floats = static_cast<int64_t>(n_images) * 3 * h * w;
    in_.seekg(floats * 4, std::ios::cur);
    std::string layout(layout_len, '\0');
    in_.read(layout.data(), layout_len);
    if (!in_) throw FormatError("dataset '" + path + "': truncated example payload at example " +
                                std::to_string(offsets_.size() - 1));
    layouts_.push_back(std::move(layout));
    labels_.push_back(static_cast<uint8_t>(label));
  }
  in_.clear();
}

void DatasetFile::read_images(int i, const std::vector<float*>& dst) const {
  if (i < 0 || i >= size()) throw IndexError("dataset: example index " + std::to_string(i) + " out of range");
  if (static_cast<int>(dst.size()) != images_per_example_)
    throw UsageError("dataset: expected " + std::to_string(images_per_example_) + " destination buffers");
  in_.seekg(offsets_[static_cast<size_t>(i)]);
  int64_t plane = static_cast<int64_t>(3) * image_size_ * image_size_;
  for (float* d : dst) {
    in_.read(reinterpret_cast<char*>(d), plane * 4);
    if (!in_) throw IoError("dataset '" + path_ + "': read failed at example " + std::to_string(i));
  }
}

Example DatasetFile::read(int i) const {
  Example e;
  e.image_size = image_size_;
  e.layout = layout(i);
  e.label = labels_.at(static_cast<size_t>(i));
  e.images.assign(static_cast<size_t>(images_per_example_),
                  std::vector<float>(static_cast<size_t>(3) * image_size_ * image_size_));
  std::vector<float*> ptrs;
  for (auto& img : e.images) ptrs.push_back(img.data());
  read_images(i, ptrs);
  return e;
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kPlacementRetries = 100;

std::vector<float> blank_canvas(int size) {
  return std::vector<float>(static_cast<size_t>(3) * size * size, 0.0f);
}

// attribute-instance membership pools over a combination list
std::vector<std::vector<int>> instance_pools(const std::vector<Combination>& combos, bool member) {
  std::vector<std::vector<int>> pools(static_cast<size_t>(kNumInstances));
  for (int inst = 0; inst < kNumInstances; ++inst)
    for (size_t i = 0; i < combos.size(); ++i)
      if (combos[i].has_instance(inst) == member) pools[static_cast<size_t>(inst)].push_back(static_cast<int>(i));
  return pools;
}

int pick(const std::vector<int>& pool, Rng& rng, const std::string& what) {
  if (pool.empty()) throw GenerationError("empty candidate pool for " + what);
  return pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
}

}  // namespace

void gen_attr_extraction(const CombinationSplit& split, bool multi, const GlyphSource& glyphs,
                         const MnistTaskOptions& opt, const ExampleSink& emit) {
  const auto& combos = opt.use_test_combinations ? split.test : split.train;
  if (combos.empty()) throw GenerationError("attribute extraction: empty combination set");
  int per_question = opt.n / (2 * kNumInstances);
  if (per_question < 1 || opt.n % (2 * kNumInstances) != 0)
    throw GenerationError("attribute extraction: n must be a positive multiple of " +
                          std::to_string(2 * kNumInstances) + ", got " + std::to_string(opt.n));
  auto pos_pools = instance_pools(combos, true);
  auto neg_pools = instance_pools(combos, false);
  int canvas_size = multi ? 64 : 28;

  Rng rng(mix_seed(opt.seed, multi ? 0xe2ull : 0xe1ull));
  for (int q = 0; q < kNumInstances; ++q) {
    std::string name = instance_name(q);
    for (int k = 0; k < per_question; ++k) {
      for (int positive = 1; positive >= 0; --positive) {
        const auto& primary_pool = positive ? pos_pools[static_cast<size_t>(q)] : neg_pools[static_cast<size_t>(q)];
        Combination primary = combos[static_cast<size_t>(pick(primary_pool, rng, "question '" + name + "'"))];

        Example e;
        e.image_size = canvas_size;
        e.layout = name;
        e.label = static_cast<uint8_t>(positive);
        auto canvas = blank_canvas(canvas_size);
        auto glyph = glyphs.sample(primary.category, opt.glyph_split, rng);

        if (!multi) {
          int cx = canvas_size / 2 + rng.uniform_int(3) - 1;
          int cy = canvas_size / 2 + rng.uniform_int(3) - 1;
          render_object(canvas, canvas_size, glyph, primary, cx, cy);
          e.combinations = {primary};
          e.centers = {{cx, cy}};
        } else {
          // the confounder must not flip a negative answer to yes
          Combination confounder;
          if (positive) {
            confounder = combos[static_cast<size_t>(rng.uniform_int(static_cast<int>(combos.size())))];
          } else {
            const auto& conf_pool = neg_pools[static_cast<size_t>(q)];
            confounder = combos[static_cast<size_t>(pick(conf_pool, rng, "confounder for '" + name + "'"))];
          }
          auto conf_glyph = glyphs.sample(confounder.category, opt.glyph_split, rng);
          int t1 = scaled_glyph_size(primary.size), t2 = scaled_glyph_size(confounder.size);
          bool placed = false;
          for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
            int cx1 = t1 / 2 + rng.uniform_int(canvas_size - t1);
            int cy1 = t1 / 2 + rng.uniform_int(canvas_size - t1);
            int cx2 = t2 / 2 + rng.uniform_int(canvas_size - t2);
            int cy2 = t2 / 2 + rng.uniform_int(canvas_size - t2);
            PlacedBox b1{cx1 - t1 / 2, cy1 - t1 / 2, t1, t1};
            PlacedBox b2{cx2 - t2 / 2, cy2 - t2 / 2, t2, t2};
            if (b1.overlaps(b2)) continue;
            render_object(canvas, canvas_size, glyph, primary, cx1, cy1);
            render_object(canvas, canvas_size, conf_glyph, confounder, cx2, cy2);
            e.combinations = {primary, confounder};
            e.centers = {{cx1, cy1}, {cx2, cy2}};
            placed = true;
          }
          if (!placed)
            throw GenerationError("attribute extraction: placement failed after " +
                                  std::to_string(kPlacementRetries) + " attempts");
        }
        e.images.push_back(std::move(canvas));
        emit(e);
      }
    }
  }
}

void gen_attr_comparison(const CombinationSplit& split, const GlyphSource& glyphs,
                         const MnistTaskOptions& opt, const ExampleSink& emit) {
  const auto& combos = opt.use_test_combinations ? split.test : split.train;
  if (combos.empty()) throw GenerationError("attribute comparison: empty combination set");
  int n_questions = static_cast<int>(kPairRelations.size());
  int per_question = opt.n / (2 * n_questions);
  if (per_question < 1 || opt.n % (2 * n_questions) != 0)
    throw GenerationError("attribute comparison: n must be a positive multiple of " +
                          std::to_string(2 * n_questions) + ", got " + std::to_string(opt.n));

  Rng rng(mix_seed(opt.seed, 0xc3ull));
  for (const char* relation : kPairRelations) {
    std::string leaf = pair_relation_leaf(relation);
    std::string layout = std::string(relation) + "(" + leaf + ", " + leaf + ")";
    for (int k = 0; k < per_question; ++k) {
      for (int positive = 1; positive >= 0; --positive) {
        Combination a, b;
        bool found = false;
        for (int attempt = 0; attempt < 100000 && !found; ++attempt) {
          a = combos[static_cast<size_t>(rng.uniform_int(static_cast<int>(combos.size())))];
          b = combos[static_cast<size_t>(rng.uniform_int(static_cast<int>(combos.size())))];
          found = pair_relation_holds(relation, a, b) == static_cast<bool>(positive);
        }
        if (!found)
          throw GenerationError(std::string("attribute comparison: no ") +
                                (positive ? "positive" : "negative") + " pair for '" + relation + "'");
        Example e;
        e.image_size = 28;
        e.layout = layout;
        e.label = static_cast<uint8_t>(positive);
        for (const Combination& c : {a, b}) {
          auto canvas = blank_canvas(28);
          auto glyph = glyphs.sample(c.category, opt.glyph_split, rng);
          int cx = 14 + rng.uniform_int(3) - 1, cy = 14 + rng.uniform_int(3) - 1;
          render_object(canvas, 28, glyph, c, cx, cy);
          e.images.push_back(std::move(canvas));
          e.centers.push_back({cx, cy});
        }
        e.combinations = {a, b};
        emit(e);
      }
    }
  }
}

namespace {

// an attribute instance of `a` that `b` does not share
int distinguishing_instance(const Combination& a, const Combination& b, Rng& rng) {
  std::vector<int> options;
  for (int inst : a.instances())
    if (!b.has_instance(inst)) options.push_back(inst);
  if (options.empty()) return -1;
  return options[static_cast<size_t>(rng.uniform_int(static_cast<int>(options.size())))];
}

}  // namespace

void gen_spatial_mnist(const CombinationSplit& split, const GlyphSource& glyphs,
                       const MnistTaskOptions& opt, const ExampleSink& emit) {
  const auto& combos = opt.use_test_combinations ? split.test : split.train;
  if (combos.size() < 2) throw GenerationError("spatial task: need at least two combinations");
  int n_relations = static_cast<int>(kSpatialRelations.size());
  if (opt.n % (2 * n_relations) != 0 || opt.n < 2 * n_relations)
    throw GenerationError("spatial task: n must be a positive multiple of " +
                          std::to_string(2 * n_relations) + ", got " + std::to_string(opt.n));
  int questions_per_relation = opt.n / (2 * n_relations);
  const int canvas_size = 64;
  const int margin = 6;

  Rng rng(mix_seed(opt.seed, 0x59ull));
  for (int rel = 0; rel < n_relations; ++rel) {
    std::string relation = kSpatialRelations[static_cast<size_t>(rel)];
    bool horizontal = relation == "left_of" || relation == "right_of";
    for (int k = 0; k < questions_per_relation; ++k) {
      // sample a pair of mutually distinguishable objects
      Combination a, b;
      int inst_a = -1, inst_b = -1;
      for (int attempt = 0; attempt < 100000 && inst_b < 0; ++attempt) {
        a = combos[static_cast<size_t>(rng.uniform_int(static_cast<int>(combos.size())))];
        b = combos[static_cast<size_t>(rng.uniform_int(static_cast<int>(combos.size())))];
        inst_a = distinguishing_instance(a, b, rng);
        if (inst_a < 0) continue;
        inst_b = distinguishing_instance(b, a, rng);
      }
      if (inst_b < 0) throw GenerationError("spatial task: could not find a distinguishable object pair");
      std::string layout =
          relation + "(" + instance_name(inst_a) + ", " + instance_name(inst_b) + ")";

      // the same question is emitted once true and once false
      for (int positive = 1; positive >= 0; --positive) {
        int t1 = scaled_glyph_size(a.size), t2 = scaled_glyph_size(b.size);
        auto glyph_a = glyphs.sample(a.category, opt.glyph_split, rng);
        auto glyph_b = glyphs.sample(b.category, opt.glyph_split, rng);
        bool placed = false;
        Example e;
        e.image_size = canvas_size;
        e.layout = layout;
        e.label = static_cast<uint8_t>(positive);
        for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
          int cx1 = t1 / 2 + rng.uniform_int(canvas_size - t1);
          int cy1 = t1 / 2 + rng.uniform_int(canvas_size - t1);
          int cx2 = t2 / 2 + rng.uniform_int(canvas_size - t2);
          int cy2 = t2 / 2 + rng.uniform_int(canvas_size - t2);
          // "a rel b" must hold exactly when the example is positive
          bool rel_holds;
          if (horizontal) {
            if (std::abs(cx1 - cx2) < margin) continue;
            rel_holds = relation == "left_of" ? cx1 < cx2 : cx1 > cx2;
          } else {
            if (std::abs(cy1 - cy2) < margin) continue;
            rel_holds = relation == "above" ? cy1 < cy2 : cy1 > cy2;
          }
          if (rel_holds != static_cast<bool>(positive)) continue;
          PlacedBox b1{cx1 - t1 / 2, cy1 - t1 / 2, t1, t1};
          PlacedBox b2{cx2 - t2 / 2, cy2 - t2 / 2, t2, t2};
          if (b1.overlaps(b2)) continue;
          auto canvas = blank_canvas(canvas_size);
          render_object(canvas, canvas_size, glyph_a, a, cx1, cy1);
          render_object(canvas, canvas_size, glyph_b, b, cx2, cy2);
          e.images.push_back(std::move(canvas));
          e.combinations = {a, b};
          e.centers = {{cx1, cy1}, {cx2, cy2}};
          placed = true;
        }
        if (!placed)
          throw GenerationError("spatial task: placement failed after " +
                                std::to_string(kPlacementRetries) + " attempts");
        emit(e);
      }
    }
  }
}

}  // namespace modnet::vqa
