#include <algorithm>
#include <cmath>

#include "modnet/dataset.hpp"

namespace modnet::vqa {

SqoopSpec SqoopSpec::make(int num_objects, int objects_per_image, uint64_t seed) {
  if (num_objects < 2 || num_objects > 36)
    throw ConfigError("sqoop: object count must be in [2, 36], got " + std::to_string(num_objects));
  if (num_objects % 2 != 0)
    throw ConfigError("sqoop: object count must be even for a perfect matching, got " +
                      std::to_string(num_objects));
  SqoopSpec spec;
  spec.objects_per_image = objects_per_image;
  for (char c = 'a'; c <= 'z' && static_cast<int>(spec.objects.size()) < num_objects; ++c)
    spec.objects.emplace_back(1, c);
  for (char c = '0'; c <= '9' && static_cast<int>(spec.objects.size()) < num_objects; ++c)
    spec.objects.push_back(std::string("d") + c);

  std::vector<int> order(static_cast<size_t>(num_objects));
  for (int i = 0; i < num_objects; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(mix_seed(seed, 0x5a00ull));
  rng.shuffle(order);
  for (int i = 0; i + 1 < num_objects; i += 2)
    spec.pairing.emplace_back(std::min(order[static_cast<size_t>(i)], order[static_cast<size_t>(i + 1)]),
                              std::max(order[static_cast<size_t>(i)], order[static_cast<size_t>(i + 1)]));
  std::sort(spec.pairing.begin(), spec.pairing.end());
  spec.validate();
  return spec;
}

void SqoopSpec::validate() const {
  if (objects.size() < 2) throw ConfigError("sqoop: need at least two objects");
  if (objects_per_image != 2 && objects_per_image != 5)
    throw ConfigError("sqoop: objects per image must be 2 or 5, got " + std::to_string(objects_per_image));
  if (canvas != 64 && canvas != 28) throw ConfigError("sqoop: canvas must be 28 or 64");
  std::vector<int> degree(objects.size(), 0);
  for (auto& [a, b] : pairing) {
    if (a < 0 || b < 0 || a >= static_cast<int>(objects.size()) || b >= static_cast<int>(objects.size()) ||
        a == b)
      throw ConfigError("sqoop: invalid pairing entry");
    ++degree[static_cast<size_t>(a)];
    ++degree[static_cast<size_t>(b)];
  }
  for (size_t i = 0; i < degree.size(); ++i)
    if (degree[i] != 1)
      throw ConfigError("sqoop: pairing is not a perfect matching (object '" + objects[i] + "' has degree " +
                        std::to_string(degree[i]) + ")");
}

bool SqoopSpec::pair_allowed(int x, int y) const {
  for (auto& [a, b] : pairing)
    if ((a == x && b == y) || (a == y && b == x)) return true;
  return false;
}

int SqoopSpec::object_index(const std::string& name) const {
  for (size_t i = 0; i < objects.size(); ++i)
    if (objects[i] == name) return static_cast<int>(i);
  return -1;
}

std::vector<SqoopQuestion> sqoop_questions(const SqoopSpec& spec, bool ood, int max_pairs, uint64_t seed) {
  int n = static_cast<int>(spec.objects.size());
  std::vector<std::pair<int, int>> pairs;
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < n; ++y) {
      if (x == y) continue;
      if (spec.pair_allowed(x, y) != ood) pairs.emplace_back(x, y);
    }
  if (ood && max_pairs > 0 && static_cast<int>(pairs.size()) > max_pairs) {
    Rng rng(mix_seed(seed, 0x5a01ull));
    rng.shuffle(pairs);
    pairs.resize(static_cast<size_t>(max_pairs));
    std::sort(pairs.begin(), pairs.end());
  }
  std::vector<SqoopQuestion> questions;
  for (auto& [x, y] : pairs)
    for (int rel = 0; rel < static_cast<int>(kSpatialRelations.size()); ++rel)
      questions.push_back({x, y, rel});
  return questions;
}

void gen_sqoop(const SqoopSpec& spec, const SqoopOptions& opt, const ExampleSink& emit) {
  spec.validate();
  auto questions = sqoop_questions(spec, opt.ood, opt.max_ood_pairs, opt.seed);
  if (questions.empty()) throw GenerationError("sqoop: no questions available");
  int per_question = opt.n / (2 * static_cast<int>(questions.size()));
  if (per_question < 1 || opt.n % (2 * static_cast<int>(questions.size())) != 0)
    throw GenerationError("sqoop: n must be a positive multiple of " +
                          std::to_string(2 * questions.size()) + " (two per question), got " +
                          std::to_string(opt.n));

  const int margin = 6;
  const int retries = 100;
  int t = spec.glyph_px;
  Rng rng(mix_seed(opt.seed, opt.ood ? 0x5a03ull : 0x5a02ull));

  // pre-rasterized glyphs, already scaled to the on-canvas size
  std::vector<GlyphBitmap> patches;
  for (const auto& name : spec.objects) {
    char sym = name.size() == 1 ? name[0] : name[1];
    patches.push_back(resize_glyph(render_stroke_glyph(sym, 28), t));
  }

  for (const auto& q : questions) {
    std::string relation = kSpatialRelations[static_cast<size_t>(q.relation)];
    bool horizontal = q.relation <= 1;  // left_of, right_of
    std::string layout = relation + "(" + spec.objects[static_cast<size_t>(q.x)] + ", " +
                         spec.objects[static_cast<size_t>(q.y)] + ")";
    for (int k = 0; k < per_question; ++k) {
      for (int positive = 1; positive >= 0; --positive) {
        Example e;
        e.image_size = spec.canvas;
        e.layout = layout;
        e.label = static_cast<uint8_t>(positive);

        bool placed = false;
        for (int attempt = 0; attempt < retries && !placed; ++attempt) {
          std::vector<PlacedBox> boxes;
          std::vector<std::pair<int, int>> centers;
          auto propose = [&]() {
            int c = t / 2 + rng.uniform_int(spec.canvas - t);
            return c;
          };
          int cx1 = propose(), cy1 = propose(), cx2 = propose(), cy2 = propose();
          bool rel_holds;
          if (horizontal) {
            if (std::abs(cx1 - cx2) < margin) continue;
            rel_holds = relation == "left_of" ? cx1 < cx2 : cx1 > cx2;
          } else {
            if (std::abs(cy1 - cy2) < margin) continue;
            rel_holds = relation == "above" ? cy1 < cy2 : cy1 > cy2;
          }
          if (rel_holds != static_cast<bool>(positive)) continue;
          PlacedBox b1{cx1 - t / 2, cy1 - t / 2, t, t};
          PlacedBox b2{cx2 - t / 2, cy2 - t / 2, t, t};
          if (b1.overlaps(b2)) continue;
          boxes = {b1, b2};
          centers = {{cx1, cy1}, {cx2, cy2}};

          // distractors: other objects at free positions
          std::vector<int> distractors;
          if (spec.objects_per_image > 2) {
            std::vector<int> others;
            for (int o = 0; o < static_cast<int>(spec.objects.size()); ++o)
              if (o != q.x && o != q.y) others.push_back(o);
            rng.shuffle(others);
            bool ok = true;
            for (int d = 0; d < spec.objects_per_image - 2 && ok; ++d) {
              bool found = false;
              for (int attempt2 = 0; attempt2 < retries && !found; ++attempt2) {
                int cx = propose(), cy = propose();
                PlacedBox box{cx - t / 2, cy - t / 2, t, t};
                bool clear = true;
                for (auto& other : boxes) clear = clear && !box.overlaps(other);
                if (!clear) continue;
                boxes.push_back(box);
                centers.emplace_back(cx, cy);
                distractors.push_back(others[static_cast<size_t>(d)]);
                found = true;
              }
              ok = found;
            }
            if (!ok) continue;
          }

          std::vector<float> canvas(static_cast<size_t>(3) * spec.canvas * spec.canvas, 0.0f);
          auto draw = [&](int obj, int cx, int cy) {
            render_plain(canvas, spec.canvas, patches[static_cast<size_t>(obj)], t, cx, cy);
          };
          draw(q.x, centers[0].first, centers[0].second);
          draw(q.y, centers[1].first, centers[1].second);
          for (size_t d = 0; d < distractors.size(); ++d)
            draw(distractors[d], centers[d + 2].first, centers[d + 2].second);
          e.images.push_back(std::move(canvas));
          e.centers = centers;
          placed = true;
        }
        if (!placed)
          throw GenerationError("sqoop: placement failed after " + std::to_string(retries) + " attempts");
        emit(e);
      }
    }
  }
}

}  // namespace modnet::vqa
