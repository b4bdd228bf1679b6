#include <algorithm>
#include <cmath>
#include <map>

#include "modnet/glyphs.hpp"

namespace modnet::vqa {

namespace {

struct P {
  float x, y;
};
using Stroke = std::vector<P>;  // polyline in [0,1]^2, y down

// Hand-drawn skeletons; rounded shapes are short polylines, which the stroke
// thickness smooths out at 28px.
std::vector<Stroke> glyph_strokes(char symbol) {
  auto arc = [](float cx, float cy, float rx, float ry, float a0, float a1, int n) {
    Stroke s;
    for (int i = 0; i <= n; ++i) {
      float a = a0 + (a1 - a0) * static_cast<float>(i) / static_cast<float>(n);
      s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return s;
  };
  const float pi = 3.14159265f;
  switch (symbol) {
    case '0': return {arc(0.50f, 0.50f, 0.24f, 0.36f, 0, 2 * pi, 20)};
    case '1': return {{{0.34f, 0.30f}, {0.52f, 0.14f}, {0.52f, 0.86f}}};
    case '2':
      return {{{0.30f, 0.30f}, {0.34f, 0.18f}, {0.50f, 0.12f}, {0.66f, 0.20f}, {0.68f, 0.34f},
               {0.52f, 0.54f}, {0.30f, 0.86f}},
              {{0.30f, 0.86f}, {0.72f, 0.86f}}};
    case '3':
      return {{{0.30f, 0.20f}, {0.48f, 0.12f}, {0.66f, 0.20f}, {0.64f, 0.38f}, {0.48f, 0.46f}},
              {{0.48f, 0.46f}, {0.68f, 0.56f}, {0.68f, 0.74f}, {0.50f, 0.88f}, {0.30f, 0.80f}}};
    case '4':
      return {{{0.58f, 0.12f}, {0.28f, 0.62f}, {0.76f, 0.62f}}, {{0.62f, 0.34f}, {0.62f, 0.88f}}};
    case '5':
      return {{{0.68f, 0.14f}, {0.34f, 0.14f}, {0.32f, 0.46f}},
              {{0.32f, 0.46f}, {0.54f, 0.40f}, {0.70f, 0.52f}, {0.68f, 0.74f}, {0.50f, 0.88f},
               {0.30f, 0.80f}}};
    case '6':
      return {{{0.62f, 0.12f}, {0.44f, 0.24f}, {0.34f, 0.46f}, {0.32f, 0.66f}, {0.44f, 0.86f},
               {0.62f, 0.84f}, {0.70f, 0.68f}, {0.62f, 0.52f}, {0.40f, 0.56f}}};
    case '7': return {{{0.26f, 0.14f}, {0.72f, 0.14f}, {0.42f, 0.88f}}};
    case '8':
      return {arc(0.50f, 0.30f, 0.17f, 0.18f, 0, 2 * pi, 14), arc(0.50f, 0.67f, 0.21f, 0.21f, 0, 2 * pi, 14)};
    case '9':
      return {arc(0.52f, 0.32f, 0.18f, 0.20f, 0, 2 * pi, 14), {{0.70f, 0.34f}, {0.64f, 0.88f}}};
    case 'a': return {{{0.26f, 0.88f}, {0.50f, 0.12f}, {0.74f, 0.88f}}, {{0.36f, 0.60f}, {0.64f, 0.60f}}};
    case 'b':
      return {{{0.30f, 0.12f}, {0.30f, 0.88f}},
              {{0.30f, 0.12f}, {0.60f, 0.14f}, {0.66f, 0.28f}, {0.58f, 0.46f}, {0.30f, 0.48f}},
              {{0.30f, 0.48f}, {0.64f, 0.52f}, {0.70f, 0.70f}, {0.60f, 0.86f}, {0.30f, 0.88f}}};
    case 'c': return {arc(0.52f, 0.50f, 0.24f, 0.38f, 0.6f * pi, 1.4f * pi, 14)};
    case 'd':
      return {{{0.30f, 0.12f}, {0.30f, 0.88f}},
              {{0.30f, 0.12f}, {0.58f, 0.16f}, {0.70f, 0.40f}, {0.70f, 0.60f}, {0.58f, 0.84f},
               {0.30f, 0.88f}}};
    case 'e':
      return {{{0.68f, 0.12f}, {0.30f, 0.12f}, {0.30f, 0.88f}, {0.68f, 0.88f}}, {{0.30f, 0.50f}, {0.60f, 0.50f}}};
    case 'f':
      return {{{0.68f, 0.12f}, {0.30f, 0.12f}, {0.30f, 0.88f}}, {{0.30f, 0.50f}, {0.60f, 0.50f}}};
    case 'g':
      return {arc(0.52f, 0.50f, 0.24f, 0.38f, 0.6f * pi, 1.45f * pi, 14),
              {{0.74f, 0.58f}, {0.52f, 0.58f}},
              {{0.74f, 0.58f}, {0.74f, 0.82f}}};
    case 'h': return {{{0.30f, 0.12f}, {0.30f, 0.88f}}, {{0.70f, 0.12f}, {0.70f, 0.88f}}, {{0.30f, 0.50f}, {0.70f, 0.50f}}};
    case 'i': return {{{0.40f, 0.12f}, {0.60f, 0.12f}}, {{0.50f, 0.12f}, {0.50f, 0.88f}}, {{0.40f, 0.88f}, {0.60f, 0.88f}}};
    case 'j': return {{{0.62f, 0.12f}, {0.62f, 0.72f}, {0.52f, 0.86f}, {0.38f, 0.84f}, {0.32f, 0.70f}}};
    case 'k':
      return {{{0.30f, 0.12f}, {0.30f, 0.88f}}, {{0.68f, 0.12f}, {0.32f, 0.52f}}, {{0.44f, 0.42f}, {0.70f, 0.88f}}};
    case 'l': return {{{0.32f, 0.12f}, {0.32f, 0.88f}, {0.70f, 0.88f}}};
    case 'm':
      return {{{0.26f, 0.88f}, {0.26f, 0.12f}, {0.50f, 0.52f}, {0.74f, 0.12f}, {0.74f, 0.88f}}};
    case 'n': return {{{0.30f, 0.88f}, {0.30f, 0.12f}, {0.70f, 0.88f}, {0.70f, 0.12f}}};
    case 'o': return {arc(0.50f, 0.50f, 0.26f, 0.38f, 0, 2 * pi, 18)};
    case 'p':
      return {{{0.30f, 0.88f}, {0.30f, 0.12f}},
              {{0.30f, 0.12f}, {0.62f, 0.14f}, {0.70f, 0.30f}, {0.62f, 0.46f}, {0.30f, 0.48f}}};
    case 'q':
      return {arc(0.50f, 0.48f, 0.25f, 0.36f, 0, 2 * pi, 18), {{0.56f, 0.64f}, {0.76f, 0.90f}}};
    case 'r':
      return {{{0.30f, 0.88f}, {0.30f, 0.12f}},
              {{0.30f, 0.12f}, {0.62f, 0.14f}, {0.70f, 0.30f}, {0.62f, 0.46f}, {0.30f, 0.48f}},
              {{0.46f, 0.48f}, {0.72f, 0.88f}}};
    case 's':
      return {{{0.68f, 0.20f}, {0.50f, 0.12f}, {0.32f, 0.22f}, {0.34f, 0.40f}, {0.60f, 0.52f},
               {0.70f, 0.68f}, {0.56f, 0.86f}, {0.32f, 0.82f}}};
    case 't': return {{{0.26f, 0.12f}, {0.74f, 0.12f}}, {{0.50f, 0.12f}, {0.50f, 0.88f}}};
    case 'u': return {{{0.30f, 0.12f}, {0.30f, 0.70f}, {0.40f, 0.88f}, {0.60f, 0.88f}, {0.70f, 0.70f}, {0.70f, 0.12f}}};
    case 'v': return {{{0.28f, 0.12f}, {0.50f, 0.88f}, {0.72f, 0.12f}}};
    case 'w':
      return {{{0.24f, 0.12f}, {0.36f, 0.88f}, {0.50f, 0.40f}, {0.64f, 0.88f}, {0.76f, 0.12f}}};
    case 'x': return {{{0.28f, 0.12f}, {0.72f, 0.88f}}, {{0.72f, 0.12f}, {0.28f, 0.88f}}};
    case 'y': return {{{0.28f, 0.12f}, {0.50f, 0.48f}, {0.72f, 0.12f}}, {{0.50f, 0.48f}, {0.50f, 0.88f}}};
    case 'z': return {{{0.28f, 0.12f}, {0.72f, 0.12f}, {0.28f, 0.88f}, {0.72f, 0.88f}}};
    default: throw IndexError(std::string("no stroke glyph for symbol '") + symbol + "'");
  }
}

float seg_dist(float px, float py, const P& a, const P& b) {
  float vx = b.x - a.x, vy = b.y - a.y;
  float wx = px - a.x, wy = py - a.y;
  float vv = vx * vx + vy * vy;
  float t = vv > 0 ? std::clamp((wx * vx + wy * vy) / vv, 0.0f, 1.0f) : 0.0f;
  float dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

GlyphBitmap rasterize(const std::vector<Stroke>& strokes, int size, float thickness) {
  GlyphBitmap g;
  g.size = size;
  g.pix.assign(static_cast<size_t>(size) * size, 0.0f);
  float aa = 0.7f / static_cast<float>(size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      float px = (static_cast<float>(x) + 0.5f) / static_cast<float>(size);
      float py = (static_cast<float>(y) + 0.5f) / static_cast<float>(size);
      float d = 1e9f;
      for (const auto& s : strokes)
        for (size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, seg_dist(px, py, s[i], s[i + 1]));
      float v = std::clamp((thickness - d) / aa + 0.5f, 0.0f, 1.0f);
      g.pix[static_cast<size_t>(y) * size + x] = v;
    }
  return g;
}

}  // namespace

GlyphBitmap render_stroke_glyph(char symbol, int size) {
  return rasterize(glyph_strokes(symbol), size, 0.045f);
}

SyntheticGlyphs::SyntheticGlyphs(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  for (auto& s : symbols_) {
    if (s.size() != 1) throw ConfigError("synthetic glyphs: symbols must be single characters, got '" + s + "'");
    glyph_strokes(s[0]);  // validate early
  }
}

std::unique_ptr<SyntheticGlyphs> SyntheticGlyphs::digits() {
  std::vector<std::string> syms;
  for (char c = '0'; c <= '9'; ++c) syms.emplace_back(1, c);
  return std::make_unique<SyntheticGlyphs>(std::move(syms));
}

GlyphBitmap SyntheticGlyphs::sample(int category, GlyphSplit split, Rng& rng) const {
  (void)split;  // synthetic instances are identically distributed per split
  if (category < 0 || category >= num_categories())
    throw IndexError("synthetic glyphs: category " + std::to_string(category) + " out of range");
  auto strokes = glyph_strokes(symbols_[static_cast<size_t>(category)][0]);

  // seeded instance jitter: rotation, anisotropic scale, shift, thickness
  float rot = static_cast<float>(rng.uniform(-0.16, 0.16));
  float sx = static_cast<float>(rng.uniform(0.88, 1.10));
  float sy = static_cast<float>(rng.uniform(0.88, 1.10));
  float tx = static_cast<float>(rng.uniform(-0.05, 0.05));
  float ty = static_cast<float>(rng.uniform(-0.05, 0.05));
  float shear = static_cast<float>(rng.uniform(-0.12, 0.12));
  float thickness = static_cast<float>(rng.uniform(0.035, 0.060));

  float cr = std::cos(rot), sr = std::sin(rot);
  for (auto& stroke : strokes)
    for (auto& p : stroke) {
      float x = (p.x - 0.5f) * sx, y = (p.y - 0.5f) * sy;
      x += shear * y;
      float xr = cr * x - sr * y, yr = sr * x + cr * y;
      p.x = std::clamp(xr + 0.5f + tx, 0.03f, 0.97f);
      p.y = std::clamp(yr + 0.5f + ty, 0.03f, 0.97f);
    }
  return rasterize(strokes, 28, thickness);
}

}  // namespace modnet::vqa
