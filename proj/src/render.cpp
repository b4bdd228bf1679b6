#include "modnet/render.hpp"

#include <algorithm>
#include <cmath>

namespace modnet::vqa {

GlyphBitmap resize_glyph(const GlyphBitmap& src, int target) {
  if (target == src.size) return src;
  GlyphBitmap out;
  out.size = target;
  out.pix.assign(static_cast<size_t>(target) * target, 0.0f);
  float scale = static_cast<float>(src.size) / static_cast<float>(target);
  for (int y = 0; y < target; ++y)
    for (int x = 0; x < target; ++x) {
      float sx = (static_cast<float>(x) + 0.5f) * scale - 0.5f;
      float sy = (static_cast<float>(y) + 0.5f) * scale - 0.5f;
      int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      float fx = sx - static_cast<float>(x0), fy = sy - static_cast<float>(y0);
      auto at = [&](int yy, int xx) -> float {
        if (xx < 0 || xx >= src.size || yy < 0 || yy >= src.size) return 0.0f;
        return src.pix[static_cast<size_t>(yy) * src.size + xx];
      };
      float v = at(y0, x0) * (1 - fx) * (1 - fy) + at(y0, x0 + 1) * fx * (1 - fy) +
                at(y0 + 1, x0) * (1 - fx) * fy + at(y0 + 1, x0 + 1) * fx * fy;
      out.pix[static_cast<size_t>(y) * target + x] = v;
    }
  return out;
}

int scaled_glyph_size(int size_attr) {
  return static_cast<int>(std::lround(28.0f * kSizeFactors[static_cast<size_t>(size_attr)]));
}

namespace {

PlacedBox composite(std::vector<float>& canvas, int canvas_size, const GlyphBitmap& patch, int cx, int cy,
                    const float rgb[3], float light) {
  int t = patch.size;
  int x0 = cx - t / 2, y0 = cy - t / 2;
  for (int y = 0; y < t; ++y) {
    int yy = y0 + y;
    if (yy < 0 || yy >= canvas_size) continue;
    for (int x = 0; x < t; ++x) {
      int xx = x0 + x;
      if (xx < 0 || xx >= canvas_size) continue;
      float g = patch.pix[static_cast<size_t>(y) * t + x];
      if (g == 0.0f) continue;
      for (int c = 0; c < 3; ++c) {
        float v = g * rgb[c] * light;
        float& dst = canvas[(static_cast<size_t>(c) * canvas_size + yy) * canvas_size + xx];
        dst = std::max(dst, v);
      }
    }
  }
  return {x0, y0, t, t};
}

}  // namespace

PlacedBox render_object(std::vector<float>& canvas, int canvas_size, const GlyphBitmap& glyph,
                        const Combination& comb, int cx, int cy) {
  if (static_cast<int>(canvas.size()) != 3 * canvas_size * canvas_size)
    throw ShapeError("render_object: canvas buffer does not match size " + std::to_string(canvas_size));
  GlyphBitmap patch = resize_glyph(glyph, scaled_glyph_size(comb.size));
  const auto& rgb = kColorRgb[static_cast<size_t>(comb.color)];
  float rgbf[3] = {rgb[0], rgb[1], rgb[2]};
  return composite(canvas, canvas_size, patch, cx, cy, rgbf, kLightFactors[static_cast<size_t>(comb.light)]);
}

PlacedBox render_plain(std::vector<float>& canvas, int canvas_size, const GlyphBitmap& glyph, int target,
                       int cx, int cy) {
  GlyphBitmap patch = resize_glyph(glyph, target);
  float white[3] = {1.0f, 1.0f, 1.0f};
  return composite(canvas, canvas_size, patch, cx, cy, white, 1.0f);
}

}  // namespace modnet::vqa
