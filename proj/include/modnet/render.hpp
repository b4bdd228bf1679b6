#pragma once

#include <vector>

#include "modnet/attributes.hpp"
#include "modnet/glyphs.hpp"

namespace modnet::vqa {

// Bounding box of a placed object on the canvas, in pixels.
struct PlacedBox {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  bool overlaps(const PlacedBox& o) const {
    return x0 < o.x0 + o.w && o.x0 < x0 + w && y0 < o.y0 + o.h && o.y0 < y0 + h;
  }
};

// Bilinear resample of a square grayscale patch.
GlyphBitmap resize_glyph(const GlyphBitmap& src, int target);

// Tints the glyph with the combination's color, scales it by the size factor,
// multiplies by the light factor and composites it onto a 3-channel canvas
// centered at (cx, cy). Out-of-canvas pixels are clipped.
PlacedBox render_object(std::vector<float>& canvas, int canvas_size, const GlyphBitmap& glyph,
                        const Combination& comb, int cx, int cy);

// Same pipeline for an uncolored (white) glyph, used by the relation task
// over letter/digit objects.
PlacedBox render_plain(std::vector<float>& canvas, int canvas_size, const GlyphBitmap& glyph, int target,
                       int cx, int cy);

// scaled pixel size of a combination's glyph on a 28px base
int scaled_glyph_size(int size_attr);

}  // namespace modnet::vqa
