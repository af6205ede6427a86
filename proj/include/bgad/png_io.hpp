#pragma once

#include <string>

#include "bgad/image.hpp"
#include "bgad/mask.hpp"

namespace bgad {

// 8-bit non-interlaced PNG. Palette images expand to RGB, 16-bit depths are
// reduced, alpha is stripped. Writes go through a temp file + rename.
RasterImage read_png(const std::string& path);
void write_png(const std::string& path, const RasterImage& img);

// masks are grayscale PNGs with strict 0/255 semantics
Mask read_mask_png(const std::string& path);
void write_mask_png(const std::string& path, const Mask& mask);

}  // namespace bgad
