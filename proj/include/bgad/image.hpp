#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bgad {

// 8-bit raster image, row-major with interleaved channels; C ∈ {1, 3}.
struct RasterImage {
    int h = 0, w = 0, c = 1;
    std::vector<uint8_t> pixels;
    std::string id;

    RasterImage() = default;
    RasterImage(int height, int width, int channels)
        : h(height),
          w(width),
          c(channels),
          pixels(static_cast<size_t>(height) * width * channels, 0) {}

    uint8_t at(int r, int col, int ch) const {
        return pixels[(static_cast<size_t>(r) * w + col) * c + ch];
    }
    uint8_t& at(int r, int col, int ch) {
        return pixels[(static_cast<size_t>(r) * w + col) * c + ch];
    }
};

}  // namespace bgad
