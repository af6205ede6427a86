#include "bgad/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>

namespace bgad {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

RasterImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("read_png: libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("read_png: libpng init failed");
    }
    std::vector<png_bytep> rows;
    RasterImage img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: failed to decode " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    int channels = png_get_channels(png, info);
    if (channels == 4) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: unexpected channel count in " + path);
    }
    img.h = static_cast<int>(h);
    img.w = static_cast<int>(w);
    img.c = channels;
    img.pixels.resize(static_cast<size_t>(h) * w * channels);
    rows.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) {
        rows[r] = img.pixels.data() + static_cast<size_t>(r) * w * channels;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, const RasterImage& img) {
    if (img.h < 1 || img.w < 1 || (img.c != 1 && img.c != 3) ||
        img.pixels.size() != static_cast<size_t>(img.h) * img.w * img.c) {
        throw std::invalid_argument("write_png: malformed image");
    }
    std::string tmp = path + ".tmp";
    {
        FilePtr fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp) throw std::runtime_error("write_png: cannot open " + tmp);

        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        if (!png) throw std::runtime_error("write_png: libpng init failed");
        png_infop info = png_create_info_struct(png);
        if (!info) {
            png_destroy_write_struct(&png, nullptr);
            throw std::runtime_error("write_png: libpng init failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw std::runtime_error("write_png: failed to encode " + path);
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, img.w, img.h, 8,
                     img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<png_bytep> rows(img.h);
        for (int r = 0; r < img.h; ++r) {
            rows[r] = const_cast<png_bytep>(img.pixels.data()) +
                      static_cast<size_t>(r) * img.w * img.c;
        }
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::filesystem::rename(tmp, path);
}

Mask read_mask_png(const std::string& path) {
    RasterImage img = read_png(path);
    if (img.c != 1) throw std::runtime_error("read_mask_png: mask is not grayscale: " + path);
    Mask m(img.h, img.w);
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        if (img.pixels[i] == 0) {
            m.data[i] = 0;
        } else if (img.pixels[i] == 255) {
            m.data[i] = 1;
        } else {
            throw std::runtime_error("read_mask_png: pixel value violates 0/255 semantics: " + path);
        }
    }
    return m;
}

void write_mask_png(const std::string& path, const Mask& mask) {
    RasterImage img(mask.h, mask.w, 1);
    for (size_t i = 0; i < mask.data.size(); ++i) img.pixels[i] = mask.data[i] ? 255 : 0;
    write_png(path, img);
}

}  // namespace bgad
