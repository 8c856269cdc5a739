// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "plenopt/renderer.hpp"

namespace plenopt {

// 8-bit RGB PNG encode/decode. Training converts to [0,1] doubles at load.

inline void save_png(const ImageBuffer& img, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("save_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("save_png: libpng failure writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(x, y, c), 0.0, 1.0);
                row[static_cast<std::size_t>(3 * x + c)] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline ImageBuffer load_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("load_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("load_png: libpng failure reading " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    ImageBuffer img;
    img.width = static_cast<int>(width);
    img.height = static_cast<int>(height);
    img.rgb.assign(static_cast<std::size_t>(width) * height * 3, 0.0);
    std::vector<png_byte> row(static_cast<std::size_t>(width) * 3);
    for (png_uint_32 y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(static_cast<int>(x), static_cast<int>(y), c) =
                    row[static_cast<std::size_t>(3 * x) + static_cast<std::size_t>(c)] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

// Simple polyline plot for loss/ATE traces (--plot flag); white canvas,
// axes-free, one series per call color.
inline void draw_series(ImageBuffer& canvas, const std::vector<double>& ys, const Vec3& color) {
    if (ys.size() < 2) return;
    double lo = ys[0], hi = ys[0];
    for (double y : ys) {
        lo = std::min(lo, y);
        hi = std::max(hi, y);
    }
    if (hi - lo < 1e-12) hi = lo + 1e-12;
    const int w = canvas.width, h = canvas.height;
    auto plot_point = [&](int x, int y) {
        if (x >= 0 && x < w && y >= 0 && y < h)
            for (int c = 0; c < 3; ++c) canvas.at(x, y, c) = color[static_cast<std::size_t>(c)];
    };
    for (std::size_t i = 0; i + 1 < ys.size(); ++i) {
        const double x0 = static_cast<double>(i) / static_cast<double>(ys.size() - 1) * (w - 1);
        const double x1 = static_cast<double>(i + 1) / static_cast<double>(ys.size() - 1) * (w - 1);
        const double y0 = (1.0 - (ys[i] - lo) / (hi - lo)) * (h - 1);
        const double y1 = (1.0 - (ys[i + 1] - lo) / (hi - lo)) * (h - 1);
        const int steps = std::max(2, static_cast<int>(std::abs(x1 - x0) + std::abs(y1 - y0)) + 1);
        for (int s = 0; s <= steps; ++s) {
            const double f = static_cast<double>(s) / steps;
            plot_point(static_cast<int>(std::lround(x0 + f * (x1 - x0))),
                       static_cast<int>(std::lround(y0 + f * (y1 - y0))));
        }
    }
}

}  // namespace plenopt
