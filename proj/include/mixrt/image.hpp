// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mixrt/common.hpp"

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

namespace mixrt {

/// Row-major RGB image with channels in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<Rgb> pixels;

    Image() = default;
    Image(int w, int h, const Rgb& fill = Rgb::Zero())
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
        require(w >= 0 && h >= 0, ErrorKind::Domain, "image dimensions must be non-negative");
    }

    Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    const Rgb& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const Image& a, const Image& b) {
        return a.width == b.width && a.height == b.height && a.pixels == b.pixels;
    }
};

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all channels, capped at 99 dB.
inline double psnr(const Image& a, const Image& b) {
    require(a.width == b.width && a.height == b.height, ErrorKind::DimensionMismatch,
            "psnr: image dimensions differ");
    if (a.pixels.empty()) return kPsnrCap;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) sum += (a.pixels[i] - b.pixels[i]).squaredNorm();
    const double mse = sum / (3.0 * static_cast<double>(a.pixels.size()));
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Rounds every channel to the nearest 8-bit level (what a PNG round trip does).
inline Image quantize_8bit(const Image& img) {
    Image out = img;
    for (auto& p : out.pixels)
        for (int c = 0; c < 3; ++c) p[c] = to_byte(p[c]) / 255.0;
    return out;
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

/// Interleaved 8-bit raster with 1 (gray), 3 (rgb) or 4 (rgba) channels.
struct Raster8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> data;

    friend bool operator==(const Raster8&, const Raster8&) = default;
};

namespace png_detail {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void error_fn(png_structp png, png_const_charp msg) {
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    if (what) *what = msg;
    png_longjmp(png, 1);
}
inline void warning_fn(png_structp, png_const_charp) {}
}  // namespace png_detail

inline void write_png(const std::filesystem::path& path, const Raster8& r) {
    require(r.channels == 1 || r.channels == 3 || r.channels == 4, ErrorKind::Domain, "png: unsupported channels");
    require(r.data.size() == static_cast<std::size_t>(r.width) * r.height * r.channels,
            ErrorKind::DimensionMismatch, "png: raster size mismatch");
    png_detail::FilePtr file(std::fopen(path.string().c_str(), "wb"));
    require(file != nullptr, ErrorKind::Io, "cannot open " + path.string() + " for writing");
    std::string what;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &what, png_detail::error_fn,
                                              png_detail::warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::Io, "png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::Io, "png: write failed for " + path.string() + ": " + what);
    }
    png_init_io(png, file.get());
    const int color = r.channels == 1 ? PNG_COLOR_TYPE_GRAY
                      : r.channels == 3 ? PNG_COLOR_TYPE_RGB
                                        : PNG_COLOR_TYPE_RGBA;
    png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), 8, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(r.width) * r.channels;
    for (int y = 0; y < r.height; ++y)
        png_write_row(png, const_cast<png_bytep>(r.data.data() + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Raster8 read_png(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), ErrorKind::MissingFile, "missing file " + path.string());
    png_detail::FilePtr file(std::fopen(path.string().c_str(), "rb"));
    require(file != nullptr, ErrorKind::Io, "cannot open " + path.string());
    unsigned char sig[8] = {};
    require(std::fread(sig, 1, 8, file.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0, ErrorKind::Format,
            path.string() + " is not a PNG file");
    std::string what;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &what, png_detail::error_fn,
                                             png_detail::warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::Io, "png: allocation failure");
    }
    Raster8 r;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::Format, "png: decode failed for " + path.string() + ": " + what);
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);
    r.width = static_cast<int>(png_get_image_width(png, info));
    r.height = static_cast<int>(png_get_image_height(png, info));
    r.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    r.data.resize(stride * r.height);
    std::vector<png_bytep> rows(static_cast<std::size_t>(r.height));
    for (int y = 0; y < r.height; ++y) rows[y] = r.data.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    if (r.channels == 2) {  // gray + alpha: drop alpha
        Raster8 g{r.width, r.height, 1, {}};
        g.data.resize(static_cast<std::size_t>(r.width) * r.height);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = r.data[2 * i];
        return g;
    }
    return r;
}

inline void write_image_png(const std::filesystem::path& path, const Image& img) {
    Raster8 r{img.width, img.height, 3, {}};
    r.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        for (int c = 0; c < 3; ++c) r.data[3 * i + c] = to_byte(img.pixels[i][c]);
    write_png(path, r);
}

inline Image read_image_png(const std::filesystem::path& path) {
    const Raster8 r = read_png(path);
    Image img(r.width, r.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        if (r.channels >= 3) {
            for (int c = 0; c < 3; ++c) img.pixels[i][c] = r.data[i * r.channels + c] / 255.0;
        } else {
            img.pixels[i].setConstant(r.data[i * r.channels] / 255.0);
        }
    }
    return img;
}

}  // namespace mixrt
