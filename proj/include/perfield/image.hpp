// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/common.hpp"

#include <png.h>

#include <cmath>
#include <cstring>

namespace perfield {

/// Interleaved double-precision image, row-major.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    double &at(int u, int v, int c) { return data[(static_cast<std::size_t>(v) * width + u) * channels + c]; }
    double at(int u, int v, int c) const { return data[(static_cast<std::size_t>(v) * width + u) * channels + c]; }
    bool empty() const { return data.empty(); }
    bool same_shape(const Image &o) const { return width == o.width && height == o.height && channels == o.channels; }
};

/// Luma with 0.299 / 0.587 / 0.114 weights; single-channel input is copied.
inline Image to_grayscale(const Image &img, double scale = 1.0) {
    Image out(img.width, img.height, 1);
    for (int v = 0; v < img.height; ++v)
        for (int u = 0; u < img.width; ++u) {
            double y;
            if (img.channels >= 3) y = 0.299 * img.at(u, v, 0) + 0.587 * img.at(u, v, 1) + 0.114 * img.at(u, v, 2);
            else y = img.at(u, v, 0);
            out.at(u, v, 0) = y * scale;
        }
    return out;
}

/// value * 255 rounded half-up, clamped to [0, 255].
inline uint8_t to_u8(double x) {
    const double y = std::floor(std::clamp(x, 0.0, 1.0) * 255.0 + 0.5);
    return static_cast<uint8_t>(std::min(255.0, y));
}

namespace detail {

struct PngBuffer {
    std::string bytes;
};

inline void png_write_to_buffer(png_structp png, png_bytep data, png_size_t len) {
    auto *buf = static_cast<PngBuffer *>(png_get_io_ptr(png));
    buf->bytes.append(reinterpret_cast<const char *>(data), len);
}
inline void png_flush_noop(png_structp) {}

inline void png_warning_ignore(png_structp, png_const_charp) {}

inline std::string encode_png(int width, int height, int channels, int bit_depth,
                              const std::vector<uint8_t> &rows /* big-endian samples */) {
    // libpng reports errors by longjmp; every C++ object lives outside the jump scope.
    PngBuffer buf;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_ignore);
    if (!png) throw std::runtime_error("png: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: encode failed");
    }
    {
        png_set_write_fn(png, &buf, png_write_to_buffer, png_flush_noop);
        const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_RGBA;
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
        for (int v = 0; v < height; ++v)
            png_write_row(png, const_cast<png_bytep>(rows.data() + static_cast<std::size_t>(v) * stride));
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
    return std::move(buf.bytes);
}

struct PngReadState {
    const std::string *bytes;
    std::size_t pos = 0;
};

inline void png_read_from_buffer(png_structp png, png_bytep out, png_size_t len) {
    auto *st = static_cast<PngReadState *>(png_get_io_ptr(png));
    if (st->pos + len > st->bytes->size()) png_error(png, "truncated data");
    std::memcpy(out, st->bytes->data() + st->pos, len);
    st->pos += len;
}

} // namespace detail

/// 8-bit PNG; 3-channel images are written as RGB, 1-channel as grey.
inline void write_png(const std::filesystem::path &path, const Image &img) {
    if (img.channels != 1 && img.channels != 3) throw InvalidArgument("write_png expects 1 or 3 channels");
    std::vector<uint8_t> rows(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) rows[i] = to_u8(img.data[i]);
    write_file_atomic(path, detail::encode_png(img.width, img.height, img.channels, 8, rows));
}

/// 16-bit single-channel PNG from raw integer values (e.g. depth in mm).
inline void write_png16(const std::filesystem::path &path, int width, int height, const std::vector<uint16_t> &values) {
    if (values.size() != static_cast<std::size_t>(width) * height) throw InvalidArgument("write_png16 size mismatch");
    std::vector<uint8_t> rows(values.size() * 2);
    for (std::size_t i = 0; i < values.size(); ++i) {
        rows[2 * i] = static_cast<uint8_t>(values[i] >> 8);
        rows[2 * i + 1] = static_cast<uint8_t>(values[i] & 0xff);
    }
    write_file_atomic(path, detail::encode_png(width, height, 1, 16, rows));
}

/// Decoded PNG with raw sample values (0..255 or 0..65535).
struct RawPng {
    int width = 0, height = 0, channels = 0, bit_depth = 8;
    std::vector<uint16_t> samples;
};

inline RawPng read_png_raw(const std::filesystem::path &path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
        throw IoError("not a PNG file: " + path.string());
    RawPng out;
    detail::PngReadState st{&bytes, 0};
    std::vector<uint8_t> rows;
    std::vector<png_bytep> ptrs;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_warning_ignore);
    if (!png) throw std::runtime_error("png: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: decode failed: " + path.string());
    }
    {
        png_set_read_fn(png, &st, detail::png_read_from_buffer);
        png_read_info(png, info);
        const int color = png_get_color_type(png, info);
        int depth = png_get_bit_depth(png, info);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        png_read_update_info(png, info);
        out.width = static_cast<int>(png_get_image_width(png, info));
        out.height = static_cast<int>(png_get_image_height(png, info));
        out.channels = png_get_channels(png, info);
        out.bit_depth = png_get_bit_depth(png, info);
        const std::size_t stride = png_get_rowbytes(png, info);
        rows.resize(stride * out.height);
        ptrs.resize(out.height);
        for (int v = 0; v < out.height; ++v) ptrs[v] = rows.data() + stride * v;
        png_read_image(png, ptrs.data());
        const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
        out.samples.resize(n);
        for (int v = 0; v < out.height; ++v) {
            const uint8_t *row = ptrs[v];
            for (std::size_t i = 0; i < static_cast<std::size_t>(out.width) * out.channels; ++i) {
                const std::size_t o = static_cast<std::size_t>(v) * out.width * out.channels + i;
                out.samples[o] = out.bit_depth == 16 ? static_cast<uint16_t>((row[2 * i] << 8) | row[2 * i + 1])
                                                     : row[i];
            }
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

/// Reads a PNG as RGB in [0, 1]; grey is replicated and alpha dropped.
inline Image read_png_rgb(const std::filesystem::path &path) {
    const RawPng raw = read_png_raw(path);
    const double scale = raw.bit_depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
    Image img(raw.width, raw.height, 3);
    for (int v = 0; v < raw.height; ++v)
        for (int u = 0; u < raw.width; ++u) {
            const std::size_t o = (static_cast<std::size_t>(v) * raw.width + u) * raw.channels;
            for (int c = 0; c < 3; ++c) {
                const int src = raw.channels >= 3 ? c : 0;
                img.at(u, v, c) = raw.samples[o + src] * scale;
            }
        }
    return img;
}

} // namespace perfield
