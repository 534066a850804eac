#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "limis/core.hpp"

namespace limis::png {

/// Grayscale image as decoded from / encoded to PNG. 8- or 16-bit samples are
/// both held in uint16_t.
struct GrayImage {
    int width = 0;
    int height = 0;
    int bit_depth = 8;
    std::vector<std::uint16_t> samples;
    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

namespace detail {

inline void write_callback(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

struct ReadCursor {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t offset;
};

inline void read_callback(png_structp png, png_bytep out, png_size_t length) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->offset + length > cur->size) png_error(png, "read past end of PNG buffer");
    std::memcpy(out, cur->data + cur->offset, length);
    cur->offset += length;
}

} // namespace detail

inline std::vector<std::uint8_t> encode(const GrayImage& image) {
    if (image.bit_depth != 8 && image.bit_depth != 16) {
        throw Error(ErrorCode::InvalidArgument, "PNG bit depth must be 8 or 16");
    }
    if (image.width <= 0 || image.height <= 0 ||
        image.samples.size() != static_cast<std::size_t>(image.width) * image.height) {
        throw Error(ErrorCode::DimensionMismatch, "PNG sample count does not match dimensions");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::IoError, "libpng initialisation failed");
    }
    std::vector<std::uint8_t> out;
    const int bytes_per_sample = image.bit_depth / 8;
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * bytes_per_sample);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::IoError, "PNG encoding failed");
    }
    png_set_write_fn(png, &out, detail::write_callback, nullptr);
    png_set_IHDR(png, info, image.width, image.height, image.bit_depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const std::uint16_t v = image.samples[static_cast<std::size_t>(y) * image.width + x];
            if (bytes_per_sample == 1) {
                row[x] = static_cast<std::uint8_t>(v);
            } else {
                row[2 * x] = static_cast<std::uint8_t>(v >> 8); // PNG is big-endian
                row[2 * x + 1] = static_cast<std::uint8_t>(v & 0xff);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

inline GrayImage decode(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw Error(ErrorCode::BadMagic, "not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::IoError, "libpng initialisation failed");
    }
    detail::ReadCursor cursor{bytes.data(), bytes.size(), 0};
    GrayImage image;
    std::vector<std::uint8_t> row;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::IoError, "PNG decoding failed");
    }
    png_set_read_fn(png, &cursor, detail::read_callback);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16) ||
        png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::UnsupportedDatatype, "only non-interlaced 8/16-bit grayscale PNG is supported");
    }
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.height = static_cast<int>(png_get_image_height(png, info));
    image.bit_depth = depth;
    image.samples.resize(static_cast<std::size_t>(image.width) * image.height);
    row.resize(png_get_rowbytes(png, info));
    for (int y = 0; y < image.height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < image.width; ++x) {
            image.samples[static_cast<std::size_t>(y) * image.width + x] =
                depth == 8 ? row[x] : static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

} // namespace limis::png
