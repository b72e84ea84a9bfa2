#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "streamseg/errors.hpp"

namespace streamseg {

// 16-bit grayscale PNG, host byte order in memory. Only the exact format the
// frame files use is accepted; anything else is a parse error.

inline void write_png16(const std::string& path, int width, int height,
                        const std::vector<std::uint16_t>& data) {
    if (width <= 0 || height <= 0 ||
        data.size() != static_cast<std::size_t>(width) * height)
        throw ConfigError("write_png16: size mismatch for " + path);

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw ParseError(path, "cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw ParseError(path, "libpng write failure");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_set_swap(png);  // file is big-endian, memory is host order
    for (int v = 0; v < height; ++v)
        png_write_row(png, reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(
                               data.data() + static_cast<std::size_t>(v) * width)));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline std::vector<std::uint16_t> read_png16(const std::string& path, int& width, int& height) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw ParseError(path, "cannot open");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        std::fclose(fp);
        throw ParseError(path, "not a PNG file", 0);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    std::vector<std::uint16_t> data;
    std::vector<png_bytep> rows;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ParseError(path, "libpng read failure");
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY ||
        png_get_bit_depth(png, info) != 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ParseError(path, "expected 16-bit grayscale", 8);
    }
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    png_set_swap(png);
    data.assign(static_cast<std::size_t>(width) * height, 0);
    rows.resize(height);
    for (int v = 0; v < height; ++v)
        rows[v] = reinterpret_cast<png_bytep>(data.data() + static_cast<std::size_t>(v) * width);
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return data;
}

}  // namespace streamseg
