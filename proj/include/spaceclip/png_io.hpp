#pragma once

// PNG readers/writers built on libpng. Depth maps follow the KITTI annotated
// depth convention: single-channel 16-bit PNG, meters = raw / 256, raw 0 means
// no measurement.

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "spaceclip/depth_map.hpp"
#include "spaceclip/image.hpp"

namespace spaceclip {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

}  // namespace detail

/// 16-bit single-channel depth PNG -> meters (raw / 256), raw 0 -> invalid.
inline DepthMap load_depth_png(const std::string& path) {
    detail::FilePtr f(std::fopen(path.c_str(), "rb"));
    SPACECLIP_CHECK(f, "cannot open depth png: ", path);
    png_byte header[8];
    SPACECLIP_CHECK(std::fread(header, 1, 8, f.get()) == 8 && !png_sig_cmp(header, 0, 8),
                    "not a png file: ", path);
    detail::PngReader rd;
    rd.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    SPACECLIP_CHECK(rd.png, "libpng init failed");
    rd.info = png_create_info_struct(rd.png);
    SPACECLIP_CHECK(rd.info, "libpng info init failed");
    if (setjmp(png_jmpbuf(rd.png))) throw Error("png read error: " + path);
    png_init_io(rd.png, f.get());
    png_set_sig_bytes(rd.png, 8);
    png_read_info(rd.png, rd.info);
    const int bit_depth = png_get_bit_depth(rd.png, rd.info);
    const int color_type = png_get_color_type(rd.png, rd.info);
    const int channels = png_get_channels(rd.png, rd.info);
    SPACECLIP_CHECK(bit_depth == 16 && color_type == PNG_COLOR_TYPE_GRAY && channels == 1,
                    "depth png must be single-channel 16-bit grayscale, got bit depth ",
                    bit_depth, ", channels ", channels, ": ", path);
    const int rows = static_cast<int>(png_get_image_height(rd.png, rd.info));
    const int cols = static_cast<int>(png_get_image_width(rd.png, rd.info));
    std::vector<png_byte> row(static_cast<std::size_t>(cols) * 2);
    DepthMap out(rows, cols, 0.0, false);
    for (int r = 0; r < rows; ++r) {
        png_read_row(rd.png, row.data(), nullptr);
        for (int c = 0; c < cols; ++c) {
            const unsigned raw = (static_cast<unsigned>(row[static_cast<std::size_t>(c) * 2]) << 8) |
                                 row[static_cast<std::size_t>(c) * 2 + 1];
            if (raw != 0) out.set(r, c, raw / 256.0, true);
        }
    }
    return out;
}

/// Write depth in the ingestion format: raw = round(meters * 256), invalid -> 0.
inline void save_depth_png(const std::string& path, const DepthMap& depth) {
    detail::FilePtr f(std::fopen(path.c_str(), "wb"));
    SPACECLIP_CHECK(f, "cannot open for writing: ", path);
    detail::PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    SPACECLIP_CHECK(wr.png, "libpng init failed");
    wr.info = png_create_info_struct(wr.png);
    SPACECLIP_CHECK(wr.info, "libpng info init failed");
    if (setjmp(png_jmpbuf(wr.png))) throw Error("png write error: " + path);
    png_init_io(wr.png, f.get());
    png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(depth.cols),
                 static_cast<png_uint_32>(depth.rows), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    std::vector<png_byte> row(static_cast<std::size_t>(depth.cols) * 2);
    for (int r = 0; r < depth.rows; ++r) {
        for (int c = 0; c < depth.cols; ++c) {
            unsigned raw = 0;
            if (depth.is_valid(r, c)) {
                double scaled = depth.at(r, c) * 256.0;
                if (scaled < 0.0) scaled = 0.0;
                if (scaled > 65535.0) scaled = 65535.0;
                raw = static_cast<unsigned>(scaled + 0.5);
            }
            row[static_cast<std::size_t>(c) * 2] = static_cast<png_byte>(raw >> 8);
            row[static_cast<std::size_t>(c) * 2 + 1] = static_cast<png_byte>(raw & 0xff);
        }
        png_write_row(wr.png, row.data());
    }
    png_write_end(wr.png, nullptr);
}

/// 8-bit RGB image in [0, 1]. Accepts gray / palette / rgba inputs.
inline Image load_image_png(const std::string& path) {
    detail::FilePtr f(std::fopen(path.c_str(), "rb"));
    SPACECLIP_CHECK(f, "cannot open image: ", path);
    png_byte header[8];
    SPACECLIP_CHECK(std::fread(header, 1, 8, f.get()) == 8 && !png_sig_cmp(header, 0, 8),
                    "not a png file: ", path);
    detail::PngReader rd;
    rd.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    SPACECLIP_CHECK(rd.png, "libpng init failed");
    rd.info = png_create_info_struct(rd.png);
    SPACECLIP_CHECK(rd.info, "libpng info init failed");
    if (setjmp(png_jmpbuf(rd.png))) throw Error("png read error: " + path);
    png_init_io(rd.png, f.get());
    png_set_sig_bytes(rd.png, 8);
    png_read_info(rd.png, rd.info);
    png_set_strip_16(rd.png);
    png_set_palette_to_rgb(rd.png);
    png_set_expand_gray_1_2_4_to_8(rd.png);
    png_set_strip_alpha(rd.png);
    png_set_gray_to_rgb(rd.png);
    png_read_update_info(rd.png, rd.info);
    const int rows = static_cast<int>(png_get_image_height(rd.png, rd.info));
    const int cols = static_cast<int>(png_get_image_width(rd.png, rd.info));
    SPACECLIP_CHECK(png_get_channels(rd.png, rd.info) == 3,
                    "unexpected channel count after conversion: ", path);
    std::vector<png_byte> row(static_cast<std::size_t>(cols) * 3);
    Image out(rows, cols);
    for (int r = 0; r < rows; ++r) {
        png_read_row(rd.png, row.data(), nullptr);
        for (int c = 0; c < cols; ++c)
            for (int ch = 0; ch < 3; ++ch)
                out.at(r, c, ch) = row[static_cast<std::size_t>(c) * 3 + ch] / 255.0;
    }
    return out;
}

/// Write an 8-bit RGB PNG from [0, 1] image data.
inline void save_image_png(const std::string& path, const Image& img) {
    detail::FilePtr f(std::fopen(path.c_str(), "wb"));
    SPACECLIP_CHECK(f, "cannot open for writing: ", path);
    detail::PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    SPACECLIP_CHECK(wr.png, "libpng init failed");
    wr.info = png_create_info_struct(wr.png);
    SPACECLIP_CHECK(wr.info, "libpng info init failed");
    if (setjmp(png_jmpbuf(wr.png))) throw Error("png write error: " + path);
    png_init_io(wr.png, f.get());
    png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(img.cols),
                 static_cast<png_uint_32>(img.rows), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    std::vector<png_byte> row(static_cast<std::size_t>(img.cols) * 3);
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                double v = img.at(r, c, ch) * 255.0;
                if (v < 0.0) v = 0.0;
                if (v > 255.0) v = 255.0;
                row[static_cast<std::size_t>(c) * 3 + ch] = static_cast<png_byte>(v + 0.5);
            }
        }
        png_write_row(wr.png, row.data());
    }
    png_write_end(wr.png, nullptr);
}

}  // namespace spaceclip
