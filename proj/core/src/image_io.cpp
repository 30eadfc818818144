#include "motiondiff/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace motiondiff {

namespace {

uint8_t quantize(double v) {
    const double q = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0);
    return static_cast<uint8_t>(q);
}

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png(const std::filesystem::path& path, int width, int height, int channels,
               const std::vector<uint8_t>& pixels) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng write error: " + path.string());
    }
    png_init_io(png, fp.get());
    const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, width, height, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y) {
        rows[y] = const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * width * channels);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void read_png(const std::filesystem::path& path, int want_channels, int& width, int& height,
              std::vector<uint8_t>& pixels) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open for reading: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng read error: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (want_channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)) {
        png_set_gray_to_rgb(png);
    }
    if (want_channels == 1 && (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
                               color == PNG_COLOR_TYPE_PALETTE)) {
        png_set_rgb_to_gray(png, 1, -1.0, -1.0);
    }
    png_read_update_info(png, info);

    pixels.resize(static_cast<size_t>(width) * height * want_channels);
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y) {
        rows[y] = pixels.data() + static_cast<size_t>(y) * width * want_channels;
    }
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw std::invalid_argument("write_png_rgb: expected (3, H, W), got " + image.shape_str());
    }
    const int H = image.dim(1), W = image.dim(2);
    std::vector<uint8_t> px(static_cast<size_t>(H) * W * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                px[(static_cast<size_t>(y) * W + x) * 3 + c] = quantize(image.at(c, y, x));
            }
        }
    }
    write_png(path, W, H, 3, px);
}

void write_png_gray(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 2) {
        throw std::invalid_argument("write_png_gray: expected (H, W), got " + image.shape_str());
    }
    const int H = image.dim(0), W = image.dim(1);
    std::vector<uint8_t> px(static_cast<size_t>(H) * W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) px[static_cast<size_t>(y) * W + x] = quantize(image.at(y, x));
    }
    write_png(path, W, H, 1, px);
}

Tensor read_png_rgb(const std::filesystem::path& path) {
    int W = 0, H = 0;
    std::vector<uint8_t> px;
    read_png(path, 3, W, H, px);
    Tensor out({3, H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.at(c, y, x) = px[(static_cast<size_t>(y) * W + x) * 3 + c] / 255.0;
            }
        }
    }
    return out;
}

Tensor read_png_gray(const std::filesystem::path& path) {
    int W = 0, H = 0;
    std::vector<uint8_t> px;
    read_png(path, 1, W, H, px);
    Tensor out({H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) out.at(y, x) = px[static_cast<size_t>(y) * W + x] / 255.0;
    }
    return out;
}

}  // namespace motiondiff
