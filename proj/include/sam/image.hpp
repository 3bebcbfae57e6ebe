#pragma once
// Images are [3,H,W] tensors in [-1,1]. File I/O is 8-bit RGB PNG with the
// linear mapping u8 = round((v+1)*127.5); the 8-bit round trip is exact.

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>

#include "sam/tensor.hpp"

namespace sam {

using LatentCode = Tensor;  // [L,D], one style vector per generator layer

inline void validate_image(const Tensor& img, std::size_t resolution = 0) {
    if (img.ndim() != 3 || img.dim(0) != 3)
        throw std::invalid_argument("image: expected [3,H,W]");
    if (img.dim(1) != img.dim(2)) throw std::invalid_argument("image: must be square");
    if (resolution && img.dim(1) != resolution)
        throw std::invalid_argument("image: resolution mismatch");
    if (!img.all_finite()) throw std::invalid_argument("image: non-finite values");
}

inline Tensor hflip(const Tensor& img) {
    Tensor out = img;
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) out.at(c, y, x) = img.at(c, y, W - 1 - x);
    return out;
}

// ---------------------------------------------------------------------------
// region mask: two-valued weight plane, centered axis-aligned rectangle
// ---------------------------------------------------------------------------

struct RegionMask {
    Tensor weights;  // [H,W]
    double center_w = 1.0;
    double outer_w = 1.0;
    std::size_t side = 0;   // center rectangle side in pixels
    std::size_t start = 0;  // top-left offset of the rectangle
};

inline RegionMask make_region_mask(std::size_t resolution, double center_fraction,
                                   double center_w, double outer_w) {
    if (!(center_fraction > 0.0 && center_fraction <= 1.0))
        throw std::invalid_argument("make_region_mask: center_fraction must be in (0,1]");
    if (!(center_w > 0.0) || !(outer_w > 0.0))
        throw std::invalid_argument("make_region_mask: weights must be positive");
    RegionMask m;
    m.center_w = center_w;
    m.outer_w = outer_w;
    const auto side = static_cast<std::size_t>(
        std::min<long>(static_cast<long>(resolution),
                       std::max<long>(1, std::lround(center_fraction * static_cast<double>(resolution)))));
    m.side = side;
    m.start = (resolution - side) / 2;
    m.weights = Tensor::full({resolution, resolution}, outer_w);
    for (std::size_t y = m.start; y < m.start + side; ++y)
        for (std::size_t x = m.start; x < m.start + side; ++x)
            m.weights.at(y, x) = center_w;
    return m;
}

/// Indicator plane of the mask's center rectangle (1 inside, 0 outside).
inline Tensor center_indicator(const RegionMask& m) {
    Tensor ind = Tensor::zeros(m.weights.shape);
    for (std::size_t y = m.start; y < m.start + m.side; ++y)
        for (std::size_t x = m.start; x < m.start + m.side; ++x) ind.at(y, x) = 1.0;
    return ind;
}

inline Tensor outer_indicator(const RegionMask& m) {
    Tensor ind = center_indicator(m);
    for (double& v : ind.v) v = 1.0 - v;
    return ind;
}

// ---------------------------------------------------------------------------
// PNG I/O
// ---------------------------------------------------------------------------

inline unsigned char to_u8(double v) {
    double s = (v + 1.0) * 127.5;
    if (s < 0.0) s = 0.0;
    if (s > 255.0) s = 255.0;
    return static_cast<unsigned char>(std::lround(s));
}

inline double from_u8(unsigned char u) { return static_cast<double>(u) / 127.5 - 1.0; }

inline void write_png(const std::string& path, const Tensor& img) {
    validate_image(img);
    const std::size_t H = img.dim(1), W = img.dim(2);
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("write_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("write_png: libpng failure for " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(W * 3);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) row[x * 3 + c] = to_u8(img.at(c, y, x));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Tensor read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("read_png: libpng failure for " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const std::size_t W = png_get_image_width(png, info);
    const std::size_t H = png_get_image_height(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    Tensor img({3, H, W});
    std::vector<unsigned char> row(png_get_rowbytes(png, info));
    for (std::size_t y = 0; y < H; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = from_u8(row[x * 3 + c]);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

}  // namespace sam
