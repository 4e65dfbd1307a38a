#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <csetjmp>
#include <cstring>
#include <limits>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "chromalign/core/array_file.hpp"
#include "chromalign/core/error.hpp"

namespace chromalign {

// Interleaved RGB, each sample in [0, 1] (not clamped internally).
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;

    Image() = default;
    Image(int w, int h, float fill = 0.0f) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

    static Image filled(int w, int h, float r, float g, float b) {
        Image im(w, h);
        for (std::size_t i = 0; i < im.rgb.size(); i += 3) {
            im.rgb[i] = r;
            im.rgb[i + 1] = g;
            im.rgb[i + 2] = b;
        }
        return im;
    }

    bool empty() const noexcept { return rgb.empty(); }
    std::size_t pixels() const noexcept { return static_cast<std::size_t>(width) * height; }
    float& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    friend bool operator==(const Image&, const Image&) = default;
};

// Binary mask; nonzero bytes are foreground.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int w, int h, bool fill = false) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

    std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }

    std::size_t area() const noexcept {
        return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
    }
    std::size_t zero_area() const noexcept { return bits.size() - area(); }
    bool empty() const noexcept { return area() == 0; }

    friend bool operator==(const Mask&, const Mask&) = default;
};

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Quantizes to the 8-bit grid, i.e. what a PNG round trip would return.
inline Image quantized(const Image& im) {
    Image out = im;
    for (auto& v : out.rgb) v = static_cast<float>(to_byte(v)) / 255.0f;
    return out;
}

inline Image to_grayscale(const Image& im) {
    Image out(im.width, im.height);
    for (std::size_t i = 0; i < im.pixels(); ++i) {
        const float y = 0.299f * im.rgb[3 * i] + 0.587f * im.rgb[3 * i + 1] + 0.114f * im.rgb[3 * i + 2];
        out.rgb[3 * i] = out.rgb[3 * i + 1] = out.rgb[3 * i + 2] = y;
    }
    return out;
}

// ---- resampling ----

// Nearest neighbour, sampling each destination cell at its centre.
inline Mask resize_nearest(const Mask& m, int w, int h) {
    Mask out(w, h);
    for (int y = 0; y < h; ++y) {
        const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / h));
        for (int x = 0; x < w; ++x) {
            const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / w));
            out.at(x, y) = m.at(sx, sy) ? 1 : 0;
        }
    }
    return out;
}

// Row-major scalar grid.
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<float> values;

    Grid() = default;
    Grid(int w, int h, float fill = 0.0f) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}
    float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    friend bool operator==(const Grid&, const Grid&) = default;
};

// Bilinear with half-pixel centres and edge clamping.
inline Grid resize_bilinear(const Grid& g, int w, int h) {
    Grid out(w, h);
    if (g.width == w && g.height == h) return g;
    for (int y = 0; y < h; ++y) {
        const double fy = std::clamp((y + 0.5) * g.height / h - 0.5, 0.0, g.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, g.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < w; ++x) {
            const double fx = std::clamp((x + 0.5) * g.width / w - 0.5, 0.0, g.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, g.width - 1);
            const double wx = fx - x0;
            const double top = g.at(x0, y0) * (1 - wx) + g.at(x1, y0) * wx;
            const double bot = g.at(x0, y1) * (1 - wx) + g.at(x1, y1) * wx;
            out.at(x, y) = static_cast<float>(top * (1 - wy) + bot * wy);
        }
    }
    return out;
}

inline Image resize_bilinear(const Image& im, int w, int h) {
    if (im.width == w && im.height == h) return im;
    Image out(w, h);
    for (int c = 0; c < 3; ++c) {
        Grid g(im.width, im.height);
        for (int y = 0; y < im.height; ++y)
            for (int x = 0; x < im.width; ++x) g.at(x, y) = im.at(x, y, c);
        const Grid r = resize_bilinear(g, w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(x, y, c) = r.at(x, y);
    }
    return out;
}

// Min-max normalisation to [0,1]; returns false (grid zeroed) when the range collapses.
inline bool normalize_min_max(Grid& g, float collapse_eps = 1e-12f) {
    if (g.values.empty()) return false;
    const auto [lo, hi] = std::minmax_element(g.values.begin(), g.values.end());
    const float mn = *lo, range = *hi - *lo;
    if (!(range > collapse_eps)) {
        std::fill(g.values.begin(), g.values.end(), 0.0f);
        return false;
    }
    for (auto& v : g.values) v = (v - mn) / range;
    return true;
}

// ---- PNG ----

inline Image decode_png(std::span<const unsigned char> bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw Error(std::string("png decode failed: ") + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw Error(std::string("png decode failed: ") + img.message);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height));
    for (std::size_t i = 0; i < buf.size(); ++i) out.rgb[i] = static_cast<float>(buf[i]) / 255.0f;
    return out;
}

inline std::vector<unsigned char> encode_png(const Image& im) {
    require(!im.empty(), "cannot encode an empty image");
    std::vector<unsigned char> px(im.rgb.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(im.rgb[i]);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(im.width);
    img.height = static_cast<png_uint_32>(im.height);
    img.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, px.data(), 0, nullptr))
        throw Error(std::string("png encode failed: ") + img.message);
    std::vector<unsigned char> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, px.data(), 0, nullptr))
        throw Error(std::string("png encode failed: ") + img.message);
    out.resize(size);
    return out;
}

// 1-bit grayscale PNG.
inline std::vector<unsigned char> encode_mask_png(const Mask& m) {
    require(m.width > 0 && m.height > 0, "cannot encode an empty mask");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) throw Error("png allocation failed");
    std::vector<unsigned char> out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("png mask encode failed");
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t n) {
            auto* v = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(p));
            v->insert(v->end(), data, data + n);
        },
        nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(m.width), static_cast<png_uint_32>(m.height), 1,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row((static_cast<std::size_t>(m.width) + 7) / 8);
    for (int y = 0; y < m.height; ++y) {
        std::fill(row.begin(), row.end(), 0);
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y)) row[x / 8] |= static_cast<unsigned char>(0x80u >> (x % 8));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

// Any PNG; a pixel is foreground when its gray level is >= 128.
inline Mask decode_mask_png(std::span<const unsigned char> bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw Error(std::string("png decode failed: ") + img.message);
    img.format = PNG_FORMAT_GRAY;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw Error(std::string("png decode failed: ") + img.message);
    }
    Mask out(static_cast<int>(img.width), static_cast<int>(img.height));
    for (std::size_t i = 0; i < buf.size(); ++i) out.bits[i] = buf[i] >= 128 ? 1 : 0;
    return out;
}

inline Image read_png(const std::filesystem::path& p) { return decode_png(read_bytes(p)); }
inline void write_png(const std::filesystem::path& p, const Image& im) { write_bytes(p, encode_png(im)); }
inline Mask read_mask_png(const std::filesystem::path& p) { return decode_mask_png(read_bytes(p)); }
inline void write_mask_png(const std::filesystem::path& p, const Mask& m) { write_bytes(p, encode_mask_png(m)); }

inline Image grid_to_image(const Grid& g) {
    Image im(g.width, g.height);
    for (std::size_t i = 0; i < g.values.size(); ++i) im.rgb[3 * i] = im.rgb[3 * i + 1] = im.rgb[3 * i + 2] = g.values[i];
    return im;
}

inline double psnr(const Image& a, const Image& b) {
    require(a.width == b.width && a.height == b.height, "image size mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = std::clamp(a.rgb[i], 0.0f, 1.0f) - std::clamp(b.rgb[i], 0.0f, 1.0f);
        mse += d * d;
    }
    mse /= static_cast<double>(a.rgb.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace chromalign
