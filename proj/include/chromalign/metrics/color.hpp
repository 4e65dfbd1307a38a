#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "chromalign/core/error.hpp"
#include "chromalign/core/image.hpp"

namespace chromalign {

struct PureColorSpec {
    std::string_view name;
    std::array<int, 3> rgb;
};

// Target colours of the evaluation protocol, in protocol order.
inline constexpr std::array<PureColorSpec, 7> kPureColors{{
    {"black", {0, 0, 0}},
    {"white", {255, 255, 255}},
    {"gray", {128, 128, 128}},
    {"red", {255, 0, 0}},
    {"yellow", {255, 255, 0}},
    {"blue", {0, 0, 255}},
    {"green", {0, 255, 0}},
}};

inline const PureColorSpec& pure_color(std::string_view name) {
    for (const auto& c : kPureColors)
        if (c.name == name) return c;
    std::string names;
    for (const auto& c : kPureColors) names += (names.empty() ? "" : ", ") + std::string(c.name);
    throw NotFoundError("unknown colour '" + std::string(name) + "'; known: " + names);
}

inline Image pure_color_image(const PureColorSpec& c, int w, int h) {
    return Image::filled(w, h, c.rgb[0] / 255.0f, c.rgb[1] / 255.0f, c.rgb[2] / 255.0f);
}

// All three HSV channels on a 0..255 scale; hue maps 360 degrees to 255.
inline constexpr double kHueScale = 255.0;

struct Hsv {
    double h = 0, s = 0, v = 0;
};

// Input channels in 0..255. Achromatic pixels get hue 0.
inline Hsv rgb_to_hsv255(double r, double g, double b) {
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double d = mx - mn;
    Hsv o;
    o.v = mx;
    o.s = mx > 0 ? 255.0 * d / mx : 0.0;
    if (d <= 0) return o;
    double deg;
    if (mx == r) deg = 60.0 * std::fmod((g - b) / d, 6.0);
    else if (mx == g) deg = 60.0 * ((b - r) / d + 2.0);
    else deg = 60.0 * ((r - g) / d + 4.0);
    if (deg < 0) deg += 360.0;
    o.h = deg / 360.0 * kHueScale;
    if (o.h >= kHueScale) o.h -= kHueScale;
    return o;
}

enum class HueDistance { circular, linear };

inline double hue_distance(double a, double b, HueDistance mode = HueDistance::circular) {
    const double d = std::abs(a - b);
    return mode == HueDistance::circular ? std::min(d, kHueScale - d) : d;
}

struct ColorLosses {
    double l1_hue = 0;
    double l1_hsv = 0;
};

// Mean over masked pixels of the L1 distance to the pure colour in HSV.
// Pixels are quantised to 8 bits first, as they would be on disk.
inline ColorLosses compute_color_losses(const Image& target, const Mask& mask, const PureColorSpec& color,
                                        HueDistance mode = HueDistance::circular) {
    require(mask.width == target.width && mask.height == target.height, "mask and image sizes differ");
    require(!mask.empty(), "colour losses need a non-empty object mask");
    const Hsv ref = rgb_to_hsv255(color.rgb[0], color.rgb[1], color.rgb[2]);
    double hue = 0, hsv = 0;
    std::size_t n = 0;
    for (int y = 0; y < target.height; ++y)
        for (int x = 0; x < target.width; ++x) {
            if (!mask.at(x, y)) continue;
            const Hsv p = rgb_to_hsv255(to_byte(target.at(x, y, 0)), to_byte(target.at(x, y, 1)), to_byte(target.at(x, y, 2)));
            const double dh = hue_distance(p.h, ref.h, mode);
            hue += dh;
            hsv += (dh + std::abs(p.s - ref.s) + std::abs(p.v - ref.v)) / 3.0;
            ++n;
        }
    return {hue / n, hsv / n};
}

}  // namespace chromalign
