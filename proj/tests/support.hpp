#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "chromalign/core/image.hpp"
#include "chromalign/core/tensor.hpp"
#include "chromalign/model/backend.hpp"

namespace testing_support {

using chromalign::Image;
using chromalign::Latent;
using chromalign::Mask;
using chromalign::Matrix;

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, float scale = 1.0f, float shift = 0.0f) {
    std::normal_distribution<float> n(shift, scale);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

inline Latent random_latent(std::mt19937_64& rng, int c, int h, int w) {
    std::normal_distribution<float> n(0.0f, 1.0f);
    Latent z(c, h, w);
    for (auto& v : z.data) v = n(rng);
    return z;
}

inline Mask random_mask(std::mt19937_64& rng, int w, int h, double p = 0.5) {
    std::bernoulli_distribution b(p);
    Mask m(w, h);
    for (auto& v : m.bits) v = b(rng) ? 1 : 0;
    return m;
}

inline Mask rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
    Mask m(w, h);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.bits[static_cast<std::size_t>(y) * w + x] = 1;
    return m;
}

// Smooth synthetic scene: a coloured disc on a two-tone gradient background.
inline Image scene(int w, int h, float r, float g, float b, float cx = 0.5f, float cy = 0.5f, float radius = 0.25f) {
    Image im(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float u = (x + 0.5f) / w, v = (y + 0.5f) / h;
            const bool inside = (u - cx) * (u - cx) + (v - cy) * (v - cy) < radius * radius;
            const float bg[3] = {0.25f + 0.4f * u, 0.55f - 0.2f * v, 0.35f + 0.1f * u * v};
            const float fg[3] = {r, g, b};
            for (int c = 0; c < 3; ++c) im.at(x, y, c) = inside ? fg[c] : bg[c];
        }
    return im;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    auto p = std::filesystem::temp_directory_path() / ("chromalign_" + tag + "_" + std::to_string(rng() % 1000000007));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline const chromalign::TinyDiffusionModel& tiny_model() {
    static const chromalign::TinyDiffusionModel m;
    return m;
}

}  // namespace testing_support
