#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "chromalign/core/error.hpp"

namespace chromalign {

using Matrix = Eigen::MatrixXf;
using RowVector = Eigen::RowVectorXf;

// Latent-space array, channel-major (C x H x W).
struct Latent {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Latent() = default;
    Latent(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t size() const noexcept { return data.size(); }
    bool empty() const noexcept { return data.empty(); }
    int cells() const noexcept { return height * width; }

    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    bool same_shape(const Latent& o) const noexcept {
        return channels == o.channels && height == o.height && width == o.width;
    }

    // Rows are spatial positions (row-major y*W+x), columns are channels.
    Matrix tokens() const {
        Matrix m(cells(), channels);
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < cells(); ++i) m(i, c) = data[static_cast<std::size_t>(c) * cells() + i];
        return m;
    }

    static Latent from_tokens(const Matrix& m, int h, int w) {
        require(m.rows() == static_cast<Eigen::Index>(h) * w, "token count does not match latent grid");
        Latent out(static_cast<int>(m.cols()), h, w);
        for (int c = 0; c < out.channels; ++c)
            for (int i = 0; i < out.cells(); ++i) out.data[static_cast<std::size_t>(c) * out.cells() + i] = m(i, c);
        return out;
    }

    friend bool operator==(const Latent&, const Latent&) = default;
};

inline double mean_squared_error(const Latent& a, const Latent& b) {
    require(a.same_shape(b), "latent shape mismatch");
    if (a.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

inline std::span<const float> as_span(const Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

}  // namespace chromalign
