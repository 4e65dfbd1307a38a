#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "chromalign/core/error.hpp"
#include "chromalign/core/tensor.hpp"

namespace chromalign {

// Lower bound on sigma(x) before division; constant channels (padding tokens)
// would otherwise blow up.
inline constexpr double kAdainStdFloor = 1e-5;

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // population convention (divide by n)
};

// Per-column statistics, reduced over the token (row) axis.
inline ChannelStats channel_stats(const Matrix& m) {
    require(m.rows() > 0, "channel statistics need at least one token");
    ChannelStats s;
    s.mean.resize(static_cast<std::size_t>(m.cols()));
    s.stddev.resize(static_cast<std::size_t>(m.cols()));
    const double n = static_cast<double>(m.rows());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        double mu = 0.0;
        for (Eigen::Index r = 0; r < m.rows(); ++r) mu += m(r, c);
        mu /= n;
        double var = 0.0;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const double d = m(r, c) - mu;
            var += d * d;
        }
        s.mean[c] = mu;
        s.stddev[c] = std::sqrt(var / n);
    }
    return s;
}

// AdaIN(x, y) = sigma(y) * (x - mu(x)) / sigma(x) + mu(y), per channel across tokens.
// x and y may hold different token counts but must share the channel width.
inline Matrix adain(const Matrix& x, const Matrix& y) {
    require(x.cols() == y.cols(), "adain: channel width mismatch (" + std::to_string(x.cols()) + " vs " +
                                      std::to_string(y.cols()) + ")");
    const ChannelStats sx = channel_stats(x);
    const ChannelStats sy = channel_stats(y);
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double scale = sy.stddev[c] / std::max(sx.stddev[c], kAdainStdFloor);
        for (Eigen::Index r = 0; r < x.rows(); ++r)
            out(r, c) = static_cast<float>((x(r, c) - sx.mean[c]) * scale + sy.mean[c]);
    }
    return out;
}

// Applies adain head by head on merged (tokens x heads*d_k) value matrices.
// Statistics are per head and per channel, so this equals adain() on the
// merged matrix; the loop keeps the head partition explicit.
inline Matrix adain_per_head(const Matrix& x, const Matrix& y, int heads) {
    require(heads > 0 && x.cols() % heads == 0, "adain: channel width not divisible by head count");
    require(x.cols() == y.cols(), "adain: channel width mismatch");
    const Eigen::Index d = x.cols() / heads;
    Matrix out(x.rows(), x.cols());
    for (int h = 0; h < heads; ++h)
        out.middleCols(h * d, d) = adain(x.middleCols(h * d, d), y.middleCols(h * d, d));
    return out;
}

}  // namespace chromalign
