#pragma once

// Object masks from decoder cross-attention evidence, optionally refined by a
// point-prompted segmenter whose candidates are ranked by how well their
// area matches the attention mask.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "chromalign/attn/capture.hpp"
#include "chromalign/core/error.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/model/text_encoder.hpp"

namespace chromalign {

inline constexpr float kDefaultMaskThreshold = 0.4f;
inline constexpr std::size_t kDegenerateMaskCells = 16;

struct Point {
    int x = 0;
    int y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

struct CrossAttnMask {
    Mask mask;
    Grid normalized;  // averaged map after min-max normalisation
    std::string token;
    int token_index = -1;
    float threshold = kDefaultMaskThreshold;
    bool degenerate = false;  // averaged map had no spatial contrast
};

// Threshold a (not yet normalised) averaged map. A constant map carries no
// location information and yields an empty, degenerate mask.
inline CrossAttnMask threshold_attention(Grid averaged, float threshold) {
    require(threshold >= 0.0f && threshold <= 1.0f, "mask threshold must lie in [0, 1]");
    CrossAttnMask out;
    out.threshold = threshold;
    out.degenerate = !normalize_min_max(averaged);
    out.mask = Mask(averaged.width, averaged.height);
    if (!out.degenerate)
        for (std::size_t i = 0; i < averaged.values.size(); ++i) out.mask.bits[i] = averaged.values[i] >= threshold ? 1 : 0;
    out.normalized = std::move(averaged);
    return out;
}

// Mean over heads, layers and timesteps of the token's column in the first
// decoder block's cross maps (conditional branch).
inline Grid average_token_map(const CaptureStore& captures, int token_index, int decoder_block = 1) {
    Grid acc;
    long count = 0;
    for (const auto& [key, c] : captures) {
        if (!(c.site.region == Region::decoder && c.site.block_index == decoder_block && c.site.is_cross())) continue;
        if (!c.has_branch(Branch::conditional)) continue;
        const auto& maps = c.branch(Branch::conditional).maps;
        if (maps.empty()) continue;
        if (acc.values.empty()) acc = Grid(c.grid_width, c.grid_height);
        require(acc.width == c.grid_width && acc.height == c.grid_height, "cross maps disagree on grid size");
        for (const Matrix& a : maps) {
            require(token_index < a.cols(), "token index beyond context length");
            for (Eigen::Index i = 0; i < a.rows(); ++i) acc.values[static_cast<std::size_t>(i)] += a(i, token_index);
            ++count;
        }
    }
    if (count == 0)
        throw NotFoundError("captures hold no decoder block " + std::to_string(decoder_block) + " cross-attention maps");
    for (auto& v : acc.values) v /= static_cast<float>(count);
    return acc;
}

// The averaged map is resampled (bilinear) to out_w x out_h before
// normalisation and thresholding.
inline CrossAttnMask object_mask_from_attention(const CaptureStore& captures, const std::vector<std::string>& tokens,
                                                const std::string& object_token, float threshold, int out_w, int out_h) {
    const int idx = token_position(tokens, object_token);
    Grid avg = average_token_map(captures, idx);
    if (out_w > 0 && out_h > 0) avg = resize_bilinear(avg, out_w, out_h);
    auto m = threshold_attention(std::move(avg), threshold);
    m.token = object_token;
    m.token_index = idx;
    return m;
}

// Rounded mean foreground coordinate.
inline Point centroid(const Mask& m) {
    double sx = 0, sy = 0;
    std::size_t n = 0;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y)) {
                sx += x;
                sy += y;
                ++n;
            }
    if (n == 0) throw ContractError("centroid of an empty mask");
    return {static_cast<int>(std::lround(sx / n)), static_cast<int>(std::lround(sy / n))};
}

// Maps a point on a w x h grid to the pixel grid of a W x H image (cell centres).
inline Point scale_point(Point p, int w, int h, int W, int H) {
    auto map = [](int v, int from, int to) {
        return std::clamp(static_cast<int>(std::floor((v + 0.5) * to / from)), 0, to - 1);
    };
    return {map(p.x, w, W), map(p.y, h, H)};
}

enum class AreaReading { nonzero, zero };

inline std::size_t mask_area(const Mask& m, AreaReading r) { return r == AreaReading::nonzero ? m.area() : m.zero_area(); }

// s = |1 - A_cross / A_i|
inline double selection_score(std::size_t cross_area, std::size_t candidate_area) {
    require(candidate_area > 0, "selection score undefined for zero candidate area");
    return std::abs(1.0 - static_cast<double>(cross_area) / static_cast<double>(candidate_area));
}

struct Selection {
    int index = -1;
    double score = 0.0;
    std::vector<std::optional<double>> scores;  // nullopt: excluded
    std::vector<std::string> warnings;
};

// Argmin of the selection score; ties go to the lowest index.
inline Selection select_mask(const std::vector<Mask>& candidates, const Mask& cross_mask,
                             AreaReading reading = AreaReading::nonzero) {
    require(!candidates.empty(), "select_mask needs at least one candidate");
    Selection s;
    const std::size_t cross = mask_area(cross_mask, reading);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        require(c.width == cross_mask.width && c.height == cross_mask.height,
                "candidate " + std::to_string(i) + " resolution differs from the cross-attention mask");
        const std::size_t a = mask_area(c, reading);
        if (a == 0) {
            s.scores.emplace_back(std::nullopt);
            s.warnings.push_back("candidate " + std::to_string(i) + " has zero area; excluded");
            continue;
        }
        const double score = selection_score(cross, a);
        s.scores.emplace_back(score);
        if (score < best) {
            best = score;
            s.index = static_cast<int>(i);
        }
    }
    if (s.index < 0) throw ContractError("every mask candidate has zero area");
    s.score = best;
    return s;
}

struct ScoredMask {
    Mask mask;
    double score = 0.0;  // segmenter's own confidence
};

class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual std::string name() const = 0;
    // Throws ProviderUnavailable when the service cannot be reached.
    virtual std::vector<ScoredMask> segment(const Image& image, Point point) = 0;
};

struct ObjectMask {
    Mask mask;                 // image resolution
    int selected = -1;         // candidate index; -1 on the attention fallback
    double score = 0.0;
    bool fallback = false;     // attention-only mask, blurrier edges
    Point point;               // prompt point at image resolution
    CrossAttnMask cross;
    std::vector<Mask> candidates;
    std::vector<std::string> warnings;
};

// Mask generation failed; the candidates are kept for a manual override.
class MaskGenerationError : public Error {
public:
    MaskGenerationError(const std::string& what, std::vector<Mask> candidates)
        : Error(what), candidates_(std::move(candidates)) {}
    const std::vector<Mask>& candidates() const noexcept { return candidates_; }

private:
    std::vector<Mask> candidates_;
};

struct MaskOptions {
    float threshold = kDefaultMaskThreshold;
    AreaReading area_reading = AreaReading::nonzero;
    int grid_width = 0;   // resolution of the attention mask; 0 = latent grid of the image
    int grid_height = 0;
    int latent_factor = 8;
    std::optional<Point> point;  // user click at image resolution; default is the attention centroid
};

inline Mask upsample_mask(const Mask& m, int w, int h) { return resize_nearest(m, w, h); }

inline ObjectMask make_object_mask(const Image& image, const CaptureStore& captures,
                                   const std::vector<std::string>& tokens, const std::string& object_token,
                                   Segmenter* segmenter, const MaskOptions& opt = {}) {
    const int gw = opt.grid_width > 0 ? opt.grid_width : image.width / opt.latent_factor;
    const int gh = opt.grid_height > 0 ? opt.grid_height : image.height / opt.latent_factor;
    ObjectMask out;
    out.cross = object_mask_from_attention(captures, tokens, object_token, opt.threshold, gw, gh);
    if (out.cross.degenerate || out.cross.mask.empty())
        throw MaskGenerationError("cross-attention map for '" + object_token + "' has no spatial contrast", {});
    const Mask cross_full = upsample_mask(out.cross.mask, image.width, image.height);
    out.point = opt.point ? *opt.point : scale_point(centroid(out.cross.mask), gw, gh, image.width, image.height);
    require(out.point.x >= 0 && out.point.x < image.width && out.point.y >= 0 && out.point.y < image.height,
            "point prompt lies outside the image");
    if (out.cross.mask.area() < kDegenerateMaskCells)
        out.warnings.push_back("object mask covers only " + std::to_string(out.cross.mask.area()) +
                               " attention cells; small objects edit poorly");

    auto fallback = [&](const std::string& why) {
        out.mask = cross_full;
        out.fallback = true;
        out.selected = -1;
        out.score = 0.0;
        out.warnings.push_back("attention-mask fallback: " + why);
        return out;
    };
    if (!segmenter) return fallback("no segmenter configured");
    std::vector<ScoredMask> scored;
    try {
        scored = segmenter->segment(image, out.point);
    } catch (const ProviderUnavailable& e) {
        return fallback(std::string("segmenter unavailable (") + e.what() + ")");
    }
    for (auto& s : scored) {
        if (s.mask.width != image.width || s.mask.height != image.height) s.mask = resize_nearest(s.mask, image.width, image.height);
        out.candidates.push_back(std::move(s.mask));
    }
    if (out.candidates.empty()) return fallback("segmenter returned no candidates");
    Selection sel;
    try {
        sel = select_mask(out.candidates, cross_full, opt.area_reading);
    } catch (const ContractError& e) {
        throw MaskGenerationError(e.what(), out.candidates);
    }
    out.selected = sel.index;
    out.score = sel.score;
    out.mask = out.candidates[static_cast<std::size_t>(sel.index)];
    for (auto& w : sel.warnings) out.warnings.push_back(std::move(w));
    return out;
}

// Nearest-neighbour downsample, then binarise.
inline Mask latent_mask(const Mask& m, int latent_w, int latent_h) {
    Mask d = resize_nearest(m, latent_w, latent_h);
    for (auto& b : d.bits) b = b ? 1 : 0;
    return d;
}

// Soft variant: values >= 0.5 after nearest sampling are foreground.
inline Mask latent_mask(const Grid& soft, int latent_w, int latent_h) {
    Mask d(latent_w, latent_h);
    for (int y = 0; y < latent_h; ++y)
        for (int x = 0; x < latent_w; ++x) {
            const int sx = std::min(soft.width - 1, static_cast<int>((x + 0.5) * soft.width / latent_w));
            const int sy = std::min(soft.height - 1, static_cast<int>((y + 0.5) * soft.height / latent_h));
            d.at(x, y) = soft.at(sx, sy) >= 0.5f ? 1 : 0;
        }
    return d;
}

}  // namespace chromalign
