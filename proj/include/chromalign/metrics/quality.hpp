#pragma once

// Structural similarity plus pluggable embedding and perceptual providers.
// Built-in surrogates stand in for DINO and LPIPS when no model service is
// configured; every score records the provider name and version.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "chromalign/core/error.hpp"
#include "chromalign/core/image.hpp"

namespace chromalign {

// Wang et al. 2004: 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03,
// dynamic range 1, valid region only. Colour images average the per-channel
// SSIM maps.
inline double ssim_channel(const std::vector<double>& a, const std::vector<double>& b, int w, int h) {
    constexpr int R = 5;
    constexpr double sigma = 1.5, C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    std::array<double, 2 * R + 1> k{};
    double ks = 0;
    for (int i = -R; i <= R; ++i) ks += k[i + R] = std::exp(-(i * i) / (2 * sigma * sigma));
    for (auto& v : k) v /= ks;
    const int win = 2 * R + 1;
    const int ow = std::max(0, w - win + 1), oh = std::max(0, h - win + 1);
    if (ow == 0 || oh == 0) {
        // Window larger than the image: one global comparison.
        const double n = static_cast<double>(a.size());
        const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
        double va = 0, vb = 0, cov = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            va += (a[i] - ma) * (a[i] - ma);
            vb += (b[i] - mb) * (b[i] - mb);
            cov += (a[i] - ma) * (b[i] - mb);
        }
        va /= n, vb /= n, cov /= n;
        return ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    // Separable filtering of x, y, x^2, y^2, xy.
    auto filter = [&](const std::vector<double>& in) {
        std::vector<double> tmp(static_cast<std::size_t>(ow) * h), out(static_cast<std::size_t>(ow) * oh);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = 0;
                for (int i = 0; i < win; ++i) s += k[i] * in[static_cast<std::size_t>(y) * w + x + i];
                tmp[static_cast<std::size_t>(y) * ow + x] = s;
            }
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = 0;
                for (int i = 0; i < win; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
                out[static_cast<std::size_t>(y) * ow + x] = s;
            }
        return out;
    };
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto ma = filter(a), mb = filter(b), saa = filter(aa), sbb = filter(bb), sab = filter(ab);
    double acc = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
        acc += ((2 * ma[i] * mb[i] + C1) * (2 * cov + C2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + C1) * (va + vb + C2));
    }
    return acc / static_cast<double>(ma.size());
}

inline double ssim(const Image& a, const Image& b) {
    require(a.width == b.width && a.height == b.height, "SSIM needs images of equal size");
    require(!a.empty(), "SSIM of empty images");
    double acc = 0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> ca(a.pixels()), cb(a.pixels());
        for (std::size_t i = 0; i < a.pixels(); ++i) {
            ca[i] = a.rgb[i * 3 + c];
            cb[i] = b.rgb[i * 3 + c];
        }
        acc += ssim_channel(ca, cb, a.width, a.height);
    }
    return acc / 3.0;
}

// ---- providers ----

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string name() const = 0;
    virtual std::string version() const = 0;
    virtual std::vector<float> embed(const Image& im) = 0;
};

class PerceptualProvider {
public:
    virtual ~PerceptualProvider() = default;
    virtual std::string name() const = 0;
    virtual std::string version() const = 0;
    virtual double distance(const Image& a, const Image& b) = 0;
};

class TextImageProvider {
public:
    virtual ~TextImageProvider() = default;
    virtual std::string name() const = 0;
    virtual std::string version() const = 0;
    // Cosine similarity in [-1, 1].
    virtual double similarity(const Image& im, const std::string& text) = 0;
};

inline double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
    require(a.size() == b.size() && !a.empty(), "embedding sizes differ");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) return na == nb ? 1.0 : 0.0;
    return dot / std::sqrt(na * nb);
}

namespace detail {

// Box-downsample one channel plane to s x s.
inline std::vector<double> pooled_plane(const Image& im, int c, int s) {
    std::vector<double> out(static_cast<std::size_t>(s) * s, 0.0);
    std::vector<int> cnt(out.size(), 0);
    for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x) {
            const int bx = x * s / im.width, by = y * s / im.height;
            const auto i = static_cast<std::size_t>(by) * s + bx;
            out[i] += c < 0 ? 0.299 * im.at(x, y, 0) + 0.587 * im.at(x, y, 1) + 0.114 * im.at(x, y, 2) : im.at(x, y, c);
            ++cnt[i];
        }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= std::max(1, cnt[i]);
    return out;
}

}  // namespace detail

// Structure descriptor: mean-centred luminance thumbnails and their
// gradients at three scales. Deterministic and colour-blind on grayscale
// input, which is all the DS metric asks of it.
class SurrogateStructureEmbedder final : public EmbeddingProvider {
public:
    std::string name() const override { return "structure-surrogate"; }
    std::string version() const override { return "1"; }
    std::vector<float> embed(const Image& im) override {
        std::vector<float> f;
        for (int s : {4, 8, 16}) {
            const auto p = detail::pooled_plane(im, -1, s);
            const double mean = std::accumulate(p.begin(), p.end(), 0.0) / p.size();
            for (double v : p) f.push_back(static_cast<float>(v - mean + 0.5));
            for (int y = 0; y < s; ++y)
                for (int x = 0; x + 1 < s; ++x)
                    f.push_back(static_cast<float>(p[y * s + x + 1] - p[y * s + x]));
            for (int y = 0; y + 1 < s; ++y)
                for (int x = 0; x < s; ++x)
                    f.push_back(static_cast<float>(p[(y + 1) * s + x] - p[y * s + x]));
        }
        return f;
    }
};

// Perceptual distance surrogate in the LPIPS mould: per-location feature
// vectors (colour plus local gradients) are unit-normalised along channels,
// squared differences are averaged spatially and summed over three scales.
class SurrogatePerceptualDistance final : public PerceptualProvider {
public:
    std::string name() const override { return "perceptual-surrogate"; }
    std::string version() const override { return "1"; }
    double distance(const Image& a, const Image& b) override {
        require(a.width == b.width && a.height == b.height, "perceptual distance needs equal sizes");
        double total = 0;
        for (int s : {1, 2, 4}) total += scale_distance(a, b, s);
        return total / 3.0;
    }

private:
    static std::vector<std::array<double, 9>> features(const Image& im, int s) {
        const int w = std::max(1, im.width / s), h = std::max(1, im.height / s);
        std::vector<std::array<double, 3>> px(static_cast<std::size_t>(w) * h, {0, 0, 0});
        for (int y = 0; y < h * s && y < im.height; ++y)
            for (int x = 0; x < w * s && x < im.width; ++x)
                for (int c = 0; c < 3; ++c) px[static_cast<std::size_t>(y / s) * w + x / s][c] += im.at(x, y, c) / (s * s);
        std::vector<std::array<double, 9>> f(px.size());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto& p = px[static_cast<std::size_t>(y) * w + x];
                const auto& r = px[static_cast<std::size_t>(y) * w + std::min(x + 1, w - 1)];
                const auto& d = px[static_cast<std::size_t>(std::min(y + 1, h - 1)) * w + x];
                auto& o = f[static_cast<std::size_t>(y) * w + x];
                for (int c = 0; c < 3; ++c) {
                    o[c] = p[c] - 0.5;
                    o[3 + c] = 4.0 * (r[c] - p[c]);
                    o[6 + c] = 4.0 * (d[c] - p[c]);
                }
                double n = 1e-10;
                for (double v : o) n += v * v;
                n = std::sqrt(n);
                for (double& v : o) v /= n;
            }
        return f;
    }

    static double scale_distance(const Image& a, const Image& b, int s) {
        const auto fa = features(a, s), fb = features(b, s);
        double acc = 0;
        for (std::size_t i = 0; i < fa.size(); ++i)
            for (int k = 0; k < 9; ++k) acc += (fa[i][k] - fb[i][k]) * (fa[i][k] - fb[i][k]);
        return acc / static_cast<double>(fa.size()) / 4.0;
    }
};

struct MetricProviders {
    std::shared_ptr<EmbeddingProvider> structure;   // DS (DINO role)
    std::shared_ptr<PerceptualProvider> perceptual; // LPIPS role
    std::shared_ptr<TextImageProvider> text_image;  // CS (CLIP role); absent by default

    static MetricProviders surrogates() {
        return {std::make_shared<SurrogateStructureEmbedder>(), std::make_shared<SurrogatePerceptualDistance>(), nullptr};
    }

    std::map<std::string, std::string> versions() const {
        std::map<std::string, std::string> v;
        if (structure) v["DS"] = structure->name() + "@" + structure->version();
        if (perceptual) v["LPIPS"] = perceptual->name() + "@" + perceptual->version();
        if (text_image) v["CS"] = text_image->name() + "@" + text_image->version();
        return v;
    }
};

struct Similarity {
    std::optional<double> ds;
    double ssim = 0;
    std::optional<double> cs;  // 100 x cosine, the reporting scale of CLIP score
    std::vector<std::string> notes;
};

// "a photo of a squirrel" + red -> "a photo of a red squirrel".
inline std::string color_augmented_prompt(const std::string& prompt, const std::string& subject, const std::string& color) {
    if (!subject.empty()) {
        const auto pos = prompt.rfind(subject);
        if (pos != std::string::npos) return prompt.substr(0, pos) + color + " " + prompt.substr(pos);
    }
    return prompt + " (" + color + ")";
}

inline Similarity compute_similarity(const Image& source, const Image& target, const std::string& prompt_with_color,
                                     const MetricProviders& p) {
    require(source.width == target.width && source.height == target.height, "source and target sizes differ");
    Similarity s;
    s.ssim = ssim(source, target);
    auto absent = [&](const char* metric, const std::string& why) { s.notes.push_back(std::string(metric) + " absent: " + why); };
    if (p.structure) {
        try {
            const Image ga = to_grayscale(source), gb = to_grayscale(target);
            s.ds = cosine_similarity(p.structure->embed(ga), p.structure->embed(gb));
        } catch (const ProviderUnavailable& e) {
            absent("DS", e.what());
        }
    } else {
        absent("DS", "no structure provider configured");
    }
    if (p.text_image) {
        try {
            s.cs = 100.0 * p.text_image->similarity(target, prompt_with_color);
        } catch (const ProviderUnavailable& e) {
            absent("CS", e.what());
        }
    } else {
        absent("CS", "no text-image provider configured");
    }
    return s;
}

// Object region blanked to mid-gray (background metric) or the reverse.
inline Image blank_region(const Image& im, const Mask& mask, bool blank_foreground) {
    require(mask.width == im.width && mask.height == im.height, "mask and image sizes differ");
    Image out = im;
    for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x)
            if ((mask.at(x, y) != 0) == blank_foreground)
                for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0.5f;
    return out;
}

struct RegionDistances {
    std::optional<double> background;
    std::optional<double> object;
};

inline RegionDistances compute_lpips_regions(const Image& source, const Image& target, const Mask& mask,
                                             PerceptualProvider* p, const Image* object_reference = nullptr) {
    require(source.width == target.width && source.height == target.height, "source and target sizes differ");
    RegionDistances r;
    if (!p) return r;
    try {
        r.background = p->distance(blank_region(source, mask, true), blank_region(target, mask, true));
        const Image& ref = object_reference ? *object_reference : source;
        r.object = p->distance(blank_region(ref, mask, false), blank_region(target, mask, false));
    } catch (const ProviderUnavailable&) {
        return {};
    }
    return r;
}

}  // namespace chromalign
