#pragma once

// Diagnostics over captured attention: per-site token heatmaps, Key/Value
// amplification runs and colour-token leakage relative to an object mask.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/attn/capture.hpp"
#include "chromalign/attn/hooks.hpp"
#include "chromalign/attn/site.hpp"
#include "chromalign/core/array_file.hpp"
#include "chromalign/core/error.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/core/io.hpp"
#include "chromalign/model/backend.hpp"
#include "chromalign/model/sampler.hpp"
#include "chromalign/model/text_encoder.hpp"

namespace chromalign {

inline constexpr int kHeatmapResolution = 512;

enum class Reduction { mean, per_timestep };

inline std::string_view to_string(Reduction r) { return r == Reduction::mean ? "mean" : "per_timestep"; }

struct HeatmapEntry {
    AttentionSite site;
    int timestep = 0;     // 0 in mean mode
    int timestep_count = 0;
    Grid raw;             // head (and timestep) mean at the site's native grid
    Grid grid;            // bilinear to the output resolution, then min-max normalised
    bool degenerate = false;
};

struct HeatmapGrid {
    std::string token;
    int token_index = -1;
    Reduction reduction = Reduction::mean;
    int resolution = kHeatmapResolution;
    std::vector<HeatmapEntry> entries;  // site order, then timestep descending
};

struct HeatmapOptions {
    Reduction reduction = Reduction::mean;
    std::vector<AttentionSite> sites;  // empty: every cross site present in the store
    std::vector<int> timesteps;        // empty: every captured timestep
    int resolution = kHeatmapResolution;
    Branch branch = Branch::conditional;
};

namespace detail {

// Head mean of one token column, as a grid.
inline Grid token_column(const AttentionCapture& c, Branch b, int token) {
    const auto& maps = c.branch(b).maps;
    if (maps.empty()) throw NotFoundError("capture " + gap_name(c.site, c.timestep) + " holds no attention maps");
    Grid g(c.grid_width, c.grid_height);
    for (const Matrix& m : maps) {
        require(token < m.cols(), "token index beyond context length");
        require(m.rows() == static_cast<Eigen::Index>(g.values.size()), "map rows do not match the capture grid");
        for (Eigen::Index i = 0; i < m.rows(); ++i) g.values[static_cast<std::size_t>(i)] += m(i, token);
    }
    for (auto& v : g.values) v /= static_cast<float>(maps.size());
    return g;
}

inline HeatmapEntry finish_entry(HeatmapEntry e, int resolution) {
    e.grid = resize_bilinear(e.raw, resolution, resolution);
    e.degenerate = !normalize_min_max(e.grid);
    return e;
}

}  // namespace detail

inline HeatmapGrid aggregate_cross_maps(const CaptureStore& captures, const std::vector<std::string>& tokens,
                                        const std::string& token, const HeatmapOptions& opt = {}) {
    require(opt.resolution > 0, "heatmap resolution must be positive");
    HeatmapGrid out;
    out.token = token;
    out.token_index = token_position(tokens, token);
    out.reduction = opt.reduction;
    out.resolution = opt.resolution;

    std::vector<AttentionSite> sites = opt.sites;
    std::set<int> captured_steps;
    for (const auto& [key, c] : captures) {
        captured_steps.insert(c.timestep);
        if (opt.sites.empty() && c.site.is_cross() && (sites.empty() || !(sites.back() == c.site))) sites.push_back(c.site);
    }
    std::sort(sites.begin(), sites.end());
    sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
    for (const auto& s : sites) require(s.is_cross(), s.name() + " is not a cross-attention site");
    std::vector<int> steps = opt.timesteps.empty() ? std::vector<int>(captured_steps.rbegin(), captured_steps.rend()) : opt.timesteps;
    if (sites.empty() || steps.empty()) throw NotFoundError("captures hold no cross-attention maps");

    std::vector<std::string> gaps;
    for (const auto& s : sites)
        for (int t : steps)
            if (!captures.find(s, t)) gaps.push_back(gap_name(s, t));
    if (!gaps.empty()) throw CoverageError("heatmap request is not covered by the captures", std::move(gaps));

    for (const auto& s : sites) {
        if (opt.reduction == Reduction::per_timestep) {
            for (int t : steps) {
                HeatmapEntry e;
                e.site = s;
                e.timestep = t;
                e.timestep_count = 1;
                e.raw = detail::token_column(*captures.find(s, t), opt.branch, out.token_index);
                out.entries.push_back(detail::finish_entry(std::move(e), opt.resolution));
            }
            continue;
        }
        HeatmapEntry e;
        e.site = s;
        e.timestep_count = static_cast<int>(steps.size());
        for (int t : steps) {
            const Grid g = detail::token_column(*captures.find(s, t), opt.branch, out.token_index);
            if (e.raw.values.empty()) e.raw = Grid(g.width, g.height);
            for (std::size_t i = 0; i < g.values.size(); ++i) e.raw.values[i] += g.values[i];
        }
        for (auto& v : e.raw.values) v /= static_cast<float>(steps.size());
        out.entries.push_back(detail::finish_entry(std::move(e), opt.resolution));
    }
    return out;
}

// ---- amplification ----

struct AmplificationOptions {
    std::uint64_t seed = 0;
    int steps = 50;
    double guidance_scale = 7.5;
    int width = 512;
    int height = 512;
    bool decoder_only = false;  // default scales every cross site
    HookSet* extra_hooks = nullptr;
};

struct AmplificationResult {
    Image image;
    Latent z0;
    HeatmapGrid heatmap;  // the amplified token's cross maps over the run
    std::string token;
    int token_index = -1;
    float factor = 1.0f;
    AmplifyTarget target = AmplifyTarget::value;
    std::vector<AttentionSite> sites;
};

// Generates from a seeded z_T with the token's K or V rows scaled at the
// chosen cross sites (conditional branch).
inline AmplificationResult amplification_probe(const DiffusionBackend& m, const std::string& prompt, const std::string& token,
                                               float factor, AmplifyTarget which, const AmplificationOptions& opt = {}) {
    require(factor > 0.0f, "amplification factor must be positive");
    require(opt.width % m.image_multiple() == 0 && opt.height % m.image_multiple() == 0,
            "probe size must be a multiple of " + std::to_string(m.image_multiple()));
    AmplificationResult r;
    r.token = token;
    r.token_index = token_position(m.tokenize(prompt), token);
    r.factor = factor;
    r.target = which;
    r.sites = opt.decoder_only ? decoder_cross_sites(m.layout()) : cross_sites(m.layout());

    AmplificationHook amp(r.token_index, factor, which, r.sites);
    auto capture = CaptureHook::all_steps(cross_sites(m.layout()), static_cast<RoleSet>(Role::map));
    HookSet hooks{&amp, &capture};
    if (opt.extra_hooks) hooks.add_all(*opt.extra_hooks);

    const int f = m.latent_factor();
    const Latent zT = gaussian_latent(opt.seed, m.layout().latent_channels, opt.height / f, opt.width / f);
    DenoiseOptions d;
    d.steps = opt.steps;
    d.guidance_scale = opt.guidance_scale;
    d.hooks = &hooks;
    const auto traj = denoise(m, zT, m.encode_prompt(prompt), NullTextSchedule::constant(m.encode_prompt(""), 1), d);
    r.z0 = traj.z_0();
    r.image = m.decode_latent(r.z0);
    if (opt.steps > 0) r.heatmap = aggregate_cross_maps(capture.store(), m.tokenize(prompt), token);
    return r;
}

// ---- leakage ----

struct LeakageEntry {
    Region region = Region::decoder;
    int block_index = 0;
    int timestep = 0;
    int grid_width = 0;
    int grid_height = 0;
    double inside = 0;   // fraction of the token's attention mass on the object
    double outside = 0;
    double mass = 0;     // total mass over layers and heads
};

struct LeakageReport {
    std::string token;
    int token_index = -1;
    std::size_t mask_area = 0;
    std::vector<LeakageEntry> entries;  // block order, timestep descending
};

// Mask is nearest-resampled to each block's grid. Layers and heads pool
// their mass before the split; a block with zero mass reports 0 / 0.
inline LeakageReport leakage_report(const CaptureStore& captures, const std::vector<std::string>& tokens,
                                    const std::string& color_token, const Mask& object_mask,
                                    Branch branch = Branch::conditional) {
    require(!object_mask.bits.empty(), "leakage needs an object mask");
    LeakageReport rep;
    rep.token = color_token;
    rep.token_index = token_position(tokens, color_token);
    rep.mask_area = object_mask.area();
    using Key = std::tuple<Region, int, int>;
    std::map<Key, LeakageEntry> acc;
    std::map<std::pair<int, int>, Mask> resized;
    for (const auto& [key, c] : captures) {
        if (!c.site.is_cross() || !c.has_branch(branch) || c.branch(branch).maps.empty()) continue;
        const Grid g = detail::token_column(c, branch, rep.token_index);
        auto it = resized.find({g.width, g.height});
        if (it == resized.end()) it = resized.emplace(std::pair{g.width, g.height}, resize_nearest(object_mask, g.width, g.height)).first;
        const Mask& mk = it->second;
        auto& e = acc[Key{c.site.region, c.site.block_index, -c.timestep}];
        e.region = c.site.region;
        e.block_index = c.site.block_index;
        e.timestep = c.timestep;
        e.grid_width = g.width;
        e.grid_height = g.height;
        const double heads = static_cast<double>(c.branch(branch).maps.size());
        for (std::size_t i = 0; i < g.values.size(); ++i) {
            const double v = static_cast<double>(g.values[i]) * heads;
            e.mass += v;
            if (mk.bits[i]) e.inside += v;
        }
    }
    if (acc.empty()) throw NotFoundError("captures hold no cross-attention maps");
    for (auto& [k, e] : acc) {
        if (e.mass > 0) {
            e.inside /= e.mass;
            e.outside = 1.0 - e.inside;
        } else {
            e.inside = e.outside = 0;
        }
        rep.entries.push_back(e);
    }
    return rep;
}

// ---- export ----

inline nlohmann::json heatmap_index(const HeatmapGrid& h) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : h.entries) {
        const std::string stem = e.site.name() + (h.reduction == Reduction::mean ? "_mean" : "_t" + std::to_string(e.timestep));
        entries.push_back({{"site", e.site.name()},
                           {"timestep", e.timestep},
                           {"timesteps_averaged", e.timestep_count},
                           {"native_grid", {e.raw.width, e.raw.height}},
                           {"degenerate", e.degenerate},
                           {"png", stem + ".png"},
                           {"raw", stem + ".f32"}});
    }
    return {{"token", h.token},
            {"token_index", h.token_index},
            {"reduction", to_string(h.reduction)},
            {"resolution", h.resolution},
            {"entries", entries}};
}

// One PNG and one raw float grid per entry, plus index.json.
inline void export_heatmaps(const HeatmapGrid& h, const std::filesystem::path& dir) {
    const auto index = heatmap_index(h);
    for (std::size_t i = 0; i < h.entries.size(); ++i) {
        const auto& e = h.entries[i];
        write_png(dir / index["entries"][i]["png"].get<std::string>(), grid_to_image(e.grid));
        FloatArray a;
        a.shape = {static_cast<std::uint32_t>(e.grid.height), static_cast<std::uint32_t>(e.grid.width)};
        a.values = e.grid.values;
        write_f32(dir / index["entries"][i]["raw"].get<std::string>(), a);
    }
    detail::write_text(dir / "index.json", index.dump(2) + "\n");
}

inline nlohmann::json leakage_to_json(const LeakageReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : r.entries)
        rows.push_back({{"block", std::string(to_string(e.region)) + "_" + std::to_string(e.block_index)},
                        {"timestep", e.timestep},
                        {"grid", {e.grid_width, e.grid_height}},
                        {"inside", e.inside},
                        {"outside", e.outside},
                        {"mass", e.mass}});
    return {{"token", r.token}, {"token_index", r.token_index}, {"mask_area", r.mask_area}, {"entries", rows}};
}

}  // namespace chromalign
