#include <gtest/gtest.h>

#include <cmath>

#include "chromalign/probe/probes.hpp"
#include "support.hpp"

using namespace chromalign;
using namespace testing_support;

namespace {

const std::string kPrompt = "a photo of a red apple";

// Cross maps from one short tiny-model generation (64x64, T=6).
const CaptureStore& generation_captures() {
    static const CaptureStore store = [] {
        const auto& m = tiny_model();
        auto cap = CaptureHook::all_steps(cross_sites(m.layout()), static_cast<RoleSet>(Role::map));
        HookSet hooks{&cap};
        DenoiseOptions d;
        d.steps = 6;
        d.hooks = &hooks;
        denoise(m, gaussian_latent(3, m.layout().latent_channels, 8, 8), m.encode_prompt(kPrompt),
                NullTextSchedule::constant(m.encode_prompt(""), 1), d);
        return cap.take();
    }();
    return store;
}

std::vector<std::string> prompt_tokens() { return tiny_model().tokenize(kPrompt); }

// Store with one site whose maps are given per timestep (single head).
CaptureStore synthetic_store(const AttentionSite& site, const std::vector<Matrix>& per_step, int grid) {
    CaptureStore s;
    for (std::size_t i = 0; i < per_step.size(); ++i) {
        AttentionCapture c;
        c.site = site;
        c.timestep = static_cast<int>(per_step.size() - i);
        c.grid_width = c.grid_height = grid;
        c.branches.resize(1);
        c.branches[0].maps = {per_step[i]};
        s.insert(std::move(c));
    }
    return s;
}

AttentionSite one_head_site() {
    auto s = decoder_cross_sites(tiny_layout()).front();
    s.head_count = 1;
    return s;
}

}  // namespace

TEST(Heatmaps, MeanMatchesBruteForce) {
    const auto& caps = generation_captures();
    const auto toks = prompt_tokens();
    const int tok = token_position(toks, "apple");
    const auto h = aggregate_cross_maps(caps, toks, "apple");
    ASSERT_EQ(h.entries.size(), cross_sites(tiny_layout()).size());
    for (const auto& e : h.entries) {
        // brute force: every head of every timestep, one flat average
        std::vector<double> sum;
        double n = 0;
        int w = 0, hh = 0;
        for (int t = 1; t <= 6; ++t) {
            const auto* c = caps.find(e.site, t);
            ASSERT_NE(c, nullptr);
            w = c->grid_width, hh = c->grid_height;
            for (const Matrix& m : c->branch(Branch::conditional).maps) {
                if (sum.empty()) sum.assign(static_cast<std::size_t>(m.rows()), 0.0);
                for (Eigen::Index i = 0; i < m.rows(); ++i) sum[static_cast<std::size_t>(i)] += m(i, tok);
                ++n;
            }
        }
        ASSERT_EQ(e.raw.width, w);
        ASSERT_EQ(e.raw.height, hh);
        for (std::size_t i = 0; i < sum.size(); ++i) EXPECT_NEAR(e.raw.values[i], sum[i] / n, 1e-6) << e.site.name();
        Grid want = resize_bilinear(e.raw, 512, 512);
        normalize_min_max(want);
        EXPECT_EQ(e.grid, want);
        EXPECT_EQ(e.timestep_count, 6);
        // the mid block is 1x1 at this size: no spatial range
        EXPECT_EQ(e.degenerate, e.raw.values.size() == 1) << e.site.name();
        if (e.degenerate) continue;
        const auto [lo, hi] = std::minmax_element(e.grid.values.begin(), e.grid.values.end());
        EXPECT_EQ(*lo, 0.0f);
        EXPECT_FLOAT_EQ(*hi, 1.0f);
    }
}

TEST(Heatmaps, SingleTimestepAndIdenticalMaps) {
    std::mt19937_64 rng(1);
    const auto site = one_head_site();
    const Matrix a = random_matrix(rng, 16, 5).cwiseAbs();
    const auto single = aggregate_cross_maps(synthetic_store(site, {a}, 4), {"<start>", "a", "b", "c", "<end>"}, "b");
    Grid direct(4, 4);
    for (int i = 0; i < 16; ++i) direct.values[static_cast<std::size_t>(i)] = a(i, 2);
    EXPECT_EQ(single.entries.at(0).raw, direct);

    const auto same = aggregate_cross_maps(synthetic_store(site, {a, a, a, a}, 4), {"<start>", "a", "b", "c", "<end>"}, "b");
    for (std::size_t i = 0; i < 16; ++i) EXPECT_FLOAT_EQ(same.entries.at(0).raw.values[i], direct.values[i]);
}

TEST(Heatmaps, PerTimestepModeAndErrors) {
    const auto& caps = generation_captures();
    const auto toks = prompt_tokens();
    HeatmapOptions o;
    o.reduction = Reduction::per_timestep;
    o.timesteps = {6, 2};
    o.sites = {decoder_cross_sites(tiny_layout()).front()};
    o.resolution = 32;
    const auto h = aggregate_cross_maps(caps, toks, "red", o);
    ASSERT_EQ(h.entries.size(), 2u);
    EXPECT_EQ(h.entries[0].timestep, 6);
    EXPECT_EQ(h.entries[0].grid.width, 32);
    HeatmapOptions one = o;
    one.reduction = Reduction::mean;
    one.timesteps = {2};
    EXPECT_EQ(aggregate_cross_maps(caps, toks, "red", one).entries[0].raw, h.entries[1].raw);

    EXPECT_THROW(aggregate_cross_maps(caps, toks, "pear"), NotFoundError);
    o.timesteps = {7};
    try {
        aggregate_cross_maps(caps, toks, "red", o);
        FAIL() << "expected CoverageError";
    } catch (const CoverageError& e) {
        EXPECT_EQ(e.gaps(), std::vector<std::string>{"decoder_1_1_cross@t7"});
    }
    o.timesteps = {};
    o.sites = {self_sites(tiny_layout()).front()};
    EXPECT_THROW(aggregate_cross_maps(caps, toks, "red", o), ContractError);
}

TEST(Amplification, FactorOneIsBitIdentity) {
    const auto& m = tiny_model();
    AmplificationOptions o;
    o.seed = 9;
    o.steps = 8;
    o.width = o.height = 64;
    DenoiseOptions d;
    d.steps = 8;
    const auto plain = denoise(m, gaussian_latent(9, m.layout().latent_channels, 8, 8), m.encode_prompt(kPrompt),
                               NullTextSchedule::constant(m.encode_prompt(""), 1), d);
    for (auto which : {AmplifyTarget::key, AmplifyTarget::value})
        for (bool dec : {false, true}) {
            o.decoder_only = dec;
            const auto r = amplification_probe(m, kPrompt, "red", 1.0f, which, o);
            EXPECT_EQ(r.z0.data, plain.z_0().data);
            EXPECT_EQ(r.image, m.decode_latent(plain.z_0()));
            EXPECT_EQ(r.sites.size(), dec ? 9u : 16u);
        }
}

TEST(Amplification, LargeFactorChangesOutput) {
    const auto& m = tiny_model();
    AmplificationOptions o;
    o.steps = 6;
    o.width = o.height = 64;
    const auto base = amplification_probe(m, kPrompt, "red", 1.0f, AmplifyTarget::value, o);
    const auto v = amplification_probe(m, kPrompt, "red", 10.0f, AmplifyTarget::value, o);
    const auto k = amplification_probe(m, kPrompt, "red", 10.0f, AmplifyTarget::key, o);
    EXPECT_NE(v.z0.data, base.z0.data);
    EXPECT_NE(k.z0.data, base.z0.data);
    EXPECT_EQ(k.heatmap.token, "red");
    EXPECT_FALSE(k.heatmap.entries.empty());
    EXPECT_THROW(amplification_probe(m, kPrompt, "red", 0.0f, AmplifyTarget::key, o), ContractError);
    EXPECT_THROW(amplification_probe(m, kPrompt, "blue", 2.0f, AmplifyTarget::key, o), NotFoundError);
}

TEST(Leakage, FractionsSumToOne) {
    const auto& caps = generation_captures();
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const Mask mask = random_mask(rng, 64, 64, 0.3);
        const auto rep = leakage_report(caps, prompt_tokens(), "red", mask);
        EXPECT_EQ(rep.entries.size(), 7u * 6u);  // 3 + 1 + 3 blocks, 6 steps
        for (const auto& e : rep.entries) {
            EXPECT_NEAR(e.inside + e.outside, 1.0, 1e-6);
            EXPECT_GE(e.inside, 0.0);
            EXPECT_GE(e.outside, 0.0);
        }
    }
}

TEST(Leakage, InsideOnlyAndUniform) {
    const auto site = one_head_site();
    const std::vector<std::string> toks{"<start>", "red", "<end>"};
    // token mass only on the top-left 2x2 of a 4x4 grid
    Matrix inside = Matrix::Zero(16, 3);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) inside(y * 4 + x, 1) = 0.7f;
    const Mask quarter = rect_mask(64, 64, 0, 0, 32, 32);
    auto rep = leakage_report(synthetic_store(site, {inside}, 4), toks, "red", quarter);
    ASSERT_EQ(rep.entries.size(), 1u);
    EXPECT_DOUBLE_EQ(rep.entries[0].inside, 1.0);
    EXPECT_DOUBLE_EQ(rep.entries[0].outside, 0.0);

    const Matrix uniform = Matrix::Constant(16, 3, 1.0f / 3.0f);
    rep = leakage_report(synthetic_store(site, {uniform}, 4), toks, "red", quarter);
    EXPECT_NEAR(rep.entries[0].inside, 0.25, 1e-12);
    const auto j = leakage_to_json(rep);
    EXPECT_EQ(j["entries"][0]["block"], "decoder_1");
    EXPECT_THROW(leakage_report(synthetic_store(site, {uniform}, 4), toks, "blue", quarter), NotFoundError);
}

TEST(Heatmaps, ExportWritesPngRawAndIndex) {
    HeatmapOptions o;
    o.resolution = 64;
    const auto h = aggregate_cross_maps(generation_captures(), prompt_tokens(), "apple", o);
    const auto dir = temp_dir("heatmaps");
    export_heatmaps(h, dir);
    const auto idx = detail::read_json(dir / "index.json");
    ASSERT_EQ(idx["entries"].size(), h.entries.size());
    EXPECT_EQ(idx["reduction"], "mean");
    for (std::size_t i = 0; i < h.entries.size(); ++i) {
        const auto raw = read_f32(dir / idx["entries"][i]["raw"].get<std::string>());
        EXPECT_EQ(raw.values, h.entries[i].grid.values);
        const Image png = read_png(dir / idx["entries"][i]["png"].get<std::string>());
        EXPECT_EQ(png.width, 64);
    }
    std::filesystem::remove_all(dir);
}
