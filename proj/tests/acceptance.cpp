// Acceptance gate: one line per criterion with its measured runtime against
// the budget. Exits non-zero if any criterion fails or overruns.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "chromalign/attn/adain.hpp"
#include "chromalign/attn/capture.hpp"
#include "chromalign/attn/hooks.hpp"
#include "chromalign/attn/site.hpp"
#include "chromalign/bench/datasets.hpp"
#include "chromalign/bench/manifest.hpp"
#include "chromalign/edit/config.hpp"
#include "chromalign/edit/pipeline.hpp"
#include "chromalign/inversion/asset.hpp"
#include "chromalign/mask/masking.hpp"
#include "chromalign/metrics/color.hpp"
#include "chromalign/metrics/quality.hpp"
#include "chromalign/probe/probes.hpp"
#include "colorbench_fixture.hpp"
#include "support.hpp"

using namespace chromalign;
using namespace testing_support;

namespace {

// Collects the first few failures of a criterion.
struct Checks {
    std::vector<std::string> failures;
    void expect(bool ok, const std::string& what) {
        if (!ok && failures.size() < 5) failures.push_back(what);
        if (!ok) ++failed;
    }
    int failed = 0;
};

struct Criterion {
    std::string name;
    double budget_s;
    std::function<void(Checks&)> body;
};

std::string str(double v) {
    std::ostringstream o;
    o.precision(10);
    o << v;
    return o.str();
}

// Column mean and population standard deviation in double precision.
std::pair<std::vector<double>, std::vector<double>> column_stats(const Matrix& m) {
    std::vector<double> mu(static_cast<std::size_t>(m.cols())), sd(mu.size());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        double s = 0;
        for (Eigen::Index r = 0; r < m.rows(); ++r) s += m(r, c);
        const double mean = s / static_cast<double>(m.rows());
        double v = 0;
        for (Eigen::Index r = 0; r < m.rows(); ++r) v += (m(r, c) - mean) * (m(r, c) - mean);
        mu[static_cast<std::size_t>(c)] = mean;
        sd[static_cast<std::size_t>(c)] = std::sqrt(v / static_cast<double>(m.rows()));
    }
    return {mu, sd};
}

void adain_properties(Checks& k) {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> rows(2, 40), cols(1, 16);
    std::uniform_real_distribution<float> scale(0.05f, 8.0f), shift(-5.0f, 5.0f);
    for (int trial = 0; trial < 1000; ++trial) {
        const int c = cols(rng);
        const Matrix x = random_matrix(rng, rows(rng), c, scale(rng), shift(rng));
        const Matrix y = random_matrix(rng, rows(rng), c, scale(rng), shift(rng));
        const auto [mo, so] = column_stats(adain(x, y));
        const auto [my, sy] = column_stats(y);
        for (std::size_t j = 0; j < mo.size(); ++j) {
            k.expect(std::abs(mo[j] - my[j]) <= 1e-5 * std::max(1.0, std::abs(my[j])),
                     "trial " + std::to_string(trial) + " mean " + str(mo[j]) + " vs " + str(my[j]));
            k.expect(std::abs(so[j] - sy[j]) <= 1e-5 * std::max(1.0, sy[j]),
                     "trial " + std::to_string(trial) + " std " + str(so[j]) + " vs " + str(sy[j]));
        }
        const float bound = 1e-6f * std::max(1.0f, x.cwiseAbs().maxCoeff());
        k.expect((adain(x, x) - x).cwiseAbs().maxCoeff() <= bound, "adain(x,x) != x at trial " + std::to_string(trial));
    }
}

Mask checkerboard(int w, int h, int cell) {
    Mask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.at(x, y) = ((x / cell) + (y / cell)) % 2;
    return m;
}

void blending_exactness(Checks& k) {
    std::mt19937_64 rng(102);
    std::uniform_real_distribution<double> r(0.0, 1.0);
    std::uniform_int_distribution<int> cell(1, 4);
    for (int trial = 0; trial < 200; ++trial) {
        const Latent zs = random_latent(rng, 4, 16, 16), zc = random_latent(rng, 4, 16, 16);
        const Mask m = random_mask(rng, 16, 16);
        k.expect(blend_initial_latent(zs, zc, m, 0.0).data == zs.data, "R=0 changed z_s");
        k.expect(blend_initial_latent(zs, zc, Mask(16, 16), r(rng)).data == zs.data, "empty mask changed z_s");

        const Latent zt = random_latent(rng, 4, 16, 16);
        const Mask board = checkerboard(16, 16, cell(rng));
        const Latent out = preserve_background_step(zt, zs, board);
        bool same = true;
        for (int c = 0; c < 4; ++c)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x) same &= out.at(c, y, x) == (board.at(x, y) ? zt.at(c, y, x) : zs.at(c, y, x));
        k.expect(same, "preservation differs from oracle at trial " + std::to_string(trial));
    }
}

EditConfig config_with_steps(int steps) {
    EditConfig c;
    c.steps = steps;
    c.preservation_window = std::min(c.preservation_window, steps);
    return c;
}

const ReferenceColorAsset& red_asset(int steps) {
    static std::map<int, ReferenceColorAsset> cache;
    auto it = cache.find(steps);
    if (it == cache.end()) {
        ExtractionOptions o;
        o.steps = steps;
        it = cache.emplace(steps, extract_reference_asset(tiny_model(), pure_color_image(pure_color("red"), 64, 64), "red", o))
                 .first;
    }
    return it->second;
}

void schedule_counters(Checks& k) {
    k.expect(cross_sites(sd14_layout()).size() == 16, "v1.4 layout cross sites != 16");
    const auto decoder = decoder_cross_sites(sd14_layout());
    k.expect(decoder.size() == 9, "v1.4 decoder cross sites = " + std::to_string(decoder.size()));
    k.expect(decoder_cross_sites(tiny_layout()).size() == decoder.size(), "tiny layout differs from v1.4 topology");

    const auto& m = tiny_model();
    const EditConfig cfg = config_with_steps(50);
    k.expect(cfg.effective_tau() == 40, "tau = " + std::to_string(cfg.effective_tau()));
    k.expect(cfg.preservation_window == 5, "K = " + std::to_string(cfg.preservation_window));
    EditSession session(prepare_generated_source(m, 7, "a photo of a ball", cfg, 64, 64), cfg);
    TurnSpec spec{"ball", &red_asset(50), rect_mask(64, 64, 16, 16, 48, 48), std::nullopt};
    edit_object_color(m, session, spec);
    const auto& c = session.turns().back().counters;
    k.expect(c.aligned_steps.size() == 10, "VAlign invocations = " + std::to_string(c.aligned_steps.size()));
    k.expect(c.preserved_steps.size() == 5, "preservation applications = " + std::to_string(c.preserved_steps.size()));

    std::set<std::string> want;
    for (const auto& s : decoder_cross_sites(m.layout())) want.insert(s.name());
    std::set<std::string> got;
    for (const auto& [name, n] : c.aligned_sites) got.insert(name);
    k.expect(got == want, "alignment fired outside the decoder cross sites");
}

void non_perturbation(Checks& k) {
    const auto& m = tiny_model();
    const Latent zT = gaussian_latent(5, 4, 8, 8);
    const Matrix cond = m.encode_prompt("a photo of a cup");
    const auto null_text = NullTextSchedule::constant(m.encode_prompt(""), 8);
    DenoiseOptions off;
    off.steps = 8;
    const auto a = denoise(m, zT, cond, null_text, off);
    auto cap = CaptureHook::all_steps(enumerate_sites(m.layout()));
    HookSet hooks{&cap};
    DenoiseOptions on = off;
    on.hooks = &hooks;
    const auto b = denoise(m, zT, cond, null_text, on);
    for (int t = 8; t >= 0; --t) k.expect(a.at_step(t).data == b.at_step(t).data, "capture changed z_" + std::to_string(t));
    k.expect(cap.store().size() == 8u * enumerate_sites(m.layout()).size(), "capture store incomplete");

    const EditConfig cfg = config_with_steps(10);
    auto run = [&] {
        EditSession s(prepare_generated_source(m, 3, "a photo of a ball", cfg, 64, 64), cfg);
        TurnSpec spec{"ball", &red_asset(10), std::nullopt, std::nullopt};
        return edit_object_color(m, s, spec);
    };
    k.expect(run().rgb == run().rgb, "repeated edit differs");
}

Mask mask_with_area(std::mt19937_64& rng, int w, int h, std::size_t area) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(w) * h);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    Mask m(w, h);
    for (std::size_t i = 0; i < area; ++i) m.bits[idx[i]] = 1;
    return m;
}

int brute_force_pick(const std::vector<Mask>& cands, const Mask& cross) {
    int best = -1;
    double best_s = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const double ai = static_cast<double>(cands[i].area());
        if (ai == 0) continue;
        const double s = std::abs(1.0 - static_cast<double>(cross.area()) / ai);
        if (best < 0 || s < best_s) best = static_cast<int>(i), best_s = s;
    }
    return best;
}

void mask_selection(Checks& k) {
    std::mt19937_64 rng(105);
    const Mask cross = mask_with_area(rng, 20, 20, 100);
    const std::vector<Mask> worked{mask_with_area(rng, 20, 20, 90), mask_with_area(rng, 20, 20, 100),
                                   mask_with_area(rng, 20, 20, 150)};
    k.expect(select_mask(worked, cross).index == 1, "worked example did not pick the area-100 candidate");
    for (int trial = 0; trial < 500; ++trial) {
        const int w = std::uniform_int_distribution<int>(4, 24)(rng), h = std::uniform_int_distribution<int>(4, 24)(rng);
        const auto n = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
        std::uniform_int_distribution<std::size_t> area(0, static_cast<std::size_t>(w) * h);
        const Mask c = mask_with_area(rng, w, h, area(rng));
        std::vector<Mask> cands;
        for (std::size_t i = 0; i < n; ++i) cands.push_back(mask_with_area(rng, w, h, area(rng)));
        if (std::all_of(cands.begin(), cands.end(), [](const Mask& m) { return m.empty(); }))
            cands[0] = mask_with_area(rng, w, h, 1);
        k.expect(select_mask(cands, c).index == brute_force_pick(cands, c), "disagrees with brute force at trial " +
                                                                                 std::to_string(trial));
    }
}

void metric_sanity(Checks& k) {
    std::mt19937_64 rng(106);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image im(48, 40);
    for (auto& v : im.rgb) v = u(rng);
    k.expect(ssim(im, im) == 1.0, "SSIM(I,I) = " + str(ssim(im, im)));
    SurrogatePerceptualDistance lp;
    k.expect(lp.distance(im, im) == 0.0, "LPIPS(I,I) = " + str(lp.distance(im, im)));

    const Mask all(16, 16, true);
    for (const auto& c : kPureColors) {
        const auto l = compute_color_losses(pure_color_image(c, 16, 16), all, c);
        k.expect(l.l1_hue == 0.0 && l.l1_hsv == 0.0, std::string(c.name) + " loss is not zero");
    }
    const std::vector<std::pair<std::string, std::array<int, 3>>> table{
        {"black", {0, 0, 0}}, {"white", {255, 255, 255}}, {"gray", {128, 128, 128}}, {"red", {255, 0, 0}},
        {"yellow", {255, 255, 0}}, {"blue", {0, 0, 255}}, {"green", {0, 255, 0}}};
    k.expect(kPureColors.size() == table.size(), "pure-colour table size");
    for (std::size_t i = 0; i < std::min(table.size(), kPureColors.size()); ++i)
        k.expect(kPureColors[i].name == table[i].first && kPureColors[i].rgb == table[i].second,
                 "pure-colour row " + std::to_string(i));
}

void dataset_cardinalities(Checks& k) {
    const auto g = build_generated_manifest();
    k.expect(g.sources.size() == 1120, "generated sources = " + std::to_string(g.sources.size()));
    k.expect(g.tasks.size() == 7840, "generated tasks = " + std::to_string(g.tasks.size()));

    const auto root = temp_dir("acceptance_colorbench");
    write_colorbench_fixture(root);
    const auto r = validate_colorbench(root);
    k.expect(r.ok(), "intact fixture reported deviations");
    k.expect(r.sources == 406 && r.pairs == 2842,
             "fixture counts " + std::to_string(r.sources) + "/" + std::to_string(r.pairs));
    std::filesystem::remove(root / "targets" / "blue" / "dog_2.png");
    const auto broken = validate_colorbench(root);
    k.expect(!broken.ok(), "broken fixture passed validation");
    k.expect(std::any_of(broken.deviations.begin(), broken.deviations.end(),
                         [](const std::string& s) { return s.find("dog_2") != std::string::npos; }),
             "missing target is not named");
    std::filesystem::remove_all(root);
}

void probe_oracles(Checks& k) {
    const auto& m = tiny_model();
    const std::string prompt = "a photo of a red apple";
    auto cap = CaptureHook::all_steps(cross_sites(m.layout()), static_cast<RoleSet>(Role::map));
    HookSet hooks{&cap};
    DenoiseOptions d;
    d.steps = 6;
    d.hooks = &hooks;
    denoise(m, gaussian_latent(3, m.layout().latent_channels, 8, 8), m.encode_prompt(prompt),
            NullTextSchedule::constant(m.encode_prompt(""), 1), d);
    const CaptureStore caps = cap.take();
    const auto toks = m.tokenize(prompt);
    const int tok = token_position(toks, "apple");

    const auto h = aggregate_cross_maps(caps, toks, "apple");
    k.expect(h.entries.size() == cross_sites(m.layout()).size(), "heatmap entry count");
    for (const auto& e : h.entries) {
        std::vector<double> sum;
        double n = 0;
        for (int t = 1; t <= 6; ++t) {
            const auto* c = caps.find(e.site, t);
            if (!c) {
                k.expect(false, "missing capture " + e.site.name());
                continue;
            }
            for (const Matrix& a : c->branch(Branch::conditional).maps) {
                if (sum.empty()) sum.assign(static_cast<std::size_t>(a.rows()), 0.0);
                for (Eigen::Index i = 0; i < a.rows(); ++i) sum[static_cast<std::size_t>(i)] += a(i, tok);
                ++n;
            }
        }
        k.expect(sum.size() == e.raw.values.size(), "heatmap size at " + e.site.name());
        for (std::size_t i = 0; i < std::min(sum.size(), e.raw.values.size()); ++i)
            k.expect(std::abs(e.raw.values[i] - sum[i] / n) <= 1e-6, "heatmap mean at " + e.site.name());
    }

    AmplificationOptions o;
    o.seed = 9;
    o.steps = 8;
    o.width = o.height = 64;
    DenoiseOptions plain_opts;
    plain_opts.steps = 8;
    const auto plain = denoise(m, gaussian_latent(9, m.layout().latent_channels, 8, 8), m.encode_prompt(prompt),
                               NullTextSchedule::constant(m.encode_prompt(""), 1), plain_opts);
    for (auto which : {AmplifyTarget::key, AmplifyTarget::value}) {
        const auto r = amplification_probe(m, prompt, "red", 1.0f, which, o);
        k.expect(r.z0.data == plain.z_0().data, "factor 1 changed the latent");
    }

    std::mt19937_64 rng(108);
    for (int trial = 0; trial < 5; ++trial) {
        const auto rep = leakage_report(caps, toks, "red", random_mask(rng, 64, 64, 0.3));
        k.expect(!rep.entries.empty(), "empty leakage report");
        for (const auto& e : rep.entries)
            k.expect(std::abs(e.inside + e.outside - 1.0) <= 1e-6 && e.inside >= 0 && e.outside >= 0,
                     "leakage fractions " + str(e.inside) + " + " + str(e.outside));
    }
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"AdaIN properties", 5, adain_properties},
        {"Blending/preservation exactness", 1, blending_exactness},
        {"Schedule counters", 30, schedule_counters},
        {"Non-perturbation + determinism", 60, non_perturbation},
        {"Mask selection oracle", 1, mask_selection},
        {"Metric sanity", 5, metric_sanity},
        {"Dataset cardinalities", 5, dataset_cardinalities},
        {"Probe oracles", 10, probe_oracles},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Checks k;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.body(k);
        } catch (const std::exception& e) {
            k.expect(false, std::string("threw: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_budget = secs < c.budget_s;
        const bool pass = k.failed == 0 && in_budget;
        failed += !pass;
        std::printf("[PRIMARY] %s: %s (%.3f s, budget %.0f s)\n", c.name.c_str(), pass ? "PASS" : "FAIL", secs, c.budget_s);
        if (!in_budget) std::printf("    over budget\n");
        for (const auto& f : k.failures) std::printf("    %s\n", f.c_str());
        if (k.failed > static_cast<int>(k.failures.size()))
            std::printf("    ... %d failed checks in total\n", k.failed);
    }
    std::printf("[PRIMARY, weight-gated] SD v1.4 Table reproduction: NOT RUN (gated)\n");
    std::fflush(stdout);
    return failed == 0 ? 0 : 1;
}
