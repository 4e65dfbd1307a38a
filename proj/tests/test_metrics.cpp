#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "chromalign/bench/datasets.hpp"
#include "chromalign/metrics/color.hpp"
#include "chromalign/metrics/evaluate.hpp"
#include "chromalign/metrics/quality.hpp"
#include "support.hpp"

using namespace chromalign;
using namespace testing_support;

namespace {

Image random_image(std::mt19937_64& rng, int w, int h) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image im(w, h);
    for (auto& v : im.rgb) v = u(rng);
    return im;
}

// Rotates chroma in YIQ space, which leaves 0.299/0.587/0.114 luma untouched.
Image rotate_hue(const Image& im, double degrees) {
    const double a = degrees * M_PI / 180.0, c = std::cos(a), s = std::sin(a);
    Image out = im;
    for (std::size_t p = 0; p < im.pixels(); ++p) {
        const double r = im.rgb[3 * p], g = im.rgb[3 * p + 1], b = im.rgb[3 * p + 2];
        const double y = 0.299 * r + 0.587 * g + 0.114 * b;
        const double i = 0.596 * r - 0.274 * g - 0.322 * b;
        const double q = 0.211 * r - 0.523 * g + 0.312 * b;
        const double i2 = c * i - s * q, q2 = s * i + c * q;
        out.rgb[3 * p] = static_cast<float>(y + 0.956 * i2 + 0.621 * q2);
        out.rgb[3 * p + 1] = static_cast<float>(y - 0.272 * i2 - 0.647 * q2);
        out.rgb[3 * p + 2] = static_cast<float>(y - 1.106 * i2 + 1.703 * q2);
    }
    return out;
}

class DownProvider final : public EmbeddingProvider {
public:
    std::string name() const override { return "down"; }
    std::string version() const override { return "0"; }
    std::vector<float> embed(const Image&) override { throw ProviderUnavailable("service offline"); }
};

class ConstantClip final : public TextImageProvider {
public:
    std::string name() const override { return "const-clip"; }
    std::string version() const override { return "2"; }
    double similarity(const Image&, const std::string& text) override {
        last = text;
        return 0.25;
    }
    std::string last;
};

}  // namespace

TEST(PureColors, TableIsVerbatim) {
    const std::vector<std::pair<std::string, std::array<int, 3>>> want{
        {"black", {0, 0, 0}},     {"white", {255, 255, 255}}, {"gray", {128, 128, 128}}, {"red", {255, 0, 0}},
        {"yellow", {255, 255, 0}}, {"blue", {0, 0, 255}},      {"green", {0, 255, 0}}};
    ASSERT_EQ(kPureColors.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_EQ(kPureColors[i].name, want[i].first);
        EXPECT_EQ(kPureColors[i].rgb, want[i].second);
    }
    EXPECT_THROW(pure_color("purple"), NotFoundError);
}

TEST(ColorLoss, PureColorTargetIsZero) {
    const Mask all(16, 16, true);
    for (const auto& c : kPureColors) {
        const auto l = compute_color_losses(pure_color_image(c, 16, 16), all, c);
        EXPECT_EQ(l.l1_hue, 0.0) << c.name;
        EXPECT_EQ(l.l1_hsv, 0.0) << c.name;
    }
}

TEST(ColorLoss, YellowPixelAgainstRed) {
    Image im = pure_color_image(pure_color("red"), 4, 4);
    im.at(1, 2, 0) = 1.0f, im.at(1, 2, 1) = 1.0f, im.at(1, 2, 2) = 0.0f;
    Mask one(4, 4);
    one.at(1, 2) = 1;
    const auto l = compute_color_losses(im, one, pure_color("red"));
    EXPECT_DOUBLE_EQ(l.l1_hue, 42.5);
    // S and V agree with red, so the HSV mean is a third of the hue term
    EXPECT_DOUBLE_EQ(l.l1_hsv, 42.5 / 3.0);
}

TEST(ColorLoss, MatchesPerPixelOracle) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const Image im = quantized(random_image(rng, 9, 7));
        Mask m = random_mask(rng, 9, 7, 0.4);
        if (m.empty()) m.at(0, 0) = 1;
        const auto& c = kPureColors[static_cast<std::size_t>(trial) % kPureColors.size()];
        const Hsv ref = rgb_to_hsv255(c.rgb[0], c.rgb[1], c.rgb[2]);
        double hue = 0, hsv = 0, n = 0;
        for (int y = 0; y < 7; ++y)
            for (int x = 0; x < 9; ++x) {
                if (!m.at(x, y)) continue;
                const Hsv p = rgb_to_hsv255(to_byte(im.at(x, y, 0)), to_byte(im.at(x, y, 1)), to_byte(im.at(x, y, 2)));
                const double d = std::abs(p.h - ref.h);
                const double dh = std::min(d, 255.0 - d);
                hue += dh;
                hsv += (dh + std::abs(p.s - ref.s) + std::abs(p.v - ref.v)) / 3.0;
                ++n;
            }
        const auto l = compute_color_losses(im, m, c);
        EXPECT_NEAR(l.l1_hue, hue / n, 1e-9);
        EXPECT_NEAR(l.l1_hsv, hsv / n, 1e-9);
    }
    EXPECT_THROW(compute_color_losses(Image(4, 4), Mask(4, 4), pure_color("red")), ContractError);
}

TEST(HueDistance, CircularTriangleInequality) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 255.0);
    for (int i = 0; i < 10000; ++i) {
        const double a = u(rng), b = u(rng), c = u(rng);
        const double ab = hue_distance(a, b), bc = hue_distance(b, c), ac = hue_distance(a, c);
        EXPECT_LE(ac, ab + bc + 1e-9);
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 127.5);
        EXPECT_DOUBLE_EQ(ab, hue_distance(b, a));
    }
    EXPECT_DOUBLE_EQ(hue_distance(10, 250), 15.0);
    EXPECT_DOUBLE_EQ(hue_distance(10, 250, HueDistance::linear), 240.0);
}

TEST(Similarity, IdentityIsExact) {
    std::mt19937_64 rng(9);
    const Image im = random_image(rng, 48, 40);
    EXPECT_EQ(ssim(im, im), 1.0);
    SurrogatePerceptualDistance lp;
    EXPECT_EQ(lp.distance(im, im), 0.0);
    const auto s = compute_similarity(im, im, "a photo", MetricProviders::surrogates());
    ASSERT_TRUE(s.ds);
    EXPECT_NEAR(*s.ds, 1.0, 1e-4);
    const auto r = compute_lpips_regions(im, im, rect_mask(48, 40, 10, 10, 30, 30), &lp);
    EXPECT_EQ(*r.background, 0.0);
    EXPECT_EQ(*r.object, 0.0);
}

TEST(Similarity, SymmetricOnRandomPairs) {
    std::mt19937_64 rng(10);
    SurrogatePerceptualDistance lp;
    for (int trial = 0; trial < 30; ++trial) {
        const Image a = random_image(rng, 24, 20), b = random_image(rng, 24, 20);
        const double s = ssim(a, b);
        EXPECT_NEAR(s, ssim(b, a), 1e-12);
        EXPECT_GE(s, -1.0);
        EXPECT_LE(s, 1.0);
        const double d = lp.distance(a, b);
        EXPECT_NEAR(d, lp.distance(b, a), 1e-12);
        EXPECT_GT(d, 0.0);
    }
}

TEST(Similarity, HueRotationBarelyMovesGrayscaleStructure) {
    const Image src = scene(128, 128, 0.7f, 0.35f, 0.3f);
    const Image rot = rotate_hue(src, 120.0);
    auto p = MetricProviders::surrogates();
    const auto same = compute_similarity(src, src, "x", p);
    const auto moved = compute_similarity(src, rot, "x", p);
    EXPECT_LE(std::abs(*same.ds - *moved.ds), 0.02);
    // the colour change itself is real
    EXPECT_LT(ssim(src, rot), 0.95);
}

TEST(Similarity, AbsentProvidersAreMarkedNotZero) {
    MetricProviders p;
    p.structure = std::make_shared<DownProvider>();
    const Image im = scene(32, 32, 1, 0, 0);
    const auto s = compute_similarity(im, im, "a photo of a red apple", p);
    EXPECT_FALSE(s.ds);
    EXPECT_FALSE(s.cs);
    EXPECT_EQ(s.notes.size(), 2u);
    EXPECT_FALSE(compute_lpips_regions(im, im, Mask(32, 32, true), nullptr).background);
}

TEST(Similarity, ClipScoreUsesColourAugmentedPrompt) {
    auto clip = std::make_shared<ConstantClip>();
    MetricProviders p = MetricProviders::surrogates();
    p.text_image = clip;
    const Image im = scene(32, 32, 1, 0, 0);
    const auto r = evaluate_sample(im, im, rect_mask(32, 32, 8, 8, 24, 24), "a photo of a squirrel", "squirrel", "red", p);
    EXPECT_EQ(clip->last, "a photo of a red squirrel");
    EXPECT_DOUBLE_EQ(*r.cs, 25.0);
    EXPECT_EQ(r.providers.at("CS"), "const-clip@2");
}

TEST(Lpips, BackgroundNoiseOnlyMovesBackground) {
    std::mt19937_64 rng(11);
    std::normal_distribution<float> n(0.0f, 0.05f);
    const Image src = scene(64, 64, 0.2f, 0.6f, 0.9f);
    const Mask obj = rect_mask(64, 64, 16, 16, 48, 48);
    SurrogatePerceptualDistance lp;
    Image prev = src;
    double prev_bg = 0;
    for (int k = 1; k <= 4; ++k) {
        Image noisy = prev;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                if (!obj.at(x, y))
                    for (int c = 0; c < 3; ++c) noisy.at(x, y, c) += n(rng);
        const auto r = compute_lpips_regions(src, noisy, obj, &lp);
        EXPECT_GT(*r.background, prev_bg) << "noise level " << k;
        EXPECT_LE(std::abs(*r.object), 1e-3);
        prev_bg = *r.background;
        prev = noisy;
    }
}

namespace {

// Two sources on disk with masks, plus a manifest over all seven colours.
struct EvalFixture {
    std::filesystem::path root;
    Manifest manifest;
    std::vector<Image> sources;

    EvalFixture() : root(temp_dir("eval")) {
        manifest.kind = "generated";
        manifest.base_dir = root;
        const Mask mask = rect_mask(64, 64, 16, 16, 48, 48);
        for (int k = 0; k < 2; ++k) {
            const std::string id = "apple_t" + std::to_string(k + 1);
            const Image im = quantized(scene(64, 64, 0.8f, 0.2f * k, 0.1f));
            write_png(root / "sources" / (id + ".png"), im);
            write_mask_png(root / "masks" / (id + ".png"), mask);
            sources.push_back(im);
            SourceEntry s{id, "apple", "a photo of a apple", k, 100u + k, "sources/" + id + ".png", "masks/" + id + ".png"};
            for (const auto& c : kPureColors)
                manifest.tasks.push_back({id + "_" + std::string(c.name), id, "apple", s.prompt, std::string(c.name),
                                          s.image_path, s.mask_path, ""});
            manifest.sources.push_back(std::move(s));
        }
    }
    ~EvalFixture() { std::filesystem::remove_all(root); }

    std::filesystem::path identity_run(std::size_t skip = 0) const {
        const auto run = root / ("run" + std::to_string(skip));
        std::filesystem::create_directories(run);
        for (std::size_t i = skip; i < manifest.tasks.size(); ++i)
            std::filesystem::copy_file(manifest.resolve(manifest.tasks[i].source_path), run / (manifest.tasks[i].id + ".png"),
                                       std::filesystem::copy_options::overwrite_existing);
        return run;
    }
};

}  // namespace

TEST(Benchmark, IdentityRunScoresNoEdit) {
    EvalFixture f;
    const auto res = evaluate_benchmark(f.identity_run(), f.manifest, MetricProviders::surrogates());
    ASSERT_EQ(res.samples.size(), 14u);
    EXPECT_TRUE(res.missing.empty());
    const Mask mask = rect_mask(64, 64, 16, 16, 48, 48);
    for (std::size_t i = 0; i < res.samples.size(); ++i) {
        const auto& s = res.samples[i];
        EXPECT_EQ(s.ssim, 1.0);
        EXPECT_EQ(*s.lpips_bg, 0.0);
        EXPECT_EQ(*s.lpips_obj, 0.0);
        EXPECT_NEAR(*s.ds, 1.0, 1e-4);
        EXPECT_FALSE(s.cs);
        // no-edit baseline: the source's own distance to the target colour
        const auto base = compute_color_losses(f.sources[i / 7], mask, pure_color(s.color));
        EXPECT_EQ(s.l1_hue, base.l1_hue);
        EXPECT_EQ(s.l1_hsv, base.l1_hsv);
        EXPECT_EQ(s.mask_area, 1024u);
    }
    EXPECT_EQ(res.table.count.at("CS"), 0u);
    EXPECT_FALSE(res.table.mean.count("CS"));
    EXPECT_EQ(res.table.mean.at("SSIM"), 1.0);
}

TEST(Benchmark, EmptyRunListsEveryKey) {
    EvalFixture f;
    const auto empty = f.root / "empty";
    std::filesystem::create_directories(empty);
    try {
        evaluate_benchmark(empty, f.manifest, MetricProviders::surrogates());
        FAIL() << "expected DatasetError";
    } catch (const DatasetError& e) {
        ASSERT_EQ(e.deviations().size(), f.manifest.tasks.size());
        for (const auto& t : f.manifest.tasks) EXPECT_NE(std::string(e.what()).find(t.id), std::string::npos) << t.id;
    }
}

TEST(Benchmark, MissingFractionRule) {
    EvalFixture f;
    // 1 of 14 is over 5%: fails
    EXPECT_THROW(evaluate_benchmark(f.identity_run(1), f.manifest, MetricProviders::surrogates()), DatasetError);
    EvalOptions lenient;
    lenient.max_missing_fraction = 0.1;
    const auto r = evaluate_benchmark(f.identity_run(1), f.manifest, MetricProviders::surrogates(), lenient);
    ASSERT_EQ(r.missing.size(), 1u);
    EXPECT_EQ(r.missing[0], f.manifest.tasks[0].id);
    EXPECT_EQ(r.samples.size(), 13u);
}

TEST(Benchmark, MeanIsOrderFreeArithmeticMean) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<MetricReport> reps(40);
    for (auto& r : reps) {
        r.ds = u(rng);
        r.ssim = u(rng);
        r.l1_hue = 100 * u(rng);
        r.l1_hsv = 100 * u(rng);
        if (u(rng) < 0.5) r.lpips_bg = u(rng);
    }
    const auto t = mean_table(reps);
    double ssim_sum = 0, bg_sum = 0;
    std::size_t bg_n = 0;
    for (const auto& r : reps) {
        ssim_sum += r.ssim;
        if (r.lpips_bg) bg_sum += *r.lpips_bg, ++bg_n;
    }
    EXPECT_NEAR(t.mean.at("SSIM"), ssim_sum / 40, 1e-12);
    EXPECT_NEAR(t.mean.at("LPIPS_bg"), bg_sum / static_cast<double>(bg_n), 1e-12);
    EXPECT_EQ(t.count.at("LPIPS_bg"), bg_n);
    std::shuffle(reps.begin(), reps.end(), rng);
    const auto s = mean_table(reps);
    for (const auto& [k, v] : t.mean) EXPECT_NEAR(s.mean.at(k), v, 1e-12) << k;
}

TEST(Benchmark, CsvAndJsonReports) {
    EvalFixture f;
    const auto res = evaluate_benchmark(f.identity_run(), f.manifest, MetricProviders::surrogates());
    const auto csv = benchmark_csv(res);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "id,subject,color,DS,SSIM,CS,L1_hue,L1_hsv,LPIPS_bg,LPIPS_obj,mask_area");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 16);
    EXPECT_NE(csv.find("apple_t1_red,apple,red,"), std::string::npos);
    EXPECT_NE(csv.find("\nmean,,,"), std::string::npos);
    // CS is absent: an empty cell, never a zero
    EXPECT_NE(csv.find(",1.000000,,"), std::string::npos);
    EXPECT_EQ(benchmark_csv(evaluate_benchmark(f.identity_run(), f.manifest, MetricProviders::surrogates())), csv);

    const auto j = benchmark_json(res);
    EXPECT_EQ(j["expected"], 14);
    EXPECT_TRUE(j["mean"]["CS"].is_null());
    EXPECT_EQ(j["samples"].size(), 14u);
    EXPECT_EQ(j["providers"]["DS"], "structure-surrogate@1");
}
