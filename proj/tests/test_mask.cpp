#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "chromalign/mask/masking.hpp"
#include "support.hpp"

using namespace chromalign;
using namespace testing_support;

namespace {

// Brute-force reference for select_mask: first index with the minimum score.
int brute_force_pick(const std::vector<Mask>& cands, const Mask& cross) {
    int best = -1;
    double best_s = 0;
    const double a = static_cast<double>(cross.area());
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const double ai = static_cast<double>(cands[i].area());
        if (ai == 0) continue;
        const double s = std::abs(1.0 - a / ai);
        if (best < 0 || s < best_s) {
            best = static_cast<int>(i);
            best_s = s;
        }
    }
    return best;
}

// Mask with exactly `area` foreground pixels at random positions.
Mask mask_with_area(std::mt19937_64& rng, int w, int h, std::size_t area) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(w) * h);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    Mask m(w, h);
    for (std::size_t i = 0; i < area; ++i) m.bits[idx[i]] = 1;
    return m;
}

struct FakeSegmenter final : Segmenter {
    std::vector<ScoredMask> out;
    bool down = false;
    Point seen{-1, -1};
    std::string name() const override { return "fake"; }
    std::vector<ScoredMask> segment(const Image&, Point p) override {
        seen = p;
        if (down) throw ProviderUnavailable("connection refused");
        return out;
    }
};

const std::vector<std::string> kTokens{"<start>", "a", "photo", "of", "a", "apple", "<end>"};

// Cross maps for decoder block 1 where "apple" attends to a square of cells.
CaptureStore square_captures(int grid, int x0, int y0, int x1, int y1, int timesteps = 3) {
    CaptureStore s;
    const int ctx = static_cast<int>(kTokens.size());
    for (const auto& site : decoder_cross_sites(tiny_layout())) {
        if (site.block_index != 1) continue;
        for (int t = 1; t <= timesteps; ++t) {
            AttentionCapture c;
            c.site = site;
            c.timestep = t;
            c.grid_width = c.grid_height = grid;
            c.branches.resize(2);
            for (int h = 0; h < site.head_count; ++h) {
                Matrix m = Matrix::Constant(grid * grid, ctx, 1.0f / ctx);
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) {
                        m.row(y * grid + x).setConstant(0.5f / (ctx - 1));
                        m(y * grid + x, 5) = 0.5f;
                    }
                c.branches[static_cast<std::size_t>(Branch::conditional)].maps.push_back(m);
                c.branches[static_cast<std::size_t>(Branch::unconditional)].maps.push_back(m);
            }
            s.insert(std::move(c));
        }
    }
    return s;
}

}  // namespace

TEST(SelectMask, WorkedExample) {
    std::mt19937_64 rng(1);
    const Mask cross = mask_with_area(rng, 20, 20, 100);
    const std::vector<Mask> c{mask_with_area(rng, 20, 20, 90), mask_with_area(rng, 20, 20, 100),
                              mask_with_area(rng, 20, 20, 150)};
    const auto s = select_mask(c, cross);
    EXPECT_EQ(s.index, 1);
    EXPECT_EQ(s.score, 0.0);
    ASSERT_EQ(s.scores.size(), 3u);
    EXPECT_NEAR(*s.scores[0], 1.0 / 9.0, 1e-12);
    EXPECT_NEAR(*s.scores[2], 1.0 / 3.0, 1e-12);
    EXPECT_DOUBLE_EQ(selection_score(100, 200), 0.5);
}

TEST(SelectMask, MatchesBruteForceOnRandomSets) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const int w = std::uniform_int_distribution<int>(4, 24)(rng), h = std::uniform_int_distribution<int>(4, 24)(rng);
        const auto n = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
        const auto cells = static_cast<std::size_t>(w) * h;
        std::uniform_int_distribution<std::size_t> area(0, cells);
        const Mask cross = mask_with_area(rng, w, h, area(rng));
        std::vector<Mask> cands;
        for (std::size_t i = 0; i < n; ++i) cands.push_back(mask_with_area(rng, w, h, area(rng)));
        // keep at least one usable candidate
        if (std::all_of(cands.begin(), cands.end(), [](const Mask& m) { return m.empty(); }))
            cands[0] = mask_with_area(rng, w, h, 1);
        const auto s = select_mask(cands, cross);
        EXPECT_EQ(s.index, brute_force_pick(cands, cross)) << "trial " << trial;
        EXPECT_GE(s.score, 0.0);
    }
}

TEST(SelectMask, PermutationInvariant) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const Mask cross = mask_with_area(rng, 16, 16, std::uniform_int_distribution<std::size_t>(1, 256)(rng));
        std::vector<Mask> cands;
        std::set<std::size_t> used;
        // distinct areas, so there is no tie to break
        while (cands.size() < 5) {
            const auto a = std::uniform_int_distribution<std::size_t>(1, 256)(rng);
            if (used.insert(a).second) cands.push_back(mask_with_area(rng, 16, 16, a));
        }
        const Mask& chosen = cands[static_cast<std::size_t>(select_mask(cands, cross).index)];
        std::vector<Mask> shuffled = cands;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        EXPECT_EQ(shuffled[static_cast<std::size_t>(select_mask(shuffled, cross).index)].bits, chosen.bits);
    }
}

TEST(SelectMask, TiesGoToLowestIndexAndZeroAreaIsExcluded) {
    std::mt19937_64 rng(4);
    const Mask cross = mask_with_area(rng, 10, 10, 20);
    const std::vector<Mask> c{Mask(10, 10), mask_with_area(rng, 10, 10, 40), mask_with_area(rng, 10, 10, 40)};
    const auto s = select_mask(c, cross);
    EXPECT_EQ(s.index, 1);
    EXPECT_FALSE(s.scores[0].has_value());
    ASSERT_EQ(s.warnings.size(), 1u);
    EXPECT_THROW(select_mask({Mask(10, 10)}, cross), ContractError);
    EXPECT_THROW(select_mask({Mask(5, 5)}, cross), ContractError);
}

TEST(SelectMask, ZeroAreaReadingCountsBackground) {
    const Mask cross = rect_mask(10, 10, 0, 0, 10, 5);  // 50 fg, 50 bg
    const std::vector<Mask> c{rect_mask(10, 10, 0, 0, 10, 8), rect_mask(10, 10, 0, 0, 10, 5)};
    EXPECT_EQ(select_mask(c, cross, AreaReading::zero).index, 1);
    EXPECT_EQ(mask_area(c[0], AreaReading::zero), 20u);
}

TEST(Centroid, SquareAndPixel) {
    EXPECT_EQ(centroid(rect_mask(32, 32, 10, 10, 21, 21)), (Point{15, 15}));
    Mask one(10, 10);
    one.at(3, 7) = 1;
    EXPECT_EQ(centroid(one), (Point{3, 7}));
    EXPECT_THROW(centroid(Mask(4, 4)), ContractError);
}

TEST(Centroid, LShapeMatchesPixelAverage) {
    Mask l = rect_mask(40, 40, 5, 5, 10, 35);
    for (int y = 30; y < 35; ++y)
        for (int x = 10; x < 30; ++x) l.at(x, y) = 1;
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x)
            if (l.at(x, y)) sx += x, sy += y, ++n;
    const Point c = centroid(l);
    EXPECT_EQ(c.x, static_cast<int>(std::lround(sx / n)));
    EXPECT_EQ(c.y, static_cast<int>(std::lround(sy / n)));
}

TEST(AttentionMask, SquareIsRecoveredExactly) {
    Grid g(32, 32);
    for (int y = 5; y < 15; ++y)
        for (int x = 12; x < 22; ++x) g.at(x, y) = 1.0f;
    const auto m = threshold_attention(g, 0.5f);
    EXPECT_FALSE(m.degenerate);
    EXPECT_EQ(m.mask.bits, rect_mask(32, 32, 12, 5, 22, 15).bits);
}

TEST(AttentionMask, UniformMapIsDegenerate) {
    const auto m = threshold_attention(Grid(8, 8, 0.3f), 0.5f);
    EXPECT_TRUE(m.degenerate);
    EXPECT_TRUE(m.mask.empty());
}

TEST(AttentionMask, ThresholdSweepIsMonotone) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int trial = 0; trial < 200; ++trial) {
        Grid g(12, 9);
        for (auto& v : g.values) v = u(rng);
        std::size_t prev = g.values.size() + 1;
        for (int k = 0; k <= 20; ++k) {
            const auto area = threshold_attention(g, k / 20.0f).mask.area();
            EXPECT_LE(area, prev) << "trial " << trial << " threshold " << k / 20.0;
            prev = area;
        }
    }
    EXPECT_THROW(threshold_attention(Grid(2, 2), 1.5f), ContractError);
}

TEST(AttentionMask, AveragesBlockOneAndNamesMissingToken) {
    const auto caps = square_captures(8, 2, 2, 6, 6);
    const auto m = object_mask_from_attention(caps, kTokens, "apple", 0.4f, 8, 8);
    EXPECT_EQ(m.token_index, 5);
    EXPECT_EQ(m.mask.bits, rect_mask(8, 8, 2, 2, 6, 6).bits);
    try {
        object_mask_from_attention(caps, kTokens, "pear", 0.4f, 8, 8);
        FAIL() << "expected NotFoundError";
    } catch (const NotFoundError& e) {
        EXPECT_NE(std::string(e.what()).find("apple"), std::string::npos);
    }
    EXPECT_THROW(average_token_map(CaptureStore{}, 5), NotFoundError);
}

TEST(ObjectMask, SegmenterGroundTruthIsSelected) {
    const auto caps = square_captures(8, 2, 2, 6, 6);
    const Image im = scene(64, 64, 1, 0, 0);
    const Mask gt = rect_mask(64, 64, 17, 15, 47, 49);  // 1020 px vs 1024 from attention
    FakeSegmenter seg;
    seg.out = {{rect_mask(64, 64, 0, 0, 64, 64), 0.9}, {gt, 0.8}, {rect_mask(64, 64, 24, 24, 40, 40), 0.95}};
    const auto om = make_object_mask(im, caps, kTokens, "apple", &seg);
    EXPECT_FALSE(om.fallback);
    EXPECT_EQ(om.selected, 1);
    EXPECT_EQ(om.mask.bits, gt.bits);
    // prompt point is the attention centroid mapped to pixels
    EXPECT_EQ(seg.seen, (Point{36, 36}));
    EXPECT_EQ(om.point, seg.seen);
}

TEST(ObjectMask, FallbackWhenSegmenterIsDown) {
    const auto caps = square_captures(8, 2, 2, 6, 6);
    const Image im = scene(64, 64, 1, 0, 0);
    FakeSegmenter seg;
    seg.down = true;
    const auto om = make_object_mask(im, caps, kTokens, "apple", &seg);
    EXPECT_TRUE(om.fallback);
    EXPECT_EQ(om.selected, -1);
    EXPECT_EQ(om.mask.bits, rect_mask(64, 64, 16, 16, 48, 48).bits);
    ASSERT_FALSE(om.warnings.empty());
    EXPECT_NE(om.warnings.back().find("unavailable"), std::string::npos);

    const auto none = make_object_mask(im, caps, kTokens, "apple", nullptr);
    EXPECT_TRUE(none.fallback);
    FakeSegmenter empty;
    EXPECT_TRUE(make_object_mask(im, caps, kTokens, "apple", &empty).fallback);
}

TEST(ObjectMask, AllZeroCandidatesKeepCandidatesForOverride) {
    const auto caps = square_captures(8, 2, 2, 6, 6);
    FakeSegmenter seg;
    seg.out = {{Mask(64, 64), 0.5}};
    try {
        make_object_mask(scene(64, 64, 1, 0, 0), caps, kTokens, "apple", &seg);
        FAIL() << "expected MaskGenerationError";
    } catch (const MaskGenerationError& e) {
        EXPECT_EQ(e.candidates().size(), 1u);
    }
}

TEST(ObjectMask, SmallObjectWarns) {
    const auto caps = square_captures(8, 3, 3, 5, 5);
    const auto om = make_object_mask(scene(64, 64, 1, 0, 0), caps, kTokens, "apple", nullptr);
    EXPECT_TRUE(std::any_of(om.warnings.begin(), om.warnings.end(),
                            [](const std::string& w) { return w.find("small objects") != std::string::npos; }));
}

TEST(LatentMask, DownsampleMatchesLatentGrid) {
    const Mask m = rect_mask(64, 64, 16, 16, 48, 48);
    const Mask d = latent_mask(m, 8, 8);
    EXPECT_EQ(d.width, 8);
    EXPECT_EQ(d.bits, rect_mask(8, 8, 2, 2, 6, 6).bits);
}
