#include <gtest/gtest.h>

#include <set>

#include "chromalign/bench/datasets.hpp"
#include "chromalign/bench/manifest.hpp"
#include "colorbench_fixture.hpp"
#include "support.hpp"

using namespace chromalign;
using namespace testing_support;

TEST(Subjects, Counts) {
    EXPECT_EQ(generated_subjects().size(), kGeneratedSubjectCount);
    EXPECT_EQ(colorbench_subjects().size(), kColorBenchSubjectCount);
    for (const auto* list : {&generated_subjects(), &colorbench_subjects()}) {
        const std::set<std::string> unique(list->begin(), list->end());
        EXPECT_EQ(unique.size(), list->size());
    }
    EXPECT_EQ(generated_subjects().front(), "bread");
    EXPECT_EQ(generated_subjects()[158], "cello");
    EXPECT_EQ(kPromptTemplates.size(), 7u);
}

TEST(Prompts, VerbatimExpansion) {
    const auto p = expand_prompts("apple");
    const std::vector<std::string> want{"a photo of a apple",       "an image of a apple",    "a photo of a nice apple",
                                        "a photo of a large apple", "a good photo of a apple", "a rendition of a apple",
                                        "a toy of a apple"};
    EXPECT_EQ(p, want);
    EXPECT_THROW(expand_prompts(""), ContractError);
}

TEST(GeneratedManifest, FullCardinalities) {
    const auto m = build_generated_manifest();
    EXPECT_EQ(m.sources.size(), 1120u);
    EXPECT_EQ(m.tasks.size(), 7840u);
    std::set<std::string> ids;
    for (const auto& t : m.tasks) ids.insert(t.id);
    EXPECT_EQ(ids.size(), 7840u);
    for (const auto& s : m.sources) EXPECT_TRUE(s.seed.has_value()) << s.id;
    EXPECT_EQ(m.sources[0].id, "bread_t1");
    EXPECT_EQ(m.tasks[0].id, "bread_t1_black");
    const auto it = std::find_if(m.sources.begin(), m.sources.end(), [](const SourceEntry& s) { return s.subject == "teddy bear"; });
    ASSERT_NE(it, m.sources.end());
    EXPECT_EQ(it->id, "teddy-bear_t1");
}

TEST(GeneratedManifest, SmallAndEmpty) {
    const auto one = build_generated_manifest({"apple"}, {kPromptTemplates[0]}, {"red"});
    ASSERT_EQ(one.tasks.size(), 1u);
    EXPECT_EQ(one.tasks[0].prompt, "a photo of a apple");
    EXPECT_EQ(one.tasks[0].id, "apple_t1_red");
    const auto none = build_generated_manifest({}, {kPromptTemplates.begin(), kPromptTemplates.end()}, all_color_names());
    EXPECT_TRUE(none.sources.empty());
    EXPECT_TRUE(none.tasks.empty());
}

TEST(GeneratedManifest, RejectsDuplicatesAndUnknownColours) {
    const std::vector<std::string_view> t{kPromptTemplates[0]};
    EXPECT_THROW(build_generated_manifest({"apple", "pear", "apple"}, t, {"red"}), ContractError);
    EXPECT_THROW(build_generated_manifest({"apple"}, t, {"red", "red"}), ContractError);
    EXPECT_THROW(build_generated_manifest({"apple"}, t, {"mauve"}), NotFoundError);
}

TEST(GeneratedManifest, ReproducibleHash) {
    const auto a = build_generated_manifest(), b = build_generated_manifest();
    EXPECT_EQ(manifest_hash(a), manifest_hash(b));
    EXPECT_NE(manifest_hash(a), manifest_hash(build_generated_manifest(SeedPolicy{7})));
    const auto dir = temp_dir("manifest");
    save_manifest(a, dir / "m.json");
    const auto back = load_manifest(dir / "m.json");
    EXPECT_EQ(manifest_hash(back), manifest_hash(a));
    EXPECT_EQ(back.base_dir, dir);
    EXPECT_EQ(back.sources[3].seed, a.sources[3].seed);
    std::filesystem::remove_all(dir);
}

TEST(GeneratedManifest, BadSchemaIsStructural) {
    auto j = manifest_to_json(build_generated_manifest({"apple"}, {kPromptTemplates[0]}, {"red"}));
    j["schema"] = "other/9";
    EXPECT_THROW(manifest_from_json(j), StructuralError);
    j["schema"] = kManifestSchema;
    j["tasks"][0].erase("color");
    EXPECT_THROW(manifest_from_json(j), StructuralError);
}

namespace {

struct IntactFixture {
    std::filesystem::path root = temp_dir("colorbench");
    IntactFixture() { write_colorbench_fixture(root); }
    ~IntactFixture() { std::filesystem::remove_all(root); }
};

const std::filesystem::path& intact_fixture() {
    static const IntactFixture f;
    return f.root;
}

}  // namespace

TEST(ColorBench, IntactFixtureLoads) {
    const auto r = validate_colorbench(intact_fixture());
    EXPECT_TRUE(r.ok()) << (r.deviations.empty() ? "" : r.deviations.front());
    EXPECT_EQ(r.sources, 406u);
    EXPECT_EQ(r.pairs, 2842u);
    EXPECT_EQ(r.subjects, 100u);
    const auto m = load_colorbench(intact_fixture());
    EXPECT_EQ(m.tasks.size(), 2842u);
    EXPECT_EQ(m.kind, "colorbench");
    const auto& t = m.tasks.front();
    EXPECT_EQ(t.reference_path, "targets/" + t.color + "/" + t.source_id + ".png");
    EXPECT_TRUE(std::filesystem::exists(m.resolve(t.reference_path)));
    EXPECT_EQ(t.prompt, "a photo of a " + t.subject);
}

TEST(ColorBench, MissingTargetIsNamed) {
    const auto root = temp_dir("colorbench_broken");
    write_colorbench_fixture(root);
    std::filesystem::remove(root / "targets" / "blue" / "dog_2.png");
    try {
        load_colorbench(root);
        FAIL() << "expected DatasetError";
    } catch (const DatasetError& e) {
        const auto& d = e.deviations();
        EXPECT_TRUE(std::any_of(d.begin(), d.end(), [](const std::string& s) {
            return s.find("dog_2") != std::string::npos && s.find("blue") != std::string::npos;
        }));
        EXPECT_TRUE(std::any_of(d.begin(), d.end(), [](const std::string& s) { return s == "2841 pairs found, expected 2842"; }));
    }
    std::filesystem::remove_all(root);
}

TEST(ColorBench, EveryDeviationIsListed) {
    const auto root = temp_dir("colorbench_multi");
    write_colorbench_fixture(root);
    std::filesystem::remove(root / "masks" / "apple_1.png");
    write_png(root / "targets" / "red" / "cat_2.png", Image(8, 8));
    write_png(root / "targets" / "green" / "ghost_1.png", Image(4, 4));
    const auto r = validate_colorbench(root);
    auto has = [&](const std::string& needle) {
        return std::any_of(r.deviations.begin(), r.deviations.end(),
                           [&](const std::string& s) { return s.find(needle) != std::string::npos; });
    };
    EXPECT_TRUE(has("apple_1: mask missing"));
    EXPECT_TRUE(has("targets/red/cat_2.png: size differs"));
    EXPECT_TRUE(has("targets/green/ghost_1.png has no source"));
    EXPECT_EQ(r.deviations.size(), 3u);
    std::filesystem::remove_all(root);
}

TEST(ColorBench, EmptyRoot) {
    const auto root = temp_dir("colorbench_empty");
    try {
        load_colorbench(root);
        FAIL() << "expected DatasetError";
    } catch (const DatasetError& e) {
        ASSERT_FALSE(e.deviations().empty());
        EXPECT_EQ(e.deviations().front().rfind("0 sources found", 0), 0u);
    }
    EXPECT_THROW(validate_colorbench(root / "nope"), NotFoundError);
    std::filesystem::remove_all(root);
}
