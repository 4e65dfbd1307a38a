#pragma once

// Generated evaluation set (subjects x templates x colours) and the
// ColorBench real-image benchmark loader.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "chromalign/bench/manifest.hpp"
#include "chromalign/core/error.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/core/io.hpp"
#include "chromalign/metrics/color.hpp"

namespace chromalign {

// The first 159 entries are the published enumeration in order; the 160th
// completes the stated count (see the decisions ledger).
inline const std::vector<std::string>& generated_subjects() {
    static const std::vector<std::string> v{
        "bread", "hedgehog", "raccoon", "van", "panda", "pitcher", "baseball", "Pikachu", "perch", "helmet", "butterfly",
        "spinach", "sofa", "kale", "onion", "tarantula", "minivan", "chinchilla", "Charmander", "chair", "soap",
        "sunglasses", "dolphin", "porcupine", "hippopotamus", "kinkajou", "ant", "pineapple", "hamburger", "bulb",
        "honeydew", "fox", "piranha", "bison", "donut", "finch", "lizard", "Rilakkuma", "waffle", "cattle", "mushroom",
        "bagel", "bench", "python", "tomato", "tie", "boots", "leek", "bongo", "giraffe", "bed", "bow", "hovercraft",
        "scooter", "wolf", "bee", "egg", "sweater", "dog", "cymbal", "lettuce", "starfish", "sparrow", "starfruit",
        "celery", "turtle", "isopod", "lime", "humidifier", "parrot", "ladle", "armadillo", "monkey", "avocado", "snake",
        "skunk", "bird", "toaster", "rat", "koala", "camel", "apricot", "tank", "apple", "hoodie", "squirrel", "lemon",
        "tiger", "cantaloupe", "weasel", "sheep", "rabbit", "snail", "elephant", "bear", "Pichu", "hamster", "goldfish",
        "coat", "shorts", "ladybug", "lion", "ball", "gun", "SUV", "otter", "tick", "table", "beaver", "mackerel",
        "gerbil", "handbag", "artichoke", "asparagus", "cake", "cauliflower", "speaker", "ocelot", "banana", "backpack",
        "broccoli", "Cubone", "lemur", "scorpion", "javelina", "canoe", "timpani", "dragonfly", "cup", "pumpkin",
        "coconut", "iguana", "lobster", "orange", "snowman", "deer", "parsnip", "peach", "limousine", "pear", "purse",
        "ferret", "antelope", "spoon", "lamp", "pillow", "carrot", "cabbage", "truck", "frog", "grapefruit", "drum",
        "brownie", "moose", "Simba", "scarf", "mango", "glider", "cello",
        "teddy bear",
    };
    return v;
}

inline const std::vector<std::string>& colorbench_subjects() {
    static const std::vector<std::string> v{
        "apple", "cat", "dinosaur", "garlic", "ladybug", "peach", "strawberry", "asparagus", "celery", "dog", "glove",
        "leaf", "peanut", "sugar", "avocado", "champagne", "doughnut", "goldfish", "lemon", "pear", "suitcase",
        "backpack", "cherry", "dragon", "giraffe", "lion", "pigeon", "tomato", "banana", "chick", "dragonfly", "grape",
        "macaron", "potato", "T-shirt", "bee", "chili", "eagle", "hamburger", "mango", "raspberry", "bird", "chiwawa",
        "earthworm", "handbag", "mantis", "rhino", "vegetable", "blueberry", "coat", "eggplant", "hat", "mushroom",
        "rock", "walnut", "boots", "cocktail", "elephant", "heel", "noodle", "sausage", "wasp", "bug", "coconut", "fig",
        "hornet", "nut", "scorpion", "watermelon", "butter", "cookie", "fish", "horse", "okra", "Shells", "yam",
        "butterfly", "cricket", "flea", "icecream", "orange", "shirt", "cantaloupe", "Croton", "flower", "insect",
        "pancake", "shoe", "cap", "cucumber", "fly", "kiwifruit", "parrot", "spider", "car", "daikon", "fruit",
        "ladybird", "pea", "spinach",
    };
    return v;
}

// Verbatim, article errors included ("a photo of a apple").
inline constexpr std::array<std::string_view, 7> kPromptTemplates{
    "a photo of a {}",      "an image of a {}",   "a photo of a nice {}", "a photo of a large {}",
    "a good photo of a {}", "a rendition of a {}", "a toy of a {}",
};

inline constexpr std::size_t kGeneratedSubjectCount = 160;
inline constexpr std::size_t kColorBenchSubjectCount = 100;
inline constexpr std::size_t kColorBenchSources = 406;
inline constexpr std::size_t kColorBenchPairs = 2842;

inline std::string fill_template(std::string_view tmpl, const std::string& subject) {
    const auto pos = tmpl.find("{}");
    require(pos != std::string_view::npos, "template has no {} placeholder: " + std::string(tmpl));
    return std::string(tmpl.substr(0, pos)) + subject + std::string(tmpl.substr(pos + 2));
}

inline std::vector<std::string> expand_prompts(const std::string& subject,
                                               const std::vector<std::string_view>& templates = {kPromptTemplates.begin(), kPromptTemplates.end()}) {
    require(!subject.empty(), "subject must not be empty");
    std::vector<std::string> out;
    out.reserve(templates.size());
    for (auto t : templates) out.push_back(fill_template(t, subject));
    return out;
}

// Seeds come from one mt19937_64 stream (its output sequence is fixed by the
// C++ standard), drawn in manifest order.
struct SeedPolicy {
    std::uint64_t base_seed = 20240607;
};

inline std::string subject_slug(const std::string& s) {
    std::string out;
    for (char c : s) out += (c == ' ' || c == '/') ? '-' : c;
    return out;
}

inline Manifest build_generated_manifest(const std::vector<std::string>& subjects,
                                         const std::vector<std::string_view>& templates,
                                         const std::vector<std::string>& colors, const SeedPolicy& seeds = {}) {
    std::set<std::string> seen;
    for (const auto& s : subjects) {
        require(!s.empty(), "subject must not be empty");
        if (!seen.insert(s).second) throw ContractError("duplicate subject '" + s + "'");
    }
    std::set<std::string> seen_colors;
    for (const auto& c : colors) {
        pure_color(c);
        if (!seen_colors.insert(c).second) throw ContractError("duplicate colour '" + c + "'");
    }
    Manifest m;
    m.kind = "generated";
    m.provenance = {{"seed_policy", {{"generator", "mt19937_64"}, {"base_seed", seeds.base_seed}}},
                    {"templates", std::vector<std::string>(templates.begin(), templates.end())},
                    {"colors", colors}};
    std::mt19937_64 rng(seeds.base_seed);
    for (const auto& subject : subjects) {
        const auto prompts = expand_prompts(subject, templates);
        for (std::size_t t = 0; t < prompts.size(); ++t) {
            SourceEntry s;
            s.id = subject_slug(subject) + "_t" + std::to_string(t + 1);
            s.subject = subject;
            s.prompt = prompts[t];
            s.template_index = static_cast<int>(t);
            s.seed = rng();
            s.image_path = "sources/" + s.id + ".png";
            for (const auto& c : colors) {
                TaskEntry task;
                task.id = s.id + "_" + c;
                task.source_id = s.id;
                task.subject = subject;
                task.prompt = s.prompt;
                task.color = c;
                task.source_path = s.image_path;
                m.tasks.push_back(std::move(task));
            }
            m.sources.push_back(std::move(s));
        }
    }
    return m;
}

inline std::vector<std::string> all_color_names() {
    std::vector<std::string> v;
    for (const auto& c : kPureColors) v.emplace_back(c.name);
    return v;
}

inline Manifest build_generated_manifest(const SeedPolicy& seeds = {}) {
    return build_generated_manifest(generated_subjects(), {kPromptTemplates.begin(), kPromptTemplates.end()},
                                    all_color_names(), seeds);
}

// ---- ColorBench ----
//
// root/
//   index.json                      {"images": [{"id", "subject", "prompt"?}, ...]}
//   source/{subject}_{k}.png
//   targets/{color}/{subject}_{k}.png   one per colour
//   masks/{subject}_{k}.png

struct ColorBenchExpectation {
    std::size_t sources = kColorBenchSources;
    std::size_t pairs = kColorBenchPairs;
    std::size_t subjects = kColorBenchSubjectCount;
    bool check_images = true;  // decode PNGs and compare sizes
};

struct ColorBenchReport {
    std::size_t sources = 0;
    std::size_t pairs = 0;
    std::size_t subjects = 0;
    std::vector<std::string> deviations;
    Manifest manifest;
    bool ok() const { return deviations.empty(); }
};

namespace detail {

inline std::vector<std::string> png_stems(const std::filesystem::path& dir) {
    std::vector<std::string> out;
    if (!std::filesystem::is_directory(dir)) return out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().stem().string());
    std::sort(out.begin(), out.end());
    return out;
}

// "T-shirt_3" -> "T-shirt"; empty when the name has no _k suffix.
inline std::string subject_of(const std::string& stem) {
    const auto pos = stem.rfind('_');
    if (pos == std::string::npos || pos == 0 || pos + 1 == stem.size()) return {};
    if (!std::all_of(stem.begin() + static_cast<long>(pos) + 1, stem.end(), [](char c) { return c >= '0' && c <= '9'; })) return {};
    return stem.substr(0, pos);
}

inline std::optional<std::pair<int, int>> png_size(const std::filesystem::path& p) {
    try {
        const Image im = read_png(p);
        return std::pair{im.width, im.height};
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace detail

// Every deviation is listed; nothing is repaired.
inline ColorBenchReport validate_colorbench(const std::filesystem::path& root, const ColorBenchExpectation& want = {}) {
    if (!std::filesystem::is_directory(root)) throw NotFoundError("ColorBench root " + root.string() + " does not exist");
    ColorBenchReport r;
    auto& dev = r.deviations;
    const auto colors = all_color_names();
    const std::set<std::string> known(colorbench_subjects().begin(), colorbench_subjects().end());

    std::map<std::string, std::string> prompts;
    std::set<std::string> indexed;
    const auto index_path = root / "index.json";
    if (!std::filesystem::exists(index_path)) {
        dev.push_back("index.json missing");
    } else {
        try {
            const auto j = detail::read_json(index_path);
            for (const auto& e : j.at("images")) {
                const auto id = e.at("id").get<std::string>();
                if (!indexed.insert(id).second) dev.push_back("index.json lists " + id + " twice");
                if (e.contains("prompt")) prompts[id] = e.at("prompt").get<std::string>();
                const auto subj = e.value("subject", detail::subject_of(id));
                if (subj != detail::subject_of(id)) dev.push_back("index.json: " + id + " has subject '" + subj + "'");
            }
        } catch (const std::exception& e) {
            dev.push_back(std::string("index.json unreadable: ") + e.what());
        }
    }

    const auto stems = detail::png_stems(root / "source");
    std::set<std::string> subjects;
    r.manifest.kind = "colorbench";
    r.manifest.base_dir = root;
    r.manifest.provenance = {{"root", root.string()}};
    for (const auto& id : stems) {
        const std::string subject = detail::subject_of(id);
        if (subject.empty()) {
            dev.push_back("source/" + id + ".png: name is not {subject}_{k}");
            continue;
        }
        if (!known.count(subject)) dev.push_back("source/" + id + ".png: unknown subject '" + subject + "'");
        subjects.insert(subject);
        ++r.sources;
        if (!indexed.empty() && !indexed.count(id)) dev.push_back(id + " is not listed in index.json");
        const std::string mask_rel = "masks/" + id + ".png";
        const bool has_mask = std::filesystem::exists(root / mask_rel);
        if (!has_mask) dev.push_back(id + ": mask missing (" + mask_rel + ")");
        std::optional<std::pair<int, int>> size;
        if (want.check_images) {
            size = detail::png_size(root / "source" / (id + ".png"));
            if (!size) dev.push_back("source/" + id + ".png is not a readable PNG");
            if (size && has_mask) {
                const auto ms = detail::png_size(root / mask_rel);
                if (ms != size) dev.push_back(id + ": mask size differs from source");
            }
        }
        SourceEntry s;
        s.id = id;
        s.subject = subject;
        s.prompt = prompts.count(id) ? prompts[id] : fill_template(kPromptTemplates[0], subject);
        s.image_path = "source/" + id + ".png";
        s.mask_path = mask_rel;
        for (const auto& c : colors) {
            const std::string rel = "targets/" + c + "/" + id + ".png";
            if (!std::filesystem::exists(root / rel)) {
                dev.push_back(id + ": target colour '" + c + "' missing (" + rel + ")");
                continue;
            }
            if (want.check_images && size) {
                const auto ts = detail::png_size(root / rel);
                if (ts != size) dev.push_back(rel + ": size differs from source");
            }
            TaskEntry t;
            t.id = id + "_" + c;
            t.source_id = id;
            t.subject = subject;
            t.prompt = s.prompt;
            t.color = c;
            t.source_path = s.image_path;
            t.mask_path = s.mask_path;
            t.reference_path = rel;
            r.manifest.tasks.push_back(std::move(t));
            ++r.pairs;
        }
        r.manifest.sources.push_back(std::move(s));
    }
    for (const auto& id : indexed)
        if (!std::binary_search(stems.begin(), stems.end(), id)) dev.push_back("index.json lists " + id + " but source/" + id + ".png is missing");
    for (const auto& c : colors)
        for (const auto& id : detail::png_stems(root / "targets" / c))
            if (!std::binary_search(stems.begin(), stems.end(), id)) dev.push_back("targets/" + c + "/" + id + ".png has no source");
    r.subjects = subjects.size();

    if (r.sources == 0) {
        dev.insert(dev.begin(), "0 sources found under " + (root / "source").string());
        return r;
    }
    if (r.sources != want.sources)
        dev.push_back(std::to_string(r.sources) + " sources found, expected " + std::to_string(want.sources));
    if (r.pairs != want.pairs)
        dev.push_back(std::to_string(r.pairs) + " pairs found, expected " + std::to_string(want.pairs));
    if (r.subjects != want.subjects)
        dev.push_back(std::to_string(r.subjects) + " subjects found, expected " + std::to_string(want.subjects));
    for (const auto& s : colorbench_subjects())
        if (want.subjects == kColorBenchSubjectCount && !subjects.count(s)) dev.push_back("subject '" + s + "' has no images");
    return r;
}

inline Manifest load_colorbench(const std::filesystem::path& root, const ColorBenchExpectation& want = {}) {
    auto r = validate_colorbench(root, want);
    if (!r.ok()) throw DatasetError("ColorBench at " + root.string() + " failed validation", std::move(r.deviations));
    return std::move(r.manifest);
}

}  // namespace chromalign
