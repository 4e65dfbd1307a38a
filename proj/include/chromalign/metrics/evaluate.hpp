#pragma once

// Benchmark evaluation: one MetricReport per task, plus the mean table.

#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/bench/manifest.hpp"
#include "chromalign/core/error.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/metrics/color.hpp"
#include "chromalign/metrics/quality.hpp"

namespace chromalign {

// Table columns in reporting order.
inline constexpr std::array<const char*, 7> kMetricColumns{"DS", "SSIM", "CS", "L1_hue", "L1_hsv", "LPIPS_bg", "LPIPS_obj"};

struct MetricReport {
    std::string id;
    std::string subject;
    std::string color;
    std::optional<double> ds;
    double ssim = 0;
    std::optional<double> cs;
    double l1_hue = 0;
    double l1_hsv = 0;
    std::optional<double> lpips_bg;
    std::optional<double> lpips_obj;
    std::size_t mask_area = 0;
    std::string mask_source;  // path of the mask used
    std::map<std::string, std::string> providers;
    std::vector<std::string> notes;

    std::optional<double> column(std::string_view name) const {
        if (name == "DS") return ds;
        if (name == "SSIM") return ssim;
        if (name == "CS") return cs;
        if (name == "L1_hue") return l1_hue;
        if (name == "L1_hsv") return l1_hsv;
        if (name == "LPIPS_bg") return lpips_bg;
        if (name == "LPIPS_obj") return lpips_obj;
        throw ContractError("unknown metric column " + std::string(name));
    }
};

struct EvalOptions {
    HueDistance hue_distance = HueDistance::circular;
    double max_missing_fraction = 0.05;  // at or above this, evaluation fails
};

// Scores one edited image. The object metric compares against the dataset's
// ground-truth edit when one is given, otherwise against the source.
inline MetricReport evaluate_sample(const Image& source, const Image& target, const Mask& mask, const std::string& prompt,
                                    const std::string& subject, const std::string& color, const MetricProviders& providers,
                                    const Image* reference = nullptr, const EvalOptions& opt = {}) {
    require(source.width == target.width && source.height == target.height,
            "target size " + std::to_string(target.width) + "x" + std::to_string(target.height) + " differs from source " +
                std::to_string(source.width) + "x" + std::to_string(source.height));
    MetricReport r;
    r.subject = subject;
    r.color = color;
    r.providers = providers.versions();
    const auto sim = compute_similarity(source, target, color_augmented_prompt(prompt, subject, color), providers);
    r.ds = sim.ds;
    r.ssim = sim.ssim;
    r.cs = sim.cs;
    r.notes = sim.notes;
    const auto losses = compute_color_losses(target, mask, pure_color(color), opt.hue_distance);
    r.l1_hue = losses.l1_hue;
    r.l1_hsv = losses.l1_hsv;
    const auto lp = compute_lpips_regions(source, target, mask, providers.perceptual.get(), reference);
    r.lpips_bg = lp.background;
    r.lpips_obj = lp.object;
    if (!lp.background) r.notes.emplace_back("LPIPS absent: no perceptual provider available");
    r.mask_area = mask.area();
    return r;
}

struct MeanTable {
    std::map<std::string, double> mean;       // columns with at least one value
    std::map<std::string, std::size_t> count;  // samples contributing per column
};

// Arithmetic mean per column over samples that carry the value.
inline MeanTable mean_table(const std::vector<MetricReport>& reports) {
    MeanTable t;
    std::map<std::string, double> sum;
    for (const char* c : kMetricColumns) {
        t.count[c] = 0;
        for (const auto& r : reports)
            if (auto v = r.column(c)) {
                sum[c] += *v;
                ++t.count[c];
            }
        if (t.count[c]) t.mean[c] = sum[c] / static_cast<double>(t.count[c]);
    }
    return t;
}

struct BenchmarkResult {
    std::vector<MetricReport> samples;  // manifest order
    std::vector<std::string> missing;   // task ids without a target image
    MeanTable table;
    std::map<std::string, std::string> providers;
    std::size_t expected = 0;
};

namespace detail {

inline std::filesystem::path first_existing(std::initializer_list<std::filesystem::path> ps) {
    for (const auto& p : ps)
        if (!p.empty() && std::filesystem::exists(p)) return p;
    return {};
}

}  // namespace detail

// Targets are {run_dir}/{task id}.png. Masks come from {run_dir}/masks/{task id}.png,
// then {run_dir}/masks/{source id}.png, then the manifest's mask path.
inline BenchmarkResult evaluate_benchmark(const std::filesystem::path& run_dir, const Manifest& manifest,
                                          const MetricProviders& providers, const EvalOptions& opt = {}) {
    require(!manifest.tasks.empty(), "manifest has no tasks");
    BenchmarkResult out;
    out.expected = manifest.tasks.size();
    out.providers = providers.versions();
    std::vector<const TaskEntry*> present;
    for (const auto& t : manifest.tasks) {
        if (std::filesystem::exists(run_dir / (t.id + ".png"))) present.push_back(&t);
        else out.missing.push_back(t.id);
    }
    const double frac = static_cast<double>(out.missing.size()) / static_cast<double>(out.expected);
    if (!out.missing.empty() && frac >= opt.max_missing_fraction)
        throw DatasetError(std::to_string(out.missing.size()) + " of " + std::to_string(out.expected) +
                               " targets missing from " + run_dir.string(),
                           out.missing);

    std::map<std::string, Image> source_cache;
    for (const TaskEntry* t : present) {
        const auto src_path = manifest.resolve(t->source_path);
        auto it = source_cache.find(t->source_path);
        if (it == source_cache.end()) {
            if (!std::filesystem::exists(src_path)) throw NotFoundError("source image " + src_path.string() + " for " + t->id + " not found");
            it = source_cache.emplace(t->source_path, read_png(src_path)).first;
        }
        const Image& source = it->second;
        const Image target = read_png(run_dir / (t->id + ".png"));
        const auto mask_path = detail::first_existing(
            {run_dir / "masks" / (t->id + ".png"), run_dir / "masks" / (t->source_id + ".png"), manifest.resolve(t->mask_path)});
        if (mask_path.empty()) throw NotFoundError("no object mask for " + t->id);
        Mask mask = read_mask_png(mask_path);
        if (mask.width != source.width || mask.height != source.height) mask = resize_nearest(mask, source.width, source.height);
        std::optional<Image> reference;
        if (!t->reference_path.empty()) reference = read_png(manifest.resolve(t->reference_path));
        auto r = evaluate_sample(source, target, mask, t->prompt, t->subject, t->color, providers,
                                 reference ? &*reference : nullptr, opt);
        r.id = t->id;
        r.mask_source = mask_path.string();
        out.samples.push_back(std::move(r));
    }
    out.table = mean_table(out.samples);
    return out;
}

namespace detail {

inline std::string csv_cell(const std::optional<double>& v) {
    if (!v) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

inline std::string csv_text(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

}  // namespace detail

// Absent metrics are empty cells; the final row holds the column means.
inline std::string benchmark_csv(const BenchmarkResult& r) {
    std::string s = "id,subject,color";
    for (const char* c : kMetricColumns) s += std::string(",") + c;
    s += ",mask_area\n";
    for (const auto& m : r.samples) {
        s += detail::csv_text(m.id) + "," + detail::csv_text(m.subject) + "," + m.color;
        for (const char* c : kMetricColumns) s += "," + detail::csv_cell(m.column(c));
        s += "," + std::to_string(m.mask_area) + "\n";
    }
    s += "mean,,";
    for (const char* c : kMetricColumns) {
        auto it = r.table.mean.find(c);
        s += "," + detail::csv_cell(it == r.table.mean.end() ? std::nullopt : std::optional<double>(it->second));
    }
    s += ",\n";
    return s;
}

inline nlohmann::json report_to_json(const MetricReport& m) {
    nlohmann::json j = {{"id", m.id},       {"subject", m.subject},     {"color", m.color},
                        {"mask_area", m.mask_area}, {"mask", m.mask_source}, {"providers", m.providers}};
    for (const char* c : kMetricColumns) {
        auto v = m.column(c);
        j[c] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    }
    if (!m.notes.empty()) j["notes"] = m.notes;
    return j;
}

inline nlohmann::json benchmark_json(const BenchmarkResult& r) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& m : r.samples) samples.push_back(report_to_json(m));
    nlohmann::json mean = nlohmann::json::object();
    for (const char* c : kMetricColumns) {
        auto it = r.table.mean.find(c);
        mean[c] = it == r.table.mean.end() ? nlohmann::json(nullptr) : nlohmann::json(it->second);
    }
    return {{"expected", r.expected},  {"evaluated", r.samples.size()}, {"missing", r.missing},
            {"providers", r.providers}, {"mean", mean},                  {"counts", r.table.count},
            {"samples", samples}};
}

}  // namespace chromalign
