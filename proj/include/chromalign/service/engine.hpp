#pragma once

// Pipeline entry points shared by the CLI and the HTTP service. Both front
// ends call these and nothing else touches the pipeline directly.

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "chromalign/bench/datasets.hpp"
#include "chromalign/bench/manifest.hpp"
#include "chromalign/edit/config.hpp"
#include "chromalign/edit/pipeline.hpp"
#include "chromalign/inversion/asset.hpp"
#include "chromalign/mask/http_segmenter.hpp"
#include "chromalign/metrics/evaluate.hpp"
#include "chromalign/metrics/http_providers.hpp"
#include "chromalign/model/backend.hpp"

namespace chromalign {

struct EngineSettings {
    std::string model = "tiny";
    std::string device = "cpu";
    std::filesystem::path asset_root = "chromalign-assets";
    std::string segmenter_url;  // empty: attention masks only

    // CHROMALIGN_MODEL, CHROMALIGN_DEVICE, CHROMALIGN_ASSET_ROOT, CHROMALIGN_SEGMENTER_URL.
    static EngineSettings from_env() {
        EngineSettings s;
        auto env = [](const char* k) -> std::optional<std::string> {
            const char* v = std::getenv(k);
            if (!v || !*v) return std::nullopt;
            return std::string(v);
        };
        s.model = default_model_spec();
        if (auto v = env("CHROMALIGN_DEVICE")) s.device = *v;
        if (auto v = env("CHROMALIGN_ASSET_ROOT")) s.asset_root = *v;
        if (auto v = env("CHROMALIGN_SEGMENTER_URL")) s.segmenter_url = *v;
        return s;
    }
};

struct SourceDescriptor {
    SourceKind kind = SourceKind::generated;
    std::string prompt;
    std::uint64_t seed = 0;  // generated only
    int width = 512;         // generated only
    int height = 512;
    std::string image;       // real only: artifact hash of the uploaded PNG
};

inline void to_json(nlohmann::json& j, const SourceDescriptor& d) {
    j = {{"kind", d.kind}, {"prompt", d.prompt}};
    if (d.kind == SourceKind::generated) {
        j["seed"] = d.seed;
        j["width"] = d.width;
        j["height"] = d.height;
    } else {
        j["image"] = d.image;
    }
}

inline void from_json(const nlohmann::json& j, SourceDescriptor& d) {
    d.kind = j.at("kind").get<SourceKind>();
    d.prompt = j.at("prompt").get<std::string>();
    d.seed = j.value("seed", std::uint64_t{0});
    d.width = j.value("width", 512);
    d.height = j.value("height", 512);
    d.image = j.value("image", std::string());
}

struct EvalOutcome {
    BenchmarkResult result;
    std::string csv;
    std::filesystem::path csv_path;
    std::filesystem::path json_path;
};

// A manifest JSON file, or a ColorBench root directory.
inline Manifest load_eval_manifest(const std::filesystem::path& p) {
    if (std::filesystem::is_directory(p)) return load_colorbench(p);
    return load_manifest(p);
}

class Engine {
public:
    explicit Engine(EngineSettings s = EngineSettings::from_env(), std::optional<MetricProviders> providers = std::nullopt)
        : settings_(std::move(s)) {
        if (settings_.device != "cpu")
            throw Error("device '" + settings_.device + "' is not available; this build runs on cpu only");
        model_ = load_backend(settings_.model);
        assets_ = std::make_unique<AssetCache>(settings_.asset_root);
        if (!settings_.segmenter_url.empty()) segmenter_ = std::make_unique<HttpSegmenter>(settings_.segmenter_url);
        providers_ = providers ? std::move(*providers) : providers_from_env();
    }

    const DiffusionBackend& model() const { return *model_; }
    AssetCache& assets() { return *assets_; }
    Segmenter* segmenter() { return segmenter_.get(); }
    const MetricProviders& providers() const { return providers_; }
    const EngineSettings& settings() const { return settings_; }

    // Provenance block attached to every result.
    nlohmann::json snapshot(const EditConfig& cfg) const {
        return {{"edit", cfg},
                {"model", model_->model_id()},
                {"layout_hash", model_->layout().layout_hash()},
                {"device", settings_.device},
                {"providers", providers_.versions()}};
    }

    SourceState start_source(const SourceDescriptor& d, const Image* image, const EditConfig& cfg) const {
        if (d.kind == SourceKind::generated) return prepare_generated_source(*model_, d.seed, d.prompt, cfg, d.width, d.height);
        require(image != nullptr, "a real source needs an image");
        return prepare_real_source(*model_, *image, d.prompt, cfg);
    }

    static ExtractionOptions extraction_options(const EditConfig& cfg, std::string prompt = {}) {
        ExtractionOptions o;
        o.steps = cfg.steps;
        o.guidance_scale = cfg.guidance_scale;
        o.prompt = std::move(prompt);
        o.inversion = cfg.inversion;
        return o;
    }

    ReferenceColorAsset register_color(const Image& im, const std::string& color_id, const ExtractionOptions& o) {
        return assets_->get_or_extract(*model_, im, color_id, o);
    }

    Image edit(EditSession& session, const TurnSpec& spec, const std::optional<EditConfig>& cfg = std::nullopt,
               const std::function<void(int)>& on_progress = {}) const {
        return edit_object_color(*model_, session, spec, segmenter_.get(), cfg, on_progress);
    }

    ObjectMask mask(const SourceState& src, const std::string& token, std::optional<Point> point, const EditConfig& cfg) const {
        TurnSpec spec;
        spec.object_token = token;
        spec.point = point;
        return resolve_mask(*model_, src, spec, cfg, segmenter_.get());
    }

    // Writes metrics.csv and metrics.json under out_dir.
    EvalOutcome run_eval(const std::filesystem::path& manifest_path, const std::filesystem::path& run_dir,
                         const std::filesystem::path& out_dir, const EvalOptions& opt = {}) const {
        if (!std::filesystem::is_directory(run_dir)) throw NotFoundError("run directory " + run_dir.string() + " not found");
        const Manifest m = load_eval_manifest(manifest_path);
        EvalOutcome o;
        o.result = evaluate_benchmark(run_dir, m, providers_, opt);
        o.csv = benchmark_csv(o.result);
        o.csv_path = out_dir / "metrics.csv";
        o.json_path = out_dir / "metrics.json";
        detail::write_text(o.csv_path, o.csv);
        detail::write_text(o.json_path, benchmark_json(o.result).dump(2) + "\n");
        return o;
    }

private:
    EngineSettings settings_;
    std::unique_ptr<DiffusionBackend> model_;
    std::unique_ptr<AssetCache> assets_;
    std::unique_ptr<Segmenter> segmenter_;
    MetricProviders providers_;
};

}  // namespace chromalign
