#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/core/error.hpp"
#include "chromalign/inversion/inversion.hpp"
#include "chromalign/mask/masking.hpp"

namespace chromalign {

// last_k: preserve on the final K steps (t <= K).
// from_step_n: preserve whenever t < T - K.
enum class PreservationMode { last_k, from_step_n };

struct EditConfig {
    int steps = 50;
    double guidance_scale = 7.5;
    double align_fraction = 0.2;   // share of the earliest steps that align Values
    std::optional<int> tau;        // explicit threshold; overrides align_fraction
    double blend_ratio = 0.1;
    int preservation_window = 5;
    PreservationMode preservation_mode = PreservationMode::last_k;
    int turns = 1;

    bool value_alignment = true;
    bool self_map_replacement = true;
    bool latent_blending = true;
    bool background_preservation = true;

    float mask_threshold = kDefaultMaskThreshold;
    AreaReading area_reading = AreaReading::nonzero;
    bool refresh_captures = true;  // recapture source maps from each turn's re-inversion
    bool store_trajectory = false;
    double divergence_psnr_db = 25.0;
    SizePolicy size_policy = SizePolicy::reject;
    InversionOptions inversion;

    std::string model;       // backend spec; empty = environment default
    std::string asset_root;  // colour cache directory

    // Alignment runs while t > tau.
    int effective_tau() const {
        if (tau) return *tau;
        return steps - static_cast<int>(std::lround(align_fraction * steps));
    }

    bool preserves_at(int t) const {
        if (!background_preservation) return false;
        return preservation_mode == PreservationMode::last_k ? t <= preservation_window
                                                             : t < steps - preservation_window;
    }

    // Every violated field, not just the first.
    std::vector<std::string> invalid_fields() const {
        std::vector<std::string> bad;
        if (steps < 1) bad.emplace_back("steps");
        if (!(guidance_scale >= 1.0) || !std::isfinite(guidance_scale)) bad.emplace_back("guidance_scale");
        if (!(align_fraction >= 0.0 && align_fraction <= 1.0)) bad.emplace_back("align_fraction");
        if (tau && (*tau < 0 || *tau > steps)) bad.emplace_back("tau");
        if (!(blend_ratio >= 0.0 && blend_ratio <= 1.0)) bad.emplace_back("blend_ratio");
        if (preservation_window < 0 || preservation_window > steps) bad.emplace_back("preservation_window");
        if (turns < 1) bad.emplace_back("turns");
        if (!(mask_threshold >= 0.0f && mask_threshold <= 1.0f)) bad.emplace_back("mask_threshold");
        if (inversion.inner_iterations < 0) bad.emplace_back("inversion.inner_iterations");
        return bad;
    }

    void validate() const {
        auto bad = invalid_fields();
        if (!bad.empty()) throw ValidationError(std::move(bad));
    }
};

NLOHMANN_JSON_SERIALIZE_ENUM(PreservationMode, {{PreservationMode::last_k, "last_k"},
                                                {PreservationMode::from_step_n, "from_step_N"}})
NLOHMANN_JSON_SERIALIZE_ENUM(AreaReading, {{AreaReading::nonzero, "nonzero"}, {AreaReading::zero, "zero"}})
NLOHMANN_JSON_SERIALIZE_ENUM(SizePolicy, {{SizePolicy::reject, "reject"}, {SizePolicy::resize, "resize"}})

inline void to_json(nlohmann::json& j, const EditConfig& c) {
    j = {{"T", c.steps},
         {"guidance_scale", c.guidance_scale},
         {"align_fraction", c.align_fraction},
         {"tau", c.tau ? nlohmann::json(*c.tau) : nlohmann::json(nullptr)},
         {"effective_tau", c.effective_tau()},
         {"blend_ratio", c.blend_ratio},
         {"preservation_window", c.preservation_window},
         {"preservation_mode", c.preservation_mode},
         {"turns", c.turns},
         {"value_alignment", c.value_alignment},
         {"self_map_replacement", c.self_map_replacement},
         {"latent_blending", c.latent_blending},
         {"background_preservation", c.background_preservation},
         {"mask_threshold", c.mask_threshold},
         {"area_reading", c.area_reading},
         {"refresh_captures", c.refresh_captures},
         {"store_trajectory", c.store_trajectory},
         {"divergence_psnr_db", c.divergence_psnr_db},
         {"size_policy", c.size_policy},
         {"null_text_iterations", c.inversion.inner_iterations},
         {"model", c.model},
         {"asset_root", c.asset_root}};
}

// Unknown keys and type errors are reported as invalid fields. effective_tau
// is derived and ignored on input.
inline EditConfig edit_config_from_json(const nlohmann::json& j, EditConfig base = {}) {
    if (!j.is_object()) throw ValidationError({"$"});
    std::vector<std::string> bad;
    EditConfig c = std::move(base);
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "T" || key == "steps") c.steps = v.get<int>();
            else if (key == "guidance_scale") c.guidance_scale = v.get<double>();
            else if (key == "align_fraction") c.align_fraction = v.get<double>();
            else if (key == "tau") c.tau = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
            else if (key == "blend_ratio" || key == "R") c.blend_ratio = v.get<double>();
            else if (key == "preservation_window" || key == "K") c.preservation_window = v.get<int>();
            else if (key == "preservation_mode") {
                const auto s = v.get<std::string>();
                if (s != "last_k" && s != "from_step_N") throw std::invalid_argument(s);
                c.preservation_mode = v.get<PreservationMode>();
            } else if (key == "turns") c.turns = v.get<int>();
            else if (key == "value_alignment") c.value_alignment = v.get<bool>();
            else if (key == "self_map_replacement") c.self_map_replacement = v.get<bool>();
            else if (key == "latent_blending") c.latent_blending = v.get<bool>();
            else if (key == "background_preservation") c.background_preservation = v.get<bool>();
            else if (key == "mask_threshold") c.mask_threshold = v.get<float>();
            else if (key == "area_reading") {
                const auto s = v.get<std::string>();
                if (s != "nonzero" && s != "zero") throw std::invalid_argument(s);
                c.area_reading = v.get<AreaReading>();
            } else if (key == "refresh_captures") c.refresh_captures = v.get<bool>();
            else if (key == "store_trajectory") c.store_trajectory = v.get<bool>();
            else if (key == "divergence_psnr_db") c.divergence_psnr_db = v.get<double>();
            else if (key == "size_policy") {
                const auto s = v.get<std::string>();
                if (s != "reject" && s != "resize") throw std::invalid_argument(s);
                c.size_policy = v.get<SizePolicy>();
            } else if (key == "null_text_iterations") c.inversion.inner_iterations = v.get<int>();
            else if (key == "model") c.model = v.get<std::string>();
            else if (key == "asset_root") c.asset_root = v.get<std::string>();
            else if (key == "effective_tau") continue;
            else bad.push_back(key);
        } catch (const std::exception&) {
            bad.push_back(key);
        }
    }
    c.inversion.size_policy = c.size_policy;
    for (auto& f : c.invalid_fields())
        if (std::find(bad.begin(), bad.end(), f) == bad.end()) bad.push_back(f);
    if (!bad.empty()) throw ValidationError(std::move(bad));
    return c;
}

}  // namespace chromalign
