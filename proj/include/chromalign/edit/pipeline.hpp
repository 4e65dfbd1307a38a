#pragma once

// Image-guided object colour editing. Per turn:
//   1. object mask from decoder cross-attention (+ segmenter refinement)
//   2. latent blending of the source z_T with the reference-colour z_T
//   3. guided denoising with Value alignment at decoder cross sites while
//      t > tau and source self-attention maps injected at every step
//   4. background latents copied from the source trajectory during the
//      preservation window
// Multi-turn sessions re-invert each output and edit it again.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/attn/hooks.hpp"
#include "chromalign/core/hash.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/edit/config.hpp"
#include "chromalign/inversion/asset.hpp"
#include "chromalign/inversion/inversion.hpp"
#include "chromalign/mask/masking.hpp"
#include "chromalign/model/backend.hpp"
#include "chromalign/model/sampler.hpp"

namespace chromalign {

// ---- latent operations ----

// (1 - M) z_s + M (z_s (1 - R) + z_c R); background cells are copied, not recomputed.
inline Latent blend_initial_latent(const Latent& zs, const Latent& zc, const Mask& mask, double ratio) {
    require(ratio >= 0.0 && ratio <= 1.0, "blend ratio must lie in [0, 1]");
    require(zs.same_shape(zc), "source and reference latents differ in shape");
    require(mask.width == zs.width && mask.height == zs.height, "mask is not at latent resolution");
    Latent out = zs;
    for (int c = 0; c < zs.channels; ++c)
        for (int y = 0; y < zs.height; ++y)
            for (int x = 0; x < zs.width; ++x)
                if (mask.at(x, y))
                    out.at(c, y, x) =
                        static_cast<float>(static_cast<double>(zs.at(c, y, x)) * (1.0 - ratio) + static_cast<double>(zc.at(c, y, x)) * ratio);
    return out;
}

// (1 - M) z_s + M z_t, as a cellwise selection.
inline Latent preserve_background_step(const Latent& target, const Latent& source, const Mask& mask) {
    require(target.same_shape(source), "target and source latents differ in shape");
    require(mask.width == target.width && mask.height == target.height, "mask is not at latent resolution");
    Latent out = target;
    for (int c = 0; c < target.channels; ++c)
        for (int y = 0; y < target.height; ++y)
            for (int x = 0; x < target.width; ++x)
                if (!mask.at(x, y)) out.at(c, y, x) = source.at(c, y, x);
    return out;
}

// Nearest-neighbour resampling of a latent to another grid.
inline Latent resize_latent_nearest(const Latent& z, int h, int w) {
    if (z.height == h && z.width == w) return z;
    Latent out(z.channels, h, w);
    for (int c = 0; c < z.channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at(c, y, x) = z.at(c, std::min(z.height - 1, static_cast<int>((y + 0.5) * z.height / h)),
                                       std::min(z.width - 1, static_cast<int>((x + 0.5) * z.width / w)));
    return out;
}

// ---- source state ----

enum class SourceKind { generated, real };
NLOHMANN_JSON_SERIALIZE_ENUM(SourceKind, {{SourceKind::generated, "generated"}, {SourceKind::real, "real"}})

struct SourceState {
    SourceKind kind = SourceKind::generated;
    std::string prompt;
    std::uint64_t seed = 0;
    Image input;                  // uploaded image (real) or generated output
    LatentTrajectory trajectory;  // z^s_T ... z^s_0 of the guided source pass
    NullTextSchedule null_text;
    CaptureStore captures;        // self maps (all sites) and cross maps
    Image reconstruction;
    std::optional<double> reconstruction_psnr;
    std::string input_hash;
};

inline std::string image_hash(const Image& im) {
    const auto png = encode_png(im);
    return sha256_hex(std::span<const unsigned char>(png));
}

// Everything the pipeline re-reads later: all self maps, all cross maps.
inline CaptureHook source_capture_hook(const ModelLayout& layout) {
    return CaptureHook::all_steps(enumerate_sites(layout), static_cast<RoleSet>(Role::map));
}

inline SourceState prepare_generated_source(const DiffusionBackend& m, std::uint64_t seed, const std::string& prompt,
                                            const EditConfig& cfg, int width, int height) {
    cfg.validate();
    require(width % m.image_multiple() == 0 && height % m.image_multiple() == 0,
            "generated image sides must be multiples of " + std::to_string(m.image_multiple()));
    SourceState s;
    s.kind = SourceKind::generated;
    s.prompt = prompt;
    s.seed = seed;
    const int f = m.latent_factor();
    const Latent zT = gaussian_latent(seed, m.layout().latent_channels, height / f, width / f);
    s.null_text = NullTextSchedule::constant(m.encode_prompt(""), cfg.steps);
    auto capture = source_capture_hook(m.layout());
    HookSet hooks{&capture};
    DenoiseOptions opt;
    opt.steps = cfg.steps;
    opt.guidance_scale = cfg.guidance_scale;
    opt.hooks = &hooks;
    s.trajectory = denoise(m, zT, m.encode_prompt(prompt), s.null_text, opt);
    s.trajectory.prompt = prompt;
    s.captures = capture.take();
    s.reconstruction = m.decode_latent(s.trajectory.z_0());
    s.input = s.reconstruction;
    s.input_hash = image_hash(quantized(s.input));
    return s;
}

inline SourceState prepare_real_source(const DiffusionBackend& m, const Image& image, const std::string& prompt,
                                       const EditConfig& cfg) {
    cfg.validate();
    SourceState s;
    s.kind = SourceKind::real;
    s.prompt = prompt;
    s.input = conform_image(image, m.image_multiple(), cfg.size_policy);
    s.input_hash = image_hash(quantized(s.input));
    InversionOptions inv = cfg.inversion;
    inv.size_policy = cfg.size_policy;
    auto res = invert_image(m, s.input, prompt, cfg.steps, cfg.guidance_scale, inv);
    s.null_text = std::move(res.schedule);
    auto capture = source_capture_hook(m.layout());
    HookSet hooks{&capture};
    s.trajectory = reconstruct_latents(m, res.trajectory, s.null_text, &hooks);
    s.captures = capture.take();
    s.reconstruction = m.decode_latent(s.trajectory.z_0());
    s.reconstruction_psnr = psnr(quantized(s.input), quantized(s.reconstruction));
    return s;
}

// ---- guided denoising ----

struct DenoiseCounters {
    std::vector<int> aligned_steps;             // steps that ran the Value-aligned model
    std::map<std::string, int> aligned_sites;   // rewritten V matrices per site (both branches)
    std::vector<int> preserved_steps;           // steps whose output was background-locked
    long replaced_maps = 0;                     // self-attention maps injected (per head, per branch)
};

inline void to_json(nlohmann::json& j, const DenoiseCounters& c) {
    j = {{"valign_invocations", c.aligned_steps.size()},
         {"aligned_steps", c.aligned_steps},
         {"aligned_sites", c.aligned_sites},
         {"preservation_applications", c.preserved_steps.size()},
         {"preserved_steps", c.preserved_steps},
         {"replaced_self_maps", c.replaced_maps}};
}

struct GuidedResult {
    LatentTrajectory trajectory;
    DenoiseCounters counters;
};

struct GuidedInputs {
    const ReferenceColorAsset* asset = nullptr;     // required when value alignment is on
    const CaptureStore* source_captures = nullptr;  // required when self-map replacement is on
    const LatentTrajectory* source_trajectory = nullptr;  // required when preservation is on
    const NullTextSchedule* null_text = nullptr;    // unconditional embeddings for the target pass
    HookSet* extra_hooks = nullptr;                 // e.g. diagnostics capture
    std::function<void(int t)> on_progress;
};

inline InjectionPlan make_injection_plan(const ModelLayout& layout, const EditConfig& cfg) {
    InjectionPlan plan;
    if (cfg.value_alignment) plan.value_alignment_sites = decoder_cross_sites(layout);
    if (cfg.self_map_replacement) plan.self_replacement_sites = self_sites(layout);
    plan.alignment_predicate = after_threshold(cfg.effective_tau());
    plan.replacement_predicate = always();
    return plan;
}

inline GuidedResult guided_denoise(const DiffusionBackend& m, const Latent& z_T, const std::string& prompt,
                                   const EditConfig& cfg, const Mask& latent_mask_obj, const GuidedInputs& in) {
    cfg.validate();
    const InjectionPlan plan = make_injection_plan(m.layout(), cfg);
    if (cfg.value_alignment) {
        require(in.asset != nullptr, "value alignment needs a reference colour asset");
        require(in.asset->steps == cfg.steps, "asset " + in.asset->color_id + " was extracted with T=" +
                                                  std::to_string(in.asset->steps) + ", edit uses T=" + std::to_string(cfg.steps));
    }
    if (cfg.self_map_replacement) require(in.source_captures != nullptr, "self-map replacement needs source captures");
    if (cfg.background_preservation) {
        require(in.source_trajectory != nullptr && in.source_trajectory->steps == cfg.steps,
                "background preservation needs the source trajectory at the same T");
        require(latent_mask_obj.width == z_T.width && latent_mask_obj.height == z_T.height,
                "object mask is not at latent resolution");
    }
    // Pre-flight: gather every coverage gap before any step runs.
    std::optional<ValueAlignmentHook> align;
    std::optional<SelfMapReplacementHook> replace;
    HookSet hooks;
    std::vector<std::string> all_gaps;
    if (cfg.value_alignment) {
        align.emplace(in.asset->values, plan);
        try {
            align->prepare(m.layout(), cfg.steps);
        } catch (const CoverageError& e) {
            all_gaps.insert(all_gaps.end(), e.gaps().begin(), e.gaps().end());
        }
        hooks.add(&*align);
    }
    if (cfg.self_map_replacement) {
        replace.emplace(*in.source_captures, plan);
        try {
            replace->prepare(m.layout(), cfg.steps);
        } catch (const CoverageError& e) {
            all_gaps.insert(all_gaps.end(), e.gaps().begin(), e.gaps().end());
        }
        hooks.add(&*replace);
    }
    if (!all_gaps.empty()) throw CoverageError("guided denoising pre-flight failed", std::move(all_gaps));
    if (in.extra_hooks) hooks.add_all(*in.extra_hooks);

    GuidedResult out;
    DenoiseOptions opt;
    opt.steps = cfg.steps;
    opt.guidance_scale = cfg.guidance_scale;
    opt.hooks = &hooks;
    opt.on_progress = in.on_progress;
    if (cfg.background_preservation) {
        opt.after_step = [&](int t, Latent& z_prev) {
            if (!cfg.preserves_at(t)) return;
            z_prev = preserve_background_step(z_prev, in.source_trajectory->at_step(t - 1), latent_mask_obj);
            out.counters.preserved_steps.push_back(t);
        };
    }
    const NullTextSchedule fallback = NullTextSchedule::constant(m.encode_prompt(""), 1);
    out.trajectory = denoise(m, z_T, m.encode_prompt(prompt), in.null_text ? *in.null_text : fallback, opt);
    out.trajectory.prompt = prompt;
    if (align) {
        out.counters.aligned_steps = align->aligned_steps();
        out.counters.aligned_sites = align->site_counts();
    }
    if (replace) out.counters.replaced_maps = replace->replaced_count();
    return out;
}

// ---- turns and sessions ----

struct EditTurn {
    int index = 0;
    std::string object_token;
    std::string color_id;
    std::string asset_hash;
    ObjectMask mask;
    Mask latent_mask;
    Image result;
    std::optional<LatentTrajectory> trajectory;  // kept when store_trajectory is set
    DenoiseCounters counters;
    EditConfig config;
    std::string input_hash;
    std::string output_hash;
    std::vector<std::string> warnings;
    double seconds = 0.0;
    std::optional<double> source_psnr;  // reconstruction quality of the turn's source
};

struct TurnSpec {
    std::string object_token;
    const ReferenceColorAsset* asset = nullptr;
    std::optional<Mask> mask_override;   // image resolution
    std::optional<Point> point;          // segmenter prompt override
};

class EditSession {
public:
    EditSession(SourceState source, EditConfig config) : source_(std::move(source)), config_(std::move(config)) {
        config_.validate();
    }

    const SourceState& source() const noexcept { return source_; }
    SourceState& source() noexcept { return source_; }
    const EditConfig& config() const noexcept { return config_; }
    const std::vector<EditTurn>& turns() const noexcept { return turns_; }

    void record(EditTurn t) { turns_.push_back(std::move(t)); }

    // The re-inverted output of the last turn becomes the next source.
    void advance(const DiffusionBackend& m) {
        if (turns_.empty()) return;
        SourceState next = prepare_real_source(m, turns_.back().result, source_.prompt, config_);
        if (!config_.refresh_captures) next.captures = std::move(source_.captures);
        source_ = std::move(next);
    }

private:
    SourceState source_;
    EditConfig config_;
    std::vector<EditTurn> turns_;
};

inline ObjectMask resolve_mask(const DiffusionBackend& m, const SourceState& src, const TurnSpec& spec,
                               const EditConfig& cfg, Segmenter* segmenter) {
    if (spec.mask_override) {
        ObjectMask om;
        om.mask = *spec.mask_override;
        require(om.mask.width == src.input.width && om.mask.height == src.input.height,
                "mask override does not match the source image size");
        require(!om.mask.empty(), "mask override is empty");
        om.point = centroid(om.mask);
        om.warnings.push_back("mask supplied by caller");
        return om;
    }
    MaskOptions mo;
    mo.threshold = cfg.mask_threshold;
    mo.area_reading = cfg.area_reading;
    mo.latent_factor = m.latent_factor();
    mo.point = spec.point;
    return make_object_mask(src.input, src.captures, m.tokenize(src.prompt), spec.object_token, segmenter, mo);
}

// One edit turn on the session's current source; the turn is recorded.
inline Image edit_object_color(const DiffusionBackend& m, EditSession& session, const TurnSpec& spec,
                               Segmenter* segmenter = nullptr, const std::optional<EditConfig>& override_cfg = std::nullopt,
                               const std::function<void(int t)>& on_progress = {}) {
    const auto start = std::chrono::steady_clock::now();
    const EditConfig cfg = override_cfg ? *override_cfg : session.config();
    cfg.validate();
    const SourceState& src = session.source();
    EditTurn turn;
    turn.index = static_cast<int>(session.turns().size()) + 1;
    turn.object_token = spec.object_token;
    turn.config = cfg;
    turn.input_hash = src.input_hash;
    turn.source_psnr = src.reconstruction_psnr;
    if (src.reconstruction_psnr && *src.reconstruction_psnr < cfg.divergence_psnr_db)
        turn.warnings.push_back("source reconstruction PSNR " + std::to_string(*src.reconstruction_psnr) +
                                " dB is below " + std::to_string(cfg.divergence_psnr_db) + " dB; inversion diverged");
    if (cfg.value_alignment || cfg.latent_blending) require(spec.asset != nullptr, "edit needs a reference colour asset");
    if (spec.asset) {
        validate_asset(*spec.asset, m.layout());
        turn.color_id = spec.asset->color_id;
        turn.asset_hash = spec.asset->content_hash();
    }

    turn.mask = resolve_mask(m, src, spec, cfg, segmenter);
    for (const auto& w : turn.mask.warnings) turn.warnings.push_back(w);
    const Latent& zs = src.trajectory.z_T();
    turn.latent_mask = latent_mask(turn.mask.mask, zs.width, zs.height);
    if (turn.latent_mask.area() < kDegenerateMaskCells)
        turn.warnings.push_back("latent mask covers " + std::to_string(turn.latent_mask.area()) + " cells (< " +
                                std::to_string(kDegenerateMaskCells) + ")");

    Latent zT = zs;
    if (cfg.latent_blending && spec.asset) {
        const Latent zc = resize_latent_nearest(spec.asset->z_T, zs.height, zs.width);
        zT = blend_initial_latent(zs, zc, turn.latent_mask, cfg.blend_ratio);
    }
    GuidedInputs in;
    in.asset = spec.asset;
    in.source_captures = &src.captures;
    in.source_trajectory = &src.trajectory;
    in.null_text = &src.null_text;
    in.on_progress = on_progress;
    auto res = guided_denoise(m, zT, src.prompt, cfg, turn.latent_mask, in);
    turn.counters = std::move(res.counters);
    turn.result = m.decode_latent(res.trajectory.z_0());
    turn.output_hash = image_hash(quantized(turn.result));
    if (cfg.store_trajectory) turn.trajectory = std::move(res.trajectory);
    turn.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    Image result = turn.result;
    session.record(std::move(turn));
    return result;
}

// Turn i + 1 edits the re-inversion of turn i's output with the same prompt.
inline std::vector<Image> run_multi_turn(const DiffusionBackend& m, EditSession& session,
                                         const std::vector<TurnSpec>& specs, Segmenter* segmenter = nullptr) {
    require(!specs.empty(), "multi-turn editing needs at least one turn");
    std::vector<Image> out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (!session.turns().empty()) session.advance(m);
        out.push_back(edit_object_color(m, session, specs[i], segmenter));
    }
    return out;
}

// ---- persistence ----

inline nlohmann::json turn_to_json(const EditTurn& t) {
    nlohmann::json j = {{"index", t.index},
                        {"object_token", t.object_token},
                        {"color_id", t.color_id},
                        {"asset_hash", t.asset_hash},
                        {"input_hash", t.input_hash},
                        {"output_hash", t.output_hash},
                        {"config", t.config},
                        {"counters", t.counters},
                        {"mask",
                         {{"fallback", t.mask.fallback},
                          {"selected", t.mask.selected},
                          {"score", t.mask.score},
                          {"point", {t.mask.point.x, t.mask.point.y}},
                          {"area", t.mask.mask.area()},
                          {"latent_area", t.latent_mask.area()}}},
                        {"warnings", t.warnings},
                        {"seconds", t.seconds}};
    if (t.source_psnr) j["source_psnr_db"] = *t.source_psnr;
    return j;
}

// turn.json, mask.png (1-bit), output.png and, when kept, trajectory/z_{t}.f32.
inline void save_turn(const EditTurn& t, const std::filesystem::path& dir) {
    detail::write_text(dir / "turn.json", turn_to_json(t).dump(2) + "\n");
    write_mask_png(dir / "mask.png", t.mask.mask);
    write_png(dir / "output.png", t.result);
    if (t.trajectory)
        for (int s = t.trajectory->steps; s >= 0; --s)
            write_f32(dir / "trajectory" / ("z_" + std::to_string(s) + ".f32"), latent_array(t.trajectory->at_step(s)));
}

}  // namespace chromalign
