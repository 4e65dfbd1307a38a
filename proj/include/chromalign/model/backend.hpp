#pragma once

// Diffusion backend abstraction. The engine only talks to this interface, so
// a full SD v1.x runtime can be plugged in next to the built-in tiny model.

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/attn/hooks.hpp"
#include "chromalign/attn/site.hpp"
#include "chromalign/core/error.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/core/tensor.hpp"
#include "chromalign/model/scheduler.hpp"
#include "chromalign/model/text_encoder.hpp"
#include "chromalign/model/tiny_unet.hpp"
#include "chromalign/model/vae.hpp"

namespace chromalign {

struct NoiseQuery {
    int step = 1;   // DDIM step index in [1, steps]
    int steps = 1;
    Branch branch = Branch::conditional;
    HookSet* hooks = nullptr;
};

// Noise prediction plus a vector-Jacobian product w.r.t. the context.
struct TapedNoise {
    Latent eps;
    std::function<Matrix(const Latent& upstream)> context_vjp;
};

class DiffusionBackend {
public:
    virtual ~DiffusionBackend() = default;

    virtual const ModelLayout& layout() const = 0;
    const std::string& model_id() const { return layout().model_id; }
    virtual int latent_factor() const { return 8; }

    virtual Latent encode_image(const Image& im) const = 0;
    virtual Image decode_latent(const Latent& z) const = 0;
    virtual Matrix encode_prompt(std::string_view prompt) const = 0;
    virtual std::vector<std::string> tokenize(std::string_view prompt) const = 0;

    virtual Latent predict_noise(const Latent& z, const Matrix& context, const NoiseQuery& q) const = 0;

    // Needed for null-text optimisation; backends without it fall back to
    // plain DDIM inversion.
    virtual bool supports_context_gradient() const { return false; }
    virtual TapedNoise predict_noise_taped(const Latent&, const Matrix&, const NoiseQuery&) const {
        throw Error("backend " + model_id() + " has no context gradient");
    }

    // Smallest accepted image side granularity (latent sides must halve 3x).
    int image_multiple() const { return latent_factor() * 8; }

    const DdimScheduler& scheduler() const { return scheduler_; }

private:
    DdimScheduler scheduler_;
};

inline Latent gaussian_latent(std::uint64_t seed, int channels, int h, int w) {
    std::mt19937_64 rng(splitmix64(seed));
    std::normal_distribution<float> n(0.0f, 1.0f);
    Latent z(channels, h, w);
    for (auto& v : z.data) v = n(rng);
    return z;
}

struct TinyModelConfig {
    ModelLayout layout;
    std::uint64_t weight_seed = 1234;
    std::uint64_t text_seed = 77;
    float residual_scale = 0.05f;
};

// Same 3/1/3 topology as SD v1.x with a handful of channels per block.
inline ModelLayout tiny_layout() {
    ModelLayout l;
    l.model_id = "tiny-unet-v1";
    l.encoder = {{2, 2, 4}, {2, 2, 8}, {2, 2, 8}};
    l.mid = {{1, 2, 8}};
    l.decoder = {{3, 2, 8}, {3, 2, 8}, {3, 2, 4}};
    l.latent_channels = 4;
    l.context_length = 16;
    l.context_dim = 16;
    return l;
}

inline nlohmann::json tiny_config_to_json(const TinyModelConfig& c) {
    return {{"kind", "tiny"},
            {"layout", layout_to_json(c.layout)},
            {"weight_seed", c.weight_seed},
            {"text_seed", c.text_seed},
            {"residual_scale", c.residual_scale}};
}

inline TinyModelConfig tiny_config_from_json(const nlohmann::json& j) {
    TinyModelConfig c;
    c.layout = j.contains("layout") ? layout_from_json(j.at("layout")) : tiny_layout();
    c.weight_seed = j.value("weight_seed", c.weight_seed);
    c.text_seed = j.value("text_seed", c.text_seed);
    c.residual_scale = j.value("residual_scale", c.residual_scale);
    return c;
}

class TinyDiffusionModel final : public DiffusionBackend {
public:
    explicit TinyDiffusionModel(TinyModelConfig cfg = {tiny_layout()})
        : cfg_(std::move(cfg)),
          unet_(cfg_.layout, cfg_.weight_seed, cfg_.residual_scale),
          text_(cfg_.layout.context_length, cfg_.layout.context_dim, cfg_.text_seed) {}

    const ModelLayout& layout() const override { return unet_.layout(); }
    const TinyModelConfig& config() const noexcept { return cfg_; }

    Latent encode_image(const Image& im) const override { return codec_.encode(im); }
    Image decode_latent(const Latent& z) const override { return codec_.decode(z); }
    Matrix encode_prompt(std::string_view prompt) const override { return text_.encode(prompt); }
    std::vector<std::string> tokenize(std::string_view prompt) const override { return text_.tokenize(prompt); }

    Latent predict_noise(const Latent& z, const Matrix& context, const NoiseQuery& q) const override {
        const nn::HookScope scope{q.hooks, q.step, q.branch};
        const Latent net = unet_.forward(z, DdimScheduler::train_timestep(q.step, q.steps), context, scope, nullptr);
        return combine(z, net, q);
    }

    bool supports_context_gradient() const override { return true; }

    TapedNoise predict_noise_taped(const Latent& z, const Matrix& context, const NoiseQuery& q) const override {
        auto tape = std::make_shared<TinyUnet::Tape>();
        const nn::HookScope scope{nullptr, q.step, q.branch};
        const Latent net = unet_.forward(z, DdimScheduler::train_timestep(q.step, q.steps), context, scope, tape.get());
        TapedNoise out;
        out.eps = combine(z, net, q);
        const float gain = unet_.residual_scale();
        out.context_vjp = [this, tape, gain](const Latent& upstream) -> Matrix {
            return unet_.context_gradient(*tape, upstream) * gain;
        };
        return out;
    }

private:
    // eps = c_t * z + residual_scale * net. c_t makes the DDIM update the
    // identity on the prior part (unit-Gaussian data have a constant
    // probability-flow path), so only the network residual moves latents and
    // DDIM inversion is exact up to that residual.
    Latent combine(const Latent& z, const Latent& net, const NoiseQuery& q) const {
        const auto& s = scheduler();
        const double st = std::sqrt(s.alpha_bar(q.step, q.steps)), nt = std::sqrt(1.0 - st * st);
        const double sp = std::sqrt(s.alpha_bar(q.step - 1, q.steps)), np = std::sqrt(1.0 - sp * sp);
        const double prior = (st - sp) / (np * st - sp * nt);
        Latent eps(z.channels, z.height, z.width);
        for (std::size_t i = 0; i < z.size(); ++i)
            eps.data[i] = static_cast<float>(prior * z.data[i] + unet_.residual_scale() * net.data[i]);
        return eps;
    }

    TinyModelConfig cfg_;
    TinyUnet unet_;
    StubTextEncoder text_;
    PatchCodec codec_;
};

// "tiny" (or empty) selects the built-in model; anything else is a JSON
// model description on disk.
inline std::unique_ptr<DiffusionBackend> load_backend(const std::string& spec) {
    if (spec.empty() || spec == "tiny") return std::make_unique<TinyDiffusionModel>();
    const std::filesystem::path p(spec);
    if (!std::filesystem::exists(p)) throw NotFoundError("model description " + spec + " not found");
    const auto j = detail::read_json(p);
    const std::string kind = j.value("kind", std::string("tiny"));
    if (kind != "tiny")
        throw Error("model kind '" + kind + "' needs an external runtime that is not built into this engine");
    return std::make_unique<TinyDiffusionModel>(tiny_config_from_json(j));
}

inline std::string default_model_spec() {
    const char* env = std::getenv("CHROMALIGN_MODEL");
    return env ? env : "tiny";
}

}  // namespace chromalign
