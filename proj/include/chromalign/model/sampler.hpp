#pragma once

#include <functional>
#include <string>
#include <vector>

#include "chromalign/attn/hooks.hpp"
#include "chromalign/core/error.hpp"
#include "chromalign/core/tensor.hpp"
#include "chromalign/model/backend.hpp"

namespace chromalign {

// z_T ... z_0; latents[i] holds z_{T-i}.
struct LatentTrajectory {
    std::vector<Latent> latents;
    std::string prompt;
    int steps = 0;
    double guidance_scale = 1.0;

    bool empty() const noexcept { return latents.empty(); }
    const Latent& z_T() const { return front_checked(); }
    const Latent& z_0() const {
        front_checked();
        return latents.back();
    }
    const Latent& at_step(int t) const {
        require(t >= 0 && t <= steps && latents.size() == static_cast<std::size_t>(steps) + 1,
                "trajectory step out of range");
        return latents[static_cast<std::size_t>(steps - t)];
    }

private:
    const Latent& front_checked() const {
        require(!latents.empty(), "empty latent trajectory");
        return latents.front();
    }
};

// One unconditional embedding per denoising step; embeddings[i] is used at
// step t = T - i.
struct NullTextSchedule {
    std::vector<Matrix> embeddings;

    bool empty() const noexcept { return embeddings.empty(); }
    int steps() const noexcept { return static_cast<int>(embeddings.size()); }
    const Matrix& at_step(int t) const {
        require(t >= 1 && t <= steps(), "null-text schedule has no entry for step " + std::to_string(t));
        return embeddings[static_cast<std::size_t>(steps() - t)];
    }

    static NullTextSchedule constant(const Matrix& e, int steps) {
        return {std::vector<Matrix>(static_cast<std::size_t>(steps), e)};
    }
};

struct DenoiseOptions {
    int steps = 50;
    double guidance_scale = 7.5;
    HookSet* hooks = nullptr;
    // May rewrite z_{t-1} after step t (background preservation).
    std::function<void(int t, Latent& z_prev)> after_step;
    std::function<void(int t)> on_progress;
};

// Classifier-free guidance: eps_u + g * (eps_c - eps_u). With g == 1 the
// unconditional branch is skipped.
inline Latent guided_noise(const DiffusionBackend& m, const Latent& z, const Matrix& cond, const Matrix& uncond,
                           int t, int steps, double g, HookSet* hooks) {
    NoiseQuery q{t, steps, Branch::conditional, hooks};
    Latent eps_c = m.predict_noise(z, cond, q);
    if (g == 1.0) return eps_c;
    q.branch = Branch::unconditional;
    const Latent eps_u = m.predict_noise(z, uncond, q);
    for (std::size_t i = 0; i < eps_c.size(); ++i)
        eps_c.data[i] = static_cast<float>(eps_u.data[i] + g * (static_cast<double>(eps_c.data[i]) - eps_u.data[i]));
    return eps_c;
}

inline LatentTrajectory denoise(const DiffusionBackend& m, const Latent& z_T, const Matrix& cond,
                                const NullTextSchedule& uncond, const DenoiseOptions& opt) {
    require(opt.steps >= 0, "step count must be non-negative");
    require(opt.guidance_scale == 1.0 || uncond.steps() == opt.steps || uncond.steps() == 1,
            "null-text schedule length " + std::to_string(uncond.steps()) + " does not match T=" +
                std::to_string(opt.steps));
    if (opt.hooks) opt.hooks->prepare(m.layout(), opt.steps);
    LatentTrajectory traj;
    traj.steps = opt.steps;
    traj.guidance_scale = opt.guidance_scale;
    traj.latents.reserve(static_cast<std::size_t>(opt.steps) + 1);
    traj.latents.push_back(z_T);
    Latent z = z_T;
    for (int t = opt.steps; t >= 1; --t) {
        if (opt.hooks) opt.hooks->begin_step(t);
        const Matrix empty;
        const Matrix& u = opt.guidance_scale == 1.0 ? empty : uncond.steps() == 1 ? uncond.embeddings[0] : uncond.at_step(t);
        const Latent eps = guided_noise(m, z, cond, u, t, opt.steps, opt.guidance_scale, opt.hooks);
        z = m.scheduler().step(z, eps, t, opt.steps);
        if (opt.after_step) opt.after_step(t, z);
        traj.latents.push_back(z);
        if (opt.on_progress) opt.on_progress(t);
    }
    return traj;
}

// Deterministic DDIM inversion with the conditional branch only. Noise at
// step t is predicted from z_{t-1}. Returns z_T ... z_0.
inline LatentTrajectory ddim_invert(const DiffusionBackend& m, const Latent& z0, const Matrix& cond, int steps) {
    require(steps >= 0, "step count must be non-negative");
    std::vector<Latent> forward{z0};
    Latent z = z0;
    for (int t = 1; t <= steps; ++t) {
        const Latent eps = m.predict_noise(z, cond, {t, steps, Branch::conditional, nullptr});
        z = m.scheduler().inverse_step(z, eps, t, steps);
        forward.push_back(z);
    }
    LatentTrajectory traj;
    traj.steps = steps;
    traj.guidance_scale = 1.0;
    traj.latents.assign(forward.rbegin(), forward.rend());
    return traj;
}

}  // namespace chromalign
