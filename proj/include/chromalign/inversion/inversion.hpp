#pragma once

// DDIM inversion followed by per-step null-text optimisation: for every step
// the unconditional embedding is tuned with Adam so that the guided DDIM
// step lands on the inversion trajectory.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "chromalign/core/error.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/model/backend.hpp"
#include "chromalign/model/sampler.hpp"

namespace chromalign {

enum class SizePolicy { reject, resize };

struct InversionOptions {
    int inner_iterations = 10;
    double early_stop_loss = 1e-5;
    double learning_rate = 1e-2;  // decays linearly to 0 over the first 100 steps
    bool optimize_null_text = true;
    SizePolicy size_policy = SizePolicy::reject;
};

struct InversionStats {
    std::vector<double> final_loss;  // per step, T..1: MSE of the stepped latent to its pivot
    std::vector<int> iterations;     // inner iterations used per step
};

struct InversionResult {
    LatentTrajectory trajectory;
    NullTextSchedule schedule;
    InversionStats stats;
};

// Sides must be multiples of the backend's granularity (64 for an 8x VAE
// with three halvings).
inline Image conform_image(const Image& im, int multiple, SizePolicy policy) {
    require(!im.empty(), "image is empty");
    if (im.width % multiple == 0 && im.height % multiple == 0) return im;
    if (policy == SizePolicy::reject)
        throw ContractError("image size " + std::to_string(im.width) + "x" + std::to_string(im.height) +
                            " is not a multiple of " + std::to_string(multiple));
    auto round_up = [&](int v) { return std::max(multiple, (v + multiple / 2) / multiple * multiple); };
    return resize_bilinear(im, round_up(im.width), round_up(im.height));
}

namespace detail {

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Matrix m, v;
    int t = 0;

    void step(Matrix& param, const Matrix& grad, double lr) {
        if (m.size() == 0) {
            m = Matrix::Zero(grad.rows(), grad.cols());
            v = Matrix::Zero(grad.rows(), grad.cols());
        }
        ++t;
        m = beta1 * m + (1 - beta1) * grad;
        v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
        const double c1 = 1 - std::pow(beta1, t), c2 = 1 - std::pow(beta2, t);
        for (Eigen::Index i = 0; i < param.size(); ++i) {
            const double mh = m.data()[i] / c1, vh = v.data()[i] / c2;
            param.data()[i] -= static_cast<float>(lr * mh / (std::sqrt(vh) + eps));
        }
    }
};

}  // namespace detail

inline InversionResult invert_latent(const DiffusionBackend& m, const Latent& z0, const std::string& prompt, int steps,
                                     double guidance, const InversionOptions& opt = {}) {
    require(steps >= 0, "T must be non-negative");
    const Matrix cond = m.encode_prompt(prompt);
    InversionResult out;
    out.trajectory = ddim_invert(m, z0, cond, steps);
    out.trajectory.prompt = prompt;
    out.trajectory.guidance_scale = guidance;
    if (steps == 0) return out;

    const auto& sched = m.scheduler();
    const auto& pivots = out.trajectory;
    Matrix uncond = m.encode_prompt("");
    Latent z = pivots.z_T();
    const bool optimize = opt.optimize_null_text && guidance != 1.0 && m.supports_context_gradient();
    for (int i = 0; i < steps; ++i) {
        const int t = steps - i;
        const Latent& target = pivots.at_step(t - 1);
        const Latent eps_c = m.predict_noise(z, cond, {t, steps, Branch::conditional, nullptr});
        auto guided = [&](const Latent& eps_u) {
            Latent e(eps_c.channels, eps_c.height, eps_c.width);
            for (std::size_t k = 0; k < e.size(); ++k)
                e.data[k] = static_cast<float>(eps_u.data[k] + guidance * (static_cast<double>(eps_c.data[k]) - eps_u.data[k]));
            return e;
        };
        int used = 0;
        if (optimize) {
            detail::Adam adam;
            const double lr = opt.learning_rate * std::max(0.0, 1.0 - i / 100.0);
            const double gain = sched.step_noise_gain(t, steps) * (1.0 - guidance);
            for (int j = 0; j < opt.inner_iterations; ++j) {
                const TapedNoise taped = m.predict_noise_taped(z, uncond, {t, steps, Branch::unconditional, nullptr});
                const Latent prev = sched.step(z, guided(taped.eps), t, steps);
                used = j + 1;
                if (mean_squared_error(prev, target) < opt.early_stop_loss) break;
                Latent upstream(prev.channels, prev.height, prev.width);
                const double scale = 2.0 / static_cast<double>(prev.size()) * gain;
                for (std::size_t k = 0; k < prev.size(); ++k)
                    upstream.data[k] = static_cast<float>(scale * (static_cast<double>(prev.data[k]) - target.data[k]));
                adam.step(uncond, taped.context_vjp(upstream), lr);
            }
        }
        out.schedule.embeddings.push_back(uncond);
        const Latent eps_u = guidance == 1.0 ? eps_c : m.predict_noise(z, uncond, {t, steps, Branch::unconditional, nullptr});
        z = sched.step(z, guided(eps_u), t, steps);
        out.stats.final_loss.push_back(mean_squared_error(z, target));
        out.stats.iterations.push_back(used);
    }
    return out;
}

inline InversionResult invert_image(const DiffusionBackend& m, const Image& image, const std::string& prompt, int steps,
                                    double guidance, const InversionOptions& opt = {}) {
    const Image im = conform_image(image, m.image_multiple(), opt.size_policy);
    return invert_latent(m, m.encode_image(im), prompt, steps, guidance, opt);
}

// Guided denoising of the trajectory's z_T under the null-text schedule.
inline LatentTrajectory reconstruct_latents(const DiffusionBackend& m, const LatentTrajectory& traj,
                                            const NullTextSchedule& schedule, HookSet* hooks = nullptr) {
    require(!traj.empty(), "cannot reconstruct an empty trajectory");
    require(schedule.steps() == traj.steps || (traj.guidance_scale == 1.0 && schedule.empty()),
            "null-text schedule has " + std::to_string(schedule.steps()) + " steps, trajectory has T=" +
                std::to_string(traj.steps));
    DenoiseOptions opt;
    opt.steps = traj.steps;
    opt.guidance_scale = traj.guidance_scale;
    opt.hooks = hooks;
    auto out = denoise(m, traj.z_T(), m.encode_prompt(traj.prompt), schedule, opt);
    out.prompt = traj.prompt;
    return out;
}

inline Image reconstruct(const DiffusionBackend& m, const LatentTrajectory& traj, const NullTextSchedule& schedule) {
    return m.decode_latent(reconstruct_latents(m, traj, schedule).z_0());
}

}  // namespace chromalign
