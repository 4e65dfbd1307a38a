#pragma once

#include <cmath>
#include <vector>

#include "chromalign/core/error.hpp"
#include "chromalign/core/tensor.hpp"

namespace chromalign {

// Deterministic DDIM (eta = 0) over the SD training schedule: 1000 steps,
// scaled-linear betas 0.00085..0.012, steps_offset = 1, and the final
// alpha-bar taken from training step 0.
//
// Step indices t run T..1. Step t consumes z_t and produces z_{t-1}.
class DdimScheduler {
public:
    static constexpr int kTrainSteps = 1000;

    DdimScheduler() {
        const double lo = std::sqrt(0.00085), hi = std::sqrt(0.012);
        alphas_cumprod_.resize(kTrainSteps);
        double prod = 1.0;
        for (int i = 0; i < kTrainSteps; ++i) {
            const double b = lo + (hi - lo) * i / (kTrainSteps - 1);
            prod *= 1.0 - b * b;
            alphas_cumprod_[i] = prod;
        }
    }

    // Training timestep evaluated at step t of a T-step schedule.
    static int train_timestep(int t, int steps) {
        require(steps >= 1 && t >= 1 && t <= steps, "step index outside [1, T]");
        return (t - 1) * (kTrainSteps / steps) + 1;
    }

    // alpha-bar at step t; t == 0 is the clean end of the chain.
    double alpha_bar(int t, int steps) const {
        if (t == 0) return alphas_cumprod_[0];
        return alphas_cumprod_[static_cast<std::size_t>(train_timestep(t, steps))];
    }

    // z_{t-1} from z_t and predicted noise.
    Latent step(const Latent& z, const Latent& eps, int t, int steps) const {
        return transfer(z, eps, alpha_bar(t, steps), alpha_bar(t - 1, steps));
    }

    // Inversion: z_t from z_{t-1} using noise predicted at step t.
    Latent inverse_step(const Latent& z_prev, const Latent& eps, int t, int steps) const {
        return transfer(z_prev, eps, alpha_bar(t - 1, steps), alpha_bar(t, steps));
    }

    // d z_{t-1} / d eps for step t (the map is affine and diagonal).
    double step_noise_gain(int t, int steps) const {
        const double a = alpha_bar(t, steps), ap = alpha_bar(t - 1, steps);
        return std::sqrt(1.0 - ap) - std::sqrt(ap) * std::sqrt(1.0 - a) / std::sqrt(a);
    }

    const std::vector<double>& alphas_cumprod() const noexcept { return alphas_cumprod_; }

private:
    static Latent transfer(const Latent& z, const Latent& eps, double a_from, double a_to) {
        require(z.same_shape(eps), "latent and noise shapes differ");
        Latent out(z.channels, z.height, z.width);
        const double s_from = std::sqrt(a_from), n_from = std::sqrt(1.0 - a_from);
        const double s_to = std::sqrt(a_to), n_to = std::sqrt(1.0 - a_to);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double x0 = (z.data[i] - n_from * eps.data[i]) / s_from;
            out.data[i] = static_cast<float>(s_to * x0 + n_to * eps.data[i]);
        }
        return out;
    }

    std::vector<double> alphas_cumprod_;
};

}  // namespace chromalign
