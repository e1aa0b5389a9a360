// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "textforge/latent.hpp"

#include <vector>

namespace textforge::pipeline {

/// Cumulative signal rates alpha_bar_t over the training timesteps.
class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> alphas_cumprod);

    /// Betas linear in sqrt space between beta_start and beta_end (the Stable Diffusion schedule).
    static NoiseSchedule scaled_linear(double beta_start = 0.00085, double beta_end = 0.012, int train_steps = 1000);

    double alpha_bar(int timestep) const;
    int train_steps() const { return static_cast<int>(alphas_cumprod_.size()); }
    const std::vector<double>& alphas_cumprod() const { return alphas_cumprod_; }

    /// Evenly spaced ("leading") sampler timesteps in descending order, offset by one.
    std::vector<int> sampling_timesteps(int steps) const;

    /// Deterministic DDIM update from `timestep` to `prev_timestep` (negative: the final step).
    Latent ddim_step(const Latent& noisy, const Latent& predicted_noise, int timestep, int prev_timestep) const;

private:
    std::vector<double> alphas_cumprod_;
};

/// Forward diffusion: sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * noise.
Latent init_latent(const Latent& z0, int timestep, const Latent& noise, const NoiseSchedule& schedule);

/// When each manipulation is active during a sampling run.
struct SamplingSchedule {
    int total_steps = 20;
    double sai_fraction = 0.5;
    double car_fraction = 1.0;
    std::vector<double> opt_stages{0.0, 0.2, 0.4};
    int opt_iters = 20;

    void validate() const;

    /// Number of leading steps on which SAI / CAR are active.
    int sai_steps() const;
    int car_steps() const;
    /// Step indices at which latent optimization runs.
    std::vector<int> opt_step_indices() const;
};

}  // namespace textforge::pipeline
