// SPDX-License-Identifier: Apache-2.0
#include "textforge/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace textforge::pipeline {

NoiseSchedule::NoiseSchedule(std::vector<double> alphas_cumprod) : alphas_cumprod_(std::move(alphas_cumprod)) {
    if (alphas_cumprod_.empty()) throw ContractError("noise schedule: empty alpha_bar table");
    for (double a : alphas_cumprod_)
        if (!(a > 0.0 && a <= 1.0)) throw ContractError("noise schedule: alpha_bar must lie in (0, 1]");
}

NoiseSchedule NoiseSchedule::scaled_linear(double beta_start, double beta_end, int train_steps) {
    if (train_steps < 2) throw ContractError("noise schedule: need at least two training steps");
    std::vector<double> table(static_cast<size_t>(train_steps));
    const double lo = std::sqrt(beta_start), hi = std::sqrt(beta_end);
    double running = 1.0;
    for (int t = 0; t < train_steps; ++t) {
        const double root = lo + (hi - lo) * t / (train_steps - 1);
        running *= 1.0 - root * root;
        table[static_cast<size_t>(t)] = running;
    }
    return NoiseSchedule(std::move(table));
}

double NoiseSchedule::alpha_bar(int timestep) const {
    if (timestep < 0 || timestep >= train_steps())
        throw ContractError("noise schedule: timestep " + std::to_string(timestep) + " out of range");
    return alphas_cumprod_[static_cast<size_t>(timestep)];
}

std::vector<int> NoiseSchedule::sampling_timesteps(int steps) const {
    if (steps < 1 || steps > train_steps()) throw ContractError("noise schedule: invalid number of sampling steps");
    const int ratio = train_steps() / steps;
    const int offset = ratio > 1 ? 1 : 0;
    std::vector<int> out;
    for (int k = steps - 1; k >= 0; --k) out.push_back(k * ratio + offset);
    return out;
}

Latent NoiseSchedule::ddim_step(const Latent& noisy, const Latent& predicted_noise, int timestep, int prev_timestep) const {
    if (!noisy.same_shape(predicted_noise)) throw ContractError("ddim_step: shape mismatch");
    const double a_t = alpha_bar(timestep);
    const double a_prev = prev_timestep >= 0 ? alpha_bar(prev_timestep) : alphas_cumprod_.front();
    const Matrix x0 = (noisy.values - std::sqrt(1.0 - a_t) * predicted_noise.values) / std::sqrt(a_t);
    return Latent(noisy.channels, noisy.height, noisy.width,
                  std::sqrt(a_prev) * x0 + std::sqrt(1.0 - a_prev) * predicted_noise.values);
}

Latent init_latent(const Latent& z0, int timestep, const Latent& noise, const NoiseSchedule& schedule) {
    if (!z0.same_shape(noise)) throw ContractError("init_latent: z0 and noise differ in shape");
    const double a = schedule.alpha_bar(timestep);
    return Latent(z0.channels, z0.height, z0.width, std::sqrt(a) * z0.values + std::sqrt(1.0 - a) * noise.values);
}

void SamplingSchedule::validate() const {
    if (total_steps < 1) throw ValidationError("schedule: total_steps must be >= 1");
    auto in_unit = [](double f) { return f >= 0.0 && f <= 1.0; };
    if (!in_unit(sai_fraction) || !in_unit(car_fraction)) throw ValidationError("schedule: fractions must lie in [0, 1]");
    if (opt_iters < 0) throw ValidationError("schedule: opt_iters must be >= 0");
    for (size_t k = 0; k < opt_stages.size(); ++k) {
        if (!in_unit(opt_stages[k])) throw ValidationError("schedule: optimization stages must lie in [0, 1]");
        if (k > 0 && !(opt_stages[k] > opt_stages[k - 1]))
            throw ValidationError("schedule: optimization stages must be strictly increasing");
    }
}

namespace {

int leading_steps(double fraction, int total) {
    return std::clamp(static_cast<int>(std::ceil(fraction * total - 1e-9)), 0, total);
}

}  // namespace

int SamplingSchedule::sai_steps() const { return leading_steps(sai_fraction, total_steps); }
int SamplingSchedule::car_steps() const { return leading_steps(car_fraction, total_steps); }

std::vector<int> SamplingSchedule::opt_step_indices() const {
    std::vector<int> out;
    for (double f : opt_stages) {
        const int step = std::min(static_cast<int>(std::lround(f * total_steps)), total_steps - 1);
        if (out.empty() || out.back() != step) out.push_back(step);
    }
    return out;
}

}  // namespace textforge::pipeline
