#pragma once

#include <cstdint>

#include "scribblediff/denoiser.hpp"
#include "scribblediff/grid.hpp"
#include "scribblediff/schedule.hpp"

namespace scribblediff {

struct SamplerConfig {
    double w = 2.0;        // guidance scale
    double lambda = 1.0;   // encode ratio in (0,1]
    int steps = 50;        // reverse steps N, must satisfy N <= floor(lambda*T)
    double eta = 0.0;      // stochasticity; 0 gives the deterministic path
    uint64_t seed = 0;
    // unconditional branch keeps the class-set vector (drops only the scribble);
    // false zeroes the class vector as well
    bool uncond_keeps_class_set = true;
    bool clamp_output = true;  // clamp the final image to [-1,1]

    void validate(const NoiseSchedule& s) const;
};

// (1+w)*eps_cond - w*eps_uncond, elementwise
Grid guided_noise(const Grid& eps_cond, const Grid& eps_uncond, double w);

// (x_t - sqrt(1-abar_t)*eps) / sqrt(abar_t)
Grid reconstruct_x0(const Grid& x_t, const Grid& eps, double alpha_bar_t);

// sigma_{tau_cur} = eta * sqrt((1-abar_prev)/(1-abar_cur)) * sqrt(1 - abar_cur/abar_prev)
double sigma_for(const NoiseSchedule& s, int tau_prev, int tau_cur, double eta);

// One reverse transition from tau_cur to tau_prev given the current state and
// the reconstructed clean image. tau_prev == 0 returns x0_hat + sigma*noise.
Grid ddim_step(const Grid& x_cur, const Grid& x0_hat, const NoiseSchedule& s, int tau_prev,
               int tau_cur, double sigma, const Grid& noise);

// Full conditional sampler: partially noise x_ref to timestep floor(lambda*T),
// then run guided denoising down the timestep grid. Deterministic given
// cfg.seed; the encode draw and the in-loop noise use separate keyed streams.
Grid sample(const Denoiser& d, const NoiseSchedule& s, const Grid& x_ref, const Condition& cond,
            const SamplerConfig& cfg);

}  // namespace scribblediff
