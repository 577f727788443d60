#include "scribblediff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scribblediff/rng.hpp"

namespace scribblediff {

namespace {
const uint64_t kTagEncode = fnv1a64("sampler.encode");
const uint64_t kTagLoop = fnv1a64("sampler.loop");
}  // namespace

void SamplerConfig::validate(const NoiseSchedule& s) const {
    if (!(lambda > 0.0) || lambda > 1.0)
        throw std::invalid_argument("SamplerConfig: lambda must be in (0,1]");
    if (steps < 1) throw std::invalid_argument("SamplerConfig: steps must be positive");
    if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("SamplerConfig: eta must be in [0,1]");
    if (w < -1.0) throw std::invalid_argument("SamplerConfig: w must be >= -1");
    if (steps > tau_floor(lambda, s.T, 1, 1))
        throw std::invalid_argument("SamplerConfig: steps exceed floor(lambda*T)");
}

Grid guided_noise(const Grid& eps_cond, const Grid& eps_uncond, double w) {
    require_same_shape(eps_cond, eps_uncond, "guided_noise");
    if (w == 0.0) return eps_cond;
    const auto a = static_cast<float>(1.0 + w);
    const auto b = static_cast<float>(w);
    Grid out(eps_cond.c, eps_cond.h, eps_cond.w);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a * eps_cond.v[i] - b * eps_uncond.v[i];
    return out;
}

Grid reconstruct_x0(const Grid& x_t, const Grid& eps, double alpha_bar_t) {
    require_same_shape(x_t, eps, "reconstruct_x0");
    if (!(alpha_bar_t > 0.0) || alpha_bar_t > 1.0)
        throw std::invalid_argument("reconstruct_x0: alpha_bar_t must be in (0,1]");
    const double sb = std::sqrt(1.0 - alpha_bar_t);
    const double inv_sa = 1.0 / std::sqrt(alpha_bar_t);
    Grid out(x_t.c, x_t.h, x_t.w);
    // double intermediates keep the inversion sharp even at near-zero abar
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = static_cast<float>((x_t.v[i] - sb * eps.v[i]) * inv_sa);
    return out;
}

double sigma_for(const NoiseSchedule& s, int tau_prev, int tau_cur, double eta) {
    if (!(tau_prev >= 0 && tau_prev < tau_cur && tau_cur <= s.T))
        throw std::invalid_argument("sigma_for: need 0 <= tau_prev < tau_cur <= T");
    if (eta == 0.0) return 0.0;
    const double ab_prev = s.alpha_bars[tau_prev];
    const double ab_cur = s.alpha_bars[tau_cur];
    return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_cur)) * std::sqrt(1.0 - ab_cur / ab_prev);
}

Grid ddim_step(const Grid& x_cur, const Grid& x0_hat, const NoiseSchedule& s, int tau_prev,
               int tau_cur, double sigma, const Grid& noise) {
    require_same_shape(x_cur, x0_hat, "ddim_step");
    require_same_shape(x_cur, noise, "ddim_step");
    if (!(tau_prev >= 0 && tau_prev < tau_cur && tau_cur <= s.T))
        throw std::invalid_argument("ddim_step: need 0 <= tau_prev < tau_cur <= T");
    if (sigma < 0.0) throw std::invalid_argument("ddim_step: sigma must be >= 0");

    Grid out(x_cur.c, x_cur.h, x_cur.w);
    if (tau_prev == 0) {
        // final transition samples around the reconstruction
        for (size_t i = 0; i < out.v.size(); ++i)
            out.v[i] = static_cast<float>(x0_hat.v[i] + sigma * noise.v[i]);
        return out;
    }
    const double ab_prev = s.alpha_bars[tau_prev];
    const double ab_cur = s.alpha_bars[tau_cur];
    const double dir_sq = 1.0 - ab_prev - sigma * sigma;
    if (dir_sq < -1e-12) throw std::invalid_argument("ddim_step: sigma too large for this step");
    const double sa_prev = std::sqrt(ab_prev);
    const double dir = std::sqrt(std::max(0.0, dir_sq)) / std::sqrt(1.0 - ab_cur);
    const double sa_cur = std::sqrt(ab_cur);
    for (size_t i = 0; i < out.v.size(); ++i) {
        const double eps_dir = x_cur.v[i] - sa_cur * x0_hat.v[i];
        out.v[i] = static_cast<float>(sa_prev * x0_hat.v[i] + dir * eps_dir + sigma * noise.v[i]);
    }
    return out;
}

Grid sample(const Denoiser& d, const NoiseSchedule& s, const Grid& x_ref, const Condition& cond,
            const SamplerConfig& cfg) {
    cfg.validate(s);
    if (s.T != d.cfg.max_timestep)
        throw std::invalid_argument("sample: schedule T differs from model T");
    const TimeGrid grid = make_tau(s.T, cfg.steps, cfg.lambda);

    Rng encode_rng(derive_seed(cfg.seed, kTagEncode));
    Grid eps = normal_grid(x_ref.c, x_ref.h, x_ref.w, encode_rng);
    Grid x = forward_diffuse(s, x_ref, grid.taus[cfg.steps], eps);

    const CondPath uncond_path =
        cfg.uncond_keeps_class_set ? CondPath::NullScribble : CondPath::NullAll;
    Grid zero_noise(x.c, x.h, x.w, 0.0f);
    for (int i = cfg.steps; i >= 1; --i) {
        const int tau_cur = grid.taus[i];
        const int tau_prev = grid.taus[i - 1];
        Grid eps_cond = predict_noise(d, x, tau_cur, cond, CondPath::Full);
        Grid eps_uncond = predict_noise(d, x, tau_cur, cond, uncond_path);
        Grid eps_guided = guided_noise(eps_cond, eps_uncond, cfg.w);
        Grid x0_hat = reconstruct_x0(x, eps_guided, s.alpha_bars[tau_cur]);
        const double sigma = sigma_for(s, tau_prev, tau_cur, cfg.eta);
        if (sigma > 0.0) {
            Rng loop_rng(derive_seed(cfg.seed, kTagLoop, static_cast<uint64_t>(i)));
            Grid noise = normal_grid(x.c, x.h, x.w, loop_rng);
            x = ddim_step(x, x0_hat, s, tau_prev, tau_cur, sigma, noise);
        } else {
            x = ddim_step(x, x0_hat, s, tau_prev, tau_cur, 0.0, zero_noise);
        }
    }
    return cfg.clamp_output ? clamp_grid(std::move(x), -1.0f, 1.0f) : x;
}

}  // namespace scribblediff
