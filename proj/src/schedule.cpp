#include "scribblediff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace scribblediff {

namespace {
constexpr int64_t kMaxT = 10'000'000;  // keeps tau_floor products inside 128 bits
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > T) throw std::invalid_argument("NoiseSchedule::beta: t out of [1,T]");
    return betas[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > T) throw std::invalid_argument("NoiseSchedule::alpha_bar: t out of [0,T]");
    return alpha_bars[t];
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1 || T > kMaxT) throw std::invalid_argument("make_linear_schedule: T must be in [1, 1e7]");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alpha_bars.resize(T + 1);
    s.alpha_bars[0] = 1.0;
    double ab = 1.0;
    for (int i = 0; i < T; ++i) {
        const double b = (T == 1) ? beta_start
                                  : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                                     static_cast<double>(T - 1);
        s.betas[i] = b;
        ab *= (1.0 - b);
        s.alpha_bars[i + 1] = ab;
    }
    return s;
}

Grid forward_diffuse(const NoiseSchedule& s, const Grid& x0, int t, const Grid& eps) {
    require_same_shape(x0, eps, "forward_diffuse");
    if (t < 0 || t > s.T) throw std::invalid_argument("forward_diffuse: t out of [0,T]");
    if (t == 0) return x0;
    const double ab = s.alpha_bars[t];
    const double sa = std::sqrt(ab);
    const double sb = std::sqrt(1.0 - ab);
    Grid out(x0.c, x0.h, x0.w);
    // double intermediates: one float rounding per element
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = static_cast<float>(sa * x0.v[i] + sb * eps.v[i]);
    return out;
}

int64_t tau_floor(double lambda, int64_t T, int64_t n, int64_t N) {
    // lambda = mant / 2^shift with mant a 53-bit integer
    int e;
    const double fr = std::frexp(lambda, &e);
    const auto mant = static_cast<uint64_t>(std::ldexp(fr, 53));
    const int shift = 53 - e;
    if (shift < 0) throw std::invalid_argument("tau_floor: lambda > 1");
    if (shift >= 127) return 0;
    unsigned __int128 num = static_cast<unsigned __int128>(mant) * static_cast<uint64_t>(T * n);
    return static_cast<int64_t>((num / static_cast<unsigned __int128>(N)) >> shift);
}

TimeGrid make_tau(int T, int N, double lambda) {
    if (T < 1 || T > kMaxT) throw std::invalid_argument("make_tau: T must be in [1, 1e7]");
    if (N < 1) throw std::invalid_argument("make_tau: N must be positive");
    if (!(lambda > 0.0) || lambda > 1.0) throw std::invalid_argument("make_tau: lambda must be in (0,1]");
    const int64_t lam_T = tau_floor(lambda, T, 1, 1);
    if (N > lam_T)
        throw std::invalid_argument("make_tau: N=" + std::to_string(N) + " exceeds floor(lambda*T)=" +
                                    std::to_string(lam_T) + " (duplicate timesteps)");

    TimeGrid g;
    g.N = N;
    g.lambda = lambda;
    g.taus.resize(N + 1);
    for (int n = 0; n <= N; ++n) g.taus[n] = static_cast<int>(tau_floor(lambda, T, n, N));
    return g;
}

}  // namespace scribblediff
