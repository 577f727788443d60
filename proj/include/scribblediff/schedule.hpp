#pragma once

#include <cstdint>
#include <vector>

#include "scribblediff/grid.hpp"

namespace scribblediff {

// Discrete-time noising process tables. alpha_bars[t] is the cumulative
// product of (1 - beta_s) for s = 1..t, with alpha_bars[0] = 1 so that
// timestep 0 is the clean image.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;       // betas[i] is beta_{i+1}, size T
    std::vector<double> alpha_bars;  // size T+1, alpha_bars[0] == 1

    double beta(int t) const;       // t in [1,T]
    double alpha_bar(int t) const;  // t in [0,T]
};

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t = 0 returns x0 unchanged.
Grid forward_diffuse(const NoiseSchedule& s, const Grid& x0, int t, const Grid& eps);

// Reverse-step subsequence tau_n = floor(lambda*T*n/N), n = 0..N.
struct TimeGrid {
    std::vector<int> taus;  // size N+1, strictly increasing, taus[0] == 0
    int N = 0;
    double lambda = 1.0;
};

// Exact floor(lambda*T*n/N) for the real value of the double lambda,
// evaluated in integer arithmetic (no double-rounding at integer boundaries).
int64_t tau_floor(double lambda, int64_t T, int64_t n, int64_t N);

TimeGrid make_tau(int T, int N, double lambda);

}  // namespace scribblediff
