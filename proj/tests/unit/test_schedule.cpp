#include <cmath>
#include <cstring>

#include "doctest.h"
#include "scribblediff/rng.hpp"
#include "scribblediff/schedule.hpp"

using namespace scribblediff;

namespace {
// independent re-evaluation of floor(lambda*T*n/N) in 113-bit arithmetic
int64_t tau_oracle(double lambda, int64_t T, int64_t n, int64_t N) {
    __float128 v = static_cast<__float128>(lambda);
    v = v * T * n / N;
    return static_cast<int64_t>(static_cast<unsigned __int128>(v));
}
}  // namespace

TEST_CASE("linear schedule worked examples") {
    // T=2: alpha_bars = [1, 0.9, 0.9*0.8]
    NoiseSchedule s2 = make_linear_schedule(2, 0.1, 0.2);
    REQUIRE(s2.alpha_bars.size() == 3);
    CHECK(s2.alpha_bars[0] == 1.0);
    CHECK(s2.alpha_bars[1] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(s2.alpha_bars[2] == doctest::Approx(0.72).epsilon(1e-12));

    NoiseSchedule s1 = make_linear_schedule(1, 0.5, 0.5);
    CHECK(s1.alpha_bars[0] == 1.0);
    CHECK(s1.alpha_bars[1] == doctest::Approx(0.5).epsilon(1e-12));

    // frozen from an independent high-precision evaluation of the product
    NoiseSchedule s1000 = make_linear_schedule(1000, 1e-4, 0.02);
    CHECK(s1000.alpha_bars[1000] == doctest::Approx(4.0358297653756835e-05).epsilon(1e-9));
    CHECK(s1000.alpha_bars[500] == doctest::Approx(0.07858724288177824).epsilon(1e-9));
}

TEST_CASE("schedule terminal state is near-pure noise for the default configs") {
    CHECK(make_linear_schedule(200, 5e-4, 0.1).alpha_bars[200] < 0.01);
    CHECK(make_linear_schedule(1000, 1e-4, 0.02).alpha_bars[1000] < 0.01);
}

TEST_CASE("schedule rejects invalid arguments") {
    CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(-5, 1e-4, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.5, 0.1), std::invalid_argument);
}

TEST_CASE("alpha_bars strictly decreasing and product-consistent on random schedules") {
    Rng rng(42);
    for (int rep = 0; rep < 50; ++rep) {
        const int T = static_cast<int>(rng.uniform_int(1, 400));
        const double bs = 1e-5 + rng.uniform() * 0.01;
        const double be = bs + rng.uniform() * 0.2;
        NoiseSchedule s = make_linear_schedule(T, bs, be);
        long double prod = 1.0L;
        for (int t = 1; t <= T; ++t) {
            CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
            prod *= (1.0L - static_cast<long double>(s.betas[t - 1]));
            CHECK(std::abs(static_cast<double>(prod) - s.alpha_bars[t]) <= 1e-12 * t);
            CHECK(s.betas[t - 1] > 0.0);
            CHECK(s.betas[t - 1] < 1.0);
        }
        CHECK(s.alpha_bars[0] == 1.0);
    }
}

TEST_CASE("forward_diffuse worked examples") {
    // abar_1 = 0.25 via beta = 0.75
    NoiseSchedule s = make_linear_schedule(1, 0.75, 0.75);
    REQUIRE(s.alpha_bars[1] == doctest::Approx(0.25).epsilon(1e-15));

    Grid ones(3, 4, 4, 1.0f), zeros(3, 4, 4, 0.0f);
    Grid a = forward_diffuse(s, ones, 1, zeros);
    for (float v : a.v) CHECK(v == 0.5f);
    Grid b = forward_diffuse(s, zeros, 1, ones);
    for (float v : b.v) CHECK(v == doctest::Approx(std::sqrt(0.75)).epsilon(1e-6));

    // t = 0 returns x0 bit-for-bit
    Rng rng(7);
    Grid x0 = normal_grid(3, 4, 4, rng);
    Grid eps = normal_grid(3, 4, 4, rng);
    Grid c = forward_diffuse(s, x0, 0, eps);
    CHECK(std::memcmp(c.v.data(), x0.v.data(), x0.v.size() * 4) == 0);
}

TEST_CASE("forward_diffuse rejects bad shapes and t") {
    NoiseSchedule s = make_linear_schedule(10, 0.01, 0.1);
    Grid x(3, 4, 4), eps(3, 4, 4), small(3, 2, 2);
    CHECK_THROWS_AS(forward_diffuse(s, x, 1, small), std::invalid_argument);
    CHECK_THROWS_AS(forward_diffuse(s, x, -1, eps), std::invalid_argument);
    CHECK_THROWS_AS(forward_diffuse(s, x, 11, eps), std::invalid_argument);
}

TEST_CASE("forward_diffuse marginal variance matches abar*Var(x0) + (1-abar)") {
    NoiseSchedule s = make_linear_schedule(100, 1e-3, 0.05);
    Rng rng(99);
    const int t = 60;
    const size_t n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    Grid x0(1, 1, 1), eps(1, 1, 1);
    for (size_t i = 0; i < n; ++i) {
        x0.v[0] = static_cast<float>(rng.normal());
        eps.v[0] = static_cast<float>(rng.normal());
        const double v = forward_diffuse(s, x0, t, eps).v[0];
        sum += v;
        sum_sq += v * v;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    // target variance is abar*1 + (1-abar) = 1; 3 standard errors of s^2
    const double se = std::sqrt(2.0 / static_cast<double>(n - 1));
    CHECK(std::abs(var - 1.0) < 3.0 * se);
}

TEST_CASE("make_tau worked examples") {
    TimeGrid a = make_tau(1000, 5, 0.5);
    CHECK(a.taus == std::vector<int>{0, 100, 200, 300, 400, 500});
    TimeGrid b = make_tau(1000, 1, 1.0);
    CHECK(b.taus == std::vector<int>{0, 1000});
    TimeGrid c = make_tau(10, 3, 1.0);
    CHECK(c.taus == std::vector<int>{0, 3, 6, 10});
}

TEST_CASE("make_tau rejects constructions with duplicate timesteps") {
    CHECK_THROWS_AS(make_tau(10, 11, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(make_tau(100, 51, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(make_tau(100, 10, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(make_tau(100, 10, 1.5), std::invalid_argument);
    CHECK_NOTHROW(make_tau(100, 50, 0.5));
}

TEST_CASE("tau construction matches the independent high-precision oracle") {
    Rng rng(2024);
    for (int rep = 0; rep < 2000; ++rep) {
        const int T = static_cast<int>(rng.uniform_int(1, 2000));
        const double lambda = rep % 5 == 0 ? 1.0 : 1e-9 + rng.uniform() * (1.0 - 1e-9);
        const auto lam_T = tau_oracle(lambda, T, 1, 1);
        if (lam_T < 1) continue;
        const int N = static_cast<int>(rng.uniform_int(1, lam_T));
        TimeGrid g = make_tau(T, N, lambda);
        REQUIRE(static_cast<int>(g.taus.size()) == N + 1);
        CHECK(g.taus[0] == 0);
        CHECK(g.taus[N] == static_cast<int>(tau_floor(lambda, T, 1, 1)));
        for (int n = 0; n <= N; ++n) CHECK(g.taus[n] == tau_oracle(lambda, T, n, N));
        for (int n = 1; n <= N; ++n) CHECK(g.taus[n] > g.taus[n - 1]);
    }
}
