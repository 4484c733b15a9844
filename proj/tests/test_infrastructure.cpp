#include <doctest.h>

#include "hmg/common.hpp"
#include "hmg/quadrature.hpp"
#include "hmg/rng.hpp"
#include "hmg/stats.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <vector>

using namespace hmg;

TEST_CASE("philox known-answer vectors") {
    // Reference outputs of Philox4x32-10.
    const Philox4x32 zero(0);
    CHECK(zero({0, 0, 0, 0}) == Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    const Philox4x32 ones(0xffffffffffffffffULL);
    CHECK(ones({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}) ==
          Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    const Philox4x32 pi(0x299f31d0a4093822ULL);
    CHECK(pi({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}) ==
          Philox4x32::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("normal pairs have standard moments") {
    const Philox4x32 gen(derive_seed(7, 1));
    const std::size_t n = 100000;
    double s1 = 0, s2 = 0, s4 = 0;
    for (std::size_t p = 0; p < n; ++p) {
        const auto z = normal_pair(gen, p, 3, 0);
        for (double v : z) {
            s1 += v;
            s2 += v * v;
            s4 += v * v * v * v;
        }
    }
    const double m = 2.0 * n;
    CHECK(std::abs(s1 / m) < 5.0 / std::sqrt(m));
    CHECK(std::abs(s2 / m - 1.0) < 5.0 * std::sqrt(2.0 / m));
    CHECK(std::abs(s4 / m - 3.0) < 5.0 * std::sqrt(96.0 / m));
}

TEST_CASE("derived seeds separate labels") {
    CHECK(derive_seed(1, 0, 0) != derive_seed(1, 1, 0));
    CHECK(derive_seed(1, 0, 1) != derive_seed(1, 1, 0));
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    const double u = to_open_unit(0);
    CHECK(u > 0.0);
    CHECK(to_open_unit(~0ULL) < 1.0);
}

TEST_CASE("adaptive Gauss-Kronrod integrates smooth functions") {
    auto r = integrate([](double t) { return std::sin(t); }, 0.0, std::numbers::pi);
    CHECK(r.ok);
    CHECK(r.value == doctest::Approx(2.0).epsilon(1e-13));

    r = integrate([](double t) { return std::exp(t); }, 1.0, 0.0);
    CHECK(r.value == doctest::Approx(-(std::exp(1.0) - 1.0)).epsilon(1e-13));

    QuadratureOptions q;
    q.panel = 1.0;
    r = integrate([](double t) { return std::cos(t); }, 0.0, 100.0, q);
    CHECK(r.value == doctest::Approx(std::sin(100.0)).epsilon(1e-11));

    // Integrable endpoint singularity is resolved by bisection.
    r = integrate([](double t) { return t > 0 ? 1.0 / std::sqrt(t) : 0.0; }, 0.0, 1.0);
    CHECK(std::abs(r.value - 2.0) < 1e-6);
}

TEST_CASE("vector quadrature matches scalar quadrature per component") {
    const auto res = integrate_vec(
        [](double t, std::span<double> o) {
            o[0] = t * t;
            o[1] = std::atan(t);
            o[2] = 0.0;
        },
        3, -2.0, 5.0);
    CHECK(res[0].value == doctest::Approx((125.0 + 8.0) / 3.0).epsilon(1e-13));
    const auto anti = [](double t) { return t * std::atan(t) - 0.5 * std::log1p(t * t); };
    CHECK(res[1].value == doctest::Approx(anti(5.0) - anti(-2.0)).epsilon(1e-12));
    CHECK(res[2].value == 0.0);
}

TEST_CASE("mean and stderr") {
    const std::vector<double> x{1, 2, 3, 4};
    const auto e = mean_stderr(x);
    CHECK(e.mean == 2.5);
    CHECK(e.stderr_ == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
    CHECK(combined_stderr(3, 4) == 5.0);
}

TEST_CASE("two-sample KS distance") {
    std::vector<double> a{1, 2, 3}, b{1, 2, 3}, c{10, 11};
    CHECK(ks_distance(a, b) == 0.0);
    CHECK(ks_distance(a, c) == 1.0);
    CHECK(ks_distance({0.0, 2.0}, {1.0, 3.0}) == doctest::Approx(0.5));
    CHECK(ks_pvalue(0.0, 100, 100) == 1.0);
    CHECK(ks_pvalue(0.5, 1000, 1000) < 1e-6);
}

TEST_CASE("least squares line") {
    const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
    const auto f = fit_line(x, y);
    CHECK(f.slope == doctest::Approx(2.0));
    CHECK(f.intercept == doctest::Approx(1.0));
    CHECK(f.slope_stderr == doctest::Approx(0.0));
}

TEST_CASE("halton points stay in the unit cube and are seeded") {
    for (std::size_t i = 0; i < 200; ++i) {
        const auto p = halton_point(i, 4, 9);
        for (double v : p) {
            CHECK(v >= 0.0);
            CHECK(v < 1.0);
        }
    }
    CHECK(halton_point(5, 3, 1) != halton_point(5, 3, 2));
    CHECK(halton_point(5, 3, 1) == halton_point(5, 3, 1));
}

TEST_CASE("monotone cubic interpolation") {
    std::vector<double> x, y;
    for (int i = 0; i <= 16; ++i) {
        x.push_back(-4 + 0.5 * i);
        y.push_back(std::tanh(x.back()));
    }
    const MonotoneCubic m(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(m(x[i]) == y[i]);
    double prev = -2.0, worst = 0.0;
    for (double t = -4.0; t <= 4.0; t += 0.01) {
        const double v = m(t);
        CHECK(v >= prev);
        prev = v;
        worst = std::max(worst, std::abs(v - std::tanh(t)));
    }
    CHECK(worst < 1e-2);
    CHECK(m(-10.0) == y.front());
    CHECK(m(10.0) == y.back());
}

TEST_CASE("parallel_for covers the range with fixed chunks") {
    for (unsigned threads : {1u, 3u}) {
        set_thread_count(threads);
        std::vector<int> hits(1000, 0);
        parallel_for(hits.size(), 64, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) hits[i] += 1;
        });
        for (int h : hits) CHECK(h == 1);
    }
    CHECK_THROWS_AS(parallel_for(10, 1,
                                 [](std::size_t b, std::size_t) {
                                     if (b == 5) throw NumericalError("test", "boom");
                                 }),
                    NumericalError);
    set_thread_count(1);
}
