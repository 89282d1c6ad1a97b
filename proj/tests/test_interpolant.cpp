#include <doctest.h>

#include <cmath>

#include "boltznce/interpolant.hpp"
#include "boltznce/rng.hpp"

using namespace boltznce;

namespace {
const InterpolantSchedule kLinear{ScheduleKind::Linear};
const InterpolantSchedule kTrig{ScheduleKind::Trigonometric};
}  // namespace

TEST_CASE("schedule boundary conditions and monotonicity") {
    for (const auto& s : {kLinear, kTrig}) {
        CHECK(s.alpha(0.0) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(s.sigma(0.0) == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(s.alpha(1.0) == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(s.sigma(1.0) == doctest::Approx(1.0).epsilon(1e-15));
        double prev_a = s.alpha(0.0), prev_s = s.sigma(0.0);
        for (int i = 1; i <= 64; ++i) {
            const double t = i / 64.0;
            CHECK(s.alpha(t) < prev_a);
            CHECK(s.sigma(t) > prev_s);
            prev_a = s.alpha(t);
            prev_s = s.sigma(t);
        }
    }
}

TEST_CASE("schedule derivatives match finite differences") {
    const double h = 1e-4;
    for (const auto& s : {kLinear, kTrig}) {
        for (double t = 0.05; t < 1.0; t += 0.05) {
            const double da = (s.alpha(t + h) - s.alpha(t - h)) / (2 * h);
            const double ds = (s.sigma(t + h) - s.sigma(t - h)) / (2 * h);
            CHECK(s.dalpha(t) == doctest::Approx(da).epsilon(1e-6));
            CHECK(s.dsigma(t) == doctest::Approx(ds).epsilon(1e-6));
        }
    }
}

TEST_CASE("interpolate boundary and midpoints") {
    std::vector<double> x0{2.0, 0.0}, x1{0.0, 2.0};
    auto at0 = interpolate(kLinear, 0.0, x0, x1);
    CHECK(at0[0] == 2.0);
    CHECK(at0[1] == 0.0);

    auto mid = interpolate(kLinear, 0.5, x0, x1);
    CHECK(mid[0] == doctest::Approx(1.0));
    CHECK(mid[1] == doctest::Approx(1.0));

    std::vector<double> e0{1.0, 0.0}, e1{0.0, 1.0};
    auto trig_mid = interpolate(kTrig, 0.5, e0, e1);
    CHECK(trig_mid[0] == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-12));
    CHECK(trig_mid[1] == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-12));

    CHECK_THROWS_AS(interpolate(kLinear, 1.5, x0, x1), UsageError);

    // reconstruction identity on random pairs
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        const double t = rng.uniform();
        std::vector<double> a{rng.normal(), rng.normal()}, b{rng.normal(), rng.normal()};
        auto xt = interpolate(kTrig, t, a, b);
        for (int k = 0; k < 2; ++k)
            CHECK(xt[k] == doctest::Approx(kTrig.alpha(t) * a[k] + kTrig.sigma(t) * b[k]).epsilon(1e-15));
    }
}

TEST_CASE("endpoint coefficient values and clamping") {
    // |(-1 * 0.5 - 0.5) / 0.5| = 2
    CHECK(endpoint_coefficient(kLinear, 0.5) == doctest::Approx(2.0).epsilon(1e-12));
    // |(-1 * 1 - 0) / 1| = 1
    CHECK(endpoint_coefficient(kLinear, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
    // upper clamp as sigma -> 0
    CHECK(endpoint_coefficient(kLinear, 1e-5) == 100.0);
    CHECK(endpoint_coefficient(kTrig, 1e-6) == 100.0);
    CHECK(endpoint_coefficient(kLinear, 0.0) == 100.0);
}

TEST_CASE("endpoint vector field at t=1 reproduces the linear path velocity") {
    std::vector<double> x0{0.3, -1.2}, x1{1.5, 0.25};
    auto v = endpoint_vector_field(kLinear, 1.0, x1, x0);
    for (int k = 0; k < 2; ++k) CHECK(v[k] == doctest::Approx(x1[k] - x0[k]).epsilon(1e-12));
}

TEST_CASE("endpoint vector field rejects t below the floor and stays bounded at it") {
    std::vector<double> x{1.0, 1.0}, x0_hat{0.5, -0.5};
    CHECK_THROWS_AS(endpoint_vector_field(kLinear, 1e-4, x, x0_hat), NumericalError);
    auto v = endpoint_vector_field(kLinear, 1e-3, x, x0_hat);
    for (int k = 0; k < 2; ++k) {
        const double bound = (std::fabs(kLinear.dsigma(1e-3) * x[k]) + std::fabs(x0_hat[k])) / 1e-3;
        CHECK(std::fabs(v[k]) <= bound + 1e-9);
    }
}

TEST_CASE("endpoint objective equivalence on the linear schedule") {
    // Plugging x0_hat into the sampling field and comparing against the
    // interpolant velocity target must give squared error t_w^2 |x0_hat-x0|^2
    // with the unclamped coefficient.
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const double t = 0.01 + 0.98 * rng.uniform();
        std::vector<double> x0{rng.normal(), rng.normal()}, x1{rng.normal(), rng.normal()};
        std::vector<double> x0_hat{x0[0] + rng.normal(), x0[1] + rng.normal()};
        auto xt = interpolate(kLinear, t, x0, x1);
        auto v = endpoint_vector_field(kLinear, t, xt, x0_hat);
        double err2 = 0.0, d2 = 0.0;
        for (int k = 0; k < 2; ++k) {
            const double target = kLinear.dalpha(t) * x0[k] + kLinear.dsigma(t) * x1[k];
            err2 += (v[k] - target) * (v[k] - target);
            d2 += (x0_hat[k] - x0[k]) * (x0_hat[k] - x0[k]);
        }
        const double tw = endpoint_coefficient_raw(kLinear, t);
        CHECK(err2 == doctest::Approx(tw * tw * d2).epsilon(1e-8));
    }
}
