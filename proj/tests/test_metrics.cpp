#include <doctest.h>

#include <cmath>

#include "boltznce/metrics.hpp"

using namespace boltznce;

TEST_CASE("1D W2: identity, translation, gaussian mean shift") {
    Rng rng(41);
    std::vector<double> a(2000);
    for (auto& v : a) v = rng.normal();
    CHECK(energy_w2(a, a) == doctest::Approx(0.0));

    std::vector<double> b = a;
    for (auto& v : b) v += 2.5;
    CHECK(energy_w2(a, b) == doctest::Approx(2.5).epsilon(1e-12));

    // N(0,1) vs N(1,1) at n = 1e5: W2 = |mean shift| = 1
    std::vector<double> big_a(100000), big_b(100000);
    for (auto& v : big_a) v = rng.normal();
    for (auto& v : big_b) v = rng.normal() + 1.0;
    CHECK(energy_w2(big_a, big_b) == doctest::Approx(1.0).epsilon(0.02));

    CHECK_THROWS_AS(energy_w2({}, {1.0}), UsageError);
}

TEST_CASE("1D W2 handles unequal sizes via quantile coupling") {
    // two-point vs four-point with identical distribution
    std::vector<double> a{0.0, 1.0};
    std::vector<double> b{0.0, 0.0, 1.0, 1.0};
    CHECK(energy_w2(a, b) == doctest::Approx(0.0));
    std::vector<double> c{0.0, 0.5, 1.0};  // differs
    CHECK(energy_w2(a, c) > 0.0);
}

TEST_CASE("sorted W2 equals the assignment-solver oracle to 1e-10") {
    Rng rng(42);
    for (std::size_t n : {3u, 50u, 500u}) {
        std::vector<double> a(n), b(n);
        for (auto& v : a) v = rng.normal() * 2.0;
        for (auto& v : b) v = rng.normal() + 0.5;
        CHECK(std::fabs(energy_w2(a, b) - w2_1d_assignment(a, b)) < 1e-10);
    }
}

TEST_CASE("W2 symmetry") {
    Rng rng(43);
    std::vector<double> a(300), b(400);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = 0.7 * rng.normal() - 0.2;
    CHECK(energy_w2(a, b) == doctest::Approx(energy_w2(b, a)).epsilon(1e-12));
}

TEST_CASE("angle W2: identity, single pair, wrap-around") {
    AngleW2Options opts;
    std::vector<double> a{0.1, -0.5, 2.0, 3.0};
    CHECK(angle_w2(a, 4, a, 4, 1, opts) == doctest::Approx(0.0));

    std::vector<double> x{0.0}, y{M_PI / 2};
    CHECK(angle_w2(x, 1, y, 1, 1, opts) == doctest::Approx(M_PI / 2).epsilon(1e-12));

    // nearest-period convention across the branch cut
    std::vector<double> p{M_PI - 0.05}, q{-M_PI + 0.05};
    CHECK(angle_w2(p, 1, q, 1, 1, opts) == doctest::Approx(0.1).epsilon(1e-9));

    // strict printed convention differs on the same pair
    AngleW2Options strict = opts;
    strict.metric = AngleMetric::StrictModPi;
    const double delta = (M_PI - 0.05) - (-M_PI + 0.05);                  // 2 pi - 0.1
    const double expected = std::fmod(delta, M_PI);                      // pi - 0.1
    CHECK(angle_w2(p, 1, q, 1, 1, strict) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("angle W2 is invariant to adding 2 pi and warns about wrapping") {
    Rng rng(44);
    std::vector<double> a(64), b(64);
    for (auto& v : a) v = rng.uniform(-M_PI + 1e-6, M_PI);
    for (auto& v : b) v = rng.uniform(-M_PI + 1e-6, M_PI);
    AngleW2Options opts;
    const double base = angle_w2(a, 64, b, 64, 1, opts);
    std::vector<double> shifted = a;
    for (std::size_t i = 0; i < 8; ++i) shifted[i] += 2.0 * M_PI;
    std::vector<std::string> warnings;
    const double moved = angle_w2(shifted, 64, b, 64, 1, opts, &warnings);
    CHECK(moved == doctest::Approx(base).epsilon(1e-9));
    CHECK(!warnings.empty());
}

TEST_CASE("angle W2 subsampling is deterministic in the seed") {
    Rng rng(45);
    std::vector<double> a(500), b(600);
    for (auto& v : a) v = rng.uniform(-3.0, 3.0);
    for (auto& v : b) v = rng.uniform(-3.0, 3.0);
    AngleW2Options opts;
    opts.subbatch = 100;
    opts.repeats = 3;
    opts.seed = 9;
    const double r1 = angle_w2(a, 500, b, 600, 1, opts);
    const double r2 = angle_w2(a, 500, b, 600, 1, opts);
    CHECK(r1 == r2);
}

TEST_CASE("grid density error: exact match, constant invariance, uniform baseline") {
    auto target = make_target("eight_gaussians");
    auto grid = GridQuadrature::make(target->default_lo(), target->default_hi(), 256);

    const double zero = grid_density_l2([&](const double* x) { return target->log_density(x); }, *target, grid);
    CHECK(zero == doctest::Approx(0.0).epsilon(1e-9));

    const double shifted =
        grid_density_l2([&](const double* x) { return target->log_density(x) + 5.0; }, *target, grid);
    CHECK(shifted == doctest::Approx(zero).epsilon(1e-9));

    // frozen regression value for the uniform-density baseline
    const double uniform = grid_density_l2([](const double*) { return 0.0; }, *target, grid);
    CHECK(uniform == doctest::Approx(0.968074453195419).epsilon(1e-9));

    // a grid that misses most of the mass is rejected
    auto small = GridQuadrature::make({-1.0, -1.0}, {1.0, 1.0}, 32);
    CHECK_THROWS_AS(grid_density_l2([](const double*) { return 0.0; }, *target, small), UsageError);
}
