#include <doctest.h>

#include <cmath>

#include "boltznce/reweight.hpp"

using namespace boltznce;

namespace {

WeightedEnsemble perfect_proposal_ensemble(std::size_t n) {
    // target == proposal == N(0, I) with exact likelihoods
    Rng rng(31);
    std::vector<double> x(n * 2);
    rng.fill_normal(x.data(), x.size());
    std::vector<double> loglik(n);
    for (std::size_t i = 0; i < n; ++i)
        loglik[i] = -0.5 * (x[2 * i] * x[2 * i] + x[2 * i + 1] * x[2 * i + 1]) - std::log(2.0 * M_PI);
    auto energy = [](const double* p) { return 0.5 * (p[0] * p[0] + p[1] * p[1]) + std::log(2.0 * M_PI); };
    return importance_weights(x, n, 2, energy, 1.0, loglik, "exact_likelihood");
}

}  // namespace

TEST_CASE("perfect proposal gives uniform weights and full ESS") {
    const std::size_t n = 500;
    WeightedEnsemble ens = perfect_proposal_ensemble(n);
    CHECK(ens.size() == n);
    CHECK(ens.n_excluded == 0);
    auto w = ens.normalized_weights();
    for (double v : w) CHECK(v == doctest::Approx(1.0 / n).epsilon(1e-9));
    CHECK(ens.ess() == doctest::Approx(static_cast<double>(n)).epsilon(1e-9));
    CHECK(ens.warnings.empty());
}

TEST_CASE("constant likelihood offset cancels after self-normalization") {
    const std::size_t n = 200;
    Rng rng(32);
    std::vector<double> x(n * 2);
    rng.fill_normal(x.data(), x.size());
    std::vector<double> loglik(n), shifted(n);
    for (std::size_t i = 0; i < n; ++i) {
        loglik[i] = rng.normal();
        shifted[i] = loglik[i] + 12.34;  // EBM head bias shift
    }
    auto energy = [](const double* p) { return p[0] * p[0] + 0.3 * p[1] * p[1]; };
    auto a = importance_weights(x, n, 2, energy, 1.0, loglik, "ebm_likelihood");
    auto b = importance_weights(x, n, 2, energy, 1.0, shifted, "ebm_likelihood");
    auto wa = a.normalized_weights(), wb = b.normalized_weights();
    for (std::size_t i = 0; i < n; ++i) CHECK(wa[i] == doctest::Approx(wb[i]).epsilon(1e-12));
    CHECK(a.ess() == doctest::Approx(b.ess()).epsilon(1e-12));
}

TEST_CASE("non-finite likelihoods are excluded and reported") {
    std::vector<double> x{0.0, 0.0, 1.0, 1.0, 2.0, 2.0};
    std::vector<double> loglik{-1.0, std::numeric_limits<double>::quiet_NaN(), -2.0};
    auto energy = [](const double*) { return 0.5; };
    auto ens = importance_weights(x, 3, 2, energy, 1.0, loglik, "exact_likelihood");
    CHECK(ens.size() == 2);
    CHECK(ens.n_excluded == 1);
    REQUIRE(!ens.warnings.empty());
    CHECK(ens.warnings[0].find("excluded 1") != std::string::npos);
}

TEST_CASE("degenerate proposal missing a well collapses the ESS and warns") {
    // two_well target; the proposal sits almost entirely in the right well
    // (mixture weight 1e-3 on the left), so the few left-well draws carry
    // ~1000x weights and the effective sample size collapses.
    auto target = make_target("two_well");
    const std::size_t n = 10000, n_left = 10;
    Rng rng(33);
    const double sq = 0.2;
    const double wl = static_cast<double>(n_left) / static_cast<double>(n);
    std::vector<double> x(n * 2);
    std::vector<double> loglik(n);
    auto comp = [&](double cx, const double* p) {
        const double dx = (p[0] - cx) / sq, dy = p[1] / sq;
        return std::exp(-0.5 * (dx * dx + dy * dy)) / (2.0 * M_PI * sq * sq);
    };
    for (std::size_t i = 0; i < n; ++i) {
        const double cx = i < n_left ? -1.0 : 1.0;
        x[2 * i] = cx + sq * rng.normal();
        x[2 * i + 1] = sq * rng.normal();
        loglik[i] = std::log(wl * comp(-1.0, x.data() + 2 * i) + (1.0 - wl) * comp(1.0, x.data() + 2 * i));
    }
    auto ens = importance_weights(x, n, *target, loglik, "exact_likelihood");
    CHECK(ens.ess() / static_cast<double>(ens.size()) < 0.6);
    bool warned = false;
    for (const auto& w : ens.warnings) warned = warned || w.find("weight collapse") != std::string::npos;
    CHECK(warned);
}

TEST_CASE("weight invariance: positive rescaling changes nothing") {
    WeightedEnsemble ens = perfect_proposal_ensemble(100);
    for (auto& lw : ens.log_w) lw += std::log(37.5);
    auto w = ens.normalized_weights();
    for (double v : w) CHECK(v == doctest::Approx(0.01).epsilon(1e-9));
    CHECK(ens.ess() == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("observable estimates: constants, symmetry, analytic moment") {
    WeightedEnsemble ens = perfect_proposal_ensemble(5000);
    auto one = estimate_observable(ens, [](const double*) { return 1.0; });
    CHECK(one.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(one.stderr_ == doctest::Approx(0.0).epsilon(1e-12));

    auto x1 = estimate_observable(ens, [](const double* p) { return p[0]; });
    CHECK(std::fabs(x1.value) < 3.0 * std::max(x1.stderr_, 1e-12));

    CHECK_THROWS_AS(estimate_observable(WeightedEnsemble{}, [](const double*) { return 1.0; }), UsageError);
}

TEST_CASE("reweighted second moment from a mismatched gaussian proposal") {
    // proposal N(0, 1.2^2 I), target N(0, I): E[x0^2] under the target is 1.
    const std::size_t n = 100000;
    for (std::uint64_t seed : {101u, 102u, 103u}) {
        Rng rng(seed);
        const double sp = 1.2;
        std::vector<double> x(n * 2);
        std::vector<double> loglik(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[2 * i] = sp * rng.normal();
            x[2 * i + 1] = sp * rng.normal();
            loglik[i] = -0.5 * (x[2 * i] * x[2 * i] + x[2 * i + 1] * x[2 * i + 1]) / (sp * sp) -
                        std::log(2.0 * M_PI * sp * sp);
        }
        auto energy = [](const double* p) { return 0.5 * (p[0] * p[0] + p[1] * p[1]) + std::log(2.0 * M_PI); };
        auto ens = importance_weights(x, n, 2, energy, 1.0, loglik, "exact_likelihood");
        auto est = estimate_observable(ens, [](const double* p) { return p[0] * p[0]; });
        CHECK(std::fabs(est.value - 1.0) < 3.0 * est.stderr_);
    }
}

TEST_CASE("free energy: closed forms and exact recompute") {
    // symmetric two-bump histogram -> delta F = 0
    const std::size_t n = 20000;
    Rng rng(34);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = (i % 2 == 0 ? 1.0 : -1.0) + 0.2 * rng.normal();
    WeightedEnsemble ens;
    ens.dim = 1;
    ens.x = x;
    ens.log_w.assign(n, 0.0);
    ens.loglik.assign(n, 0.0);
    FreeEnergyOptions opts;
    opts.region_lo = 0.0;
    opts.region_hi = 2.0;
    FreeEnergyReport rep = free_energy_difference(ens, [](const double* p) { return p[0]; }, opts);
    CHECK(std::fabs(rep.delta_f) < 0.1);
    CHECK(recompute_delta_f(rep) == rep.delta_f);  // bit-exact

    // region mass p = 1/4 -> delta F = log 3
    WeightedEnsemble quarters;
    quarters.dim = 1;
    for (int i = 0; i < 4000; ++i) {
        quarters.x.push_back(i % 4 == 0 ? 1.0 : -1.0);
        quarters.log_w.push_back(0.0);
        quarters.loglik.push_back(0.0);
    }
    FreeEnergyOptions q;
    q.region_lo = 0.0;
    q.region_hi = 2.0;
    q.range_lo = -2.0;
    q.range_hi = 2.0;
    FreeEnergyReport r2 = free_energy_difference(quarters, [](const double* p) { return p[0]; }, q);
    CHECK(r2.delta_f == doctest::Approx(std::log(3.0)).epsilon(1e-9));

    // empty positive region -> +inf with a warning
    FreeEnergyOptions far;
    far.region_lo = 10.0;
    far.region_hi = 12.0;
    far.range_lo = -2.0;
    far.range_hi = 2.0;
    FreeEnergyReport r3 = free_energy_difference(quarters, [](const double* p) { return p[0]; }, far);
    CHECK(std::isinf(r3.delta_f));
    CHECK(r3.delta_f > 0);
    CHECK(!r3.warning.empty());

    // report JSON round trip preserves the exact delta F recompute
    auto j = rep.to_json();
    FreeEnergyReport back = FreeEnergyReport::from_json(j);
    CHECK(recompute_delta_f(back) == rep.delta_f);
}

TEST_CASE("bias resampling: bootstrap, von Mises peak, well equalization") {
    Rng rng(35);
    const std::size_t n = 4000;
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    Rng r1(77);
    auto boot = bias_resample(x, n, 1, [](const double*) { return 1.0; }, n, r1);
    CHECK(boot.size() == n);

    // weight function peaks exactly at mu
    const double peak = von_mises_weight(1.0, 1.0, 10.0, 150.0, 1.0);
    for (double phi = -3.0; phi <= 3.0; phi += 0.1) {
        if (std::fabs(phi - 1.0) < 1e-12) continue;
        CHECK(von_mises_weight(phi, 1.0, 10.0, 150.0, 1.0) < peak);
    }

    CHECK_THROWS_AS(bias_resample(x, n, 1, [](const double*) { return 0.0; }, 10, r1), UsageError);

    // depleted right well -> bisection on the weight scale restores balance
    auto target = make_target("two_well");
    Rng data_rng(36);
    auto pool = target->sample_matrix(data_rng, 20000);
    std::vector<double> depleted;
    std::size_t kept_right = 0;
    for (std::size_t i = 0; i < 20000; ++i) {
        const bool right = pool[2 * i] > 0.0;
        if (right && (i % 5 != 0)) continue;  // keep 20% of the right well
        depleted.insert(depleted.end(), pool.begin() + 2 * i, pool.begin() + 2 * i + 2);
        kept_right += right;
    }
    const std::size_t nd = depleted.size() / 2;
    const double before = static_cast<double>(kept_right) / static_cast<double>(nd);
    CHECK(before < 0.25);

    auto share_after = [&](double scale) {
        auto wfn = [&](const double* p) {
            return von_mises_weight(std::atan2(p[1], p[0]), 0.0, 10.0, scale, 1.0);
        };
        Rng rr(99);
        auto res = bias_resample(depleted, nd, 2, wfn, 20000, rr);
        std::size_t right = 0;
        for (std::size_t i = 0; i < 20000; ++i) right += res[2 * i] > 0.0;
        return static_cast<double>(right) / 20000.0;
    };
    double lo = 0.0, hi = 4096.0;
    for (int it = 0; it < 30; ++it) {
        const double mid = 0.5 * (lo + hi);
        (share_after(mid) < 0.5 ? lo : hi) = mid;
    }
    const double share = share_after(0.5 * (lo + hi));
    CHECK(share == doctest::Approx(0.5).epsilon(0.1));  // within +-0.05
}
