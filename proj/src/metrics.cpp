#include "boltznce/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "boltznce/coupling.hpp"

namespace boltznce {

double energy_w2(std::vector<double> a, std::vector<double> b) {
    require(!a.empty() && !b.empty(), "energy_w2: empty input");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t n = a.size(), m = b.size();
    // Quantile functions are step functions with breaks at i/n and j/m:
    // integrate (Fa^-1(u) - Fb^-1(u))^2 du segment by segment.
    std::size_t ia = 0, ib = 0;
    double u = 0.0, acc = 0.0;
    while (ia < n && ib < m) {
        const double next_a = static_cast<double>(ia + 1) / static_cast<double>(n);
        const double next_b = static_cast<double>(ib + 1) / static_cast<double>(m);
        const double next = std::min(next_a, next_b);
        const double d = a[ia] - b[ib];
        acc += d * d * (next - u);
        u = next;
        if (next_a <= next) ++ia;
        if (next_b <= next) ++ib;
    }
    return std::sqrt(acc);
}

double w2_1d_assignment(const std::vector<double>& a, const std::vector<double>& b) {
    require(!a.empty() && a.size() == b.size(), "w2_1d_assignment: need equal non-empty sizes");
    const std::size_t n = a.size();
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double d = a[i] - b[j];
            cost[i * n + j] = d * d;
        }
    const auto perm = min_cost_assignment(cost.data(), n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += cost[i * n + perm[i]];
    return std::sqrt(acc / static_cast<double>(n));
}

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Principal range (-pi, pi].
double wrap_angle(double x) {
    double w = std::remainder(x, kTwoPi);
    if (w <= -M_PI) w += kTwoPi;
    return w;
}

double circular_dist(double x, double y, AngleMetric metric) {
    const double d = x - y;
    if (metric == AngleMetric::Nearest) return std::fabs(std::remainder(d, kTwoPi));
    // Printed convention: non-negative remainder mod pi.
    double r = std::fmod(d, M_PI);
    if (r < 0.0) r += M_PI;
    return r;
}

}  // namespace

double angle_w2(std::vector<double> a, std::size_t na, std::vector<double> b, std::size_t nb, std::size_t s,
                const AngleW2Options& opts, std::vector<std::string>* warnings) {
    require(s >= 1 && a.size() == na * s && b.size() == nb * s, "angle_w2: bad angle array shape");
    require(na >= 1 && nb >= 1, "angle_w2: empty input");
    std::size_t wrapped = 0;
    for (auto* v : {&a, &b})
        for (auto& x : *v) {
            if (x > M_PI || x <= -M_PI) {
                x = wrap_angle(x);
                ++wrapped;
            }
        }
    if (wrapped > 0 && warnings)
        warnings->push_back("angle_w2: wrapped " + std::to_string(wrapped) + " angles into (-pi, pi]");

    const std::size_t k = std::min({opts.subbatch, na, nb});
    const bool full = k == na && k == nb;
    const std::size_t repeats = full ? 1 : std::max<std::size_t>(1, opts.repeats);
    Rng rng(Rng::mix(opts.seed, 0x77a5));

    std::vector<std::size_t> ia(na), ib(nb);
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), 0);
    std::vector<double> cost(k * k);
    double acc = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
        if (!full) {
            rng.shuffle(ia);
            rng.shuffle(ib);
        }
        for (std::size_t i = 0; i < k; ++i) {
            const double* xi = a.data() + ia[i] * s;
            for (std::size_t j = 0; j < k; ++j) {
                const double* yj = b.data() + ib[j] * s;
                double c2 = 0.0;
                for (std::size_t q = 0; q < s; ++q) {
                    const double d = circular_dist(xi[q], yj[q], opts.metric);
                    c2 += d * d;
                }
                cost[i * k + j] = c2;
            }
        }
        const auto perm = min_cost_assignment(cost.data(), k);
        double total = 0.0;
        for (std::size_t i = 0; i < k; ++i) total += cost[i * k + perm[i]];
        acc += std::sqrt(total / static_cast<double>(k));
    }
    return acc / static_cast<double>(repeats);
}

double grid_density_l2(const std::function<double(const double*)>& model_log_density, const TargetDensity& target,
                       const GridQuadrature& grid) {
    require(grid.dim() == target.dim(), "grid_density_l2: grid dimension mismatch");
    const std::size_t n = grid.size();
    const double w = grid.cell_volume();
    std::vector<double> x(grid.dim());
    std::vector<double> logm(n);
    double target_mass = 0.0, p2 = 0.0;
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) {
        grid.node(i, x.data());
        p[i] = std::exp(target.log_density(x.data()));
        target_mass += p[i] * w;
        logm[i] = model_log_density(x.data());
    }
    require(target_mass >= 1.0 - 1e-3, "grid_density_l2: grid misses more than 1e-3 of the target mass");
    const double m = *std::max_element(logm.begin(), logm.end());
    double qsum = 0.0;
    std::vector<double> q(n);
    for (std::size_t i = 0; i < n; ++i) qsum += (q[i] = std::exp(logm[i] - m)) * w;
    double num = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = q[i] / qsum - p[i];
        num += d * d * w;
        p2 += p[i] * p[i] * w;
    }
    return std::sqrt(num / p2);
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
    };
    put("e_w2", e_w2);
    put("t_w2", t_w2);
    put("nll_mean", nll_mean);
    put("nll_std", nll_std);
    put("density_l2", density_l2);
    j["e_w2_batch"] = e_w2_batch;
    j["nll_batch"] = nll_batch;
    j["seed"] = seed;
    return j;
}

std::string MetricReport::summary_line(const std::string& label) const {
    char buf[256];
    auto fmt = [](const std::optional<double>& v) {
        char b[32];
        if (v)
            std::snprintf(b, sizeof(b), "%10.4f", *v);
        else
            std::snprintf(b, sizeof(b), "%10s", "-");
        return std::string(b);
    };
    std::snprintf(buf, sizeof(buf), "%-24s %s %s %s %s %s", label.c_str(), fmt(e_w2).c_str(), fmt(t_w2).c_str(),
                  fmt(nll_mean).c_str(), fmt(nll_std).c_str(), fmt(density_l2).c_str());
    return buf;
}

}  // namespace boltznce
