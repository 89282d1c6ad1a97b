#include "boltznce/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace boltznce {

std::vector<double> WeightedEnsemble::normalized_weights() const {
    std::vector<double> w(log_w.size());
    if (w.empty()) return w;
    const double m = *std::max_element(log_w.begin(), log_w.end());
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) total += (w[i] = std::exp(log_w[i] - m));
    for (auto& v : w) v /= total;
    return w;
}

double WeightedEnsemble::ess() const {
    const auto w = normalized_weights();
    double s2 = 0.0;
    for (double v : w) s2 += v * v;
    return s2 > 0.0 ? 1.0 / s2 : 0.0;
}

WeightedEnsemble importance_weights(const std::vector<double>& x, std::size_t n, std::size_t dim,
                                    const std::function<double(const double*)>& energy, double kbt,
                                    const std::vector<double>& loglik, std::string provenance,
                                    double ess_warn_frac) {
    require(dim >= 1 && x.size() == n * dim, "importance_weights: bad sample shape");
    require(loglik.size() == n, "importance_weights: loglik must cover every sample");
    require(kbt > 0.0, "importance_weights: kBT must be positive");
    WeightedEnsemble ens;
    ens.dim = dim;
    ens.provenance = std::move(provenance);
    ens.x.reserve(x.size());
    ens.log_w.reserve(n);
    ens.loglik.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.data() + i * dim;
        const double u = energy(xi);
        const double lw = -u / kbt - loglik[i];
        if (!std::isfinite(lw)) {
            ++ens.n_excluded;
            continue;
        }
        ens.x.insert(ens.x.end(), xi, xi + dim);
        ens.loglik.push_back(loglik[i]);
        ens.log_w.push_back(lw);
    }
    if (ens.n_excluded > 0)
        ens.warnings.push_back("excluded " + std::to_string(ens.n_excluded) +
                               " samples with non-finite energy or log-likelihood");
    if (!ens.log_w.empty()) {
        const double e = ens.ess();
        const double frac = e / static_cast<double>(ens.size());
        if (frac < ess_warn_frac) {
            char buf[128];
            std::snprintf(buf, sizeof(buf), "weight collapse: ESS/n = %.4g below threshold %.4g", frac,
                          ess_warn_frac);
            ens.warnings.push_back(buf);
        }
    }
    return ens;
}

WeightedEnsemble importance_weights(const std::vector<double>& x, std::size_t n, const TargetDensity& target,
                                    const std::vector<double>& loglik, std::string provenance,
                                    double ess_warn_frac) {
    return importance_weights(
        x, n, target.dim(), [&](const double* xi) { return target.energy(xi); }, target.kbt(), loglik,
        std::move(provenance), ess_warn_frac);
}

ObservableEstimate estimate_observable(const WeightedEnsemble& ens,
                                       const std::function<double(const double*)>& observable) {
    require(ens.size() >= 2, "estimate_observable: need at least 2 weighted samples");
    const auto w = ens.normalized_weights();
    ObservableEstimate out;
    std::vector<double> o(ens.size());
    for (std::size_t i = 0; i < ens.size(); ++i) {
        o[i] = observable(ens.x.data() + i * ens.dim);
        out.value += w[i] * o[i];
    }
    // Delta-method variance of the self-normalized ratio estimator.
    double var = 0.0;
    for (std::size_t i = 0; i < ens.size(); ++i) {
        const double d = o[i] - out.value;
        var += w[i] * w[i] * d * d;
    }
    out.stderr_ = std::sqrt(var);
    return out;
}

nlohmann::json FreeEnergyReport::to_json() const {
    return {{"delta_f", delta_f},
            {"region", {region_lo, region_hi}},
            {"edges", edges},
            {"densities", densities},
            {"mass_positive", mass_positive},
            {"mass_negative", mass_negative},
            {"provenance", provenance},
            {"seed", seed},
            {"warning", warning}};
}

FreeEnergyReport FreeEnergyReport::from_json(const nlohmann::json& j) {
    FreeEnergyReport r;
    r.delta_f = j.at("delta_f").get<double>();
    r.region_lo = j.at("region").at(0).get<double>();
    r.region_hi = j.at("region").at(1).get<double>();
    r.edges = j.at("edges").get<std::vector<double>>();
    r.densities = j.at("densities").get<std::vector<double>>();
    r.mass_positive = j.at("mass_positive").get<double>();
    r.mass_negative = j.at("mass_negative").get<double>();
    r.provenance = j.value("provenance", "");
    r.seed = j.value("seed", std::uint64_t{0});
    r.warning = j.value("warning", "");
    return r;
}

namespace {

double masked_delta_f(const std::vector<double>& densities, const std::vector<double>& edges, double lo,
                      double hi, double* mass_pos, double* mass_neg) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t i = 0; i < densities.size(); ++i) {
        const double center = 0.5 * (edges[i] + edges[i + 1]);
        if (center > lo && center < hi)
            pos += densities[i];
        else
            neg += densities[i];
    }
    if (mass_pos) *mass_pos = pos;
    if (mass_neg) *mass_neg = neg;
    return -std::log(pos / neg);
}

}  // namespace

FreeEnergyReport free_energy_difference(const WeightedEnsemble& ens,
                                        const std::function<double(const double*)>& coordinate,
                                        const FreeEnergyOptions& opts) {
    require(ens.size() >= 1, "free_energy_difference: empty ensemble");
    require(opts.bins >= 2, "free_energy_difference: need at least 2 bins");
    const std::size_t n = ens.size();
    std::vector<double> phi(n);
    for (std::size_t i = 0; i < n; ++i) phi[i] = coordinate(ens.x.data() + i * ens.dim);

    double lo = opts.range_lo, hi = opts.range_hi;
    if (std::isnan(lo)) lo = *std::min_element(phi.begin(), phi.end());
    if (std::isnan(hi)) hi = *std::max_element(phi.begin(), phi.end());
    require(lo < hi, "free_energy_difference: degenerate histogram range");

    // Weighted histogram with density normalization: bin_mass / (total * width).
    const auto w = ens.normalized_weights();
    const std::size_t bins = opts.bins;
    std::vector<double> mass(bins, 0.0);
    const double width = (hi - lo) / static_cast<double>(bins);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (phi[i] < lo || phi[i] > hi) continue;  // out-of-range values are dropped
        std::size_t b = phi[i] >= hi ? bins - 1
                                     : static_cast<std::size_t>((phi[i] - lo) / (hi - lo) * static_cast<double>(bins));
        if (b >= bins) b = bins - 1;
        mass[b] += w[i];
        total += w[i];
    }
    FreeEnergyReport rep;
    rep.region_lo = opts.region_lo;
    rep.region_hi = opts.region_hi;
    rep.provenance = ens.provenance;
    rep.edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i)
        rep.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    rep.densities.resize(bins);
    for (std::size_t i = 0; i < bins; ++i)
        rep.densities[i] = total > 0.0 ? mass[i] / (total * width) : 0.0;

    rep.delta_f =
        masked_delta_f(rep.densities, rep.edges, rep.region_lo, rep.region_hi, &rep.mass_positive, &rep.mass_negative);
    if (rep.mass_positive <= 0.0 || rep.mass_negative <= 0.0)
        rep.warning = "empty region mass: delta_f is infinite (region " + std::to_string(rep.region_lo) + ".." +
                      std::to_string(rep.region_hi) + ")";
    return rep;
}

double recompute_delta_f(const FreeEnergyReport& report) {
    return masked_delta_f(report.densities, report.edges, report.region_lo, report.region_hi, nullptr, nullptr);
}

std::vector<double> bias_resample(const std::vector<double>& x, std::size_t n_rows, std::size_t dim,
                                  const std::function<double(const double*)>& weight_fn, std::size_t n_out,
                                  Rng& rng) {
    require(dim >= 1 && x.size() == n_rows * dim, "bias_resample: bad sample shape");
    require(n_rows >= 1, "bias_resample: empty dataset");
    std::vector<double> cum(n_rows);
    double total = 0.0;
    for (std::size_t i = 0; i < n_rows; ++i) {
        const double w = weight_fn(x.data() + i * dim);
        require(w >= 0.0 && std::isfinite(w), "bias_resample: weights must be finite and non-negative");
        total += w;
        cum[i] = total;
    }
    require(total > 0.0, "bias_resample: all weights are zero");
    std::vector<double> out(n_out * dim);
    for (std::size_t j = 0; j < n_out; ++j) {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cum.begin(), cum.end(), u);
        std::size_t idx = static_cast<std::size_t>(it - cum.begin());
        if (idx >= n_rows) idx = n_rows - 1;
        std::copy_n(x.data() + idx * dim, dim, out.data() + j * dim);
    }
    return out;
}

double von_mises_weight(double phi, double mu, double kappa, double scale, double offset) {
    require(kappa >= 0.0, "von_mises_weight: kappa must be non-negative");
    const double i0 = std::cyl_bessel_i(0.0, kappa);
    const double f = std::exp(kappa * std::cos(phi - mu)) / (2.0 * M_PI * i0);
    return scale * f + offset;
}

}  // namespace boltznce
