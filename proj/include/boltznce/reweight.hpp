#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "boltznce/densities.hpp"

namespace boltznce {

/// Samples with unnormalized importance log-weights
/// log w(x) = -U(x)/kBT - loglik(x). All weight arithmetic stays in log
/// space until a single max-shift; Boltzmann factors overflow otherwise.
struct WeightedEnsemble {
    std::size_t dim = 0;
    std::vector<double> x;      // [n x dim], finite-weight samples only
    std::vector<double> loglik;
    std::vector<double> log_w;
    std::string provenance;  // "exact_likelihood" | "ebm_likelihood"
    std::size_t n_excluded = 0;
    std::vector<std::string> warnings;

    std::size_t size() const { return log_w.size(); }

    /// Self-normalized weights (sum to 1).
    std::vector<double> normalized_weights() const;

    /// (sum w)^2 / sum w^2, in [1, n].
    double ess() const;
};

/// Builds the ensemble; samples with non-finite energy or loglik are
/// excluded and counted. Warns when ESS < ess_warn_frac * n.
WeightedEnsemble importance_weights(const std::vector<double>& x, std::size_t n, std::size_t dim,
                                    const std::function<double(const double*)>& energy, double kbt,
                                    const std::vector<double>& loglik, std::string provenance,
                                    double ess_warn_frac = 0.01);

WeightedEnsemble importance_weights(const std::vector<double>& x, std::size_t n, const TargetDensity& target,
                                    const std::vector<double>& loglik, std::string provenance,
                                    double ess_warn_frac = 0.01);

struct ObservableEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
};

/// Self-normalized importance estimate of E_mu[O] with a weighted
/// delta-method standard error.
ObservableEstimate estimate_observable(const WeightedEnsemble& ens,
                                       const std::function<double(const double*)>& observable);

/// Weighted 100-bin density histogram over a scalar collective coordinate;
/// delta F = -log(sum of in-region bin densities / sum of the rest).
struct FreeEnergyReport {
    double delta_f = 0.0;
    double region_lo = 0.0, region_hi = 2.0;
    std::vector<double> edges;      // bins + 1
    std::vector<double> densities;  // density-normalized weighted histogram
    double mass_positive = 0.0;     // sum densities in region
    double mass_negative = 0.0;
    std::string provenance;
    std::uint64_t seed = 0;
    std::string warning;

    nlohmann::json to_json() const;
    static FreeEnergyReport from_json(const nlohmann::json& j);
};

struct FreeEnergyOptions {
    double region_lo = 0.0;
    double region_hi = 2.0;
    std::size_t bins = 100;
    // Histogram range; NaNs mean "use the data min/max".
    double range_lo = std::numeric_limits<double>::quiet_NaN();
    double range_hi = std::numeric_limits<double>::quiet_NaN();
};

FreeEnergyReport free_energy_difference(const WeightedEnsemble& ens,
                                        const std::function<double(const double*)>& coordinate,
                                        const FreeEnergyOptions& opts = {});

/// Recomputes delta F from the stored histogram; equals report.delta_f
/// bit-exactly.
double recompute_delta_f(const FreeEnergyReport& report);

/// Draws n rows with replacement, proportional to weight_fn(x) >= 0.
std::vector<double> bias_resample(const std::vector<double>& x, std::size_t n_rows, std::size_t dim,
                                  const std::function<double(const double*)>& weight_fn, std::size_t n_out,
                                  Rng& rng);

/// scale * vonMises(phi | mu, kappa) + offset on an angular coordinate.
double von_mises_weight(double phi, double mu, double kappa, double scale, double offset);

}  // namespace boltznce
