#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "boltznce/densities.hpp"
#include "boltznce/rng.hpp"

namespace boltznce {

/// Exact 1D Wasserstein-2 between empirical distributions via quantile
/// coupling (sorting); sizes may differ.
double energy_w2(std::vector<double> a, std::vector<double> b);

/// Assignment-solver route to the same quantity (equal sizes); kept as the
/// cross-check oracle for the sorted implementation.
double w2_1d_assignment(const std::vector<double>& a, const std::vector<double>& b);

enum class AngleMetric {
    Nearest,      // d = min(|delta|, 2pi - |delta|)
    StrictModPi,  // d = (x - y) mod pi, non-negative remainder
};

struct AngleW2Options {
    std::size_t subbatch = 2000;
    std::size_t repeats = 5;
    AngleMetric metric = AngleMetric::Nearest;
    std::uint64_t seed = 0;
};

/// W2 between angle sets under a circular ground cost, solved by assignment
/// on subsampled batches and averaged. Angles are [n x s] in (-pi, pi];
/// out-of-range values are wrapped with a warning.
double angle_w2(std::vector<double> a, std::size_t na, std::vector<double> b, std::size_t nb, std::size_t s,
                const AngleW2Options& opts = {}, std::vector<std::string>* warnings = nullptr);

/// Relative L2 error between a model density (self-normalized over the grid,
/// so additive log constants drop out) and the exact target density.
double grid_density_l2(const std::function<double(const double*)>& model_log_density, const TargetDensity& target,
                       const GridQuadrature& grid);

struct MetricReport {
    std::optional<double> e_w2;
    std::optional<double> t_w2;
    std::optional<double> nll_mean;
    std::optional<double> nll_std;
    std::optional<double> density_l2;
    std::size_t e_w2_batch = 0;
    std::size_t nll_batch = 0;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    /// Table-shaped one-line summary.
    std::string summary_line(const std::string& label) const;
};

}  // namespace boltznce
