#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "boltznce/common.hpp"
#include "boltznce/rng.hpp"

namespace boltznce {

/// Ground-truth target distribution mu(x) = exp(-U(x)/kBT) / Z with exact
/// energy, density and sampler. kBT is carried explicitly, never folded
/// into U.
class TargetDensity {
  public:
    virtual ~TargetDensity() = default;

    const std::string& name() const { return name_; }
    std::size_t dim() const { return dim_; }
    double kbt() const { return kbt_; }
    const nlohmann::json& params() const { return params_; }

    /// U(x); finite for all finite x.
    virtual double energy(const double* x) const = 0;

    /// Exact log mu(x). Normalized unless log_density_normalized() is false.
    virtual double log_density(const double* x) const = 0;
    virtual bool log_density_normalized() const { return true; }

    virtual void sample(Rng& rng, double* out) const = 0;

    /// n samples, row-major [n x dim].
    std::vector<double> sample_matrix(Rng& rng, std::size_t n) const {
        std::vector<double> out(n * dim_);
        for (std::size_t i = 0; i < n; ++i) sample(rng, out.data() + i * dim_);
        return out;
    }

    double energy(const std::vector<double>& x) const { return energy(x.data()); }
    double log_density(const std::vector<double>& x) const { return log_density(x.data()); }

    /// Quadrature bounds that cover all but <= 1e-6 of the mass.
    virtual std::vector<double> default_lo() const = 0;
    virtual std::vector<double> default_hi() const = 0;

  protected:
    TargetDensity(std::string name, std::size_t dim, double kbt, nlohmann::json params)
        : name_(std::move(name)), dim_(dim), kbt_(kbt), params_(std::move(params)) {}

    std::string name_;
    std::size_t dim_;
    double kbt_;
    nlohmann::json params_;
};

/// Factory. Known names: eight_gaussians, checkerboard, two_well.
/// Parameters (all optional, with defaults):
///   eight_gaussians: radius=4, sigma=0.3, kbt=1
///   checkerboard:    kbt=1  (unit squares tiling [-2,2]^2, (i+j) even on)
///   two_well:        a=1, b=1, c=2, kbt=0.25   (U = a(x1^2-b)^2 + c x2^2)
std::unique_ptr<TargetDensity> make_target(const std::string& name, const nlohmann::json& params = {});

/// Uniform midpoint-rule grid: nodes at cell centers, weight = cell volume.
struct GridQuadrature {
    std::vector<double> lo, hi;
    std::vector<std::size_t> points;

    static GridQuadrature make(std::vector<double> lo, std::vector<double> hi, std::size_t points_per_dim = 256);

    std::size_t dim() const { return lo.size(); }
    std::size_t size() const;
    double cell_volume() const;
    /// Coordinates of flat node index i (row-major over dims).
    void node(std::size_t i, double* x) const;

    /// sum_i f(x_i) * w over all nodes.
    double integrate(const std::function<double(const double*)>& f) const;
    /// log sum_i exp(logf(x_i)) + log w, with max-shift.
    double log_integrate_exp(const std::function<double(const double*)>& logf) const;
};

/// log Z = log integral of exp(-U(x)/kBT) over the grid.
double log_partition(const TargetDensity& target, const GridQuadrature& grid);

struct LogPartitionCheck {
    double value;          // at the requested resolution
    double refined_value;  // at doubled resolution
    double delta;          // |value - refined_value|
    bool too_coarse;       // delta > 1e-3
};

/// log Z with a resolution-doubling consistency check.
LogPartitionCheck log_partition_checked(const TargetDensity& target, const GridQuadrature& grid);

}  // namespace boltznce
