#pragma once

#include <functional>
#include <string>
#include <vector>

#include "boltznce/common.hpp"

namespace boltznce {

struct OdeOptions {
    double atol = 1e-5;
    double rtol = 1e-5;
    double safety = 0.9;
    double min_ratio = 0.2;
    double max_ratio = 10.0;
    // PI controller exponents (divided by order+1 internally).
    double pi_alpha = 0.7;
    double pi_beta = 0.4;
    std::size_t max_steps = 1000000;
    double initial_step = 0.0;  // 0 = automatic
};

struct OdeSolution {
    std::vector<double> y;  // state at exactly t_end (final step clipped)
    double t_end = 0.0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t n_feval = 0;
    // Error-estimate trace of accepted steps.
    std::vector<double> step_t;
    std::vector<double> step_err;
};

using OdeRhs = std::function<void(double t, const double* y, double* dydt)>;

/// Adaptive Dormand-Prince 5(4) with PI step control. Integrates in either
/// time direction; throws NumericalError on step-size underflow or
/// non-finite derivatives.
OdeSolution integrate(const OdeRhs& f, double t_start, double t_end, std::vector<double> y0,
                      const OdeOptions& opts = {}, std::size_t state_dim = 0);

/// Batched time-dependent vector field on R^dim; x and v are [batch x dim].
class BatchField {
  public:
    explicit BatchField(std::size_t dim) : dim_(dim) {}
    virtual ~BatchField() = default;

    std::size_t dim() const { return dim_; }
    virtual void eval(double t, const double* x, double* v, std::size_t batch) const = 0;

    /// Exact divergence (sum of Jacobian diagonal). Fields without an exact
    /// rule fall back on central finite differences.
    virtual void divergence_exact(double t, const double* x, double* div, std::size_t batch) const;
    virtual bool has_exact_divergence() const { return false; }

    /// Value and exact divergence together; overriding lets fields share one
    /// forward pass between the two.
    virtual void eval_with_divergence_exact(double t, const double* x, double* v, double* div,
                                            std::size_t batch) const {
        eval(t, x, v, batch);
        divergence_exact(t, x, div, batch);
    }

  private:
    std::size_t dim_;
};

/// Central-difference divergence, eps = 1e-4 per coordinate.
void divergence_fd(const BatchField& f, double t, const double* x, double* div, std::size_t batch,
                   double eps = 1e-4);

enum class DivergenceMode { ExactAutodiff, ExactFiniteDifference };

DivergenceMode divergence_from_string(const std::string& s);
std::string to_string(DivergenceMode m);

struct LogdetResult {
    std::vector<double> x_end;   // [batch x dim]
    std::vector<double> dlogp;   // per sample: log p(t_end) - log p(t_start) along the path
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t n_feval = 0;
};

/// Integrates dx/dt = v with the density ride-along dlogp/dt = -div v, so
/// dlogp accumulates the change in log density along the integration
/// direction.
LogdetResult integrate_with_logdet(const BatchField& field, DivergenceMode mode, double t_start, double t_end,
                                   const std::vector<double>& x0, std::size_t batch, const OdeOptions& opts = {});

}  // namespace boltznce
