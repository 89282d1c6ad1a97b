#include "boltznce/densities.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace boltznce {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_params(const nlohmann::json& params, const std::set<std::string>& allowed, const std::string& target) {
    if (params.is_null()) return;
    require(params.is_object(), "target params for '" + target + "' must be a JSON object");
    for (auto it = params.begin(); it != params.end(); ++it)
        require(allowed.count(it.key()) > 0, "unknown parameter '" + it.key() + "' for target '" + target + "'");
}

double get_param(const nlohmann::json& params, const std::string& key, double fallback) {
    if (params.is_object() && params.contains(key)) return params.at(key).get<double>();
    return fallback;
}

// Equal-weight mixture of 8 isotropic Gaussians on a circle. Exactly
// normalized, so U = -kBT log mu pins the additive constant.
class EightGaussians final : public TargetDensity {
  public:
    EightGaussians(double radius, double sigma, double kbt, nlohmann::json params)
        : TargetDensity("eight_gaussians", 2, kbt, std::move(params)), radius_(radius), sigma_(sigma) {
        require(sigma > 0.0, "eight_gaussians: sigma must be positive");
        require(radius > 0.0, "eight_gaussians: radius must be positive");
        for (int k = 0; k < 8; ++k) {
            const double a = kTwoPi * k / 8.0;
            cx_[k] = radius_ * std::cos(a);
            cy_[k] = radius_ * std::sin(a);
        }
    }

    double log_density(const double* x) const override {
        double comps[8];
        const double inv2s2 = 1.0 / (2.0 * sigma_ * sigma_);
        const double lognorm = -std::log(8.0) - std::log(kTwoPi * sigma_ * sigma_);
        for (int k = 0; k < 8; ++k) {
            const double dx = x[0] - cx_[k], dy = x[1] - cy_[k];
            comps[k] = lognorm - (dx * dx + dy * dy) * inv2s2;
        }
        return logsumexp(comps, 8);
    }

    double energy(const double* x) const override { return -kbt_ * log_density(x); }

    void sample(Rng& rng, double* out) const override {
        const int k = static_cast<int>(rng.uniform_int(8));
        out[0] = cx_[k] + sigma_ * rng.normal();
        out[1] = cy_[k] + sigma_ * rng.normal();
    }

    std::vector<double> default_lo() const override { return {-radius_ - 2.0, -radius_ - 2.0}; }
    std::vector<double> default_hi() const override { return {radius_ + 2.0, radius_ + 2.0}; }

  private:
    double radius_, sigma_;
    double cx_[8], cy_[8];
};

// Uniform over the 8 "(i+j) even" unit squares of the 4x4 board on [-2,2]^2.
// The exact density is discontinuous; energy() therefore adds a steep
// quadratic ramp outside the support to stay finite everywhere while keeping
// the grid integral of exp(-U/kBT) within 1e-3 of 1.
class Checkerboard final : public TargetDensity {
  public:
    explicit Checkerboard(double kbt, nlohmann::json params)
        : TargetDensity("checkerboard", 2, kbt, std::move(params)) {
        int n = 0;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                if ((i + j) % 2 == 0) {
                    sq_lo_[n][0] = -2.0 + i;
                    sq_lo_[n][1] = -2.0 + j;
                    ++n;
                }
    }

    double log_density(const double* x) const override {
        return dist2_to_support(x) == 0.0 ? -std::log(8.0) : -std::numeric_limits<double>::infinity();
    }

    double energy(const double* x) const override {
        return kbt_ * (std::log(8.0) + kPenalty * dist2_to_support(x));
    }

    void sample(Rng& rng, double* out) const override {
        const int k = static_cast<int>(rng.uniform_int(8));
        out[0] = sq_lo_[k][0] + rng.uniform();
        out[1] = sq_lo_[k][1] + rng.uniform();
    }

    std::vector<double> default_lo() const override { return {-2.0, -2.0}; }
    std::vector<double> default_hi() const override { return {2.0, 2.0}; }

  private:
    static constexpr double kPenalty = 4e7;

    double dist2_to_support(const double* x) const {
        double best = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 8; ++k) {
            const double cx = std::clamp(x[0], sq_lo_[k][0], sq_lo_[k][0] + 1.0);
            const double cy = std::clamp(x[1], sq_lo_[k][1], sq_lo_[k][1] + 1.0);
            const double dx = x[0] - cx, dy = x[1] - cy;
            best = std::min(best, dx * dx + dy * dy);
        }
        return best;
    }

    double sq_lo_[8][2];
};

// Inverse-CDF sampler over a tabulated 1D density (piecewise constant in
// 65536 cells). Plenty below the resolution of desk-scale moment tests.
class Tabulated1DSampler {
  public:
    Tabulated1DSampler() = default;

    Tabulated1DSampler(double lo, double hi, const std::function<double(double)>& f, std::size_t cells = 65536)
        : lo_(lo), h_((hi - lo) / static_cast<double>(cells)), cdf_(cells + 1, 0.0) {
        for (std::size_t i = 0; i < cells; ++i) {
            const double x = lo_ + (static_cast<double>(i) + 0.5) * h_;
            cdf_[i + 1] = cdf_[i] + std::max(0.0, f(x));
        }
        require(cdf_.back() > 0.0, "tabulated sampler: density integrates to zero");
    }

    double sample(Rng& rng) const {
        const double u = rng.uniform() * cdf_.back();
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        std::size_t cell = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - cdf_.begin() - 1, 0));
        if (cell >= cdf_.size() - 1) cell = cdf_.size() - 2;
        const double mass = cdf_[cell + 1] - cdf_[cell];
        const double frac = mass > 0.0 ? (u - cdf_[cell]) / mass : 0.5;
        return lo_ + (static_cast<double>(cell) + frac) * h_;
    }

  private:
    double lo_ = 0.0, h_ = 0.0;
    std::vector<double> cdf_;
};

// U(x) = a (x1^2 - b)^2 + c x2^2; metastable wells at x1 = +-sqrt(b).
class TwoWell final : public TargetDensity {
  public:
    TwoWell(double a, double b, double c, double kbt, nlohmann::json params)
        : TargetDensity("two_well", 2, kbt, std::move(params)), a_(a), b_(b), c_(c) {
        require(a > 0.0, "two_well: a must be positive");
        require(b > 0.0, "two_well: b must be positive");
        require(c > 0.0, "two_well: c must be positive");
        x1_bound_ = find_x1_bound();
        // log Z factorizes: 1D quadrature over x1 times the Gaussian x2 part.
        const std::size_t n = 1 << 16;
        const double h = 2.0 * x1_bound_ / static_cast<double>(n);
        double z1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = -x1_bound_ + (static_cast<double>(i) + 0.5) * h;
            z1 += std::exp(-u1(x) / kbt_);
        }
        z1 *= h;
        const double z2 = std::sqrt(M_PI * kbt_ / c_);
        log_z_ = std::log(z1) + std::log(z2);
        x1_sampler_ = Tabulated1DSampler(-x1_bound_, x1_bound_, [this](double x) { return std::exp(-u1(x) / kbt_); });
        x2_sigma_ = std::sqrt(kbt_ / (2.0 * c_));
    }

    double energy(const double* x) const override {
        const double q = x[0] * x[0] - b_;
        return a_ * q * q + c_ * x[1] * x[1];
    }

    double log_density(const double* x) const override { return -energy(x) / kbt_ - log_z_; }

    void sample(Rng& rng, double* out) const override {
        out[0] = x1_sampler_.sample(rng);
        out[1] = x2_sigma_ * rng.normal();
    }

    std::vector<double> default_lo() const override { return {-x1_bound_, -x1_bound_}; }
    std::vector<double> default_hi() const override { return {x1_bound_, x1_bound_}; }

    double log_z() const { return log_z_; }

  private:
    double u1(double x1) const {
        const double q = x1 * x1 - b_;
        return a_ * q * q;
    }

    double find_x1_bound() const {
        // Smallest L with exp(-U1/kBT) below 1e-14 of the well peak.
        double L = std::sqrt(b_) + 1.0;
        while (u1(L) / kbt_ < 32.24) L += 0.5;  // -log(1e-14)
        return L;
    }

    double a_, b_, c_;
    double x1_bound_ = 0.0;
    double log_z_ = 0.0;
    double x2_sigma_ = 0.0;
    Tabulated1DSampler x1_sampler_;
};

}  // namespace

std::unique_ptr<TargetDensity> make_target(const std::string& name, const nlohmann::json& params) {
    if (name == "eight_gaussians") {
        check_params(params, {"radius", "sigma", "kbt"}, name);
        return std::make_unique<EightGaussians>(get_param(params, "radius", 4.0), get_param(params, "sigma", 0.3),
                                                get_param(params, "kbt", 1.0), params);
    }
    if (name == "checkerboard") {
        check_params(params, {"kbt"}, name);
        return std::make_unique<Checkerboard>(get_param(params, "kbt", 1.0), params);
    }
    if (name == "two_well") {
        check_params(params, {"a", "b", "c", "kbt"}, name);
        return std::make_unique<TwoWell>(get_param(params, "a", 1.0), get_param(params, "b", 1.0),
                                         get_param(params, "c", 2.0), get_param(params, "kbt", 0.25), params);
    }
    throw UsageError("unknown target '" + name + "' (expected eight_gaussians, checkerboard or two_well)");
}

GridQuadrature GridQuadrature::make(std::vector<double> lo, std::vector<double> hi, std::size_t points_per_dim) {
    require(!lo.empty() && lo.size() == hi.size(), "grid: bounds must be non-empty and of equal dimension");
    require(points_per_dim >= 2, "grid: need at least 2 points per dim");
    for (std::size_t d = 0; d < lo.size(); ++d)
        require(lo[d] < hi[d], "grid: lower bound must be below upper bound");
    GridQuadrature g;
    g.lo = std::move(lo);
    g.hi = std::move(hi);
    g.points.assign(g.lo.size(), points_per_dim);
    return g;
}

std::size_t GridQuadrature::size() const {
    std::size_t n = 1;
    for (auto p : points) n *= p;
    return n;
}

double GridQuadrature::cell_volume() const {
    double v = 1.0;
    for (std::size_t d = 0; d < dim(); ++d) v *= (hi[d] - lo[d]) / static_cast<double>(points[d]);
    return v;
}

void GridQuadrature::node(std::size_t i, double* x) const {
    for (std::size_t d = dim(); d-- > 0;) {
        const std::size_t p = points[d];
        const std::size_t idx = i % p;
        i /= p;
        x[d] = lo[d] + (hi[d] - lo[d]) * (static_cast<double>(idx) + 0.5) / static_cast<double>(p);
    }
}

double GridQuadrature::integrate(const std::function<double(const double*)>& f) const {
    const std::size_t n = size();
    std::vector<double> x(dim());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        node(i, x.data());
        s += f(x.data());
    }
    return s * cell_volume();
}

double GridQuadrature::log_integrate_exp(const std::function<double(const double*)>& logf) const {
    const std::size_t n = size();
    std::vector<double> vals(n);
    std::vector<double> x(dim());
    for (std::size_t i = 0; i < n; ++i) {
        node(i, x.data());
        vals[i] = logf(x.data());
    }
    return logsumexp(vals) + std::log(cell_volume());
}

double log_partition(const TargetDensity& target, const GridQuadrature& grid) {
    require(grid.dim() == target.dim(), "log_partition: grid dimension mismatch");
    return grid.log_integrate_exp([&](const double* x) { return -target.energy(x) / target.kbt(); });
}

LogPartitionCheck log_partition_checked(const TargetDensity& target, const GridQuadrature& grid) {
    LogPartitionCheck out{};
    out.value = log_partition(target, grid);
    GridQuadrature fine = grid;
    for (auto& p : fine.points) p *= 2;
    out.refined_value = log_partition(target, fine);
    out.delta = std::fabs(out.value - out.refined_value);
    out.too_coarse = out.delta > 1e-3;
    return out;
}

}  // namespace boltznce
