#include "boltznce/interpolant.hpp"

#include <algorithm>

namespace boltznce {

ScheduleKind schedule_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "trig" || s == "trigonometric") return ScheduleKind::Trigonometric;
    throw UsageError("unknown interpolant schedule '" + s + "' (expected \"linear\" or \"trig\")");
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::Linear ? "linear" : "trig";
}

void interpolate(const InterpolantSchedule& s, double t, const double* x0, const double* x1, double* xt,
                 std::size_t dim) {
    if (!(t >= 0.0 && t <= 1.0)) throw UsageError("interpolate: t must lie in [0, 1]");
    const double a = s.alpha(t), sg = s.sigma(t);
    for (std::size_t i = 0; i < dim; ++i) xt[i] = a * x0[i] + sg * x1[i];
}

std::vector<double> interpolate(const InterpolantSchedule& s, double t, const std::vector<double>& x0,
                                const std::vector<double>& x1) {
    require(x0.size() == x1.size(), "interpolate: endpoint dimensions differ");
    std::vector<double> xt(x0.size());
    interpolate(s, t, x0.data(), x1.data(), xt.data(), x0.size());
    return xt;
}

double endpoint_coefficient_raw(const InterpolantSchedule& s, double t) {
    const double sg = s.sigma(t);
    return (s.dalpha(t) * sg - s.alpha(t)) / sg;
}

double endpoint_coefficient(const InterpolantSchedule& s, double t) {
    const double sg = s.sigma(t);
    if (sg <= 0.0) return kEndpointWeightMax;  // sigma -> 0 divergence saturates at the upper clamp
    const double c = std::fabs((s.dalpha(t) * sg - s.alpha(t)) / sg);
    return std::min(std::max(kEndpointWeightMin, c), kEndpointWeightMax);
}

void endpoint_vector_field(const InterpolantSchedule& s, double t, const double* x, const double* x0_hat,
                           double* v, std::size_t dim) {
    if (t < kEndpointTimeFloor)
        throw NumericalError("endpoint_vector_field: t below the 1e-3 floor (field diverges as sigma -> 0)");
    const double sg = s.sigma(t);
    const double ds = s.dsigma(t);
    const double coef = s.dalpha(t) * sg - s.alpha(t);
    const double inv = 1.0 / sg;
    for (std::size_t i = 0; i < dim; ++i) v[i] = inv * (ds * x[i] + coef * x0_hat[i]);
}

std::vector<double> endpoint_vector_field(const InterpolantSchedule& s, double t, const std::vector<double>& x,
                                          const std::vector<double>& x0_hat) {
    require(x.size() == x0_hat.size(), "endpoint_vector_field: dimensions differ");
    std::vector<double> v(x.size());
    endpoint_vector_field(s, t, x.data(), x0_hat.data(), v.data(), x.size());
    return v;
}

}  // namespace boltznce
