#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "boltznce/common.hpp"

namespace boltznce {

enum class ScheduleKind { Linear, Trigonometric };

ScheduleKind schedule_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

/// Interpolation schedule x_t = alpha(t) x0 + sigma(t) x1 with
/// alpha(0)=1, sigma(0)=0, alpha(1)=0, sigma(1)=1; alpha strictly
/// decreasing and sigma strictly increasing on [0,1].
struct InterpolantSchedule {
    ScheduleKind kind = ScheduleKind::Linear;

    double alpha(double t) const {
        return kind == ScheduleKind::Linear ? 1.0 - t : std::cos(0.5 * M_PI * t);
    }
    double sigma(double t) const {
        return kind == ScheduleKind::Linear ? t : std::sin(0.5 * M_PI * t);
    }
    double dalpha(double t) const {
        return kind == ScheduleKind::Linear ? -1.0 : -0.5 * M_PI * std::sin(0.5 * M_PI * t);
    }
    double dsigma(double t) const {
        return kind == ScheduleKind::Linear ? 1.0 : 0.5 * M_PI * std::cos(0.5 * M_PI * t);
    }
};

/// x_t = alpha(t) x0 + sigma(t) x1, elementwise over dim entries.
void interpolate(const InterpolantSchedule& s, double t, const double* x0, const double* x1, double* xt,
                 std::size_t dim);

std::vector<double> interpolate(const InterpolantSchedule& s, double t, const std::vector<double>& x0,
                                const std::vector<double>& x1);

// Clamp bounds for the endpoint loss weight.
inline constexpr double kEndpointWeightMin = 0.005;
inline constexpr double kEndpointWeightMax = 100.0;
// Endpoint models integrate on [1, 1e-3]; the field diverges at t = 0.
inline constexpr double kEndpointTimeFloor = 1e-3;

/// Unclamped (dalpha*sigma - alpha) / sigma. Diverges as sigma -> 0.
double endpoint_coefficient_raw(const InterpolantSchedule& s, double t);

/// Clamped endpoint loss weight t_w = min(max(0.005, |coef|), 100).
double endpoint_coefficient(const InterpolantSchedule& s, double t);

/// Sampling field for endpoint-parameterized models:
/// v = sigma^-1 (dsigma * x + (dalpha*sigma - alpha) * x0_hat).
/// Rejects t below the 1e-3 integration floor.
void endpoint_vector_field(const InterpolantSchedule& s, double t, const double* x, const double* x0_hat,
                           double* v, std::size_t dim);

std::vector<double> endpoint_vector_field(const InterpolantSchedule& s, double t, const std::vector<double>& x,
                                          const std::vector<double>& x0_hat);

}  // namespace boltznce
