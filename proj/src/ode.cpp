#include "boltznce/ode.hpp"

#include <cmath>
#include <cstdio>

namespace boltznce {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// y5 - y4 error weights.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

double error_norm(const std::vector<double>& err, const std::vector<double>& y, const std::vector<double>& ynew,
                  double atol, double rtol) {
    double s = 0.0;
    const std::size_t n = err.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double sc = atol + rtol * std::max(std::fabs(y[i]), std::fabs(ynew[i]));
        const double q = err[i] / sc;
        s += q * q;
    }
    return std::sqrt(s / static_cast<double>(n));
}

double initial_step_size(const OdeRhs& f, double t0, double dir, const std::vector<double>& y0,
                         const std::vector<double>& f0, double atol, double rtol, double span) {
    const std::size_t n = y0.size();
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double sc = atol + rtol * std::fabs(y0[i]);
        const double a = y0[i] / sc, b = f0[i] / sc;
        d0 += a * a;
        d1 += b * b;
    }
    d0 = std::sqrt(d0 / n);
    d1 = std::sqrt(d1 / n);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    std::vector<double> y1(n), f1(n);
    for (std::size_t i = 0; i < n; ++i) y1[i] = y0[i] + dir * h0 * f0[i];
    f(t0 + dir * h0, y1.data(), f1.data());
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double sc = atol + rtol * std::fabs(y0[i]);
        const double q = (f1[i] - f0[i]) / sc;
        d2 += q * q;
    }
    d2 = std::sqrt(d2 / n) / h0;
    double h1;
    if (std::max(d1, d2) <= 1e-15)
        h1 = std::max(1e-6, h0 * 1e-3);
    else
        h1 = std::pow(0.01 / std::max(d1, d2), 0.2);
    return std::min({100.0 * h0, h1, span});
}

}  // namespace

OdeSolution integrate(const OdeRhs& f, double t_start, double t_end, std::vector<double> y0,
                      const OdeOptions& opts, std::size_t state_dim) {
    require(t_start != t_end, "integrate: t_start must differ from t_end");
    const std::size_t n = state_dim == 0 ? y0.size() : state_dim;
    require(n == y0.size() && n > 0, "integrate: bad state size");

    const double dir = t_end > t_start ? 1.0 : -1.0;
    const double span = std::fabs(t_end - t_start);

    OdeSolution sol;
    std::vector<double> y = std::move(y0);
    std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), err(n);

    auto check_finite = [&](const std::vector<double>& v, double t) {
        if (!all_finite(v)) {
            char buf[128];
            std::snprintf(buf, sizeof(buf), "integrate: non-finite derivative at t=%.6g", t);
            throw NumericalError(buf);
        }
    };

    double t = t_start;
    f(t, y.data(), k1.data());
    ++sol.n_feval;
    check_finite(k1, t);

    double h = opts.initial_step > 0.0
                   ? std::min(opts.initial_step, span)
                   : initial_step_size(f, t, dir, y, k1, opts.atol, opts.rtol, span);
    ++sol.n_feval;  // probe inside initial_step_size
    const double alpha = opts.pi_alpha / 5.0;
    const double beta = opts.pi_beta / 5.0;
    double err_prev = 1.0;
    bool last_rejected = false;

    while (dir * (t_end - t) > 0.0) {
        if (h < 1e-14 * span) {
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "integrate: step size underflow at t=%.6g (h=%.3e, %zu accepted, %zu rejected)", t, h,
                          sol.accepted, sol.rejected);
            throw NumericalError(buf);
        }
        if (sol.accepted + sol.rejected >= opts.max_steps)
            throw NumericalError("integrate: exceeded maximum step count");
        if (h > dir * (t_end - t)) h = dir * (t_end - t);  // clip the final step
        const double hd = dir * h;

        for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + hd * a21 * k1[i];
        f(t + c2 * hd, ytmp.data(), k2.data());
        for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + hd * (a31 * k1[i] + a32 * k2[i]);
        f(t + c3 * hd, ytmp.data(), k3.data());
        for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + hd * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        f(t + c4 * hd, ytmp.data(), k4.data());
        for (std::size_t i = 0; i < n; ++i)
            ytmp[i] = y[i] + hd * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        f(t + c5 * hd, ytmp.data(), k5.data());
        for (std::size_t i = 0; i < n; ++i)
            ytmp[i] = y[i] + hd * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
        f(t + hd, ytmp.data(), k6.data());
        for (std::size_t i = 0; i < n; ++i)
            ynew[i] = y[i] + hd * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        f(t + hd, ynew.data(), k7.data());
        sol.n_feval += 6;
        check_finite(k7, t + hd);

        for (std::size_t i = 0; i < n; ++i)
            err[i] = hd * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
        const double en = error_norm(err, y, ynew, opts.atol, opts.rtol);

        if (en <= 1.0) {
            t += hd;
            y.swap(ynew);
            k1.swap(k7);  // FSAL
            sol.step_t.push_back(t);
            sol.step_err.push_back(en);
            ++sol.accepted;
            double fac = opts.safety * std::pow(std::max(en, 1e-16), -alpha) * std::pow(err_prev, beta);
            if (last_rejected) fac = std::min(fac, 1.0);
            h *= std::clamp(fac, opts.min_ratio, opts.max_ratio);
            err_prev = std::max(en, 1e-16);
            last_rejected = false;
        } else {
            ++sol.rejected;
            const double fac = opts.safety * std::pow(en, -alpha);
            h *= std::clamp(fac, opts.min_ratio, 1.0);
            last_rejected = true;
        }
    }
    sol.y = std::move(y);
    sol.t_end = t;
    return sol;
}

void BatchField::divergence_exact(double, const double*, double*, std::size_t) const {
    throw UsageError("field has no exact divergence rule; use finite differences");
}

void divergence_fd(const BatchField& f, double t, const double* x, double* div, std::size_t batch, double eps) {
    const std::size_t d = f.dim();
    std::vector<double> xp(batch * d), vp(batch * d), vm(batch * d);
    std::fill_n(div, batch, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        std::copy_n(x, batch * d, xp.data());
        for (std::size_t i = 0; i < batch; ++i) xp[i * d + k] += eps;
        f.eval(t, xp.data(), vp.data(), batch);
        for (std::size_t i = 0; i < batch; ++i) xp[i * d + k] -= 2.0 * eps;
        f.eval(t, xp.data(), vm.data(), batch);
        for (std::size_t i = 0; i < batch; ++i) div[i] += (vp[i * d + k] - vm[i * d + k]) / (2.0 * eps);
    }
}

DivergenceMode divergence_from_string(const std::string& s) {
    if (s == "exact_autodiff") return DivergenceMode::ExactAutodiff;
    if (s == "exact_finite_difference") return DivergenceMode::ExactFiniteDifference;
    throw UsageError("unknown divergence mode '" + s + "'");
}

std::string to_string(DivergenceMode m) {
    return m == DivergenceMode::ExactAutodiff ? "exact_autodiff" : "exact_finite_difference";
}

LogdetResult integrate_with_logdet(const BatchField& field, DivergenceMode mode, double t_start, double t_end,
                                   const std::vector<double>& x0, std::size_t batch, const OdeOptions& opts) {
    const std::size_t d = field.dim();
    require(x0.size() == batch * d, "integrate_with_logdet: state size mismatch");
    const bool exact = mode == DivergenceMode::ExactAutodiff;
    require(!exact || field.has_exact_divergence(),
            "integrate_with_logdet: field does not support exact_autodiff divergence");

    // Augmented state: [batch x dim coords, batch log-density slots].
    std::vector<double> y0(batch * (d + 1), 0.0);
    std::copy_n(x0.data(), batch * d, y0.data());

    auto rhs = [&](double t, const double* y, double* dydt) {
        double* ddlog = dydt + batch * d;
        if (exact) {
            field.eval_with_divergence_exact(t, y, dydt, ddlog, batch);
        } else {
            field.eval(t, y, dydt, batch);
            divergence_fd(field, t, y, ddlog, batch);
        }
        for (std::size_t i = 0; i < batch; ++i) ddlog[i] = -ddlog[i];
    };

    OdeSolution sol = integrate(rhs, t_start, t_end, std::move(y0), opts);
    LogdetResult out;
    out.x_end.assign(sol.y.begin(), sol.y.begin() + batch * d);
    out.dlogp.assign(sol.y.begin() + batch * d, sol.y.end());
    out.accepted = sol.accepted;
    out.rejected = sol.rejected;
    out.n_feval = sol.n_feval;
    return out;
}

}  // namespace boltznce
