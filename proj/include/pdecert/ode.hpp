#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "pdecert/interval.hpp"

namespace pdecert {

struct OdeError : std::runtime_error {
    explicit OdeError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class StopReason { Converged, LeftDomain, TimeLimit };

/// Numerical solution of an initial-value problem with an accumulated
/// running-cost integral carried as an augmented state component.
struct Trajectory {
    std::vector<double> t;                   // accepted step times, monotone
    std::vector<std::vector<double>> states; // state (without the cost entry) per time
    double cost = 0.0;                       // integral of the running cost up to t.back()
    StopReason reason = StopReason::TimeLimit;

    const std::vector<double>& final_state() const { return states.back(); }
    double final_time() const { return t.back(); }
};

/// Right-hand side of the augmented ODE: maps the augmented state
/// (n state entries + 1 cost entry) to its derivative, written into dy.
using OdeRhs = std::function<void(const std::vector<double>&, std::vector<double>&)>;

/// Adaptive embedded Runge-Kutta 5(4) with the Dormand-Prince coefficients.
/// Integrates the augmented system until the state part reaches the stop ball
/// (||x|| <= stop_radius), leaves the domain box, or t reaches t_max.
/// Throws OdeError on step-size underflow (stiffness or finite-time blow-up).
inline Trajectory integrate_dp54(const OdeRhs& rhs, const std::vector<double>& x0,
                                 const Box& domain, double t_max, double rtol, double atol,
                                 double stop_radius) {
    const int n = domain.n();
    if (static_cast<int>(x0.size()) != n) throw OdeError("initial state has wrong dimension");
    const size_t m = static_cast<size_t>(n) + 1; // augmented size

    // Dormand-Prince 5(4) tableau
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b6 = 11.0 / 84;
    static constexpr double bh1 = 5179.0 / 57600, bh3 = 7571.0 / 16695, bh4 = 393.0 / 640,
                            bh5 = -92097.0 / 339200, bh6 = 187.0 / 2100, bh7 = 1.0 / 40;
    static constexpr double a71 = b1, a73 = b3, a74 = b4, a76 = b6; // FSAL row (b2=b5=0)

    std::vector<double> y(m, 0.0);
    std::copy(x0.begin(), x0.end(), y.begin());

    Trajectory out;
    const auto record = [&](double t) {
        out.t.push_back(t);
        out.states.emplace_back(y.begin(), y.begin() + n);
        out.cost = y.back();
    };
    const auto state_norm = [&] {
        double s = 0;
        for (int i = 0; i < n; ++i) s += y[static_cast<size_t>(i)] * y[static_cast<size_t>(i)];
        return std::sqrt(s);
    };
    const auto in_domain = [&] {
        for (int i = 0; i < n; ++i)
            if (!domain.dims[static_cast<size_t>(i)].contains(y[static_cast<size_t>(i)])) return false;
        return true;
    };

    double t = 0.0;
    record(t);
    if (state_norm() <= stop_radius) {
        out.reason = StopReason::Converged;
        return out;
    }
    if (!in_domain()) {
        out.reason = StopReason::LeftDomain;
        return out;
    }

    std::vector<double> k1(m), k2(m), k3(m), k4(m), k5(m), k6(m), k7(m), ytmp(m), ynew(m);
    const auto stage = [&](const std::vector<double>& base, auto&&... terms) {
        for (size_t i = 0; i < m; ++i) ytmp[i] = base[i];
        const auto add = [&](double coef, const std::vector<double>& k) {
            for (size_t i = 0; i < m; ++i) ytmp[i] += coef * k[i];
        };
        (add(terms.first, *terms.second), ...);
    };

    rhs(y, k1);
    double h = std::min(1e-2, t_max > 0 ? t_max : 1e-2);
    while (t < t_max) {
        h = std::min(h, t_max - t);
        if (h < 1e-14 * std::max(1.0, std::abs(t)))
            throw OdeError("step size underflow (stiff system or finite-time blow-up)");

        stage(y, std::pair(h * a21, &k1));
        rhs(ytmp, k2);
        stage(y, std::pair(h * a31, &k1), std::pair(h * a32, &k2));
        rhs(ytmp, k3);
        stage(y, std::pair(h * a41, &k1), std::pair(h * a42, &k2), std::pair(h * a43, &k3));
        rhs(ytmp, k4);
        stage(y, std::pair(h * a51, &k1), std::pair(h * a52, &k2), std::pair(h * a53, &k3),
              std::pair(h * a54, &k4));
        rhs(ytmp, k5);
        stage(y, std::pair(h * a61, &k1), std::pair(h * a62, &k2), std::pair(h * a63, &k3),
              std::pair(h * a64, &k4), std::pair(h * a65, &k5));
        rhs(ytmp, k6);
        for (size_t i = 0; i < m; ++i)
            ynew[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] - 2187.0 / 6784 * k5[i] +
                                  a76 * k6[i]);
        rhs(ynew, k7);

        double err = 0.0;
        for (size_t i = 0; i < m; ++i) {
            const double e5 = b1 * k1[i] + b3 * k3[i] + b4 * k4[i] - 2187.0 / 6784 * k5[i] +
                              b6 * k6[i];
            const double e4 = bh1 * k1[i] + bh3 * k3[i] + bh4 * k4[i] + bh5 * k5[i] +
                              bh6 * k6[i] + bh7 * k7[i];
            const double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            const double d = h * (e5 - e4) / sc;
            err += d * d;
        }
        err = std::sqrt(err / static_cast<double>(m));

        if (err <= 1.0) {
            t += h;
            y.swap(ynew);
            k1.swap(k7); // first-same-as-last
            record(t);
            if (state_norm() <= stop_radius) {
                out.reason = StopReason::Converged;
                return out;
            }
            if (!in_domain()) {
                out.reason = StopReason::LeftDomain;
                return out;
            }
        }
        const double fac = std::clamp(0.9 * std::pow(std::max(err, 1e-16), -0.2), 0.2, 5.0);
        h *= fac;
    }
    out.reason = StopReason::TimeLimit;
    return out;
}

} // namespace pdecert
