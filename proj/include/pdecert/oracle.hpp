#pragma once

#include <Eigen/Dense>
#include <iomanip>
#include <optional>
#include <sstream>

#include "pdecert/ode.hpp"
#include "pdecert/residual.hpp"
#include "pdecert/system.hpp"
#include "pdecert/tape.hpp"
#include "pdecert/verifier.hpp"

namespace pdecert {

struct OracleError : std::runtime_error {
    explicit OracleError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Trajectory-integral estimate of a value: the running-cost integral up to
/// the stopping time plus a linearized-flow tail for the remainder.
struct OracleValue {
    double value = 0.0;
    double tail = 0.0; // truncation tail estimate, always >= 0
    double stop_radius = 0.0;
};

namespace detail {

/// Hessian of e at the origin as a dense symmetric matrix.
inline Eigen::MatrixXd hessian0(const Expr& e, int n) {
    const std::vector<double> zero(static_cast<size_t>(n), 0.0);
    const auto d = eval_dual2(e, zero);
    Eigen::MatrixXd H(n, n);
    int k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j, ++k) H(i, j) = H(j, i) = d.h[static_cast<size_t>(k)];
    return H;
}

inline double quad_form(const Eigen::MatrixXd& P, const std::vector<double>& x) {
    Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
    return v.dot(P * v);
}

} // namespace detail

/// Integrate the (closed-loop) dynamics from x0, accumulating the running
/// cost. Lyapunov mode integrates x' = f(x) with cost omega(x); HJB mode uses
/// x' = f(x) + g(x) u(x) with cost Q(x) + u(x)^T R(x) u(x), where u is the
/// supplied policy (zero input when absent).
inline Trajectory integrate(const SystemModel& sys, const std::vector<double>& x0,
                            const std::optional<std::vector<Expr>>& policy, double t_max,
                            double rtol, double atol, double stop_radius) {
    if (policy && static_cast<int>(policy->size()) != sys.k)
        throw OracleError("policy has wrong dimension");
    if (sys.mode == Mode::Lyapunov && policy)
        throw OracleError("policy supplied for an autonomous system");

    std::vector<Expr> deriv = sys.f;
    Expr cost = sys.stage_cost();
    if (sys.mode == Mode::Hjb && policy) {
        const std::vector<Expr>& u = *policy;
        for (int i = 0; i < sys.n; ++i)
            for (int j = 0; j < sys.k; ++j)
                deriv[static_cast<size_t>(i)] =
                    deriv[static_cast<size_t>(i)] +
                    sys.g[static_cast<size_t>(i)][static_cast<size_t>(j)] * u[static_cast<size_t>(j)];
        for (int i = 0; i < sys.k; ++i)
            for (int j = 0; j < sys.k; ++j)
                cost = cost + u[static_cast<size_t>(i)] *
                                  sys.R[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                                  u[static_cast<size_t>(j)];
    }

    std::vector<Tape> tapes;
    tapes.reserve(static_cast<size_t>(sys.n) + 1);
    for (const auto& e : deriv) tapes.emplace_back(e);
    tapes.emplace_back(cost);

    std::vector<double> scratch;
    const OdeRhs rhs = [&](const std::vector<double>& y, std::vector<double>& dy) {
        for (size_t i = 0; i < tapes.size(); ++i) dy[i] = tapes[i].eval_point(y, scratch);
    };
    try {
        return integrate_dp54(rhs, x0, sys.domain, t_max, rtol, atol, stop_radius);
    } catch (const EvalError& e) {
        throw OdeError(std::string("right-hand side evaluation failed: ") + e.what());
    }
}

namespace detail {

constexpr double kOracleTmax = 1000.0;

/// Quadratic tail matrix for the Lyapunov-mode integral: P solving
/// A^T P + P A = -(1/2) Hess omega(0), so the remaining integral from a state
/// x_s near the origin is approximately x_s^T P x_s.
inline Eigen::MatrixXd lyap_tail_matrix(const SystemModel& sys) {
    const auto [A, B] = linearize(sys);
    return lyap_solve(A, 0.5 * hessian0(sys.omega, sys.n));
}

} // namespace detail

/// V(x) as the integral of omega along the trajectory from x, stopping at the
/// ball ||x|| <= stop_radius and closing with the linearized quadratic tail.
inline OracleValue true_value(const SystemModel& sys, const std::vector<double>& x,
                              double rtol = 1e-9, double stop_radius = 1e-5) {
    if (sys.mode != Mode::Lyapunov) throw OracleError("true_value requires Lyapunov mode");
    const Eigen::MatrixXd P = detail::lyap_tail_matrix(sys);
    const Trajectory tr =
        integrate(sys, x, std::nullopt, detail::kOracleTmax, rtol, rtol * 1e-3, stop_radius);
    if (tr.reason == StopReason::LeftDomain)
        throw OracleError("trajectory left the domain; value integral undefined");
    if (tr.reason == StopReason::TimeLimit)
        throw OracleError("trajectory did not reach the stop ball; value integral not converged");
    OracleValue out;
    out.tail = std::max(0.0, detail::quad_form(P, tr.final_state()));
    out.value = tr.cost + out.tail;
    out.stop_radius = stop_radius;
    return out;
}

/// Closed-loop cost J(x, u) = integral of Q + u^T R u under the given policy,
/// with the tail taken from the closed-loop linearization's quadratic cost.
/// A non-convergent closed loop is an error: it falsifies the stability the
/// caller's certificate implies, and must not be averaged away.
inline OracleValue policy_cost(const SystemModel& sys, const std::vector<Expr>& policy,
                               const std::vector<double>& x, double rtol = 1e-9,
                               double stop_radius = 1e-5) {
    if (sys.mode != Mode::Hjb) throw OracleError("policy_cost requires HJB mode");
    const auto [A, B] = linearize(sys);
    Eigen::MatrixXd K(sys.k, sys.n);
    const std::vector<double> zero(static_cast<size_t>(sys.n), 0.0);
    for (int i = 0; i < sys.k; ++i) {
        const auto d = eval_dual2(policy[static_cast<size_t>(i)], zero);
        for (int j = 0; j < sys.n; ++j) K(i, j) = d.g[static_cast<size_t>(j)];
    }
    Eigen::MatrixXd R0(sys.k, sys.k);
    for (int i = 0; i < sys.k; ++i)
        for (int j = 0; j < sys.k; ++j)
            R0(i, j) = eval(sys.R[static_cast<size_t>(i)][static_cast<size_t>(j)], zero);
    const Eigen::MatrixXd Acl = A + B * K;
    const Eigen::MatrixXd W = 0.5 * detail::hessian0(sys.Q, sys.n) + K.transpose() * R0 * K;
    const Eigen::MatrixXd P = lyap_solve(Acl, W);

    const Trajectory tr =
        integrate(sys, x, policy, detail::kOracleTmax, rtol, rtol * 1e-3, stop_radius);
    if (tr.reason != StopReason::Converged)
        throw OracleError(tr.reason == StopReason::LeftDomain
                              ? "closed loop left the domain"
                              : "closed loop did not converge within the time limit");
    OracleValue out;
    out.tail = std::max(0.0, detail::quad_form(P, tr.final_state()));
    out.value = tr.cost + out.tail;
    out.stop_radius = stop_radius;
    return out;
}

inline OracleValue policy_cost(const SystemModel& sys, const ValueNet& net,
                               const std::vector<double>& x, double rtol = 1e-9,
                               double stop_radius = 1e-5) {
    return policy_cost(sys, build_hjb_residual(sys, net).policy, x, rtol, stop_radius);
}

// ---------------------------------------------------------------------------
// End-to-end theorem checks
// ---------------------------------------------------------------------------

struct CheckRow {
    std::vector<double> x;
    double vhat = 0.0;
    double oracle = 0.0; // V(x) or J(x, u)
    double bound = 0.0;  // tightest bound the row must satisfy
    double slack = 0.0;  // violation amount; <= 0 means the row passes
    bool excluded = false;
    std::string note;
};

struct CheckReport {
    std::vector<CheckRow> rows;
    int violations = 0;
    int excluded = 0;
    double max_slack = -std::numeric_limits<double>::infinity();
    std::vector<double> worst_point;

    bool passed() const { return violations == 0; }

    std::string to_text() const {
        std::ostringstream os;
        os << std::scientific << std::setprecision(6);
        os << "point | vhat | oracle | bound | slack | note\n";
        for (const auto& r : rows) {
            os << "(";
            for (size_t i = 0; i < r.x.size(); ++i) os << (i ? "," : "") << r.x[i];
            os << ") | " << r.vhat << " | " << r.oracle << " | " << r.bound << " | " << r.slack
               << " | " << (r.excluded ? "excluded: " : "") << r.note << "\n";
        }
        os << "violations=" << violations << " excluded=" << excluded
           << " max_slack=" << max_slack << "\n";
        return os.str();
    }
};

namespace detail {

/// Floating-point floor for theorem-check tolerances: evaluating the network
/// as an expression tree carries re-association roundoff of order machine
/// epsilon times the summed-term magnitude, which the oracle-derived tolerance
/// cannot see (it vanishes where V does, e.g. at the origin).
inline double eval_roundoff_floor(double vhat) {
    return 1e3 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(vhat));
}

inline void report_row(CheckReport& rep, CheckRow row) {
    if (!row.excluded) {
        if (row.slack > rep.max_slack) {
            rep.max_slack = row.slack;
            rep.worst_point = row.x;
        }
        if (row.slack > 0.0) ++rep.violations;
    } else {
        ++rep.excluded;
    }
    rep.rows.push_back(std::move(row));
}

} // namespace detail

/// Check the two-sided value-error conclusions at each test point against the
/// trajectory oracle: |vhat - V| <= eps V + tol and |vhat - V| <= eps/(1-eps)
/// vhat + tol with tol = 10 (rtol V + tail). Points whose trajectories leave
/// the domain are excluded and reported, not silently passed.
inline CheckReport check_theorem1(const SystemModel& sys, const Expr& value,
                                  const Certificate& cert,
                                  const std::vector<std::vector<double>>& test_points,
                                  double rtol = 1e-9, double stop_radius = 1e-5) {
    if (cert.status != Verdict::Certified) throw OracleError("certificate is not certified");
    const double eps = cert.epsilon;
    CheckReport rep;
    const Tape vtape(value);
    std::vector<double> scratch;
    for (const auto& x : test_points) {
        CheckRow row;
        row.x = x;
        row.vhat = vtape.eval_point(x, scratch);
        try {
            const OracleValue ov = true_value(sys, x, rtol, stop_radius);
            const double tol = 10.0 * (rtol * ov.value + ov.tail) + detail::eval_roundoff_floor(row.vhat);
            const double err = std::abs(row.vhat - ov.value);
            const double b1 = eps * ov.value + tol;
            const double b2 = eps / (1.0 - eps) * row.vhat + tol;
            row.oracle = ov.value;
            row.bound = std::min(b1, b2);
            row.slack = err - row.bound;
        } catch (const OracleError& e) {
            row.excluded = true;
            row.note = e.what();
        } catch (const OdeError& e) {
            row.excluded = true;
            row.note = e.what();
        }
        detail::report_row(rep, std::move(row));
    }
    return rep;
}

inline CheckReport check_theorem1(const SystemModel& sys, const ValueNet& net,
                                  const Certificate& cert,
                                  const std::vector<std::vector<double>>& test_points,
                                  double rtol = 1e-9, double stop_radius = 1e-5) {
    return check_theorem1(sys, to_expr(net), cert, test_points, rtol, stop_radius);
}

/// Sampled check of the one-sided decrease conclusion
/// DV(x) f(x) <= -(1-eps) omega(x). Returns the number of violating samples.
inline int check_corollary1(const SystemModel& sys, const ResidualBundle& bundle, double eps,
                            int samples = 10000, unsigned seed = 2024, double tol = 1e-9) {
    Expr lie = ex::constant(0.0);
    for (int i = 0; i < sys.n; ++i)
        lie = lie + bundle.grad[static_cast<size_t>(i)] * sys.f[static_cast<size_t>(i)];
    const Tape ltape(lie), wtape(sys.omega);
    std::vector<double> scratch;
    int bad = 0;
    for (const auto& x : detail::lhs_samples(sys.domain, samples, seed))
        if (ltape.eval_point(x, scratch) > -(1.0 - eps) * wtape.eval_point(x, scratch) + tol) ++bad;
    return bad;
}

/// Check the HJB value and policy-gap conclusions at each test point: with
/// J = J(x, u) from the closed-loop oracle,
///   J <= vhat/(1-eps) + tol      (upper policy bound)
///   vhat/(1+eps) <= J + tol      (lower bound via V* <= J)
///   (1-eps) J <= vhat/(1-eps) + tol  (sandwich consistency)
/// Points outside the sublevel set {vhat <= c} are excluded. A non-convergent
/// closed loop counts as a violation, never an exclusion.
inline CheckReport check_theorem2(const SystemModel& sys, const ResidualBundle& bundle,
                                  const Certificate& cert, double c,
                                  const std::vector<std::vector<double>>& test_points,
                                  double rtol = 1e-9, double stop_radius = 1e-5) {
    if (cert.status != Verdict::Certified) throw OracleError("certificate is not certified");
    const double eps = cert.epsilon;
    CheckReport rep;
    const Tape vtape(bundle.value);
    std::vector<double> scratch;
    for (const auto& x : test_points) {
        CheckRow row;
        row.x = x;
        row.vhat = vtape.eval_point(x, scratch);
        if (row.vhat > c) {
            row.excluded = true;
            row.note = "outside the sublevel set";
            detail::report_row(rep, std::move(row));
            continue;
        }
        try {
            const OracleValue ov = policy_cost(sys, bundle.policy, x, rtol, stop_radius);
            const double J = ov.value;
            const double tol = 10.0 * (rtol * J + ov.tail) + detail::eval_roundoff_floor(row.vhat);
            const double upper = J - (row.vhat / (1.0 - eps) + tol);
            const double lower = row.vhat / (1.0 + eps) - (J + tol);
            const double sandwich = (1.0 - eps) * J - (row.vhat / (1.0 - eps) + tol);
            row.oracle = J;
            row.bound = row.vhat / (1.0 - eps) + tol;
            row.slack = std::max({upper, lower, sandwich});
        } catch (const OracleError& e) {
            row.slack = std::numeric_limits<double>::infinity();
            row.note = e.what();
        } catch (const OdeError& e) {
            row.slack = std::numeric_limits<double>::infinity();
            row.note = e.what();
        }
        detail::report_row(rep, std::move(row));
    }
    return rep;
}

} // namespace pdecert
