#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "pdecert/expr.hpp"
#include "pdecert/linear_solvers.hpp"

namespace pdecert {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Mode { Lyapunov, Hjb };

/// Declarative model of the dynamics, stage cost and domain. Immutable after
/// load; all symbols live as expressions over the state variables.
struct SystemModel {
    Mode mode = Mode::Lyapunov;
    int n = 0;
    int k = 0;
    std::vector<std::string> vars;
    std::vector<Expr> f;                // length n
    std::vector<std::vector<Expr>> g;   // n x k (empty when k == 0)
    Expr omega;                         // Lyapunov mode
    Expr Q;                             // HJB mode
    std::vector<std::vector<Expr>> R;   // k x k (HJB mode)
    Box domain;

    const Expr& stage_cost() const { return mode == Mode::Lyapunov ? omega : Q; }

    /// ||x||^2 as an expression over this model's variables
    Expr norm_sq_expr() const {
        Expr s = ex::pow_int(ex::var(0), 2);
        for (int i = 1; i < n; ++i) s = s + ex::pow_int(ex::var(i), 2);
        return s;
    }
};

/// Local quadratic lower bound weight(x) >= alpha ||x||^2 on the ball of
/// radius rho. Produced by verify_quadratic_bound; consumers require the
/// certified flag.
struct QuadraticLowerBound {
    double alpha = 1.0;
    double rho = 0.1;
    bool certified = false;
};

namespace detail {

/// Latin hypercube sample of the box, excluding the all-zero point.
inline std::vector<std::vector<double>> lhs_samples(const Box& box, int count, unsigned seed) {
    std::mt19937 rng(seed);
    const int n = box.n();
    std::vector<std::vector<int>> strata(static_cast<size_t>(n));
    for (int d = 0; d < n; ++d) {
        auto& s = strata[static_cast<size_t>(d)];
        s.resize(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) s[static_cast<size_t>(i)] = i;
        std::shuffle(s.begin(), s.end(), rng);
    }
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<std::vector<double>> pts;
    pts.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        std::vector<double> x(static_cast<size_t>(n));
        for (int d = 0; d < n; ++d) {
            const Interval& iv = box.dims[static_cast<size_t>(d)];
            const double t = (strata[static_cast<size_t>(d)][static_cast<size_t>(i)] + u01(rng)) / count;
            x[static_cast<size_t>(d)] = iv.lo + t * iv.width();
        }
        pts.push_back(std::move(x));
    }
    return pts;
}

inline double norm2(const std::vector<double>& x) {
    double s = 0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

} // namespace detail

/// Load and validate a system model from its JSON description.
///
/// Schema: { mode: "lyapunov"|"hjb", state_dim, control_dim, vars: [..],
///           f: [expr..], g: [[expr..]..], omega: expr | Q: expr, R: [[expr..]..],
///           domain: { lo: [..], hi: [..] } }
inline SystemModel load_system(const nlohmann::json& cfg) {
    SystemModel sys;
    try {
        const std::string mode = cfg.at("mode").get<std::string>();
        if (mode == "lyapunov")
            sys.mode = Mode::Lyapunov;
        else if (mode == "hjb")
            sys.mode = Mode::Hjb;
        else
            throw ConfigError("mode must be 'lyapunov' or 'hjb', got '" + mode + "'");

        sys.n = cfg.at("state_dim").get<int>();
        sys.k = cfg.value("control_dim", 0);
        sys.vars = cfg.at("vars").get<std::vector<std::string>>();
        if (static_cast<int>(sys.vars.size()) != sys.n)
            throw ConfigError("vars: expected " + std::to_string(sys.n) + " names");
        if (sys.mode == Mode::Lyapunov && sys.k != 0)
            throw ConfigError("lyapunov mode requires control_dim = 0");
        if (sys.mode == Mode::Hjb && sys.k < 1)
            throw ConfigError("hjb mode requires control_dim >= 1");

        const auto fexprs = cfg.at("f").get<std::vector<std::string>>();
        if (static_cast<int>(fexprs.size()) != sys.n)
            throw ConfigError("f: expected " + std::to_string(sys.n) + " components");
        for (const auto& s : fexprs) sys.f.push_back(parse(s, sys.vars));

        if (sys.mode == Mode::Hjb) {
            const auto grows = cfg.at("g").get<std::vector<std::vector<std::string>>>();
            if (static_cast<int>(grows.size()) != sys.n)
                throw ConfigError("g: expected " + std::to_string(sys.n) + " rows");
            for (const auto& row : grows) {
                if (static_cast<int>(row.size()) != sys.k)
                    throw ConfigError("g: expected " + std::to_string(sys.k) + " columns per row");
                std::vector<Expr> r;
                for (const auto& s : row) r.push_back(parse(s, sys.vars));
                sys.g.push_back(std::move(r));
            }
            sys.Q = parse(cfg.at("Q").get<std::string>(), sys.vars);
            const auto rrows = cfg.at("R").get<std::vector<std::vector<std::string>>>();
            if (static_cast<int>(rrows.size()) != sys.k)
                throw ConfigError("R: expected " + std::to_string(sys.k) + " rows");
            for (const auto& row : rrows) {
                if (static_cast<int>(row.size()) != sys.k)
                    throw ConfigError("R: expected square matrix");
                std::vector<Expr> r;
                for (const auto& s : row) r.push_back(parse(s, sys.vars));
                sys.R.push_back(std::move(r));
            }
        } else {
            sys.omega = parse(cfg.at("omega").get<std::string>(), sys.vars);
        }

        const auto lo = cfg.at("domain").at("lo").get<std::vector<double>>();
        const auto hi = cfg.at("domain").at("hi").get<std::vector<double>>();
        if (static_cast<int>(lo.size()) != sys.n || static_cast<int>(hi.size()) != sys.n)
            throw ConfigError("domain: lo/hi must have state_dim entries");
        for (int i = 0; i < sys.n; ++i) {
            if (!(lo[static_cast<size_t>(i)] < 0.0 && hi[static_cast<size_t>(i)] > 0.0))
                throw ConfigError("domain must contain the origin in its interior (dimension " +
                                  std::to_string(i) + ")");
            sys.domain.dims.emplace_back(lo[static_cast<size_t>(i)], hi[static_cast<size_t>(i)]);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(std::string("expression parse failure: ") + e.what());
    }

    // equilibrium at the origin
    const std::vector<double> zero(static_cast<size_t>(sys.n), 0.0);
    for (int i = 0; i < sys.n; ++i) {
        const double fi = eval(sys.f[static_cast<size_t>(i)], zero);
        if (std::abs(fi) > 1e-12)
            throw ConfigError("equilibrium violation: f[" + std::to_string(i) + "](0) = " +
                              std::to_string(fi));
    }

    // spot-check positive definiteness of the stage cost (the certified path
    // re-verifies the quadratic lower bound that the theorems actually use)
    const Expr& w = sys.stage_cost();
    if (std::abs(eval(w, zero)) > 1e-12)
        throw ConfigError(sys.mode == Mode::Lyapunov ? "omega(0) != 0" : "Q(0) != 0");
    for (const auto& x : detail::lhs_samples(sys.domain, 1024, 12345)) {
        if (detail::norm2(x) < 1e-8) continue;
        if (eval(w, x) <= 0.0)
            throw ConfigError("stage cost not positive at sampled point");
    }

    if (sys.mode == Mode::Hjb) {
        for (const auto& x : detail::lhs_samples(sys.domain, 64, 999)) {
            Eigen::MatrixXd Rm(sys.k, sys.k);
            for (int i = 0; i < sys.k; ++i)
                for (int j = 0; j < sys.k; ++j)
                    Rm(i, j) = eval(sys.R[static_cast<size_t>(i)][static_cast<size_t>(j)], x);
            if ((Rm - Rm.transpose()).cwiseAbs().maxCoeff() > 1e-12)
                throw ConfigError("R is not symmetric at sampled point");
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Rm);
            if (es.eigenvalues().minCoeff() <= 0.0)
                throw ConfigError("R is not positive definite at sampled point");
        }
    }
    return sys;
}

inline SystemModel load_system(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    }
    return load_system(j);
}

inline SystemModel load_system(const char* json_text) {
    return load_system(std::string(json_text));
}

/// Jacobian pair at the origin: A = Df(0), B = g(0) (B empty when autonomous).
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> linearize(const SystemModel& sys) {
    const std::vector<double> zero(static_cast<size_t>(sys.n), 0.0);
    Eigen::MatrixXd A(sys.n, sys.n);
    for (int i = 0; i < sys.n; ++i) {
        auto d = eval_dual2(sys.f[static_cast<size_t>(i)], zero);
        for (int j = 0; j < sys.n; ++j) A(i, j) = d.g[static_cast<size_t>(j)];
    }
    Eigen::MatrixXd B(sys.n, sys.k);
    for (int i = 0; i < sys.n; ++i)
        for (int j = 0; j < sys.k; ++j)
            B(i, j) = eval(sys.g[static_cast<size_t>(i)][static_cast<size_t>(j)], zero);
    return {A, B};
}

} // namespace pdecert
