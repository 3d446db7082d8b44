#pragma once

#include <string>
#include <vector>

#include "pdecert/system.hpp"
#include "pdecert/value_net.hpp"

namespace pdecert {

/// Residual expression of an approximate value function together with the
/// quantity it is measured against (the stage cost) and, in HJB mode, the
/// induced feedback policy.
struct ResidualBundle {
    Mode mode = Mode::Lyapunov;
    Expr r;
    Expr weight;              // omega or Q
    std::vector<Expr> policy; // length k, HJB mode only
    Expr value;               // corrected network as an expression
    std::vector<Expr> grad;   // structurally lowered DV
};

/// r(x) = DV(x) . f(x) + omega(x)
inline ResidualBundle build_lyap_residual(const SystemModel& sys, const ValueNet& net) {
    if (sys.mode != Mode::Lyapunov)
        throw std::invalid_argument("build_lyap_residual: system is not in lyapunov mode");
    NetExprs ne = build_net_exprs(net);
    ResidualBundle out;
    out.mode = Mode::Lyapunov;
    Expr r = sys.omega;
    for (int i = 0; i < sys.n; ++i)
        r = r + ne.grad[static_cast<size_t>(i)] * sys.f[static_cast<size_t>(i)];
    out.r = r;
    out.weight = sys.omega;
    out.value = ne.value;
    out.grad = std::move(ne.grad);
    return out;
}

namespace detail {

inline bool is_zero_const(const Expr& e) { return e->kind == ExprKind::Const && e->cval == 0.0; }

/// Symbolic inverse of the k x k matrix R as (adjugate, determinant) for
/// k <= 3; scalar and diagonal cases short-circuit.
struct SymInverse {
    std::vector<std::vector<Expr>> adj; // adj / det = R^-1
    Expr det;
};

inline SymInverse sym_inverse(const std::vector<std::vector<Expr>>& R) {
    const int k = static_cast<int>(R.size());
    SymInverse out;
    out.adj.assign(static_cast<size_t>(k), std::vector<Expr>(static_cast<size_t>(k)));
    const Expr zero = ex::constant(0.0);
    if (k == 1) {
        out.adj[0][0] = ex::constant(1.0);
        out.det = R[0][0];
        return out;
    }
    bool diagonal = true;
    for (int i = 0; i < k && diagonal; ++i)
        for (int j = 0; j < k && diagonal; ++j)
            if (i != j && !is_zero_const(R[static_cast<size_t>(i)][static_cast<size_t>(j)]))
                diagonal = false;
    if (diagonal) {
        // adj_ii = prod of the other diagonal entries, det = full product
        Expr det = R[0][0];
        for (int i = 1; i < k; ++i) det = det * R[static_cast<size_t>(i)][static_cast<size_t>(i)];
        for (int i = 0; i < k; ++i) {
            Expr a = ex::constant(1.0);
            for (int j = 0; j < k; ++j)
                if (j != i) a = a * R[static_cast<size_t>(j)][static_cast<size_t>(j)];
            out.adj[static_cast<size_t>(i)][static_cast<size_t>(i)] = a;
            for (int j = 0; j < k; ++j)
                if (j != i) out.adj[static_cast<size_t>(i)][static_cast<size_t>(j)] = zero;
        }
        out.det = det;
        return out;
    }
    if (k == 2) {
        out.det = R[0][0] * R[1][1] - R[0][1] * R[1][0];
        out.adj[0][0] = R[1][1];
        out.adj[1][1] = R[0][0];
        out.adj[0][1] = ex::neg(R[0][1]);
        out.adj[1][0] = ex::neg(R[1][0]);
        return out;
    }
    if (k == 3) {
        auto minor2 = [&](int r0, int r1, int c0, int c1) {
            return R[static_cast<size_t>(r0)][static_cast<size_t>(c0)] *
                       R[static_cast<size_t>(r1)][static_cast<size_t>(c1)] -
                   R[static_cast<size_t>(r0)][static_cast<size_t>(c1)] *
                       R[static_cast<size_t>(r1)][static_cast<size_t>(c0)];
        };
        out.det = R[0][0] * minor2(1, 2, 1, 2) - R[0][1] * minor2(1, 2, 0, 2) +
                  R[0][2] * minor2(1, 2, 0, 1);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const int r0 = (j + 1) % 3 < (j + 2) % 3 ? (j + 1) % 3 : (j + 2) % 3;
                const int r1 = (j + 1) % 3 > (j + 2) % 3 ? (j + 1) % 3 : (j + 2) % 3;
                const int c0 = (i + 1) % 3 < (i + 2) % 3 ? (i + 1) % 3 : (i + 2) % 3;
                const int c1 = (i + 1) % 3 > (i + 2) % 3 ? (i + 1) % 3 : (i + 2) % 3;
                Expr cof = minor2(r0, r1, c0, c1);
                if ((i + j) % 2 == 1) cof = ex::neg(cof);
                out.adj[static_cast<size_t>(i)][static_cast<size_t>(j)] = cof;
            }
        return out;
    }
    throw std::invalid_argument("symbolic R^-1 supported only for k <= 3");
}

} // namespace detail

/// r(x) = Q + DV.f - 1/4 DV g R^-1 g^T DV^T, plus the induced policy
/// u(x) = -1/2 R^-1 g^T DV^T.
inline ResidualBundle build_hjb_residual(const SystemModel& sys, const ValueNet& net) {
    if (sys.mode != Mode::Hjb)
        throw std::invalid_argument("build_hjb_residual: system is not in hjb mode");
    NetExprs ne = build_net_exprs(net);
    const int n = sys.n, k = sys.k;

    // p_j = (g^T DV^T)_j, shared between the quadratic term and the policy
    std::vector<Expr> p(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) {
        Expr pj = ex::constant(0.0);
        for (int i = 0; i < n; ++i)
            pj = pj + sys.g[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                          ne.grad[static_cast<size_t>(i)];
        p[static_cast<size_t>(j)] = pj;
    }

    detail::SymInverse rinv = detail::sym_inverse(sys.R);

    // quad = p^T adj p / det
    Expr quad_num = ex::constant(0.0);
    for (int j = 0; j < k; ++j)
        for (int l = 0; l < k; ++l) {
            if (detail::is_zero_const(rinv.adj[static_cast<size_t>(j)][static_cast<size_t>(l)]))
                continue;
            quad_num = quad_num + p[static_cast<size_t>(j)] *
                                      rinv.adj[static_cast<size_t>(j)][static_cast<size_t>(l)] *
                                      p[static_cast<size_t>(l)];
        }

    ResidualBundle out;
    out.mode = Mode::Hjb;
    Expr r = sys.Q;
    for (int i = 0; i < n; ++i)
        r = r + ne.grad[static_cast<size_t>(i)] * sys.f[static_cast<size_t>(i)];
    r = r - ex::constant(0.25) * (quad_num / rinv.det);
    out.r = r;
    out.weight = sys.Q;
    for (int j = 0; j < k; ++j) {
        Expr uj = ex::constant(0.0);
        for (int l = 0; l < k; ++l) {
            if (detail::is_zero_const(rinv.adj[static_cast<size_t>(j)][static_cast<size_t>(l)]))
                continue;
            uj = uj + rinv.adj[static_cast<size_t>(j)][static_cast<size_t>(l)] *
                          p[static_cast<size_t>(l)];
        }
        out.policy.push_back(ex::constant(-0.5) * (uj / rinv.det));
    }
    out.value = ne.value;
    out.grad = std::move(ne.grad);
    return out;
}

inline ResidualBundle build_residual(const SystemModel& sys, const ValueNet& net) {
    return sys.mode == Mode::Lyapunov ? build_lyap_residual(sys, net)
                                      : build_hjb_residual(sys, net);
}

} // namespace pdecert
