#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "pdecert/linear_solvers.hpp"
#include "pdecert/system.hpp"
#include "pdecert/value_net.hpp"

namespace pdecert {

struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class CollocationKind { Grid, Halton };

/// Deterministic set of collocation points in the domain.
struct CollocationSet {
    std::vector<std::vector<double>> points;
    CollocationKind kind = CollocationKind::Halton;
    unsigned seed = 0;
    int requested = 0;
};

namespace detail {

inline double halton(std::uint64_t index, unsigned base) {
    double f = 1.0, r = 0.0;
    while (index > 0) {
        f /= base;
        r += f * static_cast<double>(index % base);
        index /= base;
    }
    return r;
}

constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};

} // namespace detail

/// Grid kind: uniform tensor grid with round(count^(1/n)) points per axis,
/// endpoints included. Halton kind: low-discrepancy sequence with a seeded
/// index skip, mapped to the box.
inline CollocationSet make_collocation(const Box& domain, int count, CollocationKind kind,
                                       unsigned seed) {
    if (count < 1) throw TrainError("make_collocation: count must be >= 1");
    if (count > 2'000'000) throw TrainError("make_collocation: count exceeds memory budget");
    const int n = domain.n();
    CollocationSet out;
    out.kind = kind;
    out.seed = seed;
    out.requested = count;
    if (kind == CollocationKind::Grid) {
        const int per_axis = std::max(2, static_cast<int>(std::llround(std::pow(
                                             static_cast<double>(count), 1.0 / n))));
        std::vector<int> idx(static_cast<size_t>(n), 0);
        for (;;) {
            std::vector<double> x(static_cast<size_t>(n));
            for (int d = 0; d < n; ++d) {
                const Interval& iv = domain.dims[static_cast<size_t>(d)];
                x[static_cast<size_t>(d)] =
                    iv.lo + iv.width() * idx[static_cast<size_t>(d)] / (per_axis - 1);
            }
            out.points.push_back(std::move(x));
            int d = 0;
            while (d < n && ++idx[static_cast<size_t>(d)] == per_axis) idx[static_cast<size_t>(d++)] = 0;
            if (d == n) break;
        }
    } else {
        if (n > 10) throw TrainError("make_collocation: halton supports up to 10 dimensions");
        const std::uint64_t skip = 20 + seed % 997;
        for (int i = 0; i < count; ++i) {
            std::vector<double> x(static_cast<size_t>(n));
            for (int d = 0; d < n; ++d) {
                const Interval& iv = domain.dims[static_cast<size_t>(d)];
                x[static_cast<size_t>(d)] =
                    iv.lo + iv.width() * detail::halton(skip + static_cast<std::uint64_t>(i),
                                                        detail::kPrimes[d]);
            }
            out.points.push_back(std::move(x));
        }
    }
    return out;
}

struct TrainReport {
    int iterations = 0;
    std::vector<double> max_residual; // per iteration, over collocation points
    std::vector<double> rms_residual;
    std::vector<double> value_change; // sup-norm move of V-hat per iteration
    double final_w_change = 0.0;
    bool converged = true;
};

namespace detail {

/// Gradient of the corrected basis psi_i(x) = tanh(a_i.x+b_i) - tanh(b_i)
/// - sech^2(b_i) (a_i.x), dotted with a direction: rows of the collocation
/// least-squares matrix are linear in the output weights.
inline void basis_grad_dot(const ValueNet& net, const std::vector<double>& x,
                           const Eigen::VectorXd& dir, Eigen::VectorXd& row) {
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), net.n);
    const Eigen::VectorXd z = net.A * xv + net.b;
    const Eigen::VectorXd s = 1.0 - z.array().tanh().square();
    const Eigen::VectorXd sb = 1.0 - net.b.array().tanh().square();
    const Eigen::VectorXd adir = net.A * dir; // a_i . dir
    row = (s - sb).cwiseProduct(adir);
}

/// Ridge least squares: normal equations by default, rank-revealing QR of the
/// augmented system when the condition estimate is poor.
inline Eigen::VectorXd ridge_lstsq(const Eigen::MatrixXd& M, const Eigen::VectorXd& rhs,
                                   double ridge) {
    const Eigen::Index m = M.cols();
    Eigen::MatrixXd G = M.transpose() * M;
    if (ridge < 0) ridge = 1e-10 * G.trace() / static_cast<double>(m); // default
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    const double lmax = es.eigenvalues().maxCoeff();
    const double lmin = es.eigenvalues().minCoeff() + ridge;
    if (ridge == 0.0 && lmin <= lmax * 1e-14)
        throw TrainError("rank-deficient normal equations with ridge=0 "
                         "(width/sample mismatch)");
    const double cond_m = std::sqrt(std::max(lmax, 0.0) / std::max(lmin, 1e-300));
    if (cond_m > 1e8) {
        Eigen::MatrixXd Maug(M.rows() + m, m);
        Maug.topRows(M.rows()) = M;
        Maug.bottomRows(m) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(m, m);
        Eigen::VectorXd raug = Eigen::VectorXd::Zero(M.rows() + m);
        raug.head(M.rows()) = rhs;
        return Maug.colPivHouseholderQr().solve(raug);
    }
    G.diagonal().array() += ridge;
    return G.llt().solve(M.transpose() * rhs);
}

} // namespace detail

/// One linear collocation solve for the Lyapunov PDE: minimizes the squared
/// residual DV.f + omega over the collocation set; the corrected net is
/// linear in the output weights, so this is exact least squares.
inline std::pair<ValueNet, TrainReport> train_lyapunov(const SystemModel& sys, ValueNet net,
                                                       const CollocationSet& pts,
                                                       double ridge = -1.0) {
    if (sys.mode != Mode::Lyapunov) throw TrainError("train_lyapunov: system is not in lyapunov mode");
    const Eigen::Index N = static_cast<Eigen::Index>(pts.points.size());
    Eigen::MatrixXd M(N, net.m);
    Eigen::VectorXd rhs(N);
    Eigen::VectorXd fx(net.n), row(net.m);
    for (Eigen::Index p = 0; p < N; ++p) {
        const auto& x = pts.points[static_cast<size_t>(p)];
        for (int i = 0; i < sys.n; ++i) fx(i) = eval(sys.f[static_cast<size_t>(i)], x);
        detail::basis_grad_dot(net, x, fx, row);
        M.row(p) = row;
        rhs(p) = -eval(sys.omega, x);
    }
    net.w = detail::ridge_lstsq(M, rhs, ridge);
    net = refresh_correction(net);

    TrainReport rep;
    rep.iterations = 1;
    const Eigen::VectorXd res = M * net.w - rhs; // equals DV.f + omega pointwise
    rep.max_residual.push_back(res.cwiseAbs().maxCoeff());
    rep.rms_residual.push_back(std::sqrt(res.squaredNorm() / static_cast<double>(N)));
    rep.final_w_change = net.w.norm();
    return {std::move(net), std::move(rep)};
}

/// Successive approximation for the HJB PDE: start from the LQR policy of the
/// linearization, then alternate a linear generalized-HJB collocation solve
/// with the policy update u = -1/2 R^-1 g^T DV^T until the value stops moving.
inline std::pair<ValueNet, TrainReport> train_hjb(const SystemModel& sys, ValueNet net,
                                                  const CollocationSet& pts, int max_iters = 30,
                                                  double tol = 1e-8, double ridge = -1.0) {
    if (sys.mode != Mode::Hjb) throw TrainError("train_hjb: system is not in hjb mode");
    const Eigen::Index N = static_cast<Eigen::Index>(pts.points.size());
    const int n = sys.n, k = sys.k;

    // per-point data that does not change across iterations
    std::vector<Eigen::VectorXd> fxs(static_cast<size_t>(N));
    std::vector<Eigen::MatrixXd> gxs(static_cast<size_t>(N));
    std::vector<Eigen::MatrixXd> Rxs(static_cast<size_t>(N));
    Eigen::VectorXd Qx(N);
    for (Eigen::Index p = 0; p < N; ++p) {
        const auto& x = pts.points[static_cast<size_t>(p)];
        Eigen::VectorXd fx(n);
        for (int i = 0; i < n; ++i) fx(i) = eval(sys.f[static_cast<size_t>(i)], x);
        Eigen::MatrixXd gx(n, k);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j)
                gx(i, j) = eval(sys.g[static_cast<size_t>(i)][static_cast<size_t>(j)], x);
        Eigen::MatrixXd Rx(k, k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                Rx(i, j) = eval(sys.R[static_cast<size_t>(i)][static_cast<size_t>(j)], x);
        fxs[static_cast<size_t>(p)] = std::move(fx);
        gxs[static_cast<size_t>(p)] = std::move(gx);
        Rxs[static_cast<size_t>(p)] = std::move(Rx);
        Qx(p) = eval(sys.Q, x);
    }

    // initial stabilizing policy from the LQR of the linearization
    auto [A, B] = linearize(sys);
    const std::vector<double> zero(static_cast<size_t>(n), 0.0);
    auto qd = eval_dual2(sys.Q, zero);
    Eigen::MatrixXd Qbar(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) Qbar(i, j) = 0.5 * qd.hess(i, j);
    Eigen::MatrixXd R0(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) R0(i, j) = eval(sys.R[static_cast<size_t>(i)][static_cast<size_t>(j)], zero);
    Eigen::MatrixXd P0;
    try {
        P0 = riccati_solve(A, B, Qbar, R0);
    } catch (const SolverError& e) {
        throw TrainError(std::string("LQR initialization failed: ") + e.what());
    }
    const Eigen::MatrixXd K0 = R0.inverse() * B.transpose() * P0;

    // current policy evaluated at each collocation point
    std::vector<Eigen::VectorXd> u(static_cast<size_t>(N));
    for (Eigen::Index p = 0; p < N; ++p) {
        const Eigen::Map<const Eigen::VectorXd> xv(pts.points[static_cast<size_t>(p)].data(), n);
        u[static_cast<size_t>(p)] = -K0 * xv;
    }

    TrainReport rep;
    Eigen::VectorXd prev_values = Eigen::VectorXd::Zero(N);
    Eigen::MatrixXd M(N, net.m);
    Eigen::VectorXd rhs(N), row(net.m);
    double w_change = 0.0;
    bool converged = false;

    for (int iter = 0; iter < max_iters; ++iter) {
        for (Eigen::Index p = 0; p < N; ++p) {
            const auto& x = pts.points[static_cast<size_t>(p)];
            const auto& up = u[static_cast<size_t>(p)];
            const Eigen::VectorXd fu = fxs[static_cast<size_t>(p)] + gxs[static_cast<size_t>(p)] * up;
            detail::basis_grad_dot(net, x, fu, row);
            M.row(p) = row;
            rhs(p) = -Qx(p) - up.dot(Rxs[static_cast<size_t>(p)] * up);
        }
        const Eigen::VectorXd w_new = detail::ridge_lstsq(M, rhs, ridge);
        w_change = (w_new - net.w).norm();
        net.w = w_new;
        net = refresh_correction(net);

        // policy update and true HJB residual at collocation points
        Eigen::VectorXd values(N), residual(N);
        for (Eigen::Index p = 0; p < N; ++p) {
            const auto& x = pts.points[static_cast<size_t>(p)];
            auto d = net_eval2(net, x);
            values(p) = d.v;
            Eigen::VectorXd dv(n);
            for (int i = 0; i < n; ++i) dv(i) = d.g[static_cast<size_t>(i)];
            const Eigen::VectorXd gtdv = gxs[static_cast<size_t>(p)].transpose() * dv;
            u[static_cast<size_t>(p)] = -0.5 * Rxs[static_cast<size_t>(p)].inverse() * gtdv;
            residual(p) = Qx(p) + dv.dot(fxs[static_cast<size_t>(p)]) -
                          0.25 * gtdv.dot(Rxs[static_cast<size_t>(p)].inverse() * gtdv);
        }
        rep.max_residual.push_back(residual.cwiseAbs().maxCoeff());
        rep.rms_residual.push_back(std::sqrt(residual.squaredNorm() / static_cast<double>(N)));
        rep.iterations = iter + 1;

        const size_t it = rep.max_residual.size();
        if (it >= 4 && rep.max_residual[it - 1] > 10.0 * rep.max_residual[it - 4])
            throw TrainError("HJB successive approximation diverged (residual grew 10x over 3 iterations)");

        const double value_change = (values - prev_values).cwiseAbs().maxCoeff();
        const double vscale = 1.0 + values.cwiseAbs().maxCoeff();
        rep.value_change.push_back(value_change);
        prev_values = values;
        if (iter > 0 && value_change < tol * vscale) {
            converged = true;
            break;
        }
    }
    rep.final_w_change = w_change;
    rep.converged = converged;
    return {std::move(net), std::move(rep)};
}

} // namespace pdecert
