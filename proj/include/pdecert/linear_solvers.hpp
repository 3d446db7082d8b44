#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <stdexcept>

namespace pdecert {

struct SolverError : std::runtime_error {
    explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

inline bool is_hurwitz(const Eigen::MatrixXd& A) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(A);
    return (es.eigenvalues().real().array() < 0.0).all();
}

/// Solve A^T P + P A = -W for symmetric P via the Kronecker linearization.
/// Requires A Hurwitz (unique solution; positive definite when W is).
inline Eigen::MatrixXd lyap_solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& W) {
    const Eigen::Index n = A.rows();
    if (A.cols() != n || W.rows() != n || W.cols() != n)
        throw SolverError("lyap_solve: dimension mismatch");
    if (!is_hurwitz(A)) throw SolverError("lyap_solve: A is not Hurwitz");

    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n * n, n * n);
    const Eigen::MatrixXd At = A.transpose();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    // vec(A^T P) = (I (x) A^T) vec(P), vec(P A) = (A^T (x) I) vec(P)
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            M.block(i * n, j * n, n, n) += I(i, j) * At;
            M.block(i * n, j * n, n, n) += At(i, j) * I;
        }
    Eigen::VectorXd w(n * n);
    for (Eigen::Index j = 0; j < n; ++j) w.segment(j * n, n) = -W.col(j);
    Eigen::VectorXd p = M.fullPivLu().solve(w);
    Eigen::MatrixXd P(n, n);
    for (Eigen::Index j = 0; j < n; ++j) P.col(j) = p.segment(j * n, n);
    return 0.5 * (P + P.transpose());
}

/// Solve the continuous algebraic Riccati equation
///   A^T P + P A - P B R^-1 B^T P + Q = 0
/// by a Hamiltonian-subspace initial guess polished with Newton-Kleinman
/// iterations of lyap_solve, converged to residual <= 1e-12 (scaled).
inline Eigen::MatrixXd riccati_solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                     const Eigen::MatrixXd& Qm, const Eigen::MatrixXd& Rm) {
    const Eigen::Index n = A.rows();
    const Eigen::Index k = B.cols();
    if (B.rows() != n || Qm.rows() != n || Qm.cols() != n || Rm.rows() != k || Rm.cols() != k)
        throw SolverError("riccati_solve: dimension mismatch");

    const Eigen::MatrixXd Rinv = Rm.inverse();
    const Eigen::MatrixXd S = B * Rinv * B.transpose();

    // stable invariant subspace of the Hamiltonian matrix
    Eigen::MatrixXd H(2 * n, 2 * n);
    H << A, -S, -Qm, -A.transpose();
    Eigen::ComplexEigenSolver<Eigen::MatrixXd> es(H);
    if (es.info() != Eigen::Success) throw SolverError("riccati_solve: eigen decomposition failed");
    Eigen::MatrixXcd V(2 * n, n);
    Eigen::Index picked = 0;
    for (Eigen::Index i = 0; i < 2 * n && picked < n; ++i)
        if (es.eigenvalues()(i).real() < 0.0) V.col(picked++) = es.eigenvectors().col(i);
    if (picked != n)
        throw SolverError("riccati_solve: (A,B) not stabilizable (Hamiltonian has no stable subspace)");
    const Eigen::MatrixXcd X = V.topRows(n);
    const Eigen::MatrixXcd Y = V.bottomRows(n);
    Eigen::MatrixXd P = (Y * X.inverse()).real();
    P = 0.5 * (P + P.transpose());

    auto residual = [&](const Eigen::MatrixXd& Pm) {
        return (A.transpose() * Pm + Pm * A - Pm * S * Pm + Qm).cwiseAbs().maxCoeff();
    };
    const double tol = 1e-12 * (1.0 + Qm.cwiseAbs().maxCoeff());

    for (int iter = 0; iter < 50; ++iter) {
        if (residual(P) <= tol) return P;
        const Eigen::MatrixXd K = Rinv * B.transpose() * P;
        const Eigen::MatrixXd Acl = A - B * K;
        if (!is_hurwitz(Acl))
            throw SolverError("riccati_solve: Newton-Kleinman iterate lost stability");
        P = lyap_solve(Acl, Qm + K.transpose() * Rm * K);
    }
    if (residual(P) > tol) throw SolverError("riccati_solve: Newton-Kleinman did not converge");
    return P;
}

} // namespace pdecert
