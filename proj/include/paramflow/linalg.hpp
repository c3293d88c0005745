#pragma once

#include "paramflow/core.hpp"

#include <algorithm>
#include <cmath>

namespace paramflow {

/// Ridge term used when the caller does not supply one: 1e-6 * trace(G) / m.
template <typename Derived>
typename Derived::Scalar default_ridge(const Eigen::MatrixBase<Derived>& G) {
  using Scalar = typename Derived::Scalar;
  if (G.rows() == 0) return Scalar(0);
  return Scalar(1e-6) * G.trace() / Scalar(G.rows());
}

/// Solves (G + lambda I) v = p for symmetric PSD G.
///
/// Cholesky is tried first. If it fails, or leaves a residual above
/// 1e-8 (|p| + 1), the solve falls back to an eigendecomposition that drops
/// eigenvalues below 1e-12 times the largest one, which yields the
/// minimum-norm minimizer of |(G + lambda I) v - p|.
template <typename DerivedG, typename DerivedP>
Vector<typename DerivedG::Scalar> ridge_solve(const Eigen::MatrixBase<DerivedG>& G,
                                              const Eigen::MatrixBase<DerivedP>& p,
                                              typename DerivedG::Scalar lambda_reg) {
  using Scalar = typename DerivedG::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Vector<Scalar>;

  if (G.rows() != G.cols()) throw Error(ErrorCode::InvalidArgument, "ridge_solve: G must be square");
  if (p.size() != G.rows()) throw Error(ErrorCode::InvalidArgument, "ridge_solve: size mismatch");
  if (!(lambda_reg >= Scalar(0)) || !std::isfinite(lambda_reg))
    throw Error(ErrorCode::InvalidArgument, "ridge_solve: lambda must be finite and nonnegative");
  if (!G.allFinite() || !p.allFinite()) throw Error(ErrorCode::NonFinite, "ridge_solve: input");

  const Index m = G.rows();
  if (m == 0) return Vec();
  const Scalar gmax = G.cwiseAbs().maxCoeff();
  if ((G - G.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-10) * std::max(gmax, Scalar(1)))
    throw Error(ErrorCode::InvalidArgument, "ridge_solve: G is not symmetric");

  Mat A = G;
  A.diagonal().array() += lambda_reg;
  const Vec rhs = p;
  const Scalar tol = Scalar(1e-8) * (rhs.norm() + Scalar(1));

  Eigen::LLT<Mat> llt(A);
  if (llt.info() == Eigen::Success) {
    Vec v = llt.solve(rhs);
    if (v.allFinite() && (A * v - rhs).norm() <= tol) return v;
  }

  Eigen::SelfAdjointEigenSolver<Mat> eig(A);
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::FactorizationFailure, "ridge_solve: eigensolver failed");
  const Vec& evals = eig.eigenvalues();
  const Scalar top = evals.cwiseAbs().maxCoeff();
  if (!(top > Scalar(0)))
    throw Error(ErrorCode::FactorizationFailure, "ridge_solve: G + lambda I is numerically zero");
  const Scalar cut = Scalar(1e-12) * top;
  Vec coeff = eig.eigenvectors().transpose() * rhs;
  for (Index i = 0; i < m; ++i) coeff(i) = evals(i) > cut ? coeff(i) / evals(i) : Scalar(0);
  Vec v = eig.eigenvectors() * coeff;
  if (!v.allFinite()) throw Error(ErrorCode::FactorizationFailure, "ridge_solve: non-finite solution");
  return v;
}

template <typename DerivedG, typename DerivedP>
Vector<typename DerivedG::Scalar> ridge_solve(const Eigen::MatrixBase<DerivedG>& G,
                                              const Eigen::MatrixBase<DerivedP>& p) {
  return ridge_solve(G, p, default_ridge(G));
}

/// Largest eigenvalue of a symmetric matrix by power iteration.
/// Converges to relative tolerance 1e-8 or throws NoConvergence after
/// `max_iter` iterations.
template <typename Derived>
typename Derived::Scalar sym_eig_max(const Eigen::MatrixBase<Derived>& G, int max_iter = 10000) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Vector<Scalar>;

  if (G.rows() != G.cols()) throw Error(ErrorCode::InvalidArgument, "sym_eig_max: G must be square");
  if (!G.allFinite()) throw Error(ErrorCode::NonFinite, "sym_eig_max: input");
  const Index m = G.rows();
  if (m == 0) return Scalar(0);
  const Scalar scale = G.cwiseAbs().maxCoeff();
  if (scale == Scalar(0)) return Scalar(0);

  auto iterate = [&](const Mat& A, Scalar& out) {
    Vec q(m);
    for (Index i = 0; i < m; ++i) q(i) = Scalar(1) + Scalar(i) / Scalar(2 * m + 1);
    q.normalize();
    Scalar rho = q.dot(A * q);
    for (int it = 0; it < max_iter; ++it) {
      Vec y = A * q;
      const Scalar ny = y.norm();
      if (ny == Scalar(0)) {
        out = Scalar(0);
        return true;
      }
      q = y / ny;
      const Scalar next = q.dot(A * q);
      const Scalar residual = (A * q - next * q).norm();
      const bool settled = std::abs(next - rho) <= Scalar(1e-15) * std::max(std::abs(next), scale);
      rho = next;
      if (residual <= Scalar(1e-8) * std::max(std::abs(rho), scale * Scalar(1e-300)) || settled) {
        out = rho;
        return true;
      }
    }
    return false;
  };

  Mat A = G;
  Scalar rho = 0;
  if (!iterate(A, rho)) throw Error(ErrorCode::NoConvergence, "sym_eig_max: power iteration did not converge");
  if (rho >= Scalar(0)) return rho;
  // Dominant eigenvalue is negative: shift so the largest algebraic one dominates.
  const Scalar shift = -rho;
  A.diagonal().array() += shift;
  Scalar shifted = 0;
  if (!iterate(A, shifted)) throw Error(ErrorCode::NoConvergence, "sym_eig_max: power iteration did not converge");
  return shifted - shift;
}

}  // namespace paramflow
