#include "paramflow/domain.hpp"

#include <cmath>

namespace paramflow {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::FactorizationFailure: return "FactorizationFailure";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::MissingDerivative: return "MissingDerivative";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::TargetNotReached: return "TargetNotReached";
    case ErrorCode::CacheMismatch: return "CacheMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

void Box::validate() const {
  if (lo.size() == 0 || lo.size() != hi.size())
    throw Error(ErrorCode::InvalidArgument, "box: lo/hi must be nonempty and of equal length");
  if (!lo.allFinite() || !hi.allFinite()) throw Error(ErrorCode::NonFinite, "box bounds");
  if (!(lo.array() < hi.array()).all()) throw Error(ErrorCode::InvalidArgument, "box: need lo < hi");
}

bool operator==(const Box& a, const Box& b) {
  return a.lo.size() == b.lo.size() && a.lo == b.lo && a.hi == b.hi;
}

void gauss_legendre(int n, DenseVector& nodes, DenseVector& weights) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "gauss_legendre: n >= 1");
  nodes.resize(n);
  weights.resize(n);
  // Newton iteration on P_n started from the Chebyshev-like guess.
  for (int i = 0; i < n; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = pk;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    nodes(n - 1 - i) = x;
    weights(n - 1 - i) = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

QuadratureRule gauss_rule(const Box& box, int n_per_dim) {
  box.validate();
  DenseVector t, w;
  gauss_legendre(n_per_dim, t, w);
  const int d = box.dim();
  Index total = 1;
  for (int k = 0; k < d; ++k) total *= n_per_dim;
  QuadratureRule rule;
  rule.points.resize(d, total);
  rule.weights.resize(total);
  for (Index idx = 0; idx < total; ++idx) {
    Index rem = idx;
    double weight = 1.0;
    for (int k = 0; k < d; ++k) {
      const Index j = rem % n_per_dim;
      rem /= n_per_dim;
      rule.points(k, idx) = box.lo(k) + 0.5 * (t(j) + 1.0) * (box.hi(k) - box.lo(k));
      weight *= 0.5 * w(j);
    }
    rule.weights(idx) = weight;
  }
  return rule;
}

QuadratureRule monte_carlo_rule(DenseMatrix points) {
  QuadratureRule rule;
  const Index n = points.cols();
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "monte_carlo_rule: no points");
  rule.points = std::move(points);
  rule.weights = DenseVector::Constant(n, 1.0 / static_cast<double>(n));
  return rule;
}

}  // namespace paramflow
