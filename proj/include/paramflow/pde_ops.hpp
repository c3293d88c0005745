#pragma once

#include "paramflow/core.hpp"
#include "paramflow/domain.hpp"
#include "paramflow/rom.hpp"

#include <string>
#include <variant>

namespace paramflow {

/// Pointwise nonlinearity f(u) of a semilinear operator.
struct Nonlinearity {
  enum class Kind { None, Linear, Cubic };
  Kind kind = Kind::None;
  double coeff = 0.0;  // Linear: f = coeff u.  Cubic: f = coeff (u - u^3).

  double operator()(double u) const {
    switch (kind) {
      case Kind::Linear: return coeff * u;
      case Kind::Cubic: return coeff * (u - u * u * u);
      case Kind::None: break;
    }
    return 0.0;
  }
};

struct Transport {
  DenseVector velocity;
};
struct Heat {};
struct AllenCahn {
  double epsilon = 1e-4;
};
/// F[u] = div(A grad u) + b . grad u + f(u) with constant diagonal A and constant b.
struct Semilinear {
  DenseVector diffusion;  // diagonal of A
  DenseVector drift;      // b
  Nonlinearity f;
};

using OperatorForm = std::variant<Transport, Heat, AllenCahn, Semilinear>;

/// Differential operator plus the constants entering the error bound:
/// Lipschitz constant of f, ellipticity of A and a bound on |div b|.
struct PdeOperator {
  OperatorForm form;
  double lipschitz_f = 0.0;
  double ellipticity = 0.0;
  double div_b_bound = 0.0;

  static PdeOperator transport(DenseVector velocity);
  static PdeOperator heat();
  /// L_f = 1.5 (3 u_max^2 - 1) with u_max = 1.5, the local Lipschitz constant
  /// of 1.5 (u - u^3) on |u| <= 1.5. Used only for bound reporting.
  static PdeOperator allen_cahn(double epsilon);
  static PdeOperator semilinear(DenseVector diffusion, DenseVector drift, Nonlinearity f);

  void validate(int dim) const;
  /// Evaluation flags the operator consumes.
  EvalFlags required_flags() const;
  /// Short stable tag, e.g. "heat" or "allen_cahn(eps=0.0001)"; part of cache headers.
  std::string tag() const;
};

enum class BoundaryKind { ZeroDirichlet, Periodic };

struct Problem {
  PdeOperator op;
  Box domain;
  double horizon = 1.0;
  BoundaryKind boundary = BoundaryKind::ZeroDirichlet;

  void validate() const;
};

/// F[u_theta](x) from an evaluation bundle. Throws MissingDerivative when the
/// bundle lacks a field the operator needs.
double apply_operator(const PdeOperator& op, const EvalBundle& bundle);
DenseVector apply_operator(const PdeOperator& op, const EvalBatch& batch);

/// exp((L_f + B/2 - lambda/C_p) t) (eps0 + eps t).
double theory_bound(const PdeOperator& op, double poincare, double eps0, double eps, double t);

/// (L_V M_V |Omega| h / 2)(exp(L_V t) - 1).
double euler_bound(double lip_v, double max_v, double vol_omega, double h, double t);

/// Parameter-space Euler error bound (h M_V / 2)(exp(L_V t) - 1) for a field
/// with |V| <= M_V and Lipschitz constant L_V along the trajectory.
double euler_inner_bound(double lip_v, double max_v, double h, double t);

/// Reporting convention for the Poincare constant of a box: longest side / pi.
double poincare_constant(const Box& box);

}  // namespace paramflow
