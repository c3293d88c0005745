#include "paramflow/pde_ops.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace paramflow {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool isotropic(const DenseVector& diag) {
  return diag.size() == 0 || (diag.array() == diag(0)).all();
}

void require(const EvalBundle& b, EvalFlags f) {
  if (!b.has(f)) throw Error(ErrorCode::MissingDerivative, "apply_operator: bundle lacks a required derivative");
}

void require(const EvalBatch& b, EvalFlags f) {
  if (!b.has(f)) throw Error(ErrorCode::MissingDerivative, "apply_operator: batch lacks a required derivative");
}

}  // namespace

PdeOperator PdeOperator::transport(DenseVector velocity) {
  PdeOperator op;
  op.form = Transport{std::move(velocity)};
  return op;
}

PdeOperator PdeOperator::heat() {
  PdeOperator op;
  op.form = Heat{};
  op.ellipticity = 1.0;
  return op;
}

PdeOperator PdeOperator::allen_cahn(double epsilon) {
  PdeOperator op;
  op.form = AllenCahn{epsilon};
  constexpr double u_max = 1.5;
  op.lipschitz_f = 1.5 * (3.0 * u_max * u_max - 1.0);
  op.ellipticity = epsilon;
  return op;
}

PdeOperator PdeOperator::semilinear(DenseVector diffusion, DenseVector drift, Nonlinearity f) {
  PdeOperator op;
  op.ellipticity = diffusion.size() ? std::max(0.0, diffusion.minCoeff()) : 0.0;
  switch (f.kind) {
    case Nonlinearity::Kind::None: op.lipschitz_f = 0.0; break;
    case Nonlinearity::Kind::Linear: op.lipschitz_f = std::abs(f.coeff); break;
    case Nonlinearity::Kind::Cubic: op.lipschitz_f = std::abs(f.coeff) * (3.0 * 1.5 * 1.5 - 1.0); break;
  }
  op.form = Semilinear{std::move(diffusion), std::move(drift), f};
  return op;
}

void PdeOperator::validate(int dim) const {
  std::visit(overloaded{
                 [&](const Transport& t) {
                   if (t.velocity.size() != dim)
                     throw Error(ErrorCode::InvalidArgument, "transport: velocity dimension mismatch");
                 },
                 [](const Heat&) {},
                 [](const AllenCahn& a) {
                   if (!(a.epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "allen_cahn: epsilon > 0");
                 },
                 [&](const Semilinear& s) {
                   if (s.diffusion.size() != dim || s.drift.size() != dim)
                     throw Error(ErrorCode::InvalidArgument, "semilinear: coefficient dimension mismatch");
                   if ((s.diffusion.array() < 0.0).any())
                     throw Error(ErrorCode::InvalidArgument, "semilinear: diffusion must be nonnegative");
                 },
             },
             form);
  if (lipschitz_f < 0.0 || ellipticity < 0.0 || div_b_bound < 0.0)
    throw Error(ErrorCode::InvalidArgument, "operator constants must be nonnegative");
}

EvalFlags PdeOperator::required_flags() const {
  return std::visit(overloaded{
                        [](const Transport&) -> EvalFlags { return kGradX; },
                        [](const Heat&) -> EvalFlags { return kLaplacian; },
                        [](const AllenCahn&) -> EvalFlags { return kValue | kLaplacian; },
                        [](const Semilinear& s) -> EvalFlags {
                          EvalFlags f = kValue;
                          if (s.diffusion.size() && (s.diffusion.array() != 0.0).any())
                            f |= isotropic(s.diffusion) ? kLaplacian : kHessDiag;
                          if (s.drift.size() && (s.drift.array() != 0.0).any()) f |= kGradX;
                          return f;
                        },
                    },
                    form);
}

std::string PdeOperator::tag() const {
  std::ostringstream os;
  os.precision(17);
  std::visit(overloaded{
                 [&](const Transport& t) {
                   os << "transport(v=";
                   for (Index i = 0; i < t.velocity.size(); ++i) os << (i ? "," : "") << t.velocity(i);
                   os << ")";
                 },
                 [&](const Heat&) { os << "heat"; },
                 [&](const AllenCahn& a) { os << "allen_cahn(eps=" << a.epsilon << ")"; },
                 [&](const Semilinear& s) {
                   os << "semilinear(A=";
                   for (Index i = 0; i < s.diffusion.size(); ++i) os << (i ? "," : "") << s.diffusion(i);
                   os << ";b=";
                   for (Index i = 0; i < s.drift.size(); ++i) os << (i ? "," : "") << s.drift(i);
                   os << ";f=" << static_cast<int>(s.f.kind) << ":" << s.f.coeff << ")";
                 },
             },
             form);
  return os.str();
}

void Problem::validate() const {
  domain.validate();
  op.validate(domain.dim());
  if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "problem: horizon must be positive");
}

double apply_operator(const PdeOperator& op, const EvalBundle& b) {
  return std::visit(overloaded{
                        [&](const Transport& t) {
                          require(b, kGradX);
                          return -t.velocity.dot(b.grad_x);
                        },
                        [&](const Heat&) {
                          require(b, kLaplacian);
                          return b.laplacian;
                        },
                        [&](const AllenCahn& a) {
                          require(b, kValue | kLaplacian);
                          return a.epsilon * b.laplacian + 1.5 * (b.value - b.value * b.value * b.value);
                        },
                        [&](const Semilinear& s) {
                          require(b, kValue);
                          double out = s.f(b.value);
                          if ((s.diffusion.array() != 0.0).any()) {
                            if (isotropic(s.diffusion)) {
                              require(b, kLaplacian);
                              out += s.diffusion(0) * b.laplacian;
                            } else {
                              require(b, kHessDiag);
                              out += s.diffusion.dot(b.hess_diag);
                            }
                          }
                          if ((s.drift.array() != 0.0).any()) {
                            require(b, kGradX);
                            out += s.drift.dot(b.grad_x);
                          }
                          return out;
                        },
                    },
                    op.form);
}

DenseVector apply_operator(const PdeOperator& op, const EvalBatch& b) {
  return std::visit(overloaded{
                        [&](const Transport& t) -> DenseVector {
                          require(b, kGradX);
                          return -(t.velocity.transpose() * b.grad_x).transpose();
                        },
                        [&](const Heat&) -> DenseVector {
                          require(b, kLaplacian);
                          return b.laplacian;
                        },
                        [&](const AllenCahn& a) -> DenseVector {
                          require(b, kValue | kLaplacian);
                          return (a.epsilon * b.laplacian.array() + 1.5 * (b.value.array() - b.value.array().cube()))
                              .matrix();
                        },
                        [&](const Semilinear& s) -> DenseVector {
                          require(b, kValue);
                          DenseVector out = b.value.unaryExpr([&](double u) { return s.f(u); });
                          if ((s.diffusion.array() != 0.0).any()) {
                            if (isotropic(s.diffusion)) {
                              require(b, kLaplacian);
                              out += s.diffusion(0) * b.laplacian;
                            } else {
                              require(b, kHessDiag);
                              out += (s.diffusion.transpose() * b.hess_diag).transpose();
                            }
                          }
                          if ((s.drift.array() != 0.0).any()) {
                            require(b, kGradX);
                            out += (s.drift.transpose() * b.grad_x).transpose();
                          }
                          return out;
                        },
                    },
                    op.form);
}

double theory_bound(const PdeOperator& op, double poincare, double eps0, double eps, double t) {
  if (!(poincare > 0.0)) throw Error(ErrorCode::InvalidArgument, "theory_bound: C_p > 0");
  if (eps0 < 0.0 || eps < 0.0 || t < 0.0) throw Error(ErrorCode::InvalidArgument, "theory_bound: negative argument");
  const double rate = op.lipschitz_f + 0.5 * op.div_b_bound - op.ellipticity / poincare;
  return std::exp(rate * t) * (eps0 + eps * t);
}

double euler_bound(double lip_v, double max_v, double vol_omega, double h, double t) {
  if (lip_v < 0.0 || max_v < 0.0 || vol_omega < 0.0 || h < 0.0 || t < 0.0)
    throw Error(ErrorCode::InvalidArgument, "euler_bound: arguments must be nonnegative");
  return 0.5 * lip_v * max_v * vol_omega * h * std::expm1(lip_v * t);
}

double euler_inner_bound(double lip_v, double max_v, double h, double t) {
  if (lip_v < 0.0 || max_v < 0.0 || h < 0.0 || t < 0.0)
    throw Error(ErrorCode::InvalidArgument, "euler_inner_bound: arguments must be nonnegative");
  return 0.5 * max_v * h * std::expm1(lip_v * t);
}

double poincare_constant(const Box& box) { return box.extent().maxCoeff() / std::numbers::pi; }

}  // namespace paramflow
