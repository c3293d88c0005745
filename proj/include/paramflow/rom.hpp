#pragma once

#include "paramflow/core.hpp"
#include "paramflow/domain.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace paramflow {

enum class RomKind { ResNetZeroBoundary, ResNetPeriodic, LinearBasis };
enum class Activation { Tanh, Relu };

/// One term of a LinearBasis model.
///  Sine:     prod_i sqrt(2) sin(k_i pi (x_i - lo_i) / len_i), orthonormal for
///            the domain-average inner product.
///  Monomial: prod_i x_i^{k_i}.
struct BasisFunction {
  enum class Kind { Sine, Monomial };
  Kind kind = Kind::Sine;
  std::vector<int> index;

  friend bool operator==(const BasisFunction&, const BasisFunction&) = default;
};

/// Architecture of a reduced-order model u_theta.
///
/// ResNet kinds: z_0 = act(W_0 z_in + b_0), z_l = z_{l-1} + act(W_l z_{l-1} + b_l)
/// for l = 1..depth-1, N = w . z_{depth-1}. ResNetZeroBoundary uses z_in = x and
/// u = alpha(x) N with alpha the box bubble; ResNetPeriodic uses
/// z_in = beta(x) (cosines then sines of 2 pi (x - b) / len) and u = N.
struct RomArch {
  RomKind kind = RomKind::ResNetZeroBoundary;
  int input_dim = 1;
  int width = 8;
  int depth = 3;
  Activation activation = Activation::Tanh;
  Box domain = Box::unit(1);
  std::vector<BasisFunction> basis;

  void validate() const;
  int net_input_dim() const { return kind == RomKind::ResNetPeriodic ? 2 * input_dim : input_dim; }

  /// `modes` sine modes sin(j pi x), j = 1..modes, on a 1D interval.
  static RomArch sine_basis_1d(int modes, Box domain = Box::unit(1));
};

/// A named slice of the flat parameter vector; matrices are row-major.
struct ParamBlock {
  std::string name;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  Index fan_in = 0;
  bool is_weight = true;

  Index size() const { return rows * cols; }
};

/// Flattening order: W_0, b_0, W_1, b_1, ..., W_{L-1}, b_{L-1}, w_L, then the
/// periodic shift b (ResNetPeriodic only). LinearBasis has a single block.
std::vector<ParamBlock> param_layout(const RomArch& arch);
Index param_count(const RomArch& arch);

enum EvalFlag : unsigned {
  kValue = 1u,
  kGradX = 2u,
  kLaplacian = 4u,
  kGradTheta = 8u,
  kHessDiag = 16u,  // per-axis second derivatives d^2u/dx_k^2
};
using EvalFlags = unsigned;

struct EvalBundle {
  double value = 0.0;
  DenseVector grad_x;
  double laplacian = 0.0;
  DenseVector hess_diag;
  DenseVector grad_theta;
  EvalFlags populated = 0;

  bool has(EvalFlags f) const { return (populated & f) == f; }
};

/// Column j of every matrix belongs to sample point j.
struct EvalBatch {
  DenseVector value;
  DenseMatrix grad_x;
  DenseVector laplacian;
  DenseMatrix hess_diag;
  DenseMatrix grad_theta;
  EvalFlags populated = 0;

  Index size() const { return value.size(); }
  bool has(EvalFlags f) const { return (populated & f) == f; }
  EvalBundle at(Index j) const;
};

class RomModel {
 public:
  RomModel(RomArch arch, DenseVector theta);
  /// One-mode sine basis with zero coefficient; placeholder for containers.
  RomModel() : RomModel(RomArch::sine_basis_1d(1), DenseVector::Zero(1)) {}

  const RomArch& arch() const { return arch_; }
  const DenseVector& theta() const { return theta_; }
  Index param_count() const { return theta_.size(); }
  RomModel with_theta(DenseVector theta) const { return RomModel(arch_, std::move(theta)); }

 private:
  RomArch arch_;
  DenseVector theta_;
};

/// Evaluates u_theta and the requested derivatives at the columns of `xs`
/// (d x N). Requested fields are computed analytically; others stay empty.
EvalBatch eval_batch(const RomModel& model, const Eigen::Ref<const DenseMatrix>& xs, EvalFlags need);
EvalBundle eval(const RomModel& model, const DenseVector& x, EvalFlags need);

/// Box bubble prod_i 4 (x_i - lo_i)(hi_i - x_i) / len_i^2: zero on the
/// boundary, one at the center.
double wrapper_alpha(const DenseVector& x, const Box& box);
/// (cos(2 pi (x - b) / len), sin(2 pi (x - b) / len)), length 2d.
DenseVector wrapper_beta(const DenseVector& x, const DenseVector& shift, const Box& box);

/// Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)), biases and shift zero.
DenseVector init_params(const RomArch& arch, std::uint64_t seed);

}  // namespace paramflow
