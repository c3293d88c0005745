#pragma once

#include "paramflow/control_net.hpp"
#include "paramflow/core.hpp"
#include "paramflow/rom.hpp"
#include "paramflow/serialize.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace paramflow {

/// Initial function u_{theta0} for a parameter drawn uniformly from [-w, w]^m.
struct RandomTheta {
  RomModel model;
  std::uint64_t seed = 0;

  static RandomTheta draw(const RomArch& arch, double half_width, std::uint64_t seed);
};

/// sum_i c_i g_i on a box with
///   g_1 = prod_i s_1(x_i),            g_2 = s_2(x_1) prod_{i != 1} s_1(x_i),
///   g_3 = s_2(x_2) prod_{i != 2} s_1(x_i), g_4 = s_2(x_1) s_2(x_2) prod_{i > 2} s_1(x_i),
/// s_k(x) = sin(k pi (x - lo) / len). In 1D only c_1, c_2 may be nonzero.
struct HeatCombo {
  DenseVector c;
};

struct ChebTerm {
  int i = 0;
  int j = 0;
  double c = 0.0;
};

/// (1 - x_1^2)(1 - x_2^2) sum_k c_k T_{i_k}(x_1) T_{j_k}(x_2) on (-1, 1)^2.
struct ChebCombo {
  std::vector<ChebTerm> terms;

  /// 1..max_terms terms with degrees in 0..max_degree and coefficients in [-1, 1].
  static ChebCombo draw(int max_degree, int max_terms, std::uint64_t seed);
};

struct Closure {
  std::function<double(const DenseVector&)> g;
  std::string name = "closure";
};

using InitialSpec = std::variant<RandomTheta, HeatCombo, ChebCombo, Closure>;

void validate(const InitialSpec& spec, const Box& domain);
double eval_initial(const InitialSpec& spec, const DenseVector& x, const Box& domain);
DenseVector eval_initial_batch(const InitialSpec& spec, const DenseMatrix& xs, const Box& domain);

/// Chebyshev polynomial T_n(x).
double chebyshev(int n, double x);

enum class FitMethod { Adam, LevenbergMarquardt };

struct FitOptions {
  Index n_x = 1000;
  double eps0_target = 1e-3;
  FitMethod method = FitMethod::Adam;
  /// lr, betas and max_steps are used by the ADAM path.
  TrainConfig train;
  /// Iteration cap for Levenberg-Marquardt.
  Index lm_max_iter = 200;
  std::uint64_t seed = 0;
  std::optional<DenseVector> warm_start;
};

struct FitResult {
  DenseVector theta;
  double train_rmse = 0.0;
  /// RMSE on a fresh sample disjoint from the training sample.
  double heldout_rmse = 0.0;
  bool reached = false;
  Index steps = 0;
};

/// Least-squares fit of u_theta to g. LinearBasis models use the normal
/// equations; networks use ADAM (or Levenberg-Marquardt when selected) and
/// keep the best iterate. Stops once the training RMSE is at most the target.
FitResult fit_initial(const RomArch& arch, const InitialSpec& spec, const FitOptions& opt);

/// RMSE of u_theta - g over the given points.
double rmse(const RomModel& model, const InitialSpec& spec, const DenseMatrix& xs);

Json to_json(const InitialSpec& spec);
InitialSpec initial_from_json(const Json& j);

}  // namespace paramflow
