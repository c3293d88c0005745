#pragma once

#include "paramflow/core.hpp"
#include "paramflow/domain.hpp"
#include "paramflow/evolve.hpp"
#include "paramflow/fit.hpp"
#include "paramflow/rom.hpp"

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

namespace paramflow {

/// u*(x, t) = g(x - v t), wrapped periodically into the box.
struct TransportShift {
  InitialSpec g;
  DenseVector velocity;
  Box domain;
};

struct HeatMode {
  std::vector<int> k;
  double coeff = 0.0;
};

/// u*(x, t) = sum_modes coeff exp(rate t) prod_i sin(k_i pi (x_i - lo_i) / len_i),
/// rate = -sum_i (k_i pi / len_i)^2: the zero-Dirichlet heat solution.
struct HeatSeries {
  std::vector<HeatMode> modes;
  Box domain;

  double rate(const HeatMode& mode) const;
  static HeatSeries from_combo(const HeatCombo& combo, const Box& domain);
};

/// Snapshots on a uniform (nx + 1) x (ny + 1) node grid including the boundary,
/// indexed [i][j] with x_1 = lo_1 + i h_1. Bilinear in space, linear in time.
struct GridSolution {
  Box domain;
  Index nx = 0;
  Index ny = 0;
  std::vector<double> times;
  std::vector<DenseMatrix> snapshots;
  double dt = 0.0;
};

using ReferenceSolution = std::variant<TransportShift, HeatSeries, GridSolution>;

/// Throws OutOfDomain outside the box (with 1e-12 slack) or the stored time range.
double eval_reference(const ReferenceSolution& ref, const DenseVector& x, double t);

/// IMEX scheme (I - dt eps L_h) u^{n+1} = u^n + dt 1.5 (u^n - (u^n)^3) with the
/// five-point Laplacian L_h and zero Dirichlet data, diagonalized exactly by
/// discrete sine transforms. At most `max_snapshots` states are stored
/// (always including t = 0 and t = T).
GridSolution solve_allen_cahn_imex(const InitialSpec& g, const Box& domain, double epsilon, Index nx, Index nt,
                                   double T, Index max_snapshots = 64);

struct ErrorCurve {
  std::vector<double> times;
  std::vector<double> abs_err;
  std::vector<double> rel_err;
  std::vector<bool> rel_defined;
  Index n_x = 0;
  std::uint64_t seed = 0;
  bool squared = false;

  /// Mean relative error over defined entries (NaN when none are defined).
  double mean_rel() const;
  double max_rel() const;
};

struct ErrorOptions {
  Index n_x = 2000;
  std::uint64_t seed = 0;
  /// > 0: tensor Gauss rule instead of Monte-Carlo points.
  int gauss_nodes = 0;
  /// Report norms squared (abs^2 and abs^2 / |u*|^2) instead of norms.
  bool squared = false;
};

/// L2(Omega) errors ||u_theta_t - u*(t)|| at every trajectory time, estimated
/// as sqrt(|Omega| sum_i w_i d_i^2). Relative errors need ||u*|| > 1e-12.
ErrorCurve error_curve(const RomArch& arch, const ParamTrajectory& traj, const ReferenceSolution& ref,
                       const ErrorOptions& opt);

/// CSV: t,abs_err,rel_err ("undefined" where the relative error is undefined).
void write_error_csv(const std::filesystem::path& path, const ErrorCurve& curve);

/// Regular-grid slice at time t. 2D: x1,x2,u_ref,u_rom,abs_diff; 1D: x1,u_ref,u_rom,abs_diff.
void write_slice_csv(const std::filesystem::path& path, const RomModel& model, const ReferenceSolution& ref, double t,
                     Index n_per_axis);

}  // namespace paramflow
