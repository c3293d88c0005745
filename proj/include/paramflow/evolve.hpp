#pragma once

#include "paramflow/assembly.hpp"
#include "paramflow/control_net.hpp"
#include "paramflow/core.hpp"
#include "paramflow/pde_ops.hpp"
#include "paramflow/rom.hpp"
#include "paramflow/sampling.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <vector>

namespace paramflow {

/// Autonomous field theta' = V(theta) with first derivatives.
class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual Index dim() const = 0;
  virtual DenseVector operator()(const DenseVector& theta) const = 0;
  virtual DenseVector jvp(const DenseVector& theta, const DenseVector& dtheta) const = 0;
  virtual DenseVector vjp(const DenseVector& theta, const DenseVector& w) const = 0;
};

class NetField final : public VectorField {
 public:
  explicit NetField(const ControlNet& net) : net_(net) {}
  Index dim() const override { return net_.arch().input_dim; }
  DenseVector operator()(const DenseVector& theta) const override { return net_.forward(theta); }
  DenseVector jvp(const DenseVector& theta, const DenseVector& d) const override { return net_.jvp(theta, d); }
  DenseVector vjp(const DenseVector& theta, const DenseVector& w) const override { return net_.vjp(theta, w); }

 private:
  const ControlNet& net_;
};

/// V(theta) = A theta + c.
class LinearField final : public VectorField {
 public:
  explicit LinearField(DenseMatrix A, DenseVector c = {});
  Index dim() const override { return A_.rows(); }
  DenseVector operator()(const DenseVector& theta) const override { return A_ * theta + c_; }
  DenseVector jvp(const DenseVector&, const DenseVector& d) const override { return A_ * d; }
  DenseVector vjp(const DenseVector&, const DenseVector& w) const override { return A_.transpose() * w; }

 private:
  DenseMatrix A_;
  DenseVector c_;
};

enum class Scheme { Euler, RK4 };
enum class TrajSource { GramMarch, ControlField };
enum class Termination { Completed, NonFinite, Escaped };
const char* to_string(Termination t);

/// thetas[k] is the state at times[k]; velocities[k] (when present) is the
/// field used to leave thetas[k]. A run that stops early keeps the prefix.
struct ParamTrajectory {
  std::vector<double> times;
  std::vector<DenseVector> thetas;
  std::vector<DenseVector> velocities;
  TrajSource source = TrajSource::ControlField;
  double h = 0.0;
  Termination status = Termination::Completed;
  Index failed_step = -1;

  bool completed() const { return status == Termination::Completed; }
};

constexpr double kNoEscapeRadius = std::numeric_limits<double>::infinity();

struct MarchOptions {
  Index n_x = 1000;
  std::uint64_t seed = 0;
  /// > 0: Gauss-Legendre projection instead of Monte-Carlo points.
  int gauss_nodes = 0;
  /// Ridge lambda = ridge_rel * trace(G) / m; 0 solves G v = p exactly.
  double ridge_rel = 1e-6;
  /// Abort when |theta| exceeds this radius.
  double escape_radius = kNoEscapeRadius;
};

/// Euler march theta_{j+1} = theta_j + h v_j with G(theta_j) v_j = p(theta_j)
/// for j = 0..n_t-1; stores the (theta_j, v_j) pairs.
ParamTrajectory gen_trajectory(const RomArch& arch, const DenseVector& theta0, const PdeOperator& op, Index n_t,
                               double h, const MarchOptions& opt);

/// Explicit integration of theta' = V(theta) on a uniform grid of n_steps
/// steps over [t0, t0 + T]. Non-finite states and escapes beyond
/// `escape_radius` stop the run and are reported through `status`.
ParamTrajectory solve_ivp(const VectorField& field, const DenseVector& theta0, double T, Index n_steps,
                          Scheme scheme, double escape_radius = kNoEscapeRadius, double t0 = 0.0);

struct FieldStats {
  double max_v = 0.0;
  double lip_v = 0.0;
};

/// M_V = max |V(theta_j)|; L_V = max over samples of a power-iteration
/// estimate (8 iterations from a random probe) of the Jacobian norm.
FieldStats field_stats(const VectorField& field, const SampleBatch& thetas, std::uint64_t seed = 0);

/// (theta_j, v_j) pairs of every completed step.
std::vector<TrajPair> trajectory_pairs(const std::vector<ParamTrajectory>& trajs);

/// Trajectory cache: a header line, then {traj_id, j, t, theta, v} per step.
void write_traj_cache(const std::filesystem::path& path, const Json& header, const std::vector<ParamTrajectory>& trajs);
struct TrajCache {
  Json header;
  std::vector<TrajPair> pairs;
  Index trajectories = 0;
};
TrajCache load_traj_cache(const std::filesystem::path& path, const std::string& expected_arch_hash = {});

}  // namespace paramflow
