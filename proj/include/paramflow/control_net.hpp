#pragma once

#include "paramflow/assembly.hpp"
#include "paramflow/core.hpp"
#include "paramflow/serialize.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace paramflow {

/// Gated residual field R^m -> R^m:
///   eta_0 = tanh(U_0 theta + b_0)
///   eta_l = eta_{l-1} + GeLU(Ubar_l theta + bbar_l) * tanh(U_l eta_{l-1} + b_l),  l = 1..depth-1
///   V     = W_out eta_{depth-1} + c_out
struct ControlArch {
  Index input_dim = 1;
  Index width = 32;
  Index depth = 3;

  void validate() const;
  friend bool operator==(const ControlArch&, const ControlArch&) = default;
};

/// Flat layout: U_0, b_0, then per block {U_l, b_l, Ubar_l, bbar_l}, then
/// W_out, c_out. Matrices row-major.
Index param_count(const ControlArch& arch);

double gelu(double x);
double gelu_prime(double x);

class ControlNet {
 public:
  ControlNet(ControlArch arch, DenseVector xi);
  /// Fan-in uniform weights, zero biases, zero output layer (V = 0 at start).
  static ControlNet initialized(const ControlArch& arch, std::uint64_t seed);

  const ControlArch& arch() const { return arch_; }
  const DenseVector& xi() const { return xi_; }
  DenseVector& mutable_xi() { return xi_; }

  DenseVector forward(const DenseVector& theta) const;
  /// Columns of `thetas` (m x B) mapped to columns of the result.
  DenseMatrix forward_batch(const DenseMatrix& thetas) const;
  /// Returns V(thetas) and accumulates d/dxi sum_j <dV_j, V_j> into `grad`.
  /// `dV` has the shape of the output.
  void backward_batch(const DenseMatrix& thetas, const DenseMatrix& dV, DenseVector& grad) const;
  /// One forward pass, then `cotangent(V)` supplies dL/dV and dL/dxi is
  /// accumulated into `grad`. Returns V.
  DenseMatrix forward_backward(const DenseMatrix& thetas,
                               const std::function<DenseMatrix(const DenseMatrix&)>& cotangent,
                               DenseVector& grad) const;
  /// Jacobian-vector product dV/dtheta * dtheta.
  DenseVector jvp(const DenseVector& theta, const DenseVector& dtheta) const;
  /// Vector-Jacobian product (dV/dtheta)^T * w.
  DenseVector vjp(const DenseVector& theta, const DenseVector& w) const;

 private:
  struct Tape;
  Tape run(const DenseMatrix& thetas) const;

  ControlArch arch_;
  DenseVector xi_;
};

struct LossValue {
  double value = 0.0;
  DenseVector grad;
};

/// l1 = mean_j |G_j V(theta_j) - p_j|^2 over the selected records.
LossValue loss_l1(const ControlNet& net, const std::vector<GramRecord>& records,
                  const std::vector<std::size_t>& select = {});

struct TrajPair {
  DenseVector theta;
  DenseVector v;
};

/// l2 = mean_j |V(theta_j) - v_j|^2 over the selected pairs.
LossValue loss_l2(const ControlNet& net, const std::vector<TrajPair>& pairs,
                  const std::vector<std::size_t>& select = {});

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double zeta = 0.1;
  /// 0 means full batch.
  Index batch_size = 256;
  double stop_loss = 0.1;
  /// Percent; the plateau rule is off when plateau_window is 0.
  double stop_plateau_pct = 0.1;
  Index plateau_window = 100;
  Index max_steps = 20000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// ADAM with bias correction.
class Adam {
 public:
  Adam(Index n, double lr, double beta1, double beta2, double eps);
  void step(DenseVector& params, const DenseVector& grad);
  Index steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  DenseVector m_, v_;
  Index t_ = 0;
  double beta1_pow_ = 1.0, beta2_pow_ = 1.0;
};

/// Stops when the loss drops below `stop_loss`, or when the mean per-step
/// percent decrease over the last `window` steps is below `pct`.
class PlateauDetector {
 public:
  PlateauDetector(double stop_loss, double pct, Index window);
  /// Records one loss; returns true when training should stop.
  bool push(double loss);
  bool below_target() const { return below_; }
  bool plateaued() const { return plateau_; }

 private:
  double stop_loss_, pct_;
  Index window_;
  std::vector<double> decreases_;
  double sum_ = 0.0;
  double last_ = 0.0;
  Index count_ = 0;
  bool below_ = false, plateau_ = false;
};

struct LossRecord {
  Index step = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
};

enum class StopReason { TargetLoss, Plateau, MaxSteps };
const char* to_string(StopReason r);

struct TrainResult {
  ControlNet net;
  std::vector<LossRecord> history;
  StopReason reason = StopReason::MaxSteps;
};

/// Minimizes l1 + zeta l2 with ADAM over shuffled minibatches (a fresh
/// Fisher-Yates permutation per epoch for each data set).
TrainResult train(ControlNet net, const std::vector<GramRecord>& records, const std::vector<TrajPair>& pairs,
                  const TrainConfig& cfg);

/// Full-data l1 and l2 (no gradient).
LossRecord evaluate_losses(const ControlNet& net, const std::vector<GramRecord>& records,
                           const std::vector<TrajPair>& pairs, double zeta);

void write_history_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history);

Json to_json(const ControlArch& arch);
ControlArch control_arch_from_json(const Json& j);
/// {format_version, kind, arch, arch_hash (of the ROM it was trained for), seed, xi}
Json control_checkpoint(const ControlNet& net, const std::string& rom_arch_hash, std::uint64_t seed);
ControlNet control_from_checkpoint(const Json& j, const std::string& expected_rom_hash = {});

}  // namespace paramflow
