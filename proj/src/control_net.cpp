#include "paramflow/control_net.hpp"

#include "paramflow/random.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace paramflow {

namespace {

using ColMatrix = Eigen::MatrixXd;
using ConstMap = Eigen::Map<const DenseMatrix>;
using MutMap = Eigen::Map<DenseMatrix>;

struct Offsets {
  Index U0 = 0, b0 = 0;
  std::vector<Index> U, b, Ub, bb;
  Index W = 0, c = 0, total = 0;
};

Offsets offsets(const ControlArch& a) {
  Offsets o;
  Index at = 0;
  auto take = [&](Index n) {
    const Index here = at;
    at += n;
    return here;
  };
  o.U0 = take(a.width * a.input_dim);
  o.b0 = take(a.width);
  for (Index l = 1; l < a.depth; ++l) {
    o.U.push_back(take(a.width * a.width));
    o.b.push_back(take(a.width));
    o.Ub.push_back(take(a.width * a.input_dim));
    o.bb.push_back(take(a.width));
  }
  o.W = take(a.input_dim * a.width);
  o.c = take(a.input_dim);
  o.total = at;
  return o;
}

ColMatrix normal_cdf_of(const ColMatrix& s) {
  return s.unaryExpr([](double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); });
}

}  // namespace

void ControlArch::validate() const {
  if (input_dim < 1) throw Error(ErrorCode::InvalidArgument, "control arch: input_dim >= 1");
  if (width < 1) throw Error(ErrorCode::InvalidArgument, "control arch: width >= 1");
  if (depth < 2) throw Error(ErrorCode::InvalidArgument, "control arch: depth >= 2");
}

Index param_count(const ControlArch& arch) {
  arch.validate();
  return offsets(arch).total;
}

double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_prime(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

namespace {

// GeLU'(s) = Phi(s) + s phi(s), reusing Phi from the forward pass.
ColMatrix gelu_prime_from(const ColMatrix& s, const ColMatrix& cdf) {
  const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return (cdf.array() + s.array() * (c * (-0.5 * s.array().square()).exp())).matrix();
}

}  // namespace

struct ControlNet::Tape {
  ColMatrix eta0;
  // Per block: gate input S, Phi(S), GeLU(S), tanh branch t, state eta.
  std::vector<ColMatrix> S, cdf, g, t, eta;
  ColMatrix out;
};

ControlNet::ControlNet(ControlArch arch, DenseVector xi) : arch_(std::move(arch)), xi_(std::move(xi)) {
  if (xi_.size() != param_count(arch_)) throw Error(ErrorCode::InvalidArgument, "control net: xi length mismatch");
  require_finite(xi_, "control net: xi");
}

ControlNet ControlNet::initialized(const ControlArch& arch, std::uint64_t seed) {
  const Offsets o = offsets(arch);
  DenseVector xi = DenseVector::Zero(o.total);
  CounterRng rng(seed, fnv1a("control.init_params"));
  auto fill = [&](Index off, Index n, Index fan_in) {
    const double r = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (Index i = 0; i < n; ++i) xi(off + i) = rng.uniform(-r, r);
  };
  fill(o.U0, arch.width * arch.input_dim, arch.input_dim);
  for (std::size_t l = 0; l < o.U.size(); ++l) {
    fill(o.U[l], arch.width * arch.width, arch.width);
    fill(o.Ub[l], arch.width * arch.input_dim, arch.input_dim);
  }
  return ControlNet(arch, std::move(xi));
}

ControlNet::Tape ControlNet::run(const DenseMatrix& thetas) const {
  if (thetas.rows() != arch_.input_dim) throw Error(ErrorCode::InvalidArgument, "control net: theta length mismatch");
  const Offsets o = offsets(arch_);
  const Index w = arch_.width, m = arch_.input_dim;
  const double* x = xi_.data();
  Tape tape;
  const ColMatrix th = thetas;
  tape.eta0 = ((ConstMap(x + o.U0, w, m) * th).colwise() + Eigen::Map<const DenseVector>(x + o.b0, w))
                  .array()
                  .tanh()
                  .matrix();
  const ColMatrix* prev = &tape.eta0;
  const std::size_t blocks = o.U.size();
  tape.S.resize(blocks);
  tape.cdf.resize(blocks);
  tape.g.resize(blocks);
  tape.t.resize(blocks);
  tape.eta.resize(blocks);
  for (std::size_t l = 0; l < blocks; ++l) {
    tape.S[l] = (ConstMap(x + o.Ub[l], w, m) * th).colwise() + Eigen::Map<const DenseVector>(x + o.bb[l], w);
    tape.cdf[l] = normal_cdf_of(tape.S[l]);
    tape.g[l] = tape.S[l].cwiseProduct(tape.cdf[l]);
    tape.t[l] = ((ConstMap(x + o.U[l], w, w) * *prev).colwise() + Eigen::Map<const DenseVector>(x + o.b[l], w))
                    .array()
                    .tanh()
                    .matrix();
    tape.eta[l] = *prev + tape.g[l].cwiseProduct(tape.t[l]);
    prev = &tape.eta[l];
  }
  tape.out = (ConstMap(x + o.W, m, w) * *prev).colwise() + Eigen::Map<const DenseVector>(x + o.c, m);
  if (!tape.out.allFinite()) throw Error(ErrorCode::NonFinite, "control net: forward overflow");
  return tape;
}

DenseVector ControlNet::forward(const DenseVector& theta) const {
  DenseMatrix th(theta.size(), 1);
  th.col(0) = theta;
  return run(th).out.col(0);
}

DenseMatrix ControlNet::forward_batch(const DenseMatrix& thetas) const { return run(thetas).out; }

namespace {

// Reverse pass shared by parameter gradients and theta cotangents.
template <class TapeT>
void reverse(const ControlArch& arch, const DenseVector& xi, const TapeT& tape, const ColMatrix& th,
             const ColMatrix& dV, DenseVector* grad, ColMatrix* dtheta) {
  const Offsets o = offsets(arch);
  const Index w = arch.width, m = arch.input_dim;
  const double* x = xi.data();
  const std::size_t blocks = o.U.size();
  const ColMatrix& last = blocks ? tape.eta[blocks - 1] : tape.eta0;
  if (grad) {
    MutMap(grad->data() + o.W, m, w) += dV * last.transpose();
    grad->segment(o.c, m) += dV.rowwise().sum();
  }
  if (dtheta) dtheta->setZero(m, th.cols());
  ColMatrix deta = ConstMap(x + o.W, m, w).transpose() * dV;
  for (std::size_t k = blocks; k-- > 0;) {
    const ColMatrix& prev = k ? tape.eta[k - 1] : tape.eta0;
    const ColMatrix dS = deta.cwiseProduct(tape.t[k]).cwiseProduct(gelu_prime_from(tape.S[k], tape.cdf[k]));
    const ColMatrix dA =
        deta.cwiseProduct(tape.g[k]).cwiseProduct((1.0 - tape.t[k].array().square()).matrix());
    if (grad) {
      MutMap(grad->data() + o.U[k], w, w) += dA * prev.transpose();
      grad->segment(o.b[k], w) += dA.rowwise().sum();
      MutMap(grad->data() + o.Ub[k], w, m) += dS * th.transpose();
      grad->segment(o.bb[k], w) += dS.rowwise().sum();
    }
    if (dtheta) *dtheta += ConstMap(x + o.Ub[k], w, m).transpose() * dS;
    deta += ConstMap(x + o.U[k], w, w).transpose() * dA;
  }
  const ColMatrix dA0 = deta.cwiseProduct((1.0 - tape.eta0.array().square()).matrix());
  if (grad) {
    MutMap(grad->data() + o.U0, w, m) += dA0 * th.transpose();
    grad->segment(o.b0, w) += dA0.rowwise().sum();
  }
  if (dtheta) *dtheta += ConstMap(x + o.U0, w, m).transpose() * dA0;
}

}  // namespace

void ControlNet::backward_batch(const DenseMatrix& thetas, const DenseMatrix& dV, DenseVector& grad) const {
  forward_backward(thetas, [&](const DenseMatrix&) { return dV; }, grad);
}

DenseMatrix ControlNet::forward_backward(const DenseMatrix& thetas,
                                         const std::function<DenseMatrix(const DenseMatrix&)>& cotangent,
                                         DenseVector& grad) const {
  if (grad.size() != xi_.size()) grad = DenseVector::Zero(xi_.size());
  const Tape tape = run(thetas);
  DenseMatrix V = tape.out;
  const DenseMatrix dV = cotangent(V);
  if (dV.rows() != V.rows() || dV.cols() != V.cols())
    throw Error(ErrorCode::InvalidArgument, "control net: cotangent shape mismatch");
  reverse(arch_, xi_, tape, ColMatrix(thetas), ColMatrix(dV), &grad, nullptr);
  return V;
}

DenseVector ControlNet::vjp(const DenseVector& theta, const DenseVector& wv) const {
  DenseMatrix th(theta.size(), 1);
  th.col(0) = theta;
  const Tape tape = run(th);
  ColMatrix dtheta;
  reverse(arch_, xi_, tape, ColMatrix(th), ColMatrix(wv), nullptr, &dtheta);
  return dtheta.col(0);
}

DenseVector ControlNet::jvp(const DenseVector& theta, const DenseVector& dtheta) const {
  if (dtheta.size() != arch_.input_dim) throw Error(ErrorCode::InvalidArgument, "control net: tangent length");
  DenseMatrix th(theta.size(), 1);
  th.col(0) = theta;
  const Tape tape = run(th);
  const Offsets o = offsets(arch_);
  const Index w = arch_.width, m = arch_.input_dim;
  const double* x = xi_.data();
  Eigen::VectorXd deta =
      (1.0 - tape.eta0.col(0).array().square()).matrix().cwiseProduct(ConstMap(x + o.U0, w, m) * dtheta);
  for (std::size_t k = 0; k < o.U.size(); ++k) {
    const Eigen::VectorXd dS = ConstMap(x + o.Ub[k], w, m) * dtheta;
    const Eigen::VectorXd dg = gelu_prime_from(tape.S[k], tape.cdf[k]).col(0).cwiseProduct(dS);
    const Eigen::VectorXd dt =
        (1.0 - tape.t[k].col(0).array().square()).matrix().cwiseProduct(ConstMap(x + o.U[k], w, w) * deta);
    deta += dg.cwiseProduct(tape.t[k].col(0)) + tape.g[k].col(0).cwiseProduct(dt);
  }
  return ConstMap(x + o.W, m, w) * deta;
}

namespace {

// Column chunk for batched passes; keeps temporaries small and the
// reduction order fixed.
constexpr std::size_t kChunk = 128;

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

LossValue loss_l1(const ControlNet& net, const std::vector<GramRecord>& records,
                  const std::vector<std::size_t>& select) {
  const std::vector<std::size_t> idx = select.empty() ? all_indices(records.size()) : select;
  if (idx.empty()) throw Error(ErrorCode::InvalidArgument, "loss_l1: no records");
  const Index m = net.arch().input_dim;
  const double scale = 1.0 / static_cast<double>(idx.size());
  LossValue out;
  out.grad = DenseVector::Zero(net.xi().size());
  for (std::size_t lo = 0; lo < idx.size(); lo += kChunk) {
    const std::size_t hi = std::min(idx.size(), lo + kChunk);
    const Index B = static_cast<Index>(hi - lo);
    DenseMatrix th(m, B);
    for (Index j = 0; j < B; ++j) {
      const GramRecord& r = records[idx[lo + static_cast<std::size_t>(j)]];
      if (r.theta.size() != m || r.G.rows() != m || r.p.size() != m)
        throw Error(ErrorCode::CacheMismatch, "loss_l1: record dimension differs from the control net");
      th.col(j) = r.theta;
    }
    net.forward_backward(
        th,
        [&](const DenseMatrix& V) {
          DenseMatrix dV(m, B);
          DenseVector res(m);
          for (Index j = 0; j < B; ++j) {
            const GramRecord& r = records[idx[lo + static_cast<std::size_t>(j)]];
            res.noalias() = r.G * V.col(j);
            res -= r.p;
            out.value += res.squaredNorm();
            dV.col(j).noalias() = (2.0 * scale) * (r.G * res);
          }
          return dV;
        },
        out.grad);
  }
  out.value *= scale;
  return out;
}

LossValue loss_l2(const ControlNet& net, const std::vector<TrajPair>& pairs, const std::vector<std::size_t>& select) {
  const std::vector<std::size_t> idx = select.empty() ? all_indices(pairs.size()) : select;
  if (idx.empty()) throw Error(ErrorCode::InvalidArgument, "loss_l2: no pairs");
  const Index m = net.arch().input_dim;
  const double scale = 1.0 / static_cast<double>(idx.size());
  LossValue out;
  out.grad = DenseVector::Zero(net.xi().size());
  for (std::size_t lo = 0; lo < idx.size(); lo += kChunk) {
    const std::size_t hi = std::min(idx.size(), lo + kChunk);
    const Index B = static_cast<Index>(hi - lo);
    DenseMatrix th(m, B), target(m, B);
    for (Index j = 0; j < B; ++j) {
      const TrajPair& p = pairs[idx[lo + static_cast<std::size_t>(j)]];
      if (p.theta.size() != m || p.v.size() != m)
        throw Error(ErrorCode::CacheMismatch, "loss_l2: pair dimension differs from the control net");
      th.col(j) = p.theta;
      target.col(j) = p.v;
    }
    net.forward_backward(
        th,
        [&](const DenseMatrix& V) {
          const DenseMatrix diff = V - target;
          out.value += diff.squaredNorm();
          return DenseMatrix((2.0 * scale) * diff);
        },
        out.grad);
  }
  out.value *= scale;
  return out;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error(ErrorCode::InvalidArgument, "train: lr > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
    throw Error(ErrorCode::InvalidArgument, "train: betas in (0, 1)");
  if (!(adam_eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "train: adam_eps > 0");
  if (!(zeta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "train: zeta >= 0");
  if (batch_size < 0 || plateau_window < 0 || max_steps < 0)
    throw Error(ErrorCode::InvalidArgument, "train: counts must be nonnegative");
}

Adam::Adam(Index n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(DenseVector::Zero(n)), v_(DenseVector::Zero(n)) {}

void Adam::step(DenseVector& params, const DenseVector& grad) {
  if (grad.size() != params.size() || params.size() != m_.size())
    throw Error(ErrorCode::InvalidArgument, "adam: size mismatch");
  ++t_;
  beta1_pow_ *= beta1_;
  beta2_pow_ *= beta2_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 / (1.0 - beta1_pow_);
  const double c2 = 1.0 / (1.0 - beta2_pow_);
  params.array() -= lr_ * (c1 * m_.array()) / ((c2 * v_.array()).sqrt() + eps_);
}

PlateauDetector::PlateauDetector(double stop_loss, double pct, Index window)
    : stop_loss_(stop_loss), pct_(pct), window_(window), decreases_(static_cast<std::size_t>(window), 0.0) {}

bool PlateauDetector::push(double loss) {
  if (loss < stop_loss_) {
    below_ = true;
    return true;
  }
  if (count_ > 0 && window_ > 0) {
    const double dec = last_ > 0.0 ? 100.0 * (last_ - loss) / last_ : 0.0;
    const std::size_t slot = static_cast<std::size_t>((count_ - 1) % window_);
    sum_ += dec - decreases_[slot];
    decreases_[slot] = dec;
    if (count_ >= window_) {
      // Re-sum to keep the running mean free of drift.
      double exact = 0.0;
      for (double d : decreases_) exact += d;
      sum_ = exact;
      if (sum_ / static_cast<double>(window_) < pct_) plateau_ = true;
    }
  }
  last_ = loss;
  ++count_;
  return plateau_;
}

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::TargetLoss: return "target_loss";
    case StopReason::Plateau: return "plateau";
    case StopReason::MaxSteps: return "max_steps";
  }
  return "?";
}

namespace {

class BatchStream {
 public:
  BatchStream(std::size_t n, Index batch, CounterRng& rng) : rng_(rng), order_(all_indices(n)) {
    full_ = batch <= 0 || static_cast<std::size_t>(batch) >= n;
    batch_ = full_ ? n : static_cast<std::size_t>(batch);
    if (!full_) shuffle();
  }

  std::vector<std::size_t> next() {
    if (full_) return order_;
    if (pos_ + batch_ > order_.size()) shuffle();
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return out;
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
    pos_ = 0;
  }

  CounterRng& rng_;
  std::vector<std::size_t> order_;
  std::size_t batch_ = 0, pos_ = 0;
  bool full_ = true;
};

}  // namespace

TrainResult train(ControlNet net, const std::vector<GramRecord>& records, const std::vector<TrajPair>& pairs,
                  const TrainConfig& cfg) {
  cfg.validate();
  const bool use_l2 = cfg.zeta > 0.0 && !pairs.empty();
  if (records.empty() && !use_l2) throw Error(ErrorCode::InvalidArgument, "train: no training data");
  CounterRng rng1(cfg.seed, fnv1a("control.train.gram"));
  CounterRng rng2(cfg.seed, fnv1a("control.train.traj"));
  BatchStream gram_batches(records.size(), cfg.batch_size, rng1);
  BatchStream traj_batches(pairs.size(), cfg.batch_size, rng2);
  Adam adam(net.xi().size(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  PlateauDetector stop(cfg.stop_loss, cfg.stop_plateau_pct, cfg.plateau_window);

  TrainResult result{net, {}, StopReason::MaxSteps};
  DenseVector grad(net.xi().size());
  for (Index step = 0; step < cfg.max_steps; ++step) {
    LossRecord rec;
    rec.step = step;
    grad.setZero();
    if (!records.empty()) {
      LossValue l1 = loss_l1(net, records, gram_batches.next());
      rec.l1 = l1.value;
      grad += l1.grad;
    }
    if (use_l2) {
      LossValue l2 = loss_l2(net, pairs, traj_batches.next());
      rec.l2 = l2.value;
      grad += cfg.zeta * l2.grad;
    }
    rec.total = rec.l1 + cfg.zeta * rec.l2;
    if (!std::isfinite(rec.total) || !grad.allFinite())
      throw Error(ErrorCode::NonFinite, "train: loss diverged at step " + std::to_string(step));
    result.history.push_back(rec);
    if (stop.push(rec.total)) {
      result.reason = stop.below_target() ? StopReason::TargetLoss : StopReason::Plateau;
      break;
    }
    adam.step(net.mutable_xi(), grad);
  }
  result.net = std::move(net);
  return result;
}

LossRecord evaluate_losses(const ControlNet& net, const std::vector<GramRecord>& records,
                           const std::vector<TrajPair>& pairs, double zeta) {
  LossRecord rec;
  const Index m = net.arch().input_dim;
  constexpr std::size_t chunk = kChunk;
  for (std::size_t lo = 0; lo < records.size(); lo += chunk) {
    const std::size_t hi = std::min(records.size(), lo + chunk);
    DenseMatrix th(m, static_cast<Index>(hi - lo));
    for (std::size_t j = lo; j < hi; ++j) th.col(static_cast<Index>(j - lo)) = records[j].theta;
    const DenseMatrix V = net.forward_batch(th);
    for (std::size_t j = lo; j < hi; ++j)
      rec.l1 += (records[j].G * V.col(static_cast<Index>(j - lo)) - records[j].p).squaredNorm();
  }
  if (!records.empty()) rec.l1 /= static_cast<double>(records.size());
  for (std::size_t lo = 0; lo < pairs.size(); lo += chunk) {
    const std::size_t hi = std::min(pairs.size(), lo + chunk);
    DenseMatrix th(m, static_cast<Index>(hi - lo));
    for (std::size_t j = lo; j < hi; ++j) th.col(static_cast<Index>(j - lo)) = pairs[j].theta;
    const DenseMatrix V = net.forward_batch(th);
    for (std::size_t j = lo; j < hi; ++j) rec.l2 += (V.col(static_cast<Index>(j - lo)) - pairs[j].v).squaredNorm();
  }
  if (!pairs.empty()) rec.l2 /= static_cast<double>(pairs.size());
  rec.total = rec.l1 + zeta * rec.l2;
  return rec;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.precision(17);
  out << "step,l1,l2,l_total\n";
  for (const auto& r : history) out << r.step << ',' << r.l1 << ',' << r.l2 << ',' << r.total << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

Json to_json(const ControlArch& arch) {
  return Json{{"input_dim", arch.input_dim}, {"width", arch.width}, {"depth", arch.depth}};
}

ControlArch control_arch_from_json(const Json& j) {
  try {
    ControlArch a{j.at("input_dim").get<Index>(), j.at("width").get<Index>(), j.at("depth").get<Index>()};
    a.validate();
    return a;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("control arch: ") + e.what());
  }
}

Json control_checkpoint(const ControlNet& net, const std::string& rom_arch_hash, std::uint64_t seed) {
  return Json{{"format_version", kFormatVersion},
              {"kind", "control_checkpoint"},
              {"arch", to_json(net.arch())},
              {"arch_hash", rom_arch_hash},
              {"seed", seed},
              {"xi", to_json(net.xi())}};
}

ControlNet control_from_checkpoint(const Json& j, const std::string& expected_rom_hash) {
  if (j.value("format_version", 0) != kFormatVersion || j.value("kind", "") != "control_checkpoint")
    throw Error(ErrorCode::ChecksumMismatch, "not a control checkpoint of this format");
  if (!expected_rom_hash.empty() && j.value("arch_hash", "") != expected_rom_hash)
    throw Error(ErrorCode::ChecksumMismatch, "control checkpoint was trained for a different rom arch");
  return ControlNet(control_arch_from_json(j.at("arch")), vector_from_json(j.at("xi")));
}

}  // namespace paramflow
