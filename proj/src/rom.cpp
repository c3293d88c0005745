#include "paramflow/rom.hpp"

#include "paramflow/random.hpp"

#include <cmath>
#include <numbers>

namespace paramflow {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

using Mat = DenseMatrix;
using ConstMap = Eigen::Map<const DenseMatrix>;

struct ActivationValues {
  Mat s;    // act(a)
  Mat ds;   // act'(a)
  Mat d2s;  // act''(a), only when second derivatives are needed
};

ActivationValues activate(Activation act, const Mat& a, bool second) {
  ActivationValues out;
  if (act == Activation::Tanh) {
    out.s = a.array().tanh().matrix();
    out.ds = (1.0 - out.s.array().square()).matrix();
    if (second) out.d2s = (-2.0 * out.s.array() * out.ds.array()).matrix();
  } else {
    out.s = a.array().max(0.0).matrix();
    out.ds = (a.array() > 0.0).cast<double>().matrix();
    if (second) out.d2s = Mat::Zero(a.rows(), a.cols());
  }
  return out;
}

struct AxisFactor {
  double f = 1.0, df = 0.0, d2f = 0.0;
};

AxisFactor bubble_factor(double x, double lo, double hi) {
  const double len = hi - lo;
  const double c = 4.0 / (len * len);
  return {c * (x - lo) * (hi - x), c * (hi + lo - 2.0 * x), -2.0 * c};
}

// Value, first and second per-axis derivatives of a product of axis factors.
void product_derivatives(const std::vector<AxisFactor>& fac, double& value, DenseVector& d1, DenseVector& d2) {
  const int d = static_cast<int>(fac.size());
  value = 1.0;
  for (const auto& f : fac) value *= f.f;
  d1.resize(d);
  d2.resize(d);
  for (int k = 0; k < d; ++k) {
    double others = 1.0;
    for (int i = 0; i < d; ++i)
      if (i != k) others *= fac[i].f;
    d1(k) = fac[k].df * others;
    d2(k) = fac[k].d2f * others;
  }
}

AxisFactor basis_factor(const BasisFunction& bf, int axis, double x, const Box& box) {
  const int k = bf.index[axis];
  if (bf.kind == BasisFunction::Kind::Sine) {
    const double len = box.hi(axis) - box.lo(axis);
    const double w = k * std::numbers::pi / len;
    const double arg = w * (x - box.lo(axis));
    const double s = std::numbers::sqrt2 * std::sin(arg);
    return {s, std::numbers::sqrt2 * w * std::cos(arg), -w * w * s};
  }
  const double f = std::pow(x, k);
  const double df = k >= 1 ? k * std::pow(x, k - 1) : 0.0;
  const double d2f = k >= 2 ? k * (k - 1) * std::pow(x, k - 2) : 0.0;
  return {f, df, d2f};
}

EvalBatch eval_linear_basis(const RomModel& model, const Eigen::Ref<const DenseMatrix>& xs, EvalFlags need) {
  const RomArch& arch = model.arch();
  const int d = arch.input_dim;
  const Index n = xs.cols();
  const Index m = model.param_count();
  const bool first = need & kGradX;
  const bool second = need & (kLaplacian | kHessDiag);

  Mat phi(m, n);
  std::vector<Mat> dphi, d2phi;
  if (first) dphi.assign(d, Mat(m, n));
  if (second) d2phi.assign(d, Mat(m, n));

  std::vector<AxisFactor> fac(d);
  DenseVector d1, d2;
  for (Index j = 0; j < n; ++j) {
    for (Index b = 0; b < m; ++b) {
      const BasisFunction& bf = arch.basis[static_cast<std::size_t>(b)];
      for (int i = 0; i < d; ++i) fac[i] = basis_factor(bf, i, xs(i, j), arch.domain);
      double v;
      product_derivatives(fac, v, d1, d2);
      phi(b, j) = v;
      for (int k = 0; k < d && first; ++k) dphi[k](b, j) = d1(k);
      for (int k = 0; k < d && second; ++k) d2phi[k](b, j) = d2(k);
    }
  }

  const DenseVector& theta = model.theta();
  EvalBatch out;
  out.value = phi.transpose() * theta;
  out.populated |= kValue;
  if (first) {
    out.grad_x.resize(d, n);
    for (int k = 0; k < d; ++k) out.grad_x.row(k) = (dphi[k].transpose() * theta).transpose();
    out.populated |= kGradX;
  }
  if (second) {
    out.hess_diag.resize(d, n);
    for (int k = 0; k < d; ++k) out.hess_diag.row(k) = (d2phi[k].transpose() * theta).transpose();
    out.laplacian = out.hess_diag.colwise().sum().transpose();
    out.populated |= kLaplacian | kHessDiag;
  }
  if (need & kGradTheta) {
    out.grad_theta = std::move(phi);
    out.populated |= kGradTheta;
  }
  return out;
}

EvalBatch eval_resnet(const RomModel& model, const Eigen::Ref<const DenseMatrix>& xs, EvalFlags need) {
  const RomArch& arch = model.arch();
  const int d = arch.input_dim;
  const int din = arch.net_input_dim();
  const int w = arch.width;
  const int depth = arch.depth;
  const Index n = xs.cols();
  const bool periodic = arch.kind == RomKind::ResNetPeriodic;
  const bool first = need & (kGradX | kLaplacian | kHessDiag);
  const bool second = need & (kLaplacian | kHessDiag);

  const double* th = model.theta().data();
  Index off = 0;
  auto take_matrix = [&](Index rows, Index cols) {
    ConstMap m(th + off, rows, cols);
    off += rows * cols;
    return m;
  };
  auto take_vector = [&](Index len) {
    Eigen::Map<const DenseVector> v(th + off, len);
    off += len;
    return v;
  };

  std::vector<ConstMap> W;
  std::vector<Eigen::Map<const DenseVector>> B;
  W.push_back(take_matrix(w, din));
  B.push_back(take_vector(w));
  for (int l = 1; l < depth; ++l) {
    W.push_back(take_matrix(w, w));
    B.push_back(take_vector(w));
  }
  const Eigen::Map<const DenseVector> head = take_vector(w);
  const Index shift_off = off;

  // Network input and its per-axis derivatives (periodic embedding only).
  Mat zin(din, n);
  Mat cosv, sinv;
  const DenseVector len = arch.domain.extent();
  if (periodic) {
    cosv.resize(d, n);
    sinv.resize(d, n);
    for (int i = 0; i < d; ++i) {
      const double shift = th[shift_off + i];
      for (Index j = 0; j < n; ++j) {
        const double arg = kTwoPi * (xs(i, j) - shift) / len(i);
        cosv(i, j) = std::cos(arg);
        sinv(i, j) = std::sin(arg);
      }
    }
    zin.topRows(d) = cosv;
    zin.bottomRows(d) = sinv;
  } else {
    zin = xs;
  }

  std::vector<Mat> z(depth);
  std::vector<ActivationValues> act(depth);
  {
    Mat a = W[0] * zin;
    a.colwise() += B[0];
    act[0] = activate(arch.activation, a, second);
    z[0] = act[0].s;
  }
  for (int l = 1; l < depth; ++l) {
    Mat a = W[l] * z[l - 1];
    a.colwise() += B[l];
    act[l] = activate(arch.activation, a, second);
    z[l] = z[l - 1] + act[l].s;
  }
  const DenseVector net = (head.transpose() * z[depth - 1]).transpose();

  // Boundary bubble alpha and its per-axis derivatives.
  DenseVector alpha = DenseVector::Ones(n);
  Mat dalpha, d2alpha;
  if (!periodic) {
    dalpha.resize(d, n);
    d2alpha.resize(d, n);
    std::vector<AxisFactor> fac(d);
    DenseVector d1, d2;
    for (Index j = 0; j < n; ++j) {
      for (int i = 0; i < d; ++i) fac[i] = bubble_factor(xs(i, j), arch.domain.lo(i), arch.domain.hi(i));
      double v;
      product_derivatives(fac, v, d1, d2);
      alpha(j) = v;
      dalpha.col(j) = d1;
      d2alpha.col(j) = d2;
    }
  }

  EvalBatch out;
  out.value = alpha.cwiseProduct(net);
  out.populated |= kValue;

  if (first) {
    Mat gx(d, n), hd;
    if (second) hd.resize(d, n);
    for (int k = 0; k < d; ++k) {
      // Direction e_k through the input map.
      Mat dzin = Mat::Zero(din, n), d2zin;
      if (second) d2zin = Mat::Zero(din, n);
      if (periodic) {
        const double c = kTwoPi / len(k);
        dzin.row(k) = -c * sinv.row(k);
        dzin.row(d + k) = c * cosv.row(k);
        if (second) {
          d2zin.row(k) = -c * c * cosv.row(k);
          d2zin.row(d + k) = -c * c * sinv.row(k);
        }
      } else {
        dzin.row(k).setOnes();
      }
      Mat da = W[0] * dzin;
      Mat dz = act[0].ds.cwiseProduct(da);
      Mat d2z;
      if (second) {
        Mat d2a = W[0] * d2zin;
        d2z = act[0].d2s.cwiseProduct(da.cwiseProduct(da)) + act[0].ds.cwiseProduct(d2a);
      }
      for (int l = 1; l < depth; ++l) {
        Mat dal = W[l] * dz;
        Mat dz_next = dz + act[l].ds.cwiseProduct(dal);
        if (second) {
          Mat d2al = W[l] * d2z;
          d2z = d2z + act[l].d2s.cwiseProduct(dal.cwiseProduct(dal)) + act[l].ds.cwiseProduct(d2al);
        }
        dz = std::move(dz_next);
      }
      const DenseVector dnet = (head.transpose() * dz).transpose();
      if (periodic) {
        gx.row(k) = dnet.transpose();
      } else {
        gx.row(k) = (dalpha.row(k).transpose().cwiseProduct(net) + alpha.cwiseProduct(dnet)).transpose();
      }
      if (second) {
        const DenseVector d2net = (head.transpose() * d2z).transpose();
        if (periodic) {
          hd.row(k) = d2net.transpose();
        } else {
          hd.row(k) = (d2alpha.row(k).transpose().cwiseProduct(net) +
                       2.0 * dalpha.row(k).transpose().cwiseProduct(dnet) + alpha.cwiseProduct(d2net))
                          .transpose();
        }
      }
    }
    if (need & kGradX) {
      out.grad_x = std::move(gx);
      out.populated |= kGradX;
    }
    if (second) {
      out.laplacian = hd.colwise().sum().transpose();
      out.hess_diag = std::move(hd);
      out.populated |= kLaplacian | kHessDiag;
    }
  }

  if (need & kGradTheta) {
    const Index m = model.param_count();
    Mat J(m, n);
    auto fill_weight = [&](Index offset, const Mat& g, const Mat& input) {
      const Index rows = g.rows(), cols = input.rows();
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) J.row(offset + r * cols + c) = g.row(r).cwiseProduct(input.row(c));
    };

    // Walk the layout backwards, reusing the forward offsets.
    std::vector<Index> w_off(depth), b_off(depth);
    Index o = 0;
    w_off[0] = o;
    o += static_cast<Index>(w) * din;
    b_off[0] = o;
    o += w;
    for (int l = 1; l < depth; ++l) {
      w_off[l] = o;
      o += static_cast<Index>(w) * w;
      b_off[l] = o;
      o += w;
    }
    const Index head_off = o;

    // dN/dw_L = z_{L-1}; u = alpha N.
    J.middleRows(head_off, w) = z[depth - 1].array().rowwise() * alpha.transpose().array();
    Mat gz = head * alpha.transpose();
    for (int l = depth - 1; l >= 1; --l) {
      Mat ga = gz.cwiseProduct(act[l].ds);
      fill_weight(w_off[l], ga, z[l - 1]);
      J.middleRows(b_off[l], w) = ga;
      gz.noalias() += W[l].transpose() * ga;
    }
    Mat ga0 = gz.cwiseProduct(act[0].ds);
    fill_weight(w_off[0], ga0, zin);
    J.middleRows(b_off[0], w) = ga0;
    if (periodic) {
      const Mat gzin = W[0].transpose() * ga0;
      for (int i = 0; i < d; ++i) {
        const double c = kTwoPi / len(i);
        // d cos(c (x - b)) / db = c sin(.), d sin(c (x - b)) / db = -c cos(.)
        J.row(shift_off + i) = c * (gzin.row(i).cwiseProduct(sinv.row(i)) - gzin.row(d + i).cwiseProduct(cosv.row(i)));
      }
    }
    out.grad_theta = std::move(J);
    out.populated |= kGradTheta;
  }
  return out;
}

}  // namespace

void RomArch::validate() const {
  if (input_dim < 1) throw Error(ErrorCode::InvalidArgument, "rom arch: input_dim >= 1");
  domain.validate();
  if (domain.dim() != input_dim) throw Error(ErrorCode::InvalidArgument, "rom arch: domain dimension mismatch");
  if (kind == RomKind::LinearBasis) {
    if (basis.empty()) throw Error(ErrorCode::InvalidArgument, "rom arch: LinearBasis needs basis functions");
    for (const auto& bf : basis) {
      if (static_cast<int>(bf.index.size()) != input_dim)
        throw Error(ErrorCode::InvalidArgument, "rom arch: basis index length must equal input_dim");
      for (int k : bf.index) {
        if (bf.kind == BasisFunction::Kind::Sine && k < 1)
          throw Error(ErrorCode::InvalidArgument, "rom arch: sine mode numbers must be >= 1");
        if (bf.kind == BasisFunction::Kind::Monomial && k < 0)
          throw Error(ErrorCode::InvalidArgument, "rom arch: monomial powers must be >= 0");
      }
    }
    return;
  }
  if (width < 1) throw Error(ErrorCode::InvalidArgument, "rom arch: width >= 1");
  if (depth < 2) throw Error(ErrorCode::InvalidArgument, "rom arch: depth >= 2");
  if (activation == Activation::Relu && kind != RomKind::ResNetPeriodic)
    throw Error(ErrorCode::InvalidArgument, "rom arch: ReLU is only supported for the periodic ResNet");
}

RomArch RomArch::sine_basis_1d(int modes, Box domain) {
  RomArch arch;
  arch.kind = RomKind::LinearBasis;
  arch.input_dim = 1;
  arch.domain = std::move(domain);
  for (int j = 1; j <= modes; ++j) arch.basis.push_back({BasisFunction::Kind::Sine, {j}});
  return arch;
}

std::vector<ParamBlock> param_layout(const RomArch& arch) {
  arch.validate();
  std::vector<ParamBlock> blocks;
  Index off = 0;
  auto add = [&](std::string name, Index rows, Index cols, Index fan_in, bool weight) {
    blocks.push_back({std::move(name), off, rows, cols, fan_in, weight});
    off += rows * cols;
  };
  if (arch.kind == RomKind::LinearBasis) {
    const Index m = static_cast<Index>(arch.basis.size());
    add("coeff", m, 1, m, true);
    return blocks;
  }
  const int din = arch.net_input_dim();
  add("W0", arch.width, din, din, true);
  add("b0", arch.width, 1, 0, false);
  for (int l = 1; l < arch.depth; ++l) {
    add("W" + std::to_string(l), arch.width, arch.width, arch.width, true);
    add("b" + std::to_string(l), arch.width, 1, 0, false);
  }
  add("w_out", 1, arch.width, arch.width, true);
  if (arch.kind == RomKind::ResNetPeriodic) add("shift", arch.input_dim, 1, 0, false);
  return blocks;
}

Index param_count(const RomArch& arch) {
  const auto blocks = param_layout(arch);
  return blocks.back().offset + blocks.back().size();
}

EvalBundle EvalBatch::at(Index j) const {
  EvalBundle b;
  b.populated = populated;
  if (has(kValue)) b.value = value(j);
  if (has(kGradX)) b.grad_x = grad_x.col(j);
  if (has(kLaplacian)) b.laplacian = laplacian(j);
  if (has(kHessDiag)) b.hess_diag = hess_diag.col(j);
  if (has(kGradTheta)) b.grad_theta = grad_theta.col(j);
  return b;
}

RomModel::RomModel(RomArch arch, DenseVector theta) : arch_(std::move(arch)), theta_(std::move(theta)) {
  if (theta_.size() != paramflow::param_count(arch_))
    throw Error(ErrorCode::InvalidArgument, "rom model: theta length does not match architecture");
  require_finite(theta_, "rom model theta");
}

EvalBatch eval_batch(const RomModel& model, const Eigen::Ref<const DenseMatrix>& xs, EvalFlags need) {
  if (xs.rows() != model.arch().input_dim) throw Error(ErrorCode::InvalidArgument, "eval: point dimension mismatch");
  EvalBatch out = model.arch().kind == RomKind::LinearBasis ? eval_linear_basis(model, xs, need)
                                                             : eval_resnet(model, xs, need);
  if (!out.value.allFinite() || (out.has(kGradTheta) && !out.grad_theta.allFinite()) ||
      (out.has(kGradX) && !out.grad_x.allFinite()) || (out.has(kLaplacian) && !out.laplacian.allFinite()))
    throw Error(ErrorCode::NonFinite, "eval: overflow (theta outside trainable region?)");
  return out;
}

EvalBundle eval(const RomModel& model, const DenseVector& x, EvalFlags need) {
  DenseMatrix xs(x.size(), 1);
  xs.col(0) = x;
  EvalBundle b = eval_batch(model, xs, need).at(0);
  // Fields that were not asked for are reported as zeros.
  const Index d = model.arch().input_dim;
  if (!(need & kGradX)) b.grad_x = DenseVector::Zero(d);
  if (!(need & kLaplacian)) b.laplacian = 0.0;
  if (!(need & kGradTheta)) b.grad_theta = DenseVector::Zero(model.param_count());
  if (!(need & kValue)) b.value = 0.0;
  b.populated &= need;
  return b;
}

double wrapper_alpha(const DenseVector& x, const Box& box) {
  double a = 1.0;
  for (int i = 0; i < box.dim(); ++i) a *= bubble_factor(x(i), box.lo(i), box.hi(i)).f;
  return a;
}

DenseVector wrapper_beta(const DenseVector& x, const DenseVector& shift, const Box& box) {
  const int d = box.dim();
  DenseVector out(2 * d);
  for (int i = 0; i < d; ++i) {
    const double arg = kTwoPi * (x(i) - shift(i)) / (box.hi(i) - box.lo(i));
    out(i) = std::cos(arg);
    out(d + i) = std::sin(arg);
  }
  return out;
}

DenseVector init_params(const RomArch& arch, std::uint64_t seed) {
  const auto blocks = param_layout(arch);
  DenseVector theta = DenseVector::Zero(param_count(arch));
  CounterRng rng(seed, fnv1a("rom.init_params"));
  for (const auto& b : blocks) {
    if (!b.is_weight) continue;
    const double bound = std::sqrt(1.0 / static_cast<double>(b.fan_in));
    for (Index i = 0; i < b.size(); ++i) theta(b.offset + i) = rng.uniform(-bound, bound);
  }
  return theta;
}

}  // namespace paramflow
