#include "paramflow/reference.hpp"

#include "paramflow/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace paramflow {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr double kSlack = 1e-12;

void require_inside(const Box& box, const DenseVector& x) {
  if (!box.contains(x, kSlack)) throw Error(ErrorCode::OutOfDomain, "reference: x outside the domain");
}

double wrap(double x, double lo, double hi) {
  const double len = hi - lo;
  double r = std::fmod(x - lo, len);
  if (r < 0.0) r += len;
  return lo + r;
}

// Orthogonal symmetric DST-I matrix of order n - 1 and the matching
// eigenvalues of the 1D three-point Laplacian with spacing h.
DenseMatrix sine_matrix(Index n) {
  const Index k = n - 1;
  DenseMatrix S(k, k);
  const double c = std::sqrt(2.0 / static_cast<double>(n));
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j)
      S(i, j) = c * std::sin(std::numbers::pi * static_cast<double>((i + 1) * (j + 1)) / static_cast<double>(n));
  return S;
}

DenseVector laplacian_eigs(Index n, double h) {
  DenseVector mu(n - 1);
  for (Index k = 0; k < n - 1; ++k) {
    const double s = std::sin(std::numbers::pi * static_cast<double>(k + 1) / (2.0 * static_cast<double>(n)));
    mu(k) = -4.0 * s * s / (h * h);
  }
  return mu;
}

double grid_eval(const GridSolution& g, const DenseVector& x, double t) {
  if (x.size() != 2) throw Error(ErrorCode::InvalidArgument, "grid solution: x must be 2D");
  require_inside(g.domain, x);
  if (g.times.empty()) throw Error(ErrorCode::OutOfDomain, "grid solution: no snapshots");
  const double t_end = g.times.back();
  if (t < -kSlack || t > t_end + kSlack * std::max(1.0, t_end))
    throw Error(ErrorCode::OutOfDomain, "grid solution: t outside the stored range");
  t = std::clamp(t, 0.0, t_end);

  auto spatial = [&](const DenseMatrix& u) {
    const double h1 = (g.domain.hi(0) - g.domain.lo(0)) / static_cast<double>(g.nx);
    const double h2 = (g.domain.hi(1) - g.domain.lo(1)) / static_cast<double>(g.ny);
    const double s1 = std::clamp((x(0) - g.domain.lo(0)) / h1, 0.0, static_cast<double>(g.nx));
    const double s2 = std::clamp((x(1) - g.domain.lo(1)) / h2, 0.0, static_cast<double>(g.ny));
    const Index i = std::min<Index>(static_cast<Index>(s1), g.nx - 1);
    const Index j = std::min<Index>(static_cast<Index>(s2), g.ny - 1);
    const double a = s1 - static_cast<double>(i), b = s2 - static_cast<double>(j);
    if (a == 0.0 && b == 0.0) return u(i, j);
    return (1 - a) * (1 - b) * u(i, j) + a * (1 - b) * u(i + 1, j) + (1 - a) * b * u(i, j + 1) + a * b * u(i + 1, j + 1);
  };

  const auto it = std::lower_bound(g.times.begin(), g.times.end(), t);
  const std::size_t hi = it == g.times.end() ? g.times.size() - 1 : static_cast<std::size_t>(it - g.times.begin());
  if (g.times[hi] == t || hi == 0) return spatial(g.snapshots[hi]);
  const std::size_t lo = hi - 1;
  const double w = (t - g.times[lo]) / (g.times[hi] - g.times[lo]);
  return (1.0 - w) * spatial(g.snapshots[lo]) + w * spatial(g.snapshots[hi]);
}

}  // namespace

double HeatSeries::rate(const HeatMode& mode) const {
  double r = 0.0;
  for (std::size_t i = 0; i < mode.k.size(); ++i) {
    const double w = mode.k[i] * std::numbers::pi / (domain.hi(static_cast<Index>(i)) - domain.lo(static_cast<Index>(i)));
    r -= w * w;
  }
  return r;
}

HeatSeries HeatSeries::from_combo(const HeatCombo& combo, const Box& domain) {
  validate(InitialSpec{combo}, domain);
  const int d = domain.dim();
  HeatSeries hs;
  hs.domain = domain;
  auto mode = [&](int first, int second) {
    std::vector<int> k(static_cast<std::size_t>(d), 1);
    k[0] = first;
    if (d >= 2) k[1] = second;
    return k;
  };
  const int n = static_cast<int>(combo.c.size());
  if (n > 0 && combo.c(0) != 0.0) hs.modes.push_back({mode(1, 1), combo.c(0)});
  if (n > 1 && combo.c(1) != 0.0) hs.modes.push_back({mode(2, 1), combo.c(1)});
  if (n > 2 && combo.c(2) != 0.0) hs.modes.push_back({mode(1, 2), combo.c(2)});
  if (n > 3 && combo.c(3) != 0.0) hs.modes.push_back({mode(2, 2), combo.c(3)});
  return hs;
}

double eval_reference(const ReferenceSolution& ref, const DenseVector& x, double t) {
  return std::visit(overloaded{
                        [&](const TransportShift& ts) {
                          require_inside(ts.domain, x);
                          DenseVector y(x.size());
                          for (Index i = 0; i < x.size(); ++i)
                            y(i) = wrap(x(i) - ts.velocity(i) * t, ts.domain.lo(i), ts.domain.hi(i));
                          return eval_initial(ts.g, y, ts.domain);
                        },
                        [&](const HeatSeries& hs) {
                          require_inside(hs.domain, x);
                          double u = 0.0;
                          for (const auto& mode : hs.modes) {
                            double term = mode.coeff * std::exp(hs.rate(mode) * t);
                            for (std::size_t i = 0; i < mode.k.size(); ++i) {
                              const Index ii = static_cast<Index>(i);
                              term *= std::sin(mode.k[i] * std::numbers::pi * (x(ii) - hs.domain.lo(ii)) /
                                               (hs.domain.hi(ii) - hs.domain.lo(ii)));
                            }
                            u += term;
                          }
                          return u;
                        },
                        [&](const GridSolution& g) { return grid_eval(g, x, t); },
                    },
                    ref);
}

GridSolution solve_allen_cahn_imex(const InitialSpec& g, const Box& domain, double epsilon, Index nx, Index nt,
                                   double T, Index max_snapshots) {
  if (domain.dim() != 2) throw Error(ErrorCode::InvalidArgument, "imex: 2D domains only");
  if (nx < 16 || nt < 16) throw Error(ErrorCode::InvalidArgument, "imex: nx, nt >= 16");
  if (!(epsilon > 0.0) || !(T > 0.0)) throw Error(ErrorCode::InvalidArgument, "imex: epsilon, T > 0");
  if (max_snapshots < 2) throw Error(ErrorCode::InvalidArgument, "imex: max_snapshots >= 2");
  validate(g, domain);
  GridSolution sol;
  sol.domain = domain;
  sol.nx = sol.ny = nx;
  sol.dt = T / static_cast<double>(nt);
  const double h1 = (domain.hi(0) - domain.lo(0)) / static_cast<double>(nx);
  const double h2 = (domain.hi(1) - domain.lo(1)) / static_cast<double>(nx);

  const DenseMatrix S = sine_matrix(nx);
  const DenseVector mu1 = laplacian_eigs(nx, h1), mu2 = laplacian_eigs(nx, h2);
  const Index k = nx - 1;
  DenseMatrix denom(k, k);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) denom(i, j) = 1.0 - sol.dt * epsilon * (mu1(i) + mu2(j));

  DenseMatrix u(k, k);
  DenseVector x(2);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) {
      x << domain.lo(0) + static_cast<double>(i + 1) * h1, domain.lo(1) + static_cast<double>(j + 1) * h2;
      u(i, j) = eval_initial(g, x, domain);
    }

  auto store = [&](double t) {
    DenseMatrix full = DenseMatrix::Zero(nx + 1, nx + 1);
    full.block(1, 1, k, k) = u;
    sol.times.push_back(t);
    sol.snapshots.push_back(std::move(full));
  };
  const Index stride = (nt + max_snapshots - 2) / (max_snapshots - 1);
  store(0.0);
  for (Index n = 1; n <= nt; ++n) {
    const DenseMatrix rhs = u + sol.dt * (1.5 * (u.array() - u.array().cube())).matrix();
    const DenseMatrix hat = (S * rhs * S).cwiseQuotient(denom);
    u = S * hat * S;
    if (!u.allFinite()) throw Error(ErrorCode::NonFinite, "imex: solution overflow");
    if (n % stride == 0 || n == nt) store(n == nt ? T : static_cast<double>(n) * sol.dt);
  }
  return sol;
}

double ErrorCurve::mean_rel() const {
  double sum = 0.0;
  Index n = 0;
  for (std::size_t i = 0; i < rel_err.size(); ++i)
    if (rel_defined[i]) {
      sum += rel_err[i];
      ++n;
    }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

double ErrorCurve::max_rel() const {
  double mx = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < rel_err.size(); ++i)
    if (rel_defined[i]) mx = std::isnan(mx) ? rel_err[i] : std::max(mx, rel_err[i]);
  return mx;
}

ErrorCurve error_curve(const RomArch& arch, const ParamTrajectory& traj, const ReferenceSolution& ref,
                       const ErrorOptions& opt) {
  const QuadratureRule rule = opt.gauss_nodes > 0
                                  ? gauss_rule(arch.domain, opt.gauss_nodes)
                                  : monte_carlo_rule(sample_omega(arch.domain, opt.n_x, opt.seed).points);
  const double vol = arch.domain.volume();
  ErrorCurve curve;
  curve.n_x = rule.size();
  curve.seed = opt.seed;
  curve.squared = opt.squared;
  DenseVector ustar(rule.size());
  for (std::size_t k = 0; k < traj.thetas.size(); ++k) {
    const double t = traj.times[k];
    const DenseVector u = eval_batch(RomModel(arch, traj.thetas[k]), rule.points, kValue).value;
    for (Index i = 0; i < rule.size(); ++i) ustar(i) = eval_reference(ref, rule.points.col(i), t);
    const double abs2 = vol * rule.weights.dot((u - ustar).cwiseAbs2());
    const double ref2 = vol * rule.weights.dot(ustar.cwiseAbs2());
    const bool defined = std::sqrt(ref2) > 1e-12;
    curve.times.push_back(t);
    curve.abs_err.push_back(opt.squared ? abs2 : std::sqrt(abs2));
    curve.rel_defined.push_back(defined);
    curve.rel_err.push_back(!defined ? std::numeric_limits<double>::quiet_NaN()
                                     : (opt.squared ? abs2 / ref2 : std::sqrt(abs2 / ref2)));
  }
  return curve;
}

void write_error_csv(const std::filesystem::path& path, const ErrorCurve& curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.precision(17);
  out << "t,abs_err,rel_err\n";
  for (std::size_t i = 0; i < curve.times.size(); ++i) {
    out << curve.times[i] << ',' << curve.abs_err[i] << ',';
    if (curve.rel_defined[i]) out << curve.rel_err[i];
    else out << "undefined";
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

void write_slice_csv(const std::filesystem::path& path, const RomModel& model, const ReferenceSolution& ref, double t,
                     Index n_per_axis) {
  const Box& box = model.arch().domain;
  const int d = box.dim();
  if (d > 2) throw Error(ErrorCode::InvalidArgument, "slice: 1D or 2D domains only");
  if (n_per_axis < 2) throw Error(ErrorCode::InvalidArgument, "slice: at least two nodes per axis");
  const Index total = d == 1 ? n_per_axis : n_per_axis * n_per_axis;
  DenseMatrix xs(d, total);
  for (Index k = 0; k < total; ++k)
    for (int i = 0; i < d; ++i) {
      const Index idx = i == 0 ? k / (d == 1 ? 1 : n_per_axis) : k % n_per_axis;
      xs(i, k) = box.lo(i) + (box.hi(i) - box.lo(i)) * static_cast<double>(idx) / static_cast<double>(n_per_axis - 1);
    }
  const DenseVector u = eval_batch(model, xs, kValue).value;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.precision(17);
  out << (d == 1 ? "x1,u_ref,u_rom,abs_diff\n" : "x1,x2,u_ref,u_rom,abs_diff\n");
  for (Index k = 0; k < total; ++k) {
    const double ur = eval_reference(ref, xs.col(k), t);
    for (int i = 0; i < d; ++i) out << xs(i, k) << ',';
    out << ur << ',' << u(k) << ',' << std::abs(u(k) - ur) << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace paramflow
