// Acceptance runner: `acceptance <n>` checks criterion n (1..9) and prints one
// PASS/FAIL line; `acceptance all` runs every criterion in turn. Exit status is
// nonzero when any requested criterion fails.

#include "paramflow/pipeline.hpp"
#include "paramflow/random.hpp"
#include "paramflow/sampling.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

using namespace paramflow;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double rel(double a, double b, double floor = 1e-3) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}); }

DenseVector gaussian(CounterRng& rng, Index n, double scale = 1.0) {
  DenseVector v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

DenseMatrix random_psd(CounterRng& rng, Index m) {
  DenseMatrix A(m, m);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < m; ++j) A(i, j) = rng.normal();
  return A * A.transpose() / static_cast<double>(m);
}

fs::path work_dir(const std::string& name) {
  const fs::path p = fs::path(PARAMFLOW_BINARY_DIR) / "acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig preset(const std::string& file, const fs::path& out, const std::vector<std::string>& overrides = {}) {
  return load_config(fs::path(PARAMFLOW_SOURCE_DIR) / "configs" / file, overrides, std::nullopt, out);
}

// 1D heat with 8 sine modes under exact Gauss quadrature: the Gram march is
// the recursion theta <- (I + hD) theta and tracks the heat series.
Outcome exact_projection() {
  const int modes = 8;
  const RomArch arch = RomArch::sine_basis_1d(modes);
  DenseVector c(2);
  c << 0.8, -0.45;
  DenseVector theta0 = DenseVector::Zero(modes);
  theta0.head(2) = c / std::sqrt(2.0);  // basis functions are sqrt(2) sin(k pi x)
  MarchOptions opt;
  opt.gauss_nodes = 32;
  opt.ridge_rel = 0.0;
  const double T = 0.1, h = 2e-6;
  const Index n = static_cast<Index>(std::llround(T / h));
  const ParamTrajectory tr = gen_trajectory(arch, theta0, PdeOperator::heat(), n, h, opt);
  if (!tr.completed()) return {false, "march did not complete"};
  double step_err = 0.0;
  for (Index j = 0; j < n; ++j) {
    DenseVector next = tr.thetas[j];
    for (int k = 0; k < modes; ++k) next(k) *= 1.0 - h * std::pow((k + 1) * kPi, 2);
    step_err = std::max(step_err, (tr.thetas[j + 1] - next).cwiseAbs().maxCoeff());
  }
  ErrorOptions eo;
  eo.gauss_nodes = 64;
  const ErrorCurve ec = error_curve(arch, tr, HeatSeries::from_combo(HeatCombo{c}, arch.domain), eo);
  const double worst = ec.max_rel();
  return {step_err < 1e-8 && worst < 1e-4,
          "max per-step deviation " + fmt(step_err) + " (< 1e-8), max rel err " + fmt(worst) + " (< 1e-4) over " +
              std::to_string(n) + " steps"};
}

Json pipeline(const RunConfig& cfg) { return cmd_run(cfg, 1); }

Outcome transport() {
  const RunConfig cfg = preset("transport1d.json", work_dir("transport1d"));
  const Json rep = pipeline(cfg);
  const Json& s = rep["summary"];
  const double mean = s["mean_rel"].get<double>();
  const Index done = s["completed"].get<Index>();
  // Diagnostic only: the same curves in the squared convention ||e||^2 / ||u*||^2.
  const auto sols = load_solutions(cfg);
  const auto refs = load_references(cfg);
  ErrorOptions sq = cfg.eval;
  sq.squared = true;
  double mean_sq = 0.0;
  for (std::size_t i = 0; i < sols.size(); ++i) mean_sq += error_curve(cfg.rom, sols[i].traj, refs[i], sq).mean_rel();
  mean_sq /= static_cast<double>(std::max<std::size_t>(sols.size(), 1));
  return {done == 20 && mean < 0.02 && cfg.control.width <= 128,
          "mean rel L2 err " + fmt(mean) + " (< 0.02) over " + std::to_string(done) + "/20 completed, max " +
              fmt(s["max_rel"].get<double>()) + "; squared convention " + fmt(mean_sq)};
}

Outcome heat_learned() {
  const RunConfig cfg = preset("heat1d.json", work_dir("heat1d"));
  const Json rep = pipeline(cfg);
  const GramCache gc = load_gram_cache(cfg.caches() / "gram.jsonl", arch_hash(cfg.rom));
  const LossRecord loss = evaluate_losses(load_control(cfg), gc.records, {}, cfg.train.zeta);
  const double worst = rep["summary"]["max_rel"].get<double>();
  const Index done = rep["summary"]["completed"].get<Index>();
  return {loss.total < 1e-3 && worst < 0.01 && done == 10,
          "l_total " + fmt(loss.total) + " (< 1e-3), max rel err " + fmt(worst) + " (< 0.01) over " +
              std::to_string(done) + "/10 initials"};
}

Outcome allen_cahn() {
  const RunConfig cfg = preset("allen_cahn2d.json", work_dir("allen_cahn2d"));
  Json rep;
  try {
    rep = pipeline(cfg);
  } catch (const std::exception& e) {
    return {false, std::string("pipeline threw: ") + e.what()};
  }
  const Json& s = rep["summary"];
  const double mean = s["mean_rel"].get<double>();
  const Index done = s["completed"].get<Index>(), escaped = s["escaped"].get<Index>();
  return {done == 5 && mean < 0.10,
          "mean rel L2 err " + fmt(mean) + " (< 0.10) over t in [0, " + fmt(cfg.problem.horizon) + "], " +
              std::to_string(done) + "/5 completed, " + std::to_string(escaped) + " escapes reported"};
}

// Every analytic derivative against central differences, 100 cases each.
Outcome derivatives() {
  CounterRng rng(2024);
  RomArch zb;
  zb.kind = RomKind::ResNetZeroBoundary;
  zb.input_dim = 2;
  zb.width = 8;
  zb.depth = 3;
  zb.domain = Box::symmetric(2);
  RomArch per;
  per.kind = RomKind::ResNetPeriodic;
  per.input_dim = 1;
  per.width = 6;
  per.depth = 3;
  per.domain = Box::unit(1);

  double worst_theta = 0, worst_x = 0, worst_lap = 0;
  for (int c = 0; c < 100; ++c) {
    const RomArch& arch = c % 2 ? per : zb;
    const Index m = param_count(arch);
    const DenseVector theta = init_params(arch, 100 + c) + gaussian(rng, m, 0.3);
    DenseVector x(arch.input_dim);
    for (int k = 0; k < arch.input_dim; ++k) x(k) = arch.domain.lo(k) + rng.uniform(0.05, 0.95) * arch.domain.extent()(k);
    const EvalBundle e = eval(RomModel(arch, theta), x, kValue | kGradX | kLaplacian | kGradTheta);
    const auto u = [&](const DenseVector& th, const DenseVector& y) { return eval(RomModel(arch, th), y, kValue).value; };
    const DenseVector d = gaussian(rng, m);
    const double fd_theta = (u(theta + 1e-6 * d, x) - u(theta - 1e-6 * d, x)) / 2e-6;
    worst_theta = std::max(worst_theta, rel(e.grad_theta.dot(d), fd_theta));
    const DenseVector dx = gaussian(rng, arch.input_dim);
    const double fd_x = (u(theta, x + 1e-6 * dx) - u(theta, x - 1e-6 * dx)) / 2e-6;
    worst_x = std::max(worst_x, rel(e.grad_x.dot(dx), fd_x));
    double lap = 0.0;
    const double hx = 1e-4;
    for (int k = 0; k < arch.input_dim; ++k) {
      const DenseVector ek = DenseVector::Unit(arch.input_dim, k);
      lap += (u(theta, x + hx * ek) - 2 * e.value + u(theta, x - hx * ek)) / (hx * hx);
    }
    worst_lap = std::max(worst_lap, rel(e.laplacian, lap, 1e-2));
  }

  const ControlArch carch{6, 10, 3};
  double worst_l1 = 0, worst_l2 = 0;
  for (int c = 0; c < 100; ++c) {
    const ControlNet net(carch, gaussian(rng, param_count(carch), 0.4));
    std::vector<GramRecord> recs;
    std::vector<TrajPair> pairs;
    for (int j = 0; j < 4; ++j) {
      recs.push_back({gaussian(rng, 6), random_psd(rng, 6), gaussian(rng, 6), 0, 0});
      pairs.push_back({gaussian(rng, 6), gaussian(rng, 6)});
    }
    const DenseVector xi = net.xi(), d = gaussian(rng, xi.size());
    const auto l1 = [&](const DenseVector& z) { return loss_l1(ControlNet(carch, z), recs).value; };
    const auto l2 = [&](const DenseVector& z) { return loss_l2(ControlNet(carch, z), pairs).value; };
    worst_l1 = std::max(worst_l1, rel(loss_l1(net, recs).grad.dot(d), (l1(xi + 1e-6 * d) - l1(xi - 1e-6 * d)) / 2e-6));
    worst_l2 = std::max(worst_l2, rel(loss_l2(net, pairs).grad.dot(d), (l2(xi + 1e-6 * d) - l2(xi - 1e-6 * d)) / 2e-6));
  }
  const double worst = std::max({worst_theta, worst_x, worst_lap, worst_l1, worst_l2});
  return {worst < 1e-4, "max rel err: grad_theta " + fmt(worst_theta) + ", grad_x " + fmt(worst_x) + ", laplacian " +
                            fmt(worst_lap) + ", dl1/dxi " + fmt(worst_l1) + ", dl2/dxi " + fmt(worst_l2) + " (< 1e-4)"};
}

// Linear oracle x' = A x with A = [[-1, 2], [-2, -1]]: x(t) = e^{-t} R(-2t) x0.
DenseVector oracle_exact(const DenseVector& x0, double t) {
  const double c = std::cos(2 * t), s = std::sin(2 * t);
  DenseVector x(2);
  x << c * x0(0) + s * x0(1), -s * x0(0) + c * x0(1);
  return std::exp(-t) * x;
}

Outcome ode_orders() {
  DenseMatrix A(2, 2);
  A << -1, 2, -2, -1;
  const LinearField f(A);
  DenseVector x0(2);
  x0 << 0.6, -1.1;
  const auto slope = [&](Scheme s) {
    std::vector<double> lx, ly;
    for (Index n : {64, 128, 256, 512, 1024}) {  // h <= 1/32: asymptotic regime
      const ParamTrajectory tr = solve_ivp(f, x0, 2.0, n, s);
      lx.push_back(std::log(tr.h));
      ly.push_back(std::log((tr.thetas.back() - oracle_exact(x0, 2.0)).norm()));
    }
    const double n = static_cast<double>(lx.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < lx.size(); ++k) {
      sx += lx[k];
      sy += ly[k];
      sxx += lx[k] * lx[k];
      sxy += lx[k] * ly[k];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
  };
  const double rk4 = slope(Scheme::RK4), euler = slope(Scheme::Euler);

  // Inner bound (h M_V / 2)(e^{L_V t} - 1) with M_V, L_V measured on the exact path and the iterates.
  double worst = -1.0;
  for (Index n : {20, 50, 200}) {
    const ParamTrajectory tr = solve_ivp(f, x0, 2.0, n, Scheme::Euler);
    SampleBatch pts;
    pts.points.resize(2, 2 * (n + 1));
    for (Index k = 0; k <= n; ++k) {
      pts.points.col(2 * k) = oracle_exact(x0, tr.times[k]);
      pts.points.col(2 * k + 1) = tr.thetas[k];
    }
    const FieldStats st = field_stats(f, pts, 3);
    for (Index k = 0; k <= n; ++k) {
      const double err = (tr.thetas[k] - oracle_exact(x0, tr.times[k])).norm();
      worst = std::max(worst, err - euler_inner_bound(st.lip_v, st.max_v, tr.h, tr.times[k]));
    }
  }
  return {std::abs(rk4 - 4.0) <= 0.2 && std::abs(euler - 1.0) <= 0.1 && worst <= 0.0,
          "RK4 slope " + fmt(rk4) + " (4 +- 0.2), Euler slope " + fmt(euler) + " (1 +- 0.1), max(err - inner bound) " +
              fmt(worst) + " (<= 0)"};
}

// Gradient-descent unrolling on psi(w) = w'Gw - 2p'w from w = 0:
// psi(w_K) - psi(v*) <= |v*|^2 / (2 K h) for every K in 1..100.
std::pair<int, double> gd_violations(double h_fraction_max, std::uint64_t seed) {
  CounterRng rng(seed);
  int violations = 0;
  double worst_ratio = 0.0;
  for (int c = 0; c < 200; ++c) {
    const Index m = 2 + static_cast<Index>(rng.uniform(0.0, 7.0));
    GramRecord r{DenseVector::Zero(m), random_psd(rng, m), gaussian(rng, m), 0, 0};
    const double lam = Eigen::SelfAdjointEigenSolver<DenseMatrix>(r.G).eigenvalues().maxCoeff();
    const double h = rng.uniform(1e-3, h_fraction_max) / lam;
    const DenseVector vstar = r.G.completeOrthogonalDecomposition().solve(r.p);
    const double pstar = psi(r.G, r.p, vstar);
    for (int K = 1; K <= 100; ++K) {
      const double gap = psi(r.G, r.p, gd_projection_field(r, K, h)) - pstar;
      const double bound = vstar.squaredNorm() / (2.0 * K * h);
      worst_ratio = std::max(worst_ratio, gap / bound);
      if (gap > bound) ++violations;
    }
  }
  return {violations, worst_ratio};
}

Outcome gd_descent() {
  const auto [stated, ratio] = gd_violations(1.0 - 1e-9, 77);
  const auto [half, ratio_half] = gd_violations(0.5, 77);
  return {stated == 0, std::to_string(stated) + " violations for h in (0, 1/lambda) (max gap/bound " + fmt(ratio) +
                           "); diagnostic: " + std::to_string(half) + " for h in (0, 1/(2 lambda)) (max gap/bound " +
                           fmt(ratio_half) + ")"};
}

// Heat/Fourier run: the empirical error never exceeds
// exp((L_f + B/2 - lambda/C_p) t)(eps0 + eps t) with C_p = 1/pi.
Outcome apriori_bound() {
  const RunConfig cfg = preset("heat1d.json", work_dir("heat_bound"));
  pipeline(cfg);
  const ControlNet net = load_control(cfg);
  const GramCache gc = load_gram_cache(cfg.caches() / "gram.jsonl", arch_hash(cfg.rom));
  const std::vector<Solution> sols = load_solutions(cfg);
  const std::vector<ReferenceSolution> refs = load_references(cfg);
  // eps: the sine basis is orthonormal and closed under the Laplacian, so
  // |G V - p| is the L2 norm of the residual. Measured over the cache and every
  // trajectory state.
  double eps = 0.0;
  for (const auto& r : gc.records) eps = std::max(eps, (r.G * net.forward(r.theta) - r.p).norm());
  const auto quad = gauss_rule(cfg.rom.domain, cfg.gauss_nodes);
  for (const auto& s : sols)
    for (const auto& th : s.traj.thetas) {
      const GramRecord r = assemble(RomModel(cfg.rom, th), cfg.problem.op, quad);
      eps = std::max(eps, (r.G * net.forward(th) - r.p).norm());
    }
  const double Cp = 1.0 / kPi, vol = cfg.rom.domain.volume();
  double worst = -1.0, worst_eps0 = 0.0;
  for (std::size_t i = 0; i < sols.size(); ++i) {
    const double eps0 = sols[i].fit.heldout_rmse * std::sqrt(vol);
    worst_eps0 = std::max(worst_eps0, eps0);
    const ErrorCurve ec = error_curve(cfg.rom, sols[i].traj, refs[i], cfg.eval);
    for (std::size_t k = 0; k < ec.times.size(); ++k) {
      // 1e-12 absorbs rounding when both sides vanish at t = 0
      const double slack = ec.abs_err[k] - theory_bound(cfg.problem.op, Cp, eps0, eps, ec.times[k]) - 1e-12;
      worst = std::max(worst, slack);
    }
  }
  return {worst <= 0.0, "max(err - bound) " + fmt(worst) + " (<= 0) with eps " + fmt(eps) + ", max eps0 " +
                            fmt(worst_eps0) + ", C_p 1/pi over " + std::to_string(sols.size()) + " initials"};
}

// Byte-identical artifacts across thread counts and after an interrupted run.
Outcome determinism() {
  const std::vector<std::string> small = {"counts.n_theta=300", "counts.n_traj=4", "counts.n_t=5", "counts.n_test=4",
                                          "train.max_steps=300"};
  const fs::path root = work_dir("determinism");
  const RunConfig a = preset("heat1d.json", root / "serial", small);
  const RunConfig b = preset("heat1d.json", root / "threaded", small);
  const RunConfig c = preset("heat1d.json", root / "resumed", small);
  cmd_run(a, 1);
  cmd_run(b, 3);
  // interrupted: stop the Gram assembly mid-record, then rerun everything
  cmd_sample_gram(c, 2);
  {
    const fs::path g = c.caches() / "gram.jsonl";
    std::ifstream in(g, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string full = ss.str();
    in.close();
    std::ofstream out(g, std::ios::binary | std::ios::trunc);
    out << full.substr(0, full.size() * 2 / 5);
  }
  cmd_run(c, 2);
  const AssemblyReport again = cmd_sample_gram(c, 2);

  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a.out_dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a.out_dir));
  int differing = 0;
  const auto read = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  std::string which;
  for (const auto& f : files) {
    const std::string ref = read(a.out_dir / f);
    if (ref != read(b.out_dir / f) || ref != read(c.out_dir / f)) {
      ++differing;
      which += " " + f.string();
    }
  }
  return {differing == 0 && again.computed == 0 && files.size() >= 8,
          std::to_string(files.size()) + " artifacts compared across 1/3 threads and a resumed run, " +
              std::to_string(differing) + " differ" + which + "; rerun recomputed " + std::to_string(again.computed)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "exact-projection oracle", exact_projection}, {2, "learned transport operator", transport},
      {3, "learned heat field", heat_learned},          {4, "2D Allen-Cahn end-to-end", allen_cahn},
      {5, "derivative correctness", derivatives},       {6, "ODE solver orders", ode_orders},
      {7, "gradient-descent bound", gd_descent},          {8, "a-priori bound consistency", apriori_bound},
      {9, "determinism and resume", determinism},
  };
  const std::string which = argc > 1 ? argv[1] : "all";
  int failed = 0, ran = 0;
  for (const auto& c : all) {
    if (which != "all" && which != std::to_string(c.id)) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << c.id << " " << (o.pass ? "PASS" : "FAIL") << " [" << c.name << "] " << o.detail << " ("
              << fmt(secs) << " s)" << std::endl;
    if (!o.pass) ++failed;
  }
  if (ran == 0) {
    std::cerr << "usage: acceptance <1..9|all>\n";
    return 2;
  }
  return failed == 0 ? 0 : 1;
}
