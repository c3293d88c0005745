#include "paramflow/verify.hpp"

#include "paramflow/assembly.hpp"
#include "paramflow/evolve.hpp"
#include "paramflow/linalg.hpp"
#include "paramflow/pipeline.hpp"
#include "paramflow/random.hpp"
#include "paramflow/reference.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace paramflow {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

// |a - b| relative to max(|a|, |b|, floor).
double rel_diff(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

DenseVector normal_vector(CounterRng& rng, Index n) {
  DenseVector v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

CheckResult rom_gradients(const RomArch& arch, std::uint64_t seed) {
  CounterRng rng(seed, fnv1a("verify.rom_gradients"));
  const Index m = param_count(arch);
  const int d = arch.input_dim;
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    const DenseVector theta = init_params(arch, rng.below(1u << 30)) + 0.3 * normal_vector(rng, m);
    const RomModel model(arch, theta);
    DenseVector x(d);
    for (int k = 0; k < d; ++k) x(k) = arch.domain.lo(k) + (0.1 + 0.8 * rng.uniform()) * arch.domain.extent()(k);
    const EvalBundle e = eval(model, x, kValue | kGradX | kLaplacian | kGradTheta);
    const auto value = [&](const DenseVector& th, const DenseVector& y) { return eval(RomModel(arch, th), y, kValue).value; };

    const DenseVector dir = normal_vector(rng, m);
    const double et = 1e-6;
    worst = std::max(worst, rel_diff(e.grad_theta.dot(dir),
                                     (value(theta + et * dir, x) - value(theta - et * dir, x)) / (2 * et)));
    const double ex = 1e-5, el = 1e-4;
    double lap = 0.0;
    for (int k = 0; k < d; ++k) {
      DenseVector xp = x, xm = x;
      xp(k) += ex;
      xm(k) -= ex;
      worst = std::max(worst, rel_diff(e.grad_x(k), (value(theta, xp) - value(theta, xm)) / (2 * ex)));
      xp = x;
      xm = x;
      xp(k) += el;
      xm(k) -= el;
      lap += (value(theta, xp) - 2 * e.value + value(theta, xm)) / (el * el);
    }
    worst = std::max(worst, rel_diff(e.laplacian, lap, 1e-2));
  }
  return {"rom_gradients", worst < 1e-4, "worst relative difference " + fmt(worst) + " over 20 cases"};
}

CheckResult control_gradients(std::uint64_t seed) {
  CounterRng rng(seed, fnv1a("verify.control_gradients"));
  const Index m = 5;
  const ControlArch arch{m, 8, 3};
  ControlNet net(arch, 0.5 * normal_vector(rng, param_count(arch)));
  std::vector<GramRecord> recs;
  std::vector<TrajPair> pairs;
  for (int j = 0; j < 6; ++j) {
    const DenseMatrix A = DenseMatrix::NullaryExpr(m, m, [&] { return rng.normal(); });
    recs.push_back({normal_vector(rng, m), A * A.transpose() / m, normal_vector(rng, m), 0, 0});
    pairs.push_back({normal_vector(rng, m), normal_vector(rng, m)});
  }
  double worst = 0.0;
  const double e = 1e-6;
  for (int c = 0; c < 10; ++c) {
    const DenseVector dir = normal_vector(rng, net.xi().size());
    const DenseVector xi = net.xi();
    for (int which = 0; which < 2; ++which) {
      const auto loss = [&](const DenseVector& z) {
        ControlNet n(arch, z);
        return which == 0 ? loss_l1(n, recs).value : loss_l2(n, pairs).value;
      };
      const LossValue lv = which == 0 ? loss_l1(net, recs) : loss_l2(net, pairs);
      worst = std::max(worst, rel_diff(lv.grad.dot(dir), (loss(xi + e * dir) - loss(xi - e * dir)) / (2 * e)));
    }
  }
  return {"control_gradients", worst < 1e-4, "worst relative difference " + fmt(worst) + " over 20 cases"};
}

// theta' = A theta with A = [[-1, 2], [-2, -1]]; exact flow e^{-t} R(-2t).
DenseVector rotation_exact(const DenseVector& x0, double t) {
  const double c = std::cos(2 * t), s = std::sin(2 * t);
  DenseVector x(2);
  x << c * x0(0) + s * x0(1), -s * x0(0) + c * x0(1);
  return std::exp(-t) * x;
}

double observed_order(Scheme scheme) {
  DenseMatrix A(2, 2);
  A << -1, 2, -2, -1;
  const LinearField f(A);
  DenseVector x0(2);
  x0 << 1.0, 0.5;
  std::vector<double> errs;
  for (Index n : {20, 40, 80, 160}) {
    const ParamTrajectory tr = solve_ivp(f, x0, 1.0, n, scheme);
    errs.push_back((tr.thetas.back() - rotation_exact(x0, 1.0)).norm());
  }
  // Least-squares slope of log err against log h.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < errs.size(); ++k) {
    const double lx = std::log(1.0 / (20.0 * std::pow(2.0, static_cast<double>(k))));
    const double ly = std::log(errs[k]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = static_cast<double>(errs.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

CheckResult ode_orders() {
  const double rk4 = observed_order(Scheme::RK4);
  const double euler = observed_order(Scheme::Euler);
  const bool ok = std::abs(rk4 - 4.0) <= 0.2 && std::abs(euler - 1.0) <= 0.1;
  return {"ode_orders", ok, "RK4 slope " + fmt(rk4) + ", Euler slope " + fmt(euler)};
}

CheckResult euler_bound_check(std::uint64_t seed) {
  DenseMatrix A(2, 2);
  A << -1, 2, -2, -1;
  const LinearField f(A);
  DenseVector x0(2);
  x0 << 1.0, 0.5;
  const double T = 1.0;
  const Index n = 50;
  const ParamTrajectory tr = solve_ivp(f, x0, T, n, Scheme::Euler);
  // Stats over the exact path and the Euler iterates.
  SampleBatch pts;
  pts.points.resize(2, 2 * (n + 1));
  for (Index k = 0; k <= n; ++k) {
    pts.points.col(2 * k) = rotation_exact(x0, tr.times[k]);
    pts.points.col(2 * k + 1) = tr.thetas[k];
  }
  const FieldStats st = field_stats(f, pts, seed);
  double worst = -1.0;
  for (Index k = 0; k <= n; ++k) {
    const double err = (tr.thetas[k] - rotation_exact(x0, tr.times[k])).norm();
    worst = std::max(worst, err - euler_inner_bound(st.lip_v, st.max_v, tr.h, tr.times[k]));
  }
  return {"euler_bound", worst <= 0.0, "max(error - bound) " + fmt(worst) + " with L_V " + fmt(st.lip_v) +
                                           ", M_V " + fmt(st.max_v)};
}

CheckResult gram_oracle() {
  const int modes = 4;
  const RomArch arch = RomArch::sine_basis_1d(modes);
  DenseVector theta(modes);
  theta << 0.3, -1.2, 0.7, 0.05;
  const GramRecord r = assemble(RomModel(arch, theta), PdeOperator::heat(), gauss_rule(arch.domain, 24));
  DenseVector p(modes);
  for (int k = 0; k < modes; ++k) p(k) = -std::pow((k + 1) * kPi, 2) * theta(k);
  // The sine basis is orthonormal for the domain average: G = I, p = D theta.
  const double eg = (r.G - DenseMatrix::Identity(modes, modes)).cwiseAbs().maxCoeff();
  const double ep = (r.p - p).cwiseAbs().maxCoeff() / p.cwiseAbs().maxCoeff();
  return {"gram_oracle", eg < 1e-12 && ep < 1e-12, "G error " + fmt(eg) + ", relative p error " + fmt(ep)};
}

CheckResult projection_recursion() {
  const int modes = 8;
  const RomArch arch = RomArch::sine_basis_1d(modes);
  DenseVector theta0(modes);
  for (int k = 0; k < modes; ++k) theta0(k) = 1.0 / (k + 1);
  const double h = 1e-4;
  const Index n_t = 50;
  MarchOptions opt;
  opt.gauss_nodes = 32;
  opt.ridge_rel = 0.0;
  const ParamTrajectory tr = gen_trajectory(arch, theta0, PdeOperator::heat(), n_t, h, opt);
  DenseVector th = theta0;
  double worst = 0.0;
  for (Index j = 0; j <= n_t && j < static_cast<Index>(tr.thetas.size()); ++j) {
    worst = std::max(worst, (tr.thetas[j] - th).cwiseAbs().maxCoeff());
    for (int k = 0; k < modes; ++k) th(k) *= 1.0 - h * std::pow((k + 1) * kPi, 2);
  }
  const bool ok = tr.completed() && worst < 1e-8;
  return {"projection_recursion", ok, "max deviation from (I + hD) recursion " + fmt(worst)};
}

// Gradient descent on psi from zero: psi(w_K) - psi(v*) <= |v*|^2 / (2 K h).
// The guarantee needs h below 1 / Lip(grad psi) = 1 / (2 lambda_max); the
// wider range (0, 1 / lambda_max) is reported separately.
CheckResult gd_descent(std::uint64_t seed) {
  CounterRng rng(seed, fnv1a("verify.gd_descent"));
  Index viol_safe = 0, viol_wide = 0, cases = 0;
  for (int c = 0; c < 200; ++c) {
    const Index m = 2 + static_cast<Index>(rng.below(7));
    const DenseMatrix A = DenseMatrix::NullaryExpr(m, m, [&] { return rng.normal(); });
    GramRecord r{DenseVector::Zero(m), A * A.transpose() / m, normal_vector(rng, m), 0, 0};
    const double lam = sym_eig_max(r.G);
    const DenseVector vstar = ridge_solve(r.G, r.p, 0.0);
    const double best = psi(r.G, r.p, vstar);
    for (int wide = 0; wide < 2; ++wide) {
      const double h = (wide ? 1.0 / lam : 0.5 / lam) * (0.02 + 0.96 * rng.uniform());
      DenseVector w = DenseVector::Zero(m);
      for (int K = 1; K <= 100; ++K) {
        w -= 2.0 * h * (r.G * w - r.p);
        const double gap = psi(r.G, r.p, w) - best;
        const double bound = vstar.squaredNorm() / (2.0 * K * h);
        if (gap > bound * (1 + 1e-10) + 1e-12) ++(wide ? viol_wide : viol_safe);
        ++cases;
      }
    }
  }
  return {"gd_descent", viol_safe == 0,
          std::to_string(viol_safe) + " violations for h < 1/(2 lambda_max); " + std::to_string(viol_wide) +
              " for h < 1/lambda_max (not guaranteed)"};
}

// Heat run with an initial outside the two-mode span and the exact linear
// field: the L2 error must stay under the a-priori bound with C_p = 1/pi.
CheckResult heat_bound(std::uint64_t seed) {
  const RomArch arch = RomArch::sine_basis_1d(2);
  const Closure g{[](const DenseVector& x) { return 4.0 * x(0) * (1.0 - x(0)); }, "parabola"};
  HeatSeries series;
  series.domain = arch.domain;
  for (int k = 1; k < 400; k += 2) series.modes.push_back({{k}, 32.0 / std::pow(k * kPi, 3)});
  FitOptions fo;
  fo.n_x = 2000;
  fo.seed = seed;
  const FitResult fit = fit_initial(arch, g, fo);
  DenseMatrix D = DenseMatrix::Zero(2, 2);
  D(0, 0) = -kPi * kPi;
  D(1, 1) = -4 * kPi * kPi;
  const LinearField field(D);
  const ParamTrajectory tr = solve_ivp(field, fit.theta, 0.1, 200, Scheme::RK4);
  ErrorOptions eo;
  eo.gauss_nodes = 64;
  const ErrorCurve ec = error_curve(arch, tr, series, eo);
  const double eps0 = ec.abs_err.front();
  const double eps = 0.0;  // the field is the exact projection
  double worst = -1.0;
  for (std::size_t k = 0; k < ec.times.size(); ++k)
    worst = std::max(worst, ec.abs_err[k] - theory_bound(PdeOperator::heat(), 1.0 / kPi, eps0, eps, ec.times[k]) *
                                                (1.0 + 1e-12));
  return {"heat_bound", worst <= 0.0, "eps0 " + fmt(eps0) + ", max(error - bound) " + fmt(worst)};
}

CheckResult determinism(const RunConfig& cfg, int threads, const fs::path& dir) {
  fs::create_directories(dir);
  const SampleBatch thetas = sample_theta(ThetaBox{param_count(cfg.rom), 0.5}, 24, derive_seed(cfg.seed, "verify.theta"));
  AssemblyOptions opt;
  opt.n_x = 64;
  opt.seed = cfg.seed;
  opt.threads = 1;
  const fs::path a = dir / "gram_serial.jsonl", b = dir / "gram_threaded.jsonl", c = dir / "gram_resumed.jsonl";
  for (const auto& p : {a, b, c}) fs::remove(p);
  assemble_batch(cfg.rom, thetas, cfg.problem.op, opt, a);
  opt.threads = std::max(threads, 3);
  assemble_batch(cfg.rom, thetas, cfg.problem.op, opt, b);
  const std::string sa = slurp(a), sb = slurp(b);

  // Interrupted run: keep half the file (cutting a record mid-line), resume.
  {
    std::ofstream out(c, std::ios::binary);
    out << sa.substr(0, sa.size() / 2);
  }
  const AssemblyReport rep = assemble_batch(cfg.rom, thetas, cfg.problem.op, opt, c);
  const std::string sc = slurp(c);
  const AssemblyReport again = assemble_batch(cfg.rom, thetas, cfg.problem.op, opt, c);

  // Training history and error CSVs from identical inputs.
  const GramCache gc = load_gram_cache(a);
  TrainConfig tc = cfg.train;
  tc.max_steps = 20;
  tc.batch_size = 8;
  const ControlArch carch{param_count(cfg.rom), 8, 2};
  std::string hist[2], curve[2];
  for (int k = 0; k < 2; ++k) {
    const TrainResult tr = train(ControlNet::initialized(carch, cfg.seed), gc.records, {}, tc);
    const fs::path hp = dir / ("history_" + std::to_string(k) + ".csv");
    write_history_csv(hp, tr.history);
    hist[k] = slurp(hp);
    const NetField f(tr.net);
    const ParamTrajectory traj = solve_ivp(f, thetas.point(0), 0.1, 10, Scheme::RK4);
    ErrorOptions eo;
    eo.n_x = 200;
    eo.seed = cfg.seed;
    const TransportShift self{RandomTheta{RomModel(cfg.rom, thetas.point(0)), 0}, DenseVector::Zero(cfg.rom.input_dim),
                              cfg.rom.domain};
    const fs::path cp = dir / ("curve_" + std::to_string(k) + ".csv");
    write_error_csv(cp, error_curve(cfg.rom, traj, self, eo));
    curve[k] = slurp(cp);
  }
  const bool ok = sa == sb && sa == sc && again.computed == 0 && rep.reused > 0 && hist[0] == hist[1] &&
                  curve[0] == curve[1];
  std::string detail = "threads " + std::string(sa == sb ? "identical" : "DIFFER") + ", resume " +
                       (sa == sc ? "identical" : "DIFFERS") + " (" + std::to_string(rep.reused) + " reused, " +
                       std::to_string(rep.computed) + " recomputed), rerun computed " +
                       std::to_string(again.computed) + ", CSVs " +
                       (hist[0] == hist[1] && curve[0] == curve[1] ? "identical" : "DIFFER");
  return {"determinism", ok, detail};
}

CheckResult artifact_guard(const RunConfig& cfg) {
  RunConfig other = cfg;
  other.rom.width += 1;
  if (other.rom.kind == RomKind::LinearBasis) other.rom = RomArch::sine_basis_1d(7, cfg.rom.domain);
  const Json h = artifact_header(other, "solutions");
  try {
    check_header(h, cfg, "solutions");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ChecksumMismatch) return {"artifact_guard", true, "mismatched arch_hash rejected"};
  }
  return {"artifact_guard", false, "mismatched arch_hash accepted"};
}

}  // namespace

bool VerifyReport::passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return !checks.empty();
}

Json VerifyReport::to_json() const {
  Json arr = Json::array();
  for (const auto& c : checks) arr.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return {{"passed", passed()}, {"checks", arr}};
}

VerifyReport run_verify(const RunConfig& cfg, int threads, const fs::path& scratch) {
  VerifyReport rep;
  const auto guarded = [&](const char* name, auto&& fn) {
    try {
      rep.checks.push_back(fn());
    } catch (const std::exception& e) {
      rep.checks.push_back({name, false, std::string("threw: ") + e.what()});
    }
  };
  const std::uint64_t s = derive_seed(cfg.seed, "verify");
  guarded("rom_gradients", [&] { return rom_gradients(cfg.rom, s); });
  guarded("control_gradients", [&] { return control_gradients(s); });
  guarded("ode_orders", [&] { return ode_orders(); });
  guarded("euler_bound", [&] { return euler_bound_check(s); });
  guarded("gram_oracle", [&] { return gram_oracle(); });
  guarded("projection_recursion", [&] { return projection_recursion(); });
  guarded("gd_descent", [&] { return gd_descent(s); });
  guarded("heat_bound", [&] { return heat_bound(s); });
  guarded("determinism", [&] { return determinism(cfg, threads, scratch); });
  guarded("artifact_guard", [&] { return artifact_guard(cfg); });
  std::error_code ec;
  fs::remove_all(scratch, ec);
  return rep;
}

}  // namespace paramflow
