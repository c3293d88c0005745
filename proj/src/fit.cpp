#include "paramflow/fit.hpp"

#include "paramflow/linalg.hpp"
#include "paramflow/random.hpp"
#include "paramflow/sampling.hpp"

#include <cmath>
#include <numbers>

namespace paramflow {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double s(int k, double x, double lo, double len) { return std::sin(k * std::numbers::pi * (x - lo) / len); }

double heat_combo(const HeatCombo& h, const DenseVector& x, const Box& box) {
  const Index d = x.size();
  auto sk = [&](Index i, int k) { return s(k, x(i), box.lo(i), box.hi(i) - box.lo(i)); };
  double base = 1.0;
  for (Index i = 0; i < d; ++i) base *= sk(i, 1);
  double out = h.c(0) * base;
  if (h.c.size() > 1 && h.c(1) != 0.0) {
    double g = sk(0, 2);
    for (Index i = 1; i < d; ++i) g *= sk(i, 1);
    out += h.c(1) * g;
  }
  if (d >= 2) {
    if (h.c.size() > 2 && h.c(2) != 0.0) {
      double g = sk(1, 2);
      for (Index i = 0; i < d; ++i)
        if (i != 1) g *= sk(i, 1);
      out += h.c(2) * g;
    }
    if (h.c.size() > 3 && h.c(3) != 0.0) {
      double g = sk(0, 2) * sk(1, 2);
      for (Index i = 2; i < d; ++i) g *= sk(i, 1);
      out += h.c(3) * g;
    }
  }
  return out;
}

}  // namespace

RandomTheta RandomTheta::draw(const RomArch& arch, double half_width, std::uint64_t seed) {
  const SampleBatch b = sample_theta(ThetaBox{param_count(arch), half_width}, 1, seed);
  return RandomTheta{RomModel(arch, b.point(0)), seed};
}

ChebCombo ChebCombo::draw(int max_degree, int max_terms, std::uint64_t seed) {
  if (max_degree < 0 || max_degree > 6 || max_terms < 1 || max_terms > 36)
    throw Error(ErrorCode::InvalidArgument, "cheb combo: degree in 0..6, terms in 1..36");
  CounterRng rng(seed, fnv1a("fit.cheb_combo"));
  ChebCombo out;
  const auto n = 1 + rng.below(static_cast<std::uint64_t>(max_terms));
  for (std::uint64_t k = 0; k < n; ++k) {
    ChebTerm t;
    t.i = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_degree) + 1));
    t.j = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_degree) + 1));
    t.c = rng.uniform(-1.0, 1.0);
    out.terms.push_back(t);
  }
  return out;
}

double chebyshev(int n, double x) {
  if (n == 0) return 1.0;
  double t0 = 1.0, t1 = x;
  for (int k = 1; k < n; ++k) {
    const double t2 = 2.0 * x * t1 - t0;
    t0 = t1;
    t1 = t2;
  }
  return t1;
}

void validate(const InitialSpec& spec, const Box& domain) {
  std::visit(overloaded{
                 [&](const RandomTheta& r) {
                   if (!(r.model.arch().domain == domain))
                     throw Error(ErrorCode::InvalidArgument, "random theta: domain differs from the problem");
                 },
                 [&](const HeatCombo& h) {
                   if (h.c.size() < 1 || h.c.size() > 4)
                     throw Error(ErrorCode::InvalidArgument, "heat combo: 1 to 4 coefficients");
                   if ((h.c.array().abs() > 1.0).any())
                     throw Error(ErrorCode::InvalidArgument, "heat combo: |c_i| <= 1");
                   if (domain.dim() == 1 && h.c.size() > 2 && (h.c.tail(h.c.size() - 2).array() != 0.0).any())
                     throw Error(ErrorCode::InvalidArgument, "heat combo: g_3, g_4 need d >= 2");
                 },
                 [&](const ChebCombo& c) {
                   if (domain.dim() != 2) throw Error(ErrorCode::InvalidArgument, "cheb combo: d = 2 only");
                   if (c.terms.empty() || c.terms.size() > 36)
                     throw Error(ErrorCode::InvalidArgument, "cheb combo: 1 to 36 terms");
                   for (const auto& t : c.terms)
                     if (t.i < 0 || t.i > 6 || t.j < 0 || t.j > 6 || std::abs(t.c) > 1.0)
                       throw Error(ErrorCode::InvalidArgument, "cheb combo: degrees <= 6, |c| <= 1");
                 },
                 [&](const Closure& c) {
                   if (!c.g) throw Error(ErrorCode::InvalidArgument, "closure: empty callable");
                 },
             },
             spec);
}

double eval_initial(const InitialSpec& spec, const DenseVector& x, const Box& domain) {
  return std::visit(overloaded{
                        [&](const RandomTheta& r) { return eval(r.model, x, kValue).value; },
                        [&](const HeatCombo& h) { return heat_combo(h, x, domain); },
                        [&](const ChebCombo& c) {
                          double sum = 0.0;
                          for (const auto& t : c.terms) sum += t.c * chebyshev(t.i, x(0)) * chebyshev(t.j, x(1));
                          return (1.0 - x(0) * x(0)) * (1.0 - x(1) * x(1)) * sum;
                        },
                        [&](const Closure& c) { return c.g(x); },
                    },
                    spec);
}

DenseVector eval_initial_batch(const InitialSpec& spec, const DenseMatrix& xs, const Box& domain) {
  if (const auto* r = std::get_if<RandomTheta>(&spec)) return eval_batch(r->model, xs, kValue).value;
  DenseVector out(xs.cols());
  for (Index j = 0; j < xs.cols(); ++j) out(j) = eval_initial(spec, xs.col(j), domain);
  return out;
}

double rmse(const RomModel& model, const InitialSpec& spec, const DenseMatrix& xs) {
  const DenseVector u = eval_batch(model, xs, kValue).value;
  const DenseVector g = eval_initial_batch(spec, xs, model.arch().domain);
  return std::sqrt((u - g).squaredNorm() / static_cast<double>(xs.cols()));
}

namespace {

struct Objective {
  const RomArch& arch;
  const DenseMatrix& xs;
  const DenseVector& g;

  // Residual u - g and its theta-Jacobian (m x N).
  void residual(const DenseVector& theta, DenseVector& r, DenseMatrix* J) const {
    const EvalBatch b = eval_batch(RomModel(arch, theta), xs, J ? (kValue | kGradTheta) : kValue);
    r = b.value - g;
    if (J) *J = b.grad_theta;
  }
  double rmse_of(const DenseVector& r) const { return std::sqrt(r.squaredNorm() / static_cast<double>(r.size())); }
};

FitResult fit_linear(const Objective& obj) {
  const Index m = param_count(obj.arch);
  DenseVector r;
  DenseMatrix J;
  obj.residual(DenseVector::Zero(m), r, &J);
  const double n = static_cast<double>(obj.xs.cols());
  const DenseMatrix G = (J * J.transpose()) / n;
  const DenseVector b = (J * obj.g) / n;
  FitResult res;
  try {
    res.theta = ridge_solve(G, b, 0.0);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::FactorizationFailure) throw;
    res.theta = ridge_solve(G, b);
  }
  obj.residual(res.theta, r, nullptr);
  res.train_rmse = obj.rmse_of(r);
  res.steps = 1;
  return res;
}

FitResult fit_adam(const Objective& obj, DenseVector theta, const FitOptions& opt) {
  const TrainConfig& cfg = opt.train;
  Adam adam(theta.size(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  FitResult best;
  best.theta = theta;
  best.train_rmse = std::numeric_limits<double>::infinity();
  DenseVector r;
  DenseMatrix J;
  const double n = static_cast<double>(obj.xs.cols());
  for (Index step = 0; step <= cfg.max_steps; ++step) {
    obj.residual(theta, r, &J);
    const double e = obj.rmse_of(r);
    if (!std::isfinite(e)) break;
    if (e < best.train_rmse) {
      best.train_rmse = e;
      best.theta = theta;
      best.steps = step;
    }
    if (e <= opt.eps0_target || step == cfg.max_steps) break;
    const DenseVector grad = (2.0 / n) * (J * r);
    adam.step(theta, grad);
  }
  return best;
}

FitResult fit_lm(const Objective& obj, DenseVector theta, const FitOptions& opt) {
  DenseVector r, r_try;
  DenseMatrix J;
  obj.residual(theta, r, &J);
  FitResult best;
  best.theta = theta;
  best.train_rmse = obj.rmse_of(r);
  double mu = -1.0;
  for (Index it = 0; it < opt.lm_max_iter && best.train_rmse > opt.eps0_target; ++it) {
    const DenseMatrix JJ = J * J.transpose();
    const DenseVector rhs = -(J * r);
    if (mu < 0.0) mu = 1e-3 * JJ.trace() / static_cast<double>(JJ.rows());
    bool accepted = false;
    for (int tries = 0; tries < 30 && !accepted; ++tries) {
      DenseVector step;
      try {
        step = ridge_solve(JJ, rhs, mu);
      } catch (const Error&) {
        mu *= 4.0;
        continue;
      }
      const DenseVector trial = theta + step;
      try {
        obj.residual(trial, r_try, nullptr);
      } catch (const Error&) {
        mu *= 4.0;
        continue;
      }
      if (r_try.allFinite() && r_try.squaredNorm() < r.squaredNorm()) {
        theta = trial;
        mu = std::max(mu / 3.0, 1e-15);
        accepted = true;
      } else {
        mu *= 4.0;
      }
    }
    if (!accepted) break;
    obj.residual(theta, r, &J);
    best.theta = theta;
    best.train_rmse = obj.rmse_of(r);
    best.steps = it + 1;
  }
  return best;
}

}  // namespace

FitResult fit_initial(const RomArch& arch, const InitialSpec& spec, const FitOptions& opt) {
  arch.validate();
  validate(spec, arch.domain);
  if (!(opt.eps0_target > 0.0)) throw Error(ErrorCode::InvalidArgument, "fit_initial: eps0_target > 0");
  if (opt.n_x < 1) throw Error(ErrorCode::InvalidArgument, "fit_initial: n_x >= 1");
  const SampleBatch train = sample_omega(arch.domain, opt.n_x, derive_seed(opt.seed, "fit.train"));
  const SampleBatch held = sample_omega(arch.domain, opt.n_x, derive_seed(opt.seed, "fit.heldout"));

  FitResult res;
  const auto* random = std::get_if<RandomTheta>(&spec);
  if (random && random->model.arch().kind == arch.kind && arch_hash(random->model.arch()) == arch_hash(arch)) {
    res.theta = random->model.theta();
    res.train_rmse = 0.0;
  } else {
    const DenseVector g = eval_initial_batch(spec, train.points, arch.domain);
    const Objective obj{arch, train.points, g};
    if (arch.kind == RomKind::LinearBasis) {
      res = fit_linear(obj);
    } else {
      DenseVector theta0 = opt.warm_start ? *opt.warm_start : init_params(arch, derive_seed(opt.seed, "fit.init"));
      if (theta0.size() != param_count(arch)) throw Error(ErrorCode::InvalidArgument, "fit_initial: warm start length");
      res = opt.method == FitMethod::Adam ? fit_adam(obj, std::move(theta0), opt)
                                          : fit_lm(obj, std::move(theta0), opt);
    }
  }
  res.heldout_rmse = rmse(RomModel(arch, res.theta), spec, held.points);
  res.reached = res.heldout_rmse <= opt.eps0_target;
  return res;
}

Json to_json(const InitialSpec& spec) {
  return std::visit(overloaded{
                        [](const RandomTheta& r) {
                          return Json{{"kind", "random_theta"},
                                      {"arch", to_json(r.model.arch())},
                                      {"seed", r.seed},
                                      {"theta", to_json(r.model.theta())}};
                        },
                        [](const HeatCombo& h) { return Json{{"kind", "heat_combo"}, {"c", to_json(h.c)}}; },
                        [](const ChebCombo& c) {
                          Json terms = Json::array();
                          for (const auto& t : c.terms) terms.push_back(Json::array({t.i, t.j, t.c}));
                          return Json{{"kind", "cheb_combo"}, {"terms", terms}};
                        },
                        [](const Closure& c) -> Json {
                          throw Error(ErrorCode::ConfigError, "closure initial '" + c.name + "' cannot be serialized");
                        },
                    },
                    spec);
}

InitialSpec initial_from_json(const Json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "random_theta") {
      const RomArch arch = rom_arch_from_json(j.at("arch"));
      if (j.contains("theta")) return RandomTheta{RomModel(arch, vector_from_json(j["theta"])), j.value("seed", 0ull)};
      return RandomTheta::draw(arch, j.value("half_width", 1.0), j.value("seed", 0ull));
    }
    if (kind == "heat_combo") return HeatCombo{vector_from_json(j.at("c"))};
    if (kind == "cheb_combo") {
      ChebCombo c;
      for (const auto& t : j.at("terms")) c.terms.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<double>()});
      return c;
    }
    throw Error(ErrorCode::ConfigError, "unknown initial kind '" + kind + "'");
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("initial: ") + e.what());
  }
}

}  // namespace paramflow
