#include "paramflow/pipeline.hpp"

#include "paramflow/random.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

namespace paramflow {

namespace fs = std::filesystem;

namespace {

// Runs fn(i) for i < n on up to `threads` workers. Results must be written to
// per-index slots; the lowest-index exception is rethrown.
template <class Fn>
void parallel_for(Index n, int threads, Fn&& fn) {
  const int workers = static_cast<int>(std::min<Index>(std::max(threads, 1), std::max<Index>(n, 1)));
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::mutex mu;
  Index failed_at = n;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (Index i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (i < failed_at) {
            failed_at = i;
            failure = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

fs::path anchors_path(const RunConfig& c) { return c.caches() / "anchors.jsonl"; }
fs::path gram_path(const RunConfig& c) { return c.caches() / "gram.jsonl"; }
fs::path traj_path(const RunConfig& c) { return c.caches() / "traj.jsonl"; }
fs::path solutions_path(const RunConfig& c) { return c.caches() / "solutions.jsonl"; }
fs::path references_path(const RunConfig& c) { return c.caches() / "references.jsonl"; }
fs::path control_path(const RunConfig& c) { return c.checkpoints() / "control.json"; }

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + p.string() + ": " + ec.message());
}

std::vector<Json> read_artifact_lines(const fs::path& path, const RunConfig& cfg, const std::string& kind) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingArtifact, path.string());
  std::vector<Json> lines = read_json_lines(path);
  if (lines.empty()) throw Error(ErrorCode::MissingArtifact, path.string() + " is empty");
  check_header(lines.front(), cfg, kind);
  return lines;
}

void write_lines(const fs::path& path, const std::vector<Json>& lines) {
  ensure_dir(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    for (const auto& j : lines) out << j.dump() << '\n';
    if (!out) throw Error(ErrorCode::IoError, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Json fit_to_json(const FitResult& f) {
  return {{"theta", to_json(f.theta)},
          {"train_rmse", f.train_rmse},
          {"heldout_rmse", f.heldout_rmse},
          {"reached", f.reached},
          {"steps", f.steps}};
}

FitResult fit_from_json(const Json& j) {
  FitResult f;
  f.theta = vector_from_json(j.at("theta"));
  f.train_rmse = j.at("train_rmse").get<double>();
  f.heldout_rmse = j.at("heldout_rmse").get<double>();
  f.reached = j.at("reached").get<bool>();
  f.steps = j.at("steps").get<Index>();
  return f;
}

Termination termination_from(const std::string& s) {
  if (s == to_string(Termination::Completed)) return Termination::Completed;
  if (s == to_string(Termination::NonFinite)) return Termination::NonFinite;
  if (s == to_string(Termination::Escaped)) return Termination::Escaped;
  throw Error(ErrorCode::ConfigError, "unknown termination '" + s + "'");
}

// Largest |theta| admitted before a solve counts as having left Theta.
double escape_radius(const RunConfig& cfg, const ThetaSpace& space) {
  if (const auto* box = std::get_if<ThetaBox>(&space))
    return cfg.escape_factor * box->half_width * std::sqrt(static_cast<double>(box->dim));
  const auto& balls = std::get<AnchorBalls>(space);
  double r = 0.0;
  for (const auto& a : balls.anchors) r = std::max(r, a.norm());
  return cfg.escape_factor * (r + balls.radius);
}

std::string time_label(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", t);
  return buf;
}

std::string indexed(const char* stem, Index i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03ld%s", stem, static_cast<long>(i), ext);
  return buf;
}

}  // namespace

Json artifact_header(const RunConfig& cfg, const std::string& kind) {
  return {{"kind", kind}, {"format_version", kFormatVersion}, {"arch_hash", arch_hash(cfg.rom)}, {"seed", cfg.seed}};
}

void check_header(const Json& h, const RunConfig& cfg, const std::string& kind) {
  if (!h.is_object() || h.value("kind", std::string()) != kind)
    throw Error(ErrorCode::ChecksumMismatch, "expected a '" + kind + "' artifact");
  if (h.value("format_version", -1) != kFormatVersion)
    throw Error(ErrorCode::ChecksumMismatch, kind + ": format_version differs");
  if (h.value("arch_hash", std::string()) != arch_hash(cfg.rom))
    throw Error(ErrorCode::ChecksumMismatch, kind + ": arch_hash differs from the configured ROM");
  if (!h.contains("seed") || h["seed"].get<std::uint64_t>() != cfg.seed)
    throw Error(ErrorCode::ChecksumMismatch, kind + ": seed differs");
}

InitialSpec draw_initial(const RunConfig& cfg, InitialRole role, Index index) {
  const char* stream = role == InitialRole::Anchor ? "initials.anchor" : "initials.test";
  const std::uint64_t s = derive_seed(cfg.seed, stream, static_cast<std::uint64_t>(index));
  switch (cfg.initials.kind) {
    case InitialFamily::Kind::RandomTheta: return RandomTheta::draw(cfg.rom, cfg.initials.half_width, s);
    case InitialFamily::Kind::HeatCombo: {
      CounterRng rng(s, fnv1a("initials.heat_combo"));
      DenseVector c = DenseVector::Zero(4);
      const double w = cfg.initials.half_width;
      for (int k = 0; k < cfg.initials.heat_terms; ++k) c(k) = rng.uniform(-w, w);
      return HeatCombo{c};
    }
    case InitialFamily::Kind::ChebCombo: return ChebCombo::draw(cfg.initials.max_degree, cfg.initials.max_terms, s);
  }
  throw Error(ErrorCode::ConfigError, "unknown initial family");
}

FitOptions fit_options(const RunConfig& cfg, InitialRole role, Index index) {
  FitOptions opt = cfg.fit;
  const char* stream = role == InitialRole::Anchor ? "fit.anchor" : "fit.test";
  opt.seed = derive_seed(cfg.seed, stream, static_cast<std::uint64_t>(index));
  // A shared starting point keeps fits of nearby functions close in Theta.
  if (cfg.fit_warm_start && cfg.rom.kind != RomKind::LinearBasis)
    opt.warm_start = init_params(cfg.rom, derive_seed(cfg.seed, "fit.common_init"));
  return opt;
}

ThetaSpace theta_space(const RunConfig& cfg) {
  if (cfg.theta_space.kind == ThetaSpaceConfig::Kind::Box)
    return ThetaBox{param_count(cfg.rom), cfg.theta_space.half_width};
  AnchorBalls balls;
  balls.radius = cfg.theta_space.radius;
  for (const auto& f : load_anchors(cfg).fits) balls.anchors.push_back(f.theta);
  return balls;
}

AnchorStore cmd_fit_initial(const RunConfig& cfg, int threads) {
  const Index n = cfg.counts.n_anchor;
  AnchorStore store;
  store.specs.resize(n);
  store.fits.resize(n);
  parallel_for(n, threads, [&](Index i) {
    store.specs[i] = draw_initial(cfg, InitialRole::Anchor, i);
    store.fits[i] = fit_initial(cfg.rom, store.specs[i], fit_options(cfg, InitialRole::Anchor, i));
  });
  if (n == 0) return store;
  std::vector<Json> lines{artifact_header(cfg, "anchor_store")};
  for (Index i = 0; i < n; ++i) {
    require_finite(store.fits[i].theta, "fit-initial: anchor parameters");
    lines.push_back({{"index", i}, {"spec", to_json(store.specs[i])}, {"fit", fit_to_json(store.fits[i])}});
  }
  write_lines(anchors_path(cfg), lines);
  return store;
}

AnchorStore load_anchors(const RunConfig& cfg) {
  const auto lines = read_artifact_lines(anchors_path(cfg), cfg, "anchor_store");
  AnchorStore store;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    store.specs.push_back(initial_from_json(lines[k].at("spec")));
    store.fits.push_back(fit_from_json(lines[k].at("fit")));
  }
  if (static_cast<Index>(store.fits.size()) != cfg.counts.n_anchor)
    throw Error(ErrorCode::CacheMismatch, "anchor store holds a different number of anchors");
  return store;
}

AssemblyReport cmd_sample_gram(const RunConfig& cfg, int threads) {
  const ThetaSpace space = theta_space(cfg);
  const SampleBatch thetas = sample_theta(space, cfg.counts.n_theta, derive_seed(cfg.seed, "gram.theta"));
  AssemblyOptions opt;
  opt.n_x = cfg.counts.n_x;
  opt.seed = cfg.seed;
  opt.threads = threads;
  opt.gauss_nodes = cfg.gauss_nodes;
  ensure_dir(cfg.caches());
  return assemble_batch(cfg.rom, thetas, cfg.problem.op, opt, gram_path(cfg));
}

std::vector<ParamTrajectory> cmd_gen_trajectories(const RunConfig& cfg, int threads) {
  const Index M = cfg.counts.n_traj;
  const ThetaSpace space = theta_space(cfg);
  std::vector<DenseVector> starts;
  if (const auto* balls = std::get_if<AnchorBalls>(&space))
    for (Index i = 0; i < std::min<Index>(M, balls->anchors.size()); ++i) starts.push_back(balls->anchors[i]);
  const Index extra = M - static_cast<Index>(starts.size());
  if (extra > 0) {
    const SampleBatch s = sample_theta(space, extra, derive_seed(cfg.seed, "traj.start"));
    for (Index j = 0; j < extra; ++j) starts.push_back(s.point(j));
  }
  MarchOptions opt;
  opt.n_x = cfg.counts.n_x;
  opt.gauss_nodes = cfg.gauss_nodes;
  opt.ridge_rel = cfg.ridge_rel;
  opt.escape_radius = escape_radius(cfg, space);
  std::vector<ParamTrajectory> trajs(M);
  parallel_for(M, threads, [&](Index i) {
    MarchOptions o = opt;
    o.seed = derive_seed(cfg.seed, "traj.march", static_cast<std::uint64_t>(i));
    trajs[i] = gen_trajectory(cfg.rom, starts[i], cfg.problem.op, cfg.counts.n_t, cfg.march_h, o);
  });
  Json header = artifact_header(cfg, "traj_cache");
  header["op_tag"] = cfg.problem.op.tag();
  header["n_t"] = cfg.counts.n_t;
  header["h"] = cfg.march_h;
  ensure_dir(cfg.caches());
  write_traj_cache(traj_path(cfg), header, trajs);
  return trajs;
}

TrainResult cmd_train_control(const RunConfig& cfg) {
  const GramCache gram = load_gram_cache(gram_path(cfg), arch_hash(cfg.rom));
  if (gram.header.value("seed", std::uint64_t{0}) != cfg.seed)
    throw Error(ErrorCode::ChecksumMismatch, "gram cache: seed differs");
  std::vector<TrajPair> pairs;
  if (cfg.counts.n_traj > 0) {
    const TrajCache tc = load_traj_cache(traj_path(cfg), arch_hash(cfg.rom));
    check_header(tc.header, cfg, "traj_cache");
    pairs = tc.pairs;
  }
  if (gram.records.empty()) throw Error(ErrorCode::MissingArtifact, "gram cache holds no usable records");
  TrainResult res = train(ControlNet::initialized(cfg.control, derive_seed(cfg.seed, "control.init")), gram.records,
                          pairs, cfg.train);
  ensure_dir(cfg.checkpoints());
  ensure_dir(cfg.curves());
  Json ck = control_checkpoint(res.net, arch_hash(cfg.rom), cfg.seed);
  ck["stop_reason"] = to_string(res.reason);
  ck["steps"] = res.history.size();
  write_json_file(control_path(cfg), ck);
  write_history_csv(cfg.curves() / "loss_history.csv", res.history);
  return res;
}

ControlNet load_control(const RunConfig& cfg) {
  const fs::path p = control_path(cfg);
  if (!fs::exists(p)) throw Error(ErrorCode::MissingArtifact, p.string());
  const Json j = read_json_file(p);
  if (j.value("seed", std::uint64_t{0}) != cfg.seed) throw Error(ErrorCode::ChecksumMismatch, "control checkpoint: seed differs");
  ControlNet net = control_from_checkpoint(j, arch_hash(cfg.rom));
  if (!(net.arch() == cfg.control)) throw Error(ErrorCode::ChecksumMismatch, "control checkpoint: architecture differs");
  return net;
}

std::vector<Solution> cmd_solve(const RunConfig& cfg, int threads) {
  const ControlNet net = load_control(cfg);
  const double radius = escape_radius(cfg, theta_space(cfg));
  const Index n = cfg.counts.n_test;
  std::vector<Solution> out(n);
  parallel_for(n, threads, [&](Index i) {
    Solution& s = out[i];
    s.index = i;
    s.spec = draw_initial(cfg, InitialRole::Test, i);
    s.fit = fit_initial(cfg.rom, s.spec, fit_options(cfg, InitialRole::Test, i));
    require_finite(s.fit.theta, "solve: fitted initial parameters");
    const NetField field(net);
    s.traj = solve_ivp(field, s.fit.theta, cfg.problem.horizon, cfg.n_steps, cfg.scheme, radius);
  });
  std::vector<Json> lines{artifact_header(cfg, "solutions")};
  for (const auto& s : out) {
    Json th = Json::array();
    for (const auto& t : s.traj.thetas) th.push_back(to_json(t));
    lines.push_back({{"index", s.index},
                     {"spec", to_json(s.spec)},
                     {"fit", fit_to_json(s.fit)},
                     {"status", to_string(s.traj.status)},
                     {"failed_step", s.traj.failed_step},
                     {"h", s.traj.h},
                     {"times", s.traj.times},
                     {"thetas", th}});
  }
  write_lines(solutions_path(cfg), lines);
  return out;
}

std::vector<Solution> load_solutions(const RunConfig& cfg) {
  const auto lines = read_artifact_lines(solutions_path(cfg), cfg, "solutions");
  std::vector<Solution> out;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const Json& j = lines[k];
    Solution s;
    s.index = j.at("index").get<Index>();
    s.spec = initial_from_json(j.at("spec"));
    s.fit = fit_from_json(j.at("fit"));
    s.traj.source = TrajSource::ControlField;
    s.traj.status = termination_from(j.at("status").get<std::string>());
    s.traj.failed_step = j.at("failed_step").get<Index>();
    s.traj.h = j.at("h").get<double>();
    s.traj.times = j.at("times").get<std::vector<double>>();
    for (const auto& t : j.at("thetas")) s.traj.thetas.push_back(vector_from_json(t));
    out.push_back(std::move(s));
  }
  return out;
}

ReferenceSolution make_reference(const RunConfig& cfg, const InitialSpec& spec) {
  const Box& dom = cfg.problem.domain;
  return std::visit(
      [&](const auto& form) -> ReferenceSolution {
        using F = std::decay_t<decltype(form)>;
        if constexpr (std::is_same_v<F, Transport>) {
          return TransportShift{spec, form.velocity, dom};
        } else if constexpr (std::is_same_v<F, Heat>) {
          const auto* combo = std::get_if<HeatCombo>(&spec);
          if (!combo) throw Error(ErrorCode::ConfigError, "heat references need heat_combo initials");
          return HeatSeries::from_combo(*combo, dom);
        } else if constexpr (std::is_same_v<F, AllenCahn>) {
          return solve_allen_cahn_imex(spec, dom, form.epsilon, cfg.ref_nx, cfg.ref_nt, cfg.problem.horizon,
                                       cfg.ref_snapshots);
        } else {
          throw Error(ErrorCode::ConfigError, "no reference solver for semilinear operators");
        }
      },
      cfg.problem.op.form);
}

std::vector<ReferenceSolution> cmd_reference(const RunConfig& cfg, int threads) {
  const Index n = cfg.counts.n_test;
  std::vector<ReferenceSolution> refs(n);
  parallel_for(n, threads, [&](Index i) { refs[i] = make_reference(cfg, draw_initial(cfg, InitialRole::Test, i)); });
  std::vector<Json> lines{artifact_header(cfg, "references")};
  for (Index i = 0; i < n; ++i) lines.push_back({{"index", i}, {"reference", to_json(refs[i])}});
  write_lines(references_path(cfg), lines);
  return refs;
}

std::vector<ReferenceSolution> load_references(const RunConfig& cfg) {
  const auto lines = read_artifact_lines(references_path(cfg), cfg, "references");
  std::vector<ReferenceSolution> refs;
  for (std::size_t k = 1; k < lines.size(); ++k) refs.push_back(reference_from_json(lines[k].at("reference")));
  return refs;
}

Json cmd_eval(const RunConfig& cfg, int threads) {
  const auto sols = load_solutions(cfg);
  const auto refs = load_references(cfg);
  if (sols.size() != refs.size()) throw Error(ErrorCode::CacheMismatch, "solutions and references differ in count");
  std::vector<ErrorCurve> curves(sols.size());
  parallel_for(static_cast<Index>(sols.size()), threads, [&](Index i) {
    ErrorOptions opt = cfg.eval;
    opt.seed = derive_seed(cfg.seed, "eval", static_cast<std::uint64_t>(i));
    curves[i] = error_curve(cfg.rom, sols[i].traj, refs[i], opt);
  });
  ensure_dir(cfg.curves());
  Json per = Json::array();
  double sum_mean = 0.0, worst = 0.0;
  Index defined = 0, escaped = 0, completed = 0;
  for (std::size_t i = 0; i < sols.size(); ++i) {
    write_error_csv(cfg.curves() / indexed("error", static_cast<Index>(i), ".csv"), curves[i]);
    const double mean = curves[i].mean_rel();
    const double mx = curves[i].max_rel();
    if (std::isfinite(mean)) {
      sum_mean += mean;
      worst = std::max(worst, mx);
      ++defined;
    }
    escaped += sols[i].traj.status == Termination::Escaped;
    completed += sols[i].traj.completed();
    Json e = {{"index", sols[i].index},
              {"status", to_string(sols[i].traj.status)},
              {"failed_step", sols[i].traj.failed_step},
              {"fit_heldout_rmse", sols[i].fit.heldout_rmse},
              {"fit_reached", sols[i].fit.reached},
              {"abs_err_t0", curves[i].abs_err.empty() ? 0.0 : curves[i].abs_err.front()}};
    e["mean_rel"] = std::isfinite(mean) ? Json(mean) : Json("undefined");
    e["max_rel"] = std::isfinite(mx) ? Json(mx) : Json("undefined");
    per.push_back(e);
  }
  Json report = artifact_header(cfg, "report");
  report["name"] = cfg.name;
  report["op_tag"] = cfg.problem.op.tag();
  report["horizon"] = cfg.problem.horizon;
  report["squared"] = cfg.eval.squared;
  report["initials"] = per;
  report["summary"] = {{"n_test", sols.size()},
                       {"completed", completed},
                       {"escaped", escaped},
                       {"mean_rel", defined ? Json(sum_mean / static_cast<double>(defined)) : Json("undefined")},
                       {"max_rel", defined ? Json(worst) : Json("undefined")}};
  const fs::path ctrl = control_path(cfg);
  if (fs::exists(ctrl)) {
    const Json ck = read_json_file(ctrl);
    report["training"] = {{"stop_reason", ck.value("stop_reason", std::string("unknown"))},
                          {"steps", ck.value("steps", 0)}};
  }
  write_json_file(cfg.report(), report);
  return report;
}

std::vector<fs::path> cmd_export_slice(const RunConfig& cfg) {
  const auto sols = load_solutions(cfg);
  const auto refs = load_references(cfg);
  ensure_dir(cfg.slices());
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < sols.size(); ++i) {
    const auto& tr = sols[i].traj;
    for (double t : cfg.slice_times) {
      if (tr.times.empty()) break;
      std::size_t k = 0;
      for (std::size_t q = 1; q < tr.times.size(); ++q)
        if (std::abs(tr.times[q] - t) < std::abs(tr.times[k] - t)) k = q;
      const fs::path p =
          cfg.slices() / (indexed("slice", static_cast<Index>(i), "") + "_t" + time_label(tr.times[k]) + ".csv");
      write_slice_csv(p, RomModel(cfg.rom, tr.thetas[k]), refs[i], tr.times[k], cfg.slice_points);
      written.push_back(p);
    }
  }
  return written;
}

Json cmd_run(const RunConfig& cfg, int threads) {
  if (cfg.counts.n_anchor > 0) cmd_fit_initial(cfg, threads);
  cmd_sample_gram(cfg, threads);
  if (cfg.counts.n_traj > 0) cmd_gen_trajectories(cfg, threads);
  cmd_train_control(cfg);
  cmd_solve(cfg, threads);
  cmd_reference(cfg, threads);
  Json report = cmd_eval(cfg, threads);
  cmd_export_slice(cfg);
  return report;
}

Json to_json(const ReferenceSolution& ref) {
  return std::visit(
      [](const auto& r) -> Json {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, TransportShift>) {
          return {{"kind", "transport_shift"}, {"g", to_json(r.g)}, {"velocity", to_json(r.velocity)},
                  {"domain", to_json(r.domain)}};
        } else if constexpr (std::is_same_v<R, HeatSeries>) {
          Json modes = Json::array();
          for (const auto& m : r.modes) modes.push_back({{"k", m.k}, {"coeff", m.coeff}});
          return {{"kind", "heat_series"}, {"modes", modes}, {"domain", to_json(r.domain)}};
        } else {
          Json snaps = Json::array();
          for (const auto& s : r.snapshots) snaps.push_back(std::vector<double>(s.data(), s.data() + s.size()));
          return {{"kind", "grid"}, {"domain", to_json(r.domain)}, {"nx", r.nx}, {"ny", r.ny}, {"dt", r.dt},
                  {"times", r.times}, {"snapshots", snaps}};
        }
      },
      ref);
}

ReferenceSolution reference_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "transport_shift")
    return TransportShift{initial_from_json(j.at("g")), vector_from_json(j.at("velocity")), box_from_json(j.at("domain"))};
  if (kind == "heat_series") {
    HeatSeries s;
    s.domain = box_from_json(j.at("domain"));
    for (const auto& m : j.at("modes")) s.modes.push_back({m.at("k").get<std::vector<int>>(), m.at("coeff").get<double>()});
    return s;
  }
  if (kind == "grid") {
    GridSolution g;
    g.domain = box_from_json(j.at("domain"));
    g.nx = j.at("nx").get<Index>();
    g.ny = j.at("ny").get<Index>();
    g.dt = j.at("dt").get<double>();
    g.times = j.at("times").get<std::vector<double>>();
    for (const auto& s : j.at("snapshots")) {
      const auto flat = s.get<std::vector<double>>();
      if (static_cast<Index>(flat.size()) != (g.nx + 1) * (g.ny + 1))
        throw Error(ErrorCode::CacheMismatch, "grid snapshot has the wrong size");
      g.snapshots.push_back(Eigen::Map<const DenseMatrix>(flat.data(), g.nx + 1, g.ny + 1));
    }
    if (g.snapshots.size() != g.times.size()) throw Error(ErrorCode::CacheMismatch, "grid times and snapshots differ");
    return g;
  }
  throw Error(ErrorCode::CacheMismatch, "unknown reference kind '" + kind + "'");
}

}  // namespace paramflow
