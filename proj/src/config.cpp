#include "paramflow/config.hpp"

namespace paramflow {

namespace {

template <class T>
T get(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config key '") + key + "': " + e.what());
  }
}

BoundaryKind boundary_from(const std::string& s) {
  if (s == "zero_dirichlet") return BoundaryKind::ZeroDirichlet;
  if (s == "periodic") return BoundaryKind::Periodic;
  throw Error(ErrorCode::ConfigError, "unknown boundary '" + s + "'");
}

}  // namespace

Json default_config() {
  return Json::parse(R"({
    "name": "run",
    "seed": 0,
    "problem": {"operator": {"form": "heat"}, "domain": {"lo": [0.0], "hi": [1.0]},
                "horizon": 0.1, "boundary": "zero_dirichlet"},
    "rom": {"kind": "linear_basis", "input_dim": 1, "basis": {"sine_modes": 2}},
    "control": {"width": 32, "depth": 3},
    "theta_space": {"kind": "box", "half_width": 1.0, "radius": 3.0},
    "counts": {"n_theta": 2000, "n_x": 1000, "n_traj": 0, "n_t": 20, "n_anchor": 0, "n_test": 10},
    "assembly": {"gauss_nodes": 0},
    "march": {"h": 0.001, "ridge_rel": 1e-6, "escape_factor": 10.0},
    "train": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8, "zeta": 0.1,
              "batch_size": 256, "stop_loss": 0.1, "stop_plateau_pct": 0.1, "plateau_window": 100,
              "max_steps": 20000},
    "initials": {"family": "random_theta", "half_width": 1.0, "heat_terms": 2, "max_degree": 3, "max_terms": 4},
    "fit": {"n_x": 1000, "eps0_target": 0.001, "method": "adam", "lr": 0.001, "max_steps": 20000,
            "lm_max_iter": 200, "warm_start": true},
    "solve": {"scheme": "rk4", "n_steps": 200},
    "reference": {"nx": 100, "nt": 2000, "max_snapshots": 64},
    "eval": {"n_x": 2000, "gauss_nodes": 0, "squared": false, "slice_times": [], "slice_points": 41},
    "paths": {"out_dir": "out"}
  })");
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorCode::ConfigError, "override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::exception&) {
    value = text;
  }
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(ErrorCode::ConfigError, "empty component in override key '" + key + "'");
    if (node->is_null()) *node = Json::object();
    if (!node->is_object()) throw Error(ErrorCode::ConfigError, "override path crosses a non-object: '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig parse_config(const Json& doc) {
  RunConfig c;
  c.json = doc;
  try {
    c.name = get<std::string>(doc, "name");
    c.seed = get<std::uint64_t>(doc, "seed");

    const Json& pj = doc.at("problem");
    c.problem.op = operator_from_json(pj.at("operator"));
    c.problem.domain = box_from_json(pj.at("domain"));
    c.problem.horizon = get<double>(pj, "horizon");
    c.problem.boundary = boundary_from(get<std::string>(pj, "boundary"));
    c.problem.validate();

    Json rom = doc.at("rom");
    if (!rom.contains("domain")) rom["domain"] = to_json(c.problem.domain);
    c.rom = rom_arch_from_json(rom);
    if (!(c.rom.domain == c.problem.domain))
      throw Error(ErrorCode::ConfigError, "rom domain differs from the problem domain");
    if (c.rom.input_dim != c.problem.domain.dim())
      throw Error(ErrorCode::ConfigError, "rom input_dim differs from the problem dimension");
    // linear bases are used with zero Dirichlet data only
    if ((c.problem.boundary == BoundaryKind::Periodic) != (c.rom.kind == RomKind::ResNetPeriodic))
      throw Error(ErrorCode::ConfigError, "rom kind does not enforce the problem's boundary condition");

    const Json& cj = doc.at("control");
    c.control = ControlArch{param_count(c.rom), get<Index>(cj, "width"), get<Index>(cj, "depth")};
    c.control.validate();

    const Json& tj = doc.at("theta_space");
    const std::string tkind = get<std::string>(tj, "kind");
    if (tkind == "box") c.theta_space.kind = ThetaSpaceConfig::Kind::Box;
    else if (tkind == "anchor_balls") c.theta_space.kind = ThetaSpaceConfig::Kind::AnchorBalls;
    else throw Error(ErrorCode::ConfigError, "unknown theta_space kind '" + tkind + "'");
    c.theta_space.half_width = get<double>(tj, "half_width");
    c.theta_space.radius = get<double>(tj, "radius");
    if (!(c.theta_space.half_width > 0.0) || !(c.theta_space.radius > 0.0))
      throw Error(ErrorCode::ConfigError, "theta_space sizes must be positive");

    const Json& n = doc.at("counts");
    c.counts = Counts{get<Index>(n, "n_theta"), get<Index>(n, "n_x"),      get<Index>(n, "n_traj"),
                      get<Index>(n, "n_t"),     get<Index>(n, "n_anchor"), get<Index>(n, "n_test")};
    if (c.counts.n_theta < 0 || c.counts.n_x < 1 || c.counts.n_traj < 0 || c.counts.n_t < 1 ||
        c.counts.n_anchor < 0 || c.counts.n_test < 0)
      throw Error(ErrorCode::ConfigError, "counts must be nonnegative (n_x, n_t >= 1)");
    if (c.theta_space.kind == ThetaSpaceConfig::Kind::AnchorBalls && c.counts.n_anchor < 1)
      throw Error(ErrorCode::ConfigError, "anchor_balls needs counts.n_anchor >= 1");

    c.gauss_nodes = get<int>(doc.at("assembly"), "gauss_nodes");
    const Json& mj = doc.at("march");
    c.march_h = get<double>(mj, "h");
    c.ridge_rel = get<double>(mj, "ridge_rel");
    c.escape_factor = get<double>(mj, "escape_factor");
    if (!(c.march_h > 0.0) || c.ridge_rel < 0.0 || !(c.escape_factor > 0.0))
      throw Error(ErrorCode::ConfigError, "march: h > 0, ridge_rel >= 0, escape_factor > 0");

    const Json& tr = doc.at("train");
    c.train.lr = get<double>(tr, "lr");
    c.train.beta1 = get<double>(tr, "beta1");
    c.train.beta2 = get<double>(tr, "beta2");
    c.train.adam_eps = get<double>(tr, "adam_eps");
    c.train.zeta = get<double>(tr, "zeta");
    c.train.batch_size = get<Index>(tr, "batch_size");
    c.train.stop_loss = get<double>(tr, "stop_loss");
    c.train.stop_plateau_pct = get<double>(tr, "stop_plateau_pct");
    c.train.plateau_window = get<Index>(tr, "plateau_window");
    c.train.max_steps = get<Index>(tr, "max_steps");
    c.train.seed = c.seed;
    c.train.validate();

    const Json& ij = doc.at("initials");
    const std::string fam = get<std::string>(ij, "family");
    if (fam == "random_theta") c.initials.kind = InitialFamily::Kind::RandomTheta;
    else if (fam == "heat_combo") c.initials.kind = InitialFamily::Kind::HeatCombo;
    else if (fam == "cheb_combo") c.initials.kind = InitialFamily::Kind::ChebCombo;
    else throw Error(ErrorCode::ConfigError, "unknown initial family '" + fam + "'");
    c.initials.half_width = get<double>(ij, "half_width");
    c.initials.heat_terms = get<int>(ij, "heat_terms");
    c.initials.max_degree = get<int>(ij, "max_degree");
    c.initials.max_terms = get<int>(ij, "max_terms");
    if (c.initials.heat_terms < 1 || c.initials.heat_terms > 4 ||
        (c.problem.domain.dim() == 1 && c.initials.heat_terms > 2))
      throw Error(ErrorCode::ConfigError, "initials.heat_terms: 1..4 (1..2 in 1D)");

    const Json& fj = doc.at("fit");
    c.fit.n_x = get<Index>(fj, "n_x");
    c.fit.eps0_target = get<double>(fj, "eps0_target");
    const std::string method = get<std::string>(fj, "method");
    if (method == "adam") c.fit.method = FitMethod::Adam;
    else if (method == "levenberg_marquardt") c.fit.method = FitMethod::LevenbergMarquardt;
    else throw Error(ErrorCode::ConfigError, "unknown fit method '" + method + "'");
    c.fit.train.lr = get<double>(fj, "lr");
    c.fit.train.max_steps = get<Index>(fj, "max_steps");
    c.fit.lm_max_iter = get<Index>(fj, "lm_max_iter");
    c.fit_warm_start = get<bool>(fj, "warm_start");
    if (c.fit.n_x < 1 || !(c.fit.eps0_target > 0.0)) throw Error(ErrorCode::ConfigError, "fit: n_x >= 1, eps0_target > 0");

    const Json& sj = doc.at("solve");
    const std::string scheme = get<std::string>(sj, "scheme");
    if (scheme == "rk4") c.scheme = Scheme::RK4;
    else if (scheme == "euler") c.scheme = Scheme::Euler;
    else throw Error(ErrorCode::ConfigError, "unknown scheme '" + scheme + "'");
    c.n_steps = get<Index>(sj, "n_steps");
    if (c.n_steps < 1) throw Error(ErrorCode::ConfigError, "solve.n_steps >= 1");

    const Json& rj = doc.at("reference");
    c.ref_nx = get<Index>(rj, "nx");
    c.ref_nt = get<Index>(rj, "nt");
    c.ref_snapshots = get<Index>(rj, "max_snapshots");

    const Json& ej = doc.at("eval");
    c.eval.n_x = get<Index>(ej, "n_x");
    c.eval.gauss_nodes = get<int>(ej, "gauss_nodes");
    c.eval.squared = get<bool>(ej, "squared");
    c.eval.seed = c.seed;
    c.slice_times = get<std::vector<double>>(ej, "slice_times");
    c.slice_points = get<Index>(ej, "slice_points");
    if (c.eval.n_x < 1 || c.slice_points < 2) throw Error(ErrorCode::ConfigError, "eval: n_x >= 1, slice_points >= 2");

    c.out_dir = get<std::string>(doc.at("paths"), "out_dir");
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) throw Error(ErrorCode::ConfigError, e.what());
    throw;
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed, std::optional<std::filesystem::path> out_dir) {
  Json doc = default_config();
  Json file;
  try {
    file = read_json_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  if (!file.is_object()) throw Error(ErrorCode::ConfigError, "config root must be an object");
  doc.merge_patch(file);
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;
  if (out_dir) doc["paths"]["out_dir"] = out_dir->string();
  return parse_config(doc);
}

}  // namespace paramflow
