#include "paramflow/evolve.hpp"

#include "paramflow/linalg.hpp"
#include "paramflow/random.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace paramflow {

LinearField::LinearField(DenseMatrix A, DenseVector c) : A_(std::move(A)), c_(std::move(c)) {
  if (A_.rows() != A_.cols()) throw Error(ErrorCode::InvalidArgument, "linear field: A must be square");
  if (c_.size() == 0) c_ = DenseVector::Zero(A_.rows());
  if (c_.size() != A_.rows()) throw Error(ErrorCode::InvalidArgument, "linear field: offset length");
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::Completed: return "completed";
    case Termination::NonFinite: return "non_finite";
    case Termination::Escaped: return "escaped";
  }
  return "?";
}

namespace {

bool escaped(const DenseVector& theta, double radius) { return std::isfinite(radius) && theta.norm() > radius; }

}  // namespace

ParamTrajectory gen_trajectory(const RomArch& arch, const DenseVector& theta0, const PdeOperator& op, Index n_t,
                               double h, const MarchOptions& opt) {
  if (n_t < 1) throw Error(ErrorCode::InvalidArgument, "gen_trajectory: n_t >= 1");
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "gen_trajectory: h > 0");
  if (opt.ridge_rel < 0.0) throw Error(ErrorCode::InvalidArgument, "gen_trajectory: ridge_rel >= 0");
  if (theta0.size() != param_count(arch)) throw Error(ErrorCode::InvalidArgument, "gen_trajectory: theta length");
  ParamTrajectory traj;
  traj.source = TrajSource::GramMarch;
  traj.h = h;
  traj.times.push_back(0.0);
  traj.thetas.push_back(theta0);
  AssemblyOptions aopt;
  aopt.n_x = opt.n_x;
  aopt.gauss_nodes = opt.gauss_nodes;
  aopt.seed = derive_seed(opt.seed, "evolve.march");
  for (Index j = 0; j < n_t; ++j) {
    const DenseVector& theta = traj.thetas.back();
    try {
      const GramRecord rec = assemble_one(arch, theta, op, aopt, j);
      const double lambda = opt.ridge_rel * rec.G.trace() / static_cast<double>(rec.G.rows());
      const DenseVector v = ridge_solve(rec.G, rec.p, lambda);
      DenseVector next = theta + h * v;
      if (!next.allFinite()) throw Error(ErrorCode::NonFinite, "gen_trajectory: state overflow");
      traj.velocities.push_back(v);
      traj.times.push_back(static_cast<double>(j + 1) * h);
      traj.thetas.push_back(std::move(next));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFinite && e.code() != ErrorCode::FactorizationFailure) throw;
      traj.status = Termination::NonFinite;
      traj.failed_step = j;
      return traj;
    }
    if (escaped(traj.thetas.back(), opt.escape_radius)) {
      traj.status = Termination::Escaped;
      traj.failed_step = j + 1;
      return traj;
    }
  }
  return traj;
}

ParamTrajectory solve_ivp(const VectorField& field, const DenseVector& theta0, double T, Index n_steps, Scheme scheme,
                          double escape_radius, double t0) {
  if (n_steps < 1) throw Error(ErrorCode::InvalidArgument, "solve_ivp: n_steps >= 1");
  if (!(T > 0.0)) throw Error(ErrorCode::InvalidArgument, "solve_ivp: T > 0");
  if (theta0.size() != field.dim()) throw Error(ErrorCode::InvalidArgument, "solve_ivp: theta length");
  require_finite(theta0, "solve_ivp: theta0");
  ParamTrajectory traj;
  traj.source = TrajSource::ControlField;
  const double h = T / static_cast<double>(n_steps);
  traj.h = h;
  traj.times.reserve(static_cast<std::size_t>(n_steps) + 1);
  traj.thetas.reserve(static_cast<std::size_t>(n_steps) + 1);
  traj.times.push_back(t0);
  traj.thetas.push_back(theta0);
  for (Index k = 0; k < n_steps; ++k) {
    const DenseVector& y = traj.thetas.back();
    DenseVector next;
    try {
      if (scheme == Scheme::Euler) {
        next = y + h * field(y);
      } else {
        const DenseVector k1 = field(y);
        const DenseVector k2 = field(y + (0.5 * h) * k1);
        const DenseVector k3 = field(y + (0.5 * h) * k2);
        const DenseVector k4 = field(y + h * k3);
        next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFinite) throw;
      next = DenseVector::Constant(y.size(), std::numeric_limits<double>::quiet_NaN());
    }
    if (!next.allFinite()) {
      traj.status = Termination::NonFinite;
      traj.failed_step = k;
      return traj;
    }
    traj.thetas.push_back(std::move(next));
    traj.times.push_back(t0 + static_cast<double>(k + 1) * h);
    if (escaped(traj.thetas.back(), escape_radius)) {
      traj.status = Termination::Escaped;
      traj.failed_step = k + 1;
      return traj;
    }
  }
  return traj;
}

FieldStats field_stats(const VectorField& field, const SampleBatch& thetas, std::uint64_t seed) {
  if (thetas.size() < 1) throw Error(ErrorCode::InvalidArgument, "field_stats: empty batch");
  FieldStats stats;
  CounterRng rng(seed, fnv1a("evolve.field_stats"));
  const Index m = field.dim();
  for (Index j = 0; j < thetas.size(); ++j) {
    const DenseVector theta = thetas.point(j);
    stats.max_v = std::max(stats.max_v, field(theta).norm());
    DenseVector q(m);
    for (Index i = 0; i < m; ++i) q(i) = rng.normal();
    q.normalize();
    double sigma = 0.0;
    for (int it = 0; it < 8; ++it) {
      const DenseVector Jq = field.jvp(theta, q);
      sigma = std::max(sigma, Jq.norm());
      DenseVector next = field.vjp(theta, Jq);
      const double n = next.norm();
      if (n == 0.0) break;
      q = next / n;
    }
    stats.lip_v = std::max(stats.lip_v, sigma);
  }
  return stats;
}

std::vector<TrajPair> trajectory_pairs(const std::vector<ParamTrajectory>& trajs) {
  std::vector<TrajPair> pairs;
  for (const auto& tr : trajs)
    for (std::size_t j = 0; j < tr.velocities.size(); ++j) pairs.push_back({tr.thetas[j], tr.velocities[j]});
  return pairs;
}

void write_traj_cache(const std::filesystem::path& path, const Json& header, const std::vector<ParamTrajectory>& trajs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << header.dump() << '\n';
  for (std::size_t id = 0; id < trajs.size(); ++id) {
    const auto& tr = trajs[id];
    for (std::size_t j = 0; j < tr.velocities.size(); ++j)
      out << Json{{"traj_id", id},
                  {"j", j},
                  {"t", tr.times[j]},
                  {"theta", to_json(tr.thetas[j])},
                  {"v", to_json(tr.velocities[j])}}
                 .dump()
          << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

TrajCache load_traj_cache(const std::filesystem::path& path, const std::string& expected_arch_hash) {
  const auto lines = read_json_lines(path);
  if (lines.empty()) throw Error(ErrorCode::MissingArtifact, "trajectory cache has no header: " + path.string());
  TrajCache cache;
  cache.header = lines.front();
  if (cache.header.value("kind", "") != "traj_cache" || cache.header.value("format_version", 0) != kFormatVersion)
    throw Error(ErrorCode::ChecksumMismatch, "not a trajectory cache of this format: " + path.string());
  if (!expected_arch_hash.empty() && cache.header.value("arch_hash", "") != expected_arch_hash)
    throw Error(ErrorCode::ChecksumMismatch, "trajectory cache arch_hash differs from the model: " + path.string());
  std::set<Index> ids;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    ids.insert(lines[k].at("traj_id").get<Index>());
    cache.pairs.push_back({vector_from_json(lines[k].at("theta")), vector_from_json(lines[k].at("v"))});
  }
  cache.trajectories = static_cast<Index>(ids.size());
  return cache;
}

}  // namespace paramflow
