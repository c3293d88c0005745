#include "paramflow/assembly.hpp"

#include "paramflow/linalg.hpp"
#include "paramflow/random.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <optional>
#include <mutex>
#include <thread>

namespace paramflow {

namespace fs = std::filesystem;

GramRecord assemble(const RomModel& model, const PdeOperator& op, const QuadratureRule& rule) {
  if (rule.size() < 1) throw Error(ErrorCode::InvalidArgument, "assemble: empty rule");
  if (rule.dim() != model.arch().input_dim) throw Error(ErrorCode::InvalidArgument, "assemble: point dimension");
  const EvalBatch b = eval_batch(model, rule.points, op.required_flags() | kGradTheta);
  const DenseVector F = apply_operator(op, b);
  require_finite(F, "assemble: F[u] overflow");

  GramRecord rec;
  rec.theta = model.theta();
  rec.n_x = rule.size();
  const DenseMatrix Jw = b.grad_theta * rule.weights.asDiagonal();
  rec.G.noalias() = Jw * b.grad_theta.transpose();
  // Exact symmetry: (a + b) / 2 is bitwise commutative.
  rec.G = (0.5 * (rec.G + rec.G.transpose())).eval();
  rec.p.noalias() = Jw * F;
  require_finite(rec.G, "assemble: G overflow");
  require_finite(rec.p, "assemble: p overflow");
  return rec;
}

GramRecord assemble(const RomModel& model, const PdeOperator& op, const SampleBatch& xs) {
  GramRecord rec = assemble(model, op, monte_carlo_rule(xs.points));
  rec.seed = xs.seed;
  return rec;
}

std::uint64_t record_seed(std::uint64_t seed, Index index) {
  return derive_seed(seed, "assembly.x", static_cast<std::uint64_t>(index));
}

GramRecord assemble_one(const RomArch& arch, const DenseVector& theta, const PdeOperator& op,
                        const AssemblyOptions& opt, Index index) {
  const RomModel model(arch, theta);
  if (opt.gauss_nodes > 0) {
    GramRecord rec = assemble(model, op, gauss_rule(arch.domain, opt.gauss_nodes));
    rec.seed = 0;
    return rec;
  }
  return assemble(model, op, sample_omega(arch.domain, opt.n_x, record_seed(opt.seed, index)));
}

Json gram_cache_header(const RomArch& arch, const PdeOperator& op, const AssemblyOptions& opt) {
  return Json{{"kind", "gram_cache"},
              {"format_version", kFormatVersion},
              {"arch_hash", arch_hash(arch)},
              {"op_tag", op.tag()},
              {"m", param_count(arch)},
              {"n_x", opt.gauss_nodes > 0 ? Index{0} : opt.n_x},
              {"gauss_nodes", opt.gauss_nodes},
              {"seed", opt.seed}};
}

namespace {

Json record_json(const GramRecord& r, Index index) {
  return Json{{"index", index},     {"theta", to_json(r.theta)}, {"G", packed_upper_to_json(r.G)},
              {"p", to_json(r.p)}, {"n_x", r.n_x},              {"seed", r.seed}};
}

GramRecord record_from_json(const Json& j, Index m) {
  GramRecord r;
  r.theta = vector_from_json(j.at("theta"));
  r.G = symmetric_from_packed(j.at("G"), m);
  r.p = vector_from_json(j.at("p"));
  r.n_x = j.at("n_x").get<Index>();
  r.seed = j.at("seed").get<std::uint64_t>();
  if (r.theta.size() != m || r.p.size() != m) throw Error(ErrorCode::CacheMismatch, "gram record has wrong length");
  return r;
}

}  // namespace

AssemblyReport assemble_batch(const RomArch& arch, const SampleBatch& thetas, const PdeOperator& op,
                              const AssemblyOptions& opt, const fs::path& cache_path) {
  arch.validate();
  op.validate(arch.input_dim);
  const Index m = param_count(arch);
  if (thetas.size() > 0 && thetas.dim() != m) throw Error(ErrorCode::InvalidArgument, "assemble_batch: theta length");
  if (opt.gauss_nodes <= 0 && opt.n_x < 1) throw Error(ErrorCode::InvalidArgument, "assemble_batch: n_x >= 1");

  const Json header = gram_cache_header(arch, op, opt);
  AssemblyReport report;
  Index start = 0;

  std::error_code ec;
  if (fs::exists(cache_path, ec) && fs::file_size(cache_path, ec) > 0) {
    std::uintmax_t valid = 0;
    const auto lines = read_json_lines(cache_path, &valid);
    if (lines.empty() || lines.front() != header)
      throw Error(ErrorCode::CacheMismatch, "gram cache header differs from the requested run: " + cache_path.string());
    for (std::size_t k = 1; k < lines.size(); ++k) {
      const Json& line = lines[k];
      const Index index = line.at("index").get<Index>();
      if (index != static_cast<Index>(k - 1) || index >= thetas.size())
        throw Error(ErrorCode::CacheMismatch, "gram cache records are out of order or exceed the batch");
      if (line.contains("skipped")) {
        ++report.skipped;
      } else if (vector_from_json(line.at("theta")) != thetas.points.col(index)) {
        throw Error(ErrorCode::CacheMismatch, "gram cache theta differs at index " + std::to_string(index));
      }
    }
    start = static_cast<Index>(lines.size()) - 1;
    report.reused = start - report.skipped;
    if (valid != fs::file_size(cache_path)) fs::resize_file(cache_path, valid);
  } else {
    if (cache_path.has_parent_path()) fs::create_directories(cache_path.parent_path());
    std::ofstream out(cache_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot create " + cache_path.string());
    out << header.dump() << '\n';
    if (!out) throw Error(ErrorCode::IoError, "write failed: " + cache_path.string());
  }

  std::ofstream out(cache_path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::IoError, "cannot append to " + cache_path.string());

  const int threads = std::max(1, opt.threads);
  const Index block = 16 * threads;
  std::vector<std::optional<std::string>> lines;
  for (Index lo = start; lo < thetas.size(); lo += block) {
    const Index hi = std::min(thetas.size(), lo + block);
    lines.assign(static_cast<std::size_t>(hi - lo), std::nullopt);
    std::atomic<Index> next{lo};
    auto work = [&] {
      for (Index i = next++; i < hi; i = next++) {
        try {
          const GramRecord rec = assemble_one(arch, thetas.points.col(i), op, opt, i);
          lines[static_cast<std::size_t>(i - lo)] = record_json(rec, i).dump();
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NonFinite) throw;
          lines[static_cast<std::size_t>(i - lo)] = Json{{"index", i}, {"skipped", "non_finite"}}.dump();
        }
      }
    };
    if (threads == 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      std::exception_ptr failure;
      std::mutex failure_mutex;
      for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
          try {
            work();
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
      if (failure) std::rethrow_exception(failure);
    }
    for (const auto& line : lines) {
      out << *line << '\n';
      if (line->find("\"skipped\"") != std::string::npos) ++report.skipped;
      else ++report.computed;
    }
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "write failed: " + cache_path.string());
  }
  return report;
}

GramCache load_gram_cache(const fs::path& path, const std::string& expected_arch_hash) {
  const auto lines = read_json_lines(path);
  if (lines.empty()) throw Error(ErrorCode::MissingArtifact, "gram cache has no header: " + path.string());
  GramCache cache;
  cache.header = lines.front();
  if (cache.header.value("kind", "") != "gram_cache" || cache.header.value("format_version", 0) != kFormatVersion)
    throw Error(ErrorCode::ChecksumMismatch, "not a gram cache of this format: " + path.string());
  if (!expected_arch_hash.empty() && cache.header.value("arch_hash", "") != expected_arch_hash)
    throw Error(ErrorCode::ChecksumMismatch, "gram cache arch_hash differs from the model: " + path.string());
  const Index m = cache.header.at("m").get<Index>();
  cache.records.reserve(lines.size() - 1);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    if (lines[k].contains("skipped")) {
      ++cache.skipped;
      continue;
    }
    cache.records.push_back(record_from_json(lines[k], m));
  }
  return cache;
}

double psi(const DenseMatrix& G, const DenseVector& p, const DenseVector& w) {
  return w.dot(G * w) - 2.0 * w.dot(p);
}

DenseVector gd_projection_field(const GramRecord& record, int K, double h) {
  if (K < 0) throw Error(ErrorCode::InvalidArgument, "gd_projection_field: K >= 0");
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "gd_projection_field: h > 0");
  const double lambda = sym_eig_max(record.G);
  if (lambda > 0.0 && h * lambda >= 1.0)
    throw Error(ErrorCode::StepTooLarge, "gd_projection_field: h must be below 1/lambda_max(G)");
  DenseVector w = DenseVector::Zero(record.p.size());
  for (int k = 0; k < K; ++k) w -= (2.0 * h) * (record.G * w - record.p);
  return w;
}

}  // namespace paramflow
