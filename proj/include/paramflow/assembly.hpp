#pragma once

#include "paramflow/core.hpp"
#include "paramflow/domain.hpp"
#include "paramflow/pde_ops.hpp"
#include "paramflow/rom.hpp"
#include "paramflow/sampling.hpp"
#include "paramflow/serialize.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace paramflow {

/// Projection system at one parameter point:
/// G = sum_i w_i g_i g_i^T, p = sum_i w_i g_i F[u](x_i), g_i = grad_theta u(x_i).
struct GramRecord {
  DenseVector theta;
  DenseMatrix G;
  DenseVector p;
  Index n_x = 0;
  std::uint64_t seed = 0;
};

/// Weighted assembly; weights sum to one so G and p are domain averages.
GramRecord assemble(const RomModel& model, const PdeOperator& op, const QuadratureRule& rule);
/// Monte-Carlo assembly with equal weights 1/N_x.
GramRecord assemble(const RomModel& model, const PdeOperator& op, const SampleBatch& xs);

struct AssemblyOptions {
  Index n_x = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
  /// > 0: use a tensor Gauss-Legendre rule with this many nodes per axis
  /// instead of Monte-Carlo points (n_x is then ignored).
  int gauss_nodes = 0;
};

/// Seed of the spatial sample used for the record at `index`.
std::uint64_t record_seed(std::uint64_t seed, Index index);

/// Assembles one record per column of `thetas` with a fresh spatial sample each.
/// Records are identical for any thread count.
GramRecord assemble_one(const RomArch& arch, const DenseVector& theta, const PdeOperator& op,
                        const AssemblyOptions& opt, Index index);

struct AssemblyReport {
  Index computed = 0;
  Index reused = 0;
  Index skipped = 0;
};

/// Cache header for a Gram cache built with these inputs.
Json gram_cache_header(const RomArch& arch, const PdeOperator& op, const AssemblyOptions& opt);

/// Writes (or resumes) a JSON-lines Gram cache: one header line, then one
/// line per theta in input order. Records already present are kept; a
/// truncated trailing line is discarded and recomputed. Non-finite records
/// are written as {"index", "skipped"} and counted.
AssemblyReport assemble_batch(const RomArch& arch, const SampleBatch& thetas, const PdeOperator& op,
                              const AssemblyOptions& opt, const std::filesystem::path& cache_path);

struct GramCache {
  Json header;
  std::vector<GramRecord> records;
  Index skipped = 0;
};

/// Loads a Gram cache. With `expected_arch_hash` non-empty, a different
/// header hash raises ChecksumMismatch.
GramCache load_gram_cache(const std::filesystem::path& path, const std::string& expected_arch_hash = {});

/// psi(w) = w^T G w - 2 w^T p (the constant term is dropped).
double psi(const DenseMatrix& G, const DenseVector& p, const DenseVector& w);

/// K steps of gradient descent on psi from w = 0 with step h:
/// w <- w - 2h (G w - p). Requires 0 < h < 1 / lambda_max(G).
DenseVector gd_projection_field(const GramRecord& record, int K, double h);

}  // namespace paramflow
