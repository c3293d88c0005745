#include "paramflow/assembly.hpp"
#include "paramflow/linalg.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numbers>

using namespace paramflow;
using namespace testsupport;

namespace {

constexpr double kPi = std::numbers::pi;

RomArch small_tanh() {
  RomArch a;
  a.kind = RomKind::ResNetZeroBoundary;
  a.input_dim = 2;
  a.width = 4;
  a.depth = 2;
  a.domain = Box::symmetric(2);
  return a;
}

}  // namespace

TEST_CASE("sine basis Gram system is exact under Gauss quadrature") {
  const RomArch arch = RomArch::sine_basis_1d(6);
  CounterRng rng(1);
  const DenseVector theta = normal(rng, 6);
  const GramRecord r = assemble(RomModel(arch, theta), PdeOperator::heat(), gauss_rule(arch.domain, 40));
  CHECK((r.G - DenseMatrix::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-13);
  for (int k = 0; k < 6; ++k) CHECK(r.p(k) == doctest::Approx(-std::pow((k + 1) * kPi, 2) * theta(k)).epsilon(1e-11));
}

TEST_CASE("Gram records are symmetric PSD and match an explicit sum") {
  const RomArch arch = small_tanh();
  const RomModel model(arch, init_params(arch, 4));
  const SampleBatch xs = sample_omega(arch.domain, 50, 2);
  const PdeOperator op = PdeOperator::allen_cahn(0.01);
  const GramRecord r = assemble(model, op, xs);
  CHECK(r.G == r.G.transpose());
  const Eigen::MatrixXd G = r.G;
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(G).eigenvalues().minCoeff() > -1e-12);

  DenseMatrix Gs = DenseMatrix::Zero(r.G.rows(), r.G.cols());
  DenseVector ps = DenseVector::Zero(r.p.size());
  for (Index j = 0; j < xs.size(); ++j) {
    const EvalBundle e = eval(model, xs.point(j), kValue | kLaplacian | kGradTheta);
    Gs += e.grad_theta * e.grad_theta.transpose() / 50.0;
    ps += e.grad_theta * apply_operator(op, e) / 50.0;
  }
  CHECK((r.G - Gs).cwiseAbs().maxCoeff() < 1e-13);
  CHECK((r.p - ps).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("assemble_one is reproducible from (seed, index)") {
  const RomArch arch = small_tanh();
  AssemblyOptions opt;
  opt.n_x = 40;
  opt.seed = 9;
  const DenseVector th = init_params(arch, 1);
  const GramRecord a = assemble_one(arch, th, PdeOperator::heat(), opt, 3);
  const GramRecord b = assemble_one(arch, th, PdeOperator::heat(), opt, 3);
  const GramRecord c = assemble_one(arch, th, PdeOperator::heat(), opt, 4);
  CHECK(a.G == b.G);
  CHECK(a.G != c.G);
  CHECK(a.seed == record_seed(9, 3));
}

TEST_CASE("Gram cache: threads, resume and reload") {
  ScratchDir dir("gram");
  const RomArch arch = small_tanh();
  const SampleBatch thetas = sample_theta(ThetaBox{param_count(arch), 0.5}, 37, 5);
  AssemblyOptions opt;
  opt.n_x = 30;
  opt.seed = 2;
  const auto op = PdeOperator::heat();

  const AssemblyReport r1 = assemble_batch(arch, thetas, op, opt, dir / "a.jsonl");
  CHECK(r1.computed == 37);
  opt.threads = 4;
  assemble_batch(arch, thetas, op, opt, dir / "b.jsonl");
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));

  SUBCASE("second run is a no-op") {
    const AssemblyReport again = assemble_batch(arch, thetas, op, opt, dir / "a.jsonl");
    CHECK(again.computed == 0);
    CHECK(again.reused == 37);
  }
  SUBCASE("interrupted run resumes to identical bytes") {
    const std::string full = slurp(dir / "a.jsonl");
    for (std::size_t cut : {full.size() / 3, full.size() / 2 + 7, full.size() - 2}) {
      {
        std::ofstream out(dir / "c.jsonl", std::ios::binary | std::ios::trunc);
        out << full.substr(0, cut);
      }
      const AssemblyReport rep = assemble_batch(arch, thetas, op, opt, dir / "c.jsonl");
      CHECK(rep.reused + rep.computed == 37);
      CHECK(rep.computed > 0);
      CHECK(slurp(dir / "c.jsonl") == full);
    }
  }
  SUBCASE("a changed request is refused") {
    AssemblyOptions other = opt;
    other.n_x = 31;
    CHECK_THROWS_AS(assemble_batch(arch, thetas, op, other, dir / "a.jsonl"), Error);
    const SampleBatch moved = sample_theta(ThetaBox{param_count(arch), 0.5}, 37, 6);
    CHECK_THROWS_AS(assemble_batch(arch, moved, op, opt, dir / "a.jsonl"), Error);
  }
  SUBCASE("reload round-trips and guards the architecture") {
    const GramCache c = load_gram_cache(dir / "a.jsonl", arch_hash(arch));
    REQUIRE(c.records.size() == 37);
    const GramRecord direct = assemble_one(arch, thetas.point(11), op, opt, 11);
    CHECK((c.records[11].G - direct.G).cwiseAbs().maxCoeff() == 0.0);
    CHECK((c.records[11].p - direct.p).cwiseAbs().maxCoeff() == 0.0);
    try {
      load_gram_cache(dir / "a.jsonl", arch_hash(RomArch::sine_basis_1d(3)));
      FAIL("expected ChecksumMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ChecksumMismatch);
    }
  }
}

TEST_CASE("psi is minimized by the Gram solution") {
  CounterRng rng(3);
  const DenseMatrix G = random_psd(rng, 5) + 0.1 * DenseMatrix::Identity(5, 5);
  const DenseVector p = normal(rng, 5);
  const DenseVector v = ridge_solve(G, p, 0.0);
  for (int k = 0; k < 20; ++k) CHECK(psi(G, p, v) <= psi(G, p, v + 0.1 * normal(rng, 5)));
  // psi(w) = |A w - b|^2 - |b|^2 when G = A^T A and p = A^T b
  CHECK(psi(G, p, DenseVector::Zero(5)) == 0.0);
}

TEST_CASE("gradient descent field converges to the projection and guards the step") {
  CounterRng rng(4);
  GramRecord r{DenseVector::Zero(4), random_psd(rng, 4) + 0.5 * DenseMatrix::Identity(4, 4), normal(rng, 4), 0, 0};
  const double lam = sym_eig_max(r.G);
  const DenseVector vstar = ridge_solve(r.G, r.p, 0.0);
  const DenseVector w = gd_projection_field(r, 2000, 0.4 / lam);
  CHECK((w - vstar).norm() < 1e-8 * (1 + vstar.norm()));
  CHECK(gd_projection_field(r, 0, 0.1 / lam).norm() == 0.0);
  try {
    gd_projection_field(r, 10, 1.0 / lam);
    FAIL("expected StepTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::StepTooLarge);
  }
}
