#include "paramflow/rom.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numbers>

using namespace paramflow;
using namespace testsupport;

namespace {

RomArch resnet(RomKind kind, int d, int width, int depth, Activation act) {
  RomArch a;
  a.kind = kind;
  a.input_dim = d;
  a.width = width;
  a.depth = depth;
  a.activation = act;
  a.domain = kind == RomKind::ResNetPeriodic ? Box::unit(d) : Box::symmetric(d);
  return a;
}

DenseVector interior_point(CounterRng& rng, const Box& box) {
  DenseVector x(box.dim());
  for (int k = 0; k < box.dim(); ++k) x(k) = box.lo(k) + rng.uniform(0.05, 0.95) * box.extent()(k);
  return x;
}

// Checks every analytic field against central differences of the value.
void check_derivatives(const RomArch& arch, std::uint64_t seed, int cases) {
  CounterRng rng(seed);
  const Index m = param_count(arch);
  const int d = arch.input_dim;
  for (int c = 0; c < cases; ++c) {
    const DenseVector theta = init_params(arch, seed + c) + normal(rng, m, 0.3);
    const DenseVector x = interior_point(rng, arch.domain);
    const EvalBundle e = eval(RomModel(arch, theta), x, kValue | kGradX | kLaplacian | kGradTheta | kHessDiag);
    const auto u = [&](const DenseVector& th, const DenseVector& y) { return eval(RomModel(arch, th), y, kValue).value; };

    const DenseVector dir = normal(rng, m);
    CHECK(rel_err(e.grad_theta.dot(dir), directional([&](const DenseVector& th) { return u(th, x); }, theta, dir, 1e-6)) <
          1e-5);
    double lap = 0.0;
    for (int k = 0; k < d; ++k) {
      const DenseVector ek = DenseVector::Unit(d, k);
      CHECK(rel_err(e.grad_x(k), directional([&](const DenseVector& y) { return u(theta, y); }, x, ek, 1e-5)) < 1e-5);
      const double h = 1e-4;
      const double second = (u(theta, x + h * ek) - 2 * e.value + u(theta, x - h * ek)) / (h * h);
      CHECK(rel_err(e.hess_diag(k), second, 1e-2) < 1e-4);
      lap += e.hess_diag(k);
    }
    CHECK(e.laplacian == doctest::Approx(lap).epsilon(1e-12));
  }
}

}  // namespace

TEST_CASE("parameter counts follow the flattening order") {
  // W0 (w x d), b0, (depth-1) x (W, b), w_L
  CHECK(param_count(resnet(RomKind::ResNetZeroBoundary, 2, 8, 2, Activation::Tanh)) == 8 * 2 + 8 + 64 + 8 + 8);
  // periodic: input 2d, plus a shift per axis
  CHECK(param_count(resnet(RomKind::ResNetPeriodic, 1, 6, 2, Activation::Relu)) == 6 * 2 + 6 + 36 + 6 + 6 + 1);
  CHECK(param_count(RomArch::sine_basis_1d(8)) == 8);
  const auto layout = param_layout(resnet(RomKind::ResNetPeriodic, 1, 6, 2, Activation::Relu));
  CHECK(layout.back().offset + layout.back().size() == 67);
}

TEST_CASE("zero-boundary tanh network derivatives match central differences") {
  check_derivatives(resnet(RomKind::ResNetZeroBoundary, 2, 8, 3, Activation::Tanh), 1, 25);
  check_derivatives(resnet(RomKind::ResNetZeroBoundary, 1, 5, 2, Activation::Tanh), 2, 10);
}

TEST_CASE("periodic network derivatives match central differences") {
  check_derivatives(resnet(RomKind::ResNetPeriodic, 1, 6, 2, Activation::Tanh), 3, 25);
  check_derivatives(resnet(RomKind::ResNetPeriodic, 2, 4, 2, Activation::Tanh), 4, 10);
}

TEST_CASE("linear basis derivatives match central differences") {
  RomArch a;
  a.kind = RomKind::LinearBasis;
  a.input_dim = 2;
  a.domain = Box::unit(2);
  a.basis = {{BasisFunction::Kind::Sine, {1, 1}}, {BasisFunction::Kind::Sine, {2, 1}}, {BasisFunction::Kind::Monomial, {2, 1}}};
  check_derivatives(a, 5, 15);
}

TEST_CASE("relu periodic network: theta and x gradients away from kinks") {
  const RomArch arch = resnet(RomKind::ResNetPeriodic, 1, 6, 2, Activation::Relu);
  CounterRng rng(6);
  const Index m = param_count(arch);
  int checked = 0;
  for (int c = 0; c < 40; ++c) {
    const DenseVector theta = normal(rng, m, 0.7);
    const DenseVector x = interior_point(rng, arch.domain);
    const RomModel model(arch, theta);
    const EvalBundle e = eval(model, x, kValue | kGradX | kGradTheta | kLaplacian);
    const DenseVector dir = normal(rng, m);
    const auto f = [&](const DenseVector& th) { return eval(RomModel(arch, th), x, kValue).value; };
    // Skip the rare draw whose stencil crosses a kink: the two one-sided slopes disagree there.
    const double fwd = (f(theta + 1e-7 * dir) - f(theta)) / 1e-7, bwd = (f(theta) - f(theta - 1e-7 * dir)) / 1e-7;
    if (rel_err(fwd, bwd) > 1e-4) continue;
    CHECK(rel_err(e.grad_theta.dot(dir), directional(f, theta, dir, 1e-7)) < 1e-5);
    // relu'' = 0, so the Laplacian comes from the curvature of the Fourier features alone
    const auto g = [&](double y) { return eval(model, DenseVector::Constant(1, y), kValue).value; };
    const double hx = 1e-4;
    const double l = (g(x(0) + hx) - 2 * e.value + g(x(0) - hx)) / (hx * hx);
    const double lf = (g(x(0) + 2 * hx) - 2 * e.value + g(x(0) - 2 * hx)) / (4 * hx * hx);
    if (rel_err(l, lf, 1.0) < 1e-4) CHECK(rel_err(e.laplacian, l, 1.0) < 1e-4);
    ++checked;
  }
  CHECK(checked > 30);
}

TEST_CASE("eval_batch agrees with pointwise eval") {
  const RomArch arch = resnet(RomKind::ResNetZeroBoundary, 2, 6, 2, Activation::Tanh);
  CounterRng rng(7);
  const RomModel model(arch, init_params(arch, 3));
  DenseMatrix xs(2, 300);  // spans more than one internal chunk
  for (Index j = 0; j < xs.cols(); ++j) xs.col(j) = interior_point(rng, arch.domain);
  const EvalFlags all = kValue | kGradX | kLaplacian | kGradTheta | kHessDiag;
  const EvalBatch b = eval_batch(model, xs, all);
  CHECK(b.has(all));
  for (Index j : {0, 1, 150, 299}) {
    const EvalBundle e = eval(model, xs.col(j), all);
    CHECK(b.value(j) == doctest::Approx(e.value).epsilon(1e-13));
    CHECK((b.grad_theta.col(j) - e.grad_theta).norm() <= 1e-12 * (1 + e.grad_theta.norm()));
    CHECK(b.laplacian(j) == doctest::Approx(e.laplacian).epsilon(1e-12));
  }
  const EvalBatch v = eval_batch(model, xs, kValue);
  CHECK(v.has(kValue));
  CHECK_FALSE(v.has(kGradTheta));
  CHECK(v.grad_theta.size() == 0);
}

TEST_CASE("zero-boundary models vanish on the boundary") {
  const RomArch arch = resnet(RomKind::ResNetZeroBoundary, 2, 8, 2, Activation::Tanh);
  CounterRng rng(8);
  const RomModel model(arch, normal(rng, param_count(arch)));
  for (int c = 0; c < 20; ++c) {
    DenseVector x(2);
    x << rng.uniform(-1, 1), (c % 2 ? 1.0 : -1.0);
    if (c % 4 >= 2) std::swap(x(0), x(1));
    CHECK(std::abs(eval(model, x, kValue).value) < 1e-14);
  }
  CHECK(wrapper_alpha(arch.domain.center(), arch.domain) == doctest::Approx(1.0));
}

TEST_CASE("periodic models are periodic and the shift translates") {
  const RomArch arch = resnet(RomKind::ResNetPeriodic, 1, 6, 2, Activation::Tanh);
  CounterRng rng(9);
  const Index m = param_count(arch);
  DenseVector theta = normal(rng, m, 0.5);
  const RomModel model(arch, theta);
  for (int c = 0; c < 10; ++c) {
    DenseVector x(1), y(1);
    x << rng.uniform(0, 1);
    y << x(0) + 1.0;
    CHECK(eval(model, x, kValue).value == doctest::Approx(eval(model, y, kValue).value).epsilon(1e-12));
    // u with shift b + s at x equals u with shift b at x - s.
    const double s = rng.uniform(-0.5, 0.5);
    DenseVector shifted = theta;
    shifted(m - 1) += s;
    DenseVector xs(1);
    xs << x(0) - s;
    CHECK(eval(RomModel(arch, shifted), x, kValue).value ==
          doctest::Approx(eval(model, xs, kValue).value).epsilon(1e-12));
  }
}

TEST_CASE("sine basis is sqrt(2) sin(k pi x)") {
  const RomArch arch = RomArch::sine_basis_1d(3);
  DenseVector theta(3);
  theta << 0.2, -0.4, 1.5;
  DenseVector x(1);
  x << 0.3;
  double expect = 0.0;
  for (int k = 1; k <= 3; ++k) expect += theta(k - 1) * std::sqrt(2.0) * std::sin(k * std::numbers::pi * 0.3);
  CHECK(eval(RomModel(arch, theta), x, kValue).value == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("init_params is deterministic with zero biases") {
  const RomArch arch = resnet(RomKind::ResNetZeroBoundary, 2, 8, 2, Activation::Tanh);
  CHECK(init_params(arch, 5) == init_params(arch, 5));
  CHECK(init_params(arch, 5) != init_params(arch, 6));
  const DenseVector th = init_params(arch, 5);
  for (const auto& blk : param_layout(arch)) {
    const auto seg = th.segment(blk.offset, blk.size());
    if (!blk.is_weight) CHECK(seg.cwiseAbs().maxCoeff() == 0.0);
    else CHECK(seg.cwiseAbs().maxCoeff() <= std::sqrt(1.0 / static_cast<double>(blk.fan_in)));
  }
}

TEST_CASE("invalid architectures are rejected") {
  RomArch a = resnet(RomKind::ResNetZeroBoundary, 2, 0, 2, Activation::Tanh);
  CHECK_THROWS_AS(a.validate(), Error);
  RomArch b = RomArch::sine_basis_1d(2);
  b.basis.clear();
  CHECK_THROWS_AS(b.validate(), Error);
  const RomArch ok = RomArch::sine_basis_1d(2);
  CHECK_THROWS_AS(RomModel(ok, DenseVector::Zero(3)), Error);
}
