#include "paramflow/control_net.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace paramflow;
using namespace testsupport;

namespace {

struct Fixture {
  ControlArch arch{4, 6, 3};
  ControlNet net;
  std::vector<GramRecord> recs;
  std::vector<TrajPair> pairs;

  explicit Fixture(std::uint64_t seed) : net(arch, DenseVector::Zero(param_count(arch))) {
    CounterRng rng(seed);
    net = ControlNet(arch, normal(rng, param_count(arch), 0.5));
    for (int j = 0; j < 9; ++j) {
      recs.push_back({normal(rng, 4), random_psd(rng, 4), normal(rng, 4), 0, 0});
      pairs.push_back({normal(rng, 4), normal(rng, 4)});
    }
  }
};

}  // namespace

TEST_CASE("GeLU uses the exact normal CDF") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(gelu(-1.0) == doctest::Approx(-0.15865525393145707).epsilon(1e-13));
  CHECK(gelu(-40.0) == doctest::Approx(0.0));
  for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5})
    CHECK(gelu_prime(x) == doctest::Approx(central([&](double h) { return gelu(x + h); }, 1e-6)).epsilon(1e-8));
}

TEST_CASE("parameter count and zero-initialized output") {
  const ControlArch a{5, 7, 3};
  // U0, b0, 2 x {U, b, Ubar, bbar}, W, c
  CHECK(param_count(a) == 7 * 5 + 7 + 2 * (49 + 7 + 35 + 7) + 5 * 7 + 5);
  const ControlNet n = ControlNet::initialized(a, 3);
  CounterRng rng(1);
  CHECK(n.forward(normal(rng, 5)).norm() == 0.0);
  CHECK(n.xi() == ControlNet::initialized(a, 3).xi());
  CHECK_THROWS_AS(ControlArch({5, 0, 3}).validate(), Error);
}

TEST_CASE("batched forward agrees with single evaluations") {
  Fixture f(2);
  CounterRng rng(3);
  DenseMatrix th(4, 300);
  for (Index j = 0; j < th.cols(); ++j) th.col(j) = normal(rng, 4);
  const DenseMatrix V = f.net.forward_batch(th);
  for (Index j : {0, 127, 128, 299}) CHECK((V.col(j) - f.net.forward(th.col(j))).norm() < 1e-13);
}

TEST_CASE("loss gradients match central differences") {
  Fixture f(4);
  CounterRng rng(5);
  for (int c = 0; c < 10; ++c) {
    const DenseVector d = normal(rng, f.net.xi().size());
    const DenseVector xi = f.net.xi();
    const auto l1 = [&](const DenseVector& z) { return loss_l1(ControlNet(f.arch, z), f.recs).value; };
    const auto l2 = [&](const DenseVector& z) { return loss_l2(ControlNet(f.arch, z), f.pairs).value; };
    CHECK(rel_err(loss_l1(f.net, f.recs).grad.dot(d), directional(l1, xi, d, 1e-6)) < 1e-6);
    CHECK(rel_err(loss_l2(f.net, f.pairs).grad.dot(d), directional(l2, xi, d, 1e-6)) < 1e-6);
  }
  // a selection averages over the selected records only
  const LossValue sel = loss_l1(f.net, f.recs, {2, 5});
  const DenseVector v2 = f.net.forward(f.recs[2].theta), v5 = f.net.forward(f.recs[5].theta);
  CHECK(sel.value == doctest::Approx(0.5 * ((f.recs[2].G * v2 - f.recs[2].p).squaredNorm() +
                                            (f.recs[5].G * v5 - f.recs[5].p).squaredNorm())));
}

TEST_CASE("jvp and vjp are consistent and match differences") {
  Fixture f(6);
  CounterRng rng(7);
  for (int c = 0; c < 10; ++c) {
    const DenseVector th = normal(rng, 4), d = normal(rng, 4), w = normal(rng, 4);
    const DenseVector jd = f.net.jvp(th, d);
    CHECK(w.dot(jd) == doctest::Approx(f.net.vjp(th, w).dot(d)).epsilon(1e-12));
    const DenseVector fd = (f.net.forward(th + 1e-6 * d) - f.net.forward(th - 1e-6 * d)) / 2e-6;
    CHECK((jd - fd).norm() <= 1e-7 * (1 + jd.norm()));
  }
}

TEST_CASE("loss inputs are checked") {
  Fixture f(8);
  std::vector<GramRecord> bad{{DenseVector::Zero(3), DenseMatrix::Identity(3, 3), DenseVector::Zero(3), 0, 0}};
  CHECK_THROWS_AS(loss_l1(f.net, bad), Error);
}

TEST_CASE("ADAM first step moves each coordinate by about lr against the gradient") {
  Adam adam(3, 0.01, 0.9, 0.999, 1e-8);
  DenseVector x = DenseVector::Zero(3);
  DenseVector g(3);
  g << 2.0, -0.5, 1e-3;
  adam.step(x, g);
  // bias-corrected moments are g and g^2 after one step
  for (int i = 0; i < 3; ++i) CHECK(x(i) == doctest::Approx(-0.01 * g(i) / (std::abs(g(i)) + 1e-8)).epsilon(1e-10));
  CHECK(adam.steps() == 1);
}

TEST_CASE("ADAM minimizes a quadratic") {
  Adam adam(2, 0.05, 0.9, 0.999, 1e-8);
  DenseVector x(2);
  x << 3.0, -2.0;
  for (int k = 0; k < 2000; ++k) {
    DenseVector g(2);
    g << 2.0 * (x(0) - 1.0), 20.0 * (x(1) + 0.5);
    adam.step(x, g);
  }
  CHECK(x(0) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(x(1) == doctest::Approx(-0.5).epsilon(1e-3));
}

TEST_CASE("stopping rules") {
  PlateauDetector target(0.1, 0.1, 10);
  CHECK_FALSE(target.push(1.0));
  CHECK(target.push(0.05));
  CHECK(target.below_target());

  PlateauDetector flat(1e-9, 0.1, 10);
  int steps = 0;
  while (!flat.push(1.0)) ++steps;
  CHECK(flat.plateaued());
  CHECK(steps == 10);  // the window fills after 11 losses

  PlateauDetector falling(1e-9, 0.1, 10);
  double loss = 1.0;
  for (int k = 0; k < 200; ++k, loss *= 0.99) CHECK_FALSE(falling.push(loss));  // 1% per step

  PlateauDetector off(1e-9, 0.1, 0);
  for (int k = 0; k < 50; ++k) CHECK_FALSE(off.push(1.0));
}

TEST_CASE("training reduces the loss and is reproducible") {
  Fixture f(9);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.batch_size = 4;
  cfg.max_steps = 300;
  cfg.stop_loss = 1e-12;
  cfg.plateau_window = 0;
  cfg.zeta = 0.5;
  cfg.seed = 4;
  const ControlNet start = ControlNet::initialized(f.arch, 1);
  const TrainResult a = train(start, f.recs, f.pairs, cfg);
  const TrainResult b = train(start, f.recs, f.pairs, cfg);
  CHECK(a.net.xi() == b.net.xi());
  CHECK(a.history.size() == 300);
  CHECK(a.reason == StopReason::MaxSteps);
  const LossRecord before = evaluate_losses(start, f.recs, f.pairs, 0.5);
  const LossRecord after = evaluate_losses(a.net, f.recs, f.pairs, 0.5);
  CHECK(after.total < 0.8 * before.total);
  CHECK(after.total == doctest::Approx(after.l1 + 0.5 * after.l2));

  cfg.stop_loss = 1e9;
  const TrainResult c = train(start, f.recs, f.pairs, cfg);
  CHECK(c.reason == StopReason::TargetLoss);
  CHECK(c.history.size() == 1);
  CHECK(c.net.xi() == start.xi());  // stopped before any update
}

TEST_CASE("control checkpoints round-trip and carry the ROM hash") {
  Fixture f(10);
  const Json j = control_checkpoint(f.net, "abc123", 5);
  const ControlNet back = control_from_checkpoint(j, "abc123");
  CHECK(back.xi() == f.net.xi());
  CHECK(back.arch() == f.arch);
  try {
    control_from_checkpoint(j, "def456");
    FAIL("expected ChecksumMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ChecksumMismatch);
  }
  Json bumped = j;
  bumped["format_version"] = kFormatVersion + 1;
  CHECK_THROWS_AS(control_from_checkpoint(bumped, "abc123"), Error);
}
