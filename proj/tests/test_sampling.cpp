#include "paramflow/domain.hpp"
#include "paramflow/sampling.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace paramflow;
using namespace testsupport;

TEST_CASE("Gauss-Legendre rules integrate polynomials exactly") {
  for (int n : {1, 3, 8, 20}) {
    DenseVector x, w;
    gauss_legendre(n, x, w);
    CHECK(w.sum() == doctest::Approx(2.0).epsilon(1e-14));
    // degree 2n - 1 is exact
    const int deg = 2 * n - 2;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += w(i) * std::pow(x(i), deg);
    CHECK(s == doctest::Approx(2.0 / (deg + 1)).epsilon(1e-12));
  }
  const QuadratureRule r = gauss_rule(Box{DenseVector::Zero(2), DenseVector::Constant(2, 2.0)}, 5);
  CHECK(r.size() == 25);
  CHECK(r.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
  // domain average of x y on [0,2]^2 is 1
  double avg = 0.0;
  for (Index j = 0; j < r.size(); ++j) avg += r.weights(j) * r.points(0, j) * r.points(1, j);
  CHECK(avg == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("omega samples are deterministic and inside the box") {
  const Box b{DenseVector::Constant(3, -1.0), DenseVector::Constant(3, 2.0)};
  const SampleBatch s1 = sample_omega(b, 500, 42), s2 = sample_omega(b, 500, 42), s3 = sample_omega(b, 500, 43);
  CHECK(s1.points == s2.points);
  CHECK(s1.points != s3.points);
  for (Index j = 0; j < s1.size(); ++j) CHECK(b.contains(s1.point(j)));
  // mean near the centre
  CHECK((s1.points.rowwise().mean() - b.center()).cwiseAbs().maxCoeff() < 0.15);
  const QuadratureRule mc = monte_carlo_rule(s1.points);
  CHECK(mc.weights.sum() == doctest::Approx(1.0));
}

TEST_CASE("theta box samples stay in the box") {
  const SampleBatch s = sample_theta(ThetaBox{7, 0.5}, 400, 1);
  CHECK(s.dim() == 7);
  CHECK(s.points.cwiseAbs().maxCoeff() <= 0.5);
  CHECK(diameter(ThetaBox{4, 0.5}) == doctest::Approx(2.0));
}

TEST_CASE("anchor ball samples stay within the radius of some anchor") {
  CounterRng rng(3);
  AnchorBalls balls;
  balls.radius = 0.7;
  for (int k = 0; k < 4; ++k) balls.anchors.push_back(normal(rng, 5, 3.0));
  const SampleBatch s = sample_theta(balls, 800, 9);
  double max_r = 0.0;
  for (Index j = 0; j < s.size(); ++j) {
    double best = 1e300;
    for (const auto& a : balls.anchors) best = std::min(best, (s.point(j) - a).norm());
    CHECK(best <= 0.7 + 1e-12);
    max_r = std::max(max_r, best);
  }
  CHECK(max_r > 0.6);  // radial law r U^{1/m} puts most mass near the shell
  double spread = 0.0;
  for (const auto& a : balls.anchors)
    for (const auto& b : balls.anchors) spread = std::max(spread, (a - b).norm());
  CHECK(diameter(balls) == doctest::Approx(spread + 1.4));
}

TEST_CASE("invalid sampling requests") {
  CHECK_THROWS_AS(sample_theta(ThetaBox{0, 1.0}, 5, 1), Error);
  CHECK_THROWS_AS(sample_theta(AnchorBalls{}, 5, 1), Error);
  CHECK_THROWS_AS(sample_omega(Box::unit(2), 0, 1), Error);
}

TEST_CASE("derived seeds separate streams") {
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "b", 0));
  CHECK(derive_seed(1, "a", 0) != derive_seed(2, "a", 0));
  CounterRng r1(5, 1), r2(5, 1);
  for (int i = 0; i < 10; ++i) CHECK(r1.next_u64() == r2.next_u64());
}
