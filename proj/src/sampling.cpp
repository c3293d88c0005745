#include "paramflow/sampling.hpp"

#include "paramflow/random.hpp"

#include <cmath>

namespace paramflow {

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

Index theta_dim(const ThetaSpace& space) {
  return std::visit(overloaded{
                        [](const ThetaBox& b) { return b.dim; },
                        [](const AnchorBalls& a) { return a.anchors.empty() ? Index{0} : a.anchors.front().size(); },
                    },
                    space);
}

void validate(const ThetaSpace& space) {
  std::visit(overloaded{
                 [](const ThetaBox& b) {
                   if (b.dim < 1) throw Error(ErrorCode::InvalidArgument, "theta box: dim >= 1");
                   if (!(b.half_width > 0.0)) throw Error(ErrorCode::InvalidArgument, "theta box: half_width > 0");
                 },
                 [](const AnchorBalls& a) {
                   if (a.anchors.empty()) throw Error(ErrorCode::InvalidArgument, "anchor balls: no anchors");
                   if (!(a.radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "anchor balls: radius > 0");
                   for (const auto& v : a.anchors) {
                     if (v.size() != a.anchors.front().size())
                       throw Error(ErrorCode::InvalidArgument, "anchor balls: anchors differ in length");
                     require_finite(v, "anchor");
                   }
                 },
             },
             space);
}

double diameter(const ThetaSpace& space) {
  return std::visit(overloaded{
                        [](const ThetaBox& b) { return 2.0 * b.half_width * std::sqrt(static_cast<double>(b.dim)); },
                        [](const AnchorBalls& a) {
                          double spread = 0.0;
                          for (std::size_t i = 0; i < a.anchors.size(); ++i)
                            for (std::size_t j = i + 1; j < a.anchors.size(); ++j)
                              spread = std::max(spread, (a.anchors[i] - a.anchors[j]).norm());
                          return spread + 2.0 * a.radius;
                        },
                    },
                    space);
}

SampleBatch sample_omega(const Box& domain, Index n, std::uint64_t seed) {
  domain.validate();
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "sample_omega: n >= 1");
  CounterRng rng(seed, fnv1a("sampling.omega"));
  SampleBatch batch;
  batch.seed = seed;
  batch.generator_tag = "omega/uniform/splitmix64";
  batch.points.resize(domain.dim(), n);
  for (Index j = 0; j < n; ++j)
    for (int i = 0; i < domain.dim(); ++i) batch.points(i, j) = rng.uniform(domain.lo(i), domain.hi(i));
  return batch;
}

SampleBatch sample_theta(const ThetaSpace& space, Index n, std::uint64_t seed) {
  validate(space);
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "sample_theta: n >= 1");
  const Index m = theta_dim(space);
  CounterRng rng(seed, fnv1a("sampling.theta"));
  SampleBatch batch;
  batch.seed = seed;
  batch.points.resize(m, n);
  std::visit(overloaded{
                 [&](const ThetaBox& b) {
                   batch.generator_tag = "theta/box/splitmix64";
                   for (Index j = 0; j < n; ++j)
                     for (Index i = 0; i < m; ++i) batch.points(i, j) = rng.uniform(-b.half_width, b.half_width);
                 },
                 [&](const AnchorBalls& a) {
                   batch.generator_tag = "theta/anchor_l2_balls/splitmix64";
                   DenseVector dir(m);
                   for (Index j = 0; j < n; ++j) {
                     const auto k = rng.below(a.anchors.size());
                     double norm = 0.0;
                     do {
                       for (Index i = 0; i < m; ++i) dir(i) = rng.normal();
                       norm = dir.norm();
                     } while (norm == 0.0);
                     const double r = a.radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(m));
                     batch.points.col(j) = a.anchors[k] + (r / norm) * dir;
                   }
                 },
             },
             space);
  return batch;
}

}  // namespace paramflow
