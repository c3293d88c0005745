#pragma once

#include "paramflow/core.hpp"

namespace paramflow {

/// Axis-aligned box (lo, hi) in R^d.
struct Box {
  DenseVector lo;
  DenseVector hi;

  static Box unit(int d) { return {DenseVector::Zero(d), DenseVector::Ones(d)}; }
  static Box symmetric(int d, double half_width = 1.0) {
    return {DenseVector::Constant(d, -half_width), DenseVector::Constant(d, half_width)};
  }

  int dim() const { return static_cast<int>(lo.size()); }
  DenseVector extent() const { return hi - lo; }
  double volume() const { return extent().prod(); }
  DenseVector center() const { return 0.5 * (lo + hi); }
  bool contains(const DenseVector& x, double slack = 0.0) const {
    return x.size() == lo.size() && (x.array() >= lo.array() - slack).all() &&
           (x.array() <= hi.array() + slack).all();
  }
  void validate() const;
};

bool operator==(const Box& a, const Box& b);

/// Points (d x N, one column per node) with weights summing to one, so that
/// sum_i w_i f(x_i) estimates the domain average of f.
struct QuadratureRule {
  DenseMatrix points;
  DenseVector weights;

  Index size() const { return weights.size(); }
  int dim() const { return static_cast<int>(points.rows()); }
};

/// Gauss-Legendre nodes and weights on [-1, 1] (weights sum to 2).
void gauss_legendre(int n, DenseVector& nodes, DenseVector& weights);

/// Tensor-product Gauss-Legendre rule on a box with `n_per_dim` nodes per axis.
QuadratureRule gauss_rule(const Box& box, int n_per_dim);

/// Equal-weight rule over given points (Monte-Carlo estimate).
QuadratureRule monte_carlo_rule(DenseMatrix points);

}  // namespace paramflow
