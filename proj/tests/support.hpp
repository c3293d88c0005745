#pragma once

// Shared helpers for the test binaries: central differences, random draws
// and scratch directories.

#include "paramflow/core.hpp"
#include "paramflow/random.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <unistd.h>

namespace testsupport {

using paramflow::DenseMatrix;
using paramflow::DenseVector;
using paramflow::Index;

inline double central(const std::function<double(double)>& f, double h) { return (f(h) - f(-h)) / (2.0 * h); }

/// Directional derivative of f at x along d by central differences.
inline double directional(const std::function<double(const DenseVector&)>& f, const DenseVector& x,
                          const DenseVector& d, double h) {
  return (f(x + h * d) - f(x - h * d)) / (2.0 * h);
}

/// |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline DenseVector normal(paramflow::CounterRng& rng, Index n, double scale = 1.0) {
  DenseVector v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

inline DenseVector uniform(paramflow::CounterRng& rng, Index n, double lo, double hi) {
  DenseVector v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

inline DenseMatrix random_psd(paramflow::CounterRng& rng, Index m, Index rank = -1) {
  const Index r = rank < 0 ? m : rank;
  DenseMatrix A(m, r);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < r; ++j) A(i, j) = rng.normal();
  return A * A.transpose() / static_cast<double>(std::max<Index>(r, 1));
}

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("paramflow_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace testsupport

