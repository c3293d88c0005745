#pragma once

#include "paramflow/config.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace paramflow {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool passed() const;
  Json to_json() const;
};

/// Property suites: analytic derivatives against central differences, ODE
/// orders and the Euler bound, Gram and projection oracles, the gradient
/// descent lemma, the a-priori bound on a heat run, and byte-level
/// determinism of caches across thread counts and resumed runs. Scratch files
/// go under `scratch`, which is removed afterwards.
VerifyReport run_verify(const RunConfig& cfg, int threads, const std::filesystem::path& scratch);

}  // namespace paramflow
