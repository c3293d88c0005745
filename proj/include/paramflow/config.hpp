#pragma once

#include "paramflow/control_net.hpp"
#include "paramflow/evolve.hpp"
#include "paramflow/fit.hpp"
#include "paramflow/pde_ops.hpp"
#include "paramflow/reference.hpp"
#include "paramflow/rom.hpp"
#include "paramflow/serialize.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace paramflow {

struct ThetaSpaceConfig {
  enum class Kind { Box, AnchorBalls };
  Kind kind = Kind::Box;
  double half_width = 1.0;
  double radius = 3.0;
};

/// Family that anchor and test initials are drawn from.
struct InitialFamily {
  enum class Kind { RandomTheta, HeatCombo, ChebCombo };
  Kind kind = Kind::RandomTheta;
  double half_width = 1.0;  // RandomTheta entries; HeatCombo coefficients
  int heat_terms = 2;       // HeatCombo: c_1..c_k uniform in [-half_width, half_width]
  int max_degree = 3;       // ChebCombo
  int max_terms = 4;        // ChebCombo
};

struct Counts {
  Index n_theta = 2000;
  Index n_x = 1000;
  Index n_traj = 0;
  Index n_t = 20;
  Index n_anchor = 0;
  Index n_test = 10;
};

struct RunConfig {
  std::string name;
  std::uint64_t seed = 0;
  Problem problem;
  RomArch rom;
  ControlArch control;
  ThetaSpaceConfig theta_space;
  Counts counts;
  int gauss_nodes = 0;        // assembly and march projection rule
  double march_h = 1e-3;
  double ridge_rel = 1e-6;
  double escape_factor = 10.0;
  TrainConfig train;
  InitialFamily initials;
  FitOptions fit;
  bool fit_warm_start = true;  // start fits from the first anchor when anchors exist
  Scheme scheme = Scheme::RK4;
  Index n_steps = 200;
  Index ref_nx = 100;
  Index ref_nt = 2000;
  Index ref_snapshots = 64;
  ErrorOptions eval;
  std::vector<double> slice_times;
  Index slice_points = 41;
  std::filesystem::path out_dir = "out";
  Json json;  // merged document the fields were read from

  std::filesystem::path checkpoints() const { return out_dir / "checkpoints"; }
  std::filesystem::path caches() const { return out_dir / "caches"; }
  std::filesystem::path curves() const { return out_dir / "curves"; }
  std::filesystem::path slices() const { return out_dir / "slices"; }
  std::filesystem::path report() const { return out_dir / "report.json"; }
};

/// Built-in defaults that every config is merged onto.
Json default_config();

/// Applies "a.b.c=value"; the value is parsed as JSON when possible and
/// kept as a string otherwise.
void apply_override(Json& doc, const std::string& assignment);

RunConfig parse_config(const Json& doc);

/// Reads a config file, merges it onto the defaults, applies overrides and
/// validates. All failures raise ConfigError.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {},
                      std::optional<std::uint64_t> seed = std::nullopt,
                      std::optional<std::filesystem::path> out_dir = std::nullopt);

}  // namespace paramflow
