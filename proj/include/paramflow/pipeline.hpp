#pragma once

#include "paramflow/assembly.hpp"
#include "paramflow/config.hpp"
#include "paramflow/control_net.hpp"
#include "paramflow/evolve.hpp"
#include "paramflow/fit.hpp"
#include "paramflow/reference.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace paramflow {

/// Every artifact starts with {kind, format_version, arch_hash, seed}.
Json artifact_header(const RunConfig& cfg, const std::string& kind);
/// ChecksumMismatch unless kind, format_version, arch_hash and seed agree.
void check_header(const Json& header, const RunConfig& cfg, const std::string& kind);

enum class InitialRole { Anchor, Test };
/// Deterministic draw of the index-th initial of the configured family.
InitialSpec draw_initial(const RunConfig& cfg, InitialRole role, Index index);

/// Options for the fit of the index-th initial of a role.
FitOptions fit_options(const RunConfig& cfg, InitialRole role, Index index);

/// Parameters returned for the anchors (caches/anchors.jsonl).
struct AnchorStore {
  std::vector<InitialSpec> specs;
  std::vector<FitResult> fits;
};

ThetaSpace theta_space(const RunConfig& cfg);

/// fit-initial: fits the anchors. No-op when counts.n_anchor is 0.
AnchorStore cmd_fit_initial(const RunConfig& cfg, int threads);
AnchorStore load_anchors(const RunConfig& cfg);

/// sample-gram: assembles (or resumes) caches/gram.jsonl.
AssemblyReport cmd_sample_gram(const RunConfig& cfg, int threads);

/// gen-trajectories: counts.n_traj Gram marches of counts.n_t steps, started
/// from the anchors first and from Theta samples after that.
std::vector<ParamTrajectory> cmd_gen_trajectories(const RunConfig& cfg, int threads);

/// train-control: checkpoints/control.json and curves/loss_history.csv.
TrainResult cmd_train_control(const RunConfig& cfg);
ControlNet load_control(const RunConfig& cfg);

struct Solution {
  Index index = 0;
  InitialSpec spec;
  FitResult fit;
  ParamTrajectory traj;
};

/// solve: fits each test initial and integrates the learned field over the
/// horizon (caches/solutions.jsonl).
std::vector<Solution> cmd_solve(const RunConfig& cfg, int threads);
std::vector<Solution> load_solutions(const RunConfig& cfg);

/// reference: exact or IMEX reference per test initial (caches/references.jsonl).
std::vector<ReferenceSolution> cmd_reference(const RunConfig& cfg, int threads);
std::vector<ReferenceSolution> load_references(const RunConfig& cfg);
ReferenceSolution make_reference(const RunConfig& cfg, const InitialSpec& spec);

/// eval: curves/error_NNN.csv and report.json; returns the report.
Json cmd_eval(const RunConfig& cfg, int threads);

/// export-slice: slices/slice_NNN_t<time>.csv for every test initial and
/// every eval.slice_times entry (nearest stored time).
std::vector<std::filesystem::path> cmd_export_slice(const RunConfig& cfg);

/// Every stage in order; returns the eval report.
Json cmd_run(const RunConfig& cfg, int threads);

Json to_json(const ReferenceSolution& ref);
ReferenceSolution reference_from_json(const Json& j);

}  // namespace paramflow
