// paramflow: run the parameter-flow pipeline stage by stage.
//
//   paramflow <command> --config run.json [--seed N] [--set k=v]... [--threads N] [--out DIR]
//
// Exit codes: 0 ok, 2 config error, 3 missing or mismatched artifact,
// 4 numeric failure, 5 verification failure.

#include "paramflow/config.hpp"
#include "paramflow/pipeline.hpp"
#include "paramflow/verify.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

using namespace paramflow;

namespace {

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument: return 2;
    case ErrorCode::MissingArtifact:
    case ErrorCode::ChecksumMismatch:
    case ErrorCode::CacheMismatch:
    case ErrorCode::IoError: return 3;
    default: return 4;
  }
}

void print_summary(const Json& report) {
  const Json& s = report.at("summary");
  std::cout << "test initials " << s.at("n_test") << ", completed " << s.at("completed") << ", escaped "
            << s.at("escaped") << ", mean relative error " << s.at("mean_rel") << ", max " << s.at("max_rel") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter-space flows for evolution PDEs"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  int threads = 1;
  std::optional<std::string> out_dir;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"fit-initial", "fit the anchor initials"},
      {"sample-gram", "assemble (or resume) the Gram cache"},
      {"gen-trajectories", "march Gram-projected trajectories"},
      {"train-control", "train the control field"},
      {"solve", "fit test initials and integrate the learned field"},
      {"reference", "compute reference solutions for the test initials"},
      {"eval", "error curves and report.json"},
      {"export-slice", "field slices at eval.slice_times"},
      {"verify", "run the property suites"},
      {"run", "every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the run seed");
    sub->add_option("--set", overrides, "dotted override key=value (repeatable)");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    const RunConfig cfg =
        load_config(config_path, overrides, seed, out_dir ? std::optional<std::filesystem::path>(*out_dir) : std::nullopt);
    if (cmd == "fit-initial") {
      const AnchorStore s = cmd_fit_initial(cfg, threads);
      Index reached = 0;
      for (const auto& f : s.fits) reached += f.reached;
      std::cout << "anchors " << s.fits.size() << ", reached target " << reached << "\n";
    } else if (cmd == "sample-gram") {
      const AssemblyReport r = cmd_sample_gram(cfg, threads);
      std::cout << "records computed " << r.computed << ", reused " << r.reused << ", skipped " << r.skipped << "\n";
    } else if (cmd == "gen-trajectories") {
      const auto trajs = cmd_gen_trajectories(cfg, threads);
      Index done = 0;
      for (const auto& t : trajs) done += t.completed();
      std::cout << "trajectories " << trajs.size() << ", completed " << done << "\n";
    } else if (cmd == "train-control") {
      const TrainResult r = cmd_train_control(cfg);
      const LossRecord& last = r.history.back();
      std::cout << "steps " << r.history.size() << ", stop " << to_string(r.reason) << ", l1 " << last.l1 << ", l2 "
                << last.l2 << "\n";
    } else if (cmd == "solve") {
      const auto sols = cmd_solve(cfg, threads);
      for (const auto& s : sols)
        std::cout << "initial " << s.index << ": " << to_string(s.traj.status) << ", fit rmse " << s.fit.heldout_rmse
                  << "\n";
    } else if (cmd == "reference") {
      std::cout << "references " << cmd_reference(cfg, threads).size() << "\n";
    } else if (cmd == "eval") {
      print_summary(cmd_eval(cfg, threads));
    } else if (cmd == "export-slice") {
      for (const auto& p : cmd_export_slice(cfg)) std::cout << p.string() << "\n";
    } else if (cmd == "run") {
      print_summary(cmd_run(cfg, threads));
    } else if (cmd == "verify") {
      const VerifyReport rep = run_verify(cfg, threads, cfg.out_dir / "verify_scratch");
      std::filesystem::create_directories(cfg.out_dir);
      write_json_file(cfg.out_dir / "verify.json", rep.to_json());
      for (const auto& c : rep.checks) std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
      return rep.passed() ? 0 : 5;
    }
  } catch (const Error& e) {
    std::cerr << "paramflow " << cmd << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "paramflow " << cmd << ": " << e.what() << "\n";
    return 4;
  }
  return 0;
}
