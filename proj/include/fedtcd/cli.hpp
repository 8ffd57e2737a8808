#pragma once

// Subcommands behind the `fedtcd` executable.  Every command reads and writes
// inside one output directory:
//
//   config.json                  config echo
//   dataset/client_<k>.ddic      one panel per client
//   dataset/heldout.ddic         evaluation panels (same graph, fresh noise)
//   dataset/truth.ddgt           ground truth and oracle masks
//   priors.ddps, priors.txt      skeleton priors and their summary
//   checkpoint.ddck              parameters after the latest round
//   estimate.ddge                decoded graph trajectory
//   rounds.csv, loss_curve.csv   training logs
//   timings.csv                  wall-clock measurements (not reproducible)
//   eval.csv, eval_t.csv, eval.txt
//
// Binary files get a JSON sidecar (<file>.json) with the format tag and the
// config echo.

#include <filesystem>
#include <string>
#include <vector>

#include "fedtcd/config.hpp"
#include "fedtcd/metrics.hpp"

namespace fedtcd {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

// Environment variable naming the default output root.
inline constexpr const char* kOutputEnv = "FEDTCD_OUT";

std::filesystem::path resolve_output_dir(const ExperimentConfig& config, const std::string& flag);

void cmd_synth(const ExperimentConfig& config, const std::filesystem::path& out, bool csv = false);
DismResult cmd_dism(const ExperimentConfig& config, const std::filesystem::path& out);
DctoResult cmd_dcto(const ExperimentConfig& config, const std::filesystem::path& out, bool resume = false);
EvalReport cmd_eval(const ExperimentConfig& config, const std::filesystem::path& out);
EvalReport cmd_pipeline(const ExperimentConfig& config, const std::filesystem::path& out, bool csv = false);

std::vector<TimeSeriesPanel> load_panels(const std::filesystem::path& out, std::size_t K);

// Full command line, including argv[0].  Returns an exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace fedtcd
