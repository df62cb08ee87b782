#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace pyrpoint::cli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3 };

struct SynthArgs {
  std::string recipe;
  std::string out;  // .ply
  bool ascii = false;
};

struct TrainArgs {
  std::string config;
  std::string dataset;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> max_steps;
  bool resume = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string split = "test";
  std::string out_dir;  // default: <checkpoint dir>/eval-<split>
  bool dump_predictions = false;
};

struct GradcheckArgs {
  std::string scope = "all";
  std::uint64_t seed = 0;
  std::string out_dir;  // manifest and report; empty = no files
  bool inject_fault = false;
};

struct AblateArgs {
  std::string config;
  std::string dataset;
  std::string out_dir;
  std::string grid = "both";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> max_steps;
};

struct SummaryArgs {
  std::string config;
};

/// Each command reports to `out`/`err` and returns an ExitCode. Library
/// errors map to 2 (configuration, input, I/O) or 3 (numeric failure).
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);
int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err);
int cmd_summary(const SummaryArgs& args, std::ostream& out, std::ostream& err);

/// Arguments of the current process, recorded in manifests.
void set_command_line(std::vector<std::string> argv);

}  // namespace pyrpoint::cli
