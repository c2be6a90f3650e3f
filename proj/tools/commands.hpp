#pragma once

// Subcommand implementations behind the rnot executable. Each returns the
// process exit code.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rnot::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigOrIoError = 1,
  kTrainingAborted = 2,
  kUnreliableEval = 3,
};

struct CommonOptions {
  std::string config;  // empty: library defaults
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<int> threads;
};

int cmd_train(const CommonOptions& opt);
int cmd_eval(const CommonOptions& opt, const std::string& checkpoint);
int cmd_transport(const CommonOptions& opt, const std::string& checkpoint, const std::string& input,
                  const std::string& output, const std::vector<double>& ts);
int cmd_diagnose_embedding(const CommonOptions& opt);
int cmd_sweep(const CommonOptions& opt);
int cmd_quantize(const CommonOptions& opt);

/// Output file for one interpolation time when several are requested:
/// "out.csv" -> "out_t0.5.csv".
std::string transport_output_path(const std::string& output, double t, bool multiple);
/// Per-point residual file written next to the transport output.
std::string residual_path(const std::string& output);

}  // namespace rnot::cli
