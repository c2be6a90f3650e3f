#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"

namespace {

void add_common(CLI::App* cmd, rnot::cli::CommonOptions& opt) {
  cmd->add_option("--config", opt.config, "Experiment config (JSON) or a run manifest");
  cmd->add_option("--seed", opt.seed, "Root seed, overrides the config");
  cmd->add_option("--out", opt.out, "Output directory")->capture_default_str();
  cmd->add_option("--threads", opt.threads, "Worker threads (default: $RNOT_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rnot::cli;
  CLI::App app{"Neural optimal transport on spheres and tori"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 success, 1 config or I/O error, 2 training aborted, 3 unreliable evaluation.");

  CommonOptions opt;
  std::string checkpoint, input, output;
  std::vector<double> ts{1.0};

  auto* train = app.add_subcommand("train", "Train an RNOT or RCPM model");
  add_common(train, opt);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (KL, ESS, cost, Monge gap)");
  add_common(eval, opt);
  eval->add_option("--checkpoint", checkpoint, "checkpoint.json")->required();

  auto* transport = app.add_subcommand("transport", "Push a point cloud through a learned map");
  add_common(transport, opt);
  transport->add_option("--checkpoint", checkpoint, "checkpoint.json")->required();
  transport->add_option("--input", input, "Input points CSV")->required();
  transport->add_option("--output", output, "Output points CSV")->required();
  transport->add_option("--t", ts, "Interpolation times in [0, 1]; several values give one file each")
      ->capture_default_str();

  auto* diag = app.add_subcommand("diagnose-embedding", "Landmark diagnostics per M for RND and FPS");
  add_common(diag, opt);

  auto* sweep = app.add_subcommand("sweep", "Dimension sweep; resumes from an existing sweep.csv");
  add_common(sweep, opt);

  auto* quantize = app.add_subcommand("quantize", "Quantization error V_m and its log-log slope");
  add_common(quantize, opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigOrIoError;
  }

  if (*train) return cmd_train(opt);
  if (*eval) return cmd_eval(opt, checkpoint);
  if (*transport) return cmd_transport(opt, checkpoint, input, output, ts);
  if (*diag) return cmd_diagnose_embedding(opt);
  if (*sweep) return cmd_sweep(opt);
  if (*quantize) return cmd_quantize(opt);
  return kConfigOrIoError;
}
