#pragma once

// Stochastic maximisation of the Kantorovich semi-dual
//   J(psi) = E_mu[psi^c(x)] + E_nu[psi(y)]
// with envelope-theorem gradients (the argmin is held fixed).

#include <functional>
#include <stdexcept>
#include <vector>

#include "rnot/ctransform.hpp"
#include "rnot/measure.hpp"

namespace rnot {

struct TrainConfig {
  int batch_size = 256;
  int steps = 1000;
  double outer_lr = 1e-3;
  AdamParams outer_adam{};
  InnerSolverConfig inner{};
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only the final model
  int threads = 1;
  // Abort when more than this fraction of a batch fails for `abort_patience`
  // consecutive steps.
  double abort_failure_fraction = 0.5;
  int abort_patience = 10;

  void validate() const;
};

struct TrainRecord {
  int step = 0;
  double loss = 0.0;
  double mean_residual = 0.0;
  double mean_iters = 0.0;
  double ms = 0.0;
  int failures = 0;  // inner solves that did not converge
};

struct TrainReport {
  std::vector<TrainRecord> records;
  std::string checkpoint_path;
};

/// Non-finite loss/gradient or persistent inner-solver failure. Carries the
/// last model whose step completed with finite values.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, PotentialModel last_good, int step)
      : std::runtime_error(what), last_good_(std::move(last_good)), step_(step) {}
  const PotentialModel& last_good() const { return last_good_; }
  int step() const { return step_; }

 private:
  PotentialModel last_good_;
  int step_;
};

struct SemidualLoss {
  double loss = 0.0;
  std::vector<InnerSolveResult> per_x;
};

/// loss = -(1/B) sum_i psi^c(x_i) - (1/B) sum_j psi(y_j), with ys as the
/// warm-start pool.
SemidualLoss semidual_loss(const PotentialModel& model, const std::vector<Point>& xs,
                           const std::vector<Point>& ys, const InnerSolverConfig& cfg,
                           int threads = 1);

/// d loss / d theta = (1/B) sum_i grad_theta psi(y*_i) - (1/B) sum_j grad_theta psi(y_j).
MlpGradient envelope_grad(const PotentialModel& model, const std::vector<Point>& xs,
                          const std::vector<Point>& ys, const InnerSolverConfig& cfg,
                          int threads = 1);

struct StepResult {
  SemidualLoss loss;
  MlpGradient grad;
  int failures = 0;
};
StepResult semidual_step(const PotentialModel& model, const std::vector<Point>& xs,
                         const std::vector<Point>& ys, const InnerSolverConfig& cfg, int threads);

using CheckpointFn = std::function<void(int step, const PotentialModel&)>;

struct TrainResult {
  PotentialModel model;
  TrainReport report;
};

TrainResult train(const Measure& source, const Measure& target, PotentialModel model,
                  const TrainConfig& cfg, const CheckpointFn& on_checkpoint = {});

struct MongeGap {
  double mean_cost = 0.0;  // E_mu[c(x, T(x))]
  double loss = 0.0;       // L(theta) on fresh samples
  double gap = 0.0;        // mean_cost + loss
  double relative = 0.0;   // |gap| / mean_cost
};

MongeGap monge_gap(const PotentialModel& model, const Measure& source, const Measure& target,
                   std::size_t n_samples, const InnerSolverConfig& cfg, Rng& rng, int threads = 1);

}  // namespace rnot
