#include "rnot/semidual.hpp"

#include <chrono>
#include <cmath>

#include "rnot/parallel.hpp"

namespace rnot {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (!(outer_lr > 0)) throw std::invalid_argument("train: outer_lr must be positive");
  inner.validate();
}

namespace {

void check_batches(const PotentialModel& model, const std::vector<Point>& xs,
                   const std::vector<Point>& ys) {
  if (xs.empty() || ys.empty()) throw std::invalid_argument("semidual: empty batch");
  for (const auto& p : xs) {
    if (!(p.manifold == model.manifold())) throw GeometryError("semidual: source manifold mismatch");
  }
  for (const auto& p : ys) {
    if (!(p.manifold == model.manifold())) throw GeometryError("semidual: target manifold mismatch");
  }
}

StepResult run_step(const PotentialModel& model, const std::vector<Point>& xs,
                    const std::vector<Point>& ys, const InnerSolverConfig& cfg, int threads,
                    bool with_grad) {
  check_batches(model, xs, ys);
  const TargetPool pool = make_pool(model, ys);
  StepResult out;
  out.loss.per_x.resize(xs.size());
  parallel_for(xs.size(), threads, [&](std::size_t i) {
    out.loss.per_x[i] = inner_solve(model, xs[i], pool, cfg);
  });
  const double bx = static_cast<double>(xs.size());
  const double by = static_cast<double>(ys.size());
  double sum_c = 0.0;
  for (const auto& r : out.loss.per_x) {
    sum_c += r.value;
    if (!r.converged) ++out.failures;
  }
  out.loss.loss = -sum_c / bx - pool.psi.sum() / by;
  if (with_grad) {
    // Fixed summation order (by batch index) keeps the reduction deterministic.
    // The two sums are kept apart so that the final-bias entries, which are
    // identical sums when B_x = B_y, cancel exactly.
    const auto W = static_cast<Eigen::Index>(model.net().params.size());
    Vec gx = Vec::Zero(W);
    Vec gy = Vec::Zero(W);
    for (const auto& r : out.loss.per_x) model.accumulate_param_grad(r.y_star.coords, 1.0 / bx, gx);
    for (const auto& y : ys) model.accumulate_param_grad(y.coords, 1.0 / by, gy);
    out.grad.flat = gx - gy;
  }
  return out;
}

}  // namespace

SemidualLoss semidual_loss(const PotentialModel& model, const std::vector<Point>& xs,
                           const std::vector<Point>& ys, const InnerSolverConfig& cfg, int threads) {
  return run_step(model, xs, ys, cfg, threads, false).loss;
}

MlpGradient envelope_grad(const PotentialModel& model, const std::vector<Point>& xs,
                          const std::vector<Point>& ys, const InnerSolverConfig& cfg, int threads) {
  return run_step(model, xs, ys, cfg, threads, true).grad;
}

StepResult semidual_step(const PotentialModel& model, const std::vector<Point>& xs,
                         const std::vector<Point>& ys, const InnerSolverConfig& cfg, int threads) {
  return run_step(model, xs, ys, cfg, threads, true);
}

TrainResult train(const Measure& source, const Measure& target, PotentialModel model,
                  const TrainConfig& cfg, const CheckpointFn& on_checkpoint) {
  cfg.validate();
  if (!(source.manifold() == model.manifold()) || !(target.manifold() == model.manifold())) {
    throw GeometryError("train: measures and model live on different manifolds");
  }
  TrainReport report;
  report.records.reserve(static_cast<std::size_t>(cfg.steps));
  FlatAdam adam(static_cast<Eigen::Index>(model.net().params.size()), cfg.outer_lr, cfg.outer_adam);
  PotentialModel last_good = model;
  int bad_streak = 0;
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  for (int step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng src_rng = make_rng(cfg.seed, stream::kSourceBatch, static_cast<std::uint64_t>(step));
    Rng tgt_rng = make_rng(cfg.seed, stream::kTargetBatch, static_cast<std::uint64_t>(step));
    const auto xs = source.sample(B, src_rng);
    const auto ys = target.sample(B, tgt_rng);
    StepResult r = run_step(model, xs, ys, cfg.inner, cfg.threads, true);

    if (!std::isfinite(r.loss.loss) || !r.grad.flat.allFinite()) {
      throw TrainingAborted("non-finite loss or gradient at step " + std::to_string(step),
                            std::move(last_good), step);
    }
    if (static_cast<double>(r.failures) > cfg.abort_failure_fraction * static_cast<double>(B)) {
      if (++bad_streak >= cfg.abort_patience) {
        throw TrainingAborted("inner solver failed on most of the batch for " +
                                  std::to_string(bad_streak) + " consecutive steps",
                              std::move(last_good), step);
      }
    } else {
      bad_streak = 0;
    }
    last_good = model;
    adam.step(model.net().params.flat(), r.grad.flat);

    TrainRecord rec;
    rec.step = step;
    rec.loss = r.loss.loss;
    rec.failures = r.failures;
    for (const auto& s : r.loss.per_x) {
      rec.mean_residual += s.residual;
      rec.mean_iters += s.iterations;
    }
    rec.mean_residual /= static_cast<double>(B);
    rec.mean_iters /= static_cast<double>(B);
    rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    report.records.push_back(rec);
    if (on_checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps) {
      on_checkpoint(step + 1, model);
    }
  }
  if (on_checkpoint) on_checkpoint(cfg.steps, model);
  return TrainResult{std::move(model), std::move(report)};
}

MongeGap monge_gap(const PotentialModel& model, const Measure& source, const Measure& target,
                   std::size_t n_samples, const InnerSolverConfig& cfg, Rng& rng, int threads) {
  if (n_samples < 1) throw std::invalid_argument("monge_gap: n_samples must be >= 1");
  const auto xs = source.sample(n_samples, rng);
  const auto ys = target.sample(n_samples, rng);
  const std::size_t pool_size = std::min<std::size_t>(ys.size(), 1024);
  const TargetPool pool =
      make_pool(model, std::vector<Point>(ys.begin(), ys.begin() + static_cast<long>(pool_size)));
  std::vector<InnerSolveResult> sol(xs.size());
  parallel_for(xs.size(), threads, [&](std::size_t i) { sol[i] = inner_solve(model, xs[i], pool, cfg); });
  double cost = 0.0;
  double ctrans = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double d = dist(xs[i], sol[i].y_star);
    cost += 0.5 * d * d;
    ctrans += sol[i].value;
  }
  double psi_y = 0.0;
  for (const auto& y : ys) psi_y += model.value(y.coords);
  const double n = static_cast<double>(n_samples);
  MongeGap g;
  g.mean_cost = cost / n;
  g.loss = -ctrans / n - psi_y / n;
  g.gap = g.mean_cost + g.loss;
  g.relative = g.mean_cost > 0 ? std::abs(g.gap) / g.mean_cost : std::abs(g.gap);
  return g;
}

}  // namespace rnot
