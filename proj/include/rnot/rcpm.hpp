#pragma once

// Discrete c-concave potentials phi(x) = min_i (d(x, s_i)^2 / 2 + alpha_i),
// optionally smoothed by a LogSumExp at temperature gamma, and the geodesic
// quantization harness used to measure how m-output maps scale with m.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnot/ctransform.hpp"
#include "rnot/measure.hpp"

namespace rnot {

class RcpmModel {
 public:
  RcpmModel(Manifold m, std::vector<Point> sites, Vec alphas, double gamma);

  const Manifold& manifold() const { return manifold_; }
  int size() const { return static_cast<int>(sites_.cols()); }
  double gamma() const { return gamma_; }
  /// Site coordinates as columns (coord_dim x m).
  const Mat& site_coords() const { return sites_; }
  Point site(int i) const { return Point{manifold_, sites_.col(i)}; }
  std::vector<Point> sites() const;
  const Vec& alphas() const { return alphas_; }
  Vec& alphas() { return alphas_; }
  /// Replaces site i; the coordinates must be a valid point.
  void set_site(int i, const Vec& coords);

 private:
  Manifold manifold_;
  Mat sites_;
  Vec alphas_;
  double gamma_;
};

/// Writes the softmin weights of the sites at x (one-hot on the lowest-index
/// minimiser when gamma = 0) and returns phi(x).
double rcpm_weights(const RcpmModel& model, const VecRef& x, Vec& weights);

double rcpm_potential(const RcpmModel& model, const Point& x);

/// gamma = 0: the minimising site itself (lowest index on ties).
/// gamma > 0: exp_x(sum_i w_i log_x(s_i)) = exp_x(-grad phi(x)).
/// Throws CutLocusError when a site with nonzero weight is antipodal to x.
Point rcpm_transport(const RcpmModel& model, const Point& x);

/// phi as a Potential, so the generic inner solver can evaluate phi^c.
class RcpmPotential final : public Potential {
 public:
  explicit RcpmPotential(const RcpmModel& model) : model_(model) {}
  const Manifold& manifold() const override { return model_.manifold(); }
  double value(const VecRef& x) const override;
  /// grad phi(x) = -sum_i w_i log_x(s_i).
  double value_and_grad(const VecRef& x, Vec& grad, bool* perturbed = nullptr) const override;

 private:
  const RcpmModel& model_;
};

struct RcpmTrainConfig {
  int batch_size = 256;
  int steps = 1000;
  double site_lr = 1e-2;
  double alpha_lr = 1e-2;
  AdamParams adam{};
  InnerSolverConfig inner = default_inner();
  int candidates_per_site = 16;
  std::uint64_t seed = 0;
  int threads = 1;

  static InnerSolverConfig default_inner() {
    InnerSolverConfig c;
    c.max_iters = 200;
    c.stall_iters = 50;
    return c;
  }
  void validate() const;
};

struct RcpmTrainRecord {
  int step = 0;
  double loss = 0.0;
  double ms = 0.0;
};

struct RcpmTrainResult {
  RcpmModel model;
  std::vector<RcpmTrainRecord> records;
};

/// Sites start at an FPS selection over target samples with alpha = 0; sites
/// and alphas then follow the semi-dual  max E_mu[phi] + E_nu[phi^c], with
/// phi^c evaluated by the inner solver (source batch as warm-start pool).
RcpmTrainResult rcpm_train(const Measure& source, const Measure& target, int m, double gamma,
                           const RcpmTrainConfig& cfg);

/// Semi-dual loss -mean phi(x) - mean phi^c(y) and its gradient, split into
/// site gradients (columns, tangent at each site) and alpha gradients.
struct RcpmStep {
  double loss = 0.0;
  Mat site_grad;
  Vec alpha_grad;
};
RcpmStep rcpm_semidual_step(const RcpmModel& model, const std::vector<Point>& xs,
                            const std::vector<Point>& ys, const InnerSolverConfig& cfg,
                            int threads = 1);

nlohmann::json rcpm_to_json(const RcpmModel& model);
RcpmModel rcpm_from_json(const nlohmann::json& j);

// Quantization --------------------------------------------------------------

struct LloydConfig {
  int max_iters = 50;
  double rel_tol = 1e-6;
  int restarts = 5;
  int threads = 1;
};

struct LloydResult {
  std::vector<Point> centers;
  double distortion = 0.0;  // mean min_j d(c_j, y)^2 over the fitted samples
  int iterations = 0;
};

/// Geodesic k-means: k-means++ seeding, nearest-center assignment, center
/// update c <- exp_c(mean over the cell of log_c(y)). Best of cfg.restarts.
LloydResult geodesic_lloyd(const std::vector<Point>& samples, int m, const LloydConfig& cfg,
                           std::uint64_t seed);

/// mean over samples of min_j d(c_j, y)^2.
double quantization_error(const std::vector<Point>& centers, const std::vector<Point>& samples);

struct QuantizationRow {
  int m = 0;
  double v = 0.0;        // V_{m,2} on held-out samples
  double v_train = 0.0;  // Lloyd objective on the fitted samples
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_ci = 0.0;  // 1.96 standard errors
};

/// Least squares fit of log y = intercept + slope * log x.
SlopeFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y);

struct QuantizationTable {
  std::vector<QuantizationRow> rows;
  SlopeFit fit;
};

struct QuantizationConfig {
  std::size_t n_samples = 10000;
  std::size_t n_holdout = 10000;
  LloydConfig lloyd{};
};

/// Estimates V_{m,2}(nu) for each m in the (nonempty, increasing) grid and
/// fits the log-log slope; on S^p the asymptotic slope is -2/p.
QuantizationTable rcpm_rmse_lower_bound_demo(const Measure& nu, const std::vector<int>& m_grid,
                                             const QuantizationConfig& cfg, std::uint64_t seed);

}  // namespace rnot
