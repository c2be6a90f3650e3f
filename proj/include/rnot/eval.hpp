#pragma once

// Evaluation of learned maps: Jacobians by the implicit function theorem,
// KL / ESS of the pushforward via the manifold change of variables, RMSE
// between maps, and the dimension sweep table.

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnot/rcpm.hpp"
#include "rnot/semidual.hpp"

namespace rnot {

struct EvalConfig {
  int n_samples = 1024;
  int n_batches = 5;
  double fd_step = 1e-5;
  double residual_gate = 1e-2;
  std::uint64_t seed = 0;
  int pool_size = 1024;  // fixed target pool for the warm start
  InnerSolverConfig inner{};
  int threads = 1;
  double unreliable_fraction = 0.2;
  // Singular values of a directly differentiated map are clipped here, so a
  // (numerically) locally constant map yields a large finite log-det instead
  // of -inf.
  double singular_value_floor = 1e-10;

  void validate() const;
};

class SingularJacobian : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MapValue {
  Point y;
  double residual = 0.0;  // stationarity residual (0 for explicit maps)
  double dual_value = 0.0;  // psi^c(x) for RNOT maps, phi(x) for RCPM
  bool ok = true;
};

struct JacobianResult {
  Mat J;  // p x p in the tangent bases at x and T(x)
  double logdet = 0.0;
};

/// A transport map that can be evaluated pointwise and differentiated.
class TransportMap {
 public:
  virtual ~TransportMap() = default;
  virtual const Manifold& manifold() const = 0;
  virtual MapValue apply(const Point& x) const = 0;
  /// Jacobian at x given y = apply(x).y. Throws SingularJacobian.
  virtual JacobianResult jacobian(const Point& x, const Point& y, double h) const = 0;
  /// Mean dual objective on target samples for the Monge gap: the psi(y) term
  /// for RNOT, phi^c(y) for RCPM. NaN when unavailable.
  virtual double target_dual_mean(const std::vector<Point>& ys, int threads) const = 0;
};

/// y = argmin_y d(x,y)^2/2 - psi(y) with a fixed warm-start pool; Jacobian by
/// J = -[D_y F]^{-1} [D_x F], F(x, y) = -log_y(x) - grad psi(y).
class RnotMap final : public TransportMap {
 public:
  RnotMap(const PotentialModel& model, TargetPool pool, InnerSolverConfig inner);
  const Manifold& manifold() const override { return model_.manifold(); }
  MapValue apply(const Point& x) const override;
  JacobianResult jacobian(const Point& x, const Point& y, double h) const override;
  double target_dual_mean(const std::vector<Point>& ys, int threads) const override;
  const PotentialModel& model() const { return model_; }

 private:
  const PotentialModel& model_;
  TargetPool pool_;
  InnerSolverConfig inner_;
};

/// Builds the evaluation pool: cfg.pool_size target samples from the kEvalPool stream.
TargetPool eval_pool(const PotentialModel& model, const Measure& target, const EvalConfig& cfg);

/// The explicit RCPM map; Jacobian by central differences of the map itself.
class RcpmMap final : public TransportMap {
 public:
  RcpmMap(const RcpmModel& model, InnerSolverConfig inner, double singular_value_floor);
  const Manifold& manifold() const override { return model_.manifold(); }
  MapValue apply(const Point& x) const override;
  JacobianResult jacobian(const Point& x, const Point& y, double h) const override;
  double target_dual_mean(const std::vector<Point>& ys, int threads) const override;

 private:
  const RcpmModel& model_;
  InnerSolverConfig inner_;
  double floor_;
};

/// IFT Jacobian of an RNOT map at (x, y*). Throws SingularJacobian when
/// |det D_y F| < 1e-12.
JacobianResult transport_jacobian(const PotentialModel& model, const Point& x, const Point& y,
                                  double h);

struct EvalReport {
  double kl_mean = 0.0;
  double kl_ci = 0.0;
  double ess_mean = 0.0;
  double ess_ci = 0.0;
  double z_hat = 0.0;
  double mean_cost = 0.0;
  double monge_gap_rel = 0.0;
  double gated_fraction = 0.0;
  double mean_residual = 0.0;
  int n_evaluated = 0;
  bool unreliable = false;
};

/// KL(T_# mu || nu), ESS/N, Z-hat, transport cost and relative Monge gap over
/// cfg.n_batches batches of cfg.n_samples source points. CIs are 1.96 standard
/// errors of the batch means. Requires analytic source and target densities.
EvalReport evaluate(const TransportMap& map, const Measure& source, const Measure& target,
                    const EvalConfig& cfg);

struct KlEstimate {
  double kl = 0.0;
  double ci = 0.0;
};
KlEstimate kl_estimate(const TransportMap& map, const Measure& source, const Measure& target,
                       const EvalConfig& cfg);

struct EssEstimate {
  double ess = 0.0;
  double ci = 0.0;
  double z_hat = 0.0;
};
EssEstimate ess_estimate(const TransportMap& map, const Measure& source, const Measure& target,
                         const EvalConfig& cfg);

/// Transport cost only (empirical measures have no density).
struct CostReport {
  double mean_cost = 0.0;
  double mean_residual = 0.0;
  double gated_fraction = 0.0;
  int n_evaluated = 0;
};
CostReport evaluate_cost(const TransportMap& map, const std::vector<Point>& xs,
                         const EvalConfig& cfg);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
std::string eval_csv_header();
std::string eval_csv_row(const EvalReport& r);

using PointMap = std::function<std::optional<Point>(const Point&)>;

struct RmseResult {
  double rmse = 0.0;
  int excluded = 0;  // points where either map failed
};
/// sqrt(mean d(T1(x), T2(x))^2) over n source samples.
RmseResult rmse_between_maps(const PointMap& t1, const PointMap& t2, const Measure& source,
                             std::size_t n, Rng& rng, int threads = 1);

// Dimension sweep --------------------------------------------------------------

struct SweepRow {
  int p = 0;
  std::string method;  // "rnot" or "rcpm"
  double gamma = 0.0;  // NaN for rnot
  std::uint64_t seed = 0;
  double kl = 0.0;
  double ess = 0.0;
  double seconds = 0.0;
};

struct SweepConfig {
  std::string family = "sphere";  // or "torus"
  std::vector<int> p_grid{2, 3, 4, 5, 6};
  std::vector<std::string> methods{"rnot"};
  std::vector<double> gammas{1e-3};
  std::vector<std::uint64_t> seeds{0};
  double sigma = 0.3;
  int landmarks = 128;
  int rcpm_sites = 68;
  MlpConfig net{};
  TrainConfig train{};
  RcpmTrainConfig rcpm{};
  EvalConfig eval{};
};

/// Key identifying a sweep cell, used to skip cells already present in a
/// resumed table.
std::string sweep_key(int p, const std::string& method, double gamma, std::uint64_t seed);

/// Runs every (p, method, gamma, seed) cell not already in `done`. Failed
/// cells are recorded with NaN metrics. `on_row` sees each new row as soon as
/// it is complete.
std::vector<SweepRow> dimension_sweep(const SweepConfig& cfg, const std::vector<SweepRow>& done = {},
                                      const std::function<void(const SweepRow&)>& on_row = {});

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepRow& r);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(std::istream& is);

/// Uniform source, wrapped normal target at the south pole.
struct Task {
  Measure source;
  Measure target;
};
Task uniform_to_wrapped_normal(const Manifold& m, double sigma);

}  // namespace rnot
