#pragma once

// Implicit c-transform psi^c(x) = min_y { d(x,y)^2 / 2 - psi(y) } evaluated by
// a LogSumExp warm start followed by Riemannian first-order descent.

#include <functional>
#include <vector>

#include "rnot/embedding.hpp"
#include "rnot/network.hpp"
#include "rnot/optim.hpp"

namespace rnot {

/// Scalar function on a manifold with a Riemannian gradient.
class Potential {
 public:
  virtual ~Potential() = default;
  virtual const Manifold& manifold() const = 0;
  virtual double value(const VecRef& y) const = 0;
  /// Writes the Riemannian gradient at y (ambient coordinates, tangent at y).
  /// Sets *perturbed when y had to be nudged off a cut locus to get one.
  virtual double value_and_grad(const VecRef& y, Vec& grad, bool* perturbed = nullptr) const = 0;
};

/// psi = f o phi: an MLP on distance-to-landmark features.
class PotentialModel final : public Potential {
 public:
  PotentialModel(LandmarkSet landmarks, Mlp net);

  const Manifold& manifold() const override { return landmarks_.manifold(); }
  const LandmarkSet& landmarks() const { return landmarks_; }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

  double value(const VecRef& y) const override;
  double value_and_grad(const VecRef& y, Vec& grad, bool* perturbed = nullptr) const override;
  /// accum += scale * d psi(y) / d theta; returns psi(y).
  double accumulate_param_grad(const VecRef& y, double scale, Vec& accum) const;

 private:
  LandmarkSet landmarks_;
  Mlp net_;
};

/// Sum_j (df/dphi_j) grad_y d(y, l_j). Distance gradients within 1e-7 of a
/// landmark contribute 0 (subgradient choice at the non-smooth point).
TangentVector riemannian_grad_psi(const PotentialModel& model, const Point& y,
                                  bool* perturbed = nullptr);

struct InnerSolverConfig {
  int max_iters = 2500;
  double step_size = 5e-2;
  TangentOptimizer optimizer = TangentOptimizer::Adam;
  double momentum = 0.9;
  AdamParams adam{};
  double init_temperature = 0.1;
  int init_pool_size = 0;  // 0: use the whole pool
  bool lse_init = true;
  double residual_tol = 1e-4;
  double perturb_scale = 1e-7;
  // Stop once this many consecutive iterations fail to lower the best value
  // (iterates trapped at a landmark cone never reach residual_tol). 0: off.
  int stall_iters = 0;

  void validate() const;
};

struct InnerSolveResult {
  Point y_star;
  double value = 0.0;     // d(x, y*)^2 / 2 - psi(y*)
  double residual = 0.0;  // |-log_{y*}(x) - grad psi(y*)|
  int iterations = 0;
  bool converged = false;
  int perturbations = 0;
  bool failed = false;  // cut locus could not be escaped
};

/// Candidate points for the warm start with their cached potential values.
struct TargetPool {
  Manifold manifold;
  std::vector<Vec> points;
  Vec psi;
};

TargetPool make_pool(const Potential& potential, const std::vector<Point>& points);

/// Projected softmax average of the pool with scores (psi(y_k) - c(x, y_k)) / gamma.
/// Falls back to the best pool element when the average degenerates.
Point lse_init(const Potential& potential, const Point& x, const TargetPool& pool, double gamma);

struct TraceRow {
  int iter;
  double value;
  double residual;
};

InnerSolveResult inner_solve(const Potential& potential, const Point& x, const TargetPool& pool,
                             const InnerSolverConfig& cfg, std::vector<TraceRow>* trace = nullptr);

struct CTransformValue {
  double value;
  InnerSolveResult result;
};
CTransformValue c_transform_value(const Potential& potential, const Point& x,
                                  const TargetPool& pool, const InnerSolverConfig& cfg);

Point transport_point(const Potential& potential, const Point& x, const TargetPool& pool,
                      const InnerSolverConfig& cfg);

/// |-log_y(x) - grad psi(y)|, or +inf when y is on the cut locus of x.
double stationarity_residual(const Potential& potential, const Point& x, const Point& y);

/// The stationarity map F(x, y) = -log_y(x) - grad psi(y) in ambient
/// coordinates. Returns false on a cut locus.
bool stationarity_field(const Potential& potential, const VecRef& x, const VecRef& y, Vec& out);

}  // namespace rnot
