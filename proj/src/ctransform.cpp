#include "rnot/ctransform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rnot {

namespace {

// acos(<y,l>) cannot resolve distances below sqrt(2 ulp) ~ 1.5e-8.
constexpr double kLandmarkTaylor = 1e-7;
constexpr double kAntipodeTol = 1e-12;
constexpr int kMaxPerturbations = 3;

// Nudges y by `scale` along the first column of its tangent basis.
void perturb(const Manifold& m, Vec& y, double scale) {
  Mat basis;
  geo::tangent_basis(m, y, basis);
  Vec next;
  geo::exp_map(m, y, scale * basis.col(0), next);
  y = std::move(next);
}

}  // namespace

PotentialModel::PotentialModel(LandmarkSet landmarks, Mlp net)
    : landmarks_(std::move(landmarks)), net_(std::move(net)) {
  if (net_.config.input_dim != landmarks_.size()) {
    throw std::invalid_argument("network input_dim must equal the landmark count");
  }
}

double PotentialModel::value(const VecRef& y) const {
  thread_local Vec features;
  featurize_into(landmarks_, y, features);
  return forward(net_, features);
}

double PotentialModel::value_and_grad(const VecRef& y_in, Vec& grad, bool* perturbed) const {
  thread_local Vec features;
  thread_local Vec dfeat;
  thread_local Vec coef;
  thread_local Vec cosines;
  const Manifold& m = manifold();
  const Mat& L = landmarks_.coords();
  Vec y = y_in;
  for (int attempt = 0;; ++attempt) {
    bool on_cut = false;
    if (m.is_sphere()) {
      // With c = <y, l>: d = acos c and grad_y d(y, l) = -(l - c y) / sin d, so
      // grad psi = -L (w / sin d) + (sum_j w_j c_j / sin d_j) y.
      cosines.noalias() = L.transpose() * y;
      features = cosines.array().max(-1.0).min(1.0).acos().matrix();
      const double f = grad_input_into(net_, features, dfeat);
      coef.resize(L.cols());
      double along_y = 0.0;
      for (Eigen::Index j = 0; j < L.cols(); ++j) {
        const double w = dfeat[j];
        coef[j] = 0.0;
        if (w == 0.0 || features[j] < kLandmarkTaylor) continue;
        const double c = std::clamp(cosines[j], -1.0, 1.0);
        const double s = std::sqrt((1.0 - c) * (1.0 + c));
        if (s < kAntipodeTol) {
          on_cut = true;
          break;
        }
        coef[j] = w / s;
        along_y += coef[j] * c;
      }
      if (!on_cut) {
        grad.noalias() = -(L * coef);
        grad += along_y * y;
        return f;
      }
    } else {
      featurize_into(landmarks_, y, features);
      const double f = grad_input_into(net_, features, dfeat);
      grad = Vec::Zero(y.size());
      for (Eigen::Index j = 0; j < L.cols(); ++j) {
        const double w = dfeat[j];
        const double d = features[j];
        if (w == 0.0 || d < kLandmarkTaylor) continue;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
          grad[i] += w * geo::wrap_angle(y[i] - L(i, j)) / d;
        }
      }
      return f;
    }
    if (attempt == kMaxPerturbations) {
      throw GeometryError("potential gradient stuck on a landmark cut locus");
    }
    if (perturbed) *perturbed = true;
    perturb(m, y, 1e-7);
  }
}

double PotentialModel::accumulate_param_grad(const VecRef& y, double scale, Vec& accum) const {
  thread_local Vec features;
  featurize_into(landmarks_, y, features);
  return accumulate_grad_params(net_, features, scale, accum);
}

TangentVector riemannian_grad_psi(const PotentialModel& model, const Point& y, bool* perturbed) {
  if (!(y.manifold == model.manifold())) throw GeometryError("riemannian_grad_psi: manifold mismatch");
  TangentVector out{y, Vec()};
  model.value_and_grad(y.coords, out.vec, perturbed);
  return out;
}

void InnerSolverConfig::validate() const {
  if (max_iters < 1) throw std::invalid_argument("inner solver: max_iters must be >= 1");
  if (!(step_size > 0)) throw std::invalid_argument("inner solver: step size must be positive");
  if (!(init_temperature > 0)) throw std::invalid_argument("inner solver: temperature must be positive");
  if (residual_tol < 0) throw std::invalid_argument("inner solver: residual_tol must be >= 0");
  if (stall_iters < 0) throw std::invalid_argument("inner solver: stall_iters must be >= 0");
}

TargetPool make_pool(const Potential& potential, const std::vector<Point>& points) {
  TargetPool pool{potential.manifold(), {}, Vec(static_cast<Eigen::Index>(points.size()))};
  pool.points.reserve(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) {
    if (!(points[k].manifold == pool.manifold)) throw GeometryError("pool point on wrong manifold");
    pool.points.push_back(points[k].coords);
    pool.psi[static_cast<Eigen::Index>(k)] = potential.value(points[k].coords);
  }
  return pool;
}

namespace {

struct Scored {
  Vec y;
  std::size_t best_index = 0;
  double best_value = std::numeric_limits<double>::infinity();  // min_k c(x,y_k) - psi_k
};

Scored lse_start(const Manifold& m, const VecRef& x, const TargetPool& pool, double gamma,
                 std::size_t limit) {
  const std::size_t K = std::min(limit, pool.points.size());
  Vec scores(static_cast<Eigen::Index>(K));
  Scored out;
  for (std::size_t k = 0; k < K; ++k) {
    const double d = geo::dist(m, x, pool.points[k]);
    const double f = 0.5 * d * d - pool.psi[static_cast<Eigen::Index>(k)];
    scores[static_cast<Eigen::Index>(k)] = -f / gamma;
    if (f < out.best_value) {
      out.best_value = f;
      out.best_index = k;
    }
  }
  const double mx = scores.maxCoeff();
  Vec w = (scores.array() - mx).exp();
  w /= w.sum();
  if (m.is_sphere()) {
    Vec mean = Vec::Zero(x.size());
    for (std::size_t k = 0; k < K; ++k) mean += w[static_cast<Eigen::Index>(k)] * pool.points[k];
    const double n = mean.norm();
    out.y = n > 1e-12 ? Vec(mean / n) : pool.points[out.best_index];
    return out;
  }
  out.y.resize(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double s = 0.0;
    double c = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      s += w[static_cast<Eigen::Index>(k)] * std::sin(pool.points[k][i]);
      c += w[static_cast<Eigen::Index>(k)] * std::cos(pool.points[k][i]);
    }
    if (std::hypot(s, c) <= 1e-12) {
      out.y = pool.points[out.best_index];
      return out;
    }
    out.y[i] = geo::wrap_2pi(std::atan2(s, c));
  }
  return out;
}

struct Evaluation {
  double value = 0.0;
  double residual = 0.0;
  Vec grad;
  bool ok = true;
};

// F and its Riemannian gradient at y, nudging y off the cut locus of x.
Evaluation evaluate(const Potential& potential, const VecRef& x, Vec& y, double perturb_scale,
                    int& perturbations) {
  const Manifold& m = potential.manifold();
  Evaluation e;
  Vec log_yx;
  while (!geo::log_map(m, y, x, log_yx)) {
    if (perturbations >= kMaxPerturbations) {
      e.ok = false;
      return e;
    }
    ++perturbations;
    perturb(m, y, perturb_scale);
  }
  bool nudged = false;
  const double psi = potential.value_and_grad(y, e.grad, &nudged);
  const double d = geo::dist(m, x, y);
  e.value = 0.5 * d * d - psi;
  e.grad = -log_yx - e.grad;
  e.residual = e.grad.norm();
  return e;
}

}  // namespace

Point lse_init(const Potential& potential, const Point& x, const TargetPool& pool, double gamma) {
  if (pool.points.empty()) throw std::invalid_argument("lse_init: empty pool");
  if (!(gamma > 0)) throw std::invalid_argument("lse_init: gamma must be positive");
  if (!(x.manifold == potential.manifold()) || !(pool.manifold == potential.manifold())) {
    throw GeometryError("lse_init: manifold mismatch");
  }
  return Point{x.manifold, lse_start(x.manifold, x.coords, pool, gamma, pool.points.size()).y};
}

InnerSolveResult inner_solve(const Potential& potential, const Point& x, const TargetPool& pool,
                             const InnerSolverConfig& cfg, std::vector<TraceRow>* trace) {
  cfg.validate();
  const Manifold& m = potential.manifold();
  if (!(x.manifold == m)) throw GeometryError("inner_solve: manifold mismatch");

  InnerSolveResult result{Point{m, x.coords}};
  Vec y = x.coords;
  if (cfg.lse_init && !pool.points.empty()) {
    const std::size_t limit =
        cfg.init_pool_size > 0 ? static_cast<std::size_t>(cfg.init_pool_size) : pool.points.size();
    Scored s = lse_start(m, x.coords, pool, cfg.init_temperature, limit);
    y = std::move(s.y);
    // The projected average can land in a worse basin than the best pool
    // point itself; start from whichever is lower.
    const double d = geo::dist(m, x.coords, y);
    if (s.best_value < 0.5 * d * d - potential.value(y)) y = pool.points[s.best_index];
  }

  TangentStepper stepper(m, cfg.optimizer, cfg.step_size, cfg.momentum, cfg.adam);
  int perturbations = 0;
  Evaluation e = evaluate(potential, x.coords, y, cfg.perturb_scale, perturbations);
  if (!e.ok) {
    result.failed = true;
    result.perturbations = perturbations;
    result.value = std::numeric_limits<double>::infinity();
    result.residual = std::numeric_limits<double>::infinity();
    return result;
  }
  Vec best_y = y;
  double best_value = e.value;
  double best_residual = e.residual;
  int iter = 0;
  int since_best = 0;
  if (trace) trace->push_back({0, e.value, e.residual});
  while (e.residual > cfg.residual_tol && iter < cfg.max_iters) {
    stepper.step(y, e.grad);
    ++iter;
    Evaluation next = evaluate(potential, x.coords, y, cfg.perturb_scale, perturbations);
    if (!next.ok) {
      result.failed = true;
      break;
    }
    e = std::move(next);
    if (trace) trace->push_back({iter, e.value, e.residual});
    if (e.value < best_value) {
      best_value = e.value;
      best_residual = e.residual;
      best_y = y;
      since_best = 0;
    } else if (cfg.stall_iters > 0 && ++since_best >= cfg.stall_iters) {
      break;
    }
  }
  result.y_star = Point{m, std::move(best_y)};
  result.value = best_value;
  result.residual = best_residual;
  result.iterations = iter;
  result.converged = !result.failed && best_residual <= cfg.residual_tol;
  result.perturbations = perturbations;
  return result;
}

CTransformValue c_transform_value(const Potential& potential, const Point& x,
                                  const TargetPool& pool, const InnerSolverConfig& cfg) {
  InnerSolveResult r = inner_solve(potential, x, pool, cfg);
  const double v = r.value;
  return {v, std::move(r)};
}

Point transport_point(const Potential& potential, const Point& x, const TargetPool& pool,
                      const InnerSolverConfig& cfg) {
  return inner_solve(potential, x, pool, cfg).y_star;
}

bool stationarity_field(const Potential& potential, const VecRef& x, const VecRef& y, Vec& out) {
  Vec log_yx;
  if (!geo::log_map(potential.manifold(), y, x, log_yx)) return false;
  potential.value_and_grad(y, out);
  out = -log_yx - out;
  return true;
}

double stationarity_residual(const Potential& potential, const Point& x, const Point& y) {
  Vec g;
  if (!stationarity_field(potential, x.coords, y.coords, g)) {
    return std::numeric_limits<double>::infinity();
  }
  return g.norm();
}

}  // namespace rnot
