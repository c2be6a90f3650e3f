#include "rnot/rcpm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "rnot/parallel.hpp"

namespace rnot {

RcpmModel::RcpmModel(Manifold m, std::vector<Point> sites, Vec alphas, double gamma)
    : manifold_(m), alphas_(std::move(alphas)), gamma_(gamma) {
  if (sites.empty()) throw std::invalid_argument("rcpm: at least one site is required");
  if (alphas_.size() != static_cast<Eigen::Index>(sites.size())) {
    throw std::invalid_argument("rcpm: alphas and sites differ in length");
  }
  if (!(gamma >= 0.0)) throw std::invalid_argument("rcpm: gamma must be >= 0");
  sites_.resize(m.coord_dim(), static_cast<Eigen::Index>(sites.size()));
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (!(sites[i].manifold == m)) throw GeometryError("rcpm: site on the wrong manifold");
    sites_.col(static_cast<Eigen::Index>(i)) = make_point(m, sites[i].coords).coords;
  }
}

std::vector<Point> RcpmModel::sites() const {
  std::vector<Point> out;
  out.reserve(static_cast<std::size_t>(size()));
  for (int i = 0; i < size(); ++i) out.push_back(site(i));
  return out;
}

void RcpmModel::set_site(int i, const Vec& coords) {
  sites_.col(i) = make_point(manifold_, coords).coords;
}

namespace {

void site_distances(const RcpmModel& model, const VecRef& x, Vec& d) {
  const Mat& S = model.site_coords();
  if (model.manifold().is_sphere()) {
    d.noalias() = S.transpose() * x;
    d = d.array().max(-1.0).min(1.0).acos().matrix();
    return;
  }
  d.resize(S.cols());
  for (Eigen::Index i = 0; i < S.cols(); ++i) d[i] = geo::dist(model.manifold(), x, S.col(i));
}

void nudge(const Manifold& m, Vec& x) {
  Mat basis;
  geo::tangent_basis(m, x, basis);
  Vec next;
  geo::exp_map(m, x, 1e-7 * basis.col(0), next);
  x = std::move(next);
}

// v = sum_i w_i log_x(s_i). False when a weighted site sits on the cut locus.
bool weighted_log(const RcpmModel& model, const VecRef& x, const Vec& w, Vec& v) {
  const Mat& S = model.site_coords();
  v = Vec::Zero(x.size());
  Vec l;
  for (Eigen::Index i = 0; i < S.cols(); ++i) {
    if (w[i] == 0.0) continue;
    if (!geo::log_map(model.manifold(), x, S.col(i), l)) return false;
    v += w[i] * l;
  }
  return true;
}

}  // namespace

double rcpm_weights(const RcpmModel& model, const VecRef& x, Vec& weights) {
  thread_local Vec d;
  site_distances(model, x, d);
  const Vec cost = (0.5 * d.array().square()).matrix() + model.alphas();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < cost.size(); ++i) {
    if (cost[i] < cost[best]) best = i;
  }
  const double lo = cost[best];
  if (model.gamma() == 0.0) {
    weights = Vec::Zero(cost.size());
    weights[best] = 1.0;
    return lo;
  }
  weights = (-(cost.array() - lo) / model.gamma()).exp().matrix();
  const double z = weights.sum();
  weights /= z;
  return lo - model.gamma() * std::log(z);
}

double rcpm_potential(const RcpmModel& model, const Point& x) {
  if (!(x.manifold == model.manifold())) throw GeometryError("rcpm_potential: manifold mismatch");
  Vec w;
  return rcpm_weights(model, x.coords, w);
}

Point rcpm_transport(const RcpmModel& model, const Point& x) {
  if (!(x.manifold == model.manifold())) throw GeometryError("rcpm_transport: manifold mismatch");
  Vec w;
  rcpm_weights(model, x.coords, w);
  if (model.gamma() == 0.0) {
    Eigen::Index i = 0;
    w.maxCoeff(&i);
    return model.site(static_cast<int>(i));
  }
  Vec v;
  if (!weighted_log(model, x.coords, w, v)) {
    Eigen::Index i = 0;
    w.maxCoeff(&i);
    throw CutLocusError(x, model.site(static_cast<int>(i)));
  }
  Point out{model.manifold(), Vec()};
  geo::exp_map(model.manifold(), x.coords, v, out.coords);
  return out;
}

double RcpmPotential::value(const VecRef& x) const {
  thread_local Vec w;
  return rcpm_weights(model_, x, w);
}

double RcpmPotential::value_and_grad(const VecRef& x_in, Vec& grad, bool* perturbed) const {
  thread_local Vec w;
  Vec x = x_in;
  for (int attempt = 0;; ++attempt) {
    const double phi = rcpm_weights(model_, x, w);
    if (weighted_log(model_, x, w, grad)) {
      grad = -grad;
      return phi;
    }
    if (attempt == 3) throw GeometryError("rcpm gradient stuck on a site cut locus");
    if (perturbed) *perturbed = true;
    nudge(manifold(), x);
  }
}

void RcpmTrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("rcpm train: batch_size must be >= 1");
  if (steps < 1) throw std::invalid_argument("rcpm train: steps must be >= 1");
  if (!(site_lr > 0) || !(alpha_lr > 0)) {
    throw std::invalid_argument("rcpm train: learning rates must be positive");
  }
  if (candidates_per_site < 1) throw std::invalid_argument("rcpm train: candidates_per_site >= 1");
  inner.validate();
}

namespace {

// grads += scale * d phi(x) / d (sites, alphas)
void accumulate_rcpm_grad(const RcpmModel& model, const VecRef& x, double scale, Mat& site_grad,
                          Vec& alpha_grad) {
  thread_local Vec w;
  thread_local Vec l;
  rcpm_weights(model, x, w);
  alpha_grad += scale * w;
  const Mat& S = model.site_coords();
  for (Eigen::Index i = 0; i < S.cols(); ++i) {
    if (w[i] == 0.0) continue;
    // grad_s (d(x, s)^2 / 2) = -log_s(x); zero on the (null) cut locus.
    if (!geo::log_map(model.manifold(), S.col(i), x, l)) continue;
    site_grad.col(i) -= (scale * w[i]) * l;
  }
}

}  // namespace

RcpmStep rcpm_semidual_step(const RcpmModel& model, const std::vector<Point>& xs,
                            const std::vector<Point>& ys, const InnerSolverConfig& cfg,
                            int threads) {
  if (xs.empty() || ys.empty()) throw std::invalid_argument("rcpm: empty batch");
  const RcpmPotential phi(model);
  const TargetPool pool = make_pool(phi, xs);
  std::vector<InnerSolveResult> sol(ys.size());
  parallel_for(ys.size(), threads, [&](std::size_t j) { sol[j] = inner_solve(phi, ys[j], pool, cfg); });

  const double bx = static_cast<double>(xs.size());
  const double by = static_cast<double>(ys.size());
  double phic = 0.0;
  for (const auto& s : sol) phic += s.value;
  RcpmStep out;
  out.loss = -pool.psi.sum() / bx - phic / by;
  out.site_grad = Mat::Zero(model.site_coords().rows(), model.size());
  out.alpha_grad = Vec::Zero(model.size());
  for (const auto& x : xs) accumulate_rcpm_grad(model, x.coords, -1.0 / bx, out.site_grad, out.alpha_grad);
  // Envelope theorem: d phi^c(y) = -d phi(x*(y)) with x* held fixed.
  for (const auto& s : sol) {
    accumulate_rcpm_grad(model, s.y_star.coords, 1.0 / by, out.site_grad, out.alpha_grad);
  }
  return out;
}

RcpmTrainResult rcpm_train(const Measure& source, const Measure& target, int m, double gamma,
                           const RcpmTrainConfig& cfg) {
  cfg.validate();
  if (m < 1) throw std::domain_error("rcpm_train: m must be >= 1");
  const Manifold& man = target.manifold();
  if (!(source.manifold() == man)) throw GeometryError("rcpm_train: manifold mismatch");

  Rng cand_rng = make_rng(cfg.seed, stream::kRcpmSites);
  const auto candidates =
      target.sample(static_cast<std::size_t>(cfg.candidates_per_site) * static_cast<std::size_t>(m), cand_rng);
  const LandmarkSet init = select_landmarks_fps(man, m, candidates, derive_seed(cfg.seed, stream::kRcpmSites, 1));
  RcpmModel model(man, init.landmarks(), Vec::Zero(m), gamma);

  std::vector<TangentStepper> steppers;
  steppers.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    steppers.emplace_back(man, TangentOptimizer::Adam, cfg.site_lr, 0.9, cfg.adam);
  }
  FlatAdam alpha_opt(m, cfg.alpha_lr, cfg.adam);

  std::vector<RcpmTrainRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.steps));
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  for (int step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng src_rng = make_rng(cfg.seed, stream::kSourceBatch, static_cast<std::uint64_t>(step));
    Rng tgt_rng = make_rng(cfg.seed, stream::kTargetBatch, static_cast<std::uint64_t>(step));
    const auto xs = source.sample(B, src_rng);
    const auto ys = target.sample(B, tgt_rng);
    RcpmStep r = rcpm_semidual_step(model, xs, ys, cfg.inner, cfg.threads);
    if (!std::isfinite(r.loss) || !r.site_grad.allFinite() || !r.alpha_grad.allFinite()) {
      throw std::runtime_error("rcpm_train: non-finite loss or gradient at step " + std::to_string(step));
    }
    alpha_opt.step(model.alphas(), r.alpha_grad);
    for (int i = 0; i < m; ++i) {
      Vec s = model.site_coords().col(i);
      steppers[static_cast<std::size_t>(i)].step(s, r.site_grad.col(i));
      model.set_site(i, s);
    }
    records.push_back({step, r.loss,
                       std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()});
  }
  return RcpmTrainResult{std::move(model), std::move(records)};
}

nlohmann::json rcpm_to_json(const RcpmModel& model) {
  std::ostringstream sites;
  write_points_csv(sites, model.sites());
  const Vec& a = model.alphas();
  return {{"manifold", model.manifold().name()},
          {"gamma", model.gamma()},
          {"alphas", std::vector<double>(a.data(), a.data() + a.size())},
          {"sites", sites.str()}};
}

RcpmModel rcpm_from_json(const nlohmann::json& j) {
  const Manifold m = Manifold::parse(j.at("manifold").get<std::string>());
  std::istringstream sites(j.at("sites").get<std::string>());
  auto points = read_points_csv(sites, m);
  auto a = j.at("alphas").get<std::vector<double>>();
  return RcpmModel(m, std::move(points), Eigen::Map<Vec>(a.data(), static_cast<Eigen::Index>(a.size())),
                   j.at("gamma").get<double>());
}

// Quantization ---------------------------------------------------------------

namespace {

Mat as_columns(const std::vector<Point>& pts) {
  Mat out(pts.front().coords.size(), static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = pts[i].coords;
  return out;
}

// Nearest center per sample; returns the mean squared distance.
double assign(const Manifold& man, const Mat& Y, const Mat& C, std::vector<int>& label,
              Vec& sqdist) {
  const Eigen::Index n = Y.cols();
  label.assign(static_cast<std::size_t>(n), 0);
  sqdist.resize(n);
  if (man.is_sphere()) {
    const Mat G = C.transpose() * Y;
    for (Eigen::Index k = 0; k < n; ++k) {
      Eigen::Index best = 0;
      const double c = G.col(k).maxCoeff(&best);
      const double d = std::acos(std::clamp(c, -1.0, 1.0));
      label[static_cast<std::size_t>(k)] = static_cast<int>(best);
      sqdist[k] = d * d;
    }
  } else {
    for (Eigen::Index k = 0; k < n; ++k) {
      double best_d = std::numeric_limits<double>::infinity();
      int best = 0;
      for (Eigen::Index j = 0; j < C.cols(); ++j) {
        const double d = geo::dist(man, Y.col(k), C.col(j));
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(j);
        }
      }
      label[static_cast<std::size_t>(k)] = best;
      sqdist[k] = best_d * best_d;
    }
  }
  return sqdist.mean();
}

LloydResult lloyd_once(const Manifold& man, const Mat& Y, int m, const LloydConfig& cfg, Rng& rng) {
  const Eigen::Index n = Y.cols();
  Mat C(Y.rows(), m);
  // k-means++ seeding with geodesic D^2 weights.
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  C.col(0) = Y.col(first(rng));
  Vec d2(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double d = geo::dist(man, Y.col(k), C.col(0));
    d2[k] = d * d;
  }
  for (int j = 1; j < m; ++j) {
    std::discrete_distribution<Eigen::Index> pick(d2.data(), d2.data() + n);
    C.col(j) = Y.col(pick(rng));
    for (Eigen::Index k = 0; k < n; ++k) {
      const double d = geo::dist(man, Y.col(k), C.col(j));
      d2[k] = std::min(d2[k], d * d);
    }
  }

  std::vector<int> label;
  Vec sq;
  double distortion = assign(man, Y, C, label, sq);
  int it = 0;
  Mat sum(Y.rows(), m);
  std::vector<int> count(static_cast<std::size_t>(m));
  Vec l;
  Vec next;
  while (it < cfg.max_iters) {
    ++it;
    sum.setZero();
    std::fill(count.begin(), count.end(), 0);
    for (Eigen::Index k = 0; k < n; ++k) {
      const int j = label[static_cast<std::size_t>(k)];
      if (!geo::log_map(man, C.col(j), Y.col(k), l)) continue;
      sum.col(j) += l;
      ++count[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < m; ++j) {
      if (count[static_cast<std::size_t>(j)] == 0) {
        // Empty cell: move the center to the worst-served sample.
        Eigen::Index worst = 0;
        sq.maxCoeff(&worst);
        C.col(j) = Y.col(worst);
        sq[worst] = 0.0;
        continue;
      }
      geo::exp_map(man, C.col(j), sum.col(j) / count[static_cast<std::size_t>(j)], next);
      C.col(j) = next;
    }
    const double prev = distortion;
    distortion = assign(man, Y, C, label, sq);
    if (prev - distortion <= cfg.rel_tol * prev) break;
  }
  LloydResult r;
  r.centers.reserve(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) r.centers.push_back(Point{man, C.col(j)});
  r.distortion = distortion;
  r.iterations = it;
  return r;
}

}  // namespace

LloydResult geodesic_lloyd(const std::vector<Point>& samples, int m, const LloydConfig& cfg,
                           std::uint64_t seed) {
  if (m < 1) throw std::domain_error("geodesic_lloyd: m must be >= 1");
  if (samples.size() < static_cast<std::size_t>(m)) {
    throw std::domain_error("geodesic_lloyd: fewer samples than centers");
  }
  if (cfg.restarts < 1 || cfg.max_iters < 0) throw std::invalid_argument("geodesic_lloyd: bad config");
  const Manifold man = samples.front().manifold;
  const Mat Y = as_columns(samples);
  std::vector<LloydResult> runs(static_cast<std::size_t>(cfg.restarts));
  parallel_for(runs.size(), cfg.threads, [&](std::size_t r) {
    Rng rng = make_rng(seed, stream::kLloyd, r);
    runs[r] = lloyd_once(man, Y, m, cfg, rng);
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].distortion < runs[best].distortion) best = r;
  }
  return std::move(runs[best]);
}

double quantization_error(const std::vector<Point>& centers, const std::vector<Point>& samples) {
  if (centers.empty() || samples.empty()) throw std::invalid_argument("quantization_error: empty input");
  std::vector<int> label;
  Vec sq;
  return assign(samples.front().manifold, as_columns(samples), as_columns(centers), label, sq);
}

SlopeFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_fit: need >= 2 points");
  const std::size_t n = x.size();
  Vec lx(static_cast<Eigen::Index>(n));
  Vec ly(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw std::domain_error("loglog_fit: values must be positive");
    lx[static_cast<Eigen::Index>(i)] = std::log(x[i]);
    ly[static_cast<Eigen::Index>(i)] = std::log(y[i]);
  }
  const double mx = lx.mean();
  const double my = ly.mean();
  const double sxx = (lx.array() - mx).square().sum();
  const double sxy = ((lx.array() - mx) * (ly.array() - my)).sum();
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (n > 2) {
    const double ssr = (ly.array() - f.intercept - f.slope * lx.array()).square().sum();
    f.slope_ci = 1.96 * std::sqrt(ssr / static_cast<double>(n - 2) / sxx);
  }
  return f;
}

QuantizationTable rcpm_rmse_lower_bound_demo(const Measure& nu, const std::vector<int>& m_grid,
                                             const QuantizationConfig& cfg, std::uint64_t seed) {
  if (m_grid.empty()) throw std::invalid_argument("quantization: empty m grid");
  for (std::size_t i = 1; i < m_grid.size(); ++i) {
    if (m_grid[i] <= m_grid[i - 1]) throw std::invalid_argument("quantization: m grid must increase");
  }
  Rng fit_rng = make_rng(seed, stream::kLloyd, 1u << 20);
  Rng hold_rng = make_rng(seed, stream::kLloyd, (1u << 20) + 1);
  const auto fit = nu.sample(cfg.n_samples, fit_rng);
  const auto hold = nu.sample(cfg.n_holdout, hold_rng);
  QuantizationTable t;
  std::vector<double> ms;
  std::vector<double> vs;
  for (int m : m_grid) {
    const LloydResult r = geodesic_lloyd(fit, m, cfg.lloyd, derive_seed(seed, stream::kLloyd, static_cast<std::uint64_t>(m)));
    QuantizationRow row;
    row.m = m;
    row.v_train = r.distortion;
    row.v = quantization_error(r.centers, hold);
    t.rows.push_back(row);
    ms.push_back(m);
    vs.push_back(row.v);
  }
  if (ms.size() >= 2) t.fit = loglog_fit(ms, vs);
  return t;
}

}  // namespace rnot
