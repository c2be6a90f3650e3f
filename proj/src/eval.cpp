#include "rnot/eval.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "rnot/parallel.hpp"

namespace rnot {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kSingularDet = 1e-12;

struct MeanCi {
  double mean = 0.0;
  double ci = 0.0;
};

MeanCi mean_ci(const std::vector<double>& v) {
  MeanCi out;
  if (v.empty()) return {kNaN, kNaN};
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  out.ci = 1.96 * sd / std::sqrt(static_cast<double>(v.size()));
  return out;
}

Mat basis_of(const Manifold& m, const VecRef& x) {
  Mat E;
  geo::tangent_basis(m, x, E);
  return E;
}

}  // namespace

void EvalConfig::validate() const {
  if (n_samples < 2) throw std::invalid_argument("eval: n_samples must be >= 2");
  if (n_batches < 1) throw std::invalid_argument("eval: n_batches must be >= 1");
  if (!(fd_step > 0)) throw std::invalid_argument("eval: fd_step must be positive");
  if (residual_gate < 0) throw std::invalid_argument("eval: residual_gate must be >= 0");
  if (pool_size < 1) throw std::invalid_argument("eval: pool_size must be >= 1");
  inner.validate();
}

// RNOT ------------------------------------------------------------------------

JacobianResult transport_jacobian(const PotentialModel& model, const Point& x, const Point& y,
                                  double h) {
  const Manifold& m = model.manifold();
  if (!(x.manifold == m) || !(y.manifold == m)) throw GeometryError("transport_jacobian: manifold mismatch");
  const int p = m.dim();
  const Mat Ex = basis_of(m, x.coords);
  const Mat Ey = basis_of(m, y.coords);
  Mat A(p, p);  // E_y^T D_y F E_y
  Mat B(p, p);  // E_y^T D_x F E_x
  Vec moved;
  Vec fp;
  Vec fm;
  auto field = [&](const VecRef& xx, const VecRef& yy, Vec& out) {
    if (!stationarity_field(model, xx, yy, out)) throw SingularJacobian("stationarity field on a cut locus");
  };
  for (int i = 0; i < p; ++i) {
    geo::exp_map(m, x.coords, h * Ex.col(i), moved);
    field(moved, y.coords, fp);
    geo::exp_map(m, x.coords, -h * Ex.col(i), moved);
    field(moved, y.coords, fm);
    B.col(i) = Ey.transpose() * (fp - fm) / (2.0 * h);
    geo::exp_map(m, y.coords, h * Ey.col(i), moved);
    field(x.coords, moved, fp);
    geo::exp_map(m, y.coords, -h * Ey.col(i), moved);
    field(x.coords, moved, fm);
    A.col(i) = Ey.transpose() * (fp - fm) / (2.0 * h);
  }
  const Eigen::PartialPivLU<Mat> lu(A);
  if (!(std::abs(lu.determinant()) >= kSingularDet)) throw SingularJacobian("|det D_y F| below 1e-12");
  JacobianResult r;
  r.J = -lu.solve(B);
  const double det = Eigen::PartialPivLU<Mat>(r.J).determinant();
  if (!(std::abs(det) > 0.0) || !std::isfinite(det)) throw SingularJacobian("transport Jacobian is singular");
  r.logdet = std::log(std::abs(det));
  return r;
}

RnotMap::RnotMap(const PotentialModel& model, TargetPool pool, InnerSolverConfig inner)
    : model_(model), pool_(std::move(pool)), inner_(inner) {
  inner_.validate();
}

MapValue RnotMap::apply(const Point& x) const {
  const InnerSolveResult r = inner_solve(model_, x, pool_, inner_);
  return MapValue{r.y_star, r.residual, r.value, !r.failed};
}

JacobianResult RnotMap::jacobian(const Point& x, const Point& y, double h) const {
  return transport_jacobian(model_, x, y, h);
}

double RnotMap::target_dual_mean(const std::vector<Point>& ys, int threads) const {
  std::vector<double> v(ys.size());
  parallel_for(ys.size(), threads, [&](std::size_t i) { v[i] = model_.value(ys[i].coords); });
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(ys.size());
}

TargetPool eval_pool(const PotentialModel& model, const Measure& target, const EvalConfig& cfg) {
  Rng rng = make_rng(cfg.seed, stream::kEvalPool);
  return make_pool(model, target.sample(static_cast<std::size_t>(cfg.pool_size), rng));
}

// RCPM ------------------------------------------------------------------------

RcpmMap::RcpmMap(const RcpmModel& model, InnerSolverConfig inner, double singular_value_floor)
    : model_(model), inner_(inner), floor_(singular_value_floor) {
  inner_.validate();
}

MapValue RcpmMap::apply(const Point& x) const {
  MapValue v{x, 0.0, 0.0, true};
  try {
    v.y = rcpm_transport(model_, x);
  } catch (const GeometryError&) {
    v.ok = false;
  }
  v.dual_value = rcpm_potential(model_, x);
  return v;
}

JacobianResult RcpmMap::jacobian(const Point& x, const Point& y, double h) const {
  const Manifold& m = model_.manifold();
  const int p = m.dim();
  const Mat Ex = basis_of(m, x.coords);
  const Mat Ey = basis_of(m, y.coords);
  JacobianResult r;
  r.J.resize(p, p);
  Vec moved;
  Vec lp;
  Vec lm;
  for (int i = 0; i < p; ++i) {
    geo::exp_map(m, x.coords, h * Ex.col(i), moved);
    const Point yp = rcpm_transport(model_, Point{m, moved});
    geo::exp_map(m, x.coords, -h * Ex.col(i), moved);
    const Point ym = rcpm_transport(model_, Point{m, moved});
    if (!geo::log_map(m, y.coords, yp.coords, lp) || !geo::log_map(m, y.coords, ym.coords, lm)) {
      throw SingularJacobian("perturbed image on the cut locus of T(x)");
    }
    r.J.col(i) = Ey.transpose() * (lp - lm) / (2.0 * h);
  }
  const Vec sv = Eigen::JacobiSVD<Mat>(r.J).singularValues();
  r.logdet = sv.array().max(floor_).log().sum();
  return r;
}

double RcpmMap::target_dual_mean(const std::vector<Point>& ys, int threads) const {
  const RcpmPotential phi(model_);
  const TargetPool pool = make_pool(phi, model_.sites());
  std::vector<double> v(ys.size());
  parallel_for(ys.size(), threads, [&](std::size_t i) { v[i] = inner_solve(phi, ys[i], pool, inner_).value; });
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(ys.size());
}

// Reports ---------------------------------------------------------------------

namespace {

struct PointEval {
  bool failed = false;  // map could not be evaluated
  bool gated = false;   // excluded from the density terms
  double residual = 0.0;
  double cost = 0.0;
  double dual = 0.0;
  double term = 0.0;  // log mu(x) - log|det J| - log nu(T(x))
};

PointEval eval_point(const TransportMap& map, const Measure* source, const Measure* target,
                     const Point& x, const EvalConfig& cfg) {
  PointEval e;
  MapValue v;
  try {
    v = map.apply(x);
  } catch (const GeometryError&) {
    v.ok = false;
  }
  if (!v.ok) {
    e.failed = e.gated = true;
    return e;
  }
  e.residual = v.residual;
  e.dual = v.dual_value;
  const double d = dist(x, v.y);
  e.cost = 0.5 * d * d;
  if (!(v.residual <= cfg.residual_gate)) {
    e.gated = true;
    return e;
  }
  if (!source || !target) return e;
  try {
    const JacobianResult j = map.jacobian(x, v.y, cfg.fd_step);
    e.term = source->log_density(x) - j.logdet - target->log_density(v.y);
    if (!std::isfinite(e.term)) e.gated = true;
  } catch (const SingularJacobian&) {
    e.gated = true;
  } catch (const GeometryError&) {
    e.gated = true;
  }
  return e;
}

}  // namespace

EvalReport evaluate(const TransportMap& map, const Measure& source, const Measure& target,
                    const EvalConfig& cfg) {
  cfg.validate();
  if (!source.has_density() || !target.has_density()) {
    throw std::invalid_argument("evaluate: KL/ESS need analytic source and target densities");
  }
  if (!(source.manifold() == map.manifold()) || !(target.manifold() == map.manifold())) {
    throw GeometryError("evaluate: manifold mismatch");
  }
  const std::size_t n = static_cast<std::size_t>(cfg.n_samples);
  std::vector<double> kl_b;
  std::vector<double> ess_b;
  std::vector<double> z_b;
  double cost = 0.0;
  double dual_x = 0.0;
  double residual = 0.0;
  int kept = 0;
  int solved = 0;
  int gated = 0;
  for (int b = 0; b < cfg.n_batches; ++b) {
    Rng rng = make_rng(cfg.seed, stream::kEvalSource, static_cast<std::uint64_t>(b));
    const auto xs = source.sample(n, rng);
    std::vector<PointEval> pe(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) { pe[i] = eval_point(map, &source, &target, xs[i], cfg); });
    std::vector<double> logw;
    double kl = 0.0;
    for (const auto& e : pe) {
      if (!e.failed) {
        ++solved;
        residual += e.residual;
      }
      if (e.gated) {
        ++gated;
        continue;
      }
      ++kept;
      cost += e.cost;
      dual_x += e.dual;
      kl += e.term;
      logw.push_back(-e.term);  // log nu(y) - log nu_theta(y)
    }
    if (logw.empty()) continue;
    const double nb = static_cast<double>(logw.size());
    kl_b.push_back(kl / nb);
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : logw) mx = std::max(mx, l);
    double s1 = 0.0;
    double s2 = 0.0;
    for (double l : logw) {
      const double w = std::exp(l - mx);
      s1 += w;
      s2 += w * w;
    }
    ess_b.push_back(s1 * s1 / (s2 * nb));
    z_b.push_back(std::exp(mx + std::log(s1 / nb)));
  }

  EvalReport r;
  const int total = cfg.n_samples * cfg.n_batches;
  r.gated_fraction = static_cast<double>(gated) / static_cast<double>(total);
  r.unreliable = r.gated_fraction > cfg.unreliable_fraction;
  r.n_evaluated = kept;
  r.mean_residual = solved > 0 ? residual / solved : kNaN;
  const MeanCi kl = mean_ci(kl_b);
  const MeanCi ess = mean_ci(ess_b);
  r.kl_mean = kl.mean;
  r.kl_ci = kl.ci;
  r.ess_mean = ess.mean;
  r.ess_ci = ess.ci;
  r.z_hat = mean_ci(z_b).mean;
  if (kept > 0) {
    r.mean_cost = cost / kept;
    Rng trng = make_rng(cfg.seed, stream::kEvalTarget);
    const auto ys = target.sample(static_cast<std::size_t>(total), trng);
    const double loss = -dual_x / kept - map.target_dual_mean(ys, cfg.threads);
    const double gap = r.mean_cost + loss;
    r.monge_gap_rel = r.mean_cost > 0 ? std::abs(gap) / r.mean_cost : std::abs(gap);
  } else {
    r.mean_cost = r.monge_gap_rel = kNaN;
  }
  return r;
}

KlEstimate kl_estimate(const TransportMap& map, const Measure& source, const Measure& target,
                       const EvalConfig& cfg) {
  const EvalReport r = evaluate(map, source, target, cfg);
  return {r.kl_mean, r.kl_ci};
}

EssEstimate ess_estimate(const TransportMap& map, const Measure& source, const Measure& target,
                         const EvalConfig& cfg) {
  const EvalReport r = evaluate(map, source, target, cfg);
  return {r.ess_mean, r.ess_ci, r.z_hat};
}

CostReport evaluate_cost(const TransportMap& map, const std::vector<Point>& xs, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<PointEval> pe(xs.size());
  parallel_for(xs.size(), cfg.threads, [&](std::size_t i) { pe[i] = eval_point(map, nullptr, nullptr, xs[i], cfg); });
  CostReport r;
  int gated = 0;
  int solved = 0;
  for (const auto& e : pe) {
    if (!e.failed) {
      ++solved;
      r.mean_residual += e.residual;
    }
    if (e.gated) {
      ++gated;
      continue;
    }
    ++r.n_evaluated;
    r.mean_cost += e.cost;
  }
  r.mean_cost = r.n_evaluated > 0 ? r.mean_cost / r.n_evaluated : kNaN;
  r.mean_residual = solved > 0 ? r.mean_residual / solved : kNaN;
  r.gated_fraction = xs.empty() ? 0.0 : static_cast<double>(gated) / static_cast<double>(xs.size());
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"kl_mean", r.kl_mean},
          {"kl_ci", r.kl_ci},
          {"ess_mean", r.ess_mean},
          {"ess_ci", r.ess_ci},
          {"z_hat", r.z_hat},
          {"mean_cost", r.mean_cost},
          {"monge_gap_rel", r.monge_gap_rel},
          {"gated_fraction", r.gated_fraction},
          {"mean_residual", r.mean_residual},
          {"n_evaluated", r.n_evaluated},
          {"unreliable", r.unreliable},
          {"ci_convention", "1.96 * standard error of the batch means"}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  auto num = [&](const char* k) {
    const auto& v = j.at(k);
    return v.is_null() ? kNaN : v.get<double>();
  };
  EvalReport r;
  r.kl_mean = num("kl_mean");
  r.kl_ci = num("kl_ci");
  r.ess_mean = num("ess_mean");
  r.ess_ci = num("ess_ci");
  r.z_hat = num("z_hat");
  r.mean_cost = num("mean_cost");
  r.monge_gap_rel = num("monge_gap_rel");
  r.gated_fraction = num("gated_fraction");
  r.mean_residual = num("mean_residual");
  r.n_evaluated = j.at("n_evaluated").get<int>();
  r.unreliable = j.at("unreliable").get<bool>();
  return r;
}

std::string eval_csv_header() {
  return "kl_mean,kl_ci,ess_mean,ess_ci,z_hat,mean_cost,monge_gap_rel,gated_fraction,mean_residual,"
         "n_evaluated,unreliable";
}

std::string eval_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.kl_mean << ',' << r.kl_ci << ',' << r.ess_mean << ',' << r.ess_ci
     << ',' << r.z_hat << ',' << r.mean_cost << ',' << r.monge_gap_rel << ',' << r.gated_fraction
     << ',' << r.mean_residual << ',' << r.n_evaluated << ',' << (r.unreliable ? 1 : 0);
  return os.str();
}

RmseResult rmse_between_maps(const PointMap& t1, const PointMap& t2, const Measure& source,
                             std::size_t n, Rng& rng, int threads) {
  if (n < 1) throw std::invalid_argument("rmse_between_maps: n must be >= 1");
  const auto xs = source.sample(n, rng);
  std::vector<double> sq(n, kNaN);
  parallel_for(n, threads, [&](std::size_t i) {
    try {
      const auto a = t1(xs[i]);
      const auto b = t2(xs[i]);
      if (a && b) {
        const double d = dist(*a, *b);
        sq[i] = d * d;
      }
    } catch (const GeometryError&) {
    }
  });
  RmseResult r;
  double s = 0.0;
  int used = 0;
  for (double v : sq) {
    if (std::isnan(v)) {
      ++r.excluded;
      continue;
    }
    s += v;
    ++used;
  }
  r.rmse = used > 0 ? std::sqrt(s / used) : kNaN;
  return r;
}

// Sweep -------------------------------------------------------------------------

Task uniform_to_wrapped_normal(const Manifold& m, double sigma) {
  return Task{Measure::uniform(m), Measure::wrapped_normal(south_pole_wrapped_normal(m, sigma))};
}

std::string sweep_key(int p, const std::string& method, double gamma, std::uint64_t seed) {
  std::ostringstream os;
  os << p << '|' << method << '|';
  if (method == "rnot" || std::isnan(gamma)) {
    os << "-";
  } else {
    os << std::setprecision(17) << gamma;
  }
  os << '|' << seed;
  return os.str();
}

namespace {

SweepRow run_rnot_cell(const SweepConfig& cfg, const Manifold& m, const Task& task, std::uint64_t seed) {
  SweepRow row{m.dim(), "rnot", kNaN, seed, kNaN, kNaN, 0.0};
  const LandmarkSet L = select_landmarks_fps(m, cfg.landmarks, derive_seed(seed, stream::kLandmarks));
  MlpConfig net = cfg.net;
  net.input_dim = cfg.landmarks;
  net.init_seed = derive_seed(seed, stream::kNetInit);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  const TrainResult trained = train(task.source, task.target, PotentialModel(L, init_mlp(net)), tc);
  EvalConfig ec = cfg.eval;
  ec.seed = seed;
  const RnotMap map(trained.model, eval_pool(trained.model, task.target, ec), ec.inner);
  const EvalReport r = evaluate(map, task.source, task.target, ec);
  row.kl = r.kl_mean;
  row.ess = r.ess_mean;
  return row;
}

SweepRow run_rcpm_cell(const SweepConfig& cfg, const Manifold& m, const Task& task, double gamma,
                       std::uint64_t seed) {
  SweepRow row{m.dim(), "rcpm", gamma, seed, kNaN, kNaN, 0.0};
  RcpmTrainConfig rc = cfg.rcpm;
  rc.seed = seed;
  const RcpmTrainResult trained = rcpm_train(task.source, task.target, cfg.rcpm_sites, gamma, rc);
  EvalConfig ec = cfg.eval;
  ec.seed = seed;
  const RcpmMap map(trained.model, rc.inner, ec.singular_value_floor);
  const EvalReport r = evaluate(map, task.source, task.target, ec);
  row.kl = r.kl_mean;
  row.ess = r.ess_mean;
  return row;
}

}  // namespace

std::vector<SweepRow> dimension_sweep(const SweepConfig& cfg, const std::vector<SweepRow>& done,
                                      const std::function<void(const SweepRow&)>& on_row) {
  if (cfg.p_grid.empty()) throw std::invalid_argument("dimension_sweep: empty p grid");
  if (cfg.family != "sphere" && cfg.family != "torus") {
    throw std::invalid_argument("dimension_sweep: family must be sphere or torus");
  }
  for (const auto& method : cfg.methods) {
    if (method != "rnot" && method != "rcpm") throw std::invalid_argument("dimension_sweep: unknown method " + method);
  }
  std::vector<std::string> seen;
  for (const auto& r : done) seen.push_back(sweep_key(r.p, r.method, r.gamma, r.seed));
  auto is_done = [&](const std::string& k) { return std::find(seen.begin(), seen.end(), k) != seen.end(); };

  std::vector<SweepRow> rows;
  for (int p : cfg.p_grid) {
    const Manifold m = cfg.family == "sphere" ? Manifold::sphere(p) : Manifold::torus(p);
    const Task task = uniform_to_wrapped_normal(m, cfg.sigma);
    for (std::uint64_t seed : cfg.seeds) {
      for (const auto& method : cfg.methods) {
        const std::vector<double> gammas = method == "rnot" ? std::vector<double>{kNaN} : cfg.gammas;
        for (double gamma : gammas) {
          if (is_done(sweep_key(p, method, gamma, seed))) continue;
          const auto t0 = std::chrono::steady_clock::now();
          SweepRow row{p, method, gamma, seed, kNaN, kNaN, 0.0};
          try {
            row = method == "rnot" ? run_rnot_cell(cfg, m, task, seed) : run_rcpm_cell(cfg, m, task, gamma, seed);
          } catch (const std::exception&) {
            // Recorded as a NaN row; the sweep continues.
          }
          row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          rows.push_back(row);
          if (on_row) on_row(row);
        }
      }
    }
  }
  return rows;
}

std::string sweep_csv_header() { return "p,method,gamma,seed,kl,ess,seconds"; }

std::string sweep_csv_row(const SweepRow& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.p << ',' << r.method << ',' << r.gamma << ',' << r.seed << ','
     << r.kl << ',' << r.ess << ',' << r.seconds;
  return os.str();
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << sweep_csv_header() << '\n';
  for (const auto& r : rows) os << sweep_csv_row(r) << '\n';
}

std::vector<SweepRow> read_sweep_csv(std::istream& is) {
  std::vector<SweepRow> rows;
  std::string line;
  int lineno = 0;
  auto number = [&](const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
      throw std::runtime_error("sweep table line " + std::to_string(lineno) + ": bad number '" + s + "'");
    }
    return v;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != sweep_csv_header()) throw std::runtime_error("sweep table: unexpected header");
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) {
      throw std::runtime_error("sweep table line " + std::to_string(lineno) + ": expected 7 fields");
    }
    SweepRow r;
    r.p = static_cast<int>(number(f[0]));
    r.method = f[1];
    r.gamma = number(f[2]);
    r.seed = std::stoull(f[3]);
    r.kl = number(f[4]);
    r.ess = number(f[5]);
    r.seconds = number(f[6]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace rnot
