#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rnot/ctransform.hpp"
#include "rnot/rcpm.hpp"

using namespace rnot;

namespace {

Point S2(double a, double b, double c) { return project(Vec{{a, b, c}}, Manifold::sphere(2)); }

// psi(y) = kappa everywhere.
class ConstantPotential final : public Potential {
 public:
  ConstantPotential(Manifold m, double kappa) : m_(m), kappa_(kappa) {}
  const Manifold& manifold() const override { return m_; }
  double value(const VecRef&) const override { return kappa_; }
  double value_and_grad(const VecRef& y, Vec& grad, bool*) const override {
    grad = Vec::Zero(y.size());
    return kappa_;
  }

 private:
  Manifold m_;
  double kappa_;
};

// psi + kappa for a wrapped potential.
class Shifted final : public Potential {
 public:
  Shifted(const Potential& base, double kappa) : base_(base), kappa_(kappa) {}
  const Manifold& manifold() const override { return base_.manifold(); }
  double value(const VecRef& y) const override { return base_.value(y) + kappa_; }
  double value_and_grad(const VecRef& y, Vec& grad, bool* p) const override {
    return base_.value_and_grad(y, grad, p) + kappa_;
  }

 private:
  const Potential& base_;
  double kappa_;
};

PotentialModel random_model(const Manifold& m, int M, std::uint64_t seed, double scale = 1.0) {
  MlpConfig c;
  c.input_dim = M;
  c.hidden = {16, 16};
  c.activation = Activation::Softplus;
  c.init_seed = seed;
  Mlp net = init_mlp(c);
  net.params.flat() *= scale;
  return PotentialModel(select_landmarks_fps(m, M, seed + 1), std::move(net));
}

InnerSolverConfig solver() {
  InnerSolverConfig cfg;
  cfg.stall_iters = 100;
  return cfg;
}

double F(const Potential& psi, const Point& x, const Point& y) {
  const double d = dist(x, y);
  return 0.5 * d * d - psi.value(y.coords);
}

}  // namespace

TEST(LseInit, ColdLimitPicksBestPoolPoint) {
  const Manifold m = Manifold::sphere(2);
  const PotentialModel psi = random_model(m, 8, 1);
  Rng rng(2);
  const auto pts = sample_uniform(m, 64, rng);
  const TargetPool pool = make_pool(psi, pts);
  for (int i = 0; i < 20; ++i) {
    const Point x = sample_uniform(m, rng);
    std::size_t best = 0;
    for (std::size_t k = 1; k < pts.size(); ++k) {
      if (F(psi, x, pts[k]) < F(psi, x, pts[best])) best = k;
    }
    EXPECT_LT((lse_init(psi, x, pool, 1e-8).coords - pts[best].coords).norm(), 1e-12);
  }
}

TEST(LseInit, SinglePointPool) {
  const Manifold m = Manifold::torus(2);
  const PotentialModel psi = random_model(m, 4, 3);
  Rng rng(4);
  const Point y = sample_uniform(m, rng);
  const TargetPool pool = make_pool(psi, {y});
  EXPECT_LT((lse_init(psi, sample_uniform(m, rng), pool, 0.1).coords - y.coords).norm(), 1e-12);
}

TEST(LseInit, SoftmaxWeightsForUnitScoreGap) {
  const ConstantPotential zero(Manifold::sphere(2), 0.0);
  const Point x = S2(1, 0, 0), y1 = S2(1, 1, 0), y2 = S2(0, 1, 0);
  const double c1 = 0.5 * std::pow(oracle::sphere_dist(x.coords, y1.coords), 2);
  const double c2 = 0.5 * std::pow(oracle::sphere_dist(x.coords, y2.coords), 2);
  const double gamma = c2 - c1;  // score gap of exactly one temperature
  const double e = std::exp(1.0);
  const Vec mean = e / (1 + e) * y1.coords + 1 / (1 + e) * y2.coords;
  const Point got = lse_init(zero, x, make_pool(zero, {y1, y2}), gamma);
  EXPECT_LT((got.coords - mean.normalized()).norm(), 1e-12);
}

TEST(LseInit, TorusUsesCircularMean) {
  const Manifold m = Manifold::torus(1);
  const ConstantPotential zero(m, 0.0);
  const Point a = make_point(m, Vec::Constant(1, 0.1)), b = make_point(m, Vec::Constant(1, 2 * kPi - 0.1));
  // Equal scores: the circular mean is 0, not the arithmetic mean pi.
  const Point got = lse_init(zero, make_point(m, Vec::Constant(1, kPi)), make_pool(zero, {a, b}), 1.0);
  EXPECT_LT(std::abs(geo::wrap_angle(got.coords[0])), 1e-12);
}

TEST(LseInit, RejectsBadArguments) {
  const ConstantPotential zero(Manifold::sphere(2), 0.0);
  const TargetPool empty{Manifold::sphere(2), {}, Vec()};
  EXPECT_THROW(lse_init(zero, S2(1, 0, 0), empty, 0.1), std::invalid_argument);
  EXPECT_THROW(lse_init(zero, S2(1, 0, 0), make_pool(zero, {S2(0, 1, 0)}), 0.0), std::invalid_argument);
  InnerSolverConfig cfg;
  cfg.step_size = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = InnerSolverConfig{};
  cfg.max_iters = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(InnerSolve, ZeroPotentialRecoversIdentity) {
  Rng rng(5);
  for (const Manifold& m : {Manifold::sphere(2), Manifold::sphere(4), Manifold::torus(3)}) {
    MlpConfig c;
    c.input_dim = 8;
    c.hidden = {8};
    const PotentialModel psi(select_landmarks_fps(m, 8, 6), Mlp{c, MlpParams::zeros(c)});
    const TargetPool pool = make_pool(psi, sample_uniform(m, 128, rng));
    InnerSolverConfig cfg;
    cfg.residual_tol = 1e-8;
    for (int i = 0; i < 20; ++i) {
      const Point x = sample_uniform(m, rng);
      const auto r = inner_solve(psi, x, pool, cfg);
      EXPECT_LT(r.residual, 1e-6);
      EXPECT_LT(dist(r.y_star, x), 1e-6);
      EXPECT_TRUE(r.converged);
      EXPECT_LT(dist(transport_point(psi, x, pool, cfg), x), 1e-6);
    }
  }
}

TEST(InnerSolve, ConstantPotentialGivesMinusKappa) {
  const Manifold m = Manifold::sphere(2);
  const ConstantPotential psi(m, 1.75);
  Rng rng(7);
  const Point x = sample_uniform(m, rng);
  EXPECT_EQ(c_transform_value(psi, x, make_pool(psi, {x}), InnerSolverConfig{}).value, -1.75);
  const auto v = c_transform_value(psi, x, make_pool(psi, sample_uniform(m, 64, rng)), InnerSolverConfig{});
  EXPECT_NEAR(v.value, -1.75, 1e-8);
}

TEST(InnerSolve, MatchesDenseBruteForceForSmallPotential) {
  const Manifold m = Manifold::sphere(2);
  const PotentialModel psi = random_model(m, 16, 8, 1e-3);
  const Mat grid = oracle::fibonacci_sphere(1000000);
  Vec psi_grid(grid.cols());
  for (Eigen::Index k = 0; k < grid.cols(); ++k) psi_grid[k] = psi.value(grid.col(k));
  Rng rng(9);
  const TargetPool pool = make_pool(psi, sample_uniform(m, 256, rng));
  for (int i = 0; i < 5; ++i) {
    const Point x = sample_uniform(m, rng);
    double brute = 1e300;
    for (Eigen::Index k = 0; k < grid.cols(); ++k) {
      const double d = oracle::sphere_dist(x.coords, grid.col(k));
      brute = std::min(brute, 0.5 * d * d - psi_grid[k]);
    }
    EXPECT_NEAR(c_transform_value(psi, x, pool, solver()).value, brute, 1e-4);
  }
}

TEST(InnerSolve, ReportsRecomputableValueAndResidual) {
  Rng rng(10);
  for (const Manifold& m : {Manifold::sphere(2), Manifold::torus(2)}) {
    const PotentialModel psi = random_model(m, 12, 11);
    const auto pts = sample_uniform(m, 128, rng);
    const TargetPool pool = make_pool(psi, pts);
    for (int i = 0; i < 20; ++i) {
      const Point x = sample_uniform(m, rng);
      std::vector<TraceRow> trace;
      InnerSolverConfig cfg;
      cfg.max_iters = 300;
      const auto r = inner_solve(psi, x, pool, cfg, &trace);
      // y* is a feasible point, so the value is an upper bound on the infimum.
      EXPECT_NEAR(r.value, F(psi, x, r.y_star), 1e-13);
      EXPECT_EQ(r.residual, stationarity_residual(psi, x, r.y_star));
      ASSERT_EQ(trace.size(), static_cast<std::size_t>(r.iterations) + 1);
      EXPECT_LE(r.value, trace.front().value);
      for (const auto& y : pts) EXPECT_LE(r.value, F(psi, x, y));
      EXPECT_TRUE(r.residual <= trace.front().residual || r.iterations == cfg.max_iters);
    }
  }
}

TEST(InnerSolve, ValueNonincreasingInIterationBudget) {
  const Manifold m = Manifold::sphere(2);
  const PotentialModel psi = random_model(m, 12, 12);
  Rng rng(13);
  const TargetPool pool = make_pool(psi, sample_uniform(m, 64, rng));
  for (int i = 0; i < 10; ++i) {
    const Point x = sample_uniform(m, rng);
    double prev = 1e300;
    for (int iters : {1, 5, 25, 125, 625}) {
      InnerSolverConfig cfg;
      cfg.max_iters = iters;
      const double v = c_transform_value(psi, x, pool, cfg).value;
      EXPECT_LE(v, prev);
      prev = v;
    }
  }
}

TEST(InnerSolve, ConstantShiftPassesThrough) {
  Rng rng(14);
  for (const Manifold& m : {Manifold::sphere(2), Manifold::torus(2)}) {
    const PotentialModel psi = random_model(m, 12, 15);
    const Shifted shifted(psi, 0.25);
    const auto pts = sample_uniform(m, 128, rng);
    const TargetPool pool = make_pool(psi, pts), shifted_pool = make_pool(shifted, pts);
    for (int i = 0; i < 20; ++i) {
      const Point x = sample_uniform(m, rng);
      const auto a = c_transform_value(psi, x, pool, solver());
      const auto b = c_transform_value(shifted, x, shifted_pool, solver());
      EXPECT_NEAR(b.value, a.value - 0.25, 1e-12);
      EXPECT_LT(dist(a.result.y_star, b.result.y_star), 1e-9);
    }
  }
}

TEST(InnerSolve, SupNormContraction) {
  const Manifold m = Manifold::sphere(2);
  const PotentialModel psi1 = random_model(m, 16, 16);
  PotentialModel psi2 = psi1;
  Rng rng(17);
  std::normal_distribution<double> g(0.0, 0.02);
  for (auto& p : psi2.net().params.flat()) p += g(rng);
  const auto probes = sample_uniform(m, 4096, rng);
  double delta = 0.0;
  for (const auto& y : probes) delta = std::max(delta, std::abs(psi1.value(y.coords) - psi2.value(y.coords)));
  ASSERT_GT(delta, 0.0);
  const TargetPool pool1 = make_pool(psi1, probes), pool2 = make_pool(psi2, probes);
  const double solver_gap = 1e-4;
  for (int i = 0; i < 64; ++i) {
    const Point& x = probes[static_cast<std::size_t>(i)];
    const double a = c_transform_value(psi1, x, pool1, solver()).value;
    const double b = c_transform_value(psi2, x, pool2, solver()).value;
    EXPECT_LE(std::abs(a - b), delta + 2 * solver_gap);
  }
}

TEST(InnerSolve, DoubleTransformOfDiscretePotential) {
  const Manifold m = Manifold::sphere(2);
  Rng rng(18);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  const auto sites = sample_uniform(m, 5, rng);
  Vec alphas(5);
  for (auto& a : alphas) a = u(rng);
  const RcpmModel model(m, sites, alphas, 0.0);
  const RcpmPotential phi(model);

  // phi^c on a dense pool (sites included), then phi^cc by pool minimisation.
  std::vector<Point> pool_pts = sites;
  const Mat grid = oracle::fibonacci_sphere(4096);
  for (Eigen::Index k = 0; k < grid.cols(); ++k) pool_pts.push_back(make_point(m, grid.col(k)));
  const TargetPool pool = make_pool(phi, pool_pts);
  InnerSolverConfig cfg = RcpmTrainConfig::default_inner();
  std::vector<double> phi_c(pool_pts.size());
  for (std::size_t k = 0; k < pool_pts.size(); ++k) {
    phi_c[k] = c_transform_value(phi, pool_pts[k], pool, cfg).value;
  }
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(phi_c[static_cast<std::size_t>(i)], -alphas[i], 1e-9);

  for (int i = 0; i < 256; ++i) {
    const Point x = sample_uniform(m, rng);
    double cc = 1e300;
    for (std::size_t k = 0; k < pool_pts.size(); ++k) {
      const double d = oracle::sphere_dist(x.coords, pool_pts[k].coords);
      cc = std::min(cc, 0.5 * d * d - phi_c[k]);
    }
    EXPECT_NEAR(cc, rcpm_potential(model, x), 5e-3);
  }
}

TEST(Transport, InterpolantAtOneIsTheArgmin) {
  const Manifold m = Manifold::sphere(2);
  const PotentialModel psi = random_model(m, 12, 19, 0.3);
  Rng rng(20);
  const TargetPool pool = make_pool(psi, sample_uniform(m, 128, rng));
  for (int i = 0; i < 100; ++i) {
    const Point x = sample_uniform(m, rng);
    const Point y = transport_point(psi, x, pool, solver());
    // grad phi(x) = -log_x(y*), so exp_x(-t grad phi) at t = 1 is y*.
    const TangentVector minus_grad = log_map(x, y);
    EXPECT_LT(dist(exp_map(x, minus_grad), y), 1e-9);
    const TangentVector half{x, 0.5 * minus_grad.vec};
    EXPECT_NEAR(dist(x, exp_map(x, half)), 0.5 * dist(x, y), 1e-9);
  }
}
