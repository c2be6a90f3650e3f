#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "oracles.hpp"
#include "rnot/rcpm.hpp"

using namespace rnot;

namespace {

Point S2(double a, double b, double c) { return project(Vec{{a, b, c}}, Manifold::sphere(2)); }

RcpmModel random_rcpm(const Manifold& m, int count, double gamma, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 0.2);
  Vec alphas(count);
  for (auto& a : alphas) a = u(rng);
  return RcpmModel(m, sample_uniform(m, static_cast<std::size_t>(count), rng), alphas, gamma);
}

// Independent evaluation of the smoothed potential and its weights.
double softmin_oracle(const RcpmModel& model, const Point& x, Vec* weights = nullptr) {
  const int n = model.size();
  Vec e(n);
  for (int i = 0; i < n; ++i) {
    const double d = oracle::sphere_dist(x.coords, model.site_coords().col(i));
    e[i] = 0.5 * d * d + model.alphas()[i];
  }
  const double lo = e.minCoeff();
  const Vec w = (-(e.array() - lo) / model.gamma()).exp().matrix();
  if (weights) *weights = w / w.sum();
  return lo - model.gamma() * std::log(w.sum());
}

int hw_threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

}  // namespace

TEST(RcpmPotential, SingleSiteIsShiftedHalfSquaredDistance) {
  const Manifold m = Manifold::sphere(2);
  Rng rng(1);
  const Point s = sample_uniform(m, rng);
  for (double gamma : {0.0, 0.1, 1.0}) {
    const RcpmModel model(m, {s}, Vec::Constant(1, 0.3), gamma);
    for (int i = 0; i < 20; ++i) {
      const Point x = sample_uniform(m, rng);
      const double d = oracle::sphere_dist(x.coords, s.coords);
      EXPECT_NEAR(rcpm_potential(model, x), 0.5 * d * d + 0.3, 1e-12);
    }
  }
}

TEST(RcpmPotential, SoftminWithinLseBoundOfHardMin) {
  const Manifold m = Manifold::sphere(2);
  const RcpmModel soft = random_rcpm(m, 16, 1e-3, 2);
  const RcpmModel hard(m, soft.sites(), soft.alphas(), 0.0);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Point x = sample_uniform(m, rng);
    const double gap = rcpm_potential(hard, x) - rcpm_potential(soft, x);
    EXPECT_GE(gap, -1e-15);
    EXPECT_LE(gap, 1e-3 * std::log(16.0) + 1e-15);
    EXPECT_NEAR(rcpm_potential(soft, x), softmin_oracle(soft, x), 1e-12);
  }
}

TEST(RcpmPotential, EquidistantSitesShareTheMinimum) {
  const RcpmModel model(Manifold::sphere(2), {S2(1, 0, 0), S2(0, 1, 0), S2(0, 0, 1)}, Vec::Constant(3, 0.1), 0.0);
  const Point x = S2(1, 1, 1);
  const double d = std::acos(1.0 / std::sqrt(3.0));
  EXPECT_NEAR(rcpm_potential(model, x), 0.5 * d * d + 0.1, 1e-12);
  // Exact three-way tie: the lowest index wins.
  EXPECT_EQ(rcpm_transport(model, x).coords, model.site_coords().col(0));
}

TEST(RcpmTransport, NearestSiteWhenAlphasVanish) {
  const RcpmModel model(Manifold::sphere(2), {S2(0, 1, 0), S2(0, 0, 1)}, Vec::Zero(2), 0.0);
  EXPECT_EQ(rcpm_transport(model, S2(0.1, 0.8, 0.3)).coords, model.site_coords().col(0));
  EXPECT_EQ(rcpm_transport(model, S2(0.1, 0.3, 0.8)).coords, model.site_coords().col(1));
}

TEST(RcpmTransport, HardMinPushforwardHasAtMostMPoints) {
  for (const Manifold& m : {Manifold::sphere(2), Manifold::torus(3)}) {
    const RcpmModel model = random_rcpm(m, 12, 0.0, 4);
    Rng rng(5);
    std::set<std::vector<double>> support;
    for (int i = 0; i < 10000; ++i) {
      const Vec y = rcpm_transport(model, sample_uniform(m, rng)).coords;
      support.insert(std::vector<double>(y.data(), y.data() + y.size()));
    }
    EXPECT_LE(support.size(), 12u);
  }
}

TEST(RcpmTransport, SmoothedMapOnBisectorStaysOnBisector) {
  const double t = 0.4;
  const RcpmModel model(Manifold::sphere(2), {S2(std::cos(t), std::sin(t), 0), S2(std::cos(t), -std::sin(t), 0)},
                        Vec::Zero(2), 0.1);
  for (double phi : {-0.7, 0.0, 0.3, 1.1}) {
    const Point x = S2(std::cos(phi), 0, std::sin(phi));
    EXPECT_LT(std::abs(rcpm_transport(model, x).coords[1]), 1e-12);
  }
}

TEST(RcpmTransport, SmoothedMapFollowsWeightedLogs) {
  const Manifold m = Manifold::sphere(2);
  const RcpmModel model = random_rcpm(m, 6, 0.2, 6);
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const Point x = sample_uniform(m, rng);
    Vec w;
    softmin_oracle(model, x, &w);
    Vec v = Vec::Zero(3);
    for (int j = 0; j < model.size(); ++j) v += w[j] * log_map(x, model.site(j)).vec;
    EXPECT_LT((rcpm_transport(model, x).coords - exp_map(x, TangentVector{x, v}).coords).norm(), 1e-12);
  }
}

TEST(RcpmPotential, GradientMatchesFiniteDifferences) {
  const Manifold m = Manifold::sphere(2);
  const RcpmModel model = random_rcpm(m, 6, 0.2, 8);
  const RcpmPotential phi(model);
  Rng rng(9);
  const double h = 1e-6;
  for (int i = 0; i < 30; ++i) {
    const Point x = sample_uniform(m, rng);
    Vec g;
    phi.value_and_grad(x.coords, g);
    const TangentBasis basis = tangent_basis(x);
    for (int k = 0; k < 2; ++k) {
      const Vec e = basis.columns.col(k);
      const double fd = (rcpm_potential(model, exp_map(x, TangentVector{x, h * e})) -
                         rcpm_potential(model, exp_map(x, TangentVector{x, -h * e}))) / (2 * h);
      EXPECT_NEAR(g.dot(e), fd, 1e-7);
    }
  }
}

TEST(RcpmModel, ValidatesAndRoundTripsThroughJson) {
  const Manifold m = Manifold::torus(2);
  EXPECT_THROW(RcpmModel(m, {}, Vec(), 0.0), std::invalid_argument);
  Rng rng(10);
  const auto sites = sample_uniform(m, 3, rng);
  EXPECT_THROW(RcpmModel(m, sites, Vec::Zero(2), 0.0), std::invalid_argument);
  EXPECT_THROW(RcpmModel(m, sites, Vec::Zero(3), -1.0), std::invalid_argument);
  EXPECT_THROW(RcpmModel(Manifold::sphere(2), sites, Vec::Zero(3), 0.0), GeometryError);

  const RcpmModel model = random_rcpm(Manifold::sphere(3), 5, 0.05, 11);
  const RcpmModel back = rcpm_from_json(nlohmann::json::parse(rcpm_to_json(model).dump()));
  EXPECT_EQ(back.site_coords(), model.site_coords());
  EXPECT_EQ(back.alphas(), model.alphas());
  EXPECT_EQ(back.gamma(), model.gamma());
  EXPECT_EQ(back.manifold(), model.manifold());
}

TEST(RcpmSemidual, AlphaAndSiteGradientsMatchFiniteDifferences) {
  const Manifold m = Manifold::sphere(2);
  const RcpmModel model = random_rcpm(m, 4, 0.1, 12);
  Rng rng(13);
  const auto xs = sample_uniform(m, 8, rng), ys = sample_uniform(m, 8, rng);
  InnerSolverConfig cfg;
  cfg.residual_tol = 1e-9;
  cfg.max_iters = 20000;
  const RcpmStep s = rcpm_semidual_step(model, xs, ys, cfg);
  const double h = 1e-5;
  const auto loss = [&](const RcpmModel& mm) { return rcpm_semidual_step(mm, xs, ys, cfg).loss; };
  for (int i = 0; i < model.size(); ++i) {
    RcpmModel plus = model, minus = model;
    plus.alphas()[i] += h;
    minus.alphas()[i] -= h;
    EXPECT_NEAR((loss(plus) - loss(minus)) / (2 * h), s.alpha_grad[i], 1e-5) << "alpha " << i;

    const Point site = model.site(i);
    const Vec e = tangent_basis(site).columns.col(0);
    plus = model;
    minus = model;
    plus.set_site(i, exp_map(site, TangentVector{site, h * e}).coords);
    minus.set_site(i, exp_map(site, TangentVector{site, -h * e}).coords);
    EXPECT_NEAR((loss(plus) - loss(minus)) / (2 * h), s.site_grad.col(i).dot(e), 1e-5) << "site " << i;
  }
}

TEST(RcpmTrain, SeparableClustersMapToTheirAtoms) {
  const Manifold m = Manifold::sphere(2);
  const std::vector<Point> atoms{S2(1, 0, 0), S2(-1, 0, 0), S2(0, 1, 0), S2(0, -1, 0)};
  std::vector<Point> cloud;
  Rng rng(14);
  std::normal_distribution<double> g(0.0, 0.05);
  for (int k = 0; k < 200; ++k) {
    const Point& a = atoms[static_cast<std::size_t>(k % 4)];
    cloud.push_back(project(a.coords + Vec{{g(rng), g(rng), g(rng)}}, m));
  }
  RcpmTrainConfig cfg;
  cfg.batch_size = 64;
  cfg.steps = 200;
  cfg.seed = 15;
  cfg.threads = hw_threads();
  const auto result = rcpm_train(Measure::empirical(m, cloud), Measure::empirical(m, atoms), 4, 0.0, cfg);
  EXPECT_EQ(result.records.size(), 200u);
  double se = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double d = dist(rcpm_transport(result.model, cloud[static_cast<std::size_t>(k)]), atoms[static_cast<std::size_t>(k % 4)]);
    se += d * d;
  }
  // Sites keep dithering at the Adam step scale; the clusters are pi/2 apart.
  EXPECT_LT(std::sqrt(se / 200), 1e-2);

  const auto again = rcpm_train(Measure::empirical(m, cloud), Measure::empirical(m, atoms), 4, 0.0, cfg);
  EXPECT_EQ(again.model.site_coords(), result.model.site_coords());
  EXPECT_EQ(again.model.alphas(), result.model.alphas());
}

TEST(Quantization, CircleMatchesClosedForm) {
  const Measure circle = Measure::uniform(Manifold::torus(1));
  QuantizationConfig cfg;
  cfg.lloyd.threads = hw_threads();
  const auto table = rcpm_rmse_lower_bound_demo(circle, {2, 4, 8, 16}, cfg, 16);
  ASSERT_EQ(table.rows.size(), 4u);
  for (const auto& row : table.rows) {
    const double exact = kPi * kPi / (3.0 * row.m * row.m);
    EXPECT_NEAR(row.v / exact, 1.0, 0.05) << "m = " << row.m;
  }
  EXPECT_NEAR(table.fit.slope, -2.0, 0.1);
}

TEST(Quantization, SphereSlopeIsMinusTwoOverDimension) {
  QuantizationConfig cfg;
  cfg.lloyd.threads = hw_threads();
  const auto table = rcpm_rmse_lower_bound_demo(Measure::uniform(Manifold::sphere(2)), {4, 8, 16, 32, 64, 128, 256}, cfg, 17);
  EXPECT_GE(table.fit.slope, -1.15);
  EXPECT_LE(table.fit.slope, -0.85);
  // Nonincreasing in m; rows share the same held-out samples.
  for (std::size_t i = 1; i < table.rows.size(); ++i) EXPECT_LE(table.rows[i].v, table.rows[i - 1].v);
}

TEST(Quantization, SingleCenterStableAcrossRestarts) {
  const Measure nu = Measure::wrapped_normal(south_pole_wrapped_normal(Manifold::sphere(2), 0.5));
  QuantizationConfig cfg;
  std::vector<double> v;
  for (int restarts : {1, 5, 10}) {
    cfg.lloyd.restarts = restarts;
    v.push_back(rcpm_rmse_lower_bound_demo(nu, {1}, cfg, 18).rows[0].v);
  }
  for (double x : v) {
    EXPECT_GT(x, 0.0);
    EXPECT_NEAR(x / v[0], 1.0, 0.02);
  }
  EXPECT_THROW(rcpm_rmse_lower_bound_demo(nu, {}, cfg, 1), std::invalid_argument);
  EXPECT_THROW(rcpm_rmse_lower_bound_demo(nu, {4, 2}, cfg, 1), std::invalid_argument);
}

TEST(Quantization, DiscreteOtDominatesQuantizationError) {
  const Manifold m = Manifold::sphere(2);
  const int n = 512, sites = 16;
  const RcpmModel model = random_rcpm(m, sites, 0.0, 21);
  Rng rng(22);
  const auto nu = sample_uniform(m, n, rng);
  const auto src = sample_uniform(m, n, rng);
  Mat cost(n, n);
  for (int i = 0; i < n; ++i) {
    const Point eta = rcpm_transport(model, src[static_cast<std::size_t>(i)]);
    for (int j = 0; j < n; ++j) cost(i, j) = std::pow(oracle::sphere_dist(eta.coords, nu[static_cast<std::size_t>(j)].coords), 2);
  }
  const double w2sq = oracle::hungarian(cost) / n;
  // Lloyd on the same empirical sample gives an upper bound on its V_m.
  LloydConfig lc;
  const double v = geodesic_lloyd(nu, sites, lc, 23).distortion;
  EXPECT_GE(w2sq, v - 1e-3);
}

TEST(Quantization, LoglogFitRecoversPowerLaw) {
  const std::vector<double> x{1, 2, 4, 8}, y{3.0, 0.75, 0.1875, 0.046875};
  const SlopeFit f = loglog_fit(x, y);
  EXPECT_NEAR(f.slope, -2.0, 1e-12);
  EXPECT_NEAR(f.intercept, std::log(3.0), 1e-12);
  EXPECT_NEAR(f.slope_ci, 0.0, 1e-9);
}
