#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "rnot/geometry.hpp"

using namespace rnot;

namespace {

Point S(std::initializer_list<double> c) {
  Vec v(static_cast<Eigen::Index>(c.size()));
  Eigen::Index i = 0;
  for (double x : c) v[i++] = x;
  return make_point(Manifold::sphere(static_cast<int>(c.size()) - 1), v);
}

Point T(std::initializer_list<double> c) {
  Vec v(static_cast<Eigen::Index>(c.size()));
  Eigen::Index i = 0;
  for (double x : c) v[i++] = x;
  return make_point(Manifold::torus(static_cast<int>(c.size())), v);
}

// Random tangent vector at x with the given norm.
TangentVector random_tangent(const Point& x, double norm, Rng& rng) {
  std::normal_distribution<double> n01;
  const TangentBasis e = tangent_basis(x);
  Vec c(x.manifold.dim());
  for (auto& a : c) a = n01(rng);
  return {x, e.columns * c.normalized() * norm};
}

const Manifold kManifolds[] = {Manifold::sphere(1), Manifold::sphere(2), Manifold::sphere(5),
                               Manifold::torus(1),  Manifold::torus(2),  Manifold::torus(4)};

}  // namespace

TEST(Geometry, DistanceExamples) {
  EXPECT_NEAR(dist(S({0, 0, 1}), S({0, 0, -1})), kPi, 1e-15);
  EXPECT_NEAR(dist(S({1, 0, 0}), S({0, 1, 0})), kPi / 2, 1e-15);
  EXPECT_NEAR(dist(T({0, 0}), T({kPi, kPi})), kPi * std::sqrt(2.0), 1e-15);
  EXPECT_THROW(dist(S({1, 0, 0}), T({0, 0})), GeometryError);
}

TEST(Geometry, DistanceMatchesOracleAndIsMetric) {
  Rng rng(1);
  for (const Manifold& m : kManifolds) {
    for (int i = 0; i < 200; ++i) {
      const Point a = sample_uniform(m, rng), b = sample_uniform(m, rng), c = sample_uniform(m, rng);
      const double ref = m.is_sphere() ? oracle::sphere_dist(a.coords, b.coords) : oracle::torus_dist(a.coords, b.coords);
      EXPECT_NEAR(dist(a, b), ref, 1e-12);
      EXPECT_DOUBLE_EQ(dist(a, b), dist(b, a));
      EXPECT_LE(dist(a, c), dist(a, b) + dist(b, c) + 1e-12);
    }
  }
}

TEST(Geometry, ExpExamples) {
  const Point e1 = S({1, 0, 0});
  const Point y = exp_map(e1, {e1, Vec::Unit(3, 1) * (kPi / 2)});
  EXPECT_LT((y.coords - Vec::Unit(3, 1)).norm(), 1e-15);
  const Point t = exp_map(T({0}), {T({0}), Vec::Constant(1, 3 * kPi)});
  EXPECT_NEAR(t.coords[0], kPi, 1e-12);
  for (const Manifold& m : kManifolds) {
    Rng rng(2);
    const Point x = sample_uniform(m, rng);
    EXPECT_EQ(exp_map(x, {x, Vec::Zero(m.coord_dim())}).coords, x.coords);
  }
  EXPECT_THROW(exp_map(e1, {S({0, 1, 0}), Vec::Zero(3)}), GeometryError);
}

TEST(Geometry, LogExamples) {
  const TangentVector v = log_map(S({1, 0, 0}), S({0, 1, 0}));
  EXPECT_LT((v.vec - Vec::Unit(3, 1) * (kPi / 2)).norm(), 1e-15);
  const TangentVector w = log_map(T({0, 0}), T({kPi / 2, 3 * kPi / 2}));
  EXPECT_NEAR(w.vec[0], kPi / 2, 1e-15);
  EXPECT_NEAR(w.vec[1], -kPi / 2, 1e-15);
  // Torus: a difference of exactly pi resolves to +pi.
  EXPECT_NEAR(log_map(T({0}), T({kPi})).vec[0], kPi, 1e-15);
  EXPECT_THROW(log_map(S({0, 0, 1}), S({0, 0, -1})), CutLocusError);
  EXPECT_EQ(log_map(S({0, 0, 1}), S({0, 0, 1})).vec.norm(), 0.0);
}

TEST(Geometry, ExpLogRoundTrip) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(1e-6, 0.9 * kPi);
  for (const Manifold& m : kManifolds) {
    for (int i = 0; i < 1000; ++i) {
      const Point x = sample_uniform(m, rng);
      TangentVector v = random_tangent(x, u(rng), rng);
      if (m.is_torus()) v.vec = v.vec.cwiseMax(-0.9 * kPi).cwiseMin(0.9 * kPi);
      const Point y = exp_map(x, v);
      const TangentVector back = log_map(x, y);
      EXPECT_LT((back.vec - v.vec).cwiseAbs().maxCoeff(), 1e-8) << m.name();
      const Point y2 = exp_map(x, back);
      EXPECT_LT(dist(y, y2), 1e-8);
    }
  }
}

TEST(Geometry, SmallVectorRoundTrip) {
  Rng rng(4);
  for (double r : {1e-13, 1e-10, 1e-9, 1e-7}) {
    const Point x = sample_uniform(Manifold::sphere(3), rng);
    const TangentVector v = random_tangent(x, r, rng);
    const TangentVector back = log_map(x, exp_map(x, v));
    EXPECT_LT((back.vec - v.vec).norm(), 1e-12 + 1e-6 * r) << r;
  }
}

TEST(Geometry, LengthIsometry) {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 0.999 * kPi);
  for (const Manifold& m : kManifolds) {
    for (int i = 0; i < 500; ++i) {
      const Point x = sample_uniform(m, rng);
      TangentVector v = random_tangent(x, u(rng), rng);
      if (m.is_torus()) v.vec = v.vec.cwiseMax(-0.999 * kPi).cwiseMin(0.999 * kPi);
      EXPECT_NEAR(dist(x, exp_map(x, v)), v.vec.norm(), 1e-9) << m.name();
    }
  }
}

TEST(Geometry, CostGradientIsMinusLog) {
  Rng rng(6);
  const double h = 1e-5;
  for (const Manifold& m : kManifolds) {
    int checked = 0;
    while (checked < 200) {
      const Point x = sample_uniform(m, rng), y = sample_uniform(m, rng);
      if (dist(x, y) > 0.95 * kPi) continue;
      if (m.is_torus() && log_map(x, y).vec.cwiseAbs().maxCoeff() > 0.95 * kPi) continue;
      const TangentBasis e = tangent_basis(x);
      Vec fd(m.coord_dim());
      fd.setZero();
      for (int k = 0; k < m.dim(); ++k) {
        const Vec d = e.columns.col(k);
        const double fp = 0.5 * std::pow(dist(exp_map(x, {x, h * d}), y), 2);
        const double fm = 0.5 * std::pow(dist(exp_map(x, {x, -h * d}), y), 2);
        fd += (fp - fm) / (2 * h) * d;
      }
      EXPECT_LT((fd + log_map(x, y).vec).norm(), 1e-5) << m.name();
      ++checked;
    }
  }
}

TEST(Geometry, TangentBasis) {
  const TangentBasis e = tangent_basis(S({1, 0, 0}));
  ASSERT_EQ(e.columns.cols(), 2);
  // Columns span {e2, e3} (up to sign).
  EXPECT_NEAR(e.columns.row(0).norm(), 0.0, 1e-15);
  EXPECT_NEAR((e.columns.transpose() * e.columns - Mat::Identity(2, 2)).norm(), 0.0, 1e-15);
  Rng rng(7);
  const TangentBasis t = tangent_basis(sample_uniform(Manifold::torus(3), rng));
  EXPECT_EQ(t.columns, Mat::Identity(3, 3));
  for (const Manifold& m : kManifolds) {
    for (int i = 0; i < 100; ++i) {
      const Point x = sample_uniform(m, rng);
      const TangentBasis b = tangent_basis(x);
      EXPECT_LT((b.columns.transpose() * b.columns - Mat::Identity(m.dim(), m.dim())).norm(), 1e-10);
      if (m.is_sphere()) EXPECT_LT((x.coords.transpose() * b.columns).norm(), 1e-10);
      EXPECT_EQ(tangent_basis(x).columns, b.columns);
    }
  }
}

TEST(Geometry, Project) {
  EXPECT_EQ(project(Vec::Unit(3, 0) * 2, Manifold::sphere(2)).coords, Vec::Unit(3, 0));
  EXPECT_NEAR(project(Vec::Constant(1, -kPi / 2), Manifold::torus(1)).coords[0], 3 * kPi / 2, 1e-15);
  EXPECT_THROW(project(Vec::Unit(3, 0) * 1e-15, Manifold::sphere(2)), GeometryError);
}

TEST(Geometry, MakePointValidates) {
  EXPECT_THROW(make_point(Manifold::sphere(2), Vec::Constant(3, 1.0)), GeometryError);
  EXPECT_THROW(make_point(Manifold::sphere(2), Vec::Unit(2, 0)), GeometryError);
  EXPECT_THROW(make_point(Manifold::torus(2), Vec::Constant(2, kTwoPi)), GeometryError);
  EXPECT_THROW(make_point(Manifold::torus(1), Vec::Constant(1, -0.1)), GeometryError);
  EXPECT_NO_THROW(make_point(Manifold::torus(1), Vec::Constant(1, 0.0)));
  EXPECT_EQ(Manifold::parse("torus:3"), Manifold::torus(3));
  EXPECT_EQ(Manifold::parse(Manifold::sphere(4).name()), Manifold::sphere(4));
  EXPECT_ANY_THROW(Manifold::parse("sphere:0"));
  EXPECT_ANY_THROW(Manifold::parse("cube:2"));
}

TEST(Geometry, UniformSampling) {
  Rng rng(8);
  const auto s = sample_uniform(Manifold::sphere(2), 100000, rng);
  Vec mean = Vec::Zero(3);
  for (const auto& p : s) mean += p.coords;
  EXPECT_LT((mean / s.size()).norm(), 0.02);
  const auto t = sample_uniform(Manifold::torus(2), 100000, rng);
  Vec tm = Vec::Zero(2);
  for (const auto& p : t) tm += p.coords;
  tm /= t.size();
  EXPECT_NEAR(tm[0], kPi, 0.03);
  EXPECT_NEAR(tm[1], kPi, 0.03);
  Rng a(99), b(99);
  EXPECT_EQ(sample_uniform(Manifold::sphere(3), a).coords, sample_uniform(Manifold::sphere(3), b).coords);
}

TEST(Geometry, WrappedNormalSampling) {
  const WrappedNormalSpec spec = south_pole_wrapped_normal(Manifold::sphere(2), 0.3);
  Rng rng(9);
  double mean = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) mean += dist(spec.center, sample_wrapped_normal(spec, rng));
  // E|v| for v ~ N(0, s^2 I_2) is s * sqrt(pi / 2).
  EXPECT_NEAR(mean / n, 0.3 * std::sqrt(kPi / 2), 0.01);
  const WrappedNormalSpec tiny{spec.center, 1e-300};
  EXPECT_LT(dist(sample_wrapped_normal(tiny, rng), spec.center), 1e-12);
  Rng a(5), b(5);
  EXPECT_EQ(sample_wrapped_normal(spec, a).coords, sample_wrapped_normal(spec, b).coords);
}

TEST(Geometry, UniformLogDensity) {
  Rng rng(10);
  const Manifold s2 = Manifold::sphere(2);
  EXPECT_NEAR(log_density(s2, UniformDensity{}, sample_uniform(s2, rng)), -std::log(4 * kPi), 1e-14);
  const Manifold t3 = Manifold::torus(3);
  EXPECT_NEAR(log_density(t3, UniformDensity{}, sample_uniform(t3, rng)), -3 * std::log(kTwoPi), 1e-14);
  // vol(S^3) = 2 pi^2.
  EXPECT_NEAR(Manifold::sphere(3).log_volume(), std::log(2 * kPi * kPi), 1e-14);
}

TEST(Geometry, TorusWrappedNormalDensityByDirectSummation) {
  const Manifold t1 = Manifold::torus(1);
  const double sigma = 0.3;
  const WrappedNormalSpec spec{T({1.0}), sigma};
  for (double y : {1.0, 2.5, 4.0, 0.1}) {
    double sum = 0.0;
    for (int k = -50; k <= 50; ++k) sum += std::exp(oracle::normal_logpdf(y - 1.0 + kTwoPi * k, sigma));
    EXPECT_NEAR(log_density(t1, WrappedNormalDensity{spec}, T({y})), std::log(sum), 1e-12) << y;
  }
  EXPECT_NEAR(log_density(t1, WrappedNormalDensity{spec}, T({1.0})), std::log(1 / (sigma * std::sqrt(kTwoPi))), 1e-12);
  // A wide sigma needs several wrap terms.
  const WrappedNormalSpec wide{T({0.0}), 3.0};
  double sum = 0.0;
  for (int k = -50; k <= 50; ++k) sum += std::exp(oracle::normal_logpdf(kPi + kTwoPi * k, 3.0));
  EXPECT_NEAR(log_density(t1, WrappedNormalDensity{wide}, T({kPi})), std::log(sum), 1e-12);
}

TEST(Geometry, WrappedNormalNormalizes) {
  for (const Manifold& m : {Manifold::sphere(2), Manifold::torus(2), Manifold::sphere(3)}) {
    const WrappedNormalSpec spec = south_pole_wrapped_normal(m, 0.3);
    Rng rng(11);
    const int n = 400000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += std::exp(log_density(m, WrappedNormalDensity{spec}, sample_uniform(m, rng)));
    EXPECT_NEAR(acc / n * std::exp(m.log_volume()), 1.0, 0.02) << m.name();
  }
}

TEST(Geometry, SphereDensityMatchesTangentGaussianNearCenter) {
  // Near the centre the exp Jacobian is ~1 and wrap terms vanish, so the
  // density is the tangent Gaussian with the (sin r / r)^(p-1) correction.
  const Manifold m = Manifold::sphere(2);
  const WrappedNormalSpec spec = south_pole_wrapped_normal(m, 0.3);
  Rng rng(12);
  for (double r : {0.05, 0.3, 0.9}) {
    const Point y = exp_map(spec.center, random_tangent(spec.center, r, rng));
    const double ref = oracle::normal_logpdf(r, 0.3) + oracle::normal_logpdf(0, 0.3) - std::log(std::sin(r) / r);
    EXPECT_NEAR(log_density(m, WrappedNormalDensity{spec}, y), ref, 1e-9) << r;
  }
  // Finite at the antipode of the centre.
  const Point anti = make_point(m, -spec.center.coords);
  EXPECT_TRUE(std::isfinite(log_density(m, WrappedNormalDensity{WrappedNormalSpec{spec.center, 1.0}}, anti)));
}

TEST(Geometry, PointsCsvRoundTrip) {
  Rng rng(13);
  for (const Manifold& m : kManifolds) {
    const auto pts = sample_uniform(m, 50, rng);
    std::stringstream ss;
    write_points_csv(ss, pts);
    const auto back = read_points_csv(ss, m);
    ASSERT_EQ(back.size(), pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(back[i].coords, pts[i].coords);
  }
  std::stringstream bad("1,0,0\n0,1\n");
  try {
    read_points_csv(bad, Manifold::sphere(2));
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}
