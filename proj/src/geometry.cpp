#include "rnot/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace rnot {

namespace {

constexpr double kUnitTol = 1e-9;
constexpr double kExpTaylor = 1e-12;
constexpr double kLogTaylor = 1e-8;
// Sphere log refuses inputs closer than this (in angle) to the antipode.
constexpr double kCutTol = 1e-12;

}  // namespace

Manifold Manifold::sphere(int dim) {
  if (dim < 1) throw GeometryError("sphere dimension must be >= 1");
  return Manifold(ManifoldType::Sphere, dim);
}

Manifold Manifold::torus(int dim) {
  if (dim < 1) throw GeometryError("torus dimension must be >= 1");
  return Manifold(ManifoldType::Torus, dim);
}

Manifold Manifold::parse(std::string_view text) {
  auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw GeometryError("manifold must look like sphere:<p> or torus:<p>, got '" +
                        std::string(text) + "'");
  }
  auto kind = text.substr(0, colon);
  auto digits = text.substr(colon + 1);
  int dim = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), dim);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) {
    throw GeometryError("bad manifold dimension in '" + std::string(text) + "'");
  }
  if (kind == "sphere") return sphere(dim);
  if (kind == "torus") return torus(dim);
  throw GeometryError("unknown manifold kind '" + std::string(kind) + "'");
}

double Manifold::diameter() const {
  return is_sphere() ? kPi : kPi * std::sqrt(static_cast<double>(dim_));
}

double Manifold::log_volume() const {
  if (is_torus()) return dim_ * std::log(kTwoPi);
  const double n = dim_ + 1;
  return std::log(2.0) + 0.5 * n * std::log(kPi) - std::lgamma(0.5 * n);
}

std::string Manifold::name() const {
  return (is_sphere() ? "sphere:" : "torus:") + std::to_string(dim_);
}

CutLocusError::CutLocusError(Point x, Point y)
    : GeometryError("log map requested on the cut locus"), x_(std::move(x)), y_(std::move(y)) {}

namespace geo {

double wrap_angle(double a) {
  // Exact for |a| <= pi and odd in a, so torus distances are symmetric.
  if (a > -kPi && a <= kPi) return a;
  double w = a - kTwoPi * std::round(a / kTwoPi);
  if (w > kPi) w -= kTwoPi;
  if (w <= -kPi) w += kTwoPi;
  return w;
}

double wrap_2pi(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

double dist(const Manifold& m, const VecRef& x, const VecRef& y) {
  if (m.is_sphere()) {
    // Equal to arccos(<x,y>) on unit vectors, without arccos' loss of
    // precision near 0 and pi.
    const double a = (x - y).norm();
    const double b = (x + y).norm();
    return 2.0 * std::atan2(a, b);
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double d = wrap_angle(x[i] - y[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

void exp_map(const Manifold& m, const VecRef& x, const VecRef& v, Vec& out) {
  if (m.is_sphere()) {
    const double n = v.norm();
    if (n < kExpTaylor) {
      out = x;
      return;
    }
    out = std::cos(n) * x + (std::sin(n) / n) * v;
    out /= out.norm();
    return;
  }
  out.resize(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = wrap_2pi(x[i] + v[i]);
}

bool log_map(const Manifold& m, const VecRef& x, const VecRef& y, Vec& out) {
  if (m.is_sphere()) {
    const double c = x.dot(y);
    out = y - c * x;
    const double s = out.norm();
    const double theta = dist(m, x, y);
    if (theta < kLogTaylor) {
      // theta / sin(theta) -> 1
      return true;
    }
    if (kPi - theta < kCutTol || s == 0.0) return false;
    out *= theta / s;
    return true;
  }
  out.resize(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = wrap_angle(y[i] - x[i]);
  return true;
}

void tangent_basis(const Manifold& m, const VecRef& x, Mat& out) {
  const int p = m.dim();
  if (m.is_torus()) {
    out = Mat::Identity(p, p);
    return;
  }
  // Householder reflection H = I - 2 w w^T / |w|^2 exchanging e1 and +/-x;
  // its last p columns span x^perp. The sign keeps |w|^2 >= 2.
  const int n = p + 1;
  Vec w = x;
  if (x[0] >= 0.0) {
    w[0] += 1.0;
  } else {
    w = -w;
    w[0] += 1.0;
  }
  const double ww = w.squaredNorm();
  out.resize(n, p);
  for (int j = 0; j < p; ++j) {
    out.col(j) = (-2.0 * w[j + 1] / ww) * w;
    out(j + 1, j) += 1.0;
  }
}

void to_tangent(const Manifold& m, const VecRef& x, Vec& v) {
  if (m.is_sphere()) v -= x.dot(v) * x;
}

void sample_uniform(const Manifold& m, Rng& rng, Vec& out) {
  out.resize(m.coord_dim());
  if (m.is_sphere()) {
    std::normal_distribution<double> normal(0.0, 1.0);
    double n = 0.0;
    do {
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal(rng);
      n = out.norm();
    } while (n < 1e-12);
    out /= n;
    return;
  }
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = angle(rng);
}

}  // namespace geo

namespace {

void require_same(const Manifold& a, const Manifold& b) {
  if (!(a == b)) {
    throw GeometryError("manifold mismatch: " + a.name() + " vs " + b.name());
  }
}

}  // namespace

Point make_point(const Manifold& m, Vec coords) {
  if (coords.size() != m.coord_dim()) {
    throw GeometryError(m.name() + " expects " + std::to_string(m.coord_dim()) +
                        " coordinates, got " + std::to_string(coords.size()));
  }
  if (!coords.allFinite()) throw GeometryError("non-finite coordinates");
  if (m.is_sphere()) {
    if (std::abs(coords.norm() - 1.0) > kUnitTol) {
      throw GeometryError("sphere point is not unit norm");
    }
  } else {
    for (double a : coords) {
      if (a < 0.0 || a >= kTwoPi) throw GeometryError("torus angle outside [0, 2pi)");
    }
  }
  return Point{m, std::move(coords)};
}

double dist(const Point& x, const Point& y) {
  require_same(x.manifold, y.manifold);
  return geo::dist(x.manifold, x.coords, y.coords);
}

Point exp_map(const Point& x, const TangentVector& v) {
  require_same(x.manifold, v.base.manifold);
  if (v.base.coords.size() != x.coords.size() ||
      (v.base.coords - x.coords).lpNorm<Eigen::Infinity>() > 1e-12) {
    throw GeometryError("tangent vector is not based at the exp point");
  }
  Point out{x.manifold, Vec()};
  geo::exp_map(x.manifold, x.coords, v.vec, out.coords);
  return out;
}

TangentVector log_map(const Point& x, const Point& y) {
  require_same(x.manifold, y.manifold);
  TangentVector v{x, Vec()};
  if (!geo::log_map(x.manifold, x.coords, y.coords, v.vec)) throw CutLocusError(x, y);
  return v;
}

TangentBasis tangent_basis(const Point& x) {
  TangentBasis b{x, Mat()};
  geo::tangent_basis(x.manifold, x.coords, b.columns);
  return b;
}

Point project(const Vec& ambient, const Manifold& m) {
  if (ambient.size() != m.coord_dim()) throw GeometryError("project: wrong length");
  if (m.is_sphere()) {
    const double n = ambient.norm();
    if (!(n > 1e-12)) throw GeometryError("degenerate projection onto the sphere");
    return Point{m, ambient / n};
  }
  Vec c(ambient.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = geo::wrap_2pi(ambient[i]);
  return Point{m, std::move(c)};
}

Point sample_uniform(const Manifold& m, Rng& rng) {
  Point p{m, Vec()};
  geo::sample_uniform(m, rng, p.coords);
  return p;
}

std::vector<Point> sample_uniform(const Manifold& m, std::size_t n, Rng& rng) {
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_uniform(m, rng));
  return out;
}

Point sample_wrapped_normal(const WrappedNormalSpec& spec, Rng& rng) {
  if (!(spec.sigma > 0)) throw GeometryError("wrapped normal needs sigma > 0");
  const Manifold& m = spec.center.manifold;
  std::normal_distribution<double> normal(0.0, spec.sigma);
  Vec z(m.dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  Mat basis;
  geo::tangent_basis(m, spec.center.coords, basis);
  Vec v = basis * z;
  Point out{m, Vec()};
  geo::exp_map(m, spec.center.coords, v, out.coords);
  return out;
}

int wrap_terms(double sigma) {
  return std::max(1, static_cast<int>(std::ceil(6.0 * sigma / kTwoPi)) + 1);
}

WrappedNormalSpec south_pole_wrapped_normal(const Manifold& m, double sigma) {
  Vec c;
  if (m.is_sphere()) {
    c = Vec::Zero(m.coord_dim());
    c[0] = -1.0;
  } else {
    c = Vec::Constant(m.dim(), kPi);
  }
  return WrappedNormalSpec{Point{m, std::move(c)}, sigma};
}

namespace {

double log_sum_exp(const std::vector<double>& terms) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double t : terms) mx = std::max(mx, t);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

double wrapped_normal_torus(const WrappedNormalSpec& spec, const Point& y) {
  const double sigma = spec.sigma;
  const int k_max = wrap_terms(sigma);
  const double log_norm = -0.5 * std::log(kTwoPi * sigma * sigma);
  std::vector<double> terms;
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.coords.size(); ++i) {
    const double d = geo::wrap_angle(y.coords[i] - spec.center.coords[i]);
    terms.clear();
    for (int k = -k_max; k <= k_max; ++k) {
      const double t = d + kTwoPi * k;
      terms.push_back(log_norm - 0.5 * t * t / (sigma * sigma));
    }
    total += log_sum_exp(terms);
  }
  return total;
}

double wrapped_normal_sphere(const WrappedNormalSpec& spec, const Point& y) {
  const int p = y.manifold.dim();
  const double sigma = spec.sigma;
  const int k_max = wrap_terms(sigma);
  const double r = geo::dist(y.manifold, spec.center.coords, y.coords);
  const double log_norm = -0.5 * p * std::log(kTwoPi * sigma * sigma);
  // sin(s) is floored here; the density is singular at conjugate radii
  // (s = n*pi), a measure-zero set that only the cut-locus point hits.
  constexpr double kSinFloor = 1e-300;
  std::vector<double> terms;
  for (int k = -k_max; k <= k_max; ++k) {
    const double s = std::abs(r + kTwoPi * k);
    double log_jac = 0.0;
    if (s > 0.0 && p > 1) {
      log_jac = (p - 1) * (std::log(std::max(std::abs(std::sin(s)), kSinFloor)) - std::log(s));
    }
    terms.push_back(log_norm - 0.5 * s * s / (sigma * sigma) - log_jac);
  }
  return log_sum_exp(terms);
}

}  // namespace

double log_density(const Manifold& m, const Density& q, const Point& y) {
  require_same(m, y.manifold);
  if (std::holds_alternative<UniformDensity>(q)) return -m.log_volume();
  const auto& spec = std::get<WrappedNormalDensity>(q).spec;
  require_same(m, spec.center.manifold);
  return m.is_sphere() ? wrapped_normal_sphere(spec, y) : wrapped_normal_torus(spec, y);
}

void write_points_csv(std::ostream& os, const std::vector<Point>& points) {
  const auto old_precision = os.precision();
  os << std::setprecision(17);
  for (const auto& p : points) {
    for (Eigen::Index i = 0; i < p.coords.size(); ++i) {
      if (i) os << ',';
      os << p.coords[i];
    }
    os << '\n';
  }
  os.precision(old_precision);
}

std::vector<Point> read_points_csv(std::istream& is, const Manifold& m) {
  std::vector<Point> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Vec coords(m.coord_dim());
    std::size_t pos = 0;
    int count = 0;
    auto fail = [&](const std::string& why) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": " + why);
    };
    while (pos <= line.size()) {
      auto next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      std::string field = line.substr(pos, next - pos);
      if (count >= coords.size()) fail("too many fields");
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (field.empty() || end != field.c_str() + field.size()) fail("bad number '" + field + "'");
      coords[count++] = v;
      pos = next + 1;
    }
    if (count != coords.size()) fail("expected " + std::to_string(coords.size()) + " fields");
    if (m.is_sphere()) {
      const double n = coords.norm();
      // Text round trips drift by ~1e-16; anything worse is a user error.
      if (std::abs(n - 1.0) > 1e-6) fail("sphere point is not unit norm");
      // Leave points that are unit to rounding untouched, so files round trip.
      if (std::abs(n - 1.0) > 1e-14) coords /= n;
    }
    try {
      out.push_back(make_point(m, std::move(coords)));
    } catch (const GeometryError& e) {
      fail(e.what());
    }
  }
  return out;
}

std::vector<Point> read_points_csv(const std::string& path, const Manifold& m) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  return read_points_csv(f, m);
}

}  // namespace rnot
