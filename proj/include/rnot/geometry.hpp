#pragma once

// Exact primitives on the unit hypersphere S^p (embedded in R^{p+1}) and the
// flat torus T^p (intrinsic angle coordinates in [0, 2pi)).

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rnot/random.hpp"

namespace rnot {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecRef = Eigen::Ref<const Vec>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class ManifoldType { Sphere, Torus };

class Manifold {
 public:
  /// S^2.
  Manifold() : Manifold(ManifoldType::Sphere, 2) {}
  static Manifold sphere(int dim);
  static Manifold torus(int dim);
  /// Parses "sphere:2" / "torus:3" (the inverse of name()).
  static Manifold parse(std::string_view text);

  ManifoldType type() const { return type_; }
  bool is_sphere() const { return type_ == ManifoldType::Sphere; }
  bool is_torus() const { return type_ == ManifoldType::Torus; }
  /// Intrinsic dimension p.
  int dim() const { return dim_; }
  /// Length of a coordinate vector: p+1 for the sphere, p for the torus.
  int coord_dim() const { return is_sphere() ? dim_ + 1 : dim_; }
  double diameter() const;
  double log_volume() const;
  std::string name() const;

  friend bool operator==(const Manifold&, const Manifold&) = default;

 private:
  Manifold(ManifoldType type, int dim) : type_(type), dim_(dim) {}
  ManifoldType type_;
  int dim_;
};

struct Point {
  Manifold manifold;
  Vec coords;
};

struct TangentVector {
  Point base;
  Vec vec;
};

struct TangentBasis {
  Point base;
  Mat columns;  // coord_dim x p, orthonormal, spans T_base M
};

struct WrappedNormalSpec {
  Point center;
  double sigma;
};

class GeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class CutLocusError : public GeometryError {
 public:
  CutLocusError(Point x, Point y);
  const Point& from() const { return x_; }
  const Point& to() const { return y_; }

 private:
  Point x_;
  Point y_;
};

/// Validates coordinates and wraps them in a Point. Throws GeometryError when
/// the sphere norm is off by more than 1e-9 or a torus angle is outside [0, 2pi).
Point make_point(const Manifold& m, Vec coords);

double dist(const Point& x, const Point& y);
Point exp_map(const Point& x, const TangentVector& v);
TangentVector log_map(const Point& x, const Point& y);
TangentBasis tangent_basis(const Point& x);
Point project(const Vec& ambient, const Manifold& m);

Point sample_uniform(const Manifold& m, Rng& rng);
Point sample_wrapped_normal(const WrappedNormalSpec& spec, Rng& rng);
std::vector<Point> sample_uniform(const Manifold& m, std::size_t n, Rng& rng);

struct UniformDensity {};
struct WrappedNormalDensity {
  WrappedNormalSpec spec;
};
using Density = std::variant<UniformDensity, WrappedNormalDensity>;

double log_density(const Manifold& m, const Density& q, const Point& y);

/// Number of wrap terms on each side used by the wrapped-normal densities.
int wrap_terms(double sigma);

/// Wrapped normal centred at the "south pole": (-1, 0, ..., 0) on S^p and
/// (pi, ..., pi) on T^p.
WrappedNormalSpec south_pole_wrapped_normal(const Manifold& m, double sigma);

// Coordinate-level kernels. These skip Point bookkeeping and are what the
// solvers call in their inner loops. Inputs are assumed valid for `m`.
namespace geo {

/// Representative of `a` in (-pi, pi].
double wrap_angle(double a);
/// Representative of `a` in [0, 2pi).
double wrap_2pi(double a);

double dist(const Manifold& m, const VecRef& x, const VecRef& y);
void exp_map(const Manifold& m, const VecRef& x, const VecRef& v, Vec& out);
/// Writes log_x(y). Returns false (leaving `out` unspecified) when y lies on
/// the sphere cut locus of x.
bool log_map(const Manifold& m, const VecRef& x, const VecRef& y, Vec& out);
void tangent_basis(const Manifold& m, const VecRef& x, Mat& out);
/// Removes the component of `v` normal to the manifold at x (sphere only).
void to_tangent(const Manifold& m, const VecRef& x, Vec& v);
void sample_uniform(const Manifold& m, Rng& rng, Vec& out);

}  // namespace geo

// CSV point format: one point per row, comma separated, 17 significant digits.
void write_points_csv(std::ostream& os, const std::vector<Point>& points);
/// Throws std::runtime_error naming the 1-based line number on malformed input.
std::vector<Point> read_points_csv(std::istream& is, const Manifold& m);
std::vector<Point> read_points_csv(const std::string& path, const Manifold& m);

}  // namespace rnot
