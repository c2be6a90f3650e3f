#pragma once

#include <string>
#include <vector>

#include "rnot/geometry.hpp"

namespace rnot {

/// Source/target distribution: analytic (uniform, wrapped normal) or an
/// empirical point cloud sampled uniformly with replacement.
class Measure {
 public:
  enum class Kind { Uniform, WrappedNormal, Empirical };

  static Measure uniform(const Manifold& m);
  static Measure wrapped_normal(const WrappedNormalSpec& spec);
  static Measure empirical(const Manifold& m, std::vector<Point> points, std::string path = "");

  Kind kind() const { return kind_; }
  const Manifold& manifold() const { return manifold_; }
  const WrappedNormalSpec& spec() const;
  const std::vector<Point>& points() const { return points_; }
  const std::string& path() const { return path_; }

  Point sample(Rng& rng) const;
  std::vector<Point> sample(std::size_t n, Rng& rng) const;

  bool has_density() const { return kind_ != Kind::Empirical; }
  /// Throws std::logic_error for empirical measures.
  double log_density(const Point& y) const;

 private:
  Measure(Kind kind, Manifold m) : kind_(kind), manifold_(m) {}
  Kind kind_;
  Manifold manifold_;
  std::vector<WrappedNormalSpec> spec_;  // 0 or 1 entries
  std::vector<Point> points_;
  std::string path_;
};

}  // namespace rnot
