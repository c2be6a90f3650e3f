#include "rnot/measure.hpp"

#include <stdexcept>

namespace rnot {

Measure Measure::uniform(const Manifold& m) { return Measure(Kind::Uniform, m); }

Measure Measure::wrapped_normal(const WrappedNormalSpec& spec) {
  if (!(spec.sigma > 0)) throw std::invalid_argument("wrapped normal needs sigma > 0");
  Measure out(Kind::WrappedNormal, spec.center.manifold);
  out.spec_.push_back(spec);
  return out;
}

Measure Measure::empirical(const Manifold& m, std::vector<Point> points, std::string path) {
  if (points.empty()) throw std::invalid_argument("empirical measure needs at least one point");
  for (const auto& p : points) {
    if (!(p.manifold == m)) throw GeometryError("empirical point on the wrong manifold");
  }
  Measure out(Kind::Empirical, m);
  out.points_ = std::move(points);
  out.path_ = std::move(path);
  return out;
}

const WrappedNormalSpec& Measure::spec() const {
  if (spec_.empty()) throw std::logic_error("measure is not a wrapped normal");
  return spec_.front();
}

Point Measure::sample(Rng& rng) const {
  switch (kind_) {
    case Kind::Uniform:
      return sample_uniform(manifold_, rng);
    case Kind::WrappedNormal:
      return sample_wrapped_normal(spec_.front(), rng);
    case Kind::Empirical: {
      std::uniform_int_distribution<std::size_t> pick(0, points_.size() - 1);
      return points_[pick(rng)];
    }
  }
  throw std::logic_error("unreachable");
}

std::vector<Point> Measure::sample(std::size_t n, Rng& rng) const {
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample(rng));
  return out;
}

double Measure::log_density(const Point& y) const {
  switch (kind_) {
    case Kind::Uniform:
      return rnot::log_density(manifold_, UniformDensity{}, y);
    case Kind::WrappedNormal:
      return rnot::log_density(manifold_, WrappedNormalDensity{spec_.front()}, y);
    case Kind::Empirical:
      break;
  }
  throw std::logic_error("empirical measures have no analytic density");
}

}  // namespace rnot
