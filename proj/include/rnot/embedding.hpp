#pragma once

// Distance-to-landmarks feature maps phi(x) = (d(x, l_j))_j and the empirical
// diagnostics used to pick the number of landmarks.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rnot/geometry.hpp"

namespace rnot {

enum class LandmarkSelection { RND, FPS };

std::string to_string(LandmarkSelection s);
LandmarkSelection parse_selection(const std::string& s);

/// Immutable ordered landmark set on one manifold.
class LandmarkSet {
 public:
  LandmarkSet(Manifold m, std::vector<Point> landmarks, LandmarkSelection selection,
              std::uint64_t seed);

  const Manifold& manifold() const { return manifold_; }
  const std::vector<Point>& landmarks() const { return landmarks_; }
  /// Landmark coordinates as columns (coord_dim x M).
  const Mat& coords() const { return coords_; }
  int size() const { return static_cast<int>(landmarks_.size()); }
  LandmarkSelection selection() const { return selection_; }
  std::uint64_t seed() const { return seed_; }

  /// First `count` landmarks (FPS prefixes are themselves FPS results).
  LandmarkSet prefix(int count) const;

 private:
  Manifold manifold_;
  std::vector<Point> landmarks_;
  Mat coords_;
  LandmarkSelection selection_;
  std::uint64_t seed_;
};

LandmarkSet select_landmarks_rnd(const Manifold& m, int count, std::uint64_t seed);

/// Greedy farthest-first traversal over `candidates`. The first landmark is a
/// candidate drawn uniformly with `seed`; ties go to the lowest index.
LandmarkSet select_landmarks_fps(const Manifold& m, int count,
                                 const std::vector<Point>& candidates, std::uint64_t seed);
/// As above with a default pool of 16*count uniform candidates.
LandmarkSet select_landmarks_fps(const Manifold& m, int count, std::uint64_t seed);

Vec featurize(const LandmarkSet& landmarks, const Point& x);
void featurize_into(const LandmarkSet& landmarks, const VecRef& x, Vec& out);

/// max over `points` of the distance to the nearest landmark.
double coverage_radius(const LandmarkSet& landmarks, const std::vector<Point>& points);

struct EmbeddingDiagnostics {
  double min_separation = 0.0;           // s_M
  double near_collision_fraction = 0.0;  // rho_M(eps)
  double coverage_radius = 0.0;          // R_M
  double epsilon = 0.0;
  std::size_t n_pairs = 0;
};

inline constexpr double kDefaultCollisionEps = 1e-3;
inline constexpr std::size_t kDefaultPairs = 20000;

/// Index pairs (a < b) used by diagnose(): every pair when n_pairs covers
/// them all, otherwise n_pairs distinct pairs drawn without replacement.
std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t n,
                                                              std::size_t n_pairs, Rng& rng);

EmbeddingDiagnostics diagnose(const LandmarkSet& landmarks, const std::vector<Point>& validation,
                              double epsilon, std::size_t n_pairs, Rng& rng);

struct ChooseMOptions {
  double tolerance = 1e-6;
  double epsilon = kDefaultCollisionEps;
  std::size_t n_validation = 4096;
  std::size_t n_pairs = kDefaultPairs;
  LandmarkSelection selection = LandmarkSelection::FPS;
  std::uint64_t seed = 0;
};

struct ChooseMResult {
  int M = 0;
  bool qualified = false;  // false: no entry met the criteria, M is the last entry
  std::vector<std::pair<int, EmbeddingDiagnostics>> per_m;
};

ChooseMResult choose_M(const Manifold& m, const std::vector<int>& schedule,
                       const ChooseMOptions& options);

// Landmark file: one JSON header line, then the CSV point rows.
void write_landmarks(std::ostream& os, const LandmarkSet& landmarks);
LandmarkSet read_landmarks(std::istream& is);

}  // namespace rnot
