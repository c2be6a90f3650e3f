#include "rnot/embedding.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace rnot {

std::string to_string(LandmarkSelection s) { return s == LandmarkSelection::FPS ? "FPS" : "RND"; }

LandmarkSelection parse_selection(const std::string& s) {
  if (s == "FPS" || s == "fps") return LandmarkSelection::FPS;
  if (s == "RND" || s == "rnd") return LandmarkSelection::RND;
  throw std::invalid_argument("landmark selection must be FPS or RND, got '" + s + "'");
}

LandmarkSet::LandmarkSet(Manifold m, std::vector<Point> landmarks, LandmarkSelection selection,
                         std::uint64_t seed)
    : manifold_(m), landmarks_(std::move(landmarks)), selection_(selection), seed_(seed) {
  if (landmarks_.empty()) throw std::domain_error("landmark set needs M >= 1");
  coords_.resize(manifold_.coord_dim(), static_cast<Eigen::Index>(landmarks_.size()));
  for (std::size_t j = 0; j < landmarks_.size(); ++j) {
    if (!(landmarks_[j].manifold == manifold_)) {
      throw GeometryError("landmark on the wrong manifold");
    }
    coords_.col(static_cast<Eigen::Index>(j)) = landmarks_[j].coords;
  }
}

LandmarkSet LandmarkSet::prefix(int count) const {
  if (count < 1 || count > size()) throw std::domain_error("landmark prefix out of range");
  return LandmarkSet(manifold_, std::vector<Point>(landmarks_.begin(), landmarks_.begin() + count),
                     selection_, seed_);
}

LandmarkSet select_landmarks_rnd(const Manifold& m, int count, std::uint64_t seed) {
  if (count < 1) throw std::domain_error("select_landmarks_rnd: M must be >= 1");
  Rng rng(seed);
  return LandmarkSet(m, sample_uniform(m, static_cast<std::size_t>(count), rng),
                     LandmarkSelection::RND, seed);
}

LandmarkSet select_landmarks_fps(const Manifold& m, int count,
                                 const std::vector<Point>& candidates, std::uint64_t seed) {
  if (count < 1) throw std::domain_error("select_landmarks_fps: M must be >= 1");
  if (candidates.size() < static_cast<std::size_t>(count)) {
    throw std::domain_error("select_landmarks_fps: fewer candidates than landmarks");
  }
  const std::size_t n = candidates.size();
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t current = pick(rng);

  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<Point> chosen;
  chosen.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) {
    chosen.push_back(candidates[current]);
    const Vec& l = candidates[current].coords;
    for (std::size_t c = 0; c < n; ++c) {
      nearest[c] = std::min(nearest[c], geo::dist(m, candidates[c].coords, l));
    }
    // Strict comparison keeps the lowest index among ties.
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
      if (nearest[c] > nearest[best]) best = c;
    }
    current = best;
  }
  return LandmarkSet(m, std::move(chosen), LandmarkSelection::FPS, seed);
}

LandmarkSet select_landmarks_fps(const Manifold& m, int count, std::uint64_t seed) {
  if (count < 1) throw std::domain_error("select_landmarks_fps: M must be >= 1");
  Rng pool_rng = make_rng(seed, stream::kCandidates);
  auto candidates = sample_uniform(m, 16 * static_cast<std::size_t>(count), pool_rng);
  return select_landmarks_fps(m, count, candidates, seed);
}

void featurize_into(const LandmarkSet& landmarks, const VecRef& x, Vec& out) {
  const Mat& L = landmarks.coords();
  if (landmarks.manifold().is_sphere()) {
    out.noalias() = L.transpose() * x;
    for (Eigen::Index j = 0; j < out.size(); ++j) out[j] = std::acos(std::clamp(out[j], -1.0, 1.0));
    return;
  }
  out.resize(L.cols());
  for (Eigen::Index j = 0; j < L.cols(); ++j) out[j] = geo::dist(landmarks.manifold(), x, L.col(j));
}

Vec featurize(const LandmarkSet& landmarks, const Point& x) {
  if (!(x.manifold == landmarks.manifold())) throw GeometryError("featurize: manifold mismatch");
  Vec out;
  featurize_into(landmarks, x.coords, out);
  return out;
}

double coverage_radius(const LandmarkSet& landmarks, const std::vector<Point>& points) {
  double r = 0.0;
  Vec f;
  for (const auto& p : points) {
    featurize_into(landmarks, p.coords, f);
    r = std::max(r, f.minCoeff());
  }
  return r;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t n, std::size_t n_pairs,
                                                              Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const std::size_t total = n * (n - 1) / 2;
  if (n_pairs >= total) {
    pairs.reserve(total);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) pairs.emplace_back(a, b);
    }
    return pairs;
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::unordered_set<std::size_t> seen;
  pairs.reserve(n_pairs);
  while (pairs.size() < n_pairs) {
    std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (seen.insert(a * n + b).second) pairs.emplace_back(a, b);
  }
  return pairs;
}

EmbeddingDiagnostics diagnose(const LandmarkSet& landmarks, const std::vector<Point>& validation,
                              double epsilon, std::size_t n_pairs, Rng& rng) {
  if (validation.size() < 2) throw std::domain_error("diagnose: need at least two validation points");
  if (n_pairs < 1) throw std::domain_error("diagnose: n_pairs must be >= 1");
  Mat z(landmarks.size(), static_cast<Eigen::Index>(validation.size()));
  EmbeddingDiagnostics d;
  d.epsilon = epsilon;
  Vec f;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    featurize_into(landmarks, validation[i].coords, f);
    z.col(static_cast<Eigen::Index>(i)) = f;
    d.coverage_radius = std::max(d.coverage_radius, f.minCoeff());
  }
  const auto pairs = sample_pairs(validation.size(), n_pairs, rng);
  d.n_pairs = pairs.size();
  d.min_separation = std::numeric_limits<double>::infinity();
  std::size_t collisions = 0;
  for (auto [a, b] : pairs) {
    const double s = (z.col(static_cast<Eigen::Index>(a)) - z.col(static_cast<Eigen::Index>(b))).norm();
    d.min_separation = std::min(d.min_separation, s);
    if (s < epsilon) ++collisions;
  }
  d.near_collision_fraction = static_cast<double>(collisions) / static_cast<double>(pairs.size());
  return d;
}

ChooseMResult choose_M(const Manifold& m, const std::vector<int>& schedule,
                       const ChooseMOptions& options) {
  if (schedule.empty()) throw std::domain_error("choose_M: empty schedule");
  if (!std::is_sorted(schedule.begin(), schedule.end()) ||
      std::adjacent_find(schedule.begin(), schedule.end()) != schedule.end()) {
    throw std::domain_error("choose_M: schedule must be strictly increasing");
  }
  Rng val_rng = make_rng(options.seed, stream::kValidation);
  const auto validation = sample_uniform(m, options.n_validation, val_rng);
  const int max_m = schedule.back();
  // Largest set once; smaller M are prefixes, so all entries share landmarks.
  const LandmarkSet full = options.selection == LandmarkSelection::FPS
                               ? select_landmarks_fps(m, max_m, options.seed)
                               : select_landmarks_rnd(m, max_m, options.seed);
  ChooseMResult result;
  for (int M : schedule) {
    Rng pair_rng = make_rng(options.seed, stream::kPairs);
    auto diag = diagnose(full.prefix(M), validation, options.epsilon, options.n_pairs, pair_rng);
    result.per_m.emplace_back(M, diag);
    if (!result.qualified && diag.min_separation > options.tolerance &&
        diag.near_collision_fraction == 0.0) {
      result.M = M;
      result.qualified = true;
    }
  }
  if (!result.qualified) result.M = schedule.back();
  return result;
}

void write_landmarks(std::ostream& os, const LandmarkSet& landmarks) {
  nlohmann::json header = {{"manifold", landmarks.manifold().name()},
                           {"M", landmarks.size()},
                           {"selection", to_string(landmarks.selection())},
                           {"seed", landmarks.seed()}};
  os << header.dump() << '\n';
  write_points_csv(os, landmarks.landmarks());
}

LandmarkSet read_landmarks(std::istream& is) {
  std::string first;
  if (!std::getline(is, first)) throw std::runtime_error("landmark file is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(first);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("line 1: bad landmark header: ") + e.what());
  }
  const Manifold m = Manifold::parse(header.at("manifold").get<std::string>());
  auto points = read_points_csv(is, m);
  const int M = header.at("M").get<int>();
  if (static_cast<int>(points.size()) != M) {
    throw std::runtime_error("landmark header says M=" + std::to_string(M) + " but file has " +
                             std::to_string(points.size()) + " rows");
  }
  return LandmarkSet(m, std::move(points), parse_selection(header.at("selection").get<std::string>()),
                     header.at("seed").get<std::uint64_t>());
}

}  // namespace rnot
