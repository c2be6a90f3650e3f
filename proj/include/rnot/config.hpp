#pragma once

// Experiment configuration: one JSON document with an explicit schema
// version. Every section is optional and falls back to the library defaults;
// unknown keys are rejected.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnot/embedding.hpp"
#include "rnot/eval.hpp"

namespace rnot {

inline constexpr int kConfigSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniform | WrappedNormal(center, sigma) | Empirical(path).
struct MeasureSpec {
  std::string kind = "uniform";  // "uniform", "wrapped_normal", "empirical"
  std::optional<std::vector<double>> center;  // default: the south pole
  double sigma = 0.3;
  std::string path;
};

struct LandmarkSpec {
  int count = 128;
  LandmarkSelection selection = LandmarkSelection::FPS;
  std::optional<std::uint64_t> seed;  // default: derived from the root seed
  std::string file;                   // load instead of selecting
};

struct DiagnoseSpec {
  std::vector<int> schedule{1, 2, 4, 8, 16, 32, 64, 128};
  double epsilon = kDefaultCollisionEps;
  std::size_t n_validation = 4096;
  std::size_t n_pairs = kDefaultPairs;
  double tolerance = 1e-6;
};

struct QuantizeSpec {
  MeasureSpec measure{};
  std::vector<int> m_grid{4, 8, 16, 32, 64, 128, 256};
  QuantizationConfig quant{};
};

struct ExperimentConfig {
  Manifold manifold = Manifold::sphere(2);
  std::uint64_t seed = 0;
  std::optional<int> threads;
  std::string method = "rnot";  // "rnot" or "rcpm" (train)
  MeasureSpec source{};
  MeasureSpec target{"wrapped_normal", std::nullopt, 0.3, ""};
  LandmarkSpec landmarks{};
  MlpConfig net{};
  TrainConfig train{};
  int rcpm_sites = 68;
  double rcpm_gamma = 0.0;
  RcpmTrainConfig rcpm{};
  EvalConfig eval{};
  DiagnoseSpec diagnose{};
  SweepConfig sweep{};
  QuantizeSpec quantize{};
};

/// Parses a config document. A run manifest (an object with a "config" member)
/// is accepted as well, so a manifest reproduces its run.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
/// Full document with every default filled in.
nlohmann::json config_to_json(const ExperimentConfig& c);

/// Instantiates a measure; empirical paths are resolved relative to `base_dir`.
Measure make_measure(const MeasureSpec& spec, const Manifold& m, const std::string& base_dir = "");

nlohmann::json inner_to_json(const InnerSolverConfig& c);
InnerSolverConfig inner_from_json(const nlohmann::json& j, InnerSolverConfig defaults = {});

}  // namespace rnot
