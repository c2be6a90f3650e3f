#pragma once

// Fully connected scalar network f: R^M -> R with two hand-written backward
// passes: one in the parameters (outer training), one in the input features
// (inner solver).

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnot/geometry.hpp"

namespace rnot {

enum class Activation { ReLU, LeakyReLU, Softplus };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

struct MlpConfig {
  int input_dim = 1;
  std::vector<int> hidden{128, 128};
  Activation activation = Activation::LeakyReLU;
  double leaky_slope = 0.01;
  double softplus_beta = 1.0;
  std::uint64_t init_seed = 0;

  void validate() const;
  /// Total number of trainable parameters W.
  std::size_t param_count() const;
};

/// Parameters stored as one flat vector; layer l occupies its weight matrix
/// (row-major, out x in) followed by its bias.
class MlpParams {
 public:
  using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using WeightMap = Eigen::Map<RowMajorMat>;
  using ConstWeightMap = Eigen::Map<const RowMajorMat>;

  MlpParams() = default;
  static MlpParams zeros(const MlpConfig& config);
  static MlpParams unflatten(const MlpConfig& config, Vec flat);

  const Vec& flatten() const { return flat_; }
  Vec& flat() { return flat_; }
  std::size_t size() const { return static_cast<std::size_t>(flat_.size()); }
  int num_layers() const { return static_cast<int>(shapes_.size()); }

  ConstWeightMap weight(int layer) const;
  WeightMap weight(int layer);
  Eigen::Map<const Vec> bias(int layer) const;
  Eigen::Map<Vec> bias(int layer);

  /// Weight/bias views with this layout over external storage of length size().
  WeightMap weight_in(Vec& storage, int layer) const;
  Eigen::Map<Vec> bias_in(Vec& storage, int layer) const;

 private:
  struct Shape {
    int out;
    int in;
    std::size_t offset;
  };
  std::vector<Shape> shapes_;
  Vec flat_;
};

/// Flat gradient with the same layout as MlpParams.
struct MlpGradient {
  Vec flat;
};

struct Mlp {
  MlpConfig config;
  MlpParams params;
};

/// Glorot-uniform weights, zero biases, seeded by config.init_seed.
Mlp init_mlp(const MlpConfig& config);

double forward(const Mlp& net, const VecRef& features);

struct ParamGradResult {
  double value;
  MlpGradient grad;
};
ParamGradResult grad_params(const Mlp& net, const VecRef& features);
/// Adds scale * d f / d theta to `accum` (length W); returns f.
double accumulate_grad_params(const Mlp& net, const VecRef& features, double scale, Vec& accum);

struct InputGradResult {
  double value;
  Vec grad;
};
InputGradResult grad_input(const Mlp& net, const VecRef& features);
/// Allocation-light variant for inner loops.
double grad_input_into(const Mlp& net, const VecRef& features, Vec& grad);

// Checkpoint JSON: {"config": {...}, "flat_params": [...]}.
nlohmann::json mlp_config_to_json(const MlpConfig& config);
MlpConfig mlp_config_from_json(const nlohmann::json& j);
nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace rnot
