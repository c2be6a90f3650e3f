#include "rnot/network.hpp"

#include <cmath>
#include <stdexcept>

namespace rnot {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU:
      return "relu";
    case Activation::LeakyReLU:
      return "leaky_relu";
    case Activation::Softplus:
      return "softplus";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "leaky_relu") return Activation::LeakyReLU;
  if (s == "softplus") return Activation::Softplus;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

void MlpConfig::validate() const {
  if (input_dim < 1) throw std::invalid_argument("MlpConfig: input_dim must be >= 1");
  for (int w : hidden) {
    if (w < 1) throw std::invalid_argument("MlpConfig: hidden widths must be >= 1");
  }
  if (activation == Activation::Softplus && !(softplus_beta > 0)) {
    throw std::invalid_argument("MlpConfig: softplus beta must be > 0");
  }
}

std::size_t MlpConfig::param_count() const {
  std::size_t total = 0;
  int in = input_dim;
  for (int w : hidden) {
    total += static_cast<std::size_t>(w) * in + w;
    in = w;
  }
  return total + static_cast<std::size_t>(in) + 1;
}

MlpParams MlpParams::zeros(const MlpConfig& config) {
  config.validate();
  MlpParams p;
  std::size_t offset = 0;
  int in = config.input_dim;
  for (int w : config.hidden) {
    p.shapes_.push_back({w, in, offset});
    offset += static_cast<std::size_t>(w) * in + w;
    in = w;
  }
  p.shapes_.push_back({1, in, offset});
  offset += static_cast<std::size_t>(in) + 1;
  p.flat_ = Vec::Zero(static_cast<Eigen::Index>(offset));
  return p;
}

MlpParams MlpParams::unflatten(const MlpConfig& config, Vec flat) {
  MlpParams p = zeros(config);
  if (flat.size() != p.flat_.size()) {
    throw std::invalid_argument("unflatten: expected " + std::to_string(p.flat_.size()) +
                                " parameters, got " + std::to_string(flat.size()));
  }
  p.flat_ = std::move(flat);
  return p;
}

MlpParams::ConstWeightMap MlpParams::weight(int layer) const {
  const auto& s = shapes_[static_cast<std::size_t>(layer)];
  return ConstWeightMap(flat_.data() + s.offset, s.out, s.in);
}

MlpParams::WeightMap MlpParams::weight(int layer) {
  const auto& s = shapes_[static_cast<std::size_t>(layer)];
  return WeightMap(flat_.data() + s.offset, s.out, s.in);
}

Eigen::Map<const Vec> MlpParams::bias(int layer) const {
  const auto& s = shapes_[static_cast<std::size_t>(layer)];
  return Eigen::Map<const Vec>(flat_.data() + s.offset + static_cast<std::size_t>(s.out) * s.in,
                               s.out);
}

Eigen::Map<Vec> MlpParams::bias(int layer) {
  const auto& s = shapes_[static_cast<std::size_t>(layer)];
  return Eigen::Map<Vec>(flat_.data() + s.offset + static_cast<std::size_t>(s.out) * s.in, s.out);
}

MlpParams::WeightMap MlpParams::weight_in(Vec& storage, int layer) const {
  const auto& s = shapes_[static_cast<std::size_t>(layer)];
  return WeightMap(storage.data() + s.offset, s.out, s.in);
}

Eigen::Map<Vec> MlpParams::bias_in(Vec& storage, int layer) const {
  const auto& s = shapes_[static_cast<std::size_t>(layer)];
  return Eigen::Map<Vec>(storage.data() + s.offset + static_cast<std::size_t>(s.out) * s.in, s.out);
}

Mlp init_mlp(const MlpConfig& config) {
  Mlp net{config, MlpParams::zeros(config)};
  Rng rng(config.init_seed);
  for (int l = 0; l < net.params.num_layers(); ++l) {
    auto W = net.params.weight(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(W.rows() + W.cols()));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = u(rng);
    }
  }
  return net;
}

namespace {

struct Workspace {
  std::vector<Vec> pre;   // pre-activations z_l of hidden layers
  std::vector<Vec> post;  // activations a_l of hidden layers
  std::vector<Vec> slope;  // activation derivatives at z_l
  Vec delta;
  Vec tmp;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

// Kinks take the left derivative: 0 for ReLU, the slope for leaky ReLU.
void activate(const MlpConfig& c, const Vec& z, Vec& a, Vec& da) {
  const auto zz = z.array();
  switch (c.activation) {
    case Activation::ReLU:
      a = zz.max(0.0).matrix();
      da = (zz > 0.0).cast<double>().matrix();
      return;
    case Activation::LeakyReLU:
      a = (zz > 0.0).select(zz, c.leaky_slope * zz).matrix();
      da = (zz > 0.0).select(Eigen::ArrayXd::Ones(z.size()), c.leaky_slope).matrix();
      return;
    case Activation::Softplus: {
      // log(1 + e^t) / beta = (max(t, 0) + log1p(e^{-|t|})) / beta
      const Eigen::ArrayXd t = c.softplus_beta * zz;
      const Eigen::ArrayXd e = (-t.abs()).exp();
      a = ((t.max(0.0) + e.log1p()) / c.softplus_beta).matrix();
      da = (t >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e)).matrix();
      return;
    }
  }
}

void check_input(const Mlp& net, const VecRef& features) {
  if (features.size() != net.config.input_dim) {
    throw std::invalid_argument("network expects " + std::to_string(net.config.input_dim) +
                                " features, got " + std::to_string(features.size()));
  }
}

double run_forward(const Mlp& net, const VecRef& x, Workspace& ws) {
  const int hidden = net.params.num_layers() - 1;
  ws.pre.resize(static_cast<std::size_t>(hidden));
  ws.post.resize(static_cast<std::size_t>(hidden));
  ws.slope.resize(static_cast<std::size_t>(hidden));
  for (int l = 0; l < hidden; ++l) {
    auto& z = ws.pre[static_cast<std::size_t>(l)];
    auto& a = ws.post[static_cast<std::size_t>(l)];
    if (l == 0) {
      z.noalias() = net.params.weight(l) * x;
    } else {
      z.noalias() = net.params.weight(l) * ws.post[static_cast<std::size_t>(l - 1)];
    }
    z += net.params.bias(l);
    activate(net.config, z, a, ws.slope[static_cast<std::size_t>(l)]);
  }
  const auto w_out = net.params.weight(hidden);
  const double b_out = net.params.bias(hidden)[0];
  if (hidden == 0) return w_out.row(0).dot(x.transpose()) + b_out;
  return w_out.row(0).dot(ws.post.back().transpose()) + b_out;
}

}  // namespace

double forward(const Mlp& net, const VecRef& features) {
  check_input(net, features);
  return run_forward(net, features, workspace());
}

double grad_input_into(const Mlp& net, const VecRef& features, Vec& grad) {
  check_input(net, features);
  Workspace& ws = workspace();
  const double value = run_forward(net, features, ws);
  const int hidden = net.params.num_layers() - 1;
  ws.delta = net.params.weight(hidden).row(0).transpose();
  for (int l = hidden - 1; l >= 0; --l) {
    ws.delta.array() *= ws.slope[static_cast<std::size_t>(l)].array();
    ws.tmp.noalias() = net.params.weight(l).transpose() * ws.delta;
    ws.delta.swap(ws.tmp);
  }
  grad = ws.delta;
  return value;
}

InputGradResult grad_input(const Mlp& net, const VecRef& features) {
  InputGradResult r;
  r.value = grad_input_into(net, features, r.grad);
  return r;
}

double accumulate_grad_params(const Mlp& net, const VecRef& features, double scale, Vec& accum) {
  check_input(net, features);
  if (static_cast<std::size_t>(accum.size()) != net.params.size()) {
    throw std::invalid_argument("gradient accumulator has the wrong length");
  }
  Workspace& ws = workspace();
  const double value = run_forward(net, features, ws);
  const int hidden = net.params.num_layers() - 1;
  const MlpParams& P = net.params;

  auto input_of = [&](int l) -> Eigen::Ref<const Vec> {
    if (l == 0) return features;
    return ws.post[static_cast<std::size_t>(l - 1)];
  };
  P.weight_in(accum, hidden).row(0) += scale * input_of(hidden).transpose();
  P.bias_in(accum, hidden)[0] += scale;
  ws.delta = scale * net.params.weight(hidden).row(0).transpose();
  for (int l = hidden - 1; l >= 0; --l) {
    ws.delta.array() *= ws.slope[static_cast<std::size_t>(l)].array();
    P.weight_in(accum, l).noalias() += ws.delta * input_of(l).transpose();
    P.bias_in(accum, l) += ws.delta;
    if (l > 0) {
      ws.tmp.noalias() = net.params.weight(l).transpose() * ws.delta;
      ws.delta.swap(ws.tmp);
    }
  }
  return value;
}

ParamGradResult grad_params(const Mlp& net, const VecRef& features) {
  ParamGradResult r;
  r.grad.flat = Vec::Zero(static_cast<Eigen::Index>(net.params.size()));
  r.value = accumulate_grad_params(net, features, 1.0, r.grad.flat);
  return r;
}

nlohmann::json mlp_config_to_json(const MlpConfig& c) {
  return {{"input_dim", c.input_dim},         {"hidden", c.hidden},
          {"activation", to_string(c.activation)}, {"leaky_slope", c.leaky_slope},
          {"softplus_beta", c.softplus_beta}, {"init_seed", c.init_seed}};
}

MlpConfig mlp_config_from_json(const nlohmann::json& j) {
  MlpConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.activation = parse_activation(j.at("activation").get<std::string>());
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.softplus_beta = j.at("softplus_beta").get<double>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  c.validate();
  return c;
}

nlohmann::json mlp_to_json(const Mlp& net) {
  const Vec& flat = net.params.flatten();
  return {{"config", mlp_config_to_json(net.config)},
          {"flat_params", std::vector<double>(flat.data(), flat.data() + flat.size())}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  MlpConfig config = mlp_config_from_json(j.at("config"));
  auto values = j.at("flat_params").get<std::vector<double>>();
  Vec flat = Eigen::Map<Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
  return Mlp{config, MlpParams::unflatten(config, std::move(flat))};
}

}  // namespace rnot
