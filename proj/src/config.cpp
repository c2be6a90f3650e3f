#include "rnot/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace rnot {

namespace {

using nlohmann::json;

// Reads members of one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

AdamParams adam_from(const json& j, const std::string& where, AdamParams a) {
  Section s(j, where);
  s.get("beta1", a.beta1);
  s.get("beta2", a.beta2);
  s.get("eps", a.eps);
  s.finish();
  return a;
}

json adam_to(const AdamParams& a) { return {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}}; }

std::string optimizer_name(TangentOptimizer o) {
  switch (o) {
    case TangentOptimizer::GD:
      return "gd";
    case TangentOptimizer::Momentum:
      return "momentum";
    case TangentOptimizer::Adam:
      return "adam";
  }
  return "adam";
}

TangentOptimizer parse_optimizer(const std::string& s) {
  if (s == "gd") return TangentOptimizer::GD;
  if (s == "momentum") return TangentOptimizer::Momentum;
  if (s == "adam") return TangentOptimizer::Adam;
  throw ConfigError("inner.optimizer must be gd, momentum or adam, got '" + s + "'");
}

InnerSolverConfig inner_from(const json& j, const std::string& where, InnerSolverConfig c) {
  Section s(j, where);
  s.get("max_iters", c.max_iters);
  s.get("step_size", c.step_size);
  std::string opt = optimizer_name(c.optimizer);
  s.get("optimizer", opt);
  c.optimizer = parse_optimizer(opt);
  s.get("momentum", c.momentum);
  if (const json* a = s.child("adam")) c.adam = adam_from(*a, s.path("adam"), c.adam);
  s.get("init_temperature", c.init_temperature);
  s.get("init_pool_size", c.init_pool_size);
  s.get("lse_init", c.lse_init);
  s.get("residual_tol", c.residual_tol);
  s.get("perturb_scale", c.perturb_scale);
  s.get("stall_iters", c.stall_iters);
  s.finish();
  return c;
}

MeasureSpec measure_from(const json& j, const std::string& where) {
  MeasureSpec m;
  Section s(j, where);
  s.get("kind", m.kind);
  if (const json* c = s.child("center")) m.center = c->get<std::vector<double>>();
  s.get("sigma", m.sigma);
  s.get("path", m.path);
  s.finish();
  if (m.kind != "uniform" && m.kind != "wrapped_normal" && m.kind != "empirical") {
    throw ConfigError(where + ".kind must be uniform, wrapped_normal or empirical");
  }
  if (m.kind == "empirical" && m.path.empty()) throw ConfigError(where + ": empirical measure needs a path");
  if (m.kind == "wrapped_normal" && !(m.sigma > 0)) throw ConfigError(where + ".sigma must be positive");
  return m;
}

json measure_to(const MeasureSpec& m) {
  json j = {{"kind", m.kind}, {"sigma", m.sigma}};
  if (m.center) j["center"] = *m.center;
  if (!m.path.empty()) j["path"] = m.path;
  return j;
}

template <class Fn>
void wrap_errors(const std::string& where, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

nlohmann::json inner_to_json(const InnerSolverConfig& c) {
  return {{"max_iters", c.max_iters},
          {"step_size", c.step_size},
          {"optimizer", optimizer_name(c.optimizer)},
          {"momentum", c.momentum},
          {"adam", adam_to(c.adam)},
          {"init_temperature", c.init_temperature},
          {"init_pool_size", c.init_pool_size},
          {"lse_init", c.lse_init},
          {"residual_tol", c.residual_tol},
          {"perturb_scale", c.perturb_scale},
          {"stall_iters", c.stall_iters}};
}

InnerSolverConfig inner_from_json(const nlohmann::json& j, InnerSolverConfig defaults) {
  return inner_from(j, "inner", defaults);
}

static ExperimentConfig parse_config_impl(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  const json& j = doc.contains("config") && doc.contains("manifest_version") ? doc.at("config") : doc;
  ExperimentConfig c;
  Section top(j, "config");
  int version = 0;
  top.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("config: schema_version must be " + std::to_string(kConfigSchemaVersion));
  }
  std::string manifold = c.manifold.name();
  top.get("manifold", manifold);
  wrap_errors("config.manifold", [&] { c.manifold = Manifold::parse(manifold); });
  top.get("seed", c.seed);
  if (const json* t = top.child("threads")) c.threads = t->get<int>();
  top.get("method", c.method);
  if (c.method != "rnot" && c.method != "rcpm") throw ConfigError("config.method must be rnot or rcpm");
  if (const json* s = top.child("source")) c.source = measure_from(*s, "config.source");
  if (const json* s = top.child("target")) c.target = measure_from(*s, "config.target");

  if (const json* l = top.child("landmarks")) {
    Section s(*l, "config.landmarks");
    s.get("count", c.landmarks.count);
    std::string sel = to_string(c.landmarks.selection);
    s.get("selection", sel);
    wrap_errors("config.landmarks.selection", [&] { c.landmarks.selection = parse_selection(sel); });
    if (const json* seed = s.child("seed")) c.landmarks.seed = seed->get<std::uint64_t>();
    s.get("file", c.landmarks.file);
    s.finish();
  }
  if (c.landmarks.count < 1) throw ConfigError("config.landmarks.count must be >= 1");

  std::optional<std::uint64_t> init_seed;
  if (const json* n = top.child("net")) {
    Section s(*n, "config.net");
    s.get("hidden", c.net.hidden);
    std::string act = to_string(c.net.activation);
    s.get("activation", act);
    wrap_errors("config.net.activation", [&] { c.net.activation = parse_activation(act); });
    s.get("leaky_slope", c.net.leaky_slope);
    s.get("softplus_beta", c.net.softplus_beta);
    if (const json* seed = s.child("init_seed")) init_seed = seed->get<std::uint64_t>();
    s.finish();
  }
  c.net.input_dim = c.landmarks.count;
  c.net.init_seed = init_seed.value_or(derive_seed(c.seed, stream::kNetInit));
  wrap_errors("config.net", [&] { c.net.validate(); });

  if (const json* in = top.child("inner")) c.train.inner = inner_from(*in, "config.inner", c.train.inner);
  if (const json* t = top.child("train")) {
    Section s(*t, "config.train");
    s.get("batch_size", c.train.batch_size);
    s.get("steps", c.train.steps);
    s.get("outer_lr", c.train.outer_lr);
    if (const json* a = s.child("adam")) c.train.outer_adam = adam_from(*a, "config.train.adam", c.train.outer_adam);
    s.get("checkpoint_every", c.train.checkpoint_every);
    s.get("abort_failure_fraction", c.train.abort_failure_fraction);
    s.get("abort_patience", c.train.abort_patience);
    s.finish();
  }
  c.train.seed = c.seed;
  wrap_errors("config.train", [&] { c.train.validate(); });

  if (const json* r = top.child("rcpm")) {
    Section s(*r, "config.rcpm");
    s.get("sites", c.rcpm_sites);
    s.get("gamma", c.rcpm_gamma);
    s.get("batch_size", c.rcpm.batch_size);
    s.get("steps", c.rcpm.steps);
    s.get("site_lr", c.rcpm.site_lr);
    s.get("alpha_lr", c.rcpm.alpha_lr);
    s.get("candidates_per_site", c.rcpm.candidates_per_site);
    if (const json* in = s.child("inner")) c.rcpm.inner = inner_from(*in, "config.rcpm.inner", c.rcpm.inner);
    s.finish();
  }
  c.rcpm.seed = c.seed;
  if (c.rcpm_sites < 1) throw ConfigError("config.rcpm.sites must be >= 1");
  if (!(c.rcpm_gamma >= 0)) throw ConfigError("config.rcpm.gamma must be >= 0");
  wrap_errors("config.rcpm", [&] { c.rcpm.validate(); });

  c.eval.inner = c.train.inner;
  if (const json* e = top.child("eval")) {
    Section s(*e, "config.eval");
    s.get("n_samples", c.eval.n_samples);
    s.get("n_batches", c.eval.n_batches);
    s.get("fd_step", c.eval.fd_step);
    s.get("residual_gate", c.eval.residual_gate);
    s.get("pool_size", c.eval.pool_size);
    s.get("unreliable_fraction", c.eval.unreliable_fraction);
    s.get("singular_value_floor", c.eval.singular_value_floor);
    if (const json* in = s.child("inner")) c.eval.inner = inner_from(*in, "config.eval.inner", c.eval.inner);
    s.finish();
  }
  c.eval.seed = c.seed;
  wrap_errors("config.eval", [&] { c.eval.validate(); });

  if (const json* d = top.child("diagnose")) {
    Section s(*d, "config.diagnose");
    s.get("schedule", c.diagnose.schedule);
    s.get("epsilon", c.diagnose.epsilon);
    s.get("n_validation", c.diagnose.n_validation);
    s.get("n_pairs", c.diagnose.n_pairs);
    s.get("tolerance", c.diagnose.tolerance);
    s.finish();
  }
  if (c.diagnose.schedule.empty()) throw ConfigError("config.diagnose.schedule must be nonempty");

  c.sweep.family = c.manifold.is_sphere() ? "sphere" : "torus";
  c.sweep.landmarks = c.landmarks.count;
  c.sweep.rcpm_sites = c.rcpm_sites;
  c.sweep.sigma = c.target.sigma;
  if (const json* w = top.child("sweep")) {
    Section s(*w, "config.sweep");
    s.get("family", c.sweep.family);
    s.get("p_grid", c.sweep.p_grid);
    s.get("methods", c.sweep.methods);
    s.get("gammas", c.sweep.gammas);
    s.get("seeds", c.sweep.seeds);
    s.get("sigma", c.sweep.sigma);
    s.finish();
  }
  if (c.sweep.p_grid.empty()) throw ConfigError("config.sweep.p_grid must be nonempty");
  if (c.sweep.seeds.empty()) c.sweep.seeds = {c.seed};
  c.sweep.net = c.net;
  c.sweep.train = c.train;
  c.sweep.rcpm = c.rcpm;
  c.sweep.eval = c.eval;

  if (const json* q = top.child("quantize")) {
    Section s(*q, "config.quantize");
    if (const json* m = s.child("measure")) c.quantize.measure = measure_from(*m, "config.quantize.measure");
    s.get("m_grid", c.quantize.m_grid);
    s.get("n_samples", c.quantize.quant.n_samples);
    s.get("n_holdout", c.quantize.quant.n_holdout);
    s.get("max_iters", c.quantize.quant.lloyd.max_iters);
    s.get("rel_tol", c.quantize.quant.lloyd.rel_tol);
    s.get("restarts", c.quantize.quant.lloyd.restarts);
    s.finish();
  }
  if (c.quantize.m_grid.empty()) throw ConfigError("config.quantize.m_grid must be nonempty");
  top.finish();
  return c;
}

ExperimentConfig parse_config(const nlohmann::json& doc) {
  try {
    return parse_config_impl(doc);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["manifold"] = c.manifold.name();
  j["seed"] = c.seed;
  if (c.threads) j["threads"] = *c.threads;
  j["method"] = c.method;
  j["source"] = measure_to(c.source);
  j["target"] = measure_to(c.target);
  json l = {{"count", c.landmarks.count}, {"selection", to_string(c.landmarks.selection)}};
  if (c.landmarks.seed) l["seed"] = *c.landmarks.seed;
  if (!c.landmarks.file.empty()) l["file"] = c.landmarks.file;
  j["landmarks"] = l;
  j["net"] = {{"hidden", c.net.hidden},
              {"activation", to_string(c.net.activation)},
              {"leaky_slope", c.net.leaky_slope},
              {"softplus_beta", c.net.softplus_beta}};
  // Only an explicit init seed is kept, so a seed override still re-derives it.
  if (c.net.init_seed != derive_seed(c.seed, stream::kNetInit)) j["net"]["init_seed"] = c.net.init_seed;
  j["inner"] = inner_to_json(c.train.inner);
  j["train"] = {{"batch_size", c.train.batch_size},
                {"steps", c.train.steps},
                {"outer_lr", c.train.outer_lr},
                {"adam", adam_to(c.train.outer_adam)},
                {"checkpoint_every", c.train.checkpoint_every},
                {"abort_failure_fraction", c.train.abort_failure_fraction},
                {"abort_patience", c.train.abort_patience}};
  j["rcpm"] = {{"sites", c.rcpm_sites},
               {"gamma", c.rcpm_gamma},
               {"batch_size", c.rcpm.batch_size},
               {"steps", c.rcpm.steps},
               {"site_lr", c.rcpm.site_lr},
               {"alpha_lr", c.rcpm.alpha_lr},
               {"candidates_per_site", c.rcpm.candidates_per_site},
               {"inner", inner_to_json(c.rcpm.inner)}};
  j["eval"] = {{"n_samples", c.eval.n_samples},
               {"n_batches", c.eval.n_batches},
               {"fd_step", c.eval.fd_step},
               {"residual_gate", c.eval.residual_gate},
               {"pool_size", c.eval.pool_size},
               {"unreliable_fraction", c.eval.unreliable_fraction},
               {"singular_value_floor", c.eval.singular_value_floor},
               {"inner", inner_to_json(c.eval.inner)}};
  j["diagnose"] = {{"schedule", c.diagnose.schedule},
                   {"epsilon", c.diagnose.epsilon},
                   {"n_validation", c.diagnose.n_validation},
                   {"n_pairs", c.diagnose.n_pairs},
                   {"tolerance", c.diagnose.tolerance}};
  j["sweep"] = {{"family", c.sweep.family}, {"p_grid", c.sweep.p_grid}, {"methods", c.sweep.methods},
                {"gammas", c.sweep.gammas}, {"seeds", c.sweep.seeds},   {"sigma", c.sweep.sigma}};
  j["quantize"] = {{"measure", measure_to(c.quantize.measure)},
                   {"m_grid", c.quantize.m_grid},
                   {"n_samples", c.quantize.quant.n_samples},
                   {"n_holdout", c.quantize.quant.n_holdout},
                   {"max_iters", c.quantize.quant.lloyd.max_iters},
                   {"rel_tol", c.quantize.quant.lloyd.rel_tol},
                   {"restarts", c.quantize.quant.lloyd.restarts}};
  return j;
}

Measure make_measure(const MeasureSpec& spec, const Manifold& m, const std::string& base_dir) {
  if (spec.kind == "uniform") return Measure::uniform(m);
  if (spec.kind == "wrapped_normal") {
    if (!spec.center) return Measure::wrapped_normal(south_pole_wrapped_normal(m, spec.sigma));
    const Vec c = Eigen::Map<const Vec>(spec.center->data(), static_cast<Eigen::Index>(spec.center->size()));
    if (c.size() != m.coord_dim()) throw ConfigError("wrapped normal center has the wrong length");
    return Measure::wrapped_normal(WrappedNormalSpec{make_point(m, c), spec.sigma});
  }
  std::filesystem::path p(spec.path);
  if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
  auto points = read_points_csv(p.string(), m);
  if (points.empty()) throw ConfigError("empirical point cloud '" + p.string() + "' is empty");
  return Measure::empirical(m, std::move(points), p.string());
}

}  // namespace rnot
