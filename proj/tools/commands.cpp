#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "rnot/config.hpp"
#include "rnot/io.hpp"
#include "rnot/parallel.hpp"

namespace rnot::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Loaded {
  ExperimentConfig cfg;
  std::string base_dir;
  int threads = 1;
};

Loaded load(const CommonOptions& opt) {
  json doc = {{"schema_version", kConfigSchemaVersion}};
  std::string base_dir;
  if (!opt.config.empty()) {
    try {
      doc = json::parse(read_file(opt.config));
    } catch (const json::parse_error& e) {
      throw ConfigError(opt.config + ": " + e.what());
    }
    if (doc.is_object() && doc.contains("manifest_version") && doc.contains("config")) {
      json inner = doc.at("config");
      doc = std::move(inner);
    }
    base_dir = fs::path(opt.config).parent_path().string();
  }
  if (opt.seed) {
    if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
    doc["seed"] = *opt.seed;
  }
  Loaded l{parse_config(doc), base_dir, 1};
  l.threads = resolve_threads(opt.threads ? opt.threads : l.cfg.threads);
  ExperimentConfig& c = l.cfg;
  c.train.threads = c.rcpm.threads = c.eval.threads = l.threads;
  c.sweep.train.threads = c.sweep.rcpm.threads = c.sweep.eval.threads = l.threads;
  c.quantize.quant.lloyd.threads = l.threads;
  return l;
}

std::string out_file(const CommonOptions& opt, const std::string& name) {
  return (fs::path(opt.out) / name).string();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void record_measure_input(Manifest& man, const MeasureSpec& spec, const std::string& base_dir) {
  if (spec.kind != "empirical") return;
  fs::path p(spec.path);
  if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
  man.add_input(p.string());
}

Manifest start_manifest(const std::string& command, const CommonOptions& opt, const Loaded& l) {
  Manifest man(command, config_to_json(l.cfg));
  if (!opt.config.empty()) man.add_input(opt.config);
  man.set("seed", l.cfg.seed);
  man.set("threads", l.threads);
  return man;
}

LandmarkSet make_landmarks(const Loaded& l, Manifest& man) {
  const ExperimentConfig& c = l.cfg;
  if (!c.landmarks.file.empty()) {
    fs::path p(c.landmarks.file);
    if (p.is_relative() && !l.base_dir.empty()) p = fs::path(l.base_dir) / p;
    std::ifstream in(p);
    if (!in) throw IoError("cannot open landmark file '" + p.string() + "'");
    LandmarkSet set = read_landmarks(in);
    if (set.manifold().name() != c.manifold.name()) {
      throw ConfigError("landmark file is on " + set.manifold().name() + ", config says " + c.manifold.name());
    }
    man.add_input(p.string());
    return set;
  }
  const std::uint64_t seed = c.landmarks.seed.value_or(derive_seed(c.seed, stream::kLandmarks));
  return c.landmarks.selection == LandmarkSelection::FPS
             ? select_landmarks_fps(c.manifold, c.landmarks.count, seed)
             : select_landmarks_rnd(c.manifold, c.landmarks.count, seed);
}

std::string train_report_csv(const std::vector<TrainRecord>& records) {
  std::ostringstream os;
  os.precision(10);
  os << "step,loss,mean_residual,mean_iters,ms,failures\n";
  for (const auto& r : records) {
    os << r.step << ',' << r.loss << ',' << r.mean_residual << ',' << r.mean_iters << ',' << r.ms << ','
       << r.failures << '\n';
  }
  return os.str();
}

std::string rcpm_report_csv(const std::vector<RcpmTrainRecord>& records) {
  std::ostringstream os;
  os.precision(10);
  os << "step,loss,ms\n";
  for (const auto& r : records) os << r.step << ',' << r.loss << ',' << r.ms << '\n';
  return os.str();
}

// Maps config / IO failures to exit code 1 with a message on stderr.
template <class Fn>
int guarded(const char* command, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    std::cerr << "rnot " << command << ": " << e.what() << '\n';
    return kConfigOrIoError;
  }
}

struct LoadedMap {
  Checkpoint checkpoint;
  std::unique_ptr<TransportMap> map;
};

// Builds the map exactly as eval does, so transport and eval agree pointwise.
void build_map(LoadedMap& lm, const Loaded& l, const Measure& target) {
  if (lm.checkpoint.rnot) {
    lm.map = std::make_unique<RnotMap>(*lm.checkpoint.rnot, eval_pool(*lm.checkpoint.rnot, target, l.cfg.eval),
                                       l.cfg.eval.inner);
  } else {
    lm.map = std::make_unique<RcpmMap>(*lm.checkpoint.rcpm, l.cfg.eval.inner, l.cfg.eval.singular_value_floor);
  }
}

// An explicit --config must agree with the checkpoint; without one the
// checkpoint's manifold is used.
void reconcile_manifold(const CommonOptions& opt, Loaded& l, const Checkpoint& ck) {
  const Manifold& m = ck.manifold();
  if (m.name() == l.cfg.manifold.name()) return;
  if (!opt.config.empty()) {
    throw ConfigError("checkpoint is on " + m.name() + " but the config says " + l.cfg.manifold.name());
  }
  l.cfg.manifold = m;
}

}  // namespace

std::string transport_output_path(const std::string& output, double t, bool multiple) {
  if (!multiple) return output;
  const fs::path p(output);
  std::ostringstream name;
  name << p.stem().string() << "_t" << t << p.extension().string();
  return (p.parent_path() / name.str()).string();
}

std::string residual_path(const std::string& output) {
  const fs::path p(output);
  return (p.parent_path() / (p.stem().string() + ".residuals.csv")).string();
}

int cmd_train(const CommonOptions& opt) {
  return guarded("train", [&]() -> int {
    Loaded l = load(opt);
    const ExperimentConfig& c = l.cfg;
    const Measure source = make_measure(c.source, c.manifold, l.base_dir);
    const Measure target = make_measure(c.target, c.manifold, l.base_dir);
    Manifest man = start_manifest("train", opt, l);
    record_measure_input(man, c.source, l.base_dir);
    record_measure_input(man, c.target, l.base_dir);
    fs::create_directories(opt.out);
    const auto t0 = std::chrono::steady_clock::now();

    if (c.method == "rcpm") {
      const RcpmTrainResult res = rcpm_train(source, target, c.rcpm_sites, c.rcpm_gamma, c.rcpm);
      man.add_timing("train", seconds_since(t0));
      const std::string ck = save_checkpoint(opt.out, res.model);
      const std::string report = out_file(opt, "train_report.csv");
      atomic_write(report, rcpm_report_csv(res.records));
      man.add_output(ck);
      man.add_output(report);
      man.write(out_file(opt, "manifest.json"));
      return kOk;
    }

    LandmarkSet landmarks = make_landmarks(l, man);
    MlpConfig net = c.net;
    net.input_dim = landmarks.size();
    PotentialModel model(std::move(landmarks), init_mlp(net));
    auto on_checkpoint = [&](int step, const PotentialModel& m) {
      std::ostringstream dir;
      dir << "step_" << std::setw(6) << std::setfill('0') << step;
      save_checkpoint((fs::path(opt.out) / "checkpoints" / dir.str()).string(), m);
    };
    try {
      const TrainResult res = train(source, target, std::move(model), c.train, on_checkpoint);
      man.add_timing("train", seconds_since(t0));
      const std::string ck = save_checkpoint(opt.out, res.model);
      const std::string report = out_file(opt, "train_report.csv");
      atomic_write(report, train_report_csv(res.report.records));
      man.add_output(ck);
      man.add_output(out_file(opt, "landmarks.csv"));
      man.add_output(report);
      man.write(out_file(opt, "manifest.json"));
      return kOk;
    } catch (const TrainingAborted& e) {
      const std::string ck = save_checkpoint(opt.out, e.last_good());
      std::cerr << "rnot train: aborted at step " << e.step() << ": " << e.what() << "\n"
                << "rnot train: last good model written to " << ck << '\n';
      man.add_timing("train", seconds_since(t0));
      man.set("aborted", {{"step", e.step()}, {"reason", e.what()}});
      man.add_output(ck);
      man.add_output(out_file(opt, "landmarks.csv"));
      man.write(out_file(opt, "manifest.json"));
      return kTrainingAborted;
    }
  });
}

int cmd_eval(const CommonOptions& opt, const std::string& checkpoint) {
  return guarded("eval", [&]() -> int {
    Loaded l = load(opt);
    LoadedMap lm{load_checkpoint(checkpoint), nullptr};
    reconcile_manifold(opt, l, lm.checkpoint);
    const ExperimentConfig& c = l.cfg;
    const Measure source = make_measure(c.source, c.manifold, l.base_dir);
    const Measure target = make_measure(c.target, c.manifold, l.base_dir);
    Manifest man = start_manifest("eval", opt, l);
    man.add_input(checkpoint);
    record_measure_input(man, c.source, l.base_dir);
    record_measure_input(man, c.target, l.base_dir);
    build_map(lm, l, target);
    fs::create_directories(opt.out);
    const auto t0 = std::chrono::steady_clock::now();

    if (!source.has_density() || !target.has_density()) {
      Rng rng = make_rng(c.eval.seed, stream::kEvalSource);
      const auto xs = source.sample(static_cast<std::size_t>(c.eval.n_samples) * c.eval.n_batches, rng);
      const CostReport r = evaluate_cost(*lm.map, xs, c.eval);
      man.add_timing("eval", seconds_since(t0));
      const json j = {{"mode", "cost_only"},
                      {"kind", lm.checkpoint.kind},
                      {"mean_cost", r.mean_cost},
                      {"mean_residual", r.mean_residual},
                      {"gated_fraction", r.gated_fraction},
                      {"n_evaluated", r.n_evaluated}};
      const std::string path = out_file(opt, "eval.json");
      atomic_write(path, j.dump(1) + "\n");
      std::ostringstream csv;
      csv.precision(10);
      csv << "mean_cost,mean_residual,gated_fraction,n_evaluated\n"
          << r.mean_cost << ',' << r.mean_residual << ',' << r.gated_fraction << ',' << r.n_evaluated << '\n';
      const std::string csv_path = out_file(opt, "eval.csv");
      atomic_write(csv_path, csv.str());
      man.add_output(path);
      man.add_output(csv_path);
      man.write(out_file(opt, "eval_manifest.json"));
      return r.gated_fraction > c.eval.unreliable_fraction ? kUnreliableEval : kOk;
    }

    const EvalReport r = evaluate(*lm.map, source, target, c.eval);
    man.add_timing("eval", seconds_since(t0));
    json j = to_json(r);
    j["kind"] = lm.checkpoint.kind;
    const std::string path = out_file(opt, "eval.json");
    atomic_write(path, j.dump(1) + "\n");
    const std::string csv_path = out_file(opt, "eval.csv");
    atomic_write(csv_path, eval_csv_header() + "\n" + eval_csv_row(r) + "\n");
    man.add_output(path);
    man.add_output(csv_path);
    man.write(out_file(opt, "eval_manifest.json"));
    if (r.unreliable) {
      std::cerr << "rnot eval: unreliable report, " << r.gated_fraction * 100
                << "% of points failed the residual gate\n";
      return kUnreliableEval;
    }
    return kOk;
  });
}

int cmd_transport(const CommonOptions& opt, const std::string& checkpoint, const std::string& input,
                  const std::string& output, const std::vector<double>& ts) {
  return guarded("transport", [&]() -> int {
    if (ts.empty()) throw ConfigError("at least one --t value is required");
    for (double t : ts) {
      if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("--t must lie in [0, 1], got " + fmt(t));
    }
    Loaded l = load(opt);
    LoadedMap lm{load_checkpoint(checkpoint), nullptr};
    reconcile_manifold(opt, l, lm.checkpoint);
    const Manifold& m = l.cfg.manifold;
    std::vector<Point> xs;
    try {
      xs = read_points_csv(input, m);
    } catch (const std::exception& e) {
      throw IoError(input + ": " + e.what());
    }
    const Measure target = make_measure(l.cfg.target, m, l.base_dir);
    build_map(lm, l, target);

    std::vector<MapValue> values(xs.size());
    std::vector<Vec> logs(xs.size());
    parallel_for(xs.size(), l.threads, [&](std::size_t i) {
      values[i] = lm.map->apply(xs[i]);
      Vec v;
      if (!geo::log_map(m, xs[i].coords, values[i].y.coords, v)) v = Vec::Constant(m.coord_dim(), NAN);
      logs[i] = std::move(v);
    });

    Manifest man = start_manifest("transport", opt, l);
    man.add_input(checkpoint);
    man.add_input(input);
    const bool multiple = ts.size() > 1;
    for (double t : ts) {
      std::vector<Point> ys(xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (t == 0.0) {
          ys[i] = xs[i];
        } else if (t == 1.0) {
          ys[i] = values[i].y;
        } else {
          Vec y(m.coord_dim());
          geo::exp_map(m, xs[i].coords, t * logs[i], y);
          ys[i] = Point{m, std::move(y)};
        }
      }
      std::ostringstream os;
      write_points_csv(os, ys);
      const std::string path = transport_output_path(output, t, multiple);
      atomic_write(path, os.str());
      man.add_output(path);
    }
    std::ostringstream res;
    res.precision(10);
    res << "residual,ok\n";
    for (const auto& v : values) res << v.residual << ',' << (v.ok ? 1 : 0) << '\n';
    const std::string rpath = residual_path(output);
    atomic_write(rpath, res.str());
    man.add_output(rpath);
    man.write(fs::path(output).replace_extension(".manifest.json").string());
    return kOk;
  });
}

int cmd_diagnose_embedding(const CommonOptions& opt) {
  return guarded("diagnose-embedding", [&]() -> int {
    Loaded l = load(opt);
    const ExperimentConfig& c = l.cfg;
    Manifest man = start_manifest("diagnose-embedding", opt, l);
    fs::create_directories(opt.out);
    std::ostringstream csv;
    csv.precision(10);
    csv << "selection,M,s_M,rho_M,R_M\n";
    json chosen = json::object();
    for (LandmarkSelection sel : {LandmarkSelection::RND, LandmarkSelection::FPS}) {
      ChooseMOptions o;
      o.tolerance = c.diagnose.tolerance;
      o.epsilon = c.diagnose.epsilon;
      o.n_validation = c.diagnose.n_validation;
      o.n_pairs = c.diagnose.n_pairs;
      o.selection = sel;
      o.seed = c.landmarks.seed.value_or(derive_seed(c.seed, stream::kLandmarks));
      const ChooseMResult r = choose_M(c.manifold, c.diagnose.schedule, o);
      for (const auto& [M, d] : r.per_m) {
        csv << to_string(sel) << ',' << M << ',' << d.min_separation << ',' << d.near_collision_fraction << ','
            << d.coverage_radius << '\n';
      }
      chosen[to_string(sel)] = {{"M", r.M}, {"qualified", r.qualified}};
    }
    const std::string path = out_file(opt, "embedding_diagnostics.csv");
    atomic_write(path, csv.str());
    const std::string jpath = out_file(opt, "embedding_choice.json");
    atomic_write(jpath, chosen.dump(1) + "\n");
    man.add_output(path);
    man.add_output(jpath);
    man.write(out_file(opt, "diagnose_manifest.json"));
    return kOk;
  });
}

int cmd_sweep(const CommonOptions& opt) {
  return guarded("sweep", [&]() -> int {
    Loaded l = load(opt);
    Manifest man = start_manifest("sweep", opt, l);
    fs::create_directories(opt.out);
    const std::string path = out_file(opt, "sweep.csv");
    std::vector<SweepRow> rows;
    if (fs::exists(path)) {
      std::ifstream in(path);
      rows = read_sweep_csv(in);
      std::cerr << "rnot sweep: resuming, " << rows.size() << " cells already done\n";
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t resumed = rows.size();
    auto flush = [&] {
      std::ostringstream os;
      write_sweep_csv(os, rows);
      atomic_write(path, os.str());
    };
    dimension_sweep(l.cfg.sweep, rows, [&](const SweepRow& r) {
      rows.push_back(r);
      flush();
      std::cerr << "rnot sweep: p=" << r.p << ' ' << r.method << " seed=" << r.seed << " kl=" << r.kl
                << " ess=" << r.ess << " (" << r.seconds << " s)\n";
    });
    flush();
    int failed = 0;
    for (const auto& r : rows) failed += std::isnan(r.kl) ? 1 : 0;
    man.add_timing("sweep", seconds_since(t0));
    man.set("cells", {{"total", rows.size()}, {"resumed", resumed}, {"failed", failed}});
    man.add_output(path);
    man.write(out_file(opt, "sweep_manifest.json"));
    if (failed > 0) std::cerr << "rnot sweep: warning: " << failed << " cells failed (NaN)\n";
    return kOk;
  });
}

int cmd_quantize(const CommonOptions& opt) {
  return guarded("quantize", [&]() -> int {
    Loaded l = load(opt);
    const ExperimentConfig& c = l.cfg;
    const Measure nu = make_measure(c.quantize.measure, c.manifold, l.base_dir);
    Manifest man = start_manifest("quantize", opt, l);
    record_measure_input(man, c.quantize.measure, l.base_dir);
    fs::create_directories(opt.out);
    const auto t0 = std::chrono::steady_clock::now();
    const QuantizationTable table = rcpm_rmse_lower_bound_demo(nu, c.quantize.m_grid, c.quantize.quant, c.seed);
    man.add_timing("quantize", seconds_since(t0));
    // Closed form for the uniform circle: optimal cells are arcs of length 2pi/m.
    const bool circle = c.manifold.dim() == 1 && nu.kind() == Measure::Kind::Uniform;
    std::ostringstream csv;
    csv.precision(10);
    csv << "m,v,v_train,v_closed_form\n";
    for (const auto& r : table.rows) {
      csv << r.m << ',' << r.v << ',' << r.v_train << ',';
      if (circle) csv << std::numbers::pi * std::numbers::pi / (3.0 * r.m * r.m);
      csv << '\n';
    }
    const std::string path = out_file(opt, "quantization.csv");
    atomic_write(path, csv.str());
    const json fit = {{"slope", table.fit.slope},
                      {"slope_ci", table.fit.slope_ci},
                      {"intercept", table.fit.intercept},
                      {"theory_slope", -2.0 / c.manifold.dim()}};
    const std::string jpath = out_file(opt, "quantization_fit.json");
    atomic_write(jpath, fit.dump(1) + "\n");
    man.add_output(path);
    man.add_output(jpath);
    man.write(out_file(opt, "quantize_manifest.json"));
    return kOk;
  });
}

}  // namespace rnot::cli
