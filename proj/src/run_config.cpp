// Copyright 2026 The Omnisim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "omnisim/run_config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"

namespace omnisim::app {

namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so that
// finish() can reject the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expects an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& dst) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    dst = convert<T>(j_.at(key), name(key));
  }

  template <typename T>
  void get(const std::string& key, std::optional<T>& dst) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    dst = convert<T>(j_.at(key), name(key));
  }

  Section sub(const std::string& key) {
    used_.insert(key);
    return Section(j_.at(key), name(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) fail(name(item.key()), "unknown key");
    }
  }

  std::string name(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[noreturn]] static void fail(const std::string& key, const std::string& what) {
    throw ConfigError("config: key '" + key + "': " + what);
  }

 private:
  template <typename T>
  static T convert(const json& v, const std::string& key) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "expects a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "expects a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) fail(key, "expects a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "expects a number");
      return v.get<T>();
    } else {
      // std::vector<U>
      using U = typename T::value_type;
      if (!v.is_array()) fail(key, "expects an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<U>(v[i], key + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename F>
void checked(const std::string& key, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    Section::fail(key, e.what());
  }
}

ProblemConfig parse_problem(Section s) {
  ProblemConfig p;
  s.get("kind", p.kind);
  s.get("dim", p.dim);
  s.get("condition", p.condition);
  s.get("noise", p.noise);
  s.get("init_scale", p.init_scale);
  s.get("eigenvalues", p.eigenvalues);
  s.get("n_examples", p.n_examples);
  s.get("label_noise", p.label_noise);
  s.get("image_size", p.image_size);
  s.get("classes", p.classes);
  s.get("seed", p.seed);
  s.finish();
  if (p.kind != "quadratic" && p.kind != "logistic" && p.kind != "tiny_cnn") {
    Section::fail(s.name("kind"), "must be quadratic, logistic or tiny_cnn");
  }
  if (p.dim == 0) Section::fail(s.name("dim"), "must be >= 1");
  if (!(p.condition >= 1.0)) Section::fail(s.name("condition"), "must be >= 1");
  if (!(p.noise >= 0.0)) Section::fail(s.name("noise"), "must be >= 0");
  for (double a : p.eigenvalues) {
    if (!(a > 0.0)) Section::fail(s.name("eigenvalues"), "must be positive");
  }
  if (p.n_examples && *p.n_examples == 0) Section::fail(s.name("n_examples"), "must be >= 1");
  if (!(p.label_noise >= 0.0 && p.label_noise <= 0.5)) {
    Section::fail(s.name("label_noise"), "must be in [0, 0.5]");
  }
  if (p.image_size < 4 || p.image_size > 16) Section::fail(s.name("image_size"), "must be in [4, 16]");
  if (p.classes < 2 || p.classes > 10) Section::fail(s.name("classes"), "must be in [2, 10]");
  return p;
}

cluster::PhaseProfile parse_profile(Section s) {
  cluster::PhaseProfile p;
  s.get("t_conv_compute", p.t_conv_compute);
  s.get("t_conv_network", p.t_conv_network);
  s.get("t_fc", p.t_fc);
  s.finish();
  checked(s.name("t_fc"), [&] { p.validate(); });
  return p;
}

std::vector<double> parse_eta_grid(Section s) {
  double max = 0.1;
  double min = 1e-4;
  double factor = 10.0;
  s.get("max", max);
  s.get("min", min);
  s.get("factor", factor);
  s.finish();
  if (!(max > 0.0) || !(min > 0.0) || min > max) Section::fail(s.name("min"), "need 0 < min <= max");
  if (!(factor > 1.0)) Section::fail(s.name("factor"), "must be > 1");
  std::vector<double> etas;
  for (double e = max; e >= min * (1.0 - 1e-12); e /= factor) etas.push_back(e);
  return etas;
}

// `etas` list or `eta_grid` object, not both.
void parse_etas(Section& s, std::vector<double>& etas) {
  if (s.has("etas") && s.has("eta_grid")) Section::fail(s.name("eta_grid"), "conflicts with 'etas'");
  s.get("etas", etas);
  if (s.has("eta_grid")) etas = parse_eta_grid(s.sub("eta_grid"));
}

void require_positive_list(const Section& s, const std::string& key,
                           const std::vector<double>& v) {
  if (v.empty()) Section::fail(s.name(key), "must not be empty");
  for (double x : v) {
    if (!(x > 0.0)) Section::fail(s.name(key), "entries must be positive");
  }
}

void require_momenta(const Section& s, const std::string& key,
                     const std::vector<double>& v) {
  if (v.empty()) Section::fail(s.name(key), "must not be empty");
  for (double x : v) {
    if (!(x >= 0.0 && x < 1.0)) Section::fail(s.name(key), "entries must be in [0, 1)");
  }
}

}  // namespace

std::unique_ptr<sgd::TrainingProblem> make_problem(const ProblemConfig& cfg) {
  if (cfg.kind == "quadratic") {
    if (!cfg.eigenvalues.empty()) {
      return std::make_unique<sgd::QuadraticProblem>(cfg.eigenvalues, cfg.noise,
                                                     cfg.init_scale);
    }
    return std::make_unique<sgd::QuadraticProblem>(sgd::QuadraticOptions{
        cfg.dim, cfg.condition, cfg.noise, cfg.init_scale, cfg.seed});
  }
  if (cfg.kind == "logistic") {
    sgd::LogisticOptions o;
    o.n_examples = cfg.n_examples.value_or(o.n_examples);
    o.dim = cfg.dim;
    o.label_noise = cfg.label_noise;
    o.seed = cfg.seed;
    return std::make_unique<sgd::LogisticProblem>(o);
  }
  if (cfg.kind == "tiny_cnn") {
    sgd::TinyCnnOptions o;
    o.image_size = cfg.image_size;
    o.classes = cfg.classes;
    o.n_examples = cfg.n_examples.value_or(o.n_examples);
    o.seed = cfg.seed;
    return std::make_unique<sgd::TinyCnnProblem>(o);
  }
  throw ConfigError("config: key 'problem.kind': unknown kind '" + cfg.kind + "'");
}

cluster::PhaseProfile RunConfig::resolved_profile() const {
  if (profile) return *profile;
  if (workload) return cluster::profile_from_cluster(cluster, *workload);
  throw ConfigError("config: key 'profile': required unless 'cluster.workload' is given");
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  Section top(root, "");
  RunConfig cfg;
  top.get("seed", cfg.seed);

  if (top.has("problem")) cfg.problem = parse_problem(top.sub("problem"));

  if (top.has("cluster")) {
    Section s = top.sub("cluster");
    s.get("n_conv_devices", cfg.cluster.n_conv_devices);
    s.get("device_tflops", cfg.cluster.device_tflops);
    s.get("net_bandwidth", cfg.cluster.net_bandwidth);
    s.get("fc_device_tflops", cfg.cluster.fc_device_tflops);
    if (s.has("workload")) {
      Section w = s.sub("workload");
      cluster::Workload wl;
      w.get("conv_flops", wl.conv_flops);
      w.get("fc_flops", wl.fc_flops);
      w.get("conv_model_bytes", wl.conv_model_bytes);
      w.finish();
      cfg.workload = wl;
    }
    s.finish();
    checked("cluster", [&] { cfg.cluster.validate(); });
  }

  if (top.has("profile")) cfg.profile = parse_profile(top.sub("profile"));

  if (top.has("grid")) {
    Section s = top.sub("grid");
    opt::GridSpec& g = cfg.grid;
    s.get("momenta", g.momenta);
    s.get("lr_divisors", g.lr_divisors);
    s.get("sweep_etas", g.sweep_etas);
    s.get("sweep_momentum", g.sweep_momentum);
    s.get("refine_momenta", g.refine_momenta);
    s.get("group_candidates", g.group_candidates);
    s.get("probe_seconds", g.probe_seconds);
    s.get("winner_threshold", g.winner_threshold);
    s.get("max_rounds", g.max_rounds);
    s.finish();
  }
  checked("grid", [&] { cfg.grid.validate(); });

  if (top.has("epochs")) {
    Section s = top.sub("epochs");
    opt::EpochConfig& e = cfg.epochs;
    s.get("epoch_seconds", e.epoch_seconds);
    s.get("cold_start_seconds", e.cold_start_seconds);
    s.get("target_loss", e.target_loss);
    s.get("max_epochs", e.max_epochs);
    s.finish();
  }
  checked("epochs", [&] { cfg.epochs.validate(cfg.grid); });

  if (top.has("sim")) {
    Section s = top.sub("sim");
    SimSection& m = cfg.sim;
    std::string mode = "exponential";
    s.get("service_mode", mode);
    if (mode == "exponential") {
      m.service_mode = sim::ServiceMode::kExponential;
    } else if (mode == "deterministic") {
      m.service_mode = sim::ServiceMode::kDeterministic;
    } else {
      Section::fail(s.name("service_mode"), "must be exponential or deterministic");
    }
    s.get("batch", m.batch);
    s.get("lambda", m.lambda);
    s.get("smoothing_window", m.smoothing_window);
    s.get("groups", m.groups);
    s.get("eta", m.eta);
    s.get("mu", m.mu);
    s.get("max_updates", m.max_updates);
    s.get("max_sim_seconds", m.max_sim_seconds);
    s.get("target_loss", m.target_loss);
    s.finish();
    checked("sim", [&] { sgd::Hyperparams{m.eta, m.mu, m.lambda, m.batch}.validate(); });
    if (m.smoothing_window == 0) Section::fail(s.name("smoothing_window"), "must be >= 1");
    if (m.groups == 0) Section::fail(s.name("groups"), "must be >= 1");
  }

  if (top.has("convbench")) {
    Section s = top.sub("convbench");
    ConvBenchSection& c = cfg.convbench;
    s.get("n", c.spec.n);
    s.get("k", c.spec.k);
    s.get("d_in", c.spec.d_in);
    s.get("d_out", c.spec.d_out);
    s.get("stride", c.spec.stride);
    s.get("pad", c.spec.pad);
    s.get("batch", c.batch);
    s.get("b_p", c.b_p);
    s.get("workers", c.workers);
    s.get("repeats", c.repeats);
    s.finish();
    checked("convbench", [&] { c.spec.validate(); });
    if (c.batch == 0) Section::fail(s.name("batch"), "must be >= 1");
    for (auto b : c.b_p) {
      if (b == 0 || b > c.batch) Section::fail(s.name("b_p"), "entries must be in [1, batch]");
    }
    if (c.workers.empty()) Section::fail(s.name("workers"), "must not be empty");
    for (auto w : c.workers) {
      if (w == 0) Section::fail(s.name("workers"), "entries must be >= 1");
    }
    if (c.repeats == 0) Section::fail(s.name("repeats"), "must be >= 1");
  }

  if (top.has("he_curve")) {
    Section s = top.sub("he_curve");
    s.get("events", cfg.he_curve.events);
    s.get("burn_in", cfg.he_curve.burn_in);
    s.get("eta", cfg.he_curve.eta);
    s.finish();
    if (cfg.he_curve.events <= cfg.he_curve.burn_in + 1) {
      Section::fail(s.name("events"), "must exceed burn_in + 1");
    }
    if (!(cfg.he_curve.eta > 0.0)) Section::fail(s.name("eta"), "must be positive");
  }

  if (top.has("momentum_sweep")) {
    Section s = top.sub("momentum_sweep");
    MomentumSweepSection& m = cfg.momentum_sweep;
    s.get("target_loss", m.target_loss);
    s.get("momenta", m.momenta);
    parse_etas(s, m.etas);
    s.get("n_seeds", m.n_seeds);
    s.get("max_updates", m.max_updates);
    s.get("he_updates", m.he_updates);
    s.get("groups", m.groups);
    s.get("estimate", m.estimate);
    if (s.has("estimator")) {
      Section e = s.sub("estimator");
      e.get("runs", m.estimator.runs);
      e.get("steps", m.estimator.steps);
      e.get("eta", m.estimator.eta);
      if (e.has("problem")) m.estimator.problem = parse_problem(e.sub("problem"));
      if (e.has("profile")) m.estimator.profile = parse_profile(e.sub("profile"));
      e.finish();
      if (m.estimator.runs == 0) Section::fail(e.name("runs"), "must be >= 1");
      if (m.estimator.steps < 3) Section::fail(e.name("steps"), "must be >= 3");
      if (!(m.estimator.eta > 0.0)) Section::fail(e.name("eta"), "must be positive");
    }
    s.finish();
    require_momenta(s, "momenta", m.momenta);
    if (!m.etas.empty()) require_positive_list(s, "etas", m.etas);
    if (m.n_seeds == 0) Section::fail(s.name("n_seeds"), "must be >= 1");
    if (m.max_updates == 0) Section::fail(s.name("max_updates"), "must be >= 1");
    if (m.he_updates < 2) Section::fail(s.name("he_updates"), "must be >= 2");
  }
  if (cfg.momentum_sweep.etas.empty()) cfg.momentum_sweep.etas = {0.1, 0.01, 0.001};

  if (top.has("batch_sweep")) {
    Section s = top.sub("batch_sweep");
    BatchSweepSection& b = cfg.batch_sweep;
    s.get("batches", b.batches);
    parse_etas(s, b.etas);
    s.get("momentum", b.momentum);
    s.get("target_loss", b.target_loss);
    s.get("target_excess", b.target_excess);
    s.get("max_steps", b.max_steps);
    s.finish();
    if (b.batches.empty()) Section::fail(s.name("batches"), "must not be empty");
    for (auto x : b.batches) {
      if (x == 0) Section::fail(s.name("batches"), "entries must be >= 1");
    }
    if (!b.etas.empty()) require_positive_list(s, "etas", b.etas);
    if (!(b.momentum >= 0.0 && b.momentum < 1.0)) Section::fail(s.name("momentum"), "must be in [0, 1)");
    if (b.target_loss && b.target_excess) Section::fail(s.name("target_excess"), "conflicts with 'target_loss'");
    if (b.target_excess && !(*b.target_excess > 0.0)) Section::fail(s.name("target_excess"), "must be positive");
    if (b.max_steps == 0) Section::fail(s.name("max_steps"), "must be >= 1");
  }
  if (cfg.batch_sweep.etas.empty()) cfg.batch_sweep.etas = {1.0, 0.1, 0.01};

  top.finish();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string canonical_json(const std::string& json_text) {
  // nlohmann's object type is an ordered std::map, so dump() sorts keys.
  return json::parse(json_text).dump();
}

std::string config_hash(const std::string& json_text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_json(json_text)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace omnisim::app
