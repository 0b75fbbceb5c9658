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

#include "omnisim/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include "json.hpp"
#include "omnisim/async_sim.hpp"
#include "omnisim/cluster_model.hpp"
#include "omnisim/conv.hpp"
#include "omnisim/csv.hpp"
#include "omnisim/optimizer.hpp"
#include "omnisim/rng.hpp"
#include "omnisim/sgd.hpp"

#ifndef OMNISIM_VERSION
#define OMNISIM_VERSION "unknown"
#endif

namespace omnisim::app {

namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Stream ids for the per-command RNG uses.
constexpr std::uint64_t kConvDataStream = 0xC0;
constexpr std::uint64_t kSeCurveStream = 0x5E;
constexpr std::uint64_t kEstimatorStream = 0xE5;
constexpr std::uint64_t kHeStream = 0x4E;

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<cluster::ExecutionPlan> make_plans(std::size_t n,
                                               const std::vector<std::size_t>& groups) {
  std::vector<cluster::ExecutionPlan> plans;
  const auto gs = groups.empty() ? cluster::power_of_two_divisors(n) : groups;
  for (auto g : gs) {
    if (g == 0 || n % g != 0) {
      throw ConfigError("config: group count " + std::to_string(g) +
                        " does not divide cluster.n_conv_devices=" + std::to_string(n));
    }
    plans.emplace_back(n, g);
  }
  return plans;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

}  // namespace

// ---- convbench -------------------------------------------------------------

std::vector<std::string> cmd_convbench(const RunConfig& cfg, const CommandContext& ctx) {
  const ConvBenchSection& c = cfg.convbench;
  const tensor::ConvSpec& spec = c.spec;
  std::vector<std::size_t> bps = c.b_p;
  if (bps.empty()) {
    for (std::size_t b = 1; b <= c.batch; ++b) bps.push_back(b);
  }

  Rng rng(derive_seed(ctx.seed, kConvDataStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  tensor::Tensor4 data(spec.n, spec.n, spec.d_in, c.batch);
  tensor::Tensor4 kernel(spec.k, spec.k, spec.d_in, spec.d_out);
  for (double& x : data.storage()) x = normal(rng);
  for (double& x : kernel.storage()) x = normal(rng);
  const tensor::Tensor4 ref = tensor::conv_direct(data, kernel, spec);
  const double scale = std::max(max_abs(ref.data()), 1e-300);

  auto out = open_out(ctx.out / "convbench.csv");
  out << "b_p,workers,seconds,correct\n";
  for (auto bp : bps) {
    for (auto w : c.workers) {
      double best = kInf;
      tensor::Tensor4 result;
      for (std::size_t r = 0; r < c.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        result = tensor::conv_lowered(data, kernel, spec, bp, w);
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
      }
      double err = 0.0;
      for (std::size_t i = 0; i < ref.size(); ++i) {
        err = std::max(err, std::abs(result.storage()[i] - ref.storage()[i]));
      }
      out << bp << ',' << w << ',' << csv::seconds(best) << ','
          << bool_str(err <= 1e-10 * scale) << '\n';
    }
  }
  return {"convbench.csv"};
}

// ---- he-curve --------------------------------------------------------------

std::vector<std::string> cmd_he_curve(const RunConfig& cfg, const CommandContext& ctx) {
  const cluster::PhaseProfile profile = cfg.resolved_profile();
  const std::size_t n = cfg.cluster.n_conv_devices;
  const auto problem = make_problem(cfg.problem);
  const auto rows = cluster::he_curve(n, profile);

  auto measure = [&](std::size_t g, sim::ServiceMode mode) {
    sim::SimConfig sc;
    sc.plan = cluster::ExecutionPlan(n, g);
    sc.profile = profile;
    sc.hp = {cfg.he_curve.eta, 0.0, cfg.sim.lambda, cfg.sim.batch};
    sc.problem = problem.get();
    sc.service_mode = mode;
    sc.max_updates = cfg.he_curve.events;
    sc.seed = derive_seed(ctx.seed, kHeStream + g);
    const sim::SimTrace trace = sim::simulate(sc);
    if (trace.diverged) {
      throw opt::DivergenceError("he-curve: training diverged while measuring g=" +
                                 std::to_string(g) + "; lower he_curve.eta");
    }
    return sim::measured_he(trace, cfg.he_curve.burn_in);
  };

  auto out = open_out(ctx.out / "he_curve.csv");
  out << "g,k,t_conv_s,he_s_per_iter,fc_saturated,measured_det_s,measured_exp_s,"
         "rel_err_det,rel_err_exp\n";
  for (const auto& r : rows) {
    const double det = measure(r.g, sim::ServiceMode::kDeterministic);
    const double exp = measure(r.g, sim::ServiceMode::kExponential);
    out << r.g << ',' << r.k << ',' << csv::seconds(r.t_conv_s) << ','
        << csv::seconds(r.he_s_per_iter) << ',' << bool_str(r.fc_saturated) << ','
        << csv::seconds(det) << ',' << csv::seconds(exp) << ','
        << csv::real(std::abs(det - r.he_s_per_iter) / r.he_s_per_iter) << ','
        << csv::real(std::abs(exp - r.he_s_per_iter) / r.he_s_per_iter) << '\n';
  }
  return {"he_curve.csv"};
}

// ---- momentum-sweep --------------------------------------------------------

std::vector<std::string> cmd_momentum_sweep(const RunConfig& cfg, const CommandContext& ctx) {
  const MomentumSweepSection& m = cfg.momentum_sweep;
  const cluster::PhaseProfile profile = cfg.resolved_profile();
  const std::size_t n = cfg.cluster.n_conv_devices;
  const auto plans = make_plans(n, m.groups);
  const auto problem = make_problem(cfg.problem);
  std::unique_ptr<sgd::TrainingProblem> est_problem;
  if (m.estimate) {
    est_problem = make_problem(m.estimator.problem.value_or(cfg.problem));
    if (est_problem->name() != "quadratic") {
      throw ConfigError("config: key 'momentum_sweep.estimator.problem.kind': the estimator needs a quadratic problem");
    }
  }

  sim::SeGrid grid;
  grid.momenta = m.momenta;
  grid.etas = m.etas;
  grid.batch = cfg.sim.batch;
  grid.lambda = cfg.sim.lambda;
  sim::SeCurveOptions so;
  so.service_mode = cfg.sim.service_mode;
  so.max_updates = m.max_updates;
  so.n_seeds = m.n_seeds;
  so.he_updates = m.he_updates;
  so.smoothing_window = cfg.sim.smoothing_window;
  const auto rows = sim::se_curve(*problem, profile, grid, plans, m.target_loss,
                                  derive_seed(ctx.seed, kSeCurveStream), so);

  auto out = open_out(ctx.out / "momentum_sweep.csv");
  out << "g,k,implicit_momentum,predicted_momentum,mu_star,eta_star,iterations,"
         "he_s_per_iter,total_time_s,p_se,p_he\n";
  for (const auto& r : rows) {
    double estimate = std::nan("");
    if (m.estimate) {
      sim::SimConfig sc;
      sc.plan = cluster::ExecutionPlan(n, r.g);
      sc.profile = m.estimator.profile.value_or(profile);
      sc.hp = {m.estimator.eta, 0.0, 0.0, cfg.sim.batch};
      sc.problem = est_problem.get();
      sc.service_mode = sim::ServiceMode::kExponential;
      sc.max_updates = m.estimator.steps;
      sc.seed = derive_seed(ctx.seed, kEstimatorStream);
      estimate = sim::estimate_implicit_momentum(sc, m.estimator.runs).momentum;
    }
    const double predicted = 1.0 - 1.0 / static_cast<double>(r.g);
    out << r.g << ',' << r.k << ',' << csv::real(estimate) << ',' << csv::real(predicted)
        << ',' << csv::real(r.mu) << ',' << csv::real(r.eta) << ','
        << csv::real(r.iterations) << ',' << csv::seconds(r.he) << ','
        << csv::seconds(r.total_time) << ',' << csv::real(r.p_se) << ','
        << csv::real(r.p_he) << '\n';
  }
  return {"momentum_sweep.csv"};
}

// ---- batch-sweep -----------------------------------------------------------

std::vector<std::string> cmd_batch_sweep(const RunConfig& cfg, const CommandContext& ctx) {
  const BatchSweepSection& bs = cfg.batch_sweep;
  const auto problem = make_problem(cfg.problem);
  std::size_t n_examples = 0;
  if (const auto* lp = dynamic_cast<const sgd::LogisticProblem*>(problem.get())) {
    n_examples = lp->n_examples();
  } else if (const auto* cp = dynamic_cast<const sgd::TinyCnnProblem*>(problem.get())) {
    n_examples = cp->dataset().size();
  } else {
    throw ConfigError("config: key 'problem.kind': batch-sweep needs a finite dataset (logistic or tiny_cnn)");
  }
  double target = 0.0;
  if (bs.target_loss) {
    target = *bs.target_loss;
  } else if (bs.target_excess) {
    const auto ref = problem->reference_min_loss();
    if (!ref) throw ConfigError("config: key 'batch_sweep.target_excess': problem has no reference minimum");
    target = *ref + *bs.target_excess;
  } else {
    throw ConfigError("config: key 'batch_sweep.target_loss': one of target_loss or target_excess is required");
  }

  const sgd::SGDState init(problem->initial_weights());
  auto out = open_out(ctx.out / "batch_sweep.csv");
  out << "b,eta_star,epochs_to_target\n";
  for (auto b : bs.batches) {
    double best_iters = kInf;
    double best_eta = std::nan("");
    double fallback_loss = kInf;
    double fallback_eta = std::nan("");
    bool any_finite = false;
    for (double eta : bs.etas) {
      sgd::SyncStop stop;
      stop.target_loss = target;
      stop.max_steps = bs.max_steps;
      stop.smoothing_window = cfg.sim.smoothing_window;
      const sgd::LossTrace tr = sgd::run_sync(
          *problem, {eta, bs.momentum, cfg.sim.lambda, b}, init, stop, ctx.seed);
      if (tr.diverged) continue;
      any_finite = true;
      const auto iters = sgd::iterations_to_loss(tr, target, cfg.sim.smoothing_window);
      const double it = iters ? static_cast<double>(*iters) : kInf;
      // Fewest iterations; exact ties keep the smaller rate.
      if (it < best_iters || (it == best_iters && it < kInf && eta < best_eta)) {
        best_iters = it;
        best_eta = eta;
      }
      const double last = tr.samples.back().loss;
      if (last < fallback_loss) {
        fallback_loss = last;
        fallback_eta = eta;
      }
    }
    if (!any_finite) {
      throw opt::DivergenceError("batch-sweep: every learning rate diverged at b=" +
                                 std::to_string(b));
    }
    if (!(best_iters < kInf)) best_eta = fallback_eta;
    const double epochs = best_iters * static_cast<double>(b) / static_cast<double>(n_examples);
    out << b << ',' << csv::real(best_eta) << ',' << csv::real(epochs) << '\n';
  }
  return {"batch_sweep.csv"};
}

// ---- autotune --------------------------------------------------------------

namespace {

std::string checkpoint_name(std::size_t epoch) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoints/ckpt_epoch_%04zu.txt", epoch);
  return buf;
}

std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  std::optional<fs::path> best;
  if (!fs::is_directory(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("ckpt_epoch_", 0) != 0 || entry.path().extension() != ".txt") continue;
    if (!best || entry.path().filename() > best->filename()) best = entry.path();
  }
  return best;
}

// Keeps the header and every row for which keep(fields) holds.
template <typename Pred>
void truncate_csv(const fs::path& path, Pred keep) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("--resume: missing " + path.string());
  std::string header;
  std::getline(in, header);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = csv::split(line);
    if (!keep(fields)) break;
    lines.push_back(line);
  }
  in.close();
  auto out = open_out(path);
  out << header << '\n';
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

std::vector<std::string> cmd_autotune(const RunConfig& cfg, const CommandContext& ctx) {
  const cluster::PhaseProfile profile = cfg.resolved_profile();
  const auto problem = make_problem(cfg.problem);
  const fs::path ckpt_dir = ctx.out / "checkpoints";
  const fs::path log_path = ctx.out / "decision_log.csv";
  const fs::path trace_path = ctx.out / "loss_trace.csv";

  std::optional<opt::Checkpoint> resume;
  if (ctx.resume) {
    const auto latest = latest_checkpoint(ckpt_dir);
    if (!latest) throw ConfigError("--resume: no checkpoint under " + ckpt_dir.string());
    resume = opt::load_checkpoint(*latest);
    const std::size_t epoch = resume->epoch;
    const double elapsed = resume->elapsed_s;
    // Rows written after the checkpoint belong to the interrupted epoch.
    truncate_csv(log_path, [&](const std::vector<std::string>& f) {
      return !f.empty() && std::stoull(f[0]) <= epoch;
    });
    truncate_csv(trace_path, [&](const std::vector<std::string>& f) {
      return f.size() >= 2 && csv::parse_real(f[1]) <= elapsed + 1e-6;
    });
  } else {
    fs::create_directories(ckpt_dir);
    for (const auto& entry : fs::directory_iterator(ckpt_dir)) {
      if (entry.path().filename().string().rfind("ckpt_epoch_", 0) == 0) fs::remove(entry.path());
    }
    auto log = open_out(log_path);
    opt::write_decision_log_header(log);
    auto trace = open_out(trace_path);
    trace << "step,sim_time_s,loss\n";
  }

  opt::SimEnvironmentOptions eo;
  eo.devices = cfg.cluster.n_conv_devices;
  eo.profile = profile;
  eo.service_mode = cfg.sim.service_mode;
  eo.batch = cfg.sim.batch;
  eo.lambda = cfg.sim.lambda;
  eo.seed = ctx.seed;
  eo.target_loss = cfg.epochs.target_loss;
  eo.smoothing_window = cfg.sim.smoothing_window;
  opt::SimEnvironment env(*problem, eo);

  auto log = open_out(log_path, std::ios::app);
  auto trace = open_out(trace_path, std::ios::app);
  const opt::EpochHook hook = [&](const opt::EpochRecord& rec, const opt::Checkpoint& ckpt,
                                  std::span<const sgd::LossSample> samples) {
    // Trace, then log, then checkpoint: a checkpoint on disk implies its rows are.
    const std::string id = checkpoint_name(rec.epoch);
    sgd::write_loss_trace_rows(trace, samples);
    opt::EpochRecord row = rec;
    row.checkpoint = id;
    opt::write_decision_log_row(log, row);
    trace.flush();
    log.flush();
    const fs::path final_path = ctx.out / id;
    const fs::path tmp = final_path.string() + ".tmp";
    opt::save_checkpoint(ckpt, tmp);
    fs::rename(tmp, final_path);
    return id;
  };
  const opt::OptimizeResult res =
      opt::optimize(env, sgd::SGDState(problem->initial_weights()), cfg.grid, cfg.epochs,
                    hook, resume);

  auto summary = open_out(ctx.out / "autotune_summary.csv");
  summary << "elapsed_s,probe_s,kept_s,probe_overhead_frac,reached_target,final_loss,final_g\n";
  const std::size_t final_g = res.log.empty() ? (resume ? resume->g : 0) : res.log.back().g;
  summary << csv::seconds(res.elapsed_s) << ',' << csv::seconds(res.probe_s) << ','
          << csv::seconds(res.kept_s) << ',' << csv::seconds(res.overhead()) << ','
          << bool_str(res.reached_target) << ',' << csv::real(env.loss(res.final_state))
          << ',' << final_g << '\n';
  return {"decision_log.csv", "loss_trace.csv", "autotune_summary.csv", "checkpoints/"};
}

// ---- simulate --------------------------------------------------------------

std::vector<std::string> cmd_simulate(const RunConfig& cfg, const CommandContext& ctx) {
  const cluster::PhaseProfile profile = cfg.resolved_profile();
  const auto problem = make_problem(cfg.problem);
  const SimSection& s = cfg.sim;
  if (cfg.cluster.n_conv_devices % s.groups != 0) {
    throw ConfigError("config: key 'sim.groups': must divide cluster.n_conv_devices");
  }
  sim::SimConfig sc;
  sc.plan = cluster::ExecutionPlan(cfg.cluster.n_conv_devices, s.groups);
  sc.profile = profile;
  sc.hp = {s.eta, s.mu, s.lambda, s.batch};
  sc.problem = problem.get();
  sc.service_mode = s.service_mode;
  sc.max_updates = s.max_updates;
  sc.max_sim_seconds = s.max_sim_seconds;
  sc.seed = ctx.seed;
  sc.target_loss = s.target_loss;
  sc.smoothing_window = s.smoothing_window;
  sc.validate();
  const sim::SimTrace trace = sim::simulate(sc);

  auto t = open_out(ctx.out / "trace.csv");
  sim::write_trace_csv(t, trace);
  auto l = open_out(ctx.out / "loss_trace.csv");
  sgd::write_loss_trace_csv(l, trace.loss);
  auto summary = open_out(ctx.out / "simulate_summary.csv");
  summary << "updates,end_time_s,measured_he_s,mean_staleness,diverged,reached_target\n";
  const std::size_t burn = std::min<std::size_t>(sim::kDefaultBurnIn, trace.events.size() / 2);
  const double he = trace.events.size() > burn + 1 ? sim::measured_he(trace, burn) : std::nan("");
  summary << trace.events.size() << ',' << csv::seconds(trace.end_time) << ','
          << csv::seconds(he) << ',' << csv::real(sim::staleness_stats(trace, burn).mean)
          << ',' << bool_str(trace.diverged) << ',' << bool_str(trace.reached_target) << '\n';
  return {"trace.csv", "loss_trace.csv", "simulate_summary.csv"};
}

// ---- dispatch --------------------------------------------------------------

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"convbench",  "he-curve", "momentum-sweep",
                                              "batch-sweep", "autotune", "simulate"};
  return names;
}

namespace {

void write_manifest(const CommandContext& ctx, const std::vector<std::string>& outputs) {
  nlohmann::json m;
  m["command"] = ctx.command;
  m["config_hash"] = "fnv1a64:" + config_hash(ctx.config_text);
  m["seed"] = ctx.seed;
  m["resumed"] = ctx.resume;
  m["outputs"] = outputs;
  m["versions"] = {
      {"omnisim", OMNISIM_VERSION},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"compiler", __VERSION__},
      {"cplusplus", __cplusplus},
  };
  auto out = open_out(ctx.out / "manifest.json");
  out << m.dump(2) << '\n';
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int run_command(const std::string& command, const fs::path& config, const fs::path& out,
                std::optional<std::uint64_t> seed, bool resume) {
  try {
    CommandContext ctx;
    ctx.command = command;
    ctx.out = out;
    ctx.resume = resume;
    ctx.config_text = read_text(config);
    const RunConfig cfg = parse_run_config(ctx.config_text);
    ctx.seed = seed.value_or(cfg.seed);
    if (resume && command != "autotune") {
      throw ConfigError("--resume is only supported by autotune");
    }
    fs::create_directories(out);
    std::vector<std::string> outputs;
    if (command == "convbench") {
      outputs = cmd_convbench(cfg, ctx);
    } else if (command == "he-curve") {
      outputs = cmd_he_curve(cfg, ctx);
    } else if (command == "momentum-sweep") {
      outputs = cmd_momentum_sweep(cfg, ctx);
    } else if (command == "batch-sweep") {
      outputs = cmd_batch_sweep(cfg, ctx);
    } else if (command == "autotune") {
      outputs = cmd_autotune(cfg, ctx);
    } else if (command == "simulate") {
      outputs = cmd_simulate(cfg, ctx);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
    write_manifest(ctx, outputs);
    return kExitOk;
  } catch (const opt::DivergenceError& e) {
    std::cerr << "omnisim: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "omnisim: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "omnisim: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace omnisim::app
