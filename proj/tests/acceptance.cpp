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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Uses the shipped configs under configs/.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fd_check.hpp"
#include "omnisim/async_sim.hpp"
#include "omnisim/commands.hpp"
#include "omnisim/conv.hpp"
#include "omnisim/csv.hpp"
#include "omnisim/optimizer.hpp"
#include "omnisim/problem.hpp"
#include "omnisim/run_config.hpp"

namespace fs = std::filesystem;
using namespace omnisim;

namespace {

const fs::path kConfigs = fs::path(OMNISIM_SOURCE_DIR) / "configs";
const fs::path kWork = fs::temp_directory_path() / "omnisim_acceptance";
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Row = std::map<std::string, std::string>;

std::vector<Row> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  std::string line;
  std::getline(in, line);
  const auto header = csv::split(line);
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv::split(line);
    Row r;
    for (std::size_t i = 0; i < header.size() && i < f.size(); ++i) r[header[i]] = f[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

double num(const Row& r, const std::string& key) { return csv::parse_real(r.at(key)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path run(const std::string& cmd, const std::string& cfg, const std::string& tag,
             bool resume = false) {
  const fs::path out = kWork / tag;
  if (!resume) fs::remove_all(out);
  const int rc = app::run_command(cmd, kConfigs / cfg, out, std::nullopt, resume);
  if (rc != app::kExitOk) {
    throw std::runtime_error(cmd + " on " + cfg + " exited with " + std::to_string(rc));
  }
  return out;
}

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1 ---------------------------------------------------------------------------
Outcome conv_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2026);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::normal_distribution<double> normal;
  double worst = 0.0;
  std::size_t checks = 0;
  for (int s = 0; s < 200; ++s) {
    tensor::ConvSpec spec;
    do {
      spec.n = pick(1, 9);
      spec.k = pick(1, 4);
      spec.stride = pick(1, 3);
      spec.pad = pick(0, 2);
      spec.d_in = pick(1, 4);
      spec.d_out = pick(1, 4);
    } while (spec.k > spec.n + 2 * spec.pad || (spec.n + 2 * spec.pad - spec.k) % spec.stride);
    const std::size_t b = pick(1, 6);
    tensor::Tensor4 data(spec.n, spec.n, spec.d_in, b);
    tensor::Tensor4 kernel(spec.k, spec.k, spec.d_in, spec.d_out);
    for (double& x : data.storage()) x = normal(rng);
    for (double& x : kernel.storage()) x = normal(rng);
    const tensor::Tensor4 ref = tensor::conv_direct(data, kernel, spec);
    double scale = 1e-300;
    for (double x : ref.storage()) scale = std::max(scale, std::abs(x));
    for (std::size_t bp = 1; bp <= b; ++bp) {
      for (std::size_t w : {1, 2, 4}) {
        const tensor::Tensor4 got = tensor::conv_lowered(data, kernel, spec, bp, w);
        double err = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) {
          err = std::max(err, std::abs(got.storage()[i] - ref.storage()[i]));
        }
        worst = std::max(worst, err / scale);
        ++checks;
      }
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst <= 1e-10 && secs < 60,
          std::to_string(checks) + " (spec, b_p, workers) checks, worst rel err " +
              fmt("%.2e", worst) + ", " + fmt("%.1f s", secs)};
}

// 2 ---------------------------------------------------------------------------
Outcome gradients() {
  const sgd::QuadraticProblem q(sgd::QuadraticOptions{10, 50.0, 1.0, 1.0, 1});
  const sgd::LogisticProblem l(sgd::LogisticOptions{500, 10, 0.05, 2});
  const sgd::TinyCnnProblem c(sgd::TinyCnnOptions{8, 3, 48, 3});
  const double eq = testing_util::worst_fd_error(q, 20, 101, 4);
  const double el = testing_util::worst_fd_error(l, 20, 102, 8);
  const double ec = testing_util::worst_fd_error(c, 20, 103, 4);
  return {std::max({eq, el, ec}) <= 1e-4,
          "worst rel err quadratic " + fmt("%.1e", eq) + ", logistic " + fmt("%.1e", el) +
              ", tiny_cnn " + fmt("%.1e", ec)};
}

// 3 ---------------------------------------------------------------------------
Outcome he_model() {
  const auto t0 = std::chrono::steady_clock::now();
  double det = 0.0;
  double exp = 0.0;
  std::string detail;
  for (const char* name : {"conv_bound", "fc_saturated", "balanced"}) {
    const fs::path out = run("he-curve", std::string("he_curve_") + name + ".json",
                             std::string("he_") + name);
    double d = 0.0;
    double e = 0.0;
    const auto rows = read_csv(out / "he_curve.csv");
    for (const Row& r : rows) {
      d = std::max(d, num(r, "rel_err_det"));
      e = std::max(e, num(r, "rel_err_exp"));
    }
    if (rows.size() != 6) d = kInf;
    det = std::max(det, d);
    exp = std::max(exp, e);
    detail += std::string(detail.empty() ? "" : "; ") + name + " det " + fmt("%.1e", d) +
              " exp " + fmt("%.3f", e);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {det <= 0.02 && exp <= 0.10 && secs < 60, detail + fmt(", %.1f s", secs)};
}

// 4 ---------------------------------------------------------------------------
Outcome staleness() {
  const sgd::QuadraticProblem p(sgd::QuadraticOptions{4, 4.0, 0.1, 1.0, 0});
  bool ok = true;
  std::string detail;
  for (const cluster::PhaseProfile prof :
       {cluster::PhaseProfile{1.0, 0.0, 0.01}, cluster::PhaseProfile{0.24, 0.0, 0.1},
        cluster::PhaseProfile{0.16, 0.032, 0.01}}) {
    for (std::size_t g : {1, 2, 4, 8}) {
      sim::SimConfig c;
      c.plan = cluster::ExecutionPlan(32, g);
      c.profile = prof;
      c.problem = &p;
      c.hp = {1e-4, 0.0, 0.0, 1};
      c.max_updates = 10000;
      c.seed = 40 + g;
      c.service_mode = sim::ServiceMode::kDeterministic;
      const auto d = sim::staleness_stats(sim::simulate(c), sim::kDefaultBurnIn);
      const bool exact = d.histogram.size() == 1 && d.histogram.begin()->first == g - 1;
      c.service_mode = sim::ServiceMode::kExponential;
      const double mean = sim::staleness_stats(sim::simulate(c), sim::kDefaultBurnIn).mean;
      ok = ok && exact && std::abs(mean - static_cast<double>(g - 1)) <= 0.5;
      if (prof.t_fc == 0.01 && prof.t_conv_network == 0.0) {
        detail += std::string(detail.empty() ? "" : ", ") + "g=" + std::to_string(g) +
                  (exact ? " exact" : " NOT exact") + fmt(" exp mean %.2f", mean);
      }
    }
  }
  return {ok, detail + " (3 profiles checked)"};
}

// 5, 6, 7 share the shipped momentum sweep.
std::vector<Row> momentum_rows() {
  static std::vector<Row> rows;
  if (rows.empty()) rows = read_csv(run("momentum-sweep", "momentum_sweep.json", "ms") /
                                    "momentum_sweep.csv");
  return rows;
}

Outcome implicit_momentum() {
  const auto rows = momentum_rows();
  const auto cfg = app::load_run_config(kConfigs / "momentum_sweep.json");
  bool ok = cfg.momentum_sweep.estimator.runs >= 50;
  double prev = -kInf;
  std::string detail;
  for (const Row& r : rows) {
    const double g = num(r, "g");
    if (g > 16) continue;
    const double est = num(r, "implicit_momentum");
    ok = ok && std::abs(est - (1.0 - 1.0 / g)) <= 0.1 && est > prev;
    prev = est;
    detail += std::string(detail.empty() ? "" : ", ") + "g=" + r.at("g") + fmt(" %.3f", est);
  }
  return {ok, detail + " (" + std::to_string(cfg.momentum_sweep.estimator.runs) + " runs each)"};
}

Outcome momentum_monotone() {
  bool ok = true;
  double prev = kInf;
  std::string detail;
  for (const Row& r : momentum_rows()) {
    const double mu = num(r, "mu_star");
    ok = ok && std::isfinite(mu) && mu <= prev;
    prev = mu;
    detail += std::string(detail.empty() ? "" : ", ") + "g=" + r.at("g") + " mu*=" + r.at("mu_star");
  }
  return {ok, detail};
}

Outcome tradeoff_curve() {
  const auto rows = momentum_rows();
  const auto cfg = app::load_run_config(kConfigs / "momentum_sweep.json");
  const auto prof = cfg.resolved_profile();
  const std::size_t n = cfg.cluster.n_conv_devices;
  bool saturating = false;
  for (std::size_t g : cluster::power_of_two_divisors(n)) {
    saturating = saturating || cluster::fc_saturated(cluster::ExecutionPlan(n, g), prof);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (num(rows[i], "total_time_s") < num(rows[best], "total_time_s")) best = i;
  }
  const double g = num(rows[best], "g");
  const double speedup = num(rows[0], "total_time_s") / num(rows[best], "total_time_s");
  return {saturating && g > 1 && g < static_cast<double>(n) && speedup >= 2.0,
          "argmin g=" + rows[best].at("g") + fmt(", %.2fx faster than sync", speedup) +
              (saturating ? ", profile saturates FC" : ", profile never saturates FC")};
}

// 8 ---------------------------------------------------------------------------
struct Scenario {
  double ratio = kInf;
  double overhead = kInf;
  bool reached = false;
  std::string oracle;
};

Scenario scenario(const std::string& name) {
  const std::string file = "autotune_" + name + ".json";
  const fs::path out = run("autotune", file, "at_" + name);
  const Row sum = read_csv(out / "autotune_summary.csv").at(0);
  Scenario s;
  s.reached = sum.at("reached_target") == "true";
  s.overhead = num(sum, "probe_overhead_frac");
  if (!s.reached) return s;
  const double elapsed = num(sum, "elapsed_s");

  // Exhaustive grid from the same start and seed: every g, grid momentum and
  // learning-rate decade, trained straight to the target.
  const auto cfg = app::load_run_config(kConfigs / file);
  const auto problem = app::make_problem(cfg.problem);
  opt::SimEnvironmentOptions eo;
  eo.devices = cfg.cluster.n_conv_devices;
  eo.profile = cfg.resolved_profile();
  eo.service_mode = cfg.sim.service_mode;
  eo.batch = cfg.sim.batch;
  eo.lambda = cfg.sim.lambda;
  eo.seed = cfg.seed;
  eo.target_loss = cfg.epochs.target_loss;
  eo.smoothing_window = cfg.sim.smoothing_window;
  opt::SimEnvironment env(*problem, eo);
  const sgd::SGDState init(problem->initial_weights());
  double best = kInf;
  for (std::size_t g : cluster::power_of_two_divisors(eo.devices)) {
    for (double mu : cfg.grid.momenta) {
      for (double eta = 0.1; eta > 5e-7; eta /= 10) {
        const auto r = env.run(init, g, mu, eta, 2 * elapsed, 0, true);
        if (r.reached_target && r.seconds < best) {
          best = r.seconds;
          s.oracle = "g=" + std::to_string(g) + fmt(" mu=%.1f", mu) + fmt(" eta=%.0e", eta);
        }
      }
    }
  }
  // No grid point within twice the optimizer's time: the ratio is below 0.5.
  s.ratio = best < kInf ? elapsed / best : 0.5;
  if (!(best < kInf)) s.oracle = "none within 2x";
  return s;
}

Outcome near_optimality() {
  bool ok = true;
  std::string detail;
  for (const char* name : {"conv_bound", "fc_saturated", "balanced"}) {
    const Scenario s = scenario(name);
    const bool pass = s.reached && s.ratio <= 1.5 && s.overhead <= 0.15;
    ok = ok && pass;
    detail += std::string(detail.empty() ? "" : "; ") + name +
              (s.reached ? fmt(" ratio %.2f", s.ratio) + fmt(" overhead %.3f", s.overhead) +
                               " (oracle " + s.oracle + ")"
                         : std::string(" target not reached"));
  }
  return {ok, detail};
}

// 9 ---------------------------------------------------------------------------
Outcome batch_effect() {
  const auto rows = read_csv(run("batch-sweep", "batch_sweep.json", "bs") / "batch_sweep.csv");
  const auto cfg = app::load_run_config(kConfigs / "batch_sweep.json");
  const double cap = *std::max_element(cfg.batch_sweep.etas.begin(), cfg.batch_sweep.etas.end());
  const Row& first = rows.front();
  const Row& last = rows.back();
  const double ratio = num(last, "epochs_to_target") / num(first, "epochs_to_target");
  const bool capped = num(last, "eta_star") == cap;
  return {capped && ratio >= 2.0,
          "b=" + first.at("b") + " " + first.at("epochs_to_target") + " epochs, b=" +
              last.at("b") + " " + last.at("epochs_to_target") + " epochs" +
              fmt(" (%.1fx)", ratio) + (capped ? ", eta* at grid cap" : ", eta* below cap")};
}

// 10 --------------------------------------------------------------------------
std::string strip_seconds(const std::string& convbench) {
  std::istringstream is(convbench);
  std::string out;
  for (std::string line; std::getline(is, line);) {
    auto f = csv::split(line);
    if (f.size() == 4) f[2] = "";
    for (const auto& x : f) out += x + ",";
    out += "\n";
  }
  return out;
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  }
  for (const auto& f : files) {
    std::string x = slurp(a / f);
    std::string y = slurp(b / f);
    if (f == "convbench.csv") {
      x = strip_seconds(x);
      y = strip_seconds(y);
    }
    if (x != y) {
      why = f.string();
      return false;
    }
  }
  return !files.empty();
}

Outcome determinism() {
  bool ok = true;
  std::string bad;
  const std::vector<std::pair<std::string, std::string>> cmds{
      {"convbench", "convbench.json"},        {"he-curve", "he_curve_balanced.json"},
      {"momentum-sweep", "momentum_sweep.json"}, {"batch-sweep", "batch_sweep.json"},
      {"simulate", "simulate.json"},          {"autotune", "autotune_fc_saturated.json"}};
  for (const auto& [cmd, cfg] : cmds) {
    const fs::path a = run(cmd, cfg, "det_a");
    const fs::path b = run(cmd, cfg, "det_b");
    std::string why;
    if (!same_tree(a, b, why)) {
      ok = false;
      bad += " " + cmd + ":" + why;
    }
  }

  // Resume: keep checkpoints up to epoch 1, then continue.
  const fs::path full = run("autotune", "autotune_fc_saturated.json", "res_full");
  const fs::path cut = kWork / "res_cut";
  fs::remove_all(cut);
  fs::copy(full, cut, fs::copy_options::recursive);
  std::size_t removed = 0;
  for (const auto& e : fs::directory_iterator(cut / "checkpoints")) {
    const std::string name = e.path().filename().string();
    if (name > "ckpt_epoch_0001.txt") {
      fs::remove(e.path());
      ++removed;
    }
  }
  run("autotune", "autotune_fc_saturated.json", "res_cut", true);
  std::string why;
  const bool resumed = removed > 0 && same_tree(full / "checkpoints", cut / "checkpoints", why) &&
                       slurp(full / "loss_trace.csv") == slurp(cut / "loss_trace.csv") &&
                       slurp(full / "decision_log.csv") == slurp(cut / "decision_log.csv");
  return {ok && resumed, std::string("6 commands rerun") + (ok ? " identical" : " differ:" + bad) +
                             "; resume after epoch 1 (" + std::to_string(removed) +
                             " checkpoints dropped) " + (resumed ? "bit-identical" : "differs")};
}

}  // namespace

int main() {
  fs::create_directories(kWork);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"conv lowering matches direct convolution", conv_oracle},
      {"finite-difference gradient checks", gradients},
      {"HE model vs simulation", he_model},
      {"staleness law", staleness},
      {"implicit momentum 1-1/g", implicit_momentum},
      {"optimal momentum non-increasing in g", momentum_monotone},
      {"tradeoff curve minimum at intermediate g", tradeoff_curve},
      {"optimizer near-optimality and overhead", near_optimality},
      {"batch size increases epochs to target", batch_effect},
      {"determinism and resume", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %zu (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  fs::remove_all(kWork);
  return failed == 0 ? 0 : 1;
}
