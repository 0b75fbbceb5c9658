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

#include "omnisim/async_sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

#include "omnisim/csv.hpp"
#include "omnisim/rng.hpp"

namespace omnisim::sim {

void SimConfig::validate() const {
  if (problem == nullptr) throw std::invalid_argument("simulate: no problem");
  profile.validate();
  hp.validate();
  if (max_updates == 0 && !(max_sim_seconds > 0.0)) {
    throw std::invalid_argument(
        "simulate: set max_updates or max_sim_seconds");
  }
  if (init && (init->w.size() != problem->dim() ||
               init->v.size() != problem->dim())) {
    throw std::invalid_argument("simulate: initial state has wrong dimension");
  }
}

namespace {

struct GroupState {
  std::vector<double> snapshot;
  std::uint64_t read_step = 0;
  sgd::Batch batch;
  double start_time = 0.0;
  double conv_end = 0.0;
  double enqueue_time = 0.0;
  bool in_conv = false;
  Rng service_rng;
};

class EventLoop {
 public:
  explicit EventLoop(const SimConfig& cfg)
      : cfg_(cfg),
        problem_(*cfg.problem),
        conv_mean_(cluster::t_conv(cfg.plan.group_size(), cfg.profile)),
        batch_rng_(derive_seed(cfg.seed, kBatchStream)),
        smooth_(cfg.smoothing_window) {}

  SimTrace run() {
    master_ = cfg_.init ? *cfg_.init : sgd::SGDState(problem_.initial_weights());
    initial_loss_ = problem_.full_loss(master_.w);
    trace_.loss.push_back({master_.t, 0.0, initial_loss_});
    smooth_.push(initial_loss_);
    if (cfg_.record_weights) trace_.weights.push_back(master_.w);

    const std::size_t g = cfg_.plan.groups();
    groups_.resize(g);
    for (std::size_t i = 0; i < g; ++i) {
      groups_[i].service_rng.seed(derive_seed(cfg_.seed, kServiceStreamBase + i));
    }
    for (std::size_t i = 0; i < g; ++i) start_group(i, 0.0);

    const bool time_limited = cfg_.max_sim_seconds > 0.0;
    bool done = false;
    while (!done) {
      std::size_t next_conv = g;
      for (std::size_t i = 0; i < g; ++i) {
        if (groups_[i].in_conv &&
            (next_conv == g || groups_[i].conv_end < groups_[next_conv].conv_end)) {
          next_conv = i;
        }
      }
      const bool fc_next =
          fc_busy_ && (next_conv == g || fc_end_ <= groups_[next_conv].conv_end);
      const double now = fc_next ? fc_end_ : groups_[next_conv].conv_end;
      if (time_limited && now > cfg_.max_sim_seconds) {
        trace_.end_time = cfg_.max_sim_seconds;
        break;
      }
      if (fc_next) {
        done = finish_fc(now);
      } else {
        arrive_fc(next_conv, now);
      }
    }
    trace_.final_state = std::move(master_);
    return std::move(trace_);
  }

 private:
  double draw(Rng& rng, double mean) {
    if (cfg_.service_mode == ServiceMode::kDeterministic || mean <= 0.0) {
      return mean;
    }
    std::exponential_distribution<double> exp(1.0 / mean);
    return exp(rng);
  }

  void start_group(std::size_t i, double now) {
    GroupState& grp = groups_[i];
    grp.snapshot = master_.w;
    grp.read_step = master_.t;
    grp.batch = problem_.sample_batch(batch_rng_, cfg_.hp.batch);
    grp.start_time = now;
    grp.conv_end = now + draw(grp.service_rng, conv_mean_);
    grp.in_conv = true;
  }

  void start_service(std::size_t i, double now) {
    fc_busy_ = true;
    fc_group_ = i;
    fc_start_ = now;
    fc_end_ = now + draw(groups_[i].service_rng, cfg_.profile.t_fc);
  }

  void arrive_fc(std::size_t i, double now) {
    GroupState& grp = groups_[i];
    grp.in_conv = false;
    grp.enqueue_time = now;
    if (fc_busy_) {
      fc_queue_.push_back(i);
    } else {
      start_service(i, now);
    }
  }

  // Returns true when the run should stop.
  bool finish_fc(double now) {
    const std::size_t i = fc_group_;
    GroupState& grp = groups_[i];
    fc_busy_ = false;

    SimEvent ev;
    ev.group_id = i;
    ev.read_step = grp.read_step;
    ev.staleness = master_.t - grp.read_step;
    ev.start_time = grp.start_time;
    ev.fc_enqueue_time = grp.enqueue_time;
    ev.fc_start_time = fc_start_;
    ev.finish_time = now;

    sgd::stale_step_inplace(master_, cfg_.hp, problem_, grp.snapshot, grp.batch);
    ev.write_step = master_.t;
    ev.loss = problem_.full_loss(master_.w);
    trace_.events.push_back(ev);
    trace_.loss.push_back({master_.t, now, ev.loss});
    trace_.end_time = now;
    if (cfg_.record_weights) trace_.weights.push_back(master_.w);

    if (sgd::is_divergent(ev.loss, initial_loss_) || !master_.finite()) {
      trace_.diverged = true;
      return true;
    }
    if (smooth_.push(ev.loss) <= cfg_.target_loss) {
      trace_.reached_target = true;
      return true;
    }
    if (cfg_.max_updates > 0 && trace_.events.size() >= cfg_.max_updates) {
      return true;
    }

    start_group(i, now);
    if (!fc_queue_.empty()) {
      const std::size_t next = fc_queue_.front();
      fc_queue_.pop_front();
      start_service(next, now);
    }
    return false;
  }

  const SimConfig& cfg_;
  const sgd::TrainingProblem& problem_;
  double conv_mean_;
  Rng batch_rng_;
  sgd::TrailingMean smooth_;
  sgd::SGDState master_;
  double initial_loss_ = 0.0;
  std::vector<GroupState> groups_;
  std::deque<std::size_t> fc_queue_;
  bool fc_busy_ = false;
  std::size_t fc_group_ = 0;
  double fc_start_ = 0.0;
  double fc_end_ = 0.0;
  SimTrace trace_;
};

}  // namespace

SimTrace simulate(const SimConfig& cfg) {
  cfg.validate();
  return EventLoop(cfg).run();
}

double measured_he(const SimTrace& trace, std::size_t burn_in) {
  const std::size_t n = trace.events.size();
  if (n <= burn_in) {
    throw std::invalid_argument("measured_he: trace has " + std::to_string(n) +
                                " writes, burn-in is " + std::to_string(burn_in));
  }
  const double begin = burn_in == 0 ? 0.0 : trace.events[burn_in - 1].finish_time;
  return (trace.events.back().finish_time - begin) /
         static_cast<double>(n - burn_in);
}

StalenessStats staleness_stats(const SimTrace& trace, std::size_t burn_in) {
  if (trace.events.size() <= burn_in) {
    throw std::invalid_argument("staleness_stats: not enough events");
  }
  StalenessStats stats;
  double total = 0.0;
  for (std::size_t i = burn_in; i < trace.events.size(); ++i) {
    const std::uint64_t s = trace.events[i].staleness;
    ++stats.histogram[s];
    total += static_cast<double>(s);
    ++stats.count;
  }
  stats.mean = total / static_cast<double>(stats.count);
  return stats;
}

MomentumEstimate estimate_implicit_momentum(const SimConfig& cfg,
                                            std::size_t n_runs) {
  if (cfg.hp.mu != 0.0) {
    throw std::invalid_argument("estimate_implicit_momentum: requires mu == 0");
  }
  if (cfg.max_updates == 0) {
    throw std::invalid_argument(
        "estimate_implicit_momentum: requires max_updates");
  }
  if (n_runs == 0) {
    throw std::invalid_argument("estimate_implicit_momentum: n_runs must be >= 1");
  }
  const sgd::TrainingProblem& problem = *cfg.problem;
  const std::size_t dim = problem.dim();

  // Run-averaged W^(t) and grad(W^(t)).
  std::vector<std::vector<double>> mean_w;
  std::vector<std::vector<double>> mean_g;
  std::size_t steps = std::numeric_limits<std::size_t>::max();
  for (std::size_t r = 0; r < n_runs; ++r) {
    SimConfig run_cfg = cfg;
    run_cfg.seed = derive_seed(cfg.seed, 0x7000 + r);
    run_cfg.record_weights = true;
    const SimTrace trace = simulate(run_cfg);
    steps = std::min(steps, trace.weights.size());
    if (mean_w.empty()) {
      mean_w.assign(trace.weights.size(), std::vector<double>(dim, 0.0));
      mean_g.assign(trace.weights.size(), std::vector<double>(dim, 0.0));
    }
    for (std::size_t t = 0; t < std::min(steps, mean_w.size()); ++t) {
      const std::vector<double> grad = problem.full_grad(trace.weights[t]);
      for (std::size_t i = 0; i < dim; ++i) {
        mean_w[t][i] += trace.weights[t][i];
        mean_g[t][i] += grad[i];
      }
    }
  }
  // Triples (V^(t), V^(t+1), grad W^(t)) need W^(t-1) .. W^(t+1).
  if (steps < 3 || (steps - 2) * dim < kMinMomentumTriples) {
    throw std::runtime_error(
        "estimate_implicit_momentum: insufficient samples (" +
        std::to_string(steps < 3 ? 0 : (steps - 2) * dim) + " triples, need " +
        std::to_string(kMinMomentumTriples) + ")");
  }
  const double inv = 1.0 / static_cast<double>(n_runs);
  // Normal equations for y = a x + c z with z = -grad.
  double sxx = 0, sxz = 0, szz = 0, sxy = 0, szy = 0;
  std::size_t triples = 0;
  for (std::size_t t = 1; t + 1 < steps; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double x = (mean_w[t][i] - mean_w[t - 1][i]) * inv;
      const double y = (mean_w[t + 1][i] - mean_w[t][i]) * inv;
      const double z = -mean_g[t][i] * inv;
      sxx += x * x;
      sxz += x * z;
      szz += z * z;
      sxy += x * y;
      szy += z * y;
      ++triples;
    }
  }
  const double det = sxx * szz - sxz * sxz;
  if (!(std::abs(det) > 0.0)) {
    throw std::runtime_error("estimate_implicit_momentum: singular regression");
  }
  MomentumEstimate est;
  est.momentum = (sxy * szz - szy * sxz) / det;
  est.step = (szy * sxx - sxy * sxz) / det;
  est.triples = triples;
  return est;
}

std::vector<SeCurveRow> se_curve(const sgd::TrainingProblem& problem,
                                 const cluster::PhaseProfile& profile,
                                 const SeGrid& grid,
                                 const std::vector<cluster::ExecutionPlan>& plans,
                                 double target_loss, std::uint64_t seed,
                                 const SeCurveOptions& options) {
  if (plans.empty()) throw std::invalid_argument("se_curve: no plans");
  if (grid.momenta.empty() || grid.etas.empty()) {
    throw std::invalid_argument("se_curve: empty grid");
  }
  if (options.n_seeds == 0) throw std::invalid_argument("se_curve: n_seeds must be >= 1");
  for (const cluster::ExecutionPlan& plan : plans) {
    if (plan.devices() != plans.front().devices()) {
      throw std::invalid_argument("se_curve: plans must share N");
    }
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<SeCurveRow> rows;
  for (const cluster::ExecutionPlan& plan : plans) {
    SimConfig cfg;
    cfg.plan = plan;
    cfg.profile = profile;
    cfg.problem = &problem;
    cfg.service_mode = options.service_mode;
    cfg.init = options.init;
    cfg.smoothing_window = options.smoothing_window;
    cfg.hp.batch = grid.batch;
    cfg.hp.lambda = grid.lambda;

    SeCurveRow row;
    row.g = plan.groups();
    row.k = plan.group_size();
    row.iterations = inf;
    row.mu = std::numeric_limits<double>::quiet_NaN();
    row.eta = std::numeric_limits<double>::quiet_NaN();
    for (double eta : grid.etas) {
      for (double mu : grid.momenta) {
        cfg.hp.eta = eta;
        cfg.hp.mu = mu;
        cfg.max_updates = options.max_updates;
        cfg.target_loss = target_loss;
        double total = 0.0;
        for (std::size_t s = 0; s < options.n_seeds && total < inf; ++s) {
          cfg.seed = derive_seed(seed, s);
          const SimTrace trace = simulate(cfg);
          if (!trace.reached_target) {
            total = inf;
          } else {
            const std::uint64_t start = cfg.init ? cfg.init->t : 0;
            total += static_cast<double>(trace.final_state.t - start);
          }
        }
        const double mean = total / static_cast<double>(options.n_seeds);
        const bool better =
            mean < row.iterations ||
            (mean == row.iterations && mean < inf &&
             (eta < row.eta || (eta == row.eta && mu < row.mu)));
        if (better) {
          row.iterations = mean;
          row.eta = eta;
          row.mu = mu;
        }
      }
    }
    // HE does not depend on the hyperparameters; use the most conservative.
    cfg.hp.eta = *std::min_element(grid.etas.begin(), grid.etas.end());
    cfg.hp.mu = 0.0;
    cfg.max_updates = options.he_updates;
    cfg.target_loss = -inf;
    cfg.seed = derive_seed(seed, options.n_seeds);
    const SimTrace he_trace = simulate(cfg);
    row.he = measured_he(he_trace,
                         std::min<std::size_t>(kDefaultBurnIn, he_trace.events.size() / 2));
    row.total_time = row.iterations * row.he;
    rows.push_back(row);
  }
  for (SeCurveRow& row : rows) {
    row.p_se = row.iterations / rows.front().iterations;
    row.p_he = row.he / rows.front().he;
  }
  return rows;
}

void write_se_curve_csv(std::ostream& out, const std::vector<SeCurveRow>& rows) {
  out << "g,k,mu,eta,iterations,he_s_per_iter,total_time_s,p_se,p_he\n";
  for (const SeCurveRow& r : rows) {
    out << r.g << ',' << r.k << ',' << csv::real(r.mu) << ',' << csv::real(r.eta)
        << ',' << csv::real(r.iterations) << ',' << csv::seconds(r.he) << ','
        << csv::seconds(r.total_time) << ',' << csv::real(r.p_se) << ','
        << csv::real(r.p_he) << '\n';
  }
}

void write_trace_csv(std::ostream& out, const SimTrace& trace) {
  out << "write_step,group_id,read_step,staleness,start_s,finish_s,loss\n";
  for (const SimEvent& e : trace.events) {
    out << e.write_step << ',' << e.group_id << ',' << e.read_step << ','
        << e.staleness << ',' << csv::seconds(e.start_time) << ','
        << csv::seconds(e.finish_time) << ',' << csv::real(e.loss) << '\n';
  }
}

}  // namespace omnisim::sim
