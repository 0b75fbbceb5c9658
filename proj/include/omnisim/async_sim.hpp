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

// Discrete-event simulator of g compute groups feeding one serial FC server
// that also owns the model (merged FC).
//
// Each group loops: read a snapshot of the master model, draw a batch, run
// the conv phase (one service delay), join the FIFO queue of the FC server,
// and when its FC service completes apply one momentum-SGD update to the
// master using the gradient at its snapshot. The group then re-reads the
// model and starts again. Asynchrony is logical: the event loop is
// single-threaded and every run is a deterministic function of its config.

#ifndef OMNISIM_ASYNC_SIM_HPP_
#define OMNISIM_ASYNC_SIM_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "omnisim/cluster_model.hpp"
#include "omnisim/problem.hpp"
#include "omnisim/sgd.hpp"

namespace omnisim::sim {

enum class ServiceMode { kDeterministic, kExponential };

struct SimConfig {
  cluster::ExecutionPlan plan{1, 1};
  cluster::PhaseProfile profile;
  sgd::Hyperparams hp;
  const sgd::TrainingProblem* problem = nullptr;
  ServiceMode service_mode = ServiceMode::kDeterministic;
  // At least one limit must be set; zero means "no limit".
  std::uint64_t max_updates = 0;
  double max_sim_seconds = 0.0;
  std::uint64_t seed = 0;
  // Starting state; the problem's initial weights with zero velocity when
  // absent.
  std::optional<sgd::SGDState> init;
  // Stop once the trailing-window mean of the master loss reaches this.
  double target_loss = -std::numeric_limits<double>::infinity();
  std::size_t smoothing_window = sgd::kDefaultSmoothingWindow;
  // Keep W^(t) after every update (needed by the momentum estimator).
  bool record_weights = false;

  void validate() const;
};

struct SimEvent {
  std::size_t group_id = 0;
  std::uint64_t read_step = 0;   // master update count at the snapshot
  std::uint64_t write_step = 0;  // master update count after this write
  std::uint64_t staleness = 0;   // other updates between read and write
  double start_time = 0.0;
  double fc_enqueue_time = 0.0;
  double fc_start_time = 0.0;
  double finish_time = 0.0;
  double loss = 0.0;             // master loss after the write

  friend bool operator==(const SimEvent&, const SimEvent&) = default;
};

struct SimTrace {
  std::vector<SimEvent> events;
  std::vector<sgd::LossSample> loss;  // (write_step, sim time, master loss)
  sgd::SGDState final_state;
  bool diverged = false;
  bool reached_target = false;
  // Simulated time covered by the run: the time limit when it was hit,
  // otherwise the time of the last write.
  double end_time = 0.0;
  // W^(0), W^(1), ... when SimConfig::record_weights is set.
  std::vector<std::vector<double>> weights;

  friend bool operator==(const SimTrace&, const SimTrace&) = default;
};

SimTrace simulate(const SimConfig& cfg);

inline constexpr std::size_t kDefaultBurnIn = 100;

// Mean interval between consecutive writes after the first `burn_in` writes.
double measured_he(const SimTrace& trace, std::size_t burn_in = kDefaultBurnIn);

struct StalenessStats {
  double mean = 0.0;
  std::map<std::uint64_t, std::uint64_t> histogram;
  std::uint64_t count = 0;
};

StalenessStats staleness_stats(const SimTrace& trace, std::size_t burn_in = 0);

struct MomentumEstimate {
  double momentum = 0.0;  // coefficient on V^(t)
  double step = 0.0;      // coefficient on -grad(W^(t))
  std::size_t triples = 0;
};

inline constexpr std::size_t kMinMomentumTriples = 1000;

// Least-squares fit of V^(t+1) = a V^(t) - c grad(W^(t)) on the master
// sequence, where each quantity is first averaged over `n_runs` seeded runs
// (seeds derived from cfg.seed) so the fit targets the expected update.
// Requires cfg.hp.mu == 0 and a finite update budget.
MomentumEstimate estimate_implicit_momentum(const SimConfig& cfg,
                                            std::size_t n_runs);

struct SeGrid {
  std::vector<double> momenta{0.0, 0.3, 0.6, 0.9};
  std::vector<double> etas{0.1, 0.01, 0.001};
  std::size_t batch = 1;
  double lambda = 0.0;
};

struct SeCurveOptions {
  ServiceMode service_mode = ServiceMode::kExponential;
  // Update cap for one run; a run that hits it without the target counts as
  // not converging.
  std::uint64_t max_updates = 20000;
  // Paired seeds per grid point; iterations are averaged over them.
  std::size_t n_seeds = 1;
  // Writes used to measure HE for each plan.
  std::uint64_t he_updates = 2000;
  std::size_t smoothing_window = sgd::kDefaultSmoothingWindow;
  std::optional<sgd::SGDState> init;
};

struct SeCurveRow {
  std::size_t g = 1;
  std::size_t k = 1;
  double mu = 0.0;
  double eta = 0.0;
  // Mean iterations to the target; infinity when no grid point converged.
  double iterations = 0.0;
  double he = 0.0;          // measured seconds per iteration
  double total_time = 0.0;  // iterations * he
  double p_se = 1.0;        // iterations relative to the first plan
  double p_he = 1.0;        // he relative to the first plan
};

// Statistical and hardware efficiency per plan. For each plan the grid point
// with the fewest mean iterations to `target_loss` wins (ties: lower eta,
// then lower mu). Every grid point of every plan uses the same seeds.
std::vector<SeCurveRow> se_curve(const sgd::TrainingProblem& problem,
                                 const cluster::PhaseProfile& profile,
                                 const SeGrid& grid,
                                 const std::vector<cluster::ExecutionPlan>& plans,
                                 double target_loss, std::uint64_t seed,
                                 const SeCurveOptions& options = {});

// `g,k,mu,eta,iterations,he_s_per_iter,total_time_s,p_se,p_he`.
void write_se_curve_csv(std::ostream& out, const std::vector<SeCurveRow>& rows);

// Trace CSV: `write_step,group_id,read_step,staleness,start_s,finish_s,loss`.
void write_trace_csv(std::ostream& out, const SimTrace& trace);

}  // namespace omnisim::sim

#endif  // OMNISIM_ASYNC_SIM_HPP_
