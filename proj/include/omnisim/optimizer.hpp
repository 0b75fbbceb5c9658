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

// Asynchrony-aware hyperparameter optimizer.
//
// Training time is split into epochs of T simulated seconds. Before each
// epoch a short grid search over (momentum, learning rate) picks the
// configuration for the current number of compute groups; when the best
// explicit momentum is zero the asynchrony is already supplying too much
// implicit momentum, so the number of groups is halved and the search
// repeated. Every probe consumes simulated cluster time, which is charged
// to the run.

#ifndef OMNISIM_OPTIMIZER_HPP_
#define OMNISIM_OPTIMIZER_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "omnisim/async_sim.hpp"
#include "omnisim/cluster_model.hpp"
#include "omnisim/problem.hpp"
#include "omnisim/sgd.hpp"

namespace omnisim::opt {

// Every probe of a search diverged.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GridSpec {
  std::vector<double> momenta{0.0, 0.3, 0.6, 0.9};
  // Learning rates tried per search: eta_last / d for each divisor.
  std::vector<double> lr_divisors{1.0, 10.0};
  // Cold-start synchronous sweep, tried in this order.
  std::vector<double> sweep_etas{0.1, 0.01, 0.001, 0.0001, 0.00001};
  double sweep_momentum = 0.9;
  // Extra momenta tried when a search returns zero momentum.
  std::vector<double> refine_momenta{0.1, 0.2};
  // Empty: powers of two dividing N.
  std::vector<std::size_t> group_candidates;
  double probe_seconds = 5.0;
  double winner_threshold = 0.05;
  // Probe rounds per search, the first included.
  std::size_t max_rounds = 5;

  void validate() const;
};

struct EpochConfig {
  double epoch_seconds = 600.0;
  double cold_start_seconds = 600.0;
  double target_loss = -std::numeric_limits<double>::infinity();
  std::size_t max_epochs = 20;

  void validate(const GridSpec& grid) const;
};

struct ProbeResult {
  sgd::SGDState state;
  // Trailing-window mean of the master loss at the end of the probe;
  // +infinity when it diverged.
  double loss = 0.0;
  bool diverged = false;
  bool reached_target = false;
  double seconds = 0.0;  // simulated time consumed
  std::vector<sgd::LossSample> samples;
};

// Source of probes. Implementations must be deterministic in their
// arguments.
class ProbeEnvironment {
 public:
  virtual ~ProbeEnvironment() = default;
  virtual std::size_t devices() const = 0;
  virtual cluster::PhaseProfile profile() const = 0;
  virtual ProbeResult run(const sgd::SGDState& start, std::size_t g, double mu,
                          double eta, double seconds, std::uint64_t stream,
                          bool stop_at_target) = 0;
  virtual double loss(const sgd::SGDState& state) const = 0;
};

struct SimEnvironmentOptions {
  std::size_t devices = 1;
  cluster::PhaseProfile profile;
  sim::ServiceMode service_mode = sim::ServiceMode::kExponential;
  std::size_t batch = 1;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double target_loss = -std::numeric_limits<double>::infinity();
  std::size_t smoothing_window = sgd::kDefaultSmoothingWindow;
};

// Probes backed by the discrete-event simulator.
class SimEnvironment final : public ProbeEnvironment {
 public:
  SimEnvironment(const sgd::TrainingProblem& problem,
                 const SimEnvironmentOptions& options);

  std::size_t devices() const override { return options_.devices; }
  cluster::PhaseProfile profile() const override { return options_.profile; }
  ProbeResult run(const sgd::SGDState& start, std::size_t g, double mu,
                  double eta, double seconds, std::uint64_t stream,
                  bool stop_at_target) override;
  double loss(const sgd::SGDState& state) const override;

 private:
  const sgd::TrainingProblem& problem_;
  SimEnvironmentOptions options_;
};

// Stream allocation and time accounting shared by every search of a run.
class ProbeSession {
 public:
  explicit ProbeSession(ProbeEnvironment& env, std::uint64_t cursor = 0)
      : env_(env), cursor_(cursor) {}

  ProbeEnvironment& env() { return env_; }
  std::uint64_t next_stream() { return cursor_++; }
  std::uint64_t cursor() const { return cursor_; }

  // All probe time, and the part of it that led to a kept model state.
  double probe_seconds = 0.0;
  double kept_seconds = 0.0;

 private:
  ProbeEnvironment& env_;
  std::uint64_t cursor_;
};

struct SearchResult {
  std::size_t g = 1;
  double mu = 0.0;
  double eta = 0.0;
  sgd::SGDState state;  // end state of the winner's probes
  double loss = 0.0;
  double seconds = 0.0;  // probe time along the winner's chain
  std::size_t rounds = 0;
};

// Tries every (mu, eta) with eta in {eta_last / d} and, at eta == eta_last,
// mu <= mu_last. All points start at `start` and share one stream per
// round. Points within winner_threshold of the best loss are extended for
// another round until one is left or max_rounds is reached, then the lowest
// loss wins (exact ties: lower eta, then lower mu). Throws DivergenceError
// when every point diverges.
SearchResult grid_search(const GridSpec& grid, const sgd::SGDState& start,
                         std::size_t g, double mu_last, double eta_last,
                         ProbeSession& session);

// Same selection over an explicit list of (mu, eta) points.
SearchResult search_points(const GridSpec& grid, const sgd::SGDState& start,
                           std::size_t g,
                           const std::vector<std::pair<double, double>>& points,
                           ProbeSession& session);

// Best of momentum {0} + grid.refine_momenta at fixed eta.
SearchResult refine_zero_momentum(const GridSpec& grid,
                                  const sgd::SGDState& start, std::size_t g,
                                  double eta, ProbeSession& session);

cluster::SaturationChoice init_groups(std::size_t n,
                                      const cluster::PhaseProfile& profile,
                                      const GridSpec& grid = {});

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the cold start
  std::size_t g = 1;
  double mu = 0.0;
  double eta = 0.0;
  double probe_overhead_frac = 0.0;
  double end_loss = 0.0;
  std::string checkpoint;
  double probe_seconds = 0.0;
  double train_seconds = 0.0;
  bool reached_target = false;
};

// Everything needed to continue an optimize run.
struct Checkpoint {
  sgd::SGDState state;
  std::uint64_t seed_cursor = 0;
  std::size_t epoch = 0;
  std::size_t g = 1;
  double mu = 0.0;
  double eta = 0.0;
  double elapsed_s = 0.0;
  double probe_s = 0.0;
  double kept_s = 0.0;
  bool done = false;  // target reached; resuming does nothing

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct ColdStartResult {
  SearchResult choice;
  bool trained = false;
  sgd::SGDState state;  // after the cold-start training period
  double train_seconds = 0.0;
  bool reached_target = false;
  std::vector<sgd::LossSample> samples;
};

// Synchronous learning-rate sweep, one-round per-g grid searches up to
// `max_groups`, a probe-by-probe race between the per-g winners, then
// training of the winner for epochs.cold_start_seconds.
ColdStartResult cold_start(const GridSpec& grid, const EpochConfig& epochs,
                           const sgd::SGDState& start, std::size_t max_groups,
                           ProbeSession& session);

struct OptimizeResult {
  sgd::SGDState final_state;
  std::vector<EpochRecord> log;
  // Training segments only; sim_time_s is the run clock, probes included.
  std::vector<sgd::LossSample> trace;
  bool reached_target = false;
  double elapsed_s = 0.0;
  double probe_s = 0.0;
  double kept_s = 0.0;
  std::uint64_t seed_cursor = 0;

  // Discarded probe time over elapsed time.
  double overhead() const;
};

// Called after every epoch, cold start included, with the trace samples the
// epoch added; returns the checkpoint id recorded in the log.
using EpochHook = std::function<std::string(
    const EpochRecord&, const Checkpoint&, std::span<const sgd::LossSample>)>;

OptimizeResult optimize(ProbeEnvironment& env, const sgd::SGDState& init,
                        const GridSpec& grid, const EpochConfig& epochs,
                        const EpochHook& hook = {},
                        const std::optional<Checkpoint>& resume = std::nullopt,
                        std::optional<std::size_t> initial_groups = std::nullopt);

// `OMNISIM-CKPT v1 dim=<d> t=<t> seed_cursor=<u64>` plus the decision
// context, then W and V one value per line.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// `epoch,g,mu,eta,probe_overhead_frac,end_loss,checkpoint`.
void write_decision_log_header(std::ostream& out);
void write_decision_log_row(std::ostream& out, const EpochRecord& rec);

}  // namespace omnisim::opt

#endif  // OMNISIM_OPTIMIZER_HPP_
