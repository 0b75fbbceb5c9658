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

#ifndef OMNISIM_SGD_HPP_
#define OMNISIM_SGD_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "omnisim/problem.hpp"

namespace omnisim::sgd {

struct SGDState {
  std::vector<double> w;
  std::vector<double> v;
  std::uint64_t t = 0;

  SGDState() = default;
  explicit SGDState(std::vector<double> weights)
      : w(std::move(weights)), v(w.size(), 0.0) {}

  bool finite() const;
  friend bool operator==(const SGDState&, const SGDState&) = default;
};

struct Hyperparams {
  double eta = 0.01;
  double mu = 0.0;
  double lambda = 0.0;
  std::size_t batch = 1;

  void validate() const;
};

// V' = mu V - eta (gradient + lambda w_for_reg); W' = W + V'; t' = t + 1.
SGDState sgd_step(const SGDState& state, const Hyperparams& hp,
                  std::span<const double> gradient,
                  std::span<const double> w_for_reg);
void sgd_step_inplace(SGDState& state, const Hyperparams& hp,
                      std::span<const double> gradient,
                      std::span<const double> w_for_reg);

// One update whose gradient (and regularizer) is evaluated at `w_read`, a
// possibly older snapshot of the model.
SGDState stale_step(const SGDState& state, const Hyperparams& hp,
                    const TrainingProblem& problem,
                    std::span<const double> w_read, const Batch& batch);
void stale_step_inplace(SGDState& state, const Hyperparams& hp,
                        const TrainingProblem& problem,
                        std::span<const double> w_read, const Batch& batch);

struct LossSample {
  std::uint64_t step = 0;
  double sim_time = 0.0;
  double loss = 0.0;

  friend bool operator==(const LossSample&, const LossSample&) = default;
};

struct LossTrace {
  std::vector<LossSample> samples;
  bool diverged = false;
  bool reached_target = false;
  SGDState final_state;
};

struct SyncStop {
  double target_loss = -std::numeric_limits<double>::infinity();
  std::uint64_t max_steps = 1000;
  std::uint64_t sample_every = 1;
  // Simulated seconds charged per step (the sim_time_s column).
  double seconds_per_step = 1.0;
  std::size_t smoothing_window = 50;
};

inline constexpr std::size_t kDefaultSmoothingWindow = 50;
inline constexpr double kDivergenceFactor = 1e6;

// True when `loss` is non-finite or exceeds kDivergenceFactor times the
// initial loss.
bool is_divergent(double loss, double initial_loss);

// Synchronous momentum SGD from `init`. Batches come from the stream
// derive_seed(seed, kBatchStream). The run stops when the trailing-window
// mean loss reaches stop.target_loss, after stop.max_steps, or on
// divergence (flagged, not thrown).
LossTrace run_sync(const TrainingProblem& problem, const Hyperparams& hp,
                   const SGDState& init, const SyncStop& stop,
                   std::uint64_t seed);

// Step of the first sample whose trailing mean over `window` samples is
// <= target; nullopt when never reached.
std::optional<std::uint64_t> iterations_to_loss(
    std::span<const LossSample> samples, double target,
    std::size_t window = kDefaultSmoothingWindow);
std::optional<std::uint64_t> iterations_to_loss(
    const LossTrace& trace, double target,
    std::size_t window = kDefaultSmoothingWindow);

// Incremental trailing mean used by the trainers for early stopping.
class TrailingMean {
 public:
  explicit TrailingMean(std::size_t window) : window_(window) {}
  double push(double value);
  double mean() const;
  std::size_t count() const { return values_.size() < window_ ? values_.size() : window_; }

 private:
  std::size_t window_;
  std::vector<double> values_;
  std::size_t head_ = 0;
};

// CSV with header `step,sim_time_s,loss`.
void write_loss_trace_csv(std::ostream& out, std::span<const LossSample> samples);
// Rows only, for appending to an existing file.
void write_loss_trace_rows(std::ostream& out, std::span<const LossSample> samples);

}  // namespace omnisim::sgd

#endif  // OMNISIM_SGD_HPP_
