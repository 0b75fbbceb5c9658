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

#include "omnisim/sgd.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "omnisim/csv.hpp"
#include "omnisim/rng.hpp"

namespace omnisim::sgd {

bool SGDState::finite() const {
  return std::all_of(w.begin(), w.end(), [](double x) { return std::isfinite(x); }) &&
         std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void Hyperparams::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw std::invalid_argument("hyperparams: eta must be > 0");
  }
  if (!(mu >= 0.0 && mu < 1.0)) {
    throw std::invalid_argument("hyperparams: mu must be in [0, 1)");
  }
  if (!(lambda >= 0.0)) {
    throw std::invalid_argument("hyperparams: lambda must be >= 0");
  }
  if (batch == 0) throw std::invalid_argument("hyperparams: batch must be >= 1");
}

void sgd_step_inplace(SGDState& state, const Hyperparams& hp,
                      std::span<const double> gradient,
                      std::span<const double> w_for_reg) {
  const std::size_t d = state.w.size();
  if (state.v.size() != d || gradient.size() != d || w_for_reg.size() != d) {
    throw std::invalid_argument(
        "sgd_step: dimension mismatch (model " + std::to_string(d) +
        ", velocity " + std::to_string(state.v.size()) + ", gradient " +
        std::to_string(gradient.size()) + ", reg " +
        std::to_string(w_for_reg.size()) + ")");
  }
  for (std::size_t i = 0; i < d; ++i) {
    const double v = hp.mu * state.v[i] - hp.eta * (gradient[i] + hp.lambda * w_for_reg[i]);
    state.v[i] = v;
    state.w[i] += v;
  }
  ++state.t;
}

SGDState sgd_step(const SGDState& state, const Hyperparams& hp,
                  std::span<const double> gradient,
                  std::span<const double> w_for_reg) {
  SGDState next = state;
  sgd_step_inplace(next, hp, gradient, w_for_reg);
  return next;
}

void stale_step_inplace(SGDState& state, const Hyperparams& hp,
                        const TrainingProblem& problem,
                        std::span<const double> w_read, const Batch& batch) {
  const std::vector<double> g = problem.grad(w_read, batch);
  sgd_step_inplace(state, hp, g, w_read);
}

SGDState stale_step(const SGDState& state, const Hyperparams& hp,
                    const TrainingProblem& problem,
                    std::span<const double> w_read, const Batch& batch) {
  SGDState next = state;
  stale_step_inplace(next, hp, problem, w_read, batch);
  return next;
}

bool is_divergent(double loss, double initial_loss) {
  if (!std::isfinite(loss)) return true;
  const double scale = std::max(std::abs(initial_loss), 1e-12);
  return loss > kDivergenceFactor * scale;
}

double TrailingMean::push(double value) {
  if (window_ == 0) return value;
  if (values_.size() < window_) {
    values_.push_back(value);
  } else {
    values_[head_] = value;
    head_ = (head_ + 1) % window_;
  }
  return mean();
}

double TrailingMean::mean() const {
  if (values_.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double x : values_) acc += x;
  return acc / static_cast<double>(values_.size());
}

LossTrace run_sync(const TrainingProblem& problem, const Hyperparams& hp,
                   const SGDState& init, const SyncStop& stop,
                   std::uint64_t seed) {
  hp.validate();
  if (init.w.size() != problem.dim() || init.v.size() != problem.dim()) {
    throw std::invalid_argument("run_sync: initial state has wrong dimension");
  }
  if (stop.sample_every == 0) {
    throw std::invalid_argument("run_sync: sample_every must be >= 1");
  }
  Rng batch_rng(derive_seed(seed, kBatchStream));
  LossTrace trace;
  SGDState state = init;
  const double initial_loss = problem.full_loss(state.w);
  TrailingMean smooth(stop.smoothing_window);

  auto record = [&](std::uint64_t step) {
    const double loss = problem.full_loss(state.w);
    trace.samples.push_back({step, static_cast<double>(step) * stop.seconds_per_step, loss});
    if (is_divergent(loss, initial_loss) || !state.finite()) {
      trace.diverged = true;
      return;
    }
    if (smooth.push(loss) <= stop.target_loss) trace.reached_target = true;
  };

  record(0);
  for (std::uint64_t step = 1; step <= stop.max_steps; ++step) {
    if (trace.diverged || trace.reached_target) break;
    const Batch batch = problem.sample_batch(batch_rng, hp.batch);
    stale_step_inplace(state, hp, problem, state.w, batch);
    if (step % stop.sample_every == 0 || step == stop.max_steps) record(step);
  }
  trace.final_state = std::move(state);
  return trace;
}

std::optional<std::uint64_t> iterations_to_loss(
    std::span<const LossSample> samples, double target, std::size_t window) {
  if (!std::isfinite(target)) {
    throw std::invalid_argument("iterations_to_loss: target must be finite");
  }
  TrailingMean smooth(std::max<std::size_t>(window, 1));
  for (const LossSample& s : samples) {
    if (smooth.push(s.loss) <= target) return s.step;
  }
  return std::nullopt;
}

std::optional<std::uint64_t> iterations_to_loss(const LossTrace& trace,
                                                double target,
                                                std::size_t window) {
  return iterations_to_loss(trace.samples, target, window);
}

void write_loss_trace_csv(std::ostream& out,
                          std::span<const LossSample> samples) {
  out << "step,sim_time_s,loss\n";
  write_loss_trace_rows(out, samples);
}

void write_loss_trace_rows(std::ostream& out,
                           std::span<const LossSample> samples) {
  for (const LossSample& s : samples) {
    out << s.step << ',' << csv::seconds(s.sim_time) << ',' << csv::real(s.loss)
        << '\n';
  }
}

}  // namespace omnisim::sgd
