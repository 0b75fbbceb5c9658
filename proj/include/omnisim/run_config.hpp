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

// Run configuration: one JSON document, validated in full before any
// command starts. Unknown keys are errors. See docs/config.md.

#ifndef OMNISIM_RUN_CONFIG_HPP_
#define OMNISIM_RUN_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "omnisim/async_sim.hpp"
#include "omnisim/cluster_model.hpp"
#include "omnisim/optimizer.hpp"
#include "omnisim/problem.hpp"
#include "omnisim/tensor.hpp"

namespace omnisim::app {

// Schema violation; the message names the offending key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ProblemConfig {
  std::string kind = "quadratic";  // quadratic | logistic | tiny_cnn
  // quadratic
  std::size_t dim = 10;
  double condition = 10.0;
  double noise = 1.0;
  double init_scale = 1.0;
  std::vector<double> eigenvalues;  // overrides dim/condition when set
  // logistic / tiny_cnn
  std::optional<std::size_t> n_examples;
  double label_noise = 0.05;
  std::size_t image_size = 8;
  std::size_t classes = 3;
  std::uint64_t seed = 0;
};

std::unique_ptr<sgd::TrainingProblem> make_problem(const ProblemConfig& cfg);

struct SimSection {
  sim::ServiceMode service_mode = sim::ServiceMode::kExponential;
  std::size_t batch = 1;
  double lambda = 0.0;
  std::size_t smoothing_window = sgd::kDefaultSmoothingWindow;
  // simulate command
  std::size_t groups = 1;
  double eta = 0.01;
  double mu = 0.0;
  std::uint64_t max_updates = 1000;
  double max_sim_seconds = 0.0;
  double target_loss = -std::numeric_limits<double>::infinity();
};

struct ConvBenchSection {
  tensor::ConvSpec spec{8, 3, 2, 4, 1, 0};
  std::size_t batch = 8;
  std::vector<std::size_t> b_p;      // empty: 1..batch
  std::vector<std::size_t> workers{1, 2, 4};
  std::size_t repeats = 3;
};

struct HeCurveSection {
  std::uint64_t events = 10000;
  std::size_t burn_in = sim::kDefaultBurnIn;
  double eta = 1e-4;  // the model still trains while HE is measured
};

struct EstimatorSection {
  std::size_t runs = 500;
  std::uint64_t steps = 200;
  double eta = 0.02;
  std::optional<ProblemConfig> problem;   // defaults to the top-level one
  std::optional<cluster::PhaseProfile> profile;
};

struct MomentumSweepSection {
  double target_loss = 1.0;
  std::vector<double> momenta{0.0, 0.3, 0.6, 0.9};
  std::vector<double> etas;  // expanded from eta_grid when not listed
  std::size_t n_seeds = 8;
  std::uint64_t max_updates = 20000;
  std::uint64_t he_updates = 2000;
  std::vector<std::size_t> groups;  // empty: power-of-two divisors of N
  bool estimate = true;
  EstimatorSection estimator;
};

struct BatchSweepSection {
  std::vector<std::size_t> batches{1, 2, 4, 8, 16, 32, 64, 128};
  std::vector<double> etas;  // the largest one is the cap
  double momentum = 0.0;
  // Target is reference_min_loss + target_excess when set, else target_loss.
  std::optional<double> target_loss;
  std::optional<double> target_excess;
  std::uint64_t max_steps = 100000;
};

struct RunConfig {
  std::uint64_t seed = 1;
  ProblemConfig problem;
  cluster::ClusterSpec cluster;
  std::optional<cluster::Workload> workload;
  std::optional<cluster::PhaseProfile> profile;
  opt::GridSpec grid;
  opt::EpochConfig epochs;
  SimSection sim;
  ConvBenchSection convbench;
  HeCurveSection he_curve;
  MomentumSweepSection momentum_sweep;
  BatchSweepSection batch_sweep;

  // Explicit profile, else derived from cluster + workload.
  cluster::PhaseProfile resolved_profile() const;
};

// Throws ConfigError on malformed JSON, unknown keys, wrong types or
// values that fail validation.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical form (sorted keys, compact) and its FNV-1a 64 hash, hex.
std::string canonical_json(const std::string& json_text);
std::string config_hash(const std::string& json_text);

}  // namespace omnisim::app

#endif  // OMNISIM_RUN_CONFIG_HPP_
