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

// Analytic hardware-efficiency model for N conv devices split into g
// compute groups that share one merged fully-connected server.
//
// A group of k devices finishes its conv phase in
//   t_conv(k) = max(T_cc / k, T_nc * k)
// (linear compute speedup, linear network slowdown, overlapped). The FC
// server is serial, so the time per iteration is
//   HE(g) = max(t_fc, (t_conv(k) + t_fc) / g).

#ifndef OMNISIM_CLUSTER_MODEL_HPP_
#define OMNISIM_CLUSTER_MODEL_HPP_

#include <cstddef>
#include <iosfwd>
#include <vector>

namespace omnisim::cluster {

struct ClusterSpec {
  std::size_t n_conv_devices = 1;
  double device_tflops = 1.0;
  double net_bandwidth = 1e9;  // bytes per second
  double fc_device_tflops = 1.0;

  void validate() const;
};

struct PhaseProfile {
  double t_conv_compute = 0.0;  // T_cc: conv fwd+bwd on one device
  double t_conv_network = 0.0;  // T_nc: conv model + gradient transfer, one worker
  double t_fc = 1.0;            // FC service time for one group

  void validate() const;
};

struct Workload {
  double conv_flops = 0.0;
  double fc_flops = 0.0;
  double conv_model_bytes = 0.0;
};

class ExecutionPlan {
 public:
  // Throws std::invalid_argument unless g >= 1 divides n.
  ExecutionPlan(std::size_t n, std::size_t g);

  std::size_t devices() const { return n_; }
  std::size_t groups() const { return g_; }
  std::size_t group_size() const { return n_ / g_; }
  std::size_t staleness() const { return g_ - 1; }

  friend bool operator==(const ExecutionPlan&, const ExecutionPlan&) = default;

 private:
  std::size_t n_;
  std::size_t g_;
};

double t_conv(std::size_t k, const PhaseProfile& profile);

double he_predict(const ExecutionPlan& plan, const PhaseProfile& profile);

// Variant where conv devices overlap the FC phase of one batch with the conv
// phase of the next; the FC time disappears from the conv-bound branch.
double he_predict_pipelined(const ExecutionPlan& plan,
                            const PhaseProfile& profile);

// t_conv(k) + t_fc < g t_fc.
bool fc_saturated(const ExecutionPlan& plan, const PhaseProfile& profile);

// Powers of two dividing n, ascending.
std::vector<std::size_t> power_of_two_divisors(std::size_t n);

struct SaturationChoice {
  std::size_t groups = 1;
  // False when no candidate saturates the FC server; `groups` is then the
  // largest candidate.
  bool saturates = false;
};

SaturationChoice min_saturating_groups(std::size_t n,
                                       const PhaseProfile& profile,
                                       const std::vector<std::size_t>& candidates);
SaturationChoice min_saturating_groups(std::size_t n,
                                       const PhaseProfile& profile);

// HE(S) / HE(0) with g = S + 1.
double he_penalty(std::size_t staleness, std::size_t n,
                  const PhaseProfile& profile);

PhaseProfile profile_from_cluster(const ClusterSpec& cluster,
                                  const Workload& workload);

// Fraction of a batch assigned to each device, proportional to its FLOPS.
std::vector<double> flops_split(const std::vector<double>& device_tflops);

struct HeCurveRow {
  std::size_t g = 1;
  std::size_t k = 1;
  double t_conv_s = 0.0;
  double he_s_per_iter = 0.0;
  bool fc_saturated = false;
};

std::vector<HeCurveRow> he_curve(std::size_t n, const PhaseProfile& profile,
                                 bool pipelined = false);

// CSV with header `g,k,t_conv_s,he_s_per_iter,fc_saturated`.
void write_he_curve_csv(std::ostream& out, const std::vector<HeCurveRow>& rows);

}  // namespace omnisim::cluster

#endif  // OMNISIM_CLUSTER_MODEL_HPP_
