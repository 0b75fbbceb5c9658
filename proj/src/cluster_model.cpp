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

#include "omnisim/cluster_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

#include "omnisim/csv.hpp"

namespace omnisim::cluster {

void ClusterSpec::validate() const {
  if (n_conv_devices == 0) {
    throw std::invalid_argument("cluster: n_conv_devices must be >= 1");
  }
  if (!(device_tflops > 0.0) || !(fc_device_tflops > 0.0)) {
    throw std::invalid_argument("cluster: device throughput must be > 0");
  }
  if (!(net_bandwidth > 0.0)) {
    throw std::invalid_argument("cluster: net_bandwidth must be > 0");
  }
}

void PhaseProfile::validate() const {
  if (!(t_conv_compute >= 0.0) || !(t_conv_network >= 0.0)) {
    throw std::invalid_argument("profile: T_cc and T_nc must be >= 0");
  }
  if (!(t_fc > 0.0)) throw std::invalid_argument("profile: t_fc must be > 0");
}

ExecutionPlan::ExecutionPlan(std::size_t n, std::size_t g) : n_(n), g_(g) {
  if (n == 0) throw std::invalid_argument("plan: N must be >= 1");
  if (g == 0 || n % g != 0) {
    throw std::invalid_argument("plan: g=" + std::to_string(g) +
                                " does not divide N=" + std::to_string(n));
  }
}

double t_conv(std::size_t k, const PhaseProfile& profile) {
  if (k == 0) throw std::invalid_argument("t_conv: k must be >= 1");
  const auto kd = static_cast<double>(k);
  return std::max(profile.t_conv_compute / kd, profile.t_conv_network * kd);
}

double he_predict(const ExecutionPlan& plan, const PhaseProfile& profile) {
  const double conv = t_conv(plan.group_size(), profile);
  return std::max(profile.t_fc,
                  (conv + profile.t_fc) / static_cast<double>(plan.groups()));
}

double he_predict_pipelined(const ExecutionPlan& plan,
                            const PhaseProfile& profile) {
  const double conv = t_conv(plan.group_size(), profile);
  return std::max(profile.t_fc, conv / static_cast<double>(plan.groups()));
}

bool fc_saturated(const ExecutionPlan& plan, const PhaseProfile& profile) {
  const double conv = t_conv(plan.group_size(), profile);
  return conv + profile.t_fc <
         static_cast<double>(plan.groups()) * profile.t_fc;
}

std::vector<std::size_t> power_of_two_divisors(std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t g = 1; g <= n; g *= 2) {
    if (n % g == 0) out.push_back(g);
  }
  return out;
}

SaturationChoice min_saturating_groups(
    std::size_t n, const PhaseProfile& profile,
    const std::vector<std::size_t>& candidates) {
  if (candidates.empty()) {
    throw std::invalid_argument("min_saturating_groups: no candidates");
  }
  std::vector<std::size_t> sorted = candidates;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t g : sorted) {
    if (fc_saturated(ExecutionPlan(n, g), profile)) return {g, true};
  }
  return {sorted.back(), false};
}

SaturationChoice min_saturating_groups(std::size_t n,
                                       const PhaseProfile& profile) {
  return min_saturating_groups(n, profile, power_of_two_divisors(n));
}

double he_penalty(std::size_t staleness, std::size_t n,
                  const PhaseProfile& profile) {
  const ExecutionPlan plan(n, staleness + 1);
  return he_predict(plan, profile) / he_predict(ExecutionPlan(n, 1), profile);
}

PhaseProfile profile_from_cluster(const ClusterSpec& cluster,
                                  const Workload& workload) {
  cluster.validate();
  if (workload.conv_flops < 0.0 || !(workload.fc_flops > 0.0) ||
      workload.conv_model_bytes < 0.0) {
    throw std::invalid_argument(
        "profile_from_cluster: workload values must be positive");
  }
  PhaseProfile p;
  p.t_conv_compute = workload.conv_flops / (cluster.device_tflops * 1e12);
  p.t_fc = workload.fc_flops / (cluster.fc_device_tflops * 1e12);
  // Model broadcast plus gradient collection.
  p.t_conv_network = 2.0 * workload.conv_model_bytes / cluster.net_bandwidth;
  return p;
}

std::vector<double> flops_split(const std::vector<double>& device_tflops) {
  if (device_tflops.empty()) {
    throw std::invalid_argument("flops_split: no devices");
  }
  for (double f : device_tflops) {
    if (!(f > 0.0)) throw std::invalid_argument("flops_split: throughput must be > 0");
  }
  const double total = std::accumulate(device_tflops.begin(), device_tflops.end(), 0.0);
  std::vector<double> out;
  out.reserve(device_tflops.size());
  for (double f : device_tflops) out.push_back(f / total);
  return out;
}

std::vector<HeCurveRow> he_curve(std::size_t n, const PhaseProfile& profile,
                                 bool pipelined) {
  std::vector<HeCurveRow> rows;
  for (std::size_t g : power_of_two_divisors(n)) {
    const ExecutionPlan plan(n, g);
    HeCurveRow row;
    row.g = g;
    row.k = plan.group_size();
    row.t_conv_s = t_conv(row.k, profile);
    row.he_s_per_iter = pipelined ? he_predict_pipelined(plan, profile)
                                  : he_predict(plan, profile);
    row.fc_saturated = fc_saturated(plan, profile);
    rows.push_back(row);
  }
  return rows;
}

void write_he_curve_csv(std::ostream& out, const std::vector<HeCurveRow>& rows) {
  out << "g,k,t_conv_s,he_s_per_iter,fc_saturated\n";
  for (const HeCurveRow& r : rows) {
    out << r.g << ',' << r.k << ',' << csv::seconds(r.t_conv_s) << ','
        << csv::seconds(r.he_s_per_iter) << ','
        << (r.fc_saturated ? "true" : "false") << '\n';
  }
}

}  // namespace omnisim::cluster
