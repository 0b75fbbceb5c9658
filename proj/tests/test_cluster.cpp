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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "omnisim/cluster_model.hpp"

namespace omnisim::cluster {
namespace {

const PhaseProfile kRef{10.0, 0.1, 2.0};

TEST(TConv, Examples) {
  EXPECT_DOUBLE_EQ(t_conv(8, kRef), 1.25);
  EXPECT_DOUBLE_EQ(t_conv(16, kRef), 1.6);
  EXPECT_DOUBLE_EQ(t_conv(1, kRef), 10.0);
  EXPECT_THROW(t_conv(0, kRef), std::invalid_argument);
}

TEST(TConv, DiscreteArgminNeighboursContinuousOne) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const PhaseProfile p{std::pow(10.0, u(rng)), std::pow(10.0, u(rng) - 2), 1.0};
    std::size_t best = 1;
    for (std::size_t k = 1; k <= 5000; ++k) {
      if (t_conv(k, p) < t_conv(best, p)) best = k;
    }
    const double kstar = std::sqrt(p.t_conv_compute / p.t_conv_network);
    if (kstar >= 4999) continue;
    const auto lo = static_cast<std::size_t>(std::max(1.0, std::floor(kstar)));
    const auto hi = static_cast<std::size_t>(std::max(1.0, std::ceil(kstar)));
    EXPECT_TRUE(best == lo || best == hi) << best << " vs " << kstar;
  }
}

TEST(Plan, Validation) {
  EXPECT_THROW(ExecutionPlan(8, 3), std::invalid_argument);
  EXPECT_THROW(ExecutionPlan(8, 0), std::invalid_argument);
  const ExecutionPlan p(32, 4);
  EXPECT_EQ(p.group_size(), 8u);
  EXPECT_EQ(p.staleness(), 3u);
}

TEST(HePredict, Examples) {
  EXPECT_DOUBLE_EQ(he_predict(ExecutionPlan(8, 1), kRef), 3.25);
  EXPECT_DOUBLE_EQ(he_predict(ExecutionPlan(8, 8), kRef), 2.0);
  EXPECT_DOUBLE_EQ(he_predict(ExecutionPlan(8, 4), kRef), 2.0);
  EXPECT_DOUBLE_EQ(he_predict_pipelined(ExecutionPlan(8, 1), kRef), 2.0);
  EXPECT_DOUBLE_EQ(he_predict_pipelined(ExecutionPlan(8, 8), kRef), kRef.t_fc);
}

TEST(FcSaturated, Examples) {
  EXPECT_TRUE(fc_saturated(ExecutionPlan(8, 4), kRef));
  EXPECT_FALSE(fc_saturated(ExecutionPlan(8, 2), kRef));
  EXPECT_FALSE(fc_saturated(ExecutionPlan(8, 1), kRef));
  EXPECT_FALSE(fc_saturated(ExecutionPlan(8, 1), PhaseProfile{0.0, 0.0, 1.0}));
}

TEST(MinSaturatingGroups, Examples) {
  const auto a = min_saturating_groups(8, kRef);
  EXPECT_EQ(a.groups, 4u);
  EXPECT_TRUE(a.saturates);
  const auto b = min_saturating_groups(8, PhaseProfile{10.0, 0.1, 100.0});
  EXPECT_EQ(b.groups, 2u);
  const auto c = min_saturating_groups(8, PhaseProfile{10.0, 0.1, 1e-12});
  EXPECT_EQ(c.groups, 8u);
  EXPECT_FALSE(c.saturates);
}

TEST(PowerOfTwoDivisors, Examples) {
  EXPECT_EQ(power_of_two_divisors(32), (std::vector<std::size_t>{1, 2, 4, 8, 16, 32}));
  EXPECT_EQ(power_of_two_divisors(12), (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_EQ(power_of_two_divisors(1), (std::vector<std::size_t>{1}));
}

TEST(HePenalty, Examples) {
  EXPECT_DOUBLE_EQ(he_penalty(0, 8, kRef), 1.0);
  EXPECT_NEAR(he_penalty(7, 8, kRef), 2.0 / 3.25, 1e-15);
  EXPECT_NEAR(he_penalty(7, 8, kRef), 0.615, 5e-4);
  EXPECT_THROW(he_penalty(2, 8, kRef), std::invalid_argument);
}

TEST(HeModel, PropertiesOverRandomProfiles) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const PhaseProfile p{std::pow(10.0, u(rng)), trial % 3 ? std::pow(10.0, u(rng) - 2) : 0.0,
                         std::pow(10.0, u(rng))};
    const std::size_t n = std::size_t{1} << (trial % 7);
    double prev = INFINITY;
    for (std::size_t g = 1; g <= n; ++g) {
      if (n % g) continue;
      const ExecutionPlan plan(n, g);
      const double he = he_predict(plan, p);
      EXPECT_LE(he, prev * (1 + 1e-15));
      prev = he;
      EXPECT_LE(he_predict_pipelined(plan, p), he);
      if (fc_saturated(plan, p)) EXPECT_EQ(he, p.t_fc);
      EXPECT_LE(he_penalty(g - 1, n, p), 1.0 + 1e-15);
    }
    EXPECT_EQ(he_penalty(0, n, p), 1.0);
  }
}

TEST(ProfileFromCluster, Examples) {
  ClusterSpec c;
  c.device_tflops = 0.742;
  c.fc_device_tflops = 0.742;
  c.net_bandwidth = 1e9;
  const PhaseProfile p = profile_from_cluster(c, Workload{1.6e12, 8e10, 0.0});
  EXPECT_NEAR(p.t_conv_compute, 2.156, 1e-3);
  EXPECT_NEAR(p.t_fc, 0.108, 1e-3);
  EXPECT_EQ(p.t_conv_network, 0.0);
  const PhaseProfile q = profile_from_cluster(c, Workload{1.6e12, 8e10, 5e8});
  EXPECT_DOUBLE_EQ(q.t_conv_network, 1.0);
  c.device_tflops = 0.0;
  EXPECT_THROW(profile_from_cluster(c, Workload{1.6e12, 8e10, 0.0}), std::invalid_argument);
}

TEST(FlopsSplit, Examples) {
  const auto a = flops_split({1.0, 4.0});
  EXPECT_DOUBLE_EQ(a[0], 0.2);
  EXPECT_DOUBLE_EQ(a[1], 0.8);
  EXPECT_EQ(flops_split({3.5}), (std::vector<double>{1.0}));
  for (double x : flops_split({2.0, 2.0, 2.0})) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
  EXPECT_THROW(flops_split({1.0, 0.0}), std::invalid_argument);
}

TEST(HeCurve, RowsAndCsv) {
  const auto rows = he_curve(8, kRef);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].g, 1u);
  EXPECT_EQ(rows[0].k, 8u);
  EXPECT_DOUBLE_EQ(rows[0].he_s_per_iter, 3.25);
  EXPECT_TRUE(rows[2].fc_saturated);
  std::ostringstream os;
  write_he_curve_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "g,k,t_conv_s,he_s_per_iter,fc_saturated");
}

}  // namespace
}  // namespace omnisim::cluster
