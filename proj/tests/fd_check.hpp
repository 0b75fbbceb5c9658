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

#ifndef OMNISIM_TESTS_FD_CHECK_HPP_
#define OMNISIM_TESTS_FD_CHECK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "omnisim/problem.hpp"

namespace omnisim::testing_util {

// Central differences with h = 1e-6 against the analytic gradient at
// `points` random weight vectors, each on its own random batch. Returns the
// worst normwise relative error max|fd - g| / max(max|g|, 1e-8).
inline double worst_fd_error(const sgd::TrainingProblem& p, int points,
                             std::uint64_t seed, std::size_t batch) {
  constexpr double h = 1e-6;
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  double worst = 0.0;
  for (int k = 0; k < points; ++k) {
    std::vector<double> w = p.initial_weights();
    for (double& x : w) x += n(rng);
    const sgd::Batch b = p.sample_batch(rng, batch);
    const std::vector<double> g = p.grad(w, b);
    double err = 0.0;
    double scale = 1e-8;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + h;
      const double up = p.loss(w, b);
      w[i] = keep - h;
      const double down = p.loss(w, b);
      w[i] = keep;
      err = std::max(err, std::abs((up - down) / (2 * h) - g[i]));
      scale = std::max(scale, std::abs(g[i]));
    }
    worst = std::max(worst, err / scale);
  }
  return worst;
}

}  // namespace omnisim::testing_util

#endif  // OMNISIM_TESTS_FD_CHECK_HPP_
