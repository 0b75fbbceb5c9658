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

// Desk-scale training problems.
//
// Every problem reports the loss and gradient of a sampled batch, the
// full objective (expected loss over the data distribution), and draws
// batches uniformly at random with replacement. Batch gradients are the
// mean of the per-example gradients, so the learning rate is comparable
// across batch sizes.

#ifndef OMNISIM_PROBLEM_HPP_
#define OMNISIM_PROBLEM_HPP_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omnisim/rng.hpp"

namespace omnisim::sgd {

// One (input, label) tuple. For the noisy quadratic the input carries the
// per-example gradient noise.
struct Example {
  std::vector<double> input;
  int label = 0;
};

using Batch = std::vector<Example>;

class TrainingProblem {
 public:
  virtual ~TrainingProblem() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;

  virtual double loss(std::span<const double> w, const Batch& batch) const = 0;
  virtual std::vector<double> grad(std::span<const double> w,
                                   const Batch& batch) const = 0;
  virtual Batch sample_batch(Rng& rng, std::size_t b) const = 0;

  // Expected loss and its gradient over the data distribution (for finite
  // datasets: the mean over every example).
  virtual double full_loss(std::span<const double> w) const = 0;
  virtual std::vector<double> full_grad(std::span<const double> w) const = 0;

  virtual std::vector<double> initial_weights() const = 0;
  virtual std::optional<double> reference_min_loss() const {
    return std::nullopt;
  }
};

struct QuadraticOptions {
  std::size_t dim = 1;
  double condition = 1.0;
  double noise = 0.0;
  double init_scale = 1.0;
  std::uint64_t seed = 0;
};

// loss = 1/2 W^T diag(a) W with eigenvalues log-spaced over [1, condition].
// A per-example gradient is diag(a) W + xi with xi ~ N(0, noise^2 I); the
// matching per-example loss is 1/2 W^T diag(a) W + xi^T W.
class QuadraticProblem final : public TrainingProblem {
 public:
  explicit QuadraticProblem(const QuadraticOptions& options);
  // Explicit eigenvalues; used by tests.
  QuadraticProblem(std::vector<double> eigenvalues, double noise,
                   double init_scale = 1.0);

  std::string name() const override { return "quadratic"; }
  std::size_t dim() const override { return eigenvalues_.size(); }
  double loss(std::span<const double> w, const Batch& batch) const override;
  std::vector<double> grad(std::span<const double> w,
                           const Batch& batch) const override;
  Batch sample_batch(Rng& rng, std::size_t b) const override;
  double full_loss(std::span<const double> w) const override;
  std::vector<double> full_grad(std::span<const double> w) const override;
  std::vector<double> initial_weights() const override;
  std::optional<double> reference_min_loss() const override { return 0.0; }

  const std::vector<double>& eigenvalues() const { return eigenvalues_; }
  double noise() const { return noise_; }

 private:
  std::vector<double> eigenvalues_;
  double noise_ = 0.0;
  double init_scale_ = 1.0;
};

struct LogisticOptions {
  std::size_t n_examples = 1000;
  std::size_t dim = 10;
  double label_noise = 0.05;
  std::uint64_t seed = 0;
};

// Two-class logistic regression on synthetic Gaussian features labelled by a
// random hyperplane, with a fraction of labels flipped.
class LogisticProblem final : public TrainingProblem {
 public:
  explicit LogisticProblem(const LogisticOptions& options);

  std::string name() const override { return "logistic"; }
  std::size_t dim() const override { return dim_; }
  double loss(std::span<const double> w, const Batch& batch) const override;
  std::vector<double> grad(std::span<const double> w,
                           const Batch& batch) const override;
  Batch sample_batch(Rng& rng, std::size_t b) const override;
  double full_loss(std::span<const double> w) const override;
  std::vector<double> full_grad(std::span<const double> w) const override;
  std::vector<double> initial_weights() const override;
  std::optional<double> reference_min_loss() const override;

  std::size_t n_examples() const { return labels_.size(); }

 private:
  std::size_t dim_ = 0;
  std::vector<double> features_;  // n_examples x dim, row-major
  std::vector<int> labels_;       // 0 or 1
  mutable std::optional<double> min_loss_;
};

struct TinyCnnOptions {
  std::size_t image_size = 8;
  std::size_t classes = 3;
  std::size_t n_examples = 96;
  std::uint64_t seed = 0;
};

// conv(3x3, 4 output channels, pad 1) -> ReLU -> 2x2 max-pool -> fully
// connected -> softmax cross-entropy. Model layout:
//   [conv kernel (3,3,1,4) | conv bias (4) | fc weights (classes x F) |
//    fc bias (classes)]
// where F = 4 * (image_size / 2)^2.
class TinyCnnProblem final : public TrainingProblem {
 public:
  explicit TinyCnnProblem(const TinyCnnOptions& options);

  std::string name() const override { return "tiny_cnn"; }
  std::size_t dim() const override;
  double loss(std::span<const double> w, const Batch& batch) const override;
  std::vector<double> grad(std::span<const double> w,
                           const Batch& batch) const override;
  Batch sample_batch(Rng& rng, std::size_t b) const override;
  double full_loss(std::span<const double> w) const override;
  std::vector<double> full_grad(std::span<const double> w) const override;
  std::vector<double> initial_weights() const override;

  // Softmax class probabilities for every example, row-major (b x classes).
  std::vector<double> predict(std::span<const double> w,
                              const Batch& batch) const;

  std::size_t classes() const { return classes_; }
  std::size_t image_size() const { return image_size_; }
  const Batch& dataset() const { return dataset_; }

 private:
  struct Forward;
  Forward forward(std::span<const double> w, const Batch& batch) const;

  std::size_t image_size_ = 0;
  std::size_t classes_ = 0;
  std::size_t pooled_ = 0;
  std::uint64_t seed_ = 0;
  Batch dataset_;
};

std::unique_ptr<QuadraticProblem> make_quadratic(std::size_t dim,
                                                 double condition,
                                                 double noise,
                                                 std::uint64_t seed);
std::unique_ptr<LogisticProblem> make_logistic(std::size_t n_examples,
                                               std::size_t dim,
                                               std::uint64_t seed);
std::unique_ptr<TinyCnnProblem> make_tiny_cnn(std::size_t image_size,
                                              std::size_t classes,
                                              std::uint64_t seed);

}  // namespace omnisim::sgd

#endif  // OMNISIM_PROBLEM_HPP_
