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

#include "omnisim/problem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "omnisim/conv.hpp"

namespace omnisim::sgd {

namespace {

void check_dim(std::span<const double> w, std::size_t dim, const char* what) {
  if (w.size() != dim) {
    throw std::invalid_argument(std::string(what) + ": model has " +
                                std::to_string(w.size()) + " entries, expected " +
                                std::to_string(dim));
  }
}

void check_batch(const Batch& batch, const char* what) {
  if (batch.empty()) {
    throw std::invalid_argument(std::string(what) + ": empty batch");
  }
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Noisy quadratic

QuadraticProblem::QuadraticProblem(const QuadraticOptions& options)
    : noise_(options.noise), init_scale_(options.init_scale) {
  if (options.dim == 0) throw std::invalid_argument("quadratic: dim must be >= 1");
  if (!(options.condition >= 1.0)) {
    throw std::invalid_argument("quadratic: condition must be >= 1");
  }
  if (options.noise < 0.0) throw std::invalid_argument("quadratic: noise < 0");
  eigenvalues_.resize(options.dim);
  const double log_cond = std::log(options.condition);
  for (std::size_t i = 0; i < options.dim; ++i) {
    const double frac =
        options.dim == 1 ? 0.0
                         : static_cast<double>(i) /
                               static_cast<double>(options.dim - 1);
    eigenvalues_[i] = std::exp(frac * log_cond);
  }
}

QuadraticProblem::QuadraticProblem(std::vector<double> eigenvalues,
                                   double noise, double init_scale)
    : eigenvalues_(std::move(eigenvalues)),
      noise_(noise),
      init_scale_(init_scale) {
  if (eigenvalues_.empty()) {
    throw std::invalid_argument("quadratic: dim must be >= 1");
  }
}

double QuadraticProblem::loss(std::span<const double> w,
                              const Batch& batch) const {
  check_dim(w, dim(), "quadratic loss");
  check_batch(batch, "quadratic loss");
  double noise_term = 0.0;
  for (const Example& ex : batch) {
    for (std::size_t i = 0; i < w.size(); ++i) noise_term += ex.input[i] * w[i];
  }
  return full_loss(w) + noise_term / static_cast<double>(batch.size());
}

std::vector<double> QuadraticProblem::grad(std::span<const double> w,
                                           const Batch& batch) const {
  check_dim(w, dim(), "quadratic grad");
  check_batch(batch, "quadratic grad");
  std::vector<double> g(w.size(), 0.0);
  for (const Example& ex : batch) {
    for (std::size_t i = 0; i < w.size(); ++i) g[i] += ex.input[i];
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    g[i] = eigenvalues_[i] * w[i] + g[i] * inv_b;
  }
  return g;
}

Batch QuadraticProblem::sample_batch(Rng& rng, std::size_t b) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch batch(b);
  for (Example& ex : batch) {
    ex.input.resize(dim());
    for (double& x : ex.input) x = noise_ == 0.0 ? 0.0 : noise_ * normal(rng);
  }
  return batch;
}

double QuadraticProblem::full_loss(std::span<const double> w) const {
  check_dim(w, dim(), "quadratic full_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += eigenvalues_[i] * w[i] * w[i];
  }
  return 0.5 * acc;
}

std::vector<double> QuadraticProblem::full_grad(
    std::span<const double> w) const {
  check_dim(w, dim(), "quadratic full_grad");
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) g[i] = eigenvalues_[i] * w[i];
  return g;
}

std::vector<double> QuadraticProblem::initial_weights() const {
  return std::vector<double>(dim(), init_scale_);
}

// ---------------------------------------------------------------------------
// Logistic regression

LogisticProblem::LogisticProblem(const LogisticOptions& options)
    : dim_(options.dim) {
  if (options.dim == 0 || options.n_examples == 0) {
    throw std::invalid_argument("logistic: dim and n_examples must be >= 1");
  }
  Rng rng(derive_seed(options.seed, 0x1061));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> truth(dim_);
  for (double& x : truth) x = normal(rng);
  features_.resize(options.n_examples * dim_);
  labels_.resize(options.n_examples);
  for (std::size_t e = 0; e < options.n_examples; ++e) {
    double margin = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      const double x = normal(rng);
      features_[e * dim_ + i] = x;
      margin += x * truth[i];
    }
    int label = margin > 0.0 ? 1 : 0;
    if (unif(rng) < options.label_noise) label = 1 - label;
    labels_[e] = label;
  }
}

double LogisticProblem::loss(std::span<const double> w,
                             const Batch& batch) const {
  check_dim(w, dim_, "logistic loss");
  check_batch(batch, "logistic loss");
  double acc = 0.0;
  for (const Example& ex : batch) {
    const double z = std::inner_product(w.begin(), w.end(), ex.input.begin(), 0.0);
    const double sign = ex.label == 1 ? 1.0 : -1.0;
    acc += softplus(-sign * z);
  }
  return acc / static_cast<double>(batch.size());
}

std::vector<double> LogisticProblem::grad(std::span<const double> w,
                                          const Batch& batch) const {
  check_dim(w, dim_, "logistic grad");
  check_batch(batch, "logistic grad");
  std::vector<double> g(dim_, 0.0);
  for (const Example& ex : batch) {
    const double z = std::inner_product(w.begin(), w.end(), ex.input.begin(), 0.0);
    const double residual = sigmoid(z) - static_cast<double>(ex.label);
    for (std::size_t i = 0; i < dim_; ++i) g[i] += residual * ex.input[i];
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (double& x : g) x *= inv_b;
  return g;
}

Batch LogisticProblem::sample_batch(Rng& rng, std::size_t b) const {
  std::uniform_int_distribution<std::size_t> pick(0, labels_.size() - 1);
  Batch batch(b);
  for (Example& ex : batch) {
    const std::size_t e = pick(rng);
    ex.input.assign(features_.begin() + static_cast<std::ptrdiff_t>(e * dim_),
                    features_.begin() + static_cast<std::ptrdiff_t>((e + 1) * dim_));
    ex.label = labels_[e];
  }
  return batch;
}

double LogisticProblem::full_loss(std::span<const double> w) const {
  check_dim(w, dim_, "logistic full_loss");
  double acc = 0.0;
  for (std::size_t e = 0; e < labels_.size(); ++e) {
    const double* x = &features_[e * dim_];
    double z = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) z += w[i] * x[i];
    acc += softplus(labels_[e] == 1 ? -z : z);
  }
  return acc / static_cast<double>(labels_.size());
}

std::vector<double> LogisticProblem::full_grad(std::span<const double> w) const {
  check_dim(w, dim_, "logistic full_grad");
  std::vector<double> g(dim_, 0.0);
  for (std::size_t e = 0; e < labels_.size(); ++e) {
    const double* x = &features_[e * dim_];
    double z = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) z += w[i] * x[i];
    const double residual = sigmoid(z) - static_cast<double>(labels_[e]);
    for (std::size_t i = 0; i < dim_; ++i) g[i] += residual * x[i];
  }
  for (double& x : g) x /= static_cast<double>(labels_.size());
  return g;
}

std::vector<double> LogisticProblem::initial_weights() const {
  return std::vector<double>(dim_, 0.0);
}

// Damped Newton iterations on the full objective.
std::optional<double> LogisticProblem::reference_min_loss() const {
  if (min_loss_) return min_loss_;
  std::vector<double> w(dim_, 0.0);
  const std::size_t n = labels_.size();
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<double> g = full_grad(w);
    std::vector<double> h(dim_ * dim_, 0.0);
    for (std::size_t e = 0; e < n; ++e) {
      const double* x = &features_[e * dim_];
      double z = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) z += w[i] * x[i];
      const double s = sigmoid(z);
      const double weight = s * (1.0 - s) / static_cast<double>(n);
      for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = 0; j < dim_; ++j) h[i * dim_ + j] += weight * x[i] * x[j];
    }
    for (std::size_t i = 0; i < dim_; ++i) h[i * dim_ + i] += 1e-12;
    // Solve h * step = g by Gaussian elimination with partial pivoting.
    std::vector<double> step = g;
    for (std::size_t col = 0; col < dim_; ++col) {
      std::size_t pivot = col;
      for (std::size_t r = col + 1; r < dim_; ++r)
        if (std::abs(h[r * dim_ + col]) > std::abs(h[pivot * dim_ + col])) pivot = r;
      if (pivot != col) {
        for (std::size_t c = 0; c < dim_; ++c) std::swap(h[col * dim_ + c], h[pivot * dim_ + c]);
        std::swap(step[col], step[pivot]);
      }
      for (std::size_t r = col + 1; r < dim_; ++r) {
        const double f = h[r * dim_ + col] / h[col * dim_ + col];
        for (std::size_t c = col; c < dim_; ++c) h[r * dim_ + c] -= f * h[col * dim_ + c];
        step[r] -= f * step[col];
      }
    }
    for (std::size_t col = dim_; col-- > 0;) {
      double acc = step[col];
      for (std::size_t c = col + 1; c < dim_; ++c) acc -= h[col * dim_ + c] * step[c];
      step[col] = acc / h[col * dim_ + col];
    }
    double scale = 1.0;
    const double current = full_loss(w);
    std::vector<double> trial(dim_);
    for (int ls = 0; ls < 30; ++ls) {
      for (std::size_t i = 0; i < dim_; ++i) trial[i] = w[i] - scale * step[i];
      if (full_loss(trial) <= current) break;
      scale *= 0.5;
    }
    w = trial;
    double gnorm = 0.0;
    for (double x : full_grad(w)) gnorm = std::max(gnorm, std::abs(x));
    if (gnorm < 1e-12) break;
  }
  min_loss_ = full_loss(w);
  return min_loss_;
}

// ---------------------------------------------------------------------------
// Tiny CNN

namespace {
constexpr std::size_t kKernel = 3;
constexpr std::size_t kConvOut = 4;
constexpr double kInitStd = 0.01;
}  // namespace

struct TinyCnnProblem::Forward {
  tensor::Tensor4 input;       // (n, n, 1, b)
  tensor::Tensor4 pre;         // conv + bias, (n, n, 4, b)
  std::vector<double> pooled;  // b x F
  std::vector<std::size_t> argmax;  // b x F offsets into `pre`
  std::vector<double> probs;   // b x classes
};

TinyCnnProblem::TinyCnnProblem(const TinyCnnOptions& options)
    : image_size_(options.image_size),
      classes_(options.classes),
      pooled_(options.image_size / 2),
      seed_(options.seed) {
  if (image_size_ < 2 || image_size_ > 16) {
    throw std::invalid_argument("tiny_cnn: image_size must be in [2, 16]");
  }
  if (classes_ < 2 || classes_ > 10) {
    throw std::invalid_argument("tiny_cnn: classes must be in [2, 10]");
  }
  if (options.n_examples == 0) {
    throw std::invalid_argument("tiny_cnn: n_examples must be >= 1");
  }
  Rng rng(derive_seed(seed_, 0xc11));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t pixels = image_size_ * image_size_;
  std::vector<std::vector<double>> prototypes(classes_, std::vector<double>(pixels));
  for (auto& proto : prototypes)
    for (double& x : proto) x = normal(rng);
  dataset_.resize(options.n_examples);
  for (std::size_t e = 0; e < options.n_examples; ++e) {
    Example& ex = dataset_[e];
    ex.label = static_cast<int>(e % classes_);
    ex.input.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      ex.input[p] = prototypes[static_cast<std::size_t>(ex.label)][p] + 0.7 * normal(rng);
    }
  }
}

std::size_t TinyCnnProblem::dim() const {
  const std::size_t features = kConvOut * pooled_ * pooled_;
  return kKernel * kKernel * kConvOut + kConvOut + classes_ * features + classes_;
}

TinyCnnProblem::Forward TinyCnnProblem::forward(std::span<const double> w,
                                                const Batch& batch) const {
  check_dim(w, dim(), "tiny_cnn");
  check_batch(batch, "tiny_cnn");
  const std::size_t n = image_size_;
  const std::size_t b = batch.size();
  const std::size_t features = kConvOut * pooled_ * pooled_;
  const std::size_t kernel_size = kKernel * kKernel * kConvOut;
  const double* conv_bias = w.data() + kernel_size;
  const double* fc_w = conv_bias + kConvOut;
  const double* fc_b = fc_w + classes_ * features;

  Forward fw;
  fw.input = tensor::Tensor4(n, n, 1, b);
  for (std::size_t img = 0; img < b; ++img) {
    if (batch[img].input.size() != n * n) {
      throw std::invalid_argument("tiny_cnn: example has wrong pixel count");
    }
    std::copy(batch[img].input.begin(), batch[img].input.end(),
              fw.input.storage().begin() + static_cast<std::ptrdiff_t>(img * n * n));
  }
  const tensor::ConvSpec spec{n, kKernel, 1, kConvOut, 1, 1};
  const tensor::Tensor4 kernel(kKernel, kKernel, 1, kConvOut,
                               std::vector<double>(w.begin(), w.begin() + kernel_size));
  fw.pre = tensor::conv_lowered(fw.input, kernel, spec, b, 1);
  for (std::size_t img = 0; img < b; ++img)
    for (std::size_t o = 0; o < kConvOut; ++o)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t s = 0; s < n; ++s) fw.pre(r, s, o, img) += conv_bias[o];

  // ReLU then 2x2 max-pool; max(relu(x)) == relu(max(x)).
  fw.pooled.assign(b * features, 0.0);
  fw.argmax.assign(b * features, 0);
  for (std::size_t img = 0; img < b; ++img) {
    for (std::size_t o = 0; o < kConvOut; ++o) {
      for (std::size_t pr = 0; pr < pooled_; ++pr) {
        for (std::size_t ps = 0; ps < pooled_; ++ps) {
          std::size_t best = fw.pre.offset(2 * pr, 2 * ps, o, img);
          for (std::size_t dr = 0; dr < 2; ++dr)
            for (std::size_t ds = 0; ds < 2; ++ds) {
              const std::size_t off = fw.pre.offset(2 * pr + dr, 2 * ps + ds, o, img);
              if (fw.pre.storage()[off] > fw.pre.storage()[best]) best = off;
            }
          const std::size_t f = (o * pooled_ + pr) * pooled_ + ps;
          fw.argmax[img * features + f] = best;
          fw.pooled[img * features + f] = std::max(0.0, fw.pre.storage()[best]);
        }
      }
    }
  }

  fw.probs.assign(b * classes_, 0.0);
  for (std::size_t img = 0; img < b; ++img) {
    double* p = &fw.probs[img * classes_];
    const double* x = &fw.pooled[img * features];
    double peak = -INFINITY;
    for (std::size_t c = 0; c < classes_; ++c) {
      double z = fc_b[c];
      const double* row = fc_w + c * features;
      for (std::size_t f = 0; f < features; ++f) z += row[f] * x[f];
      p[c] = z;
      peak = std::max(peak, z);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < classes_; ++c) {
      p[c] = std::exp(p[c] - peak);
      total += p[c];
    }
    for (std::size_t c = 0; c < classes_; ++c) p[c] /= total;
  }
  return fw;
}

std::vector<double> TinyCnnProblem::predict(std::span<const double> w,
                                            const Batch& batch) const {
  return forward(w, batch).probs;
}

double TinyCnnProblem::loss(std::span<const double> w, const Batch& batch) const {
  const Forward fw = forward(w, batch);
  double acc = 0.0;
  for (std::size_t img = 0; img < batch.size(); ++img) {
    const auto label = static_cast<std::size_t>(batch[img].label);
    acc -= std::log(std::max(fw.probs[img * classes_ + label], 1e-300));
  }
  return acc / static_cast<double>(batch.size());
}

std::vector<double> TinyCnnProblem::grad(std::span<const double> w,
                                         const Batch& batch) const {
  const Forward fw = forward(w, batch);
  const std::size_t n = image_size_;
  const std::size_t b = batch.size();
  const std::size_t features = kConvOut * pooled_ * pooled_;
  const std::size_t kernel_size = kKernel * kKernel * kConvOut;
  const double* fc_w = w.data() + kernel_size + kConvOut;
  const double inv_b = 1.0 / static_cast<double>(b);

  std::vector<double> g(dim(), 0.0);
  double* g_kernel = g.data();
  double* g_conv_bias = g_kernel + kernel_size;
  double* g_fc_w = g_conv_bias + kConvOut;
  double* g_fc_b = g_fc_w + classes_ * features;

  // Backward through softmax cross-entropy and the fully-connected layer.
  tensor::Tensor4 d_pre(n, n, kConvOut, b);
  std::vector<double> d_logits(classes_);
  for (std::size_t img = 0; img < b; ++img) {
    const auto label = static_cast<std::size_t>(batch[img].label);
    for (std::size_t c = 0; c < classes_; ++c) {
      d_logits[c] = (fw.probs[img * classes_ + c] - (c == label ? 1.0 : 0.0)) * inv_b;
    }
    const double* x = &fw.pooled[img * features];
    for (std::size_t c = 0; c < classes_; ++c) {
      g_fc_b[c] += d_logits[c];
      double* row = g_fc_w + c * features;
      for (std::size_t f = 0; f < features; ++f) row[f] += d_logits[c] * x[f];
    }
    // Through max-pool and ReLU: route to the arg-max when it was active.
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t off = fw.argmax[img * features + f];
      if (fw.pre.storage()[off] <= 0.0) continue;
      double d = 0.0;
      for (std::size_t c = 0; c < classes_; ++c) d += fc_w[c * features + f] * d_logits[c];
      d_pre.storage()[off] += d;
    }
  }

  // Conv layer: dKhat = Dhat^T dRhat, dbias = sum over positions and images.
  const tensor::ConvSpec spec{n, kKernel, 1, kConvOut, 1, 1};
  const tensor::LoweredMatrix lowered = tensor::lower(fw.input, spec, b);
  const std::size_t kk = kKernel * kKernel;
  for (std::size_t img = 0; img < b; ++img) {
    for (std::size_t pos = 0; pos < n * n; ++pos) {
      const std::size_t row = img * n * n + pos;
      const double* lrow = &lowered.matrix.data[row * kk];
      for (std::size_t o = 0; o < kConvOut; ++o) {
        const double d = d_pre(pos / n, pos % n, o, img);
        if (d == 0.0) continue;
        g_conv_bias[o] += d;
        // Kernel layout (i, j, c=0, o): offset o * kk + i * 3 + j.
        for (std::size_t q = 0; q < kk; ++q) g_kernel[o * kk + q] += lrow[q] * d;
      }
    }
  }
  return g;
}

Batch TinyCnnProblem::sample_batch(Rng& rng, std::size_t b) const {
  std::uniform_int_distribution<std::size_t> pick(0, dataset_.size() - 1);
  Batch batch;
  batch.reserve(b);
  for (std::size_t i = 0; i < b; ++i) batch.push_back(dataset_[pick(rng)]);
  return batch;
}

double TinyCnnProblem::full_loss(std::span<const double> w) const {
  return loss(w, dataset_);
}

std::vector<double> TinyCnnProblem::full_grad(std::span<const double> w) const {
  return grad(w, dataset_);
}

std::vector<double> TinyCnnProblem::initial_weights() const {
  Rng rng(derive_seed(seed_, 0x1417));
  std::normal_distribution<double> normal(0.0, kInitStd);
  std::vector<double> w(dim(), 0.0);
  const std::size_t kernel_size = kKernel * kKernel * kConvOut;
  const std::size_t features = kConvOut * pooled_ * pooled_;
  for (std::size_t i = 0; i < kernel_size; ++i) w[i] = normal(rng);
  double* fc_w = w.data() + kernel_size + kConvOut;
  for (std::size_t i = 0; i < classes_ * features; ++i) fc_w[i] = normal(rng);
  return w;
}

// ---------------------------------------------------------------------------

std::unique_ptr<QuadraticProblem> make_quadratic(std::size_t dim,
                                                 double condition,
                                                 double noise,
                                                 std::uint64_t seed) {
  return std::make_unique<QuadraticProblem>(
      QuadraticOptions{dim, condition, noise, 1.0, seed});
}

std::unique_ptr<LogisticProblem> make_logistic(std::size_t n_examples,
                                               std::size_t dim,
                                               std::uint64_t seed) {
  LogisticOptions options;
  options.n_examples = n_examples;
  options.dim = dim;
  options.seed = seed;
  return std::make_unique<LogisticProblem>(options);
}

std::unique_ptr<TinyCnnProblem> make_tiny_cnn(std::size_t image_size,
                                              std::size_t classes,
                                              std::uint64_t seed) {
  TinyCnnOptions options;
  options.image_size = image_size;
  options.classes = classes;
  options.seed = seed;
  return std::make_unique<TinyCnnProblem>(options);
}

}  // namespace omnisim::sgd
