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

#ifndef OMNISIM_TENSOR_HPP_
#define OMNISIM_TENSOR_HPP_

#include <cstddef>
#include <span>
#include <vector>

namespace omnisim::tensor {

// 4-D tensor (n1, n2, channels, batch). Storage is row-major with batch
// slowest: index = ((b * channels + c) * n1 + i) * n2 + j.
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(std::size_t n1, std::size_t n2, std::size_t channels,
          std::size_t batch);
  Tensor4(std::size_t n1, std::size_t n2, std::size_t channels,
          std::size_t batch, std::vector<double> data);

  std::size_t n1() const { return n1_; }
  std::size_t n2() const { return n2_; }
  std::size_t channels() const { return channels_; }
  std::size_t batch() const { return batch_; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(std::size_t i, std::size_t j, std::size_t c,
                     std::size_t b) const {
    return ((b * channels_ + c) * n1_ + i) * n2_ + j;
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t c,
                     std::size_t b) {
    return data_[offset(i, j, c, b)];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t c,
                    std::size_t b) const {
    return data_[offset(i, j, c, b)];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  // Throws std::invalid_argument if any element is NaN or infinite.
  void check_finite() const;

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  std::size_t n1_ = 0;
  std::size_t n2_ = 0;
  std::size_t channels_ = 0;
  std::size_t batch_ = 0;
  std::vector<double> data_;
};

// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct ConvSpec {
  std::size_t n = 0;      // input spatial size
  std::size_t k = 0;      // kernel spatial size
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;

  // Output spatial size. Throws std::invalid_argument when the spec is
  // invalid (k > n + 2 pad, zero stride, or inexact division).
  std::size_t m() const;
  void validate() const;
};

// Lowered data matrix: rows = m^2 * b_p (image-major, then output
// position r * m + s), cols = k^2 * d_in (channel-major, then kernel row,
// then kernel column).
struct LoweredMatrix {
  std::size_t b_p = 0;
  Matrix matrix;

  std::size_t rows() const { return matrix.rows; }
  std::size_t cols() const { return matrix.cols; }
};

}  // namespace omnisim::tensor

#endif  // OMNISIM_TENSOR_HPP_
