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

#include "omnisim/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace omnisim::tensor {

Tensor4::Tensor4(std::size_t n1, std::size_t n2, std::size_t channels,
                 std::size_t batch)
    : n1_(n1),
      n2_(n2),
      channels_(channels),
      batch_(batch),
      data_(n1 * n2 * channels * batch, 0.0) {}

Tensor4::Tensor4(std::size_t n1, std::size_t n2, std::size_t channels,
                 std::size_t batch, std::vector<double> data)
    : n1_(n1), n2_(n2), channels_(channels), batch_(batch),
      data_(std::move(data)) {
  if (data_.size() != n1 * n2 * channels * batch) {
    throw std::invalid_argument(
        "Tensor4: data length " + std::to_string(data_.size()) +
        " does not match dims product " +
        std::to_string(n1 * n2 * channels * batch));
  }
  check_finite();
}

void Tensor4::check_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw std::invalid_argument("Tensor4: non-finite element at offset " +
                                  std::to_string(i));
    }
  }
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw std::invalid_argument("Matrix: data length does not match shape");
  }
}

void ConvSpec::validate() const {
  if (n == 0 || k == 0 || d_in == 0 || d_out == 0) {
    throw std::invalid_argument("ConvSpec: n, k, d_in, d_out must be positive");
  }
  if (stride == 0) {
    throw std::invalid_argument("ConvSpec: stride must be positive");
  }
  if (k > n + 2 * pad) {
    throw std::invalid_argument("ConvSpec: kernel larger than padded input");
  }
  if ((n + 2 * pad - k) % stride != 0) {
    throw std::invalid_argument(
        "ConvSpec: (n + 2 pad - k) is not divisible by stride");
  }
}

std::size_t ConvSpec::m() const {
  validate();
  return (n + 2 * pad - k) / stride + 1;
}

}  // namespace omnisim::tensor
