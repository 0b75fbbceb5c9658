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

#include "omnisim/conv.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace omnisim::tensor {

namespace {

constexpr std::size_t kRowBlock = 32;

void check_operands(const Tensor4& data, const Tensor4& kernel,
                    const ConvSpec& spec) {
  spec.validate();
  if (data.n1() != spec.n || data.n2() != spec.n ||
      data.channels() != spec.d_in) {
    throw std::invalid_argument("conv: data dims do not match (n, n, d_in)");
  }
  if (kernel.n1() != spec.k || kernel.n2() != spec.k ||
      kernel.channels() != spec.d_in || kernel.batch() != spec.d_out) {
    throw std::invalid_argument(
        "conv: kernel dims do not match (k, k, d_in, d_out)");
  }
  if (data.batch() == 0) {
    throw std::invalid_argument("conv: empty batch");
  }
}

// Input value at padded coordinate (row, col); zero outside the image.
inline double padded(const Tensor4& data, const ConvSpec& spec,
                     std::size_t row, std::size_t col, std::size_t c,
                     std::size_t b) {
  if (row < spec.pad || col < spec.pad) return 0.0;
  const std::size_t r = row - spec.pad;
  const std::size_t s = col - spec.pad;
  if (r >= spec.n || s >= spec.n) return 0.0;
  return data(r, s, c, b);
}

void gemm_rows(const Matrix& a, const Matrix& b, Matrix& c,
               std::size_t row_begin, std::size_t row_end) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    double* out = &c.data[i * c.cols];
    const double* lhs = &a.data[i * a.cols];
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double x = lhs[p];
      const double* rhs = &b.data[p * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) out[j] += x * rhs[j];
    }
  }
}

void check_gemm(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("gemm: inner dimensions differ (" +
                                std::to_string(a.cols) + " vs " +
                                std::to_string(b.rows) + ")");
  }
}

// Lowers, multiplies and lifts images [first, first + count) into `out`.
void conv_chunk(const Tensor4& data, const Matrix& khat, const ConvSpec& spec,
                std::size_t first, std::size_t count, Tensor4& out) {
  const std::size_t m = spec.m();
  const LoweredMatrix lowered = lower(data, spec, count, first);
  const Matrix rhat = gemm_serial(lowered.matrix, khat);
  for (std::size_t img = 0; img < count; ++img) {
    for (std::size_t pos = 0; pos < m * m; ++pos) {
      const std::size_t row = img * m * m + pos;
      for (std::size_t o = 0; o < spec.d_out; ++o) {
        out(pos / m, pos % m, o, first + img) = rhat(row, o);
      }
    }
  }
}

}  // namespace

Tensor4 conv_direct(const Tensor4& data, const Tensor4& kernel,
                    const ConvSpec& spec) {
  check_operands(data, kernel, spec);
  const std::size_t m = spec.m();
  Tensor4 out(m, m, spec.d_out, data.batch());
  for (std::size_t b = 0; b < data.batch(); ++b) {
    for (std::size_t o = 0; o < spec.d_out; ++o) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t s = 0; s < m; ++s) {
          double acc = 0.0;
          for (std::size_t c = 0; c < spec.d_in; ++c) {
            for (std::size_t i = 0; i < spec.k; ++i) {
              for (std::size_t j = 0; j < spec.k; ++j) {
                acc += padded(data, spec, r * spec.stride + i,
                              s * spec.stride + j, c, b) *
                       kernel(i, j, c, o);
              }
            }
          }
          out(r, s, o, b) = acc;
        }
      }
    }
  }
  return out;
}

LoweredMatrix lower(const Tensor4& data, const ConvSpec& spec, std::size_t b_p,
                    std::size_t first_image) {
  const std::size_t m = spec.m();
  if (data.n1() != spec.n || data.n2() != spec.n ||
      data.channels() != spec.d_in) {
    throw std::invalid_argument("lower: data dims do not match (n, n, d_in)");
  }
  if (b_p == 0 || first_image + b_p > data.batch()) {
    throw std::invalid_argument("lower: b_p " + std::to_string(b_p) +
                                " out of range for batch " +
                                std::to_string(data.batch()));
  }
  const std::size_t kk = spec.k * spec.k;
  LoweredMatrix lowered{b_p, Matrix(m * m * b_p, kk * spec.d_in)};
  Matrix& mat = lowered.matrix;
  for (std::size_t img = 0; img < b_p; ++img) {
    const std::size_t b = first_image + img;
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t s = 0; s < m; ++s) {
        double* row = &mat.data[((img * m + r) * m + s) * mat.cols];
        for (std::size_t c = 0; c < spec.d_in; ++c) {
          for (std::size_t i = 0; i < spec.k; ++i) {
            for (std::size_t j = 0; j < spec.k; ++j) {
              row[c * kk + i * spec.k + j] = padded(
                  data, spec, r * spec.stride + i, s * spec.stride + j, c, b);
            }
          }
        }
      }
    }
  }
  return lowered;
}

Matrix lower_kernel(const Tensor4& kernel, const ConvSpec& spec) {
  if (kernel.n1() != spec.k || kernel.n2() != spec.k ||
      kernel.channels() != spec.d_in || kernel.batch() != spec.d_out) {
    throw std::invalid_argument(
        "lower_kernel: kernel dims do not match (k, k, d_in, d_out)");
  }
  const std::size_t kk = spec.k * spec.k;
  Matrix khat(kk * spec.d_in, spec.d_out);
  for (std::size_t o = 0; o < spec.d_out; ++o)
    for (std::size_t c = 0; c < spec.d_in; ++c)
      for (std::size_t i = 0; i < spec.k; ++i)
        for (std::size_t j = 0; j < spec.k; ++j)
          khat(c * kk + i * spec.k + j, o) = kernel(i, j, c, o);
  return khat;
}

Matrix gemm_serial(const Matrix& a, const Matrix& b) {
  check_gemm(a, b);
  Matrix c(a.rows, b.cols);
  gemm_rows(a, b, c, 0, a.rows);
  return c;
}

Matrix gemm(const Matrix& a, const Matrix& b) {
  check_gemm(a, b);
  Matrix c(a.rows, b.cols);
  const auto blocks =
      static_cast<long long>((a.rows + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static)
  for (long long blk = 0; blk < blocks; ++blk) {
    const std::size_t begin = static_cast<std::size_t>(blk) * kRowBlock;
    gemm_rows(a, b, c, begin, std::min(a.rows, begin + kRowBlock));
  }
  return c;
}

Tensor4 lift(const Matrix& rhat, const ConvSpec& spec, std::size_t b) {
  const std::size_t m = spec.m();
  if (rhat.rows != m * m * b || rhat.cols != spec.d_out) {
    throw std::invalid_argument("lift: Rhat shape " + std::to_string(rhat.rows) +
                                "x" + std::to_string(rhat.cols) +
                                " does not match m^2 b x d_out");
  }
  Tensor4 out(m, m, spec.d_out, b);
  for (std::size_t img = 0; img < b; ++img)
    for (std::size_t pos = 0; pos < m * m; ++pos)
      for (std::size_t o = 0; o < spec.d_out; ++o)
        out(pos / m, pos % m, o, img) = rhat(img * m * m + pos, o);
  return out;
}

Tensor4 conv_lowered(const Tensor4& data, const Tensor4& kernel,
                     const ConvSpec& spec, std::size_t b_p,
                     std::size_t workers) {
  check_operands(data, kernel, spec);
  const std::size_t batch = data.batch();
  if (b_p == 0 || b_p > batch) {
    throw std::invalid_argument("conv_lowered: b_p " + std::to_string(b_p) +
                                " out of range [1, " + std::to_string(batch) +
                                "]");
  }
  if (workers == 0) {
    throw std::invalid_argument("conv_lowered: workers must be >= 1");
  }
  const std::size_t m = spec.m();
  const Matrix khat = lower_kernel(kernel, spec);
  Tensor4 out(m, m, spec.d_out, batch);

  const std::size_t parts = std::min(workers, batch);
  const std::size_t per_part = (batch + parts - 1) / parts;
  const auto num_parts = static_cast<long long>(parts);
#pragma omp parallel for schedule(static, 1) num_threads(static_cast<int>(parts))
  for (long long p = 0; p < num_parts; ++p) {
    const std::size_t begin = static_cast<std::size_t>(p) * per_part;
    const std::size_t end = std::min(batch, begin + per_part);
    for (std::size_t first = begin; first < end; first += b_p) {
      conv_chunk(data, khat, spec, first, std::min(b_p, end - first), out);
    }
  }
  return out;
}

double blowup_ratio(const ConvSpec& spec) {
  const auto m = static_cast<double>(spec.m());
  const auto k = static_cast<double>(spec.k);
  const auto n = static_cast<double>(spec.n);
  return (m * m * k * k) / (n * n);
}

}  // namespace omnisim::tensor
