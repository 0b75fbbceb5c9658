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

// Convolution kernels.
//
// conv_direct is the serial reference: it evaluates the triple sum over
// input channels and the kernel window for every output element, with
// zero padding outside the input. conv_lowered is the production path:
// the batch is split into `workers` partitions (one OpenMP thread each),
// every partition is lowered b_p images at a time, multiplied against the
// flattened kernel with gemm, and lifted back. The summation order inside
// gemm does not depend on the partitioning, so results are bit-identical
// for any worker count.

#ifndef OMNISIM_CONV_HPP_
#define OMNISIM_CONV_HPP_

#include <cstddef>

#include "omnisim/tensor.hpp"

namespace omnisim::tensor {

Tensor4 conv_direct(const Tensor4& data, const Tensor4& kernel,
                    const ConvSpec& spec);

// Lowers images [first_image, first_image + b_p) of `data`.
LoweredMatrix lower(const Tensor4& data, const ConvSpec& spec,
                    std::size_t b_p, std::size_t first_image = 0);

// Flattens K (k, k, d_in, d_out) into a (k^2 d_in) x d_out matrix whose row
// order matches the column order of lower().
Matrix lower_kernel(const Tensor4& kernel, const ConvSpec& spec);

// Row-blocked product with a fixed summation order (ascending inner index).
Matrix gemm(const Matrix& a, const Matrix& b);

// Single-threaded variant of gemm; same summation order.
Matrix gemm_serial(const Matrix& a, const Matrix& b);

// Maps Rhat (m^2 b rows, d_out cols) back to R (m, m, d_out, b).
Tensor4 lift(const Matrix& rhat, const ConvSpec& spec, std::size_t b);

Tensor4 conv_lowered(const Tensor4& data, const Tensor4& kernel,
                     const ConvSpec& spec, std::size_t b_p,
                     std::size_t workers = 1);

// m^2 k^2 / n^2: replicated element count of the lowered input relative to
// the original input.
double blowup_ratio(const ConvSpec& spec);

}  // namespace omnisim::tensor

#endif  // OMNISIM_CONV_HPP_
