// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include <torch/nn/module.h>
#include <torch/types.h>

namespace osfpi {

/// In-place truncated normal on [-2 std, 2 std] via inverse-CDF sampling.
void trunc_normal_(torch::Tensor& tensor, double std);

/// Truncated-normal weights for Linear/Conv2d, zero biases, unit LayerNorm scale.
/// Zero-initialized residual outputs are left for each module to set afterwards.
void init_projection(torch::nn::Module& module);

/// Overwrites every parameter with N(0, std^2) draws from a private generator.
/// Test helper: gives zero-initialized branches nonzero weights so that every
/// path of the graph is exercised.
void randomize_parameters(torch::nn::Module& module, std::uint64_t seed, double std = 0.2);

}  // namespace osfpi
