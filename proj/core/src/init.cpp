// SPDX-License-Identifier: Apache-2.0
#include "osfpi/init.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/modules/normalization.h>
#include <torch/torch.h>

namespace osfpi {

void trunc_normal_(torch::Tensor& tensor, double std) {
  torch::NoGradGuard no_grad;
  constexpr double kBound = 2.0;
  const auto normal_cdf = [](double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); };
  const double lo = normal_cdf(-kBound);
  const double hi = normal_cdf(kBound);
  tensor.uniform_(2.0 * lo - 1.0, 2.0 * hi - 1.0);
  tensor.erfinv_();
  tensor.mul_(std * std::sqrt(2.0));
  tensor.clamp_(-kBound * std, kBound * std);
}

void init_projection(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  constexpr double kStd = 0.02;
  for (const auto& child : module.modules(/*include_self=*/false)) {
    if (auto* linear = child->as<torch::nn::LinearImpl>()) {
      trunc_normal_(linear->weight, kStd);
      if (linear->bias.defined()) {
        linear->bias.zero_();
      }
    } else if (auto* conv = child->as<torch::nn::Conv2dImpl>()) {
      trunc_normal_(conv->weight, kStd);
      if (conv->bias.defined()) {
        conv->bias.zero_();
      }
    } else if (auto* norm = child->as<torch::nn::LayerNormImpl>()) {
      norm->weight.fill_(1.0);
      norm->bias.zero_();
    }
  }
}

void randomize_parameters(torch::nn::Module& module, std::uint64_t seed, double std) {
  torch::NoGradGuard no_grad;
  auto generator = at::detail::createCPUGenerator(seed);
  for (auto& p : module.parameters()) {
    auto draw = torch::empty(p.sizes(), p.options().dtype(torch::kFloat64));
    draw.normal_(0.0, std, generator);
    p.copy_(draw);
  }
}

}  // namespace osfpi
