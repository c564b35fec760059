#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace uvcgan {

// Persistent singular-vector estimates for one weight, viewed as a matrix
// [out, in * kh * kw].
struct PowerIterationState {
  torch::Tensor u;  // [out]
  torch::Tensor v;  // [rest]
};

PowerIterationState init_power_iteration(const torch::Tensor& weight);

// Runs `steps` power-iteration updates of `state` against `weight`. No
// gradient is recorded.
void power_iterate(const torch::Tensor& weight, PowerIterationState& state, int steps = 1);

// u^T W v for the current state; differentiable w.r.t. weight.
torch::Tensor spectral_norm_estimate(const torch::Tensor& weight,
                                     const PowerIterationState& state);

// weight / sigma_max after `steps` persistent power iterations.
torch::Tensor spectral_normalize(const torch::Tensor& weight, PowerIterationState& state,
                                 int steps = 1);

// Conv2d whose kernel is spectrally normalized on every forward. The power
// iteration advances only in training mode; eval mode reuses the stored
// vectors so repeated forwards are pure.
class SNConv2dImpl : public torch::nn::Module {
 public:
  SNConv2dImpl(torch::nn::Conv2dOptions options, bool normalize = true);

  torch::Tensor forward(const torch::Tensor& x);

  // Weight as used by forward (normalized when enabled), without advancing
  // the power iteration.
  torch::Tensor effective_weight() const;

  torch::Tensor weight;
  torch::Tensor bias;
  torch::Tensor u;
  torch::Tensor v;

 private:
  torch::nn::Conv2dOptions options_;
  bool normalize_;
};
TORCH_MODULE(SNConv2d);

}  // namespace uvcgan
