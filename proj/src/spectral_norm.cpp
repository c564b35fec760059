#include "uvcgan/spectral_norm.hpp"

#include <cmath>

namespace uvcgan {

namespace {

constexpr double kNormEps = 1e-12;

torch::Tensor as_matrix(const torch::Tensor& weight) {
  return weight.reshape({weight.size(0), -1});
}

torch::Tensor l2_normalize(const torch::Tensor& x) {
  return x / x.norm().clamp_min(kNormEps);
}

}  // namespace

PowerIterationState init_power_iteration(const torch::Tensor& weight) {
  torch::NoGradGuard no_grad;
  auto w = as_matrix(weight.detach());
  PowerIterationState state;
  state.u = l2_normalize(torch::randn({w.size(0)}, w.options()));
  state.v = l2_normalize(torch::mv(w.t(), state.u));
  return state;
}

void power_iterate(const torch::Tensor& weight, PowerIterationState& state, int steps) {
  torch::NoGradGuard no_grad;
  auto w = as_matrix(weight.detach());
  for (int i = 0; i < steps; ++i) {
    // In-place so tensors registered as module buffers stay aliased.
    state.v.copy_(l2_normalize(torch::mv(w.t(), state.u)));
    state.u.copy_(l2_normalize(torch::mv(w, state.v)));
  }
}

torch::Tensor spectral_norm_estimate(const torch::Tensor& weight,
                                     const PowerIterationState& state) {
  return torch::dot(state.u, torch::mv(as_matrix(weight), state.v));
}

torch::Tensor spectral_normalize(const torch::Tensor& weight, PowerIterationState& state,
                                 int steps) {
  power_iterate(weight, state, steps);
  return weight / spectral_norm_estimate(weight, state);
}

SNConv2dImpl::SNConv2dImpl(torch::nn::Conv2dOptions options, bool normalize)
    : options_(options), normalize_(normalize) {
  torch::nn::Conv2d reference(options_);
  weight = register_parameter("weight", reference->weight.detach().clone());
  if (options_.bias()) {
    bias = register_parameter("bias", reference->bias.detach().clone());
  }
  if (normalize_) {
    auto state = init_power_iteration(weight);
    u = register_buffer("u", state.u);
    v = register_buffer("v", state.v);
  }
}

torch::Tensor SNConv2dImpl::effective_weight() const {
  if (!normalize_) return weight;
  // Clones keep the autograd graph valid when a later forward updates u, v.
  return weight / spectral_norm_estimate(weight, PowerIterationState{u.clone(), v.clone()});
}

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) {
  if (normalize_ && is_training()) {
    PowerIterationState state{u, v};
    power_iterate(weight, state, 1);
  }
  auto opts = torch::nn::functional::Conv2dFuncOptions()
                  .stride(options_.stride())
                  .padding(std::get<torch::ExpandingArray<2>>(options_.padding()));
  if (bias.defined()) opts.bias(bias);
  return torch::nn::functional::conv2d(x, effective_weight(), opts);
}

}  // namespace uvcgan
