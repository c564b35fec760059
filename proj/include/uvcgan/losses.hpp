#pragma once

#include <functional>
#include <string>

#include <torch/torch.h>

namespace uvcgan {

enum class GpMode { R1, Legacy };

GpMode parse_gp_mode(const std::string& name);
std::string to_string(GpMode mode);

struct LossWeights {
  double lambda_cyc = 5.0;
  double lambda_idt = 0.0;
  double lambda_consist = 0.0;
  double lambda_gp = 0.01;
  // Center of the legacy (UVCGAN) penalty; only used in GpMode::Legacy.
  double legacy_gp_gamma = 100.0;
  GpMode gp_mode = GpMode::R1;

  void validate() const;
};

// Least-squares GAN loss, mean((pred - label)^2). label must be 0 or 1.
torch::Tensor gan_loss(const torch::Tensor& pred, double label);

// l_gan(D(fake), 0) + l_gan(D(real), 1), given the two score maps.
torch::Tensor disc_loss(const torch::Tensor& score_real, const torch::Tensor& score_fake);

// Mean absolute error between same-shaped batches.
torch::Tensor cycle_loss(const torch::Tensor& original, const torch::Tensor& reconstructed);
torch::Tensor identity_loss(const torch::Tensor& original, const torch::Tensor& identity);

// Area-average downsizing to size x size (no-op when already that small).
torch::Tensor low_pass(const torch::Tensor& image, std::int64_t size = 32);

// L1 between low-passed source and translation.
torch::Tensor consistency_loss(const torch::Tensor& source, const torch::Tensor& translated,
                               std::int64_t size = 32);

// Maps an image batch to score maps; the score of sample n is the sum of its map.
using Critic = std::function<torch::Tensor(const torch::Tensor&)>;

// Per-sample input gradient of the critic, [N, ...], with create_graph so
// penalties built from it are differentiable w.r.t. the critic parameters.
torch::Tensor critic_input_gradient(const Critic& critic, const torch::Tensor& samples);

// Zero-centered (R1) penalty: (lambda / 2) * mean_n ||grad_x D(x_n)||^2.
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real, double lambda_gp);

// UVCGAN-style penalty: lambda * mean_n (||grad||_2 - gamma)^2 / gamma^2.
// gamma == 0 degenerates to lambda * mean_n ||grad||^2.
torch::Tensor legacy_gradient_penalty(const Critic& critic, const torch::Tensor& samples,
                                      double lambda_gp, double gamma);

// Undefined tensors count as zero.
struct GeneratorLossParts {
  torch::Tensor gan_a, gan_b;
  torch::Tensor cyc_a, cyc_b;
  torch::Tensor idt_a, idt_b;
  torch::Tensor consist_a, consist_b;
};

torch::Tensor total_generator_loss(const GeneratorLossParts& parts, const LossWeights& weights);

}  // namespace uvcgan
