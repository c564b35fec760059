#include "uvcgan/losses.hpp"

#include <algorithm>

#include "uvcgan/errors.hpp"

namespace uvcgan {

namespace {

void require_same_shape(const torch::Tensor& x, const torch::Tensor& y, const char* what) {
  if (x.sizes() != y.sizes()) {
    throw ShapeError(std::string(what) + ": inputs differ in shape");
  }
}

torch::Tensor or_zero(const torch::Tensor& t, const torch::Tensor& like) {
  return t.defined() ? t : torch::zeros({}, like.options());
}

}  // namespace

GpMode parse_gp_mode(const std::string& name) {
  if (name == "r1") return GpMode::R1;
  if (name == "legacy") return GpMode::Legacy;
  throw ConfigError("unknown gradient penalty mode '" + name + "' (expected r1 or legacy)");
}

std::string to_string(GpMode mode) { return mode == GpMode::R1 ? "r1" : "legacy"; }

void LossWeights::validate() const {
  if (lambda_cyc < 0 || lambda_idt < 0 || lambda_consist < 0 || lambda_gp < 0 ||
      legacy_gp_gamma < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

torch::Tensor gan_loss(const torch::Tensor& pred, double label) {
  if (label != 0.0 && label != 1.0) {
    throw std::invalid_argument("gan_loss: label must be 0 or 1");
  }
  return (pred - label).square().mean();
}

torch::Tensor disc_loss(const torch::Tensor& score_real, const torch::Tensor& score_fake) {
  return gan_loss(score_fake, 0.0) + gan_loss(score_real, 1.0);
}

torch::Tensor cycle_loss(const torch::Tensor& original, const torch::Tensor& reconstructed) {
  require_same_shape(original, reconstructed, "cycle_loss");
  return (original - reconstructed).abs().mean();
}

torch::Tensor identity_loss(const torch::Tensor& original, const torch::Tensor& identity) {
  require_same_shape(original, identity, "identity_loss");
  return (original - identity).abs().mean();
}

torch::Tensor low_pass(const torch::Tensor& image, std::int64_t size) {
  if (image.dim() != 4) throw ShapeError("low_pass: expected [N,C,H,W]");
  const auto h = std::min(size, image.size(2));
  const auto w = std::min(size, image.size(3));
  if (h == image.size(2) && w == image.size(3)) return image;
  return torch::adaptive_avg_pool2d(image, {h, w});
}

torch::Tensor consistency_loss(const torch::Tensor& source, const torch::Tensor& translated,
                               std::int64_t size) {
  require_same_shape(source, translated, "consistency_loss");
  return (low_pass(translated, size) - low_pass(source, size)).abs().mean();
}

torch::Tensor critic_input_gradient(const Critic& critic, const torch::Tensor& samples) {
  auto x = samples.detach().requires_grad_(true);
  auto score = critic(x);
  if (!score.requires_grad()) return torch::zeros_like(x);
  auto grads = torch::autograd::grad({score.sum()}, {x}, /*grad_outputs=*/{},
                                     /*retain_graph=*/true, /*create_graph=*/true,
                                     /*allow_unused=*/true);
  if (!grads[0].defined()) return torch::zeros_like(x);
  return grads[0];
}

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real,
                               double lambda_gp) {
  auto g = critic_input_gradient(critic, real);
  auto sq_norm = g.reshape({g.size(0), -1}).square().sum(1);
  return 0.5 * lambda_gp * sq_norm.mean();
}

torch::Tensor legacy_gradient_penalty(const Critic& critic, const torch::Tensor& samples,
                                      double lambda_gp, double gamma) {
  auto g = critic_input_gradient(critic, samples);
  auto flat = g.reshape({g.size(0), -1});
  if (gamma == 0.0) return lambda_gp * flat.square().sum(1).mean();
  auto norm = flat.square().sum(1).clamp_min(1e-30).sqrt();
  return lambda_gp * (norm - gamma).square().mean() / (gamma * gamma);
}

torch::Tensor total_generator_loss(const GeneratorLossParts& parts, const LossWeights& weights) {
  const auto& like = parts.gan_a.defined() ? parts.gan_a : parts.cyc_a;
  if (!like.defined()) throw std::invalid_argument("total_generator_loss: no gan term");
  auto gan = or_zero(parts.gan_a, like) + or_zero(parts.gan_b, like);
  auto loss = gan;
  if (weights.lambda_cyc != 0.0) {
    loss = loss + weights.lambda_cyc * (or_zero(parts.cyc_a, like) + or_zero(parts.cyc_b, like));
  }
  if (weights.lambda_idt != 0.0) {
    loss = loss + weights.lambda_idt * (or_zero(parts.idt_a, like) + or_zero(parts.idt_b, like));
  }
  if (weights.lambda_consist != 0.0) {
    loss = loss + weights.lambda_consist *
                      (or_zero(parts.consist_a, like) + or_zero(parts.consist_b, like));
  }
  return loss;
}

}  // namespace uvcgan
