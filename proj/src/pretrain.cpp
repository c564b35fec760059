#include "uvcgan/pretrain.hpp"

#include <cmath>
#include <numbers>

#include "uvcgan/errors.hpp"

namespace uvcgan {

void PretrainConfig::validate(std::int64_t image_size) const {
  if (patch_size < 1 || image_size % patch_size != 0) {
    throw ConfigError("pretrain.patch_size must divide the image size");
  }
  if (mask_prob < 0.0 || mask_prob > 1.0) throw ConfigError("pretrain.mask_prob must be in [0,1]");
  if (epochs < 1 || batch_size < 1 || lr_cycles < 1) {
    throw ConfigError("pretrain epochs, batch_size and lr_cycles must be >= 1");
  }
  if (samples_per_epoch < 0) throw ConfigError("pretrain.samples_per_epoch must be >= 0");
  if (!(base_lr > 0.0) || weight_decay < 0.0) {
    throw ConfigError("pretrain.base_lr must be positive and weight_decay non-negative");
  }
}

MaskedBatch mask_patches(const torch::Tensor& batch, std::int64_t patch, double p, Rng& rng) {
  if (batch.dim() != 4 || patch < 1 || batch.size(2) % patch != 0 ||
      batch.size(3) % patch != 0) {
    throw ShapeError("mask_patches: image dims must be divisible by the patch size");
  }
  const auto n = batch.size(0);
  const auto rows = batch.size(2) / patch, cols = batch.size(3) / patch;
  auto mask = torch::zeros({n, rows, cols}, torch::kBool);
  auto acc = mask.accessor<bool, 3>();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < cols; ++c) acc[i][r][c] = rng.bernoulli(p);
    }
  }
  auto pixel_mask = mask.repeat_interleave(patch, 1).repeat_interleave(patch, 2).unsqueeze(1);
  MaskedBatch out;
  out.image = batch.masked_fill(pixel_mask.to(batch.device()), 0.0);
  out.mask = mask;
  return out;
}

double cosine_restart_lr(std::int64_t step, std::int64_t total_steps, std::int64_t cycles,
                         double base) {
  if (total_steps < 1 || cycles < 1) {
    throw std::invalid_argument("cosine_restart_lr: total_steps and cycles must be >= 1");
  }
  const double cycle_len = static_cast<double>(total_steps) / static_cast<double>(cycles);
  const double pos = std::fmod(static_cast<double>(step), cycle_len) / cycle_len;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * pos));
}

Pretrainer::Pretrainer(Generator generator, PretrainConfig config, std::int64_t total_steps)
    : generator_(std::move(generator)),
      config_(config),
      total_steps_(total_steps),
      rng_(config.seed) {
  config_.validate(generator_->config().image_size);
  if (total_steps_ < 1) throw ConfigError("pretraining needs at least one step");
  optimizer_ = std::make_unique<torch::optim::AdamW>(
      generator_->parameters(),
      torch::optim::AdamWOptions(config_.learning_rate()).weight_decay(config_.weight_decay));
}

double Pretrainer::step(const torch::Tensor& batch) {
  const double lr =
      cosine_restart_lr(step_, total_steps_, config_.lr_cycles, config_.learning_rate());
  for (auto& group : optimizer_->param_groups()) group.options().set_lr(lr);

  generator_->train();
  auto masked = mask_patches(batch, config_.patch_size, config_.mask_prob, rng_);
  optimizer_->zero_grad();
  auto loss = (generator_->forward(masked.image) - batch).abs().mean();
  loss.backward();
  optimizer_->step();
  ++step_;
  return loss.item<double>();
}

double pretrain_step(Pretrainer& pretrainer, const torch::Tensor& batch) {
  return pretrainer.step(batch);
}

}  // namespace uvcgan
