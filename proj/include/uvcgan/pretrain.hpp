#pragma once

#include <cstdint>
#include <memory>

#include <torch/torch.h>

#include "uvcgan/augment.hpp"
#include "uvcgan/generator.hpp"
#include "uvcgan/rng.hpp"

namespace uvcgan {

struct PretrainConfig {
  std::int64_t patch_size = 32;
  double mask_prob = 0.4;
  std::int64_t epochs = 500;
  std::int64_t batch_size = 64;
  // Cap on samples drawn per epoch; 0 means the whole dataset.
  std::int64_t samples_per_epoch = 0;
  // Learning rate at batch size 512; scaled linearly with batch_size.
  double base_lr = 5e-3;
  double weight_decay = 0.05;
  std::int64_t lr_cycles = 5;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  double learning_rate() const { return base_lr * static_cast<double>(batch_size) / 512.0; }
  void validate(std::int64_t image_size) const;
};

struct MaskedBatch {
  torch::Tensor image;  // input with masked patches zeroed
  torch::Tensor mask;   // [N, H / patch, W / patch] bool, true = masked
};

// Tiles each image into patch x patch cells and zeroes every cell
// independently with probability p.
MaskedBatch mask_patches(const torch::Tensor& batch, std::int64_t patch, double p, Rng& rng);

// `cycles` equal-length cosine decays from base to 0, each restarting at base.
double cosine_restart_lr(std::int64_t step, std::int64_t total_steps, std::int64_t cycles,
                         double base);

// Inpainting pretraining of one generator with AdamW + cosine restarts.
class Pretrainer {
 public:
  Pretrainer(Generator generator, PretrainConfig config, std::int64_t total_steps);

  // Masks `batch` (already augmented), reconstructs and takes one AdamW
  // step. Returns the full-image L1 reconstruction loss.
  double step(const torch::Tensor& batch);

  std::int64_t steps_done() const { return step_; }
  Rng& rng() { return rng_; }
  Generator& generator() { return generator_; }

 private:
  Generator generator_;
  PretrainConfig config_;
  std::int64_t total_steps_;
  std::int64_t step_ = 0;
  Rng rng_;
  std::unique_ptr<torch::optim::AdamW> optimizer_;
};

// Free-function form of Pretrainer::step.
double pretrain_step(Pretrainer& pretrainer, const torch::Tensor& batch);

}  // namespace uvcgan
