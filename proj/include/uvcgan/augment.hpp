#pragma once

#include <torch/torch.h>

#include "uvcgan/rng.hpp"

namespace uvcgan {

struct AugmentConfig {
  double rotation_deg = 10.0;
  double hflip_prob = 0.5;
  // Maximum shift of brightness, contrast, saturation and hue.
  double jitter = 0.2;
};

// Rotates every image of x [N,C,H,W] (values in [-1, 1]) about its center
// by the matching angle in degrees; uncovered corners are black.
torch::Tensor rotate(const torch::Tensor& x, const std::vector<double>& degrees);

// torchvision-style brightness/contrast/saturation/hue adjustments with
// factors drawn per sample from [1 - s, 1 + s] (hue shift from [-s, s]).
torch::Tensor color_jitter(const torch::Tensor& x, double strength, Rng& rng);

torch::Tensor rgb_to_hsv(const torch::Tensor& rgb);
torch::Tensor hsv_to_rgb(const torch::Tensor& hsv);

// Random rotation, horizontal flip and color jitter. Output stays in [-1, 1].
torch::Tensor augment_batch(const torch::Tensor& x, const AugmentConfig& config, Rng& rng);

}  // namespace uvcgan
