#include "uvcgan/augment.hpp"

#include <cmath>
#include <numbers>

#include "uvcgan/errors.hpp"

namespace uvcgan {

namespace {

torch::Tensor grayscale(const torch::Tensor& rgb01) {
  return (0.299 * rgb01.select(1, 0) + 0.587 * rgb01.select(1, 1) + 0.114 * rgb01.select(1, 2))
      .unsqueeze(1);
}

torch::Tensor per_sample(const std::vector<double>& values, const torch::Tensor& like) {
  return torch::tensor(values, like.options().dtype(torch::kFloat64))
      .to(like.dtype())
      .view({-1, 1, 1, 1});
}

}  // namespace

torch::Tensor rotate(const torch::Tensor& x, const std::vector<double>& degrees) {
  if (x.dim() != 4 || static_cast<std::size_t>(x.size(0)) != degrees.size()) {
    throw ShapeError("rotate: need one angle per sample of an [N,C,H,W] batch");
  }
  std::vector<float> theta;
  theta.reserve(degrees.size() * 6);
  for (double deg : degrees) {
    const double r = deg * std::numbers::pi / 180.0;
    const float c = static_cast<float>(std::cos(r)), s = static_cast<float>(std::sin(r));
    theta.insert(theta.end(), {c, -s, 0.0f, s, c, 0.0f});
  }
  auto affine = torch::tensor(theta).view({x.size(0), 2, 3}).to(x.dtype());
  auto grid = torch::nn::functional::affine_grid(affine, x.sizes(), /*align_corners=*/false);
  // Sample in [0, 1] space so zero padding means black.
  auto rotated = torch::nn::functional::grid_sample(
      (x + 1.0) * 0.5, grid,
      torch::nn::functional::GridSampleFuncOptions().mode(torch::kBilinear)
          .padding_mode(torch::kZeros).align_corners(false));
  return rotated * 2.0 - 1.0;
}

torch::Tensor rgb_to_hsv(const torch::Tensor& rgb) {
  auto r = rgb.select(1, 0), g = rgb.select(1, 1), b = rgb.select(1, 2);
  auto maxc = std::get<0>(rgb.max(1));
  auto minc = std::get<0>(rgb.min(1));
  auto delta = maxc - minc;
  auto safe_max = torch::where(maxc > 0, maxc, torch::ones_like(maxc));
  auto sat = torch::where(maxc > 0, delta / safe_max, torch::zeros_like(maxc));
  auto safe_delta = torch::where(delta > 0, delta, torch::ones_like(delta));
  auto rc = (maxc - r) / safe_delta, gc = (maxc - g) / safe_delta, bc = (maxc - b) / safe_delta;
  auto hue = torch::where(maxc == r, bc - gc,
                          torch::where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc));
  hue = torch::where(delta > 0, torch::remainder(hue / 6.0, 1.0), torch::zeros_like(hue));
  return torch::stack({hue, sat, maxc}, 1);
}

torch::Tensor hsv_to_rgb(const torch::Tensor& hsv) {
  auto h = hsv.select(1, 0), s = hsv.select(1, 1), v = hsv.select(1, 2);
  auto h6 = torch::remainder(h, 1.0) * 6.0;
  auto sector = torch::floor(h6);
  auto f = h6 - sector;
  auto p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  auto i = torch::remainder(sector, 6.0);
  auto pick = [&](const torch::Tensor& c0, const torch::Tensor& c1, const torch::Tensor& c2,
                  const torch::Tensor& c3, const torch::Tensor& c4, const torch::Tensor& c5) {
    return torch::where(i == 0, c0,
           torch::where(i == 1, c1,
           torch::where(i == 2, c2,
           torch::where(i == 3, c3, torch::where(i == 4, c4, c5)))));
  };
  return torch::stack({pick(v, q, p, p, t, v), pick(t, v, v, q, p, p), pick(p, p, t, v, v, q)}, 1);
}

torch::Tensor color_jitter(const torch::Tensor& x, double strength, Rng& rng) {
  if (strength <= 0.0) return x;
  const auto n = static_cast<std::size_t>(x.size(0));
  std::vector<double> brightness(n), contrast(n), saturation(n), hue(n);
  for (std::size_t i = 0; i < n; ++i) {
    brightness[i] = rng.uniform(1.0 - strength, 1.0 + strength);
    contrast[i] = rng.uniform(1.0 - strength, 1.0 + strength);
    saturation[i] = rng.uniform(1.0 - strength, 1.0 + strength);
    hue[i] = rng.uniform(-strength, strength);
  }
  auto img = ((x + 1.0) * 0.5).clamp(0.0, 1.0);
  img = (img * per_sample(brightness, img)).clamp(0.0, 1.0);
  auto mean = grayscale(img).mean({1, 2, 3}, /*keepdim=*/true);
  img = (mean + per_sample(contrast, img) * (img - mean)).clamp(0.0, 1.0);
  auto gray = grayscale(img);
  img = (gray + per_sample(saturation, img) * (img - gray)).clamp(0.0, 1.0);
  auto hsv = rgb_to_hsv(img);
  auto shifted_h = torch::remainder(hsv.select(1, 0) + per_sample(hue, img).squeeze(1), 1.0);
  img = hsv_to_rgb(torch::stack({shifted_h, hsv.select(1, 1), hsv.select(1, 2)}, 1));
  return img.clamp(0.0, 1.0) * 2.0 - 1.0;
}

torch::Tensor augment_batch(const torch::Tensor& x, const AugmentConfig& config, Rng& rng) {
  auto out = x;
  if (config.rotation_deg > 0.0) {
    std::vector<double> angles(static_cast<std::size_t>(x.size(0)));
    for (auto& a : angles) a = rng.uniform(-config.rotation_deg, config.rotation_deg);
    out = rotate(out, angles);
  }
  if (config.hflip_prob > 0.0) {
    std::vector<torch::Tensor> items;
    for (std::int64_t i = 0; i < out.size(0); ++i) {
      auto item = out[i];
      items.push_back(rng.bernoulli(config.hflip_prob) ? item.flip({2}) : item);
    }
    out = torch::stack(items, 0);
  }
  if (x.size(1) == 3) out = color_jitter(out, config.jitter, rng);
  return out.clamp(-1.0, 1.0);
}

}  // namespace uvcgan
