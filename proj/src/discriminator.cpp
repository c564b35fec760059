#include "uvcgan/discriminator.hpp"

#include <string>

#include "uvcgan/errors.hpp"

namespace uvcgan {

namespace {

constexpr double kLeakySlope = 0.2;
constexpr double kBatchNormEps = 1e-5;

}  // namespace

BatchStatKind parse_batch_stat_kind(const std::string& name) {
  if (name == "bn" || name == "BN") return BatchStatKind::BN;
  if (name == "bsd" || name == "BSD") return BatchStatKind::BSD;
  throw ConfigError("unknown batch statistic kind '" + name + "' (expected bn or bsd)");
}

std::string to_string(BatchStatKind kind) { return kind == BatchStatKind::BN ? "bn" : "bsd"; }

void DiscriminatorConfig::validate() const {
  if (in_channels < 1) throw ConfigError("discriminator.in_channels must be >= 1");
  for (auto f : features) {
    if (f < 1) throw ConfigError("discriminator.features entries must be >= 1");
  }
}

DiscriminatorConfig DiscriminatorConfig::toy() {
  DiscriminatorConfig c;
  c.features = {16, 32, 64, 128};
  return c;
}

void FeatureCache::push(const torch::Tensor& features) {
  if (capacity_ == 0) return;
  auto batch = features.dim() == 3 ? features.unsqueeze(0) : features;
  if (batch.dim() != 4) {
    throw ShapeError("cache_push: features must be [C,H,W] or [N,C,H,W]");
  }
  for (std::int64_t n = 0; n < batch.size(0); ++n) {
    auto entry = batch[n].detach().clone();
    if (!entries_.empty() && entries_.front().sizes() != entry.sizes()) {
      throw ShapeError("cache_push: feature shape does not match cached entries");
    }
    entries_.push_back(std::move(entry));
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

torch::Tensor FeatureCache::stacked() const {
  if (entries_.empty()) return {};
  return torch::stack(std::vector<torch::Tensor>(entries_.begin(), entries_.end()), 0);
}

CacheKind parse_cache_kind(const std::string& name) {
  if (name == "real_a") return CacheKind::RealA;
  if (name == "real_b") return CacheKind::RealB;
  if (name == "fake_a") return CacheKind::FakeA;
  if (name == "fake_b") return CacheKind::FakeB;
  throw std::invalid_argument("invalid cache selector '" + name + "'");
}

FeatureCache& CacheBank::select(CacheKind kind) {
  switch (kind) {
    case CacheKind::RealA: return real_a;
    case CacheKind::RealB: return real_b;
    case CacheKind::FakeA: return fake_a;
    case CacheKind::FakeB: return fake_b;
  }
  throw std::invalid_argument("invalid cache selector");
}

torch::Tensor minibatch_stddev_statistic(const torch::Tensor& x) {
  // Shifting by the first sample keeps identical samples at exactly zero.
  auto d = x - x.narrow(0, 0, 1);
  auto var = (d - d.mean(0, /*keepdim=*/true)).square().mean(0);
  // sqrt has an infinite derivative at 0; route zero variance around it so
  // identical samples give an exact 0 with a finite gradient.
  auto positive = var > 0;
  auto std = torch::where(positive, var.clamp_min(1e-30).sqrt(), torch::zeros_like(var));
  return std.mean();
}

torch::Tensor batch_stddev(const torch::Tensor& features) {
  if (features.dim() != 4) throw ShapeError("batch_stddev: expected [N,C,H,W]");
  if (features.size(0) < 2) {
    throw std::invalid_argument("batch_stddev: needs a batch of at least 2 samples");
  }
  auto stat = minibatch_stddev_statistic(features);
  auto channel = stat.expand({features.size(0), 1, features.size(2), features.size(3)});
  return torch::cat({features, channel}, 1);
}

BatchHeadImpl::BatchHeadImpl(std::int64_t channels, BatchStatKind kind, bool spectral_norm)
    : kind_(kind) {
  std::int64_t head_in = channels;
  if (kind_ == BatchStatKind::BN) {
    bn_weight_ = register_parameter("bn_weight", torch::ones({channels}));
    bn_bias_ = register_parameter("bn_bias", torch::zeros({channels}));
  } else {
    head_in += 1;
  }
  conv1_ = register_module(
      "conv1", SNConv2d(torch::nn::Conv2dOptions(head_in, channels, 1), spectral_norm));
  conv2_ = register_module(
      "conv2", SNConv2d(torch::nn::Conv2dOptions(channels, 1, 1), spectral_norm));
}

torch::Tensor BatchHeadImpl::forward(const torch::Tensor& current, const torch::Tensor& cached) {
  if (current.dim() != 4 || current.size(0) < 1) {
    throw ShapeError("batch_head: current features must be a non-empty [N,C,H,W] batch");
  }
  auto all = current;
  if (cached.defined() && cached.size(0) > 0) {
    if (cached.sizes().slice(1) != current.sizes().slice(1)) {
      throw ShapeError("batch_head: cached features are not shape-compatible");
    }
    all = torch::cat({current, cached.detach()}, 0);
  }

  torch::Tensor h;
  if (kind_ == BatchStatKind::BSD) {
    // Warm-up: a lone sample has no spread, the statistic is 0.
    auto stat = all.size(0) >= 2 ? minibatch_stddev_statistic(all)
                                 : torch::zeros({}, current.options());
    auto channel = stat.expand({current.size(0), 1, current.size(2), current.size(3)});
    h = torch::cat({current, channel}, 1);
  } else {
    auto mean = all.mean({0, 2, 3}, /*keepdim=*/true);
    auto var = (all - mean).square().mean({0, 2, 3}, /*keepdim=*/true);
    h = (current - mean) * (var + kBatchNormEps).rsqrt();
    h = h * bn_weight_.view({1, -1, 1, 1}) + bn_bias_.view({1, -1, 1, 1});
  }
  h = torch::leaky_relu(conv1_(h), kLeakySlope);
  return conv2_(h);
}

torch::Tensor batch_head_forward(BatchHead& head, const torch::Tensor& current_features,
                                 const FeatureCache& cache) {
  return head->forward(current_features, cache.stacked());
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& config) : config_(config) {
  config_.validate();
  std::int64_t in = config_.in_channels;
  for (auto width : config_.features) {
    body_->push_back(SNConv2d(torch::nn::Conv2dOptions(in, width, 3).stride(2).padding(1),
                              config_.spectral_norm));
    in = width;
  }
  register_module("body", body_);
  if (config_.batch_head) {
    head_ = register_module("head",
                            BatchHead(in, config_.stat_kind, config_.spectral_norm));
  } else {
    final_ = register_module(
        "final", SNConv2d(torch::nn::Conv2dOptions(in, 1, 1), config_.spectral_norm));
  }
}

torch::Tensor DiscriminatorImpl::body(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != config_.in_channels) {
    throw ShapeError("discriminator: expected [N, " + std::to_string(config_.in_channels) +
                     ", H, W] input");
  }
  auto h = image;
  for (auto& layer : *body_) {
    h = torch::leaky_relu(layer->as<SNConv2d>()->forward(h), kLeakySlope);
  }
  return h;
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& image,
                                               const FeatureCache* cache) {
  DiscriminatorOutput out;
  out.features = body(image);
  if (head_) {
    out.score = head_->forward(out.features, cache ? cache->stacked() : torch::Tensor());
  } else {
    out.score = final_(out.features);
  }
  return out;
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& image, CacheBank& bank,
                                               CacheKind which, bool update_cache) {
  auto& cache = bank.select(which);
  auto out = forward(image, &cache);
  if (update_cache && head_) cache.push(out.features);
  return out;
}

}  // namespace uvcgan
