#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <string>

#include <torch/torch.h>

#include "uvcgan/spectral_norm.hpp"

namespace uvcgan {

enum class BatchStatKind { BN, BSD };

BatchStatKind parse_batch_stat_kind(const std::string& name);
std::string to_string(BatchStatKind kind);

struct DiscriminatorConfig {
  std::int64_t in_channels = 3;
  // Widths of the four stride-2 body convolutions.
  std::array<std::int64_t, 4> features{64, 128, 256, 512};
  bool batch_head = true;
  BatchStatKind stat_kind = BatchStatKind::BSD;
  bool spectral_norm = true;

  void validate() const;
  static DiscriminatorConfig toy();
};

// Fixed-capacity FIFO of detached body outputs, one [C, H, W] map per entry.
class FeatureCache {
 public:
  explicit FeatureCache(std::size_t capacity = 3) : capacity_(capacity) {}

  // Appends every sample of `features` ([C,H,W] or [N,C,H,W]) in order,
  // evicting the oldest entries beyond capacity.
  void push(const torch::Tensor& features);

  // Entries stacked into [size, C, H, W], oldest first; undefined when empty.
  torch::Tensor stacked() const;

  const std::deque<torch::Tensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<torch::Tensor> entries_;
};

enum class CacheKind { RealA, RealB, FakeA, FakeB };

CacheKind parse_cache_kind(const std::string& name);

struct CacheBank {
  explicit CacheBank(std::size_t capacity = 3)
      : real_a(capacity), real_b(capacity), fake_a(capacity), fake_b(capacity) {}

  FeatureCache& select(CacheKind kind);

  FeatureCache real_a, real_b, fake_a, fake_b;
};

// Scalar minibatch-stddev statistic of x [M, C, H, W]: the per-(c,h,w)
// population std across the batch, averaged over (c,h,w). Exactly zero for
// identical samples.
torch::Tensor minibatch_stddev_statistic(const torch::Tensor& x);

// Appends the statistic of `features` as one constant extra channel.
// Requires a batch of at least two samples.
torch::Tensor batch_stddev(const torch::Tensor& features);

// Batch-statistics layer followed by two 1x1 convolutions. Statistics are
// taken over the current rows concatenated with the cached rows; scores are
// produced for the current rows only.
class BatchHeadImpl : public torch::nn::Module {
 public:
  BatchHeadImpl(std::int64_t channels, BatchStatKind kind, bool spectral_norm);

  torch::Tensor forward(const torch::Tensor& current, const torch::Tensor& cached = {});

 private:
  BatchStatKind kind_;
  torch::Tensor bn_weight_, bn_bias_;
  SNConv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(BatchHead);

torch::Tensor batch_head_forward(BatchHead& head, const torch::Tensor& current_features,
                                 const FeatureCache& cache);

struct DiscriminatorOutput {
  torch::Tensor score;     // [N, 1, H/16, W/16]
  torch::Tensor features;  // body output, [N, C, H/16, W/16]
};

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const DiscriminatorConfig& config);

  torch::Tensor body(const torch::Tensor& image);

  // Scores against an optional cache (ignored without a batch head).
  DiscriminatorOutput forward(const torch::Tensor& image, const FeatureCache* cache = nullptr);

  // Scores against the selected cache of `bank`; with `update_cache` the
  // detached body features are pushed after scoring.
  DiscriminatorOutput forward(const torch::Tensor& image, CacheBank& bank, CacheKind which,
                              bool update_cache);

  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  torch::nn::ModuleList body_;
  BatchHead head_{nullptr};
  SNConv2d final_{nullptr};
};
TORCH_MODULE(Discriminator);

}  // namespace uvcgan
