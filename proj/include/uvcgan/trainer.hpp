#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "uvcgan/checkpoint.hpp"
#include "uvcgan/discriminator.hpp"
#include "uvcgan/generator.hpp"
#include "uvcgan/losses.hpp"

namespace uvcgan {

enum class Scheduler { Constant, Linear };

Scheduler parse_scheduler(const std::string& name);
std::string to_string(Scheduler scheduler);

struct TrainConfig {
  std::int64_t total_iters = 1'000'000;
  std::int64_t batch_size = 1;
  double lr_gen = 1e-4;
  double lr_disc = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.99;
  Scheduler scheduler = Scheduler::Constant;
  double ema_momentum = 0.9999;
  std::int64_t cache_capacity = 3;
  LossWeights weights;
  std::uint64_t seed = 0;
  // Metrics line every n iterations (0 disables).
  std::int64_t metrics_every = 1;
  // Intermediate checkpoint every n iterations (0 disables).
  std::int64_t checkpoint_every = 0;

  void validate() const;
};

struct LearningRates {
  double gen = 0.0;
  double disc = 0.0;
};

// Constant, or constant for the first half then linearly annealed to zero
// at total_iters.
LearningRates lr_at(std::int64_t iter, const TrainConfig& config);

// avg <- m * avg + (1 - m) * live, in place and in avg's dtype.
void ema_update(torch::Tensor& avg, const torch::Tensor& live, double momentum);

// Keeps an exponential average of a module's parameters in float64
// accumulators and mirrors it into a same-shaped module. Buffers are copied.
class EmaAverager {
 public:
  EmaAverager(torch::nn::Module& live, torch::nn::Module& average, double momentum);

  void update();
  // Resets the accumulators to the live weights.
  void reset();

  double momentum() const { return momentum_; }
  const std::vector<torch::Tensor>& shadow() const { return shadow_; }
  void set_shadow(const std::vector<torch::Tensor>& values);

 private:
  void publish();

  torch::nn::Module* live_;
  torch::nn::Module* average_;
  double momentum_;
  std::vector<torch::Tensor> shadow_;
};

struct StepMetrics {
  std::int64_t iter = 0;
  double loss_disc_a = 0.0, loss_disc_b = 0.0;
  double loss_gp_a = 0.0, loss_gp_b = 0.0;
  double loss_gan_a = 0.0, loss_gan_b = 0.0;
  double loss_cyc_a = 0.0, loss_cyc_b = 0.0;
  double loss_idt_a = 0.0, loss_idt_b = 0.0;
  double loss_consist_a = 0.0, loss_consist_b = 0.0;
  double loss_gen = 0.0;
  double lr_gen = 0.0, lr_disc = 0.0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

enum class AblationToggle { NoStyleMod, NoBatchHead, LegacyTraining };

AblationToggle parse_ablation(const std::string& name);

struct ModelConfigs {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  TrainConfig train;
};

// no_style_mod: s fixed to ones. no_batch_head: plain final conv, caches
// unused. legacy_training: linear scheduler, centered gradient penalty on
// interpolates (lambda 0.1, gamma 100) and no generator averaging.
ModelConfigs ablation_variant(ModelConfigs config, AblationToggle toggle);

// CycleGAN state: G_AB, G_BA, D_A (judges domain A), D_B, EMA copies of both
// generators, Adam optimizers and the four feature caches.
class Trainer {
 public:
  Trainer(const GeneratorConfig& generator, const DiscriminatorConfig& discriminator,
          const TrainConfig& train, std::string config_hash = "");

  // One discriminator update, one generator update, one EMA update.
  StepMetrics train_step(const torch::Tensor& a, const torch::Tensor& b);

  // Copies generator weights (prefix "generator/") from a pretraining
  // checkpoint into both generators and their averages.
  void load_pretrained(const Archive& archive);

  Archive to_archive() const;
  void from_archive(const Archive& archive);
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

  std::int64_t iteration() const { return iter_; }
  const TrainConfig& config() const { return train_; }
  const std::string& config_hash() const { return config_hash_; }
  CacheBank& caches() { return caches_; }

  Generator gen_ab{nullptr}, gen_ba{nullptr};
  Generator ema_ab{nullptr}, ema_ba{nullptr};
  Discriminator disc_a{nullptr}, disc_b{nullptr};

  std::vector<torch::Tensor> generator_parameters() const;
  std::vector<torch::Tensor> discriminator_parameters() const;

 private:
  torch::Tensor penalty(Discriminator& disc, const FeatureCache& cache, const torch::Tensor& real,
                        const torch::Tensor& fake);
  void set_learning_rates(const LearningRates& lr);

  GeneratorConfig gen_config_;
  DiscriminatorConfig disc_config_;
  TrainConfig train_;
  std::string config_hash_;
  std::unique_ptr<torch::optim::Adam> opt_gen_, opt_disc_;
  std::unique_ptr<EmaAverager> avg_ab_, avg_ba_;
  CacheBank caches_;
  std::int64_t iter_ = 0;
};

}  // namespace uvcgan
