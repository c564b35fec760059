#include "uvcgan/trainer.hpp"

#include <chrono>
#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "uvcgan/errors.hpp"

namespace uvcgan {

Scheduler parse_scheduler(const std::string& name) {
  if (name == "constant") return Scheduler::Constant;
  if (name == "linear") return Scheduler::Linear;
  throw ConfigError("unknown scheduler '" + name + "' (constant|linear)");
}

std::string to_string(Scheduler scheduler) {
  return scheduler == Scheduler::Constant ? "constant" : "linear";
}

void TrainConfig::validate() const {
  if (total_iters < 1) throw ConfigError("train.total_iters must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr_gen > 0.0) || !(lr_disc > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) {
    throw ConfigError("train.ema_momentum must lie in [0, 1)");
  }
  if (cache_capacity < 0) throw ConfigError("train.cache_capacity must be >= 0");
  if (metrics_every < 0 || checkpoint_every < 0) {
    throw ConfigError("train.metrics_every and train.checkpoint_every must be >= 0");
  }
  weights.validate();
}

LearningRates lr_at(std::int64_t iter, const TrainConfig& config) {
  double factor = 1.0;
  if (config.scheduler == Scheduler::Linear) {
    const double half = static_cast<double>(config.total_iters) / 2.0;
    const double past = std::max(0.0, static_cast<double>(iter) - half);
    factor = std::max(0.0, 1.0 - past / half);
  }
  return {config.lr_gen * factor, config.lr_disc * factor};
}

void ema_update(torch::Tensor& avg, const torch::Tensor& live, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("ema_update: momentum must lie in [0, 1)");
  }
  if (avg.sizes() != live.sizes()) throw ShapeError("ema_update: shape mismatch");
  torch::NoGradGuard no_grad;
  avg.mul_(momentum).add_(live.to(avg.scalar_type()), 1.0 - momentum);
}

EmaAverager::EmaAverager(torch::nn::Module& live, torch::nn::Module& average, double momentum)
    : live_(&live), average_(&average), momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("EmaAverager: momentum must lie in [0, 1)");
  }
  if (live.parameters().size() != average.parameters().size()) {
    throw ShapeError("EmaAverager: modules differ in parameter count");
  }
  reset();
}

void EmaAverager::reset() {
  torch::NoGradGuard no_grad;
  shadow_.clear();
  for (const auto& p : live_->parameters()) shadow_.push_back(p.detach().to(torch::kFloat64).clone());
  publish();
}

void EmaAverager::update() {
  torch::NoGradGuard no_grad;
  const auto live = live_->parameters();
  for (std::size_t i = 0; i < shadow_.size(); ++i) ema_update(shadow_[i], live[i], momentum_);
  publish();
}

void EmaAverager::set_shadow(const std::vector<torch::Tensor>& values) {
  if (values.size() != shadow_.size()) throw ShapeError("EmaAverager: shadow count mismatch");
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].sizes() != shadow_[i].sizes()) throw ShapeError("EmaAverager: shadow shape mismatch");
    shadow_[i].copy_(values[i]);
  }
  publish();
}

void EmaAverager::publish() {
  torch::NoGradGuard no_grad;
  auto avg = average_->parameters();
  for (std::size_t i = 0; i < shadow_.size(); ++i) avg[i].copy_(shadow_[i]);
  auto live_buffers = live_->buffers();
  auto avg_buffers = average_->buffers();
  for (std::size_t i = 0; i < avg_buffers.size(); ++i) avg_buffers[i].copy_(live_buffers[i]);
}

nlohmann::json StepMetrics::to_json() const {
  return {{"iter", iter},
          {"loss_disc_a", loss_disc_a},
          {"loss_disc_b", loss_disc_b},
          {"loss_gp_a", loss_gp_a},
          {"loss_gp_b", loss_gp_b},
          {"loss_gan_a", loss_gan_a},
          {"loss_gan_b", loss_gan_b},
          {"loss_cyc_a", loss_cyc_a},
          {"loss_cyc_b", loss_cyc_b},
          {"loss_idt_a", loss_idt_a},
          {"loss_idt_b", loss_idt_b},
          {"loss_consist_a", loss_consist_a},
          {"loss_consist_b", loss_consist_b},
          {"loss_gen", loss_gen},
          {"lr_gen", lr_gen},
          {"lr_disc", lr_disc},
          {"seconds", seconds}};
}

AblationToggle parse_ablation(const std::string& name) {
  if (name == "no_style_mod") return AblationToggle::NoStyleMod;
  if (name == "no_batch_head") return AblationToggle::NoBatchHead;
  if (name == "legacy_training") return AblationToggle::LegacyTraining;
  throw ConfigError("unknown ablation '" + name +
                    "' (no_style_mod|no_batch_head|legacy_training)");
}

ModelConfigs ablation_variant(ModelConfigs config, AblationToggle toggle) {
  switch (toggle) {
    case AblationToggle::NoStyleMod:
      config.generator.style_modulation = false;
      break;
    case AblationToggle::NoBatchHead:
      config.discriminator.batch_head = false;
      break;
    case AblationToggle::LegacyTraining:
      config.train.scheduler = Scheduler::Linear;
      config.train.weights.gp_mode = GpMode::Legacy;
      config.train.weights.lambda_gp = 0.1;
      config.train.weights.legacy_gp_gamma = 100.0;
      config.train.ema_momentum = 0.0;
      break;
  }
  return config;
}

namespace {

void set_requires_grad(torch::nn::Module& module, bool value) {
  for (auto& p : module.parameters()) p.set_requires_grad(value);
}

double scalar(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

void check_finite(const torch::Tensor& loss, const char* what, const StepMetrics& metrics) {
  if (!std::isfinite(loss.item<double>())) {
    throw NonFiniteLossError(std::string("non-finite ") + what + " at iteration " +
                                 std::to_string(metrics.iter),
                             metrics.to_json().dump());
  }
}

void add_optimizer_state(Archive& archive, const std::string& prefix,
                         torch::optim::Adam& optimizer) {
  const auto& params = optimizer.param_groups().at(0).params();
  auto& state = optimizer.state();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = state.find(params[i].unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    const auto key = prefix + "/" + std::to_string(i);
    archive.add(key + "/exp_avg", s.exp_avg());
    archive.add(key + "/exp_avg_sq", s.exp_avg_sq());
    archive.add(key + "/step", torch::tensor({s.step()}, torch::kInt64));
  }
}

void load_optimizer_state(const Archive& archive, const std::string& prefix,
                          torch::optim::Adam& optimizer) {
  const auto& params = optimizer.param_groups().at(0).params();
  auto& state = optimizer.state();
  state.clear();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto key = prefix + "/" + std::to_string(i);
    if (!archive.contains(key + "/step")) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(archive.get(key + "/step").item<std::int64_t>());
    s->exp_avg(archive.get(key + "/exp_avg").clone());
    s->exp_avg_sq(archive.get(key + "/exp_avg_sq").clone());
    if (s->exp_avg().sizes() != params[i].sizes()) {
      throw ShapeError("optimizer state '" + key + "' does not match its parameter");
    }
    state[params[i].unsafeGetTensorImpl()] = std::move(s);
  }
}

at::CPUGeneratorImpl* cpu_generator() {
  return at::check_generator<at::CPUGeneratorImpl>(at::detail::getDefaultCPUGenerator());
}

}  // namespace

Trainer::Trainer(const GeneratorConfig& generator, const DiscriminatorConfig& discriminator,
                 const TrainConfig& train, std::string config_hash)
    : gen_config_(generator),
      disc_config_(discriminator),
      train_(train),
      config_hash_(std::move(config_hash)),
      caches_(static_cast<std::size_t>(train.cache_capacity)) {
  generator.validate();
  discriminator.validate();
  train.validate();
  torch::manual_seed(train.seed);
  gen_ab = Generator(generator);
  gen_ba = Generator(generator);
  ema_ab = Generator(generator);
  ema_ba = Generator(generator);
  disc_a = Discriminator(discriminator);
  disc_b = Discriminator(discriminator);
  set_requires_grad(*ema_ab, false);
  set_requires_grad(*ema_ba, false);
  ema_ab->eval();
  ema_ba->eval();
  avg_ab_ = std::make_unique<EmaAverager>(*gen_ab, *ema_ab, train.ema_momentum);
  avg_ba_ = std::make_unique<EmaAverager>(*gen_ba, *ema_ba, train.ema_momentum);

  const auto betas = std::make_tuple(train.adam_beta1, train.adam_beta2);
  opt_gen_ = std::make_unique<torch::optim::Adam>(
      generator_parameters(), torch::optim::AdamOptions(train.lr_gen).betas(betas));
  opt_disc_ = std::make_unique<torch::optim::Adam>(
      discriminator_parameters(), torch::optim::AdamOptions(train.lr_disc).betas(betas));
}

std::vector<torch::Tensor> Trainer::generator_parameters() const {
  auto params = gen_ab->parameters();
  auto more = gen_ba->parameters();
  params.insert(params.end(), more.begin(), more.end());
  return params;
}

std::vector<torch::Tensor> Trainer::discriminator_parameters() const {
  auto params = disc_a->parameters();
  auto more = disc_b->parameters();
  params.insert(params.end(), more.begin(), more.end());
  return params;
}

void Trainer::set_learning_rates(const LearningRates& lr) {
  for (auto& group : opt_gen_->param_groups()) group.options().set_lr(lr.gen);
  for (auto& group : opt_disc_->param_groups()) group.options().set_lr(lr.disc);
}

torch::Tensor Trainer::penalty(Discriminator& disc, const FeatureCache& cache,
                               const torch::Tensor& real, const torch::Tensor& fake) {
  const auto& w = train_.weights;
  if (w.lambda_gp == 0.0) return torch::zeros({}, real.options());
  Critic critic = [&](const torch::Tensor& x) { return disc->forward(x, &cache).score; };
  if (w.gp_mode == GpMode::R1) return gradient_penalty(critic, real, w.lambda_gp);
  auto alpha = torch::rand({real.size(0), 1, 1, 1}, real.options());
  auto mixed = alpha * real + (1.0 - alpha) * fake;
  return legacy_gradient_penalty(critic, mixed, w.lambda_gp, w.legacy_gp_gamma);
}

StepMetrics Trainer::train_step(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.dim() != 4 || b.dim() != 4) throw ShapeError("train_step: expected [N,C,H,W] batches");
  const auto start = std::chrono::steady_clock::now();
  const auto& w = train_.weights;
  StepMetrics m;
  m.iter = iter_ + 1;
  const auto lr = lr_at(iter_, train_);
  m.lr_gen = lr.gen;
  m.lr_disc = lr.disc;
  set_learning_rates(lr);

  // Discriminator step on detached fakes.
  torch::Tensor fake_a, fake_b;
  {
    torch::NoGradGuard no_grad;
    fake_b = gen_ab->forward(a);
    fake_a = gen_ba->forward(b);
  }
  disc_a->train();
  disc_b->train();
  set_requires_grad(*disc_a, true);
  set_requires_grad(*disc_b, true);
  auto real_a_out = disc_a->forward(a, &caches_.real_a);
  auto fake_a_out = disc_a->forward(fake_a, &caches_.fake_a);
  auto real_b_out = disc_b->forward(b, &caches_.real_b);
  auto fake_b_out = disc_b->forward(fake_b, &caches_.fake_b);
  auto loss_disc_a = disc_loss(real_a_out.score, fake_a_out.score);
  auto loss_disc_b = disc_loss(real_b_out.score, fake_b_out.score);
  auto gp_a = penalty(disc_a, caches_.real_a, a, fake_a);
  auto gp_b = penalty(disc_b, caches_.real_b, b, fake_b);
  auto loss_disc = loss_disc_a + loss_disc_b + gp_a + gp_b;
  m.loss_disc_a = scalar(loss_disc_a);
  m.loss_disc_b = scalar(loss_disc_b);
  m.loss_gp_a = scalar(gp_a);
  m.loss_gp_b = scalar(gp_b);
  check_finite(loss_disc, "discriminator loss", m);
  opt_disc_->zero_grad();
  loss_disc.backward();
  opt_disc_->step();

  if (disc_config_.batch_head) {
    caches_.real_a.push(real_a_out.features);
    caches_.fake_a.push(fake_a_out.features);
    caches_.real_b.push(real_b_out.features);
    caches_.fake_b.push(fake_b_out.features);
  }

  // Generator step against frozen discriminators.
  disc_a->eval();
  disc_b->eval();
  set_requires_grad(*disc_a, false);
  set_requires_grad(*disc_b, false);
  GeneratorLossParts parts;
  fake_b = gen_ab->forward(a);
  fake_a = gen_ba->forward(b);
  parts.gan_a = gan_loss(disc_a->forward(fake_a, &caches_.fake_a).score, 1.0);
  parts.gan_b = gan_loss(disc_b->forward(fake_b, &caches_.fake_b).score, 1.0);
  parts.cyc_a = cycle_loss(a, gen_ba->forward(fake_b));
  parts.cyc_b = cycle_loss(b, gen_ab->forward(fake_a));
  if (w.lambda_idt > 0.0) {
    parts.idt_a = identity_loss(a, gen_ba->forward(a));
    parts.idt_b = identity_loss(b, gen_ab->forward(b));
  }
  if (w.lambda_consist > 0.0) {
    parts.consist_a = consistency_loss(a, fake_b);
    parts.consist_b = consistency_loss(b, fake_a);
  }
  auto loss_gen = total_generator_loss(parts, w);
  m.loss_gan_a = scalar(parts.gan_a);
  m.loss_gan_b = scalar(parts.gan_b);
  m.loss_cyc_a = scalar(parts.cyc_a);
  m.loss_cyc_b = scalar(parts.cyc_b);
  m.loss_idt_a = scalar(parts.idt_a);
  m.loss_idt_b = scalar(parts.idt_b);
  m.loss_consist_a = scalar(parts.consist_a);
  m.loss_consist_b = scalar(parts.consist_b);
  m.loss_gen = scalar(loss_gen);
  check_finite(loss_gen, "generator loss", m);
  opt_gen_->zero_grad();
  loss_gen.backward();
  opt_gen_->step();
  set_requires_grad(*disc_a, true);
  set_requires_grad(*disc_b, true);

  avg_ab_->update();
  avg_ba_->update();
  ++iter_;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

void Trainer::load_pretrained(const Archive& archive) {
  load_module_state(archive, "generator", *gen_ab);
  load_module_state(archive, "generator", *gen_ba);
  avg_ab_->reset();
  avg_ba_->reset();
}

Archive Trainer::to_archive() const {
  Archive archive;
  archive.metadata["kind"] = "train";
  archive.metadata["config_hash"] = config_hash_;
  archive.metadata["iteration"] = iter_;
  archive.metadata["caches_serialized"] = false;
  add_module_state(archive, "gen_ab", *gen_ab);
  add_module_state(archive, "gen_ba", *gen_ba);
  add_module_state(archive, "ema_ab", *ema_ab);
  add_module_state(archive, "ema_ba", *ema_ba);
  add_module_state(archive, "disc_a", *disc_a);
  add_module_state(archive, "disc_b", *disc_b);
  const auto& shadow_ab = avg_ab_->shadow();
  const auto& shadow_ba = avg_ba_->shadow();
  for (std::size_t i = 0; i < shadow_ab.size(); ++i) {
    archive.add("ema_shadow/ab/" + std::to_string(i), shadow_ab[i]);
  }
  for (std::size_t i = 0; i < shadow_ba.size(); ++i) {
    archive.add("ema_shadow/ba/" + std::to_string(i), shadow_ba[i]);
  }
  add_optimizer_state(archive, "opt_gen", *opt_gen_);
  add_optimizer_state(archive, "opt_disc", *opt_disc_);
  archive.add("rng/torch", at::Tensor(cpu_generator()->get_state()));
  return archive;
}

void Trainer::from_archive(const Archive& archive) {
  if (archive.metadata.value("kind", "") != "train") {
    throw ConfigError("checkpoint is not a training checkpoint");
  }
  const auto found = archive.metadata.value("config_hash", "");
  if (found != config_hash_) throw ConfigMismatchError(config_hash_, found);
  load_module_state(archive, "gen_ab", *gen_ab);
  load_module_state(archive, "gen_ba", *gen_ba);
  load_module_state(archive, "ema_ab", *ema_ab);
  load_module_state(archive, "ema_ba", *ema_ba);
  load_module_state(archive, "disc_a", *disc_a);
  load_module_state(archive, "disc_b", *disc_b);
  auto read_shadow = [&](const std::string& prefix, std::size_t n) {
    std::vector<torch::Tensor> values;
    for (std::size_t i = 0; i < n; ++i) values.push_back(archive.get(prefix + std::to_string(i)));
    return values;
  };
  avg_ab_->set_shadow(read_shadow("ema_shadow/ab/", avg_ab_->shadow().size()));
  avg_ba_->set_shadow(read_shadow("ema_shadow/ba/", avg_ba_->shadow().size()));
  load_optimizer_state(archive, "opt_gen", *opt_gen_);
  load_optimizer_state(archive, "opt_disc", *opt_disc_);
  cpu_generator()->set_state(*archive.get("rng/torch").getIntrusivePtr());
  iter_ = archive.metadata.at("iteration").get<std::int64_t>();
  caches_ = CacheBank(static_cast<std::size_t>(train_.cache_capacity));
}

void Trainer::save(const std::filesystem::path& path) const { write_archive(path, to_archive()); }

void Trainer::load(const std::filesystem::path& path) { from_archive(read_archive(path)); }

}  // namespace uvcgan
