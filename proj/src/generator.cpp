#include "uvcgan/generator.hpp"

#include <cmath>
#include <string>

#include "uvcgan/errors.hpp"

namespace uvcgan {

namespace {

constexpr double kLeakySlope = 0.2;

torch::nn::Conv2d conv3x3(std::int64_t in, std::int64_t out, std::int64_t stride = 1) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Sequential conv_block(std::int64_t in, std::int64_t out) {
  return torch::nn::Sequential(
      conv3x3(in, out),
      torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kLeakySlope)),
      conv3x3(out, out),
      torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kLeakySlope)));
}

}  // namespace

void GeneratorConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0) {
    throw ConfigError("generator.image_size must be a positive multiple of 16, got " +
                      std::to_string(image_size));
  }
  if (in_channels < 1 || out_channels < 1) {
    throw ConfigError("generator channel counts must be >= 1");
  }
  for (auto f : features) {
    if (f < 1) throw ConfigError("generator.features entries must be >= 1");
  }
  if (token_dim < 1 || transformer_blocks < 1 || heads < 1 || style_dim < 1) {
    throw ConfigError("generator transformer dimensions must be >= 1");
  }
  if (token_dim % heads != 0) {
    throw ConfigError("generator.token_dim must be divisible by generator.heads");
  }
  if (!(demod_epsilon > 0.0)) {
    throw ConfigError("generator.demod_epsilon must be positive");
  }
}

std::int64_t GeneratorConfig::decoder_in_channels(int level) const {
  if (level < 1 || level > 4) {
    throw std::out_of_range("decoder level must be in 1..4, got " + std::to_string(level));
  }
  return 2 * features[level - 1];
}

std::int64_t GeneratorConfig::decoder_out_channels(int level) const {
  if (level < 1 || level > 4) {
    throw std::out_of_range("decoder level must be in 1..4, got " + std::to_string(level));
  }
  return level > 1 ? features[level - 2] : features[0];
}

GeneratorConfig GeneratorConfig::toy() {
  GeneratorConfig c;
  c.image_size = 32;
  c.features = {16, 32, 64, 128};
  c.token_dim = 64;
  c.transformer_blocks = 2;
  c.heads = 4;
  c.style_dim = 64;
  return c;
}

torch::Tensor modulate(const torch::Tensor& weight, const torch::Tensor& style) {
  if (weight.dim() != 4) {
    throw ShapeError("modulate: weight must be [out, in, kh, kw]");
  }
  if (style.dim() != 1 || style.size(0) != weight.size(1)) {
    throw ShapeError("modulate: style length " + std::to_string(style.numel()) +
                     " does not match weight in-channels " + std::to_string(weight.size(1)));
  }
  return weight * style.view({1, -1, 1, 1});
}

torch::Tensor demodulate(const torch::Tensor& modulated, double epsilon) {
  if (modulated.dim() != 4) {
    throw ShapeError("demodulate: weight must be [out, in, kh, kw]");
  }
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("demodulate: epsilon must be positive");
  }
  auto norm = (modulated.square().sum({1, 2, 3}, /*keepdim=*/true) + epsilon).rsqrt();
  return modulated * norm;
}

torch::Tensor modulated_conv(const torch::Tensor& x, const torch::Tensor& weight,
                             const torch::Tensor& style, double epsilon) {
  if (x.dim() != 4 || x.size(1) != weight.size(1)) {
    throw ShapeError("modulated_conv: input channels do not match weight");
  }
  if (weight.size(2) % 2 == 0 || weight.size(3) % 2 == 0) {
    throw ShapeError("modulated_conv: kernel dims must be odd");
  }
  const auto batch = x.size(0);
  const bool shared = style.dim() == 1;
  if (!shared && (style.dim() != 2 || style.size(0) != batch)) {
    throw ShapeError("modulated_conv: style must be [in] or [N, in]");
  }
  auto opts = torch::nn::functional::Conv2dFuncOptions().padding(
      {weight.size(2) / 2, weight.size(3) / 2});

  // Each sample has its own kernel. Samples are convolved one at a time so a
  // batch gives exactly the same numbers as the samples taken singly.
  std::vector<torch::Tensor> outputs;
  outputs.reserve(batch);
  torch::Tensor shared_kernel;
  if (shared) shared_kernel = demodulate(modulate(weight, style), epsilon);
  for (std::int64_t n = 0; n < batch; ++n) {
    auto kernel = shared ? shared_kernel : demodulate(modulate(weight, style[n]), epsilon);
    outputs.push_back(torch::nn::functional::conv2d(x.narrow(0, n, 1), kernel, opts));
  }
  return torch::cat(outputs, 0);
}

ModulatedConv2dImpl::ModulatedConv2dImpl(std::int64_t in_channels, std::int64_t out_channels,
                                         std::int64_t kernel_size, double epsilon)
    : epsilon_(epsilon) {
  weight = register_parameter(
      "weight", torch::randn({out_channels, in_channels, kernel_size, kernel_size}));
  bias = register_parameter("bias", torch::zeros({out_channels}));
}

torch::Tensor ModulatedConv2dImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  return modulated_conv(x, weight, style, epsilon_) + bias.view({1, -1, 1, 1});
}

TransformerBlockImpl::TransformerBlockImpl(std::int64_t dim, std::int64_t heads,
                                           std::int64_t mlp_ratio)
    : heads_(heads) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, mlp_ratio * dim));
  fc2_ = register_module("fc2", torch::nn::Linear(mlp_ratio * dim, dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
  const auto n = x.size(0);
  const auto len = x.size(1);
  const auto dim = x.size(2);
  const auto head_dim = dim / heads_;

  auto qkv = qkv_(norm1_(x)).view({n, len, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0], k = qkv[1], v = qkv[2];
  auto attn = torch::softmax(
      torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim)), -1);
  auto mixed = torch::matmul(attn, v).transpose(1, 2).reshape({n, len, dim});
  auto h = x + proj_(mixed);
  return h + fc2_(torch::gelu(fc1_(norm2_(h))));
}

ExtendedViTImpl::ExtendedViTImpl(const GeneratorConfig& config)
    : token_count_(config.token_count()), feature_dim_(config.features[3]) {
  const auto pos_dim = config.token_dim;
  position_embedding = register_parameter(
      "position_embedding", torch::randn({token_count_, pos_dim}) * 0.02);
  style_token = register_parameter("style_token", torch::randn({config.token_dim}) * 0.02);
  embed_ = register_module("embed", torch::nn::Linear(feature_dim_ + pos_dim, config.token_dim));
  for (std::int64_t i = 0; i < config.transformer_blocks; ++i) {
    blocks_->push_back(TransformerBlock(config.token_dim, config.heads));
  }
  register_module("blocks", blocks_);
  norm_ = register_module(
      "norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({config.token_dim})));
  unembed_ = register_module("unembed", torch::nn::Linear(config.token_dim, feature_dim_));
  if (config.style_dim != config.token_dim) {
    style_head_ = register_module("style_head",
                                  torch::nn::Linear(config.token_dim, config.style_dim));
  }
}

EvitOutput ExtendedViTImpl::forward(const torch::Tensor& tokens) {
  if (tokens.dim() != 3 || tokens.size(1) != token_count_ || tokens.size(2) != feature_dim_) {
    throw ShapeError("evit_forward: expected [N, " + std::to_string(token_count_) + ", " +
                     std::to_string(feature_dim_) + "] tokens, got " +
                     std::to_string(tokens.size(tokens.dim() > 1 ? 1 : 0)) + " tokens");
  }
  const auto n = tokens.size(0);
  auto pos = position_embedding.unsqueeze(0).expand({n, -1, -1});
  auto h = embed_(torch::cat({tokens, pos}, 2));
  auto style = style_token.view({1, 1, -1}).expand({n, 1, -1});
  h = torch::cat({h, style}, 1);
  for (auto& block : *blocks_) {
    h = block->as<TransformerBlock>()->forward(h);
  }
  h = norm_(h);

  EvitOutput out;
  out.tokens = unembed_(h.narrow(1, 0, token_count_));
  out.style = h.select(1, token_count_);
  if (style_head_) out.style = style_head_(out.style);
  return out;
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  const auto& f = config_.features;

  for (int level = 1; level <= 4; ++level) {
    const auto in = level == 1 ? config_.in_channels : f[level - 1];
    encoders_->push_back(conv_block(in, f[level - 1]));
    const auto down_out = level < 4 ? f[level] : f[3];
    downsamples_->push_back(torch::nn::Sequential(
        conv3x3(f[level - 1], down_out, 2),
        torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kLeakySlope))));
  }
  vit_ = register_module("vit", ExtendedViT(config_));

  for (int level = 1; level <= 4; ++level) {
    const auto up_in = level == 4 ? f[3] : config_.decoder_out_channels(level + 1);
    upsamples_->push_back(torch::nn::Sequential(
        torch::nn::Upsample(torch::nn::UpsampleOptions()
                                .scale_factor(std::vector<double>{2.0, 2.0})
                                .mode(torch::kNearest)),
        conv3x3(up_in, f[level - 1]),
        torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kLeakySlope))));
    decoders_->push_back(ModulatedConv2d(config_.decoder_in_channels(level),
                                         config_.decoder_out_channels(level), 3,
                                         config_.demod_epsilon));
    if (config_.style_modulation) {
      torch::nn::Linear proj(config_.style_dim, config_.decoder_in_channels(level));
      torch::NoGradGuard no_grad;
      proj->weight.zero_();
      proj->bias.fill_(1.0);
      style_projections_->push_back(proj);
    }
  }
  register_module("encoders", encoders_);
  register_module("downsamples", downsamples_);
  register_module("upsamples", upsamples_);
  register_module("decoders", decoders_);
  if (config_.style_modulation) register_module("style_projections", style_projections_);
  output_ = register_module(
      "output",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(f[0], config_.out_channels, 1)));
}

torch::Tensor GeneratorImpl::style_project(const torch::Tensor& style_state, int level) {
  if (level < 1 || level > 4) {
    throw std::out_of_range("style_project: level must be in 1..4, got " +
                            std::to_string(level));
  }
  if (!config_.style_modulation) {
    return torch::ones({style_state.size(0), config_.decoder_in_channels(level)},
                       style_state.options());
  }
  return style_projections_[level - 1]->as<torch::nn::Linear>()->forward(style_state);
}

std::vector<torch::Tensor> GeneratorImpl::style_projection_parameters() {
  if (!config_.style_modulation) return {};
  return style_projections_->parameters();
}

GeneratorOutput GeneratorImpl::forward_with_style(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != config_.in_channels ||
      image.size(2) != config_.image_size || image.size(3) != config_.image_size) {
    throw ShapeError("generator: expected [N, " + std::to_string(config_.in_channels) + ", " +
                     std::to_string(config_.image_size) + ", " +
                     std::to_string(config_.image_size) + "] input");
  }
  std::array<torch::Tensor, 4> skips;
  auto h = image;
  for (int level = 1; level <= 4; ++level) {
    h = encoders_[level - 1]->as<torch::nn::Sequential>()->forward(h);
    skips[level - 1] = h;
    h = downsamples_[level - 1]->as<torch::nn::Sequential>()->forward(h);
  }

  const auto n = h.size(0);
  const auto c = h.size(1);
  const auto side = h.size(2);
  auto evit = vit_(h.flatten(2).transpose(1, 2));
  h = evit.tokens.transpose(1, 2).reshape({n, c, side, side});

  for (int level = 4; level >= 1; --level) {
    h = upsamples_[level - 1]->as<torch::nn::Sequential>()->forward(h);
    h = torch::cat({skips[level - 1], h}, 1);
    auto s = style_project(evit.style, level);
    h = decoders_[level - 1]->as<ModulatedConv2d>()->forward(h, s);
    h = torch::leaky_relu(h, kLeakySlope);
  }
  return {torch::tanh(output_(h)), evit.style};
}

}  // namespace uvcgan
