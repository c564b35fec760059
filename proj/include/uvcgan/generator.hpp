#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace uvcgan {

struct GeneratorConfig {
  std::int64_t image_size = 256;
  std::int64_t in_channels = 3;
  std::int64_t out_channels = 3;
  // Channel widths of encoder levels B_1..B_4; decoder blocks mirror them.
  std::array<std::int64_t, 4> features{48, 96, 192, 384};
  std::int64_t token_dim = 384;
  std::int64_t transformer_blocks = 12;
  std::int64_t heads = 6;
  std::int64_t style_dim = 384;
  bool style_modulation = true;
  double demod_epsilon = 1e-8;

  void validate() const;

  std::int64_t bottleneck_size() const { return image_size / 16; }
  std::int64_t token_count() const { return bottleneck_size() * bottleneck_size(); }
  // Input width of decoder block M_level (skip concatenated with upsample).
  std::int64_t decoder_in_channels(int level) const;
  std::int64_t decoder_out_channels(int level) const;

  static GeneratorConfig toy();
};

// w'[j,i,x,y] = s[i] * w[j,i,x,y]; w is [out, in, kh, kw], s is [in].
torch::Tensor modulate(const torch::Tensor& weight, const torch::Tensor& style);

// Rescales every output channel of w' to unit L2 norm (up to epsilon).
torch::Tensor demodulate(const torch::Tensor& modulated, double epsilon = 1e-8);

// Same-padded convolution of x [N, in, H, W] with demodulate(modulate(w, s_n))
// for every sample n. `style` is [N, in] or a shared [in] vector.
torch::Tensor modulated_conv(const torch::Tensor& x, const torch::Tensor& weight,
                             const torch::Tensor& style, double epsilon = 1e-8);

class ModulatedConv2dImpl : public torch::nn::Module {
 public:
  ModulatedConv2dImpl(std::int64_t in_channels, std::int64_t out_channels,
                      std::int64_t kernel_size, double epsilon = 1e-8);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);

  std::int64_t in_channels() const { return weight.size(1); }

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  double epsilon_;
};
TORCH_MODULE(ModulatedConv2d);

class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t mlp_ratio = 4);

  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::int64_t heads_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr}, fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(TransformerBlock);

struct EvitOutput {
  torch::Tensor tokens;  // [N, L, feature]
  torch::Tensor style;   // [N, style_dim]
};

// Transformer bottleneck. Each bottleneck pixel is a token; a learnable
// positional embedding is concatenated along the feature axis before the
// input projection, and one learnable style token is appended to the
// sequence. Its output state is returned separately as the inferred style.
class ExtendedViTImpl : public torch::nn::Module {
 public:
  explicit ExtendedViTImpl(const GeneratorConfig& config);

  EvitOutput forward(const torch::Tensor& tokens);

  std::int64_t token_count() const { return token_count_; }

  torch::Tensor position_embedding;
  torch::Tensor style_token;

 private:
  std::int64_t token_count_;
  std::int64_t feature_dim_;
  torch::nn::Linear embed_{nullptr}, unembed_{nullptr}, style_head_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::ModuleList blocks_;
};
TORCH_MODULE(ExtendedViT);

struct GeneratorOutput {
  torch::Tensor image;   // [N, out, H, W] in [-1, 1]
  torch::Tensor style;   // [N, style_dim], output state of the style token
};

// UNet with four encoder levels B_i, a transformer bottleneck and four
// decoder levels: U_i upsamples (nearest + conv), the result is concatenated
// with the skip from B_i and fed to the modulated convolution M_i whose
// style vector s_i is an affine function of the style token state.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& config);

  torch::Tensor forward(const torch::Tensor& image) { return forward_with_style(image).image; }
  GeneratorOutput forward_with_style(const torch::Tensor& image);

  // s_level for level in 1..4. Returns [N, decoder_in_channels(level)].
  torch::Tensor style_project(const torch::Tensor& style_state, int level);

  // Parameters of the four style projections (empty when modulation is off).
  std::vector<torch::Tensor> style_projection_parameters();

  const GeneratorConfig& config() const { return config_; }

 private:
  GeneratorConfig config_;
  torch::nn::Conv2d input_{nullptr}, output_{nullptr};
  torch::nn::ModuleList encoders_, downsamples_, upsamples_, decoders_, style_projections_;
  ExtendedViT vit_{nullptr};
};
TORCH_MODULE(Generator);

}  // namespace uvcgan
