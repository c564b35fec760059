#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace uvcgan {

// Planar float image, [channels][height][width], values nominally in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool same_shape(const Image& other) const {
    return channels == other.channels && height == other.height && width == other.width;
  }
};

// Decodes PNG or JPEG (by signature) into RGB, values / 255.
Image read_image(const std::filesystem::path& path);

// Writes an 8-bit RGB (or gray) PNG. Values are clamped to [0, 1] and
// rounded to the nearest level.
void write_png(const std::filesystem::path& path, const Image& image);

// Sorted list of *.png / *.jpg / *.jpeg files in a directory.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Separable Lanczos resampling with a = 3, horizontal pass first. When
// shrinking, the kernel is stretched by the scale factor so the filter
// band-limits the input (no aliasing); taps are normalized per output pixel.
// Each pass clamps to [0, 1] and rounds to 8-bit levels, reproducing PIL's
// LANCZOS on 8-bit images.
Image resize_lanczos(const Image& image, int out_width, int out_height);

// Scales the smaller side to `size` (the other side is truncated, as
// torchvision's Resize does) with Lanczos.
Image resize_smaller_side(const Image& image, int size);

Image crop(const Image& image, int top, int left, int height, int width);
Image center_crop(const Image& image, int height, int width);
Image hflip(const Image& image);

// [C,H,W] float tensor in [-1, 1] and back (clamped).
torch::Tensor to_tensor(const Image& image);
Image from_tensor(const torch::Tensor& chw);

}  // namespace uvcgan
