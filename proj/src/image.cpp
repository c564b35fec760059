#include "uvcgan/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <numbers>

#include <jpeglib.h>
#include <png.h>

#include "uvcgan/errors.hpp"

namespace uvcgan {

namespace fs = std::filesystem;

namespace {

Image from_interleaved(const unsigned char* pixels, int width, int height, int channels) {
  Image img(channels, height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.at(c, y, x) = pixels[(static_cast<std::size_t>(y) * width + x) * channels + c] / 255.0f;
      }
    }
  }
  return img;
}

Image read_png(const fs::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  return from_interleaved(buffer.data(), static_cast<int>(png.width),
                          static_cast<int>(png.height), 3);
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw IoError("cannot open " + path.string());

  jpeg_decompress_struct info;
  JpegErrorManager err;
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<unsigned char> pixels;
  int width = 0, height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&info);
    throw IoError("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&info);
  jpeg_stdio_src(&info, file.get());
  jpeg_read_header(&info, TRUE);
  info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  width = static_cast<int>(info.output_width);
  height = static_cast<int>(info.output_height);
  pixels.resize(static_cast<std::size_t>(width) * height * 3);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(info.output_scanline) * width * 3;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return from_interleaved(pixels.data(), width, height, 3);
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  x *= std::numbers::pi;
  return std::sin(x) / x;
}

double lanczos3(double x) {
  if (x > -3.0 && x < 3.0) return sinc(x) * sinc(x / 3.0);
  return 0.0;
}

struct Taps {
  int first = 0;
  std::vector<double> weights;
};

// Per-output-pixel filter taps along one axis.
// Rounds half up to one of 256 levels in [0, 1], as an 8-bit pass does.
float quantize8(double v) {
  return static_cast<float>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5) / 255.0);
}

std::vector<Taps> lanczos_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  const double filter_scale = std::max(scale, 1.0);
  const double support = 3.0 * filter_scale;
  std::vector<Taps> taps(out_size);
  for (int i = 0; i < out_size; ++i) {
    const double center = (i + 0.5) * scale;
    const int lo = std::max(static_cast<int>(center - support + 0.5), 0);
    const int hi = std::min(static_cast<int>(center + support + 0.5), in_size);
    Taps& t = taps[i];
    t.first = lo;
    double total = 0.0;
    for (int x = lo; x < hi; ++x) {
      const double w = lanczos3((x - center + 0.5) / filter_scale);
      t.weights.push_back(w);
      total += w;
    }
    if (total != 0.0) {
      for (double& w : t.weights) w /= total;
    }
  }
  return taps;
}

}  // namespace

Image read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  if (in.gcount() >= 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  if (in.gcount() >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) {
    return read_jpeg(path);
  }
  throw IoError("unsupported image format: " + path.string());
}

void write_png(const fs::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ShapeError("write_png: only 1- or 3-channel images are supported");
  }
  std::vector<unsigned char> buffer(image.data.size());
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        buffer[(static_cast<std::size_t>(y) * image.width + x) * image.channels + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

Image resize_lanczos(const Image& image, int out_width, int out_height) {
  if (out_width < 1 || out_height < 1) throw ShapeError("resize: output size must be positive");
  if (out_width == image.width && out_height == image.height) return image;

  Image horizontal = image;
  if (out_width != image.width) {
    auto taps = lanczos_taps(image.width, out_width);
    horizontal = Image(image.channels, image.height, out_width);
    for (int c = 0; c < image.channels; ++c) {
      for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < out_width; ++x) {
          const auto& t = taps[x];
          double acc = 0.0;
          for (std::size_t k = 0; k < t.weights.size(); ++k) {
            acc += t.weights[k] * image.at(c, y, t.first + static_cast<int>(k));
          }
          horizontal.at(c, y, x) = quantize8(acc);
        }
      }
    }
  }
  if (out_height == horizontal.height) return horizontal;

  auto taps = lanczos_taps(horizontal.height, out_height);
  Image out(horizontal.channels, out_height, out_width);
  for (int c = 0; c < out.channels; ++c) {
    for (int y = 0; y < out_height; ++y) {
      const auto& t = taps[y];
      for (int x = 0; x < out_width; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.weights.size(); ++k) {
          acc += t.weights[k] * horizontal.at(c, t.first + static_cast<int>(k), x);
        }
        out.at(c, y, x) = quantize8(acc);
      }
    }
  }
  return out;
}

Image resize_smaller_side(const Image& image, int size) {
  if (image.width <= image.height) {
    const int h = static_cast<int>(static_cast<std::int64_t>(size) * image.height / image.width);
    return resize_lanczos(image, size, h);
  }
  const int w = static_cast<int>(static_cast<std::int64_t>(size) * image.width / image.height);
  return resize_lanczos(image, w, size);
}

Image crop(const Image& image, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || top + height > image.height || left + width > image.width) {
    throw ShapeError("crop: window outside image");
  }
  Image out(image.channels, height, width);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, top + y, left + x);
    }
  }
  return out;
}

Image center_crop(const Image& image, int height, int width) {
  return crop(image, (image.height - height) / 2, (image.width - width) / 2, height, width);
}

Image hflip(const Image& image) {
  Image out(image.channels, image.height, image.width);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
      }
    }
  }
  return out;
}

torch::Tensor to_tensor(const Image& image) {
  auto t = torch::from_blob(const_cast<float*>(image.data.data()),
                            {image.channels, image.height, image.width}, torch::kFloat32)
               .clone();
  return t * 2.0f - 1.0f;
}

Image from_tensor(const torch::Tensor& chw) {
  if (chw.dim() != 3) throw ShapeError("from_tensor: expected [C,H,W]");
  auto t = ((chw.detach().to(torch::kFloat32).cpu() + 1.0f) * 0.5f).clamp(0.0f, 1.0f).contiguous();
  Image img(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
  std::memcpy(img.data.data(), t.data_ptr<float>(), img.data.size() * sizeof(float));
  return img;
}

}  // namespace uvcgan
