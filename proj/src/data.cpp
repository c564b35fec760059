#include "uvcgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "uvcgan/errors.hpp"

namespace uvcgan {

namespace fs = std::filesystem;

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }
std::string to_string(Domain domain) { return domain == Domain::A ? "A" : "B"; }

fs::path DatasetSpec::dir(Split split, Domain domain) const {
  return root / (to_string(split) + to_string(domain));
}

void DatasetSpec::validate() const {
  if (image_size < 1) throw ConfigError("data.image_size must be positive");
  if ((resize_width == 0) != (resize_height == 0)) {
    throw ConfigError("data.resize_width and data.resize_height must be set together");
  }
  if (resize_width != 0 && (resize_width < image_size || resize_height < image_size)) {
    throw ConfigError("data resize target must be at least the crop size");
  }
  for (auto split : {Split::Train, Split::Test}) {
    for (auto domain : {Domain::A, Domain::B}) {
      if (!fs::is_directory(dir(split, domain))) {
        throw ConfigError("dataset directory missing: " + dir(split, domain).string());
      }
    }
  }
}

DatasetSpec DatasetSpec::anime_like(fs::path root) {
  DatasetSpec s;
  s.root = std::move(root);
  s.image_size = 256;
  s.resize_width = 286;
  s.resize_height = 286;
  return s;
}

DatasetSpec DatasetSpec::celeba_like(fs::path root) {
  DatasetSpec s;
  s.root = std::move(root);
  s.image_size = 256;
  s.resize_width = 256;
  s.resize_height = 313;
  return s;
}

Image load_example(const DatasetSpec& spec, Split split, const fs::path& file, Rng* rng) {
  Image img = read_image(file);
  const int size = spec.image_size;
  if (split == Split::Test || rng == nullptr) {
    if (img.width == size && img.height == size) return img;
    return center_crop(resize_smaller_side(img, size), size, size);
  }
  if (spec.resize_width > 0) {
    img = resize_lanczos(img, spec.resize_width, spec.resize_height);
  } else if (img.width < size || img.height < size) {
    img = resize_smaller_side(img, size);
  }
  if (img.width != size || img.height != size) {
    const int top = static_cast<int>(rng->below(static_cast<std::uint64_t>(img.height - size + 1)));
    const int left = static_cast<int>(rng->below(static_cast<std::uint64_t>(img.width - size + 1)));
    img = crop(img, top, left, size, size);
  }
  if (spec.hflip && rng->bernoulli(0.5)) img = hflip(img);
  return img;
}

DomainLoader::DomainLoader(DatasetSpec spec, Split split, Domain domain, std::uint64_t seed)
    : spec_(std::move(spec)), split_(split), rng_(seed) {
  files_ = list_images(spec_.dir(split, domain));
  if (files_.empty()) {
    throw IoError("no images in " + spec_.dir(split, domain).string());
  }
  start_epoch();
}

void DomainLoader::start_epoch() {
  if (split_ == Split::Train) {
    order_ = rng_.permutation(files_.size());
  } else {
    order_.resize(files_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }
  cursor_ = 0;
}

torch::Tensor DomainLoader::next_batch(std::size_t batch_size) {
  std::vector<torch::Tensor> items;
  items.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    if (cursor_ == order_.size()) start_epoch();
    const auto& file = files_[order_[cursor_++]];
    items.push_back(
        to_tensor(load_example(spec_, split_, file, split_ == Split::Train ? &rng_ : nullptr)));
  }
  return torch::stack(items, 0);
}

std::string DomainLoader::state() const {
  nlohmann::json j;
  j["rng"] = rng_.serialize();
  j["order"] = order_;
  j["cursor"] = cursor_;
  return j.dump();
}

void DomainLoader::restore(const std::string& state) {
  auto j = nlohmann::json::parse(state);
  rng_.deserialize(j.at("rng").get<std::string>());
  order_ = j.at("order").get<std::vector<std::size_t>>();
  cursor_ = j.at("cursor").get<std::size_t>();
  if (order_.size() != files_.size() || cursor_ > order_.size()) {
    throw ConfigError("data loader state does not match the dataset");
  }
}

torch::Tensor load_batch(DomainLoader& loader, std::size_t batch_size) {
  return loader.next_batch(batch_size);
}

namespace {

// Grayscale layout in [0, 1]: gradient background plus 1-3 flat shapes.
std::vector<float> toy_luminance(int size, Rng& rng) {
  std::vector<float> lum(static_cast<std::size_t>(size) * size);
  const double base = rng.uniform(0.15, 0.45);
  const double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      lum[static_cast<std::size_t>(y) * size + x] =
          static_cast<float>(base + gx * x / size + gy * y / size);
    }
  }
  const int shapes = 1 + static_cast<int>(rng.below(3));
  for (int s = 0; s < shapes; ++s) {
    const bool circle = rng.bernoulli(0.5);
    const double cx = rng.uniform(0.2, 0.8) * size, cy = rng.uniform(0.2, 0.8) * size;
    const double r = rng.uniform(0.12, 0.3) * size;
    const double value = rng.uniform(0.55, 1.0);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const bool inside = circle ? dx * dx + dy * dy <= r * r
                                   : std::abs(dx) <= r && std::abs(dy) <= 0.7 * r;
        if (inside) lum[static_cast<std::size_t>(y) * size + x] = static_cast<float>(value);
      }
    }
  }
  return lum;
}

Image toy_image(int size, Domain domain, Rng& rng) {
  const auto lum = toy_luminance(size, rng);
  // (offset, gain) per channel; the red/green roles swap between domains.
  const float strong[2] = {0.25f, 0.75f}, weak[2] = {0.1f, 0.5f}, blue[2] = {0.15f, 0.55f};
  const float* red = domain == Domain::A ? strong : weak;
  const float* green = domain == Domain::A ? weak : strong;
  Image img(3, size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const float l = lum[static_cast<std::size_t>(y) * size + x];
      img.at(0, y, x) = red[0] + red[1] * l;
      img.at(1, y, x) = green[0] + green[1] * l;
      img.at(2, y, x) = blue[0] + blue[1] * l;
    }
  }
  return img;
}

}  // namespace

DatasetSpec make_toy_dataset(const ToyDomainSpec& spec) {
  if (spec.image_size < 1 || spec.count < 1 || spec.test_count < 1) {
    throw ConfigError("toy dataset sizes must be positive");
  }
  DatasetSpec out;
  out.root = spec.root;
  out.image_size = spec.image_size;
  out.hflip = true;
  std::uint64_t stream = 0;
  for (auto split : {Split::Train, Split::Test}) {
    for (auto domain : {Domain::A, Domain::B}) {
      // Independent stream per (split, domain): the domains share no layouts.
      Rng rng(spec.seed * 1000003ULL + (++stream));
      const auto dir = out.dir(split, domain);
      fs::create_directories(dir);
      const int n = split == Split::Train ? spec.count : spec.test_count;
      for (int i = 0; i < n; ++i) {
        std::ostringstream name;
        name << std::setw(5) << std::setfill('0') << i << ".png";
        write_png(dir / name.str(), toy_image(spec.image_size, domain, rng));
      }
    }
  }
  return out;
}

double channel_mean(const torch::Tensor& batch, int channel) {
  return batch.select(1, channel).mean().item<double>();
}

torch::Tensor mixed_domain_batch(DomainLoader& a, DomainLoader& b, std::size_t batch_size) {
  const auto half = batch_size / 2;
  std::vector<torch::Tensor> parts;
  if (half > 0) parts.push_back(a.next_batch(half));
  parts.push_back(b.next_batch(batch_size - half));
  return torch::cat(parts, 0);
}

}  // namespace uvcgan
