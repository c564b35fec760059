#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "uvcgan/image.hpp"
#include "uvcgan/rng.hpp"

namespace uvcgan {

enum class Split { Train, Test };
enum class Domain { A, B };

std::string to_string(Split split);
std::string to_string(Domain domain);

// Two-domain dataset in trainA/trainB/testA/testB layout.
struct DatasetSpec {
  std::filesystem::path root;
  int image_size = 256;
  // Train-time resize target applied before the random crop; 0 disables.
  int resize_width = 0;
  int resize_height = 0;
  bool hflip = true;

  std::filesystem::path dir(Split split, Domain domain) const;
  void validate() const;

  // 256 -> 286 resize, random 256 crop, flip.
  static DatasetSpec anime_like(std::filesystem::path root);
  // 178x218 -> 256x313 resize, random 256 crop, flip.
  static DatasetSpec celeba_like(std::filesystem::path root);
};

// Decodes one image and applies the split's pipeline: train images are
// resized / randomly cropped / flipped, test images are only brought to
// image_size (smaller-side resize + center crop) if they are not already.
Image load_example(const DatasetSpec& spec, Split split, const std::filesystem::path& file,
                   Rng* rng);

// Draws batches from one domain. Train order is a fresh permutation each
// epoch; test order is the sorted file order.
class DomainLoader {
 public:
  DomainLoader(DatasetSpec spec, Split split, Domain domain, std::uint64_t seed);

  // [N, C, S, S] in [-1, 1].
  torch::Tensor next_batch(std::size_t batch_size);

  std::size_t size() const { return files_.size(); }
  const std::vector<std::filesystem::path>& files() const { return files_; }

  std::string state() const;
  void restore(const std::string& state);

 private:
  void start_epoch();

  DatasetSpec spec_;
  Split split_;
  std::vector<std::filesystem::path> files_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

torch::Tensor load_batch(DomainLoader& loader, std::size_t batch_size);

// batch_size / 2 samples from `a` followed by the rest from `b`.
torch::Tensor mixed_domain_batch(DomainLoader& a, DomainLoader& b, std::size_t batch_size);

struct ToyDomainSpec {
  std::filesystem::path root;
  int image_size = 32;
  int count = 200;       // per domain, train split
  int test_count = 50;   // per domain, test split
  std::uint64_t seed = 0;
};

// Renders random shapes on a textured background; domain A is tinted
// toward red, domain B toward green. Returns the spec for the written tree.
DatasetSpec make_toy_dataset(const ToyDomainSpec& spec);

// Mean of one channel over a [N,C,H,W] batch.
double channel_mean(const torch::Tensor& batch, int channel);

}  // namespace uvcgan
