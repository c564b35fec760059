#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace uvcgan {

// Single-file container of named arrays plus JSON metadata.
//
// Layout (all integers little-endian):
//   "UVCGCKPT"  u32 version
//   u64 metadata length, metadata JSON (UTF-8, keys sorted)
//   u64 array count, then per array:
//     u32 name length, name
//     u32 dtype length, dtype ("f32", "f64", "i64", "u8", "bool")
//     u32 ndim, i64 dims[ndim]
//     u64 byte length, row-major data
struct Archive {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> arrays;

  void add(std::string name, const torch::Tensor& tensor);
  bool contains(const std::string& name) const;
  const torch::Tensor& get(const std::string& name) const;
  // All arrays whose name starts with `prefix`, prefix stripped.
  std::vector<std::pair<std::string, torch::Tensor>> with_prefix(const std::string& prefix) const;
};

std::string serialize_archive(const Archive& archive);
Archive deserialize_archive(const std::string& bytes);

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

// Named parameters and buffers of a module under `prefix/`.
void add_module_state(Archive& archive, const std::string& prefix, const torch::nn::Module& module);
// Copies arrays `prefix/<name>` into the module; every parameter and buffer
// must be present with a matching shape.
void load_module_state(const Archive& archive, const std::string& prefix, torch::nn::Module& module);

}  // namespace uvcgan
