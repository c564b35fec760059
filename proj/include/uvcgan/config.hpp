#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uvcgan/data.hpp"
#include "uvcgan/discriminator.hpp"
#include "uvcgan/generator.hpp"
#include "uvcgan/pretrain.hpp"
#include "uvcgan/trainer.hpp"

namespace uvcgan {

struct EvalSettings {
  std::string protocol = "consistent";
  // "stub" or a path to a TorchScript feature network.
  std::string extractor = "stub";
  std::int64_t kid_subsets = 100;
  std::uint64_t seed = 0;
};

// Everything a run needs. Text form is flat `key = value` lines with
// section prefixes (generator., discriminator., train., pretrain., data.,
// eval.); `#` starts a comment.
struct ExperimentConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  TrainConfig train;
  PretrainConfig pretrain;
  DatasetSpec data;
  // Pretraining checkpoint loaded into both generators before training.
  std::string init_generator;
  EvalSettings eval;

  // Cross-section checks; does not touch the file system.
  void validate() const;

  // Canonical text: every key, sorted, one per line.
  std::string to_text() const;
  // FNV-1a 64 of the canonical text, as 16 hex digits.
  std::string hash() const;

  // Applies `key = value`; unknown keys and malformed values throw ConfigError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  // Applies every `key = value` line of `text` on top of the current values.
  void apply(const std::string& text);

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);

  // 32x32 two-domain toy setting with small networks and 2,000 iterations.
  static ExperimentConfig toy();
};

struct ConfigKey {
  std::string name;
  std::string description;
};

// All recognized keys with a one-line description, sorted by name.
std::vector<ConfigKey> config_keys();

std::string fnv1a_hex(const std::string& bytes);

}  // namespace uvcgan
