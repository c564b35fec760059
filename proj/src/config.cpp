#include "uvcgan/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "uvcgan/errors.hpp"
#include "uvcgan/evaluation.hpp"

namespace uvcgan {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest representation that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& text) {
  Int v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::array<std::int64_t, 4> parse_widths(const std::string& key, const std::string& text) {
  std::array<std::int64_t, 4> out{};
  std::stringstream ss(text);
  std::string item;
  std::size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == 4) throw ConfigError(key + ": expected exactly 4 comma-separated widths");
    out[n++] = parse_int<std::int64_t>(key, trim(item));
  }
  if (n != 4) throw ConfigError(key + ": expected exactly 4 comma-separated widths");
  return out;
}

std::string format_widths(const std::array<std::int64_t, 4>& w) {
  return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," + std::to_string(w[2]) + "," +
         std::to_string(w[3]);
}

struct Field {
  std::string description;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <typename T, typename Access>
Field int_field(std::string description, Access access) {
  return {std::move(description),
          [access](const ExperimentConfig& c) {
            return std::to_string(access(const_cast<ExperimentConfig&>(c)));
          },
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            access(c) = parse_int<T>(k, v);
          }};
}

template <typename Access>
Field double_field(std::string description, Access access) {
  return {std::move(description),
          [access](const ExperimentConfig& c) {
            return format_double(access(const_cast<ExperimentConfig&>(c)));
          },
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            access(c) = parse_double(k, v);
          }};
}

template <typename Access>
Field bool_field(std::string description, Access access) {
  return {std::move(description),
          [access](const ExperimentConfig& c) {
            return std::string(access(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          },
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            access(c) = parse_bool(k, v);
          }};
}

template <typename Access>
Field string_field(std::string description, Access access) {
  return {std::move(description),
          [access](const ExperimentConfig& c) {
            return std::string(access(const_cast<ExperimentConfig&>(c)));
          },
          [access](ExperimentConfig& c, const std::string&, const std::string& v) {
            access(c) = v;
          }};
}

#define ACCESS(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    // generator
    t["generator.image_size"] = int_field<std::int64_t>(
        "input/output side length (multiple of 16); default 256", ACCESS(generator.image_size));
    t["generator.in_channels"] =
        int_field<std::int64_t>("input channels; default 3", ACCESS(generator.in_channels));
    t["generator.out_channels"] =
        int_field<std::int64_t>("output channels; default 3", ACCESS(generator.out_channels));
    t["generator.features"] = {
        "encoder widths B_1..B_4; default 48,96,192,384",
        [](const ExperimentConfig& c) { return format_widths(c.generator.features); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          c.generator.features = parse_widths(k, v);
        }};
    t["generator.token_dim"] =
        int_field<std::int64_t>("transformer width; default 384", ACCESS(generator.token_dim));
    t["generator.transformer_blocks"] = int_field<std::int64_t>(
        "transformer depth; default 12", ACCESS(generator.transformer_blocks));
    t["generator.heads"] =
        int_field<std::int64_t>("attention heads; default 6", ACCESS(generator.heads));
    t["generator.style_dim"] =
        int_field<std::int64_t>("style token output width; default 384", ACCESS(generator.style_dim));
    t["generator.style_modulation"] = bool_field(
        "modulate decoder convolutions by the style token; default true",
        ACCESS(generator.style_modulation));
    t["generator.demod_epsilon"] = double_field("demodulation epsilon; default 1e-08",
                                                ACCESS(generator.demod_epsilon));
    // discriminator
    t["discriminator.in_channels"] =
        int_field<std::int64_t>("input channels; default 3", ACCESS(discriminator.in_channels));
    t["discriminator.features"] = {
        "widths of the four stride-2 body convolutions; default 64,128,256,512",
        [](const ExperimentConfig& c) { return format_widths(c.discriminator.features); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          c.discriminator.features = parse_widths(k, v);
        }};
    t["discriminator.batch_head"] = bool_field("use the cached batch head; default true",
                                               ACCESS(discriminator.batch_head));
    t["discriminator.stat_kind"] = {
        "batch statistic of the head, bn|bsd; default bsd",
        [](const ExperimentConfig& c) { return to_string(c.discriminator.stat_kind); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          try {
            c.discriminator.stat_kind = parse_batch_stat_kind(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(k + ": " + e.what());
          }
        }};
    t["discriminator.spectral_norm"] = bool_field(
        "spectral normalization of all convolutions; default true", ACCESS(discriminator.spectral_norm));
    // train
    t["train.total_iters"] =
        int_field<std::int64_t>("iterations; default 1000000", ACCESS(train.total_iters));
    t["train.batch_size"] = int_field<std::int64_t>("batch size; default 1", ACCESS(train.batch_size));
    t["train.lr_gen"] = double_field("generator learning rate; default 0.0001", ACCESS(train.lr_gen));
    t["train.lr_disc"] =
        double_field("discriminator learning rate; default 0.0001", ACCESS(train.lr_disc));
    t["train.adam_beta1"] = double_field("Adam beta1; default 0.5", ACCESS(train.adam_beta1));
    t["train.adam_beta2"] = double_field("Adam beta2; default 0.99", ACCESS(train.adam_beta2));
    t["train.scheduler"] = {
        "constant|linear (constant, then linear decay to 0 over the second half); default constant",
        [](const ExperimentConfig& c) { return to_string(c.train.scheduler); },
        [](ExperimentConfig& c, const std::string&, const std::string& v) {
          c.train.scheduler = parse_scheduler(v);
        }};
    t["train.ema_momentum"] =
        double_field("generator averaging momentum; default 0.9999", ACCESS(train.ema_momentum));
    t["train.cache_capacity"] = int_field<std::int64_t>("entries per feature cache; default 3",
                                                        ACCESS(train.cache_capacity));
    t["train.lambda_cyc"] =
        double_field("cycle-consistency weight; default 5", ACCESS(train.weights.lambda_cyc));
    t["train.lambda_idt"] = double_field("identity weight; default 0", ACCESS(train.weights.lambda_idt));
    t["train.lambda_consist"] = double_field("low-pass consistency weight; default 0",
                                             ACCESS(train.weights.lambda_consist));
    t["train.lambda_gp"] = double_field("gradient penalty weight; default 0.01",
                                        ACCESS(train.weights.lambda_gp));
    t["train.gp_gamma"] = double_field("center of the legacy penalty; default 100",
                                       ACCESS(train.weights.legacy_gp_gamma));
    t["train.gp_mode"] = {
        "r1 (zero-centered, on real images) | legacy (gamma-centered, on interpolates); default r1",
        [](const ExperimentConfig& c) { return to_string(c.train.weights.gp_mode); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          try {
            c.train.weights.gp_mode = parse_gp_mode(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(k + ": " + e.what());
          }
        }};
    t["train.seed"] = int_field<std::uint64_t>("seed for weights and data order; default 0",
                                               ACCESS(train.seed));
    t["train.metrics_every"] = int_field<std::int64_t>(
        "write a metrics line every n iterations (0 = never); default 1", ACCESS(train.metrics_every));
    t["train.checkpoint_every"] = int_field<std::int64_t>(
        "intermediate checkpoint every n iterations (0 = never); default 0",
        ACCESS(train.checkpoint_every));
    t["train.init_generator"] = string_field(
        "pretraining checkpoint loaded into both generators (empty = random init); default empty",
        ACCESS(init_generator));
    // pretrain
    t["pretrain.patch_size"] =
        int_field<std::int64_t>("mask patch side; default 32", ACCESS(pretrain.patch_size));
    t["pretrain.mask_prob"] =
        double_field("probability a patch is masked; default 0.4", ACCESS(pretrain.mask_prob));
    t["pretrain.epochs"] = int_field<std::int64_t>("epochs; default 500", ACCESS(pretrain.epochs));
    t["pretrain.batch_size"] =
        int_field<std::int64_t>("batch size; default 64", ACCESS(pretrain.batch_size));
    t["pretrain.samples_per_epoch"] = int_field<std::int64_t>(
        "samples per epoch (0 = dataset size); default 0", ACCESS(pretrain.samples_per_epoch));
    t["pretrain.base_lr"] = double_field("learning rate at batch 512 (scaled linearly); default 0.005",
                                         ACCESS(pretrain.base_lr));
    t["pretrain.weight_decay"] =
        double_field("AdamW weight decay; default 0.05", ACCESS(pretrain.weight_decay));
    t["pretrain.lr_cycles"] =
        int_field<std::int64_t>("cosine restarts; default 5", ACCESS(pretrain.lr_cycles));
    t["pretrain.rotation_deg"] =
        double_field("max random rotation; default 10", ACCESS(pretrain.augment.rotation_deg));
    t["pretrain.hflip_prob"] =
        double_field("horizontal flip probability; default 0.5", ACCESS(pretrain.augment.hflip_prob));
    t["pretrain.jitter"] =
        double_field("color jitter strength; default 0.2", ACCESS(pretrain.augment.jitter));
    t["pretrain.seed"] = int_field<std::uint64_t>("seed; default 0", ACCESS(pretrain.seed));
    // data
    t["data.root"] = {
        "dataset root holding trainA/trainB/testA/testB; default empty",
        [](const ExperimentConfig& c) { return c.data.root.string(); },
        [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.root = v; }};
    t["data.image_size"] =
        int_field<int>("training crop side; must equal generator.image_size; default 256",
                       ACCESS(data.image_size));
    t["data.resize_width"] = int_field<int>("train resize width before cropping (0 = off); default 0",
                                            ACCESS(data.resize_width));
    t["data.resize_height"] = int_field<int>(
        "train resize height before cropping (0 = off); default 0", ACCESS(data.resize_height));
    t["data.hflip"] = bool_field("random horizontal flips; default true", ACCESS(data.hflip));
    // eval
    t["eval.protocol"] = string_field(
        "lq_legacy|lq_legacy_anime|hq_adhoc|consistent; default consistent", ACCESS(eval.protocol));
    t["eval.extractor"] = string_field("stub or a TorchScript feature network path; default stub",
                                       ACCESS(eval.extractor));
    t["eval.kid_subsets"] =
        int_field<std::int64_t>("KID subsets; default 100", ACCESS(eval.kid_subsets));
    t["eval.seed"] = int_field<std::uint64_t>("KID subset seed; default 0", ACCESS(eval.seed));
    return t;
  }();
  return table;
}

#undef ACCESS

const Field& field(const std::string& key) {
  const auto& t = fields();
  auto it = t.find(key);
  if (it == t.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    generator.validate();
    discriminator.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  train.validate();
  pretrain.validate(generator.image_size);
  if (data.image_size != generator.image_size) {
    throw ConfigError("data.image_size must equal generator.image_size");
  }
  if (discriminator.in_channels != generator.out_channels) {
    throw ConfigError("discriminator.in_channels must equal generator.out_channels");
  }
  EvalProtocol::from_name(eval.protocol);
  if (eval.kid_subsets < 1) throw ConfigError("eval.kid_subsets must be >= 1");
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [key, f] : fields()) out += key + " = " + f.get(*this) + "\n";
  return out;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_text()); }

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, key, value);
}

std::string ExperimentConfig::get(const std::string& key) const { return field(key).get(*this); }

void ExperimentConfig::apply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig config;
  config.apply(text);
  return config;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

ExperimentConfig ExperimentConfig::toy() {
  ExperimentConfig c;
  c.generator = GeneratorConfig::toy();
  c.discriminator = DiscriminatorConfig::toy();
  c.train.total_iters = 2000;
  c.train.batch_size = 1;
  c.train.lr_gen = 2e-4;
  c.train.lr_disc = 2e-4;
  c.train.ema_momentum = 0.99;
  c.train.weights.lambda_cyc = 5.0;
  c.train.weights.lambda_gp = 0.01;
  c.train.metrics_every = 1;
  c.pretrain.patch_size = 8;
  c.pretrain.batch_size = 16;
  c.pretrain.epochs = 10;
  c.pretrain.base_lr = 3e-2;
  c.data.image_size = 32;
  c.data.root = "toy_data";
  c.eval.protocol = "consistent";
  c.eval.kid_subsets = 10;
  return c;
}

std::vector<ConfigKey> config_keys() {
  std::vector<ConfigKey> out;
  for (const auto& [key, f] : fields()) out.push_back({key, f.description});
  return out;
}

}  // namespace uvcgan
