#include "uvcgan/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "uvcgan/augment.hpp"
#include "uvcgan/checkpoint.hpp"
#include "uvcgan/config.hpp"
#include "uvcgan/data.hpp"
#include "uvcgan/errors.hpp"
#include "uvcgan/evaluation.hpp"
#include "uvcgan/generator.hpp"
#include "uvcgan/image.hpp"
#include "uvcgan/pretrain.hpp"
#include "uvcgan/trainer.hpp"

namespace uvcgan {

namespace fs = std::filesystem;

bool deterministic_mode() {
  const char* v = std::getenv(kDeterministicEnv);
  return v != nullptr && std::string(v) != "" && std::string(v) != "0";
}

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct ConfigArgs {
  std::string path;
  bool toy = false;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.path, "experiment config file");
  cmd->add_flag("--toy", args.toy, "start from the built-in toy preset instead of defaults");
  cmd->add_option("--set", args.overrides, "key=value override, applied after the file");
}

ExperimentConfig resolve_config(const ConfigArgs& args) {
  ExperimentConfig config = args.toy ? ExperimentConfig::toy() : ExperimentConfig{};
  if (!args.path.empty()) {
    std::ifstream in(args.path);
    if (!in) throw ConfigError("cannot read config " + args.path);
    std::stringstream ss;
    ss << in.rdbuf();
    config.apply(ss.str());
  }
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();
  return config;
}

void log_config(const ExperimentConfig& config, const fs::path& out_dir) {
  const auto text = config.to_text();
  std::cerr << "# resolved config (hash " << config.hash() << ")\n" << text << std::flush;
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "config.cfg") << text;
}

double step_seconds(double seconds) { return deterministic_mode() ? 0.0 : seconds; }

class JsonlWriter {
 public:
  JsonlWriter(const fs::path& path, bool append) : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path.string());
  }
  void write(const nlohmann::json& j) { out_ << j.dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

// Generator weights plus the config needed to rebuild it.
Generator load_generator(const fs::path& checkpoint, const std::string& direction, bool use_ema,
                         ExperimentConfig* config_out = nullptr) {
  const auto archive = read_archive(checkpoint);
  const auto config = ExperimentConfig::parse(archive.metadata.value("config", ""));
  Generator gen(config.generator);
  const auto kind = archive.metadata.value("kind", "");
  std::string prefix;
  if (kind == "pretrain") {
    prefix = "generator";
  } else if (kind == "train") {
    if (direction != "ab" && direction != "ba") {
      throw ConfigError("--direction must be ab or ba");
    }
    prefix = (use_ema ? "ema_" : "gen_") + direction;
  } else {
    throw IoError("unrecognized checkpoint " + checkpoint.string());
  }
  load_module_state(archive, prefix, *gen);
  gen->eval();
  if (config_out) *config_out = config;
  return gen;
}

torch::Tensor translate_image(Generator& gen, const Image& image) {
  torch::NoGradGuard no_grad;
  return gen->forward(to_tensor(image).unsqueeze(0)).squeeze(0);
}

int cmd_make_toy(const fs::path& out, int size, int count, int test_count, std::uint64_t seed) {
  ToyDomainSpec spec;
  spec.root = out;
  spec.image_size = size;
  spec.count = count;
  spec.test_count = test_count;
  spec.seed = seed;
  make_toy_dataset(spec);
  std::cerr << "wrote toy dataset to " << out << "\n";
  return 0;
}

int cmd_pretrain(const ConfigArgs& args, const fs::path& out) {
  const auto config = resolve_config(args);
  config.data.validate();
  log_config(config, out);
  torch::manual_seed(config.pretrain.seed);
  Generator gen(config.generator);
  DomainLoader loader_a(config.data, Split::Train, Domain::A, config.pretrain.seed * 2 + 1);
  DomainLoader loader_b(config.data, Split::Train, Domain::B, config.pretrain.seed * 2 + 2);
  const auto& pc = config.pretrain;
  const std::int64_t samples = pc.samples_per_epoch > 0
                                   ? pc.samples_per_epoch
                                   : static_cast<std::int64_t>(loader_a.size() + loader_b.size());
  const std::int64_t steps_per_epoch = (samples + pc.batch_size - 1) / pc.batch_size;
  const std::int64_t total = steps_per_epoch * pc.epochs;
  Pretrainer pretrainer(gen, pc, total);
  JsonlWriter metrics(out / "pretrain_metrics.jsonl", false);
  for (std::int64_t step = 0; step < total; ++step) {
    const auto start = std::chrono::steady_clock::now();
    auto batch = augment_batch(
        mixed_domain_batch(loader_a, loader_b, static_cast<std::size_t>(pc.batch_size)),
        pc.augment, pretrainer.rng());
    const double lr = cosine_restart_lr(step, total, pc.lr_cycles, pc.learning_rate());
    const double loss = pretrainer.step(batch);
    if (!std::isfinite(loss)) {
      throw NonFiniteLossError("non-finite pretraining loss at step " + std::to_string(step + 1),
                               nlohmann::json{{"iter", step + 1}, {"loss", loss}}.dump());
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    metrics.write({{"iter", step + 1}, {"loss", loss}, {"lr", lr}, {"seconds", step_seconds(seconds)}});
  }
  Archive archive;
  archive.metadata["kind"] = "pretrain";
  archive.metadata["config"] = config.to_text();
  archive.metadata["config_hash"] = config.hash();
  archive.metadata["iteration"] = total;
  add_module_state(archive, "generator", *gen);
  write_archive(out / "pretrain.ckpt", archive);
  std::cerr << "wrote " << (out / "pretrain.ckpt") << "\n";
  return 0;
}

int cmd_train(const ConfigArgs& args, const fs::path& out, bool resume) {
  const auto config = resolve_config(args);
  config.data.validate();
  log_config(config, out);
  Trainer trainer(config.generator, config.discriminator, config.train, config.hash());
  DomainLoader loader_a(config.data, Split::Train, Domain::A, config.train.seed * 2 + 1);
  DomainLoader loader_b(config.data, Split::Train, Domain::B, config.train.seed * 2 + 2);
  const auto ckpt_path = out / "checkpoint.ckpt";

  auto save = [&] {
    auto archive = trainer.to_archive();
    archive.metadata["config"] = config.to_text();
    archive.metadata["loader_a"] = loader_a.state();
    archive.metadata["loader_b"] = loader_b.state();
    write_archive(ckpt_path, archive);
  };

  bool resumed = false;
  if (resume && fs::exists(ckpt_path)) {
    const auto archive = read_archive(ckpt_path);
    trainer.from_archive(archive);
    loader_a.restore(archive.metadata.at("loader_a").get<std::string>());
    loader_b.restore(archive.metadata.at("loader_b").get<std::string>());
    resumed = true;
    std::cerr << "resumed at iteration " << trainer.iteration() << "\n";
  } else if (!config.init_generator.empty()) {
    trainer.load_pretrained(read_archive(config.init_generator));
  }

  JsonlWriter metrics(out / "metrics.jsonl", resumed);
  const auto bs = static_cast<std::size_t>(config.train.batch_size);
  try {
    while (trainer.iteration() < config.train.total_iters) {
      auto a = loader_a.next_batch(bs);
      auto b = loader_b.next_batch(bs);
      auto m = trainer.train_step(a, b);
      m.seconds = step_seconds(m.seconds);
      if (config.train.metrics_every > 0 && m.iter % config.train.metrics_every == 0) {
        metrics.write(m.to_json());
      }
      if (config.train.checkpoint_every > 0 && m.iter % config.train.checkpoint_every == 0) save();
    }
  } catch (const NonFiniteLossError& e) {
    std::ofstream(out / "nonfinite_snapshot.json") << e.snapshot << "\n";
    throw;
  }
  save();
  std::cerr << "wrote " << ckpt_path << "\n";
  return 0;
}

int cmd_translate(const fs::path& checkpoint, const fs::path& input, const fs::path& output,
                  const std::string& direction, bool no_ema) {
  ExperimentConfig config;
  auto gen = load_generator(checkpoint, direction, !no_ema, &config);
  DatasetSpec spec;
  spec.image_size = static_cast<int>(config.generator.image_size);
  fs::create_directories(output);
  const auto files = list_images(input);
  if (files.empty()) throw IoError("no images in " + input.string());
  for (const auto& file : files) {
    const auto img = load_example(spec, Split::Test, file, nullptr);
    write_png(output / (file.stem().string() + ".png"), from_tensor(translate_image(gen, img)));
  }
  std::cerr << "translated " << files.size() << " images into " << output << "\n";
  return 0;
}

int cmd_grid(const fs::path& checkpoint, const std::vector<std::string>& inputs,
             const fs::path& output, const std::string& direction, bool no_ema) {
  ExperimentConfig config;
  auto gen = load_generator(checkpoint, direction, !no_ema, &config);
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (auto& f : list_images(in)) files.push_back(f);
    } else {
      files.emplace_back(in);
    }
  }
  if (files.empty()) throw IoError("grid: no input images");
  const int s = static_cast<int>(config.generator.image_size);
  DatasetSpec spec;
  spec.image_size = s;
  Image grid(3, s * static_cast<int>(files.size()), 2 * s);
  for (std::size_t r = 0; r < files.size(); ++r) {
    const auto img = load_example(spec, Split::Test, files[r], nullptr);
    const auto out = from_tensor(translate_image(gen, img));
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          grid.at(c, static_cast<int>(r) * s + y, x) = img.at(c, y, x);
          grid.at(c, static_cast<int>(r) * s + y, s + x) = out.at(c, y, x);
        }
      }
    }
  }
  write_png(output, grid);
  std::cerr << "wrote " << files.size() << "x2 grid to " << output << "\n";
  return 0;
}

struct EvalArgs {
  std::string translated, target, source, source_landmarks, translated_landmarks;
  std::string protocol = "consistent";
  std::string extractor = "stub";
  std::int64_t kid_subsets = 100;
  std::int64_t kid_subset_size = 0;
  std::uint64_t seed = 0;
  std::string output;
};

int cmd_evaluate(const EvalArgs& args) {
  auto protocol = EvalProtocol::from_name(args.protocol);
  if (args.kid_subsets < 1) throw ConfigError("--kid-subsets must be >= 1");
  protocol.kid_subsets = args.kid_subsets;
  if (args.kid_subset_size > 0) protocol.kid_subset_size = args.kid_subset_size;
  std::unique_ptr<FeatureExtractor> extractor;
  if (args.extractor == "stub") {
    extractor = std::make_unique<StubExtractor>();
  } else {
    extractor = std::make_unique<TorchScriptExtractor>(args.extractor);
  }
  EvalInputs inputs;
  inputs.translated_dir = args.translated;
  inputs.target_dir = args.target;
  inputs.source_dir = args.source;
  inputs.source_landmarks_dir = args.source_landmarks;
  inputs.translated_landmarks_dir = args.translated_landmarks;
  std::cerr << "# evaluate protocol=" << protocol.name << " extractor=" << extractor->name()
            << " kid_subsets=" << protocol.kid_subsets << " seed=" << args.seed << "\n";
  const auto report = evaluate(inputs, protocol, *extractor, args.seed);
  auto j = report.to_json();
  j["extractor"] = extractor->name();
  const auto text = j.dump(2);
  if (args.output.empty()) {
    std::cout << text << "\n";
  } else {
    const fs::path out(args.output);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out) << text << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  if (deterministic_mode()) {
    torch::set_num_threads(1);
    // The interop pool can only be sized before its first use.
    static std::once_flag interop_once;
    std::call_once(interop_once, [] {
      try {
        torch::set_num_interop_threads(1);
      } catch (const c10::Error&) {
      }
    });
  }

  CLI::App app{"Unpaired image-to-image translation: pretraining, training, inference, evaluation"};
  app.require_subcommand(1);

  std::string out;
  ConfigArgs cfg_args;
  bool resume = false;

  auto* make_toy = app.add_subcommand("make-toy", "write the synthetic two-domain dataset");
  int toy_size = 32, toy_count = 200, toy_test = 50;
  std::uint64_t toy_seed = 0;
  make_toy->add_option("-o,--out", out, "dataset root")->required();
  make_toy->add_option("--size", toy_size, "image side");
  make_toy->add_option("--count", toy_count, "train images per domain");
  make_toy->add_option("--test-count", toy_test, "test images per domain");
  make_toy->add_option("--seed", toy_seed, "seed");

  auto* pretrain = app.add_subcommand("pretrain", "masked-inpainting pretraining of a generator");
  add_config_options(pretrain, cfg_args);
  pretrain->add_option("-o,--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "CycleGAN training");
  add_config_options(train, cfg_args);
  train->add_option("-o,--out", out, "output directory")->required();
  train->add_flag("--resume", resume, "continue from <out>/checkpoint.ckpt when present");

  std::string checkpoint, input, direction = "ab";
  bool no_ema = false;
  auto* translate = app.add_subcommand("translate", "translate a directory of images");
  translate->add_option("--checkpoint", checkpoint, "training or pretraining checkpoint")->required();
  translate->add_option("-i,--input", input, "input image directory")->required();
  translate->add_option("-o,--out", out, "output directory")->required();
  translate->add_option("--direction", direction, "ab or ba");
  translate->add_flag("--no-ema", no_ema, "use the live generator instead of the averaged one");

  std::vector<std::string> grid_inputs;
  auto* grid = app.add_subcommand("grid", "input | translation grid, one row per input");
  grid->add_option("--checkpoint", checkpoint, "training or pretraining checkpoint")->required();
  grid->add_option("-i,--input", grid_inputs, "input images or directories")->required();
  grid->add_option("-o,--out", out, "output PNG")->required();
  grid->add_option("--direction", direction, "ab or ba");
  grid->add_flag("--no-ema", no_ema, "use the live generator instead of the averaged one");

  EvalArgs eval_args;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "realism and faithfulness metrics");
  evaluate_cmd->add_option("--translated", eval_args.translated, "translated images")->required();
  evaluate_cmd->add_option("--target", eval_args.target, "target-domain images")->required();
  evaluate_cmd->add_option("--source", eval_args.source, "source images (faithfulness metrics)");
  evaluate_cmd->add_option("--source-landmarks", eval_args.source_landmarks,
                           "per-image landmark JSON for the sources");
  evaluate_cmd->add_option("--translated-landmarks", eval_args.translated_landmarks,
                           "per-image landmark JSON for the translations");
  evaluate_cmd->add_option("--protocol", eval_args.protocol,
                           "lq_legacy|lq_legacy_anime|hq_adhoc|consistent");
  evaluate_cmd->add_option("--extractor", eval_args.extractor, "stub or TorchScript model path");
  evaluate_cmd->add_option("--kid-subsets", eval_args.kid_subsets, "number of KID subsets");
  evaluate_cmd->add_option("--kid-subset-size", eval_args.kid_subset_size,
                           "KID subset size (default from protocol)");
  evaluate_cmd->add_option("--seed", eval_args.seed, "KID subset seed");
  evaluate_cmd->add_option("-o,--out", eval_args.output, "report JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*make_toy) return cmd_make_toy(out, toy_size, toy_count, toy_test, toy_seed);
    if (*pretrain) return cmd_pretrain(cfg_args, out);
    if (*train) return cmd_train(cfg_args, out, resume);
    if (*translate) return cmd_translate(checkpoint, input, out, direction, no_ema);
    if (*grid) return cmd_grid(checkpoint, grid_inputs, out, direction, no_ema);
    if (*evaluate_cmd) return cmd_evaluate(eval_args);
  } catch (const ConfigMismatchError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NonFiniteLossError& e) {
    std::cerr << "error: " << e.what() << "\nsnapshot: " << e.snapshot << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.emplace_back("uvcgan");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace uvcgan
