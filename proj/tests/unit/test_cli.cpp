#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "uvcgan/checkpoint.hpp"
#include "uvcgan/cli.hpp"
#include "uvcgan/config.hpp"
#include "uvcgan/errors.hpp"
#include "uvcgan/image.hpp"

using namespace uvcgan;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// A toy dataset shared by the CLI cases, written once per process.
const fs::path& toy_root() {
  static testing::TempDir dir("cli_toy");
  static const bool made = [] {
    return run_cli({"make-toy", "-o", (dir.path() / "toy").string(), "--count", "20", "--test-count",
                    "6"}) == 0;
  }();
  REQUIRE(made);
  static const fs::path root = dir.path() / "toy";
  return root;
}

std::vector<std::string> train_args(const fs::path& out, int iters) {
  return {"train", "--toy", "--set", "data.root=" + toy_root().string(), "--set",
          "train.total_iters=" + std::to_string(iters), "-o", out.string()};
}

struct DeterministicEnv {
  DeterministicEnv() { ::setenv(kDeterministicEnv, "1", 1); }
  ~DeterministicEnv() { ::unsetenv(kDeterministicEnv); }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config text round trip and hash") {
    auto c = ExperimentConfig::toy();
    c.set("train.lambda_gp", "0.5");
    c.set("generator.style_modulation", "false");
    const auto text = c.to_text();
    auto back = ExperimentConfig::parse(text);
    CHECK(back.to_text() == text);
    CHECK(back.hash() == c.hash());
    CHECK(back.get("train.lambda_gp") == "0.5");
    CHECK(back.hash() != ExperimentConfig::toy().hash());
    CHECK(c.hash().size() == 16);
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  }

  TEST_CASE("config parsing rules") {
    auto c = ExperimentConfig::parse("# comment\n\ntrain.total_iters = 42  # trailing\n  train.seed=9\n");
    CHECK(c.train.total_iters == 42);
    CHECK(c.train.seed == 9);
    CHECK_THROWS_AS(ExperimentConfig::parse("train.nonsense = 1"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("train.total_iters = many"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("no equals sign"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("train.scheduler = cosine"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/file.cfg"), ConfigError);
  }

  TEST_CASE("every documented key is readable and sorted") {
    auto keys = config_keys();
    REQUIRE(keys.size() > 40);
    auto c = ExperimentConfig{};
    const auto text = c.to_text();
    for (std::size_t i = 0; i < keys.size(); ++i) {
      CHECK_NOTHROW(c.get(keys[i].name));
      CHECK_FALSE(keys[i].description.empty());
      CHECK(text.find(keys[i].name + " = ") != std::string::npos);
      if (i > 0) CHECK(keys[i - 1].name < keys[i].name);
    }
  }

  TEST_CASE("shipped toy config equals the toy preset") {
    auto shipped = ExperimentConfig::load(fs::path(UVCGAN_TEST_DATA_DIR) / ".." / ".." / "configs" / "toy.cfg");
    auto toy = ExperimentConfig::toy();
    toy.set("data.root", shipped.get("data.root"));
    CHECK(shipped.to_text() == toy.to_text());
  }

  TEST_CASE("config defaults follow the full-scale setting") {
    ExperimentConfig c;
    CHECK(c.train.total_iters == 1000000);
    CHECK(c.train.batch_size == 1);
    CHECK(c.train.ema_momentum == 0.9999);
    CHECK(c.train.cache_capacity == 3);
    CHECK(c.pretrain.mask_prob == 0.4);
    CHECK(c.pretrain.patch_size == 32);
    CHECK(c.pretrain.lr_cycles == 5);
    auto toy = ExperimentConfig::toy();
    CHECK(toy.train.total_iters == 2000);
    CHECK(toy.generator.image_size == 32);
    CHECK_NOTHROW(toy.validate());
    toy.pretrain.patch_size = 7;
    CHECK_THROWS_AS(toy.validate(), ConfigError);
  }

  TEST_CASE("exit codes") {
    CHECK(run_cli({"--help"}) == 0);
    CHECK(run_cli({}) == 2);
    CHECK(run_cli({"frobnicate"}) == 2);
    testing::TempDir dir("cli_codes");
    CHECK(run_cli({"train", "--toy", "--set", "train.bogus=1", "-o", dir.path().string()}) == 2);
    CHECK(run_cli({"train", "--toy", "--set", "data.root=/nonexistent", "-o", dir.path().string()}) == 2);
    CHECK(run_cli({"translate", "--checkpoint", (dir.path() / "none.ckpt").string(), "-i",
                   dir.path().string(), "-o", (dir.path() / "t").string()}) == 3);
    CHECK(run_cli({"evaluate", "--translated", (dir.path() / "a").string(), "--target",
                   (dir.path() / "b").string(), "--protocol", "weird"}) == 2);
  }

  TEST_CASE("train, resume, translate, grid and evaluate") {
    DeterministicEnv env;
    testing::TempDir dir("cli_run");
    const auto run = dir.path() / "run";
    REQUIRE(run_cli(train_args(run, 6)) == 0);
    CHECK(fs::exists(run / "checkpoint.ckpt"));
    CHECK(fs::exists(run / "config.cfg"));
    std::ifstream metrics(run / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(metrics, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.contains("loss_cyc_a"));
      CHECK(j.contains("lr_gen"));
      CHECK(j.at("seconds").get<double>() == 0.0);
      ++lines;
    }
    CHECK(lines == 6);
    auto archive = read_archive(run / "checkpoint.ckpt");
    CHECK(archive.metadata.at("iteration").get<int>() == 6);
    CHECK_FALSE(archive.metadata.at("caches_serialized").get<bool>());

    // Resuming under a different config is refused.
    auto other = train_args(run, 6);
    other.insert(other.end() - 2, {"--set", "train.lambda_cyc=7"});
    other.push_back("--resume");
    CHECK(run_cli(other) == 2);
    // Same config: picks up at the stored iteration, nothing left to run.
    auto same = train_args(run, 6);
    same.push_back("--resume");
    CHECK(run_cli(same) == 0);

    const auto translated = dir.path() / "translated";
    REQUIRE(run_cli({"translate", "--checkpoint", (run / "checkpoint.ckpt").string(), "-i",
                     (toy_root() / "testA").string(), "-o", translated.string()}) == 0);
    auto inputs = list_images(toy_root() / "testA");
    auto outputs = list_images(translated);
    REQUIRE(outputs.size() == inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      CHECK(outputs[i].filename() == inputs[i].filename());
      auto im = read_image(outputs[i]);
      CHECK(im.same_shape(read_image(inputs[i])));
    }
    CHECK(run_cli({"translate", "--checkpoint", (run / "checkpoint.ckpt").string(), "-i",
                   (toy_root() / "testB").string(), "-o", (dir.path() / "ba").string(),
                   "--direction", "ba", "--no-ema"}) == 0);
    CHECK(run_cli({"translate", "--checkpoint", (run / "checkpoint.ckpt").string(), "-i",
                   (toy_root() / "testB").string(), "-o", (dir.path() / "bad").string(),
                   "--direction", "xy"}) == 2);

    std::vector<std::string> grid_args{"grid", "--checkpoint", (run / "checkpoint.ckpt").string(), "-i"};
    for (int i = 0; i < 4; ++i) grid_args.push_back(inputs[static_cast<std::size_t>(i)].string());
    auto g1 = grid_args, g2 = grid_args;
    g1.insert(g1.end(), {"-o", (dir.path() / "g1.png").string()});
    g2.insert(g2.end(), {"-o", (dir.path() / "g2.png").string()});
    REQUIRE(run_cli(g1) == 0);
    REQUIRE(run_cli(g2) == 0);
    auto grid = read_image(dir.path() / "g1.png");
    CHECK(grid.width == 2 * 32);
    CHECK(grid.height == 4 * 32);
    CHECK(slurp(dir.path() / "g1.png") == slurp(dir.path() / "g2.png"));
    // Left column is the input itself.
    auto first = read_image(inputs[0]);
    CHECK(crop(grid, 0, 0, 32, 32).data == first.data);

    const auto report = dir.path() / "report.json";
    REQUIRE(run_cli({"evaluate", "--translated", (toy_root() / "testB").string(), "--target",
                     (toy_root() / "testB").string(), "--kid-subsets", "5", "-o", report.string()}) == 0);
    auto j = nlohmann::json::parse(slurp(report));
    CHECK(j.at("fid").get<double>() < 1e-6);
    CHECK(std::abs(j.at("kid_mean").get<double>()) < 1e-6);
    CHECK(j.at("protocol") == "consistent");
    CHECK(j.at("kid_subset_size").get<int>() == 6);

    REQUIRE(run_cli({"evaluate", "--translated", translated.string(), "--target",
                     (toy_root() / "testB").string(), "--source", (toy_root() / "testA").string(),
                     "--extractor", testing::fixture("tiny_extractor.pt").string(), "--kid-subsets",
                     "5", "-o", report.string()}) == 0);
    j = nlohmann::json::parse(slurp(report));
    CHECK(j.at("extractor") == "torchscript");
    CHECK(j.at("psnr").is_number());
    CHECK(j.at("i_l2").is_number());
  }

  TEST_CASE("pretrain feeds training") {
    DeterministicEnv env;
    testing::TempDir dir("cli_pretrain");
    const auto pre = dir.path() / "pre";
    REQUIRE(run_cli({"pretrain", "--toy", "--set", "data.root=" + toy_root().string(), "--set",
                     "pretrain.epochs=1", "-o", pre.string()}) == 0);
    CHECK(fs::exists(pre / "pretrain.ckpt"));
    auto lines = slurp(pre / "pretrain_metrics.jsonl");
    CHECK(std::count(lines.begin(), lines.end(), '\n') == 3);  // 40 images, batch 16
    auto args = train_args(dir.path() / "run", 2);
    args.insert(args.end() - 2, {"--set", "train.init_generator=" + (pre / "pretrain.ckpt").string()});
    CHECK(run_cli(args) == 0);
    CHECK(run_cli({"translate", "--checkpoint", (pre / "pretrain.ckpt").string(), "-i",
                   (toy_root() / "testA").string(), "-o", (dir.path() / "t").string()}) == 0);
  }

  TEST_CASE("equal configs give equal metrics files") {
    DeterministicEnv env;
    testing::TempDir dir("cli_det");
    REQUIRE(run_cli(train_args(dir.path() / "a", 5)) == 0);
    REQUIRE(run_cli(train_args(dir.path() / "b", 5)) == 0);
    CHECK(slurp(dir.path() / "a" / "metrics.jsonl") == slurp(dir.path() / "b" / "metrics.jsonl"));
    CHECK(slurp(dir.path() / "a" / "config.cfg") == slurp(dir.path() / "b" / "config.cfg"));
  }

  TEST_CASE("config file plus overrides") {
    testing::TempDir dir("cli_cfg");
    std::ofstream(dir.path() / "exp.cfg") << "train.total_iters = 3\ndata.root = " << toy_root().string() << "\n";
    DeterministicEnv env;
    REQUIRE(run_cli({"train", "--toy", "-c", (dir.path() / "exp.cfg").string(), "--set", "train.seed=4",
                     "-o", (dir.path() / "run").string()}) == 0);
    auto cfg = ExperimentConfig::load(dir.path() / "run" / "config.cfg");
    CHECK(cfg.train.total_iters == 3);
    CHECK(cfg.train.seed == 4);
    CHECK(cfg.generator.image_size == 32);
  }
}
