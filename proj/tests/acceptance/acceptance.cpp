// Acceptance gate: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1). `--only <name>` runs a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "uvcgan/cli.hpp"
#include "uvcgan/config.hpp"
#include "uvcgan/data.hpp"
#include "uvcgan/discriminator.hpp"
#include "uvcgan/evaluation.hpp"
#include "uvcgan/generator.hpp"
#include "uvcgan/losses.hpp"
#include "uvcgan/pretrain.hpp"
#include "uvcgan/spectral_norm.hpp"
#include "uvcgan/trainer.hpp"

using namespace uvcgan;
namespace fs = std::filesystem;
using Eigen::MatrixXd;

namespace {

// Tolerances and budgets.
constexpr double kModulateBudgetS = 5.0;
constexpr double kDemodNormLow = 1.0 - 1e-4;
// The exact norm is below 1; float32 rounding may land a few ulps above.
constexpr double kDemodNormHigh = 1.0 + 1e-6;
constexpr int kMagnitudeTrials = 100;
constexpr int kMagnitudeRequired = 95;
constexpr double kMagnitudeLow = 0.8, kMagnitudeHigh = 1.2;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradBudgetS = 60.0;
constexpr double kEmaMomentum = 0.9999;
constexpr int kEmaSteps = 10000;
constexpr double kEmaTol = 1e-6;
constexpr int kSnMatrices = 50;
constexpr double kSnTol = 1e-3;
constexpr double kFidIdenticalTol = 1e-8;
constexpr double kKidIdenticalTol = 1e-6;
constexpr double kFidOracleTol = 1e-6;
constexpr double kKidHandTol = 1e-9;
constexpr double kPsnrExpected = 28.13, kPsnrTol = 0.01;
constexpr double kMaskTarget = 0.40, kMaskTol = 0.01;
constexpr int kMaskDraws = 10000;
constexpr int kPretrainSteps = 200;
constexpr double kPretrainDrop = 0.5;
constexpr double kPretrainBudgetS = 300.0;
constexpr int kCycleWindow = 100;
constexpr double kCycleDrop = 0.5;
constexpr double kRedShift = 0.15;
constexpr double kFidGain = 0.2;
constexpr double kToyBudgetS = 1200.0;
constexpr int kAblationIters = 50;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path work_root() {
  static const fs::path root = [] {
    auto p = fs::temp_directory_path() / ("uvcgan_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

MatrixXd gaussian(int n, int d, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  MatrixXd m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = normal(gen);
  }
  return m;
}

// Sample mean 0 and sample covariance exactly I.
MatrixXd whitened(int n, int d, std::uint64_t seed) {
  MatrixXd x = gaussian(n, d, seed);
  x.rowwise() -= x.colwise().mean();
  MatrixXd cov = x.transpose() * x / (n - 1);
  Eigen::LLT<MatrixXd> llt(cov);
  MatrixXd l_inv = llt.matrixL().solve(MatrixXd::Identity(d, d));
  return x * l_inv.transpose();
}

GeneratorConfig tiny_generator() {
  GeneratorConfig c;
  c.image_size = 16;
  c.features = {4, 4, 6, 8};
  c.token_dim = 8;
  c.transformer_blocks = 1;
  c.heads = 2;
  c.style_dim = 6;
  return c;
}

// Relative L2 error of an analytic gradient against central differences of
// `eval` with respect to every entry of `param` (float64).
double fd_relative_error(const torch::Tensor& analytic, const torch::Tensor& param,
                         const std::function<double()>& eval) {
  const double h = 1e-6;
  auto flat = param.data().view({-1});
  auto fd = torch::zeros({flat.numel()}, torch::kFloat64);
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double up = eval();
    flat[i] = orig - h;
    const double down = eval();
    flat[i] = orig;
    fd[i] = (up - down) / (2 * h);
  }
  auto an = analytic.to(torch::kFloat64).reshape({-1});
  return (an - fd).norm().item<double>() / std::max(fd.norm().item<double>(), 1e-12);
}

Outcome modulation_suite() {
  const auto t0 = Clock::now();
  torch::manual_seed(101);
  bool exact = true;
  double worst_low = 1.0, worst_high = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int out = 3 + trial % 5, in = 2 + trial % 7;
    auto w = torch::randn({out, in, 3, 3});
    auto s = torch::randn({in});
    auto m = modulate(w, s);
    auto wa = w.accessor<float, 4>();
    auto sa = s.accessor<float, 1>();
    auto ma = m.accessor<float, 4>();
    for (int j = 0; j < out; ++j) {
      for (int i = 0; i < in; ++i) {
        for (int x = 0; x < 3; ++x) {
          for (int y = 0; y < 3; ++y) exact = exact && ma[j][i][x][y] == sa[i] * wa[j][i][x][y];
        }
      }
    }
    // Measured in the weights' own precision.
    auto norms = demodulate(m).square().sum({1, 2, 3}).sqrt();
    worst_low = std::min(worst_low, norms.min().item<double>());
    worst_high = std::max(worst_high, norms.max().item<double>());
  }
  const double elapsed = seconds_since(t0);
  const bool norms_ok = worst_low >= kDemodNormLow && worst_high <= kDemodNormHigh;
  return {exact && norms_ok && elapsed < kModulateBudgetS,
          std::string("modulate exact=") + (exact ? "yes" : "no") + ", demod norms in [" +
              fmt(worst_low, 8) + ", " + fmt(worst_high, 8) + "], " + fmt(elapsed, 3) + " s"};
}

Outcome magnitude_preservation() {
  torch::manual_seed(102);
  int within = 0;
  for (int trial = 0; trial < kMagnitudeTrials; ++trial) {
    auto x = torch::randn({1, 32, 16, 16});
    auto w = torch::randn({32, 32, 3, 3});
    auto s = torch::rand({32}) * 1.5 + 0.25;
    auto std = modulated_conv(x, w, s).std({0, 2, 3});
    if (std.min().item<double>() >= kMagnitudeLow && std.max().item<double>() <= kMagnitudeHigh) ++within;
  }
  return {within >= kMagnitudeRequired,
          std::to_string(within) + "/" + std::to_string(kMagnitudeTrials) + " trials with every channel std in [0.8, 1.2]"};
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  double worst_r1 = 0.0, worst_style = 0.0;

  torch::manual_seed(103);
  torch::nn::Sequential net(torch::nn::Conv2d(torch::nn::Conv2dOptions(2, 3, 3).padding(1)),
                            torch::nn::Tanh(),
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 1, 3).padding(1)));
  auto real = torch::randn({2, 2, 5, 5});
  auto penalty = [&](const torch::Tensor& samples) {
    Critic critic = [&](const torch::Tensor& x) { return net->forward(x); };
    return gradient_penalty(critic, samples, 1.0);
  };
  net->zero_grad();
  penalty(real).backward();
  std::vector<torch::Tensor> analytic;
  for (const auto& p : net->parameters()) {
    analytic.push_back(p.grad().defined() ? p.grad().clone() : torch::zeros_like(p));
  }
  net->to(torch::kFloat64);
  auto real64 = real.to(torch::kFloat64);
  auto params = net->parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    worst_r1 = std::max(worst_r1, fd_relative_error(analytic[k], params[k],
                                                    [&] { return penalty(real64).item<double>(); }));
  }

  torch::manual_seed(104);
  Generator g(tiny_generator());
  torch::manual_seed(104);
  Generator g64(tiny_generator());
  g64->to(torch::kFloat64);
  {
    torch::NoGradGuard no_grad;
    auto p32 = g->style_projection_parameters();
    auto p64 = g64->style_projection_parameters();
    for (std::size_t i = 0; i < p32.size(); ++i) {
      p32[i].add_(torch::randn_like(p32[i]) * 0.1);
      p64[i].copy_(p32[i]);
    }
  }
  auto x = torch::rand({1, 3, 16, 16}) * 2 - 1;
  auto probe = torch::randn({1, 3, 16, 16});
  (g->forward(x) * probe).sum().backward();
  auto x64 = x.to(torch::kFloat64);
  auto probe64 = probe.to(torch::kFloat64);
  auto p32 = g->style_projection_parameters();
  auto p64 = g64->style_projection_parameters();
  for (std::size_t k = 0; k < p64.size(); ++k) {
    worst_style = std::max(worst_style, fd_relative_error(p32[k].grad(), p64[k], [&] {
                             return (g64->forward(x64) * probe64).sum().item<double>();
                           }));
  }
  const double elapsed = seconds_since(t0);
  return {!p64.empty() && worst_r1 < kGradRelTol && worst_style < kGradRelTol && elapsed < kGradBudgetS,
          "R1 rel err " + fmt(worst_r1, 3) + ", style projection rel err " + fmt(worst_style, 3) + ", " +
              fmt(elapsed, 3) + " s"};
}

Outcome fifo_and_batch_head() {
  torch::manual_seed(105);
  std::mt19937 gen(105);
  bool fifo_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t capacity = 1 + gen() % 5;
    FeatureCache cache(capacity);
    std::deque<torch::Tensor> oracle;
    for (int push = 0; push < 12; ++push) {
      const int n = 1 + static_cast<int>(gen() % 3);
      auto f = torch::randn({n, 2, 2, 2});
      cache.push(f);
      for (int i = 0; i < n; ++i) {
        oracle.push_back(f[i].clone());
        if (oracle.size() > capacity) oracle.pop_front();
      }
      fifo_ok = fifo_ok && cache.size() == oracle.size();
      auto stacked = cache.stacked();
      for (std::size_t i = 0; fifo_ok && i < oracle.size(); ++i) {
        fifo_ok = torch::equal(stacked[static_cast<int64_t>(i)], oracle[i]);
      }
    }
  }

  FeatureCache cache(3);
  for (int i = 0; i < 5; ++i) cache.push(torch::randn({1, 8, 2, 2}));
  auto current = torch::randn({1, 8, 2, 2});
  auto all = torch::cat({current, cache.stacked()});
  auto expected = torch::cat({current, minibatch_stddev_statistic(all).expand({1, 1, 2, 2})}, 1);
  const bool four = all.size(0) == 4 && batch_stddev(all).narrow(0, 0, 1).equal(expected);

  auto same = torch::randn({1, 3, 4, 4}).expand({3, 3, 4, 4}).contiguous();
  const bool zero = batch_stddev(same).select(1, 3).abs().max().item<float>() == 0.0f;
  auto pair = torch::cat({torch::zeros({1, 2, 3, 3}), torch::full({1, 2, 3, 3}, 2.0f)});
  auto stat = batch_stddev(pair).select(1, 2);
  const bool two = torch::equal(stat, torch::ones_like(stat));

  auto yes = [](bool b) { return b ? "ok" : "FAILED"; };
  return {fifo_ok && four && zero && two, std::string("FIFO oracle ") + yes(fifo_ok) + ", 4-sample contract " +
                                              yes(four) + ", BSD zero variance " + yes(zero) +
                                              ", BSD two-sample " + yes(two)};
}

Outcome ema_closed_form() {
  torch::manual_seed(106);
  auto avg0 = torch::randn({6, 6}, torch::kFloat64);
  auto w = torch::randn({6, 6}, torch::kFloat64);
  auto avg = avg0.clone();
  double worst = 0.0;
  for (int k = 1; k <= kEmaSteps; ++k) {
    ema_update(avg, w, kEmaMomentum);
    const double mk = std::pow(kEmaMomentum, k);
    worst = std::max(worst, (avg - (mk * avg0 + (1 - mk) * w)).abs().max().item<double>());
  }

  // Same recurrence through the module averager (float64 shadow weights).
  GeneratorConfig cfg = tiny_generator();
  Generator live(cfg), average(cfg);
  EmaAverager averager(*live, *average, kEmaMomentum);
  std::vector<torch::Tensor> start;
  for (const auto& p : live->parameters()) start.push_back(p.detach().to(torch::kFloat64).clone());
  {
    torch::NoGradGuard no_grad;
    for (auto& p : live->parameters()) p.add_(0.5);
  }
  for (int k = 0; k < kEmaSteps; ++k) averager.update();
  const double mk = std::pow(kEmaMomentum, kEmaSteps);
  const auto& shadow = averager.shadow();
  auto target = live->parameters();
  double worst_module = 0.0;
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    auto expected = mk * start[i] + (1 - mk) * target[i].to(torch::kFloat64);
    worst_module = std::max(worst_module, (shadow[i] - expected).abs().max().item<double>());
  }
  return {worst < kEmaTol && worst_module < kEmaTol,
          "max error over k <= 1e4: tensor " + fmt(worst, 3) + ", module averager " + fmt(worst_module, 3)};
}

Outcome spectral_norm_oracle() {
  torch::manual_seed(107);
  std::mt19937 gen(107);
  double worst = 0.0;
  for (int i = 0; i < kSnMatrices; ++i) {
    const int rows = 2 + static_cast<int>(gen() % 63), cols = 2 + static_cast<int>(gen() % 63);
    auto w = torch::randn({rows, cols}, torch::kFloat64) / std::sqrt(static_cast<double>(cols));
    auto state = init_power_iteration(w);
    power_iterate(w, state, 2000);
    const double sigma = spectral_norm_estimate(w, state).item<double>();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        w.data_ptr<double>(), rows, cols);
    const double oracle = Eigen::JacobiSVD<MatrixXd>(m).singularValues()(0);
    worst = std::max(worst, std::abs(sigma - oracle));
  }
  return {worst < kSnTol, "max |sigma - svd| over 50 matrices " + fmt(worst, 3)};
}

Outcome fid_kid_oracles() {
  auto x = gaussian(200, 16, 108);
  const double fid_same = std::abs(fid(x, x));
  const double kid_same = std::abs(kid(x, x, 50, 20, 3).mean);

  auto base = whitened(500, 8, 109);
  MatrixXd shifted = base;
  shifted.col(0).array() += 1.0;
  const double closed = std::abs(fid(base, shifted) - 1.0);

  MatrixXd hx(2, 2), hy(2, 2);
  hx << 1, 0, 0, 1;
  hy << 1, 1, 0, 0;
  const double hand = std::abs(kid_mmd2(hx, hy) - (-2.375));

  const int d = 6;
  Eigen::VectorXd var_x(d), var_y(d), mu_x(d), mu_y(d);
  var_x << 0.5, 1.0, 2.0, 3.0, 0.1, 4.0;
  var_y << 1.5, 1.0, 0.2, 3.5, 0.4, 1.0;
  mu_x << 0, 1, 2, 0, -1, 0.5;
  mu_y << 1, 1, 0, 0.3, -1, 0;
  MatrixXd dx = whitened(400, d, 110) * var_x.cwiseSqrt().asDiagonal();
  MatrixXd dy = whitened(400, d, 111) * var_y.cwiseSqrt().asDiagonal();
  dx.rowwise() += mu_x.transpose();
  dy.rowwise() += mu_y.transpose();
  const double expected = (var_x.cwiseSqrt() - var_y.cwiseSqrt()).squaredNorm() + (mu_x - mu_y).squaredNorm();
  const double diag = std::abs(fid(dx, dy) - expected);

  return {fid_same < kFidIdenticalTol && kid_same < kKidIdenticalTol && closed < kFidOracleTol &&
              hand < kKidHandTol && diag < kFidOracleTol,
          "identical FID " + fmt(fid_same, 3) + ", KID " + fmt(kid_same, 3) + "; closed-form err " +
              fmt(closed, 3) + "; KID hand err " + fmt(hand, 3) + "; diagonal err " + fmt(diag, 3)};
}

Outcome faithfulness_metrics() {
  std::mt19937 gen(112);
  std::uniform_real_distribution<double> coord(0, 256);
  LandmarkSet input, shifted;
  for (int i = 0; i < 68; ++i) {
    std::array<double, 3> p{coord(gen), coord(gen), coord(gen)};
    input.push_back(p);
    shifted.push_back({p[0] + 3.0, p[1] - 4.0, p[2]});
  }
  const double lm = lm_l2(input, shifted);

  std::uniform_int_distribution<int> level(0, 245);
  Image src(3, 24, 24), dst(3, 24, 24);
  for (std::size_t i = 0; i < src.data.size(); ++i) {
    const int v = level(gen);
    src.data[i] = static_cast<float>(v) / 255.0f;
    dst.data[i] = static_cast<float>(v + 10) / 255.0f;
  }
  const double psnr = pixel_metrics(src, dst).psnr;
  const double self = ssim(src, src);
  return {lm == 5.0 && std::abs(psnr - kPsnrExpected) <= kPsnrTol && self == 1.0,
          "Lm-L2 shift (3,-4,0) -> " + fmt(lm, 17) + ", PSNR offset 10 -> " + fmt(psnr, 6) +
              " dB, SSIM(x,x) = " + fmt(self, 17)};
}

DatasetSpec toy_dataset() {
  static const DatasetSpec spec = [] {
    ToyDomainSpec toy;
    toy.root = work_root() / "toy";
    return make_toy_dataset(toy);
  }();
  return spec;
}

Outcome pretraining_statistics() {
  const auto t0 = Clock::now();
  Rng rng(113);
  // 625 images of 4x4 cells: 10^4 Bernoulli draws.
  auto batch = torch::rand({kMaskDraws / 16, 3, 32, 32});
  auto masked = mask_patches(batch, 8, kMaskTarget, rng);
  const double fraction = masked.mask.to(torch::kFloat64).mean().item<double>();

  auto spec = toy_dataset();
  auto cfg = ExperimentConfig::toy();
  torch::manual_seed(cfg.pretrain.seed);
  Generator g(cfg.generator);
  Pretrainer p(g, cfg.pretrain, kPretrainSteps);
  DomainLoader a(spec, Split::Train, Domain::A, 1), b(spec, Split::Train, Domain::B, 2);
  std::vector<double> losses;
  for (int s = 0; s < kPretrainSteps; ++s) {
    auto x = augment_batch(mixed_domain_batch(a, b, static_cast<std::size_t>(cfg.pretrain.batch_size)),
                           cfg.pretrain.augment, p.rng());
    losses.push_back(p.step(x));
  }
  double start = 0, end = 0;
  for (int i = 0; i < 10; ++i) {
    start += losses[static_cast<std::size_t>(i)] / 10;
    end += losses[losses.size() - 1 - static_cast<std::size_t>(i)] / 10;
  }
  const double drop = 1.0 - end / start;
  const double elapsed = seconds_since(t0);
  return {std::abs(fraction - kMaskTarget) <= kMaskTol && drop >= kPretrainDrop && elapsed < kPretrainBudgetS,
          "masked fraction " + fmt(fraction, 4) + "; loss " + fmt(start) + " -> " + fmt(end) + " (drop " +
              fmt(100 * drop, 3) + "%), " + fmt(elapsed, 3) + " s"};
}

std::vector<std::string> toy_train_args(const fs::path& out) {
  return {"train", "--toy", "--set", "data.root=" + toy_dataset().root.string(), "-o", out.string()};
}

std::vector<nlohmann::json> read_metrics(const fs::path& run) {
  std::ifstream in(run / "metrics.jsonl");
  std::vector<nlohmann::json> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(nlohmann::json::parse(line));
  return lines;
}

double mean_red(const fs::path& dir) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& f : list_images(dir)) {
    auto im = read_image(f);
    for (int y = 0; y < im.height; ++y) {
      for (int x = 0; x < im.width; ++x, ++n) sum += im.at(0, y, x);
    }
  }
  return sum / static_cast<double>(n);
}

std::vector<Image> load_dir(const fs::path& dir) {
  std::vector<Image> images;
  for (const auto& f : list_images(dir)) images.push_back(read_image(f));
  return images;
}

// The full toy run, shared by the end-to-end and determinism criteria.
const fs::path& toy_run() {
  static const fs::path run = [] {
    const auto out = work_root() / "toy_run";
    if (run_cli(toy_train_args(out)) != 0) throw std::runtime_error("toy training failed");
    return out;
  }();
  return run;
}

Outcome toy_end_to_end() {
  const auto t0 = Clock::now();
  auto spec = toy_dataset();
  const auto& run = toy_run();
  const auto translated = work_root() / "toy_translated";
  if (run_cli({"translate", "--checkpoint", (run / "checkpoint.ckpt").string(), "-i",
               spec.dir(Split::Test, Domain::A).string(), "-o", translated.string()}) != 0) {
    return {false, "translation failed"};
  }
  auto metrics = read_metrics(run);
  if (metrics.size() < 2 * kCycleWindow) return {false, "too few metrics lines"};
  auto cyc = [&](std::size_t i) {
    return metrics[i].at("loss_cyc_a").get<double>() + metrics[i].at("loss_cyc_b").get<double>();
  };
  double first = 0, last = 0;
  for (std::size_t i = 0; i < kCycleWindow; ++i) {
    first += cyc(i) / kCycleWindow;
    last += cyc(metrics.size() - 1 - i) / kCycleWindow;
  }
  const double cycle_drop = 1.0 - last / first;

  const double red_a = mean_red(spec.dir(Split::Test, Domain::A));
  const double red_b = mean_red(spec.dir(Split::Test, Domain::B));
  const double red_t = mean_red(translated);
  const double shift = (red_t - red_a) * (red_b > red_a ? 1.0 : -1.0);

  StubExtractor stub;
  auto protocol = EvalProtocol::consistent();
  auto prep = [&](const std::vector<Image>& images) {
    std::vector<Image> out;
    for (const auto& im : images) out.push_back(preprocess(im, protocol));
    return stub.extract_all(out);
  };
  auto feats_b = prep(load_dir(spec.dir(Split::Test, Domain::B)));
  const double fid_before = fid(prep(load_dir(spec.dir(Split::Test, Domain::A))), feats_b);
  const double fid_after = fid(prep(load_dir(translated)), feats_b);
  const double gain = 1.0 - fid_after / fid_before;
  const double elapsed = seconds_since(t0);
  return {cycle_drop > kCycleDrop && shift >= kRedShift && gain >= kFidGain && elapsed < kToyBudgetS,
          std::to_string(metrics.size()) + " iters; cycle loss " + fmt(first) + " -> " + fmt(last) + " (drop " +
              fmt(100 * cycle_drop, 3) + "%); red " + fmt(red_a) + " -> " + fmt(red_t) + " (B " + fmt(red_b) +
              ", shift " + fmt(shift) + "); stub FID " + fmt(fid_before) + " -> " + fmt(fid_after) + " (" +
              fmt(100 * gain, 3) + "% better); " + fmt(elapsed, 4) + " s"};
}

Outcome ablation_harness() {
  auto spec = toy_dataset();
  auto cfg = ExperimentConfig::toy();
  ModelConfigs base{cfg.generator, cfg.discriminator, cfg.train};
  base.train.total_iters = kAblationIters;
  std::vector<std::string> notes;
  bool all_ok = true;
  for (auto toggle : {AblationToggle::NoStyleMod, AblationToggle::NoBatchHead, AblationToggle::LegacyTraining}) {
    auto c = ablation_variant(base, toggle);
    Trainer t(c.generator, c.discriminator, c.train);
    DomainLoader a(spec, Split::Train, Domain::A, 1), b(spec, Split::Train, Domain::B, 2);
    bool finite = true;
    for (int i = 0; i < kAblationIters; ++i) {
      auto m = t.train_step(a.next_batch(1), b.next_batch(1));
      finite = finite && std::isfinite(m.loss_gen) && std::isfinite(m.loss_disc_a) && std::isfinite(m.loss_disc_b);
    }
    bool behaves = false;
    std::string name;
    if (toggle == AblationToggle::NoStyleMod) {
      name = "no_style_mod";
      behaves = t.gen_ab->style_projection_parameters().empty();
    } else if (toggle == AblationToggle::NoBatchHead) {
      name = "no_batch_head";
      behaves = t.caches().real_a.empty() && t.caches().fake_b.empty();
    } else {
      name = "legacy_training";
      auto live = t.gen_ab->parameters();
      auto avg = t.ema_ab->parameters();
      behaves = c.train.scheduler == Scheduler::Linear && c.train.weights.gp_mode == GpMode::Legacy;
      for (std::size_t i = 0; i < live.size(); ++i) behaves = behaves && torch::equal(live[i], avg[i]);
    }
    const bool ok = finite && behaves && t.iteration() == kAblationIters;
    all_ok = all_ok && ok;
    notes.push_back(name + (ok ? " ok" : " FAILED"));
  }
  std::string detail = std::to_string(kAblationIters) + " iterations each:";
  for (const auto& n : notes) detail += " " + n;
  return {all_ok, detail};
}

Outcome determinism() {
  const auto& first = toy_run();
  const auto second = work_root() / "toy_run_repeat";
  if (run_cli(toy_train_args(second)) != 0) return {false, "second run failed"};
  const auto a = slurp(first / "metrics.jsonl"), b = slurp(second / "metrics.jsonl");
  const bool same = !a.empty() && a == b;
  return {same, std::to_string(std::count(a.begin(), a.end(), '\n')) + " metrics lines, " +
                    (same ? "bit-identical" : "DIFFERENT")};
}

struct Criterion {
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  ::setenv(kDeterministicEnv, "1", 1);
  torch::set_num_threads(1);

  std::set<std::string> only;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::string(argv[i]) == "--only") only.insert(argv[i + 1]);
  }

  const std::vector<Criterion> criteria{
      {"modulation", modulation_suite},
      {"magnitude", magnitude_preservation},
      {"gradients", gradient_checks},
      {"fifo_batch_head", fifo_and_batch_head},
      {"ema", ema_closed_form},
      {"spectral_norm", spectral_norm_oracle},
      {"fid_kid", fid_kid_oracles},
      {"faithfulness", faithfulness_metrics},
      {"pretraining", pretraining_statistics},
      {"toy_end_to_end", toy_end_to_end},
      {"ablation", ablation_harness},
      {"determinism", determinism},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.name)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << fmt(seconds_since(t0), 4)
              << " s]" << std::endl;
  }
  std::error_code ec;
  fs::remove_all(work_root(), ec);
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
