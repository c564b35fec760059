#include "uvcgan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <torch/script.h>
#include <torch/torch.h>

#include "uvcgan/errors.hpp"
#include "uvcgan/rng.hpp"

namespace uvcgan {

namespace fs = std::filesystem;

Eigen::MatrixXd FeatureExtractor::extract_all(const std::vector<Image>& images) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = extract(images[i]).transpose();
  }
  return out;
}

StubExtractor::StubExtractor(int dim, int grid, std::uint64_t seed) : grid_(grid) {
  if (dim < 1 || grid < 1) throw std::invalid_argument("StubExtractor: dim and grid must be >= 1");
  const int in = 3 * grid * grid;
  projection_.resize(dim, in);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < in; ++c) {
      // Box-Muller from the raw stream keeps the matrix platform-independent.
      const double u1 = 1.0 - rng.uniform(), u2 = rng.uniform();
      projection_(r, c) = scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
  }
}

Eigen::VectorXd StubExtractor::extract(const Image& image) const {
  if (image.channels != 3 || image.height < grid_ || image.width < grid_) {
    throw ShapeError("StubExtractor: expects an RGB image of at least grid x grid pixels");
  }
  Eigen::VectorXd pooled(3 * grid_ * grid_);
  for (int c = 0; c < 3; ++c) {
    for (int gy = 0; gy < grid_; ++gy) {
      const int y0 = gy * image.height / grid_, y1 = (gy + 1) * image.height / grid_;
      for (int gx = 0; gx < grid_; ++gx) {
        const int x0 = gx * image.width / grid_, x1 = (gx + 1) * image.width / grid_;
        double acc = 0.0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) acc += image.at(c, y, x);
        }
        pooled((c * grid_ + gy) * grid_ + gx) = acc / ((y1 - y0) * (x1 - x0));
      }
    }
  }
  return projection_ * pooled;
}

struct TorchScriptExtractor::Impl {
  mutable torch::jit::script::Module module;
};

TorchScriptExtractor::TorchScriptExtractor(const fs::path& model_path, int input_size)
    : impl_(std::make_unique<Impl>()), input_size_(input_size) {
  try {
    impl_->module = torch::jit::load(model_path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot load feature extractor " + model_path.string() + ": " + e.what());
  }
  impl_->module.eval();
  Image probe(3, std::max(input_size_, 8), std::max(input_size_, 8), 0.5f);
  dim_ = static_cast<int>(extract(probe).size());
}

TorchScriptExtractor::~TorchScriptExtractor() = default;

Eigen::VectorXd TorchScriptExtractor::extract(const Image& image) const {
  torch::NoGradGuard no_grad;
  auto x = ((to_tensor(image) + 1.0f) * 0.5f).unsqueeze(0);
  if (input_size_ > 0 && (image.height != input_size_ || image.width != input_size_)) {
    x = torch::nn::functional::interpolate(
        x, torch::nn::functional::InterpolateFuncOptions()
               .size(std::vector<std::int64_t>{input_size_, input_size_})
               .mode(torch::kBilinear)
               .align_corners(false));
  }
  auto out = impl_->module.forward({x}).toTensor().to(torch::kFloat64).reshape({-1}).contiguous();
  Eigen::VectorXd v(out.numel());
  std::copy_n(out.data_ptr<double>(), out.numel(), v.data());
  return v;
}

namespace {

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite features");
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean) {
  Eigen::MatrixXd centered = x.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

double polynomial_kernel_sum(const Eigen::MatrixXd& k, bool drop_diagonal) {
  double total = k.sum();
  if (drop_diagonal) total -= k.diagonal().sum();
  return total;
}

Eigen::MatrixXd rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

}  // namespace

double fid(const Eigen::MatrixXd& feats_x, const Eigen::MatrixXd& feats_y) {
  if (feats_x.rows() < 2 || feats_y.rows() < 2) {
    throw std::invalid_argument("fid: need at least 2 samples per set");
  }
  if (feats_x.cols() != feats_y.cols()) throw ShapeError("fid: feature dims differ");
  require_finite(feats_x, "fid");
  require_finite(feats_y, "fid");

  const Eigen::RowVectorXd mu_x = feats_x.colwise().mean();
  const Eigen::RowVectorXd mu_y = feats_y.colwise().mean();
  const Eigen::MatrixXd cov_x = covariance(feats_x, mu_x);
  const Eigen::MatrixXd cov_y = covariance(feats_y, mu_y);

  // Tr((Sx Sy)^{1/2}) = Tr((Sx^{1/2} Sy Sx^{1/2})^{1/2}); the inner product is
  // symmetric PSD, so a self-adjoint eigensolve applies.
  const Eigen::MatrixXd root_x = psd_sqrt(cov_x);
  Eigen::MatrixXd inner = root_x * cov_y * root_x;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  const double trace_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double value = (mu_x - mu_y).squaredNorm() + cov_x.trace() + cov_y.trace() -
                       2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

double kid_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, KidEstimator estimator) {
  if (x.rows() != y.rows() || x.rows() < 2) {
    throw ShapeError("kid_mmd2: subsets must have equal size >= 2");
  }
  if (x.cols() != y.cols()) throw ShapeError("kid_mmd2: feature dims differ");
  const double m = static_cast<double>(x.rows());
  const double d = static_cast<double>(x.cols());
  auto kernel = [d](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd k = (a * b.transpose()).array() / d + 1.0;
    return Eigen::MatrixXd(k.array().cube());
  };
  const auto kxx = kernel(x, x), kyy = kernel(y, y), kxy = kernel(x, y);
  const double within =
      (polynomial_kernel_sum(kxx, true) + polynomial_kernel_sum(kyy, true)) / (m * (m - 1.0));
  if (estimator == KidEstimator::UStatistic) {
    return within - 2.0 * polynomial_kernel_sum(kxy, true) / (m * (m - 1.0));
  }
  return within - 2.0 * polynomial_kernel_sum(kxy, false) / (m * m);
}

KidResult kid(const Eigen::MatrixXd& feats_x, const Eigen::MatrixXd& feats_y,
              std::int64_t subset_size, std::int64_t n_subsets, std::uint64_t seed,
              KidEstimator estimator) {
  if (subset_size < 2 || subset_size > feats_x.rows() || subset_size > feats_y.rows()) {
    throw std::invalid_argument("kid: subset size must be in [2, min set size]");
  }
  if (n_subsets < 1) throw std::invalid_argument("kid: need at least one subset");
  require_finite(feats_x, "kid");
  require_finite(feats_y, "kid");

  Rng rng(seed);
  const bool paired = feats_x.rows() == feats_y.rows();
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n_subsets));
  for (std::int64_t s = 0; s < n_subsets; ++s) {
    const auto k = static_cast<std::size_t>(subset_size);
    const auto idx_x = rng.choose(static_cast<std::size_t>(feats_x.rows()), k);
    const auto idx_y = paired ? idx_x : rng.choose(static_cast<std::size_t>(feats_y.rows()), k);
    values.push_back(kid_mmd2(rows(feats_x, idx_x), rows(feats_y, idx_y), estimator));
  }
  KidResult r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(sq / static_cast<double>(values.size()));
  return r;
}

double i_l2(const FeatureExtractor& extractor, const std::vector<Image>& sources,
            const std::vector<Image>& translations) {
  if (sources.size() != translations.size() || sources.empty()) {
    throw ShapeError("i_l2: need equally many (>0) sources and translations");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    total += (extractor.extract(sources[i]) - extractor.extract(translations[i])).norm();
  }
  return total / static_cast<double>(sources.size());
}

double lm_l2(const LandmarkSet& input, const LandmarkSet& translated) {
  if (input.size() != translated.size() || input.empty()) {
    throw ShapeError("lm_l2: landmark sets must have equal, non-zero size");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double dx = input[i][0] - translated[i][0];
    const double dy = input[i][1] - translated[i][1];
    const double dz = input[i][2] - translated[i][2];
    total += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return total / static_cast<double>(input.size());
}

LandmarkSet read_landmarks(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open landmark file " + path.string());
  auto j = nlohmann::json::parse(in);
  LandmarkSet out;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 3) {
      throw IoError("landmark file " + path.string() + ": entries must be [x, y, z]");
    }
    out.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
  }
  return out;
}

double ssim(const Image& x, const Image& y) {
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5;
  if (!x.same_shape(y)) throw ShapeError("ssim: images differ in shape");
  if (x.height < kWindow || x.width < kWindow) {
    throw ShapeError("ssim: images must be at least 11x11");
  }
  std::array<double, kWindow> g{};
  double gsum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double t = i - kWindow / 2;
    g[i] = std::exp(-t * t / (2.0 * kSigma * kSigma));
    gsum += g[i];
  }
  for (auto& v : g) v /= gsum;

  const double c1 = std::pow(0.01 * 255.0, 2), c2 = std::pow(0.03 * 255.0, 2);
  const int oh = x.height - kWindow + 1, ow = x.width - kWindow + 1;
  // Valid-region Gaussian filtering, separable.
  auto filter = [&](const std::vector<double>& plane, int h, int w) {
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (int k = 0; k < kWindow; ++k) acc += g[k] * plane[static_cast<std::size_t>(r) * w + c + k];
        tmp[static_cast<std::size_t>(r) * ow + c] = acc;
      }
    }
    for (int r = 0; r < oh; ++r) {
      for (int c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (int k = 0; k < kWindow; ++k) acc += g[k] * tmp[static_cast<std::size_t>(r + k) * ow + c];
        out[static_cast<std::size_t>(r) * ow + c] = acc;
      }
    }
    return out;
  };

  double total = 0.0;
  const std::size_t n = static_cast<std::size_t>(x.height) * x.width;
  for (int ch = 0; ch < x.channels; ++ch) {
    std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = 255.0 * x.data[ch * n + i];
      b[i] = 255.0 * y.data[ch * n + i];
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter(a, x.height, x.width), mu_b = filter(b, x.height, x.width);
    const auto s_aa = filter(aa, x.height, x.width), s_bb = filter(bb, x.height, x.width);
    const auto s_ab = filter(ab, x.height, x.width);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = s_aa[i] - mu_a[i] * mu_a[i];
      const double vb = s_bb[i] - mu_b[i] * mu_b[i];
      const double cov = s_ab[i] - mu_a[i] * mu_b[i];
      acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / x.channels;
}

PixelMetrics pixel_metrics(const Image& source, const Image& translated) {
  if (!source.same_shape(translated)) throw ShapeError("pixel_metrics: images differ in shape");
  double sq = 0.0;
  for (std::size_t i = 0; i < source.data.size(); ++i) {
    const double d = 255.0 * (static_cast<double>(source.data[i]) - translated.data[i]);
    sq += d * d;
  }
  PixelMetrics m;
  m.l2 = std::sqrt(sq / static_cast<double>(source.data.size()));
  m.psnr = m.l2 > 0.0 ? std::min(kPsnrCap, 20.0 * std::log10(255.0 / m.l2)) : kPsnrCap;
  m.ssim = ssim(source, translated);
  return m;
}

double diversity(const std::vector<Image>& images, const PerceptualDistance& distance) {
  if (images.size() < 2) throw std::invalid_argument("diversity: need at least 2 images");
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < images.size(); ++k) total += distance(images[k], images[k + 1]);
  return total / static_cast<double>(images.size() - 1);
}

EvalProtocol EvalProtocol::lq_legacy(bool anime) {
  EvalProtocol p;
  p.kind = ProtocolKind::LqLegacy;
  if (anime) {
    p.name = "lq_legacy_anime";
    p.resize = false;
    p.kid_subset_size = 50;
  } else {
    p.name = "lq_legacy";
    p.smaller_side_crop = true;
    p.kid_subset_size = 1000;
  }
  return p;
}

EvalProtocol EvalProtocol::hq_adhoc() {
  EvalProtocol p;
  p.kind = ProtocolKind::HqAdhoc;
  p.name = "hq_adhoc";
  p.kid_subset_size = 100;
  p.standardize_mean = std::array<double, 3>{0.485, 0.456, 0.406};
  p.standardize_std = std::array<double, 3>{0.229, 0.224, 0.225};
  return p;
}

EvalProtocol EvalProtocol::consistent() { return EvalProtocol{}; }

EvalProtocol EvalProtocol::from_name(const std::string& name) {
  if (name == "lq_legacy") return lq_legacy(false);
  if (name == "lq_legacy_anime") return lq_legacy(true);
  if (name == "hq_adhoc") return hq_adhoc();
  if (name == "consistent") return consistent();
  throw ConfigError("unknown evaluation protocol '" + name + "'");
}

Image preprocess_geometry(const Image& image, const EvalProtocol& protocol) {
  if (!protocol.resize) return image;
  const int size = protocol.image_size;
  if (protocol.smaller_side_crop) {
    return center_crop(resize_smaller_side(image, size), size, size);
  }
  return resize_lanczos(image, size, size);
}

Image standardize(const Image& image, const std::array<double, 3>& mean,
                  const std::array<double, 3>& std) {
  if (image.channels != 3) throw ShapeError("standardize: expects an RGB image");
  Image out = image;
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      auto& v = out.data[c * plane + i];
      v = static_cast<float>((v - mean[c]) / std[c]);
    }
  }
  return out;
}

Image preprocess(const Image& image, const EvalProtocol& protocol) {
  auto out = preprocess_geometry(image, protocol);
  if (protocol.standardize_mean && protocol.standardize_std) {
    out = standardize(out, *protocol.standardize_mean, *protocol.standardize_std);
  }
  return out;
}

nlohmann::json EvalReport::to_json() const {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"protocol", protocol},   {"fid", fid},           {"kid_mean", kid_mean},
          {"kid_std", kid_std},     {"i_l2", opt(i_l2)},    {"lm_l2", opt(lm_l2)},
          {"pixel_l2", opt(pixel_l2)}, {"psnr", opt(psnr)}, {"ssim", opt(ssim)},
          {"diversity", diversity}, {"n_images", n_images}, {"kid_subset_size", kid_subset_size}};
}

namespace {

std::vector<Image> load_dir(const fs::path& dir, const EvalProtocol& protocol,
                            std::vector<fs::path>* files = nullptr) {
  auto paths = list_images(dir);
  if (paths.empty()) throw IoError("no images in " + dir.string());
  std::vector<Image> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(preprocess_geometry(read_image(p), protocol));
  if (files) *files = std::move(paths);
  return out;
}

std::vector<Image> standardized(const std::vector<Image>& images, const EvalProtocol& protocol) {
  if (!protocol.standardize_mean || !protocol.standardize_std) return images;
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    out.push_back(standardize(img, *protocol.standardize_mean, *protocol.standardize_std));
  }
  return out;
}

}  // namespace

EvalReport evaluate(const EvalInputs& inputs, const EvalProtocol& protocol,
                    const FeatureExtractor& extractor, std::uint64_t seed) {
  std::vector<fs::path> translated_files;
  const auto translated = load_dir(inputs.translated_dir, protocol, &translated_files);
  const auto target = load_dir(inputs.target_dir, protocol);
  const auto translated_std = standardized(translated, protocol);

  EvalReport report;
  report.protocol = protocol.name;
  report.n_images = static_cast<std::int64_t>(translated.size());

  const auto feats_translated = extractor.extract_all(translated_std);
  const auto feats_target = extractor.extract_all(standardized(target, protocol));
  report.fid = fid(feats_translated, feats_target);
  report.kid_subset_size = std::min<std::int64_t>(
      {protocol.kid_subset_size, feats_translated.rows(), feats_target.rows()});
  const auto k = kid(feats_translated, feats_target, report.kid_subset_size,
                     protocol.kid_subsets, seed);
  report.kid_mean = k.mean;
  report.kid_std = k.std;

  if (translated.size() >= 2) {
    report.diversity = diversity(translated_std, [&](const Image& a, const Image& b) {
      return (extractor.extract(a) - extractor.extract(b)).norm();
    });
  }

  if (!inputs.source_dir.empty()) {
    const auto sources = load_dir(inputs.source_dir, protocol);
    if (sources.size() != translated.size()) {
      throw ShapeError("evaluate: source and translated directories differ in size");
    }
    report.i_l2 = i_l2(extractor, standardized(sources, protocol), translated_std);
    double l2 = 0.0, psnr = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const auto m = pixel_metrics(sources[i], translated[i]);
      l2 += m.l2;
      psnr += m.psnr;
      ss += m.ssim;
    }
    const double n = static_cast<double>(sources.size());
    report.pixel_l2 = l2 / n;
    report.psnr = psnr / n;
    report.ssim = ss / n;
  }

  if (!inputs.source_landmarks_dir.empty() && !inputs.translated_landmarks_dir.empty()) {
    double total = 0.0;
    for (const auto& file : translated_files) {
      const auto name = file.stem().string() + ".json";
      total += lm_l2(read_landmarks(inputs.source_landmarks_dir / name),
                     read_landmarks(inputs.translated_landmarks_dir / name));
    }
    report.lm_l2 = total / static_cast<double>(translated_files.size());
  }
  return report;
}

}  // namespace uvcgan
