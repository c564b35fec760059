#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "uvcgan/image.hpp"

namespace uvcgan {

// Maps an image to a fixed-length feature vector.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Eigen::VectorXd extract(const Image& image) const = 0;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;

  // One row per image.
  Eigen::MatrixXd extract_all(const std::vector<Image>& images) const;
};

// Deterministic test extractor: area-averages an RGB image onto a
// grid x grid raster and applies a fixed Gaussian random projection.
class StubExtractor : public FeatureExtractor {
 public:
  explicit StubExtractor(int dim = 32, int grid = 8, std::uint64_t seed = 1234);

  Eigen::VectorXd extract(const Image& image) const override;
  int dim() const override { return static_cast<int>(projection_.rows()); }
  std::string name() const override { return "stub"; }

 private:
  int grid_;
  Eigen::MatrixXd projection_;  // [dim, 3 * grid * grid]
};

// Extractor backed by a TorchScript module (e.g. an exported Inception-v3
// pool-feature network). The module receives a [1, 3, size, size] float
// tensor in [0, 1] (bilinearly resized when size > 0) and returns [1, d].
class TorchScriptExtractor : public FeatureExtractor {
 public:
  TorchScriptExtractor(const std::filesystem::path& model_path, int input_size = 299);
  ~TorchScriptExtractor() override;

  Eigen::VectorXd extract(const Image& image) const override;
  int dim() const override { return dim_; }
  std::string name() const override { return "torchscript"; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int input_size_;
  int dim_ = 0;
};

// Frechet distance between Gaussian fits of two feature sets (rows are
// samples, covariances use the n - 1 normalization).
double fid(const Eigen::MatrixXd& feats_x, const Eigen::MatrixXd& feats_y);

enum class KidEstimator {
  // Paired U-statistic: exactly 0 for identical paired subsets.
  UStatistic,
  // torch-fidelity form: the cross term keeps its diagonal.
  Unbiased,
};

struct KidResult {
  double mean = 0.0;
  double std = 0.0;
};

// Squared MMD between two equally sized subsets with the kernel
// k(u, v) = (<u, v> / d + 1)^3.
double kid_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                KidEstimator estimator = KidEstimator::UStatistic);

// Averages kid_mmd2 over `n_subsets` random subsets. When both sets have the
// same size one index draw is shared by both sides.
KidResult kid(const Eigen::MatrixXd& feats_x, const Eigen::MatrixXd& feats_y,
              std::int64_t subset_size, std::int64_t n_subsets, std::uint64_t seed = 0,
              KidEstimator estimator = KidEstimator::UStatistic);

// Mean feature-space L2 distance over corresponding image pairs.
double i_l2(const FeatureExtractor& extractor, const std::vector<Image>& sources,
            const std::vector<Image>& translations);

using LandmarkSet = std::vector<std::array<double, 3>>;

// Mean Euclidean distance between corresponding landmarks.
double lm_l2(const LandmarkSet& input, const LandmarkSet& translated);

// JSON array of [x, y, z] triples.
LandmarkSet read_landmarks(const std::filesystem::path& path);

// Reported in place of +inf for identical images.
inline constexpr double kPsnrCap = 100.0;

struct PixelMetrics {
  double l2 = 0.0;    // RMS difference on the 0-255 scale
  double psnr = 0.0;  // dB, capped at kPsnrCap
  double ssim = 0.0;
};

double ssim(const Image& x, const Image& y);
PixelMetrics pixel_metrics(const Image& source, const Image& translated);

using PerceptualDistance = std::function<double(const Image&, const Image&)>;

// Mean distance over consecutive pairs (k, k + 1) of the ordered list.
double diversity(const std::vector<Image>& images, const PerceptualDistance& distance);

enum class ProtocolKind { LqLegacy, HqAdhoc, Consistent };

struct EvalProtocol {
  ProtocolKind kind = ProtocolKind::Consistent;
  std::string name = "consistent";
  int image_size = 256;
  // Resize the smaller side then center-crop (otherwise resize both sides).
  bool smaller_side_crop = false;
  bool resize = true;
  std::int64_t kid_subset_size = 100;
  std::int64_t kid_subsets = 100;
  std::optional<std::array<double, 3>> standardize_mean;
  std::optional<std::array<double, 3>> standardize_std;

  // CelebA-style legacy protocol (smaller side -> 256, center crop, KID
  // subsets of 1000). `anime` selects the unprocessed-256 variant with
  // KID subsets of 50.
  static EvalProtocol lq_legacy(bool anime = false);
  // EGSDE-style: resize to 256 and standardize channels.
  static EvalProtocol hq_adhoc();
  // Lanczos resize to 256, no standardization, KID subsets of 100.
  static EvalProtocol consistent();
  // "lq_legacy", "lq_legacy_anime", "hq_adhoc" or "consistent".
  static EvalProtocol from_name(const std::string& name);
};

// Geometry step only (no standardization); values stay in [0, 1].
Image preprocess_geometry(const Image& image, const EvalProtocol& protocol);
// Full preprocessing, including channel standardization when configured.
Image preprocess(const Image& image, const EvalProtocol& protocol);
Image standardize(const Image& image, const std::array<double, 3>& mean,
                  const std::array<double, 3>& std);

struct EvalReport {
  std::string protocol;
  double fid = 0.0;
  double kid_mean = 0.0;
  double kid_std = 0.0;
  std::optional<double> i_l2;
  std::optional<double> lm_l2;
  std::optional<double> pixel_l2;
  std::optional<double> psnr;
  std::optional<double> ssim;
  double diversity = 0.0;
  std::int64_t n_images = 0;
  std::int64_t kid_subset_size = 0;

  nlohmann::json to_json() const;
};

struct EvalInputs {
  std::filesystem::path translated_dir;
  std::filesystem::path target_dir;
  std::filesystem::path source_dir;             // optional: faithfulness metrics
  std::filesystem::path source_landmarks_dir;   // optional: Lm-L2
  std::filesystem::path translated_landmarks_dir;
};

// Realism (FID/KID translated vs target) and, when a source directory is
// given, faithfulness (I-L2, pixel L2/PSNR/SSIM) of translations paired with
// sources in sorted filename order. KID subsets are clamped to the smaller
// set size.
EvalReport evaluate(const EvalInputs& inputs, const EvalProtocol& protocol,
                    const FeatureExtractor& extractor, std::uint64_t seed = 0);

}  // namespace uvcgan
