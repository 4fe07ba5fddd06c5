#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cstn/tensor.hpp"

namespace cstn {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;
  std::int64_t total() const { return tp + fp + tn + fn; }
};

// Ground truth 1 is the positive (changed) class.
ConfusionCounts confusion_counts(const Tensor& cm, const Tensor& gt);

struct ClassificationMetrics {
  std::int64_t oe = 0;  // fp + fn
  double oa = 0.0;
  double f1 = 0.0;
  double kc = 0.0;
  bool gt_empty = false;      // f1 forced to 1: no positives anywhere
  bool chance_degenerate = false;  // kc forced to 0: chance agreement is 1
};

ClassificationMetrics classification_metrics(const ConfusionCounts& c);

struct CurvePoint {
  double threshold = 0.0;
  double x = 0.0;  // ROC: false positive rate; PR: recall
  double y = 0.0;  // ROC: true positive rate; PR: precision
};

struct RocPrResult {
  std::vector<CurvePoint> roc;
  std::vector<CurvePoint> pr;
  double auc = 0.0;
  double ap = 0.0;
};

// Threshold sweep over all distinct score values (prediction: score >=
// threshold). Trapezoid AUC; AP as precision-weighted recall increments.
RocPrResult roc_pr_curves(const Tensor& di, const Tensor& gt);

// Frechet distance between Gaussian fits of two feature sets (rows are
// observations). Covariances use the N-1 denominator; the matrix square
// root is evaluated in the symmetric form via eigendecomposition.
double fid(const Tensor& features_real, const Tensor& features_trans);

// Polynomial-kernel squared MMD, k(r,t) = (r.t/d + 1)^3. The default
// estimator keeps self-pairs (biased); `unbiased` drops the diagonal of the
// within-set terms.
double kid(const Tensor& features_real, const Tensor& features_trans, bool unbiased = false);

using FeatureExtractorFn = std::function<std::vector<double>(const Tensor&)>;

class FeatureExtractorRegistry {
 public:
  static FeatureExtractorRegistry& instance();
  void register_extractor(const std::string& name, FeatureExtractorFn fn);
  FeatureExtractorFn get(const std::string& name) const;  // ConfigError when missing

 private:
  std::vector<std::pair<std::string, FeatureExtractorFn>> entries_;
};

// Windowed image statistics over a grid x grid cell partition: per channel
// and cell, value mean/std/min/max plus gradient-magnitude mean/std, hence
// dimension grid * grid * channels * 6.
std::vector<double> stats_features(const Tensor& image, int grid);
int stats_feature_dimension(int grid, int channels);

// One feature vector per image; all images must produce the same dimension.
Tensor extract_features(const std::vector<Tensor>& images, const std::string& extractor_name);

// Non-overlapping or strided tiling used to give FID/KID sample support
// over a single raster.
std::vector<Tensor> tile_image(const Tensor& image, int tile, int stride);

}  // namespace cstn
