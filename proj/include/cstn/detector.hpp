#pragma once

#include <utility>

#include "cstn/config.hpp"
#include "cstn/model.hpp"
#include "cstn/tensor.hpp"

namespace cstn {

struct ContentFeatures {
  Tensor fx;  // (H, W, 2 * content_channels): own code next to its recovery
  Tensor fy;
};

// Runs the cross-domain translation workflow on full images and stacks each
// domain's content code with the code re-encoded from the translated image.
ContentFeatures content_features(const ModelParameters& params, const Tensor& image_x, const Tensor& image_y);

// Per-pixel Euclidean distance across channels.
Tensor difference_image(const Tensor& fx, const Tensor& fy);

// 2-d Gaussian convolution, kernel normalized to sum 1, reflect borders.
Tensor gaussian_filter(const Tensor& di, double sigma, int kernel_size);

struct OtsuResult {
  double threshold = 0.0;
  bool degenerate = false;  // constant input: threshold set to that constant
};

// Between-class-variance maximizer over a 256-bin histogram of the min-max
// normalized values; the threshold is returned in original units.
OtsuResult otsu_threshold(const Tensor& di);

// 1 where di > threshold, else 0 (ties are unchanged).
Tensor binarize(const Tensor& di, double threshold);

struct DetectionResult {
  Tensor di;  // filtered when the filter is enabled
  Tensor cm;
  double threshold = 0.0;
  bool degenerate = false;
};

DetectionResult detect_changes(const ModelParameters& params, const Tensor& image_x, const Tensor& image_y,
                               const FilterConfig& filter);

}  // namespace cstn
