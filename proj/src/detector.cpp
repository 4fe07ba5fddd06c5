#include "cstn/detector.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <vector>

#include "cstn/errors.hpp"

namespace cstn {

namespace {

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
    throw ShapeError("concat_channels: spatial dims differ: " + shape_string(a) + " vs " + shape_string(b));
  }
  const int h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  Tensor out({h, w, ca + cb});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int c = 0; c < ca; ++c) out.at(i, j, c) = a.at(i, j, c);
      for (int c = 0; c < cb; ++c) out.at(i, j, ca + c) = b.at(i, j, c);
    }
  }
  return out;
}

}  // namespace

ContentFeatures content_features(const ModelParameters& params, const Tensor& image_x, const Tensor& image_y) {
  if (image_x.ndim() != 3 || image_y.ndim() != 3) throw ShapeError("content_features: images must be (H,W,C)");
  if (image_x.dim(0) != image_y.dim(0) || image_x.dim(1) != image_y.dim(1)) {
    throw ShapeError("content_features: image sizes differ");
  }

  const Tensor content_x = infer_content_code(params, image_x, Domain::X);
  const Tensor content_y = infer_content_code(params, image_y, Domain::Y);
  const Tensor style_x = infer_style_code(params, image_x, Domain::X);
  const Tensor style_y = infer_style_code(params, image_y, Domain::Y);

  // Translate each image into the other domain, then re-encode the results
  // to recover each input's content code from the opposite branch.
  const Tensor into_x = infer_decode(params, content_y, style_x, Domain::X);
  const Tensor into_y = infer_decode(params, content_x, style_y, Domain::Y);
  const Tensor recovered_x = infer_content_code(params, into_y, Domain::Y);
  const Tensor recovered_y = infer_content_code(params, into_x, Domain::X);

  ContentFeatures f;
  f.fx = concat_channels(content_x, recovered_x);
  f.fy = concat_channels(recovered_y, content_y);
  return f;
}

Tensor difference_image(const Tensor& fx, const Tensor& fy) {
  require_same_shape(fx, fy, "difference_image");
  if (fx.ndim() != 3) throw ShapeError("difference_image: expected (H,W,C) features");
  const int h = fx.dim(0), w = fx.dim(1), c = fx.dim(2);
  Tensor di({h, w});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int ci = 0; ci < c; ++ci) {
        const double d = fx.at(i, j, ci) - fy.at(i, j, ci);
        acc += d * d;
      }
      di.at(i, j) = std::sqrt(acc);
    }
  }
  return di;
}

Tensor gaussian_filter(const Tensor& di, double sigma, int kernel_size) {
  if (di.ndim() != 2) throw ShapeError("gaussian_filter: expected (H,W)");
  if (!(sigma > 0.0)) throw ConfigError("gaussian_filter: sigma must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("gaussian_filter: kernel size must be odd");

  const int radius = kernel_size / 2;
  std::vector<double> kernel(static_cast<std::size_t>(kernel_size) * kernel_size);
  double sum = 0.0;
  for (int ky = -radius; ky <= radius; ++ky) {
    for (int kx = -radius; kx <= radius; ++kx) {
      const double v = std::exp(-0.5 * (ky * ky + kx * kx) / (sigma * sigma));
      kernel[static_cast<std::size_t>(ky + radius) * kernel_size + (kx + radius)] = v;
      sum += v;
    }
  }
  for (double& v : kernel) v /= sum;

  const int h = di.dim(0), w = di.dim(1);
  const auto reflect = [](int idx, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    int j = idx % period;
    if (j < 0) j += period;
    if (j >= n) j = period - 1 - j;
    return j;
  };
  Tensor out({h, w});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int ky = -radius; ky <= radius; ++ky) {
        const int si = reflect(i + ky, h);
        for (int kx = -radius; kx <= radius; ++kx) {
          const int sj = reflect(j + kx, w);
          acc += kernel[static_cast<std::size_t>(ky + radius) * kernel_size + (kx + radius)] * di.at(si, sj);
        }
      }
      out.at(i, j) = acc;
    }
  }
  return out;
}

OtsuResult otsu_threshold(const Tensor& di) {
  if (di.size() == 0) throw ValidationError("otsu_threshold: empty input");
  const double lo = di.min_value();
  const double hi = di.max_value();
  if (!(std::isfinite(lo) && std::isfinite(hi))) throw NumericError("otsu_threshold: non-finite values");
  if (hi == lo) {
    std::cerr << "warning: constant difference image; threshold degenerates to its value\n";
    return {lo, true};
  }

  constexpr int kBins = 256;
  std::vector<std::int64_t> hist(kBins, 0);
  const double scale = kBins / (hi - lo);
  for (std::size_t i = 0; i < di.size(); ++i) {
    int bin = static_cast<int>((di[i] - lo) * scale);
    bin = std::clamp(bin, 0, kBins - 1);
    ++hist[static_cast<std::size_t>(bin)];
  }

  const double total = static_cast<double>(di.size());
  double sum_all = 0.0;
  for (int k = 0; k < kBins; ++k) sum_all += static_cast<double>(k) * static_cast<double>(hist[k]);

  double best_var = -1.0;
  int best_bin = 0;
  double w0 = 0.0, sum0 = 0.0;
  for (int k = 0; k < kBins - 1; ++k) {
    w0 += static_cast<double>(hist[k]);
    sum0 += static_cast<double>(k) * static_cast<double>(hist[k]);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best_var) {
      best_var = between;
      best_bin = k;
    }
  }
  // Split after bin `best_bin`: the threshold sits on the upper bin edge.
  const double threshold = lo + (static_cast<double>(best_bin) + 1.0) * (hi - lo) / kBins;
  return {threshold, false};
}

Tensor binarize(const Tensor& di, double threshold) {
  Tensor cm(di.shape());
  for (std::size_t i = 0; i < di.size(); ++i) cm[i] = di[i] > threshold ? 1.0 : 0.0;
  return cm;
}

DetectionResult detect_changes(const ModelParameters& params, const Tensor& image_x, const Tensor& image_y,
                               const FilterConfig& filter) {
  filter.validate();
  const ContentFeatures features = content_features(params, image_x, image_y);
  Tensor di = difference_image(features.fx, features.fy);
  if (filter.enabled) di = gaussian_filter(di, filter.sigma, filter.kernel_size);
  const OtsuResult otsu = otsu_threshold(di);
  DetectionResult result;
  result.cm = binarize(di, otsu.threshold);
  result.di = std::move(di);
  result.threshold = otsu.threshold;
  result.degenerate = otsu.degenerate;
  return result;
}

}  // namespace cstn
