#include "cstn/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "cstn/errors.hpp"

namespace cstn {

namespace {

void require_binary(const Tensor& t, const char* name) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != 0.0 && t[i] != 1.0) {
      throw ValidationError(std::string(name) + " must be strictly binary");
    }
  }
}

}  // namespace

ConfusionCounts confusion_counts(const Tensor& cm, const Tensor& gt) {
  require_same_shape(cm, gt, "confusion_counts");
  require_binary(cm, "change map");
  require_binary(gt, "ground truth");
  ConfusionCounts c;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    if (gt[i] == 1.0) {
      if (cm[i] == 1.0) ++c.tp;
      else ++c.fn;
    } else {
      if (cm[i] == 1.0) ++c.fp;
      else ++c.tn;
    }
  }
  return c;
}

ClassificationMetrics classification_metrics(const ConfusionCounts& c) {
  const std::int64_t n = c.total();
  if (n <= 0) throw ValidationError("classification_metrics: empty confusion counts");
  if (c.tp < 0 || c.fp < 0 || c.tn < 0 || c.fn < 0) throw ValidationError("classification_metrics: negative counts");

  ClassificationMetrics m;
  m.oe = c.fp + c.fn;
  const double nd = static_cast<double>(n);
  m.oa = static_cast<double>(c.tp + c.tn) / nd;

  const std::int64_t f1_denom = 2 * c.tp + c.fp + c.fn;
  if (f1_denom == 0) {
    m.f1 = 1.0;
    m.gt_empty = true;
  } else {
    m.f1 = 2.0 * static_cast<double>(c.tp) / static_cast<double>(f1_denom);
  }

  const double pred_pos = static_cast<double>(c.tp + c.fp);
  const double pred_neg = static_cast<double>(c.fn + c.tn);
  const double gt_pos = static_cast<double>(c.tp + c.fn);
  const double gt_neg = static_cast<double>(c.fp + c.tn);
  const double chance = (pred_pos * gt_pos + pred_neg * gt_neg) / (nd * nd);
  if (chance >= 1.0) {
    m.kc = 0.0;
    m.chance_degenerate = true;
  } else {
    m.kc = (m.oa - chance) / (1.0 - chance);
  }
  return m;
}

RocPrResult roc_pr_curves(const Tensor& di, const Tensor& gt) {
  require_same_shape(di, gt, "roc_pr_curves");
  require_binary(gt, "ground truth");
  std::int64_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) (gt[i] == 1.0 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) {
    throw ValidationError("roc_pr_curves: ground truth must contain both classes");
  }

  std::vector<std::size_t> order(di.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&di](std::size_t a, std::size_t b) { return di[a] > di[b]; });

  RocPrResult result;
  result.roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});

  const double posd = static_cast<double>(pos);
  const double negd = static_cast<double>(neg);
  std::int64_t cum_tp = 0, cum_fp = 0;
  double prev_fpr = 0.0, prev_tpr = 0.0, prev_recall = 0.0;

  std::size_t i = 0;
  while (i < order.size()) {
    const double value = di[order[i]];
    // Consume the whole tie group: each distinct value is one operating
    // point (prediction rule: score >= threshold).
    while (i < order.size() && di[order[i]] == value) {
      if (gt[order[i]] == 1.0) ++cum_tp;
      else ++cum_fp;
      ++i;
    }
    const double tpr = static_cast<double>(cum_tp) / posd;
    const double fpr = static_cast<double>(cum_fp) / negd;
    const double recall = tpr;
    const double precision = static_cast<double>(cum_tp) / static_cast<double>(cum_tp + cum_fp);
    result.roc.push_back({value, fpr, tpr});
    result.pr.push_back({value, recall, precision});
    result.auc += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
    result.ap += (recall - prev_recall) * precision;
    prev_fpr = fpr;
    prev_tpr = tpr;
    prev_recall = recall;
  }
  return result;
}

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

void check_feature_set(const Tensor& f, const char* name) {
  if (f.ndim() != 2 || f.dim(0) < 1 || f.dim(1) < 1) {
    throw ValidationError(std::string(name) + ": feature set must be a non-empty (n, d) array");
  }
  if (!f.all_finite()) throw ValidationError(std::string(name) + ": non-finite feature values");
}

Matrix to_matrix(const Tensor& f) {
  Matrix m(f.dim(0), f.dim(1));
  for (int i = 0; i < f.dim(0); ++i) {
    for (int j = 0; j < f.dim(1); ++j) m(i, j) = f[static_cast<std::size_t>(i) * f.dim(1) + j];
  }
  return m;
}

// Eigendecomposition-based PSD square root; eigenvalues slightly below zero
// are clipped, anything clearly negative is a numerical failure.
Matrix psd_sqrt(const Matrix& a, const char* context) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
  if (solver.info() != Eigen::Success) throw NumericError(std::string(context) + ": eigendecomposition failed");
  Vector eig = solver.eigenvalues();
  const double scale = std::max(1.0, std::abs(eig.maxCoeff()));
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    if (eig[i] < -1e-8 * scale) {
      throw NumericError(std::string(context) + ": negative eigenvalue " + std::to_string(eig[i]) +
                         " beyond tolerance");
    }
    eig[i] = eig[i] > 0.0 ? std::sqrt(eig[i]) : 0.0;
  }
  return solver.eigenvectors() * eig.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

double fid(const Tensor& features_real, const Tensor& features_trans) {
  check_feature_set(features_real, "fid");
  check_feature_set(features_trans, "fid");
  if (features_real.dim(1) != features_trans.dim(1)) {
    throw ValidationError("fid: feature dimensions differ (" + std::to_string(features_real.dim(1)) + " vs " +
                          std::to_string(features_trans.dim(1)) + ")");
  }
  const Matrix real = to_matrix(features_real);
  const Matrix trans = to_matrix(features_trans);
  const Vector mu_r = real.colwise().mean();
  const Vector mu_t = trans.colwise().mean();

  const auto covariance = [](const Matrix& m, const Vector& mu) {
    const Eigen::Index n = m.rows();
    if (n < 2) return Matrix::Zero(m.cols(), m.cols()).eval();
    const Matrix centered = m.rowwise() - mu.transpose();
    return Matrix((centered.transpose() * centered) / static_cast<double>(n - 1));
  };
  const Matrix sigma_r = covariance(real, mu_r);
  const Matrix sigma_t = covariance(trans, mu_t);

  // tr((Sr St)^(1/2)) computed through the stable symmetric form
  // (Sr^(1/2) St Sr^(1/2))^(1/2), which shares its eigenvalues.
  const Matrix root_r = psd_sqrt(sigma_r, "fid");
  const Matrix inner = root_r * sigma_t * root_r;
  const Matrix cross = psd_sqrt(0.5 * (inner + inner.transpose()), "fid");

  const double mean_term = (mu_r - mu_t).squaredNorm();
  return mean_term + sigma_r.trace() + sigma_t.trace() - 2.0 * cross.trace();
}

double kid(const Tensor& features_real, const Tensor& features_trans, bool unbiased) {
  check_feature_set(features_real, "kid");
  check_feature_set(features_trans, "kid");
  const int d = features_real.dim(1);
  if (d != features_trans.dim(1)) {
    throw ValidationError("kid: feature dimensions differ (" + std::to_string(d) + " vs " +
                          std::to_string(features_trans.dim(1)) + ")");
  }
  const int nr = features_real.dim(0);
  const int nt = features_trans.dim(0);
  const double dd = static_cast<double>(d);

  const auto kernel = [&](const Tensor& a, int i, const Tensor& b, int j) {
    double dot = 0.0;
    const double* av = a.data() + static_cast<std::size_t>(i) * d;
    const double* bv = b.data() + static_cast<std::size_t>(j) * d;
    for (int k = 0; k < d; ++k) dot += av[k] * bv[k];
    const double base = dot / dd + 1.0;
    return base * base * base;
  };

  double within_r = 0.0, within_t = 0.0, between = 0.0;
  for (int i = 0; i < nr; ++i) {
    for (int j = 0; j < nr; ++j) {
      if (unbiased && i == j) continue;
      within_r += kernel(features_real, i, features_real, j);
    }
  }
  for (int i = 0; i < nt; ++i) {
    for (int j = 0; j < nt; ++j) {
      if (unbiased && i == j) continue;
      within_t += kernel(features_trans, i, features_trans, j);
    }
  }
  for (int i = 0; i < nr; ++i) {
    for (int j = 0; j < nt; ++j) between += kernel(features_real, i, features_trans, j);
  }

  if (unbiased) {
    if (nr < 2 || nt < 2) throw ValidationError("kid: unbiased estimator needs at least two samples per set");
    within_r /= static_cast<double>(nr) * (nr - 1);
    within_t /= static_cast<double>(nt) * (nt - 1);
  } else {
    within_r /= static_cast<double>(nr) * nr;
    within_t /= static_cast<double>(nt) * nt;
  }
  between /= static_cast<double>(nr) * nt;
  return within_r + within_t - 2.0 * between;
}

FeatureExtractorRegistry& FeatureExtractorRegistry::instance() {
  static FeatureExtractorRegistry registry;
  if (registry.entries_.empty()) {
    registry.register_extractor("stats", [](const Tensor& image) { return stats_features(image, 4); });
  }
  return registry;
}

void FeatureExtractorRegistry::register_extractor(const std::string& name, FeatureExtractorFn fn) {
  for (auto& e : entries_) {
    if (e.first == name) {
      e.second = std::move(fn);
      return;
    }
  }
  entries_.emplace_back(name, std::move(fn));
}

FeatureExtractorFn FeatureExtractorRegistry::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw ConfigError("unknown feature extractor '" + name + "'");
}

int stats_feature_dimension(int grid, int channels) { return grid * grid * channels * 6; }

std::vector<double> stats_features(const Tensor& image, int grid) {
  if (image.ndim() != 3) throw ShapeError("stats_features: expected (H,W,C)");
  if (grid <= 0) throw ConfigError("stats_features: grid must be positive");
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);

  const auto gradient_magnitude = [&](int i, int j, int ci) {
    const int jl = std::max(0, j - 1), jr = std::min(w - 1, j + 1);
    const int iu = std::max(0, i - 1), id = std::min(h - 1, i + 1);
    const double gx = (image.at(i, jr, ci) - image.at(i, jl, ci)) * 0.5;
    const double gy = (image.at(id, j, ci) - image.at(iu, j, ci)) * 0.5;
    return std::sqrt(gx * gx + gy * gy);
  };

  std::vector<double> features;
  features.reserve(static_cast<std::size_t>(stats_feature_dimension(grid, c)));
  for (int gy = 0; gy < grid; ++gy) {
    const int r0 = static_cast<int>(static_cast<std::int64_t>(gy) * h / grid);
    const int r1 = std::max(r0 + 1, static_cast<int>(static_cast<std::int64_t>(gy + 1) * h / grid));
    for (int gx = 0; gx < grid; ++gx) {
      const int c0 = static_cast<int>(static_cast<std::int64_t>(gx) * w / grid);
      const int c1 = std::max(c0 + 1, static_cast<int>(static_cast<std::int64_t>(gx + 1) * w / grid));
      const double count = static_cast<double>(r1 - r0) * (c1 - c0);
      for (int ci = 0; ci < c; ++ci) {
        double sum = 0.0, gsum = 0.0;
        double vmin = image.at(r0, c0, ci), vmax = vmin;
        for (int i = r0; i < r1; ++i) {
          for (int j = c0; j < c1; ++j) {
            const double v = image.at(i, j, ci);
            sum += v;
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
            gsum += gradient_magnitude(i, j, ci);
          }
        }
        const double mean = sum / count;
        const double gmean = gsum / count;
        double var = 0.0, gvar = 0.0;
        for (int i = r0; i < r1; ++i) {
          for (int j = c0; j < c1; ++j) {
            const double dv = image.at(i, j, ci) - mean;
            var += dv * dv;
            const double dg = gradient_magnitude(i, j, ci) - gmean;
            gvar += dg * dg;
          }
        }
        features.push_back(mean);
        features.push_back(std::sqrt(var / count));
        features.push_back(vmin);
        features.push_back(vmax);
        features.push_back(gmean);
        features.push_back(std::sqrt(gvar / count));
      }
    }
  }
  return features;
}

Tensor extract_features(const std::vector<Tensor>& images, const std::string& extractor_name) {
  if (images.empty()) throw ValidationError("extract_features: empty image list");
  const FeatureExtractorFn fn = FeatureExtractorRegistry::instance().get(extractor_name);
  std::vector<std::vector<double>> rows;
  rows.reserve(images.size());
  for (const Tensor& img : images) {
    rows.push_back(fn(img));
    if (rows.back().size() != rows.front().size()) {
      throw ValidationError("extract_features: inconsistent feature dimensions across images");
    }
  }
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows.front().size());
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return out;
}

std::vector<Tensor> tile_image(const Tensor& image, int tile, int stride) {
  if (image.ndim() != 3) throw ShapeError("tile_image: expected (H,W,C)");
  if (tile <= 0 || stride <= 0) throw ConfigError("tile_image: tile and stride must be positive");
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (h < tile || w < tile) throw ValidationError("tile_image: image smaller than tile size");
  std::vector<Tensor> tiles;
  for (int r = 0; r + tile <= h; r += stride) {
    for (int col = 0; col + tile <= w; col += stride) {
      Tensor t({tile, tile, c});
      for (int i = 0; i < tile; ++i) {
        for (int j = 0; j < tile; ++j) {
          for (int ci = 0; ci < c; ++ci) t.at(i, j, ci) = image.at(r + i, col + j, ci);
        }
      }
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

}  // namespace cstn
