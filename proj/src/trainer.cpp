#include "cstn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cstn/detector.hpp"
#include "cstn/errors.hpp"

namespace cstn {

std::vector<int> patch_axis_origins(int dim, int size, int stride) {
  if (dim < size) throw ValidationError("patch extraction: image dimension " + std::to_string(dim) +
                                        " smaller than patch size " + std::to_string(size));
  if (stride <= 0) throw ConfigError("patch extraction: stride must be positive");
  std::vector<int> origins;
  for (int o = 0; o + size <= dim; o += stride) origins.push_back(o);
  if (origins.back() + size < dim) origins.push_back(dim - size);
  return origins;
}

namespace {

Tensor crop(const Tensor& t, int row, int col, int size) {
  if (t.ndim() == 2) {
    Tensor out({size, size});
    for (int i = 0; i < size; ++i) {
      for (int j = 0; j < size; ++j) out.at(i, j) = t.at(row + i, col + j);
    }
    return out;
  }
  const int c = t.dim(2);
  Tensor out({size, size, c});
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      for (int ci = 0; ci < c; ++ci) out.at(i, j, ci) = t.at(row + i, col + j, ci);
    }
  }
  return out;
}

}  // namespace

std::vector<ExtractedPatch> extract_patches(const Tensor& image, const Tensor& mask, Domain domain, int size,
                                            int stride) {
  if (image.ndim() != 3) throw ShapeError("extract_patches: image must be (H,W,C)");
  if (mask.ndim() != 2 || mask.dim(0) != image.dim(0) || mask.dim(1) != image.dim(1)) {
    throw ShapeError("extract_patches: mask must be (H,W) matching the image");
  }
  const std::vector<int> rows = patch_axis_origins(image.dim(0), size, stride);
  const std::vector<int> cols = patch_axis_origins(image.dim(1), size, stride);
  std::vector<ExtractedPatch> out;
  out.reserve(rows.size() * cols.size());
  for (int r : rows) {
    for (int c : cols) {
      ExtractedPatch p;
      p.patch = Patch{crop(image, r, c, size), domain};
      p.mask = crop(mask, r, c, size);
      p.origin = {r, c};
      out.push_back(std::move(p));
    }
  }
  return out;
}

Transform draw_transform(RandomStream& rng) {
  Transform t;
  t.quarter_turns = static_cast<int>(rng.uniform_int(0, 3));
  t.hflip = rng.uniform_int(0, 1) == 1;
  t.vflip = rng.uniform_int(0, 1) == 1;
  return t;
}

namespace {

Tensor rotate90_ccw(const Tensor& t) {
  const int n = t.dim(0);
  if (t.dim(1) != n) throw ShapeError("rotate: patches must be square");
  if (t.ndim() == 2) {
    Tensor out({n, n});
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) out.at(i, j) = t.at(j, n - 1 - i);
    }
    return out;
  }
  const int c = t.dim(2);
  Tensor out({n, n, c});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int ci = 0; ci < c; ++ci) out.at(i, j, ci) = t.at(j, n - 1 - i, ci);
    }
  }
  return out;
}

Tensor flip_h(const Tensor& t) {
  const int h = t.dim(0), w = t.dim(1);
  Tensor out(t.shape());
  if (t.ndim() == 2) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) out.at(i, j) = t.at(i, w - 1 - j);
    }
    return out;
  }
  const int c = t.dim(2);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int ci = 0; ci < c; ++ci) out.at(i, j, ci) = t.at(i, w - 1 - j, ci);
    }
  }
  return out;
}

Tensor flip_v(const Tensor& t) {
  const int h = t.dim(0), w = t.dim(1);
  Tensor out(t.shape());
  if (t.ndim() == 2) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) out.at(i, j) = t.at(h - 1 - i, j);
    }
    return out;
  }
  const int c = t.dim(2);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int ci = 0; ci < c; ++ci) out.at(i, j, ci) = t.at(h - 1 - i, j, ci);
    }
  }
  return out;
}

}  // namespace

Tensor apply_transform(const Tensor& t, const Transform& tf) {
  Tensor out = t;
  for (int k = 0; k < tf.quarter_turns; ++k) out = rotate90_ccw(out);
  if (tf.hflip) out = flip_h(out);
  if (tf.vflip) out = flip_v(out);
  return out;
}

Tensor apply_inverse_transform(const Tensor& t, const Transform& tf) {
  Tensor out = t;
  if (tf.vflip) out = flip_v(out);
  if (tf.hflip) out = flip_h(out);
  for (int k = 0; k < (4 - tf.quarter_turns) % 4; ++k) out = rotate90_ccw(out);
  return out;
}

AugmentResult augment(const Patch& px, const Patch& py, const Tensor& mask, RandomStream& rng) {
  if (px.data.dim(0) != py.data.dim(0) || px.data.dim(1) != py.data.dim(1)) {
    throw ShapeError("augment: patch spatial dims differ");
  }
  if (mask.ndim() != 2 || mask.dim(0) != px.data.dim(0) || mask.dim(1) != px.data.dim(1)) {
    throw ShapeError("augment: mask does not match the patches");
  }
  AugmentResult r;
  r.transform = draw_transform(rng);
  if (r.transform.identity()) {
    r.x = px;
    r.y = py;
    r.mask = mask;
    return r;
  }
  r.x = Patch{apply_transform(px.data, r.transform), px.domain};
  r.y = Patch{apply_transform(py.data, r.transform), py.domain};
  r.mask = apply_transform(mask, r.transform);
  return r;
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void AdamOptimizer::attach(std::vector<Tensor*> params) {
  params_ = std::move(params);
  m_.clear();
  v_.clear();
  for (Tensor* p : params_) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
  step_count_ = 0;
}

void AdamOptimizer::step(const std::vector<Tensor>& grads, const std::string& context) {
  if (grads.size() != params_.size()) throw TrainingError("adam: gradient list does not match attached parameters");
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t t = 0; t < params_.size(); ++t) {
    Tensor& p = *params_[t];
    const Tensor& grad = grads[t];
    if (!grad.same_shape(p)) throw TrainingError("adam: gradient shape mismatch");
    Tensor& m = m_[t];
    Tensor& v = v_[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g)) {
        throw TrainingError("adam: non-finite gradient" + (context.empty() ? "" : " (" + context + ")"));
      }
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr_ * mhat / (std::sqrt(vhat) + epsilon_);
    }
  }
}

ObjectiveVars build_objective(Graph& g, const ModelVars& model, Var patch_x, Var patch_y, const Tensor& change_mask,
                              const LossToggles& toggles, double align_scale) {
  if (!toggles.any()) throw ConfigError("objective: all loss components are disabled");

  Var content_x = content_encode_v(g, model, Domain::X, patch_x);
  Var content_y = content_encode_v(g, model, Domain::Y, patch_y);
  Var style_x = style_encode_v(g, model, Domain::X, patch_x);
  Var style_y = style_encode_v(g, model, Domain::Y, patch_y);

  ObjectiveVars obj;
  std::vector<Var> parts;

  if (toggles.recon) {
    Var x_recon = decode_v(g, model, Domain::X, content_x, style_x);
    Var y_recon = decode_v(g, model, Domain::Y, content_y, style_y);
    obj.recon = reconstruction_loss_v(g, patch_x, patch_y, x_recon, y_recon);
    parts.push_back(obj.recon);
  }

  if (toggles.trans || toggles.cyc || toggles.align) {
    Var into_x = decode_v(g, model, Domain::X, content_y, style_x);
    Var into_y = decode_v(g, model, Domain::Y, content_x, style_y);
    Var content_x_rec = content_encode_v(g, model, Domain::Y, into_y);
    Var content_y_rec = content_encode_v(g, model, Domain::X, into_x);
    Var style_x_rec = nullptr;
    Var style_y_rec = nullptr;
    if (toggles.trans || toggles.cyc) {
      style_x_rec = style_encode_v(g, model, Domain::X, into_x);
      style_y_rec = style_encode_v(g, model, Domain::Y, into_y);
    }
    if (toggles.trans) {
      obj.trans = translation_loss_v(g, content_x, content_y, style_x, style_y, content_x_rec, content_y_rec,
                                     style_x_rec, style_y_rec);
      parts.push_back(obj.trans);
    }
    if (toggles.cyc) {
      Var x_cycle = decode_v(g, model, Domain::X, content_x_rec, style_x_rec);
      Var y_cycle = decode_v(g, model, Domain::Y, content_y_rec, style_y_rec);
      obj.cyc = cycle_loss_v(g, patch_x, patch_y, x_cycle, y_cycle);
      parts.push_back(obj.cyc);
    }
    if (toggles.align) {
      obj.align = alignment_loss_v(g, content_x, content_y_rec, content_x_rec, content_y, change_mask, align_scale);
      parts.push_back(obj.align);
    }
  }

  obj.total = add_n(g, parts);
  return obj;
}

Tensor update_change_mask(const ModelParameters& params, const Tensor& image_x, const Tensor& image_y) {
  const ContentFeatures features = content_features(params, image_x, image_y);
  const Tensor di = difference_image(features.fx, features.fy);
  const OtsuResult otsu = otsu_threshold(di);
  return binarize(di, otsu.threshold);
}

namespace {

struct PairBatch {
  std::vector<std::size_t> indices;
};

std::vector<PairBatch> make_batches(const std::vector<std::size_t>& order, int batch_size) {
  std::vector<PairBatch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
    PairBatch b;
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
    batches.push_back(std::move(b));
  }
  return batches;
}

void shuffle_indices(std::vector<std::size_t>& order, RandomStream& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
}

double component_value(Var v) { return v ? v->value.scalar_value() : 0.0; }

}  // namespace

FitResult fit(const Tensor& image_x, const Tensor& image_y, ArchConfig arch, const TrainConfig& config) {
  if (image_x.ndim() != 3 || image_y.ndim() != 3) throw ShapeError("fit: images must be (H,W,C)");
  if (image_x.dim(0) != image_y.dim(0) || image_x.dim(1) != image_y.dim(1)) {
    throw ShapeError("fit: co-registered images must share spatial dims");
  }
  arch.channels_x = image_x.dim(2);
  arch.channels_y = image_y.dim(2);
  arch.validate();
  config.validate();

  const int height = image_x.dim(0);
  const int width = image_x.dim(1);

  FitResult result;
  result.params = init_parameters(config.seed, arch);

  RandomStream mask_rng = RandomStream::derive(config.seed, "mask_init");
  result.change_mask = Tensor({height, width});
  for (std::size_t i = 0; i < result.change_mask.size(); ++i) {
    result.change_mask[i] = static_cast<double>(mask_rng.uniform_int(0, 1));
  }

  if (config.iterations == 0) return result;

  const auto image_patches_x = extract_patches(image_x, result.change_mask, Domain::X, config.patch_size, config.stride);
  const auto image_patches_y = extract_patches(image_y, result.change_mask, Domain::Y, config.patch_size, config.stride);
  const std::size_t n_patches = image_patches_x.size();

  std::vector<Tensor*> param_tensors;
  result.params.for_each_tensor([&param_tensors](const std::string&, Tensor& t) { param_tensors.push_back(&t); });
  AdamOptimizer adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  adam.attach(param_tensors);

  RandomStream shuffle_rng = RandomStream::derive(config.seed, "shuffle");
  RandomStream augment_rng = RandomStream::derive(config.seed, "augment");

  for (int iteration = 1; iteration <= config.iterations; ++iteration) {
    // The mask is frozen for the whole iteration; crops align with the
    // patch grid so the alignment term sees co-registered mask patches.
    std::vector<Tensor> mask_crops;
    mask_crops.reserve(n_patches);
    for (const auto& p : image_patches_x) {
      mask_crops.push_back(crop(result.change_mask, p.origin.row, p.origin.col, config.patch_size));
    }

    for (int epoch = 1; epoch <= config.epochs_per_iteration; ++epoch) {
      std::vector<std::size_t> order(n_patches);
      for (std::size_t i = 0; i < n_patches; ++i) order[i] = i;
      shuffle_indices(order, shuffle_rng);

      LossBreakdown epoch_losses;
      for (const PairBatch& batch : make_batches(order, config.batch_size)) {
        std::vector<Tensor> grads;
        grads.reserve(param_tensors.size());
        for (Tensor* p : param_tensors) grads.emplace_back(p->shape());
        const double inv_batch = 1.0 / static_cast<double>(batch.indices.size());

        for (std::size_t idx : batch.indices) {
          Patch px = image_patches_x[idx].patch;
          Patch py = image_patches_y[idx].patch;
          Tensor mask = mask_crops[idx];
          if (config.augmentation) {
            AugmentResult aug = augment(px, py, mask, augment_rng);
            px = std::move(aug.x);
            py = std::move(aug.y);
            mask = std::move(aug.mask);
          }

          Graph g;
          const ModelVars model = bind_model(g, result.params, true);
          Var vx = g.leaf(px.data, false);
          Var vy = g.leaf(py.data, false);
          const ObjectiveVars obj = build_objective(g, model, vx, vy, mask, config.losses, config.align_scale);

          const double total = obj.total->value.scalar_value();
          if (!std::isfinite(total)) {
            throw TrainingError("fit: non-finite loss at iteration " + std::to_string(iteration) + ", epoch " +
                                std::to_string(epoch) + ", patch (" + std::to_string(image_patches_x[idx].origin.row) +
                                "," + std::to_string(image_patches_x[idx].origin.col) + ")");
          }
          epoch_losses.recon += component_value(obj.recon);
          epoch_losses.trans += component_value(obj.trans);
          epoch_losses.cyc += component_value(obj.cyc);
          epoch_losses.align += component_value(obj.align);
          epoch_losses.total += total;

          g.backward(obj.total, inv_batch);
          std::size_t t = 0;
          model.for_each_var([&grads, &t](Var v) {
            if (!v->grad.empty()) {
              Tensor& acc = grads[t];
              for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v->grad[i];
            }
            ++t;
          });
        }

        adam.step(grads, "iteration " + std::to_string(iteration) + ", epoch " + std::to_string(epoch));
      }

      const double inv_n = 1.0 / static_cast<double>(n_patches);
      LossHistoryRow row;
      row.iteration = iteration;
      row.epoch = epoch;
      row.losses.recon = epoch_losses.recon * inv_n;
      row.losses.trans = epoch_losses.trans * inv_n;
      row.losses.cyc = epoch_losses.cyc * inv_n;
      row.losses.align = epoch_losses.align * inv_n;
      row.losses.total = epoch_losses.total * inv_n;
      result.history.push_back(row);
    }

    result.change_mask = update_change_mask(result.params, image_x, image_y);
  }

  return result;
}

void write_loss_history_csv(const std::string& path, const std::vector<LossHistoryRow>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "iteration,epoch,recon,trans,cyc,align,total\n";
  char buf[192];
  for (const auto& row : history) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", row.iteration, row.epoch,
                  row.losses.recon, row.losses.trans, row.losses.cyc, row.losses.align, row.losses.total);
    out << buf;
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace cstn
