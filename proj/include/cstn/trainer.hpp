#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cstn/autograd.hpp"
#include "cstn/config.hpp"
#include "cstn/losses.hpp"
#include "cstn/model.hpp"
#include "cstn/rng.hpp"
#include "cstn/tensor.hpp"

namespace cstn {

struct PatchOrigin {
  int row = 0;
  int col = 0;
};

// Origins at 0, stride, 2*stride, ... plus a final origin flush with the
// border when the grid does not reach it; guarantees full coverage.
std::vector<int> patch_axis_origins(int dim, int size, int stride);

struct ExtractedPatch {
  Patch patch;
  Tensor mask;  // co-located (size, size) crop
  PatchOrigin origin;
};

std::vector<ExtractedPatch> extract_patches(const Tensor& image, const Tensor& mask, Domain domain, int size,
                                            int stride);

// One draw from {0/90/180/270 rotation} x {horizontal flip?} x {vertical
// flip?}, applied as rotate, then horizontal, then vertical.
struct Transform {
  int quarter_turns = 0;
  bool hflip = false;
  bool vflip = false;
  bool identity() const { return quarter_turns == 0 && !hflip && !vflip; }
};

Transform draw_transform(RandomStream& rng);
Tensor apply_transform(const Tensor& t, const Transform& tf);
Tensor apply_inverse_transform(const Tensor& t, const Transform& tf);

struct AugmentResult {
  Patch x, y;
  Tensor mask;
  Transform transform;
};

AugmentResult augment(const Patch& px, const Patch& py, const Tensor& mask, RandomStream& rng);

// Adam with bias correction over an attached tensor list.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1, double beta2, double epsilon = 1e-8);

  void attach(std::vector<Tensor*> params);
  // Gradients aligned with the attached list; throws TrainingError with
  // `context` on non-finite gradients.
  void step(const std::vector<Tensor>& grads, const std::string& context = "");
  std::int64_t step_count() const { return step_count_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  std::int64_t step_count_ = 0;
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
};

struct ObjectiveVars {
  Var recon = nullptr;
  Var trans = nullptr;
  Var cyc = nullptr;
  Var align = nullptr;
  Var total = nullptr;
};

// Full objective over one patch pair: encodes both domains, reconstructs,
// translates, re-encodes and cycles as required by the enabled components.
ObjectiveVars build_objective(Graph& g, const ModelVars& model, Var patch_x, Var patch_y, const Tensor& change_mask,
                              const LossToggles& toggles, double align_scale);

// Whole-image mask refresh: unfiltered difference image, Otsu, binarize.
Tensor update_change_mask(const ModelParameters& params, const Tensor& image_x, const Tensor& image_y);

struct LossHistoryRow {
  int iteration = 0;
  int epoch = 0;
  LossBreakdown losses;
};

struct FitResult {
  ModelParameters params;
  Tensor change_mask;
  std::vector<LossHistoryRow> history;
};

// Alternating optimization: repeated (train epochs with the mask fixed,
// then refresh the mask from whole-image content features).
FitResult fit(const Tensor& image_x, const Tensor& image_y, ArchConfig arch, const TrainConfig& config);

void write_loss_history_csv(const std::string& path, const std::vector<LossHistoryRow>& history);

}  // namespace cstn
