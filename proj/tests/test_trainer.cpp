#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cstn/data_io.hpp"
#include "cstn/errors.hpp"
#include "cstn/trainer.hpp"
#include "oracles.hpp"

using namespace cstn;

TEST_CASE("patch origins") {
  SUBCASE("stride grid plus the border-flush origin") {
    CHECK(patch_axis_origins(300, 64, 56) == std::vector<int>{0, 56, 112, 168, 224, 236});
    CHECK(patch_axis_origins(412, 64, 56) == std::vector<int>{0, 56, 112, 168, 224, 280, 336, 348});
  }
  SUBCASE("exact fit produces a single origin") {
    CHECK(patch_axis_origins(64, 64, 56) == std::vector<int>{0});
  }
  SUBCASE("48 patches for the 300x412 raster") {
    const auto rows = patch_axis_origins(300, 64, 56);
    const auto cols = patch_axis_origins(412, 64, 56);
    CHECK(rows.size() * cols.size() == 48);
  }
  SUBCASE("every pixel is covered for a sweep of sizes") {
    for (int dim = 64; dim <= 150; dim += 7) {
      const auto origins = patch_axis_origins(dim, 64, 56);
      std::vector<bool> covered(static_cast<std::size_t>(dim), false);
      for (int o : origins) {
        for (int i = o; i < o + 64; ++i) covered[static_cast<std::size_t>(i)] = true;
      }
      for (bool c : covered) CHECK(c);
    }
  }
  SUBCASE("image smaller than the patch is an error") {
    CHECK_THROWS_AS(patch_axis_origins(63, 64, 56), ValidationError);
  }
}

TEST_CASE("extract_patches carries co-located mask crops and origins") {
  RandomStream rng(1);
  const Tensor image = oracle::random_tensor({70, 66, 2}, rng);
  const Tensor mask = oracle::random_binary({70, 66}, rng);
  const auto patches = extract_patches(image, mask, Domain::X, 64, 56);
  CHECK(patches.size() == 4);
  for (const auto& p : patches) {
    CHECK(p.patch.data.dim(0) == 64);
    CHECK(p.patch.data.dim(2) == 2);
    CHECK(p.patch.domain == Domain::X);
    for (int i = 0; i < 64; ++i) {
      for (int j = 0; j < 64; ++j) {
        CHECK(p.mask.at(i, j) == mask.at(p.origin.row + i, p.origin.col + j));
        CHECK(p.patch.data.at(i, j, 0) == image.at(p.origin.row + i, p.origin.col + j, 0));
      }
    }
  }
  CHECK_THROWS_AS(extract_patches(image, Tensor({70, 65}), Domain::X, 64, 56), ShapeError);
}

TEST_CASE("augmentation") {
  RandomStream rng(2);
  Patch px{oracle::random_tensor({16, 16, 2}, rng), Domain::X};
  Patch py{oracle::random_tensor({16, 16, 1}, rng), Domain::Y};
  const Tensor mask = oracle::random_binary({16, 16}, rng);

  SUBCASE("identity transform returns the inputs unchanged") {
    Transform id;
    CHECK(oracle::max_abs_diff(apply_transform(px.data, id), px.data) == 0.0);
  }
  SUBCASE("half-turn applied twice is the identity") {
    Transform half;
    half.quarter_turns = 2;
    const Tensor once = apply_transform(px.data, half);
    const Tensor twice = apply_transform(once, half);
    CHECK(oracle::max_abs_diff(twice, px.data) == 0.0);
  }
  SUBCASE("the stored transform inverts bit-exactly") {
    RandomStream draw(3);
    for (int trial = 0; trial < 32; ++trial) {
      const AugmentResult aug = augment(px, py, mask, draw);
      CHECK(oracle::max_abs_diff(apply_inverse_transform(aug.x.data, aug.transform), px.data) == 0.0);
      CHECK(oracle::max_abs_diff(apply_inverse_transform(aug.y.data, aug.transform), py.data) == 0.0);
      CHECK(oracle::max_abs_diff(apply_inverse_transform(aug.mask, aug.transform), mask) == 0.0);
    }
  }
  SUBCASE("changed-pixel count is invariant") {
    RandomStream draw(4);
    double count = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) count += mask[i];
    for (int trial = 0; trial < 16; ++trial) {
      const AugmentResult aug = augment(px, py, mask, draw);
      double count2 = 0.0;
      for (std::size_t i = 0; i < aug.mask.size(); ++i) count2 += aug.mask[i];
      CHECK(count2 == count);
    }
  }
  SUBCASE("co-registration is preserved") {
    // A marker painted at the same pixel of both patches and the mask must
    // land on a common location after augmentation.
    Patch ax{Tensor::zeros({8, 8, 1}), Domain::X};
    Patch ay{Tensor::zeros({8, 8, 1}), Domain::Y};
    Tensor m = Tensor::zeros({8, 8});
    ax.data.at(2, 5, 0) = 1.0;
    ay.data.at(2, 5, 0) = 1.0;
    m.at(2, 5) = 1.0;
    RandomStream draw(5);
    for (int trial = 0; trial < 16; ++trial) {
      const AugmentResult aug = augment(ax, ay, m, draw);
      for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
          CHECK(aug.x.data.at(i, j, 0) == aug.mask.at(i, j));
          CHECK(aug.y.data.at(i, j, 0) == aug.mask.at(i, j));
        }
      }
    }
  }
  SUBCASE("all sixteen transforms appear") {
    RandomStream draw(6);
    std::set<int> seen;
    for (int trial = 0; trial < 400; ++trial) {
      const Transform t = draw_transform(draw);
      seen.insert(t.quarter_turns * 4 + (t.hflip ? 2 : 0) + (t.vflip ? 1 : 0));
    }
    CHECK(seen.size() == 16);
  }
}

TEST_CASE("adam optimizer") {
  SUBCASE("zero gradients leave parameters untouched") {
    Tensor p = Tensor::full({3}, 1.5);
    AdamOptimizer adam(0.1, 0.5, 0.9);
    adam.attach({&p});
    adam.step({Tensor::zeros({3})});
    CHECK(adam.step_count() == 1);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == 1.5);
  }
  SUBCASE("first step moves a scalar by about -lr") {
    Tensor p = Tensor::scalar(0.0);
    const double lr = 1e-2;
    AdamOptimizer adam(lr, 0.5, 0.9, 1e-8);
    adam.attach({&p});
    adam.step({Tensor::scalar(1.0)});
    // Bias-corrected first step: update = -lr * g / (|g| + eps).
    CHECK(p[0] == doctest::Approx(-lr).epsilon(1e-6));
  }
  SUBCASE("matches a hand-rolled recurrence over several steps") {
    Tensor p = Tensor::scalar(0.3);
    const double lr = 0.05, b1 = 0.5, b2 = 0.9, eps = 1e-8;
    AdamOptimizer adam(lr, b1, b2, eps);
    adam.attach({&p});
    double ref = 0.3, m = 0.0, v = 0.0;
    RandomStream rng(7);
    for (int t = 1; t <= 25; ++t) {
      const double g = rng.uniform(-1, 1);
      adam.step({Tensor::scalar(g)});
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mhat = m / (1 - std::pow(b1, t));
      const double vhat = v / (1 - std::pow(b2, t));
      ref -= lr * mhat / (std::sqrt(vhat) + eps);
      CHECK(p[0] == doctest::Approx(ref).epsilon(1e-12));
    }
  }
  SUBCASE("identical seeds give identical trajectories") {
    for (int run = 0; run < 2; ++run) {
      static double first_final = 0.0;
      Tensor p = Tensor::scalar(1.0);
      AdamOptimizer adam(0.01, 0.5, 0.9);
      adam.attach({&p});
      RandomStream rng(11);
      for (int t = 0; t < 50; ++t) adam.step({Tensor::scalar(rng.normal())});
      if (run == 0) first_final = p[0];
      else CHECK(p[0] == first_final);
    }
  }
  SUBCASE("non-finite gradients raise a training error") {
    Tensor p = Tensor::scalar(0.0);
    AdamOptimizer adam(0.01, 0.5, 0.9);
    adam.attach({&p});
    Tensor bad = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(adam.step({bad}, "batch 3"), TrainingError);
  }
}

TEST_CASE("objective construction honors component toggles") {
  ArchConfig arch;
  arch.channels_x = 2;
  arch.channels_y = 1;
  arch.content_channels = 8;
  arch.style_dim = 8;
  arch.ffb_channels = 8;
  arch.mlp_hidden = 16;
  ModelParameters params = init_parameters(5, arch);
  RandomStream rng(6);
  const Tensor px = oracle::random_tensor({8, 8, 2}, rng);
  const Tensor py = oracle::random_tensor({8, 8, 1}, rng);
  const Tensor mask = oracle::random_binary({8, 8}, rng);

  Graph g;
  const ModelVars mv = bind_model(g, params, false);
  LossToggles toggles;
  toggles.recon = false;
  const ObjectiveVars obj = build_objective(g, mv, g.leaf(px), g.leaf(py), mask, toggles, 4.0);
  CHECK(obj.recon == nullptr);
  REQUIRE(obj.trans != nullptr);
  REQUIRE(obj.cyc != nullptr);
  REQUIRE(obj.align != nullptr);
  CHECK(obj.total->value.scalar_value() ==
        doctest::Approx(obj.trans->value.scalar_value() + obj.cyc->value.scalar_value() +
                        obj.align->value.scalar_value())
            .epsilon(1e-12));

  LossToggles none;
  none.recon = none.trans = none.cyc = none.align = false;
  Graph g2;
  const ModelVars mv2 = bind_model(g2, params, false);
  CHECK_THROWS_AS(build_objective(g2, mv2, g2.leaf(px), g2.leaf(py), mask, none, 4.0), ConfigError);
}

namespace {

TrainConfig small_train_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.patch_size = 32;
  cfg.stride = 28;
  cfg.batch_size = 4;
  cfg.epochs_per_iteration = 1;
  cfg.iterations = 1;
  cfg.seed = seed;
  return cfg;
}

ArchConfig small_arch() {
  ArchConfig arch;
  arch.content_channels = 8;
  arch.style_dim = 8;
  arch.ffb_channels = 8;
  arch.mlp_hidden = 16;
  return arch;
}

}  // namespace

TEST_CASE("fit with zero iterations returns the seeded initial state") {
  RandomStream rng(8);
  const Tensor ix = oracle::random_tensor({64, 64, 2}, rng);
  const Tensor iy = oracle::random_tensor({64, 64, 1}, rng);
  TrainConfig cfg = small_train_config(13);
  cfg.iterations = 0;
  const FitResult result = fit(ix, iy, small_arch(), cfg);
  CHECK(result.history.empty());
  CHECK(result.change_mask.dim(0) == 64);
  for (std::size_t i = 0; i < result.change_mask.size(); ++i) {
    CHECK((result.change_mask[i] == 0.0 || result.change_mask[i] == 1.0));
  }
  ModelParameters expected = init_parameters(13, result.params.config);
  bool identical = true;
  std::vector<const Tensor*> etensors;
  expected.for_each_tensor([&etensors](const std::string&, Tensor& t) { etensors.push_back(&t); });
  std::size_t idx = 0;
  result.params.for_each_tensor([&](const std::string&, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] != (*etensors[idx])[i]) identical = false;
    }
    ++idx;
  });
  CHECK(identical);
}

TEST_CASE("fit is deterministic and records one history row per epoch") {
  SyntheticScene scene = generate_synthetic_pair(3, 64, 64, 0.1);
  const Tensor ix = normalize(scene.image_x);
  const Tensor iy = normalize(scene.image_y);
  TrainConfig cfg = small_train_config(3);
  cfg.epochs_per_iteration = 2;
  cfg.iterations = 2;

  const FitResult a = fit(ix, iy, small_arch(), cfg);
  const FitResult b = fit(ix, iy, small_arch(), cfg);
  REQUIRE(a.history.size() == 4);
  CHECK(a.history[0].iteration == 1);
  CHECK(a.history[3].iteration == 2);
  CHECK(a.history[3].epoch == 2);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].losses.total == b.history[i].losses.total);
    CHECK(a.history[i].losses.total ==
          doctest::Approx(a.history[i].losses.recon + a.history[i].losses.trans + a.history[i].losses.cyc +
                          a.history[i].losses.align)
              .epsilon(1e-12));
  }
  CHECK(oracle::max_abs_diff(a.change_mask, b.change_mask) == 0.0);
  for (std::size_t i = 0; i < a.change_mask.size(); ++i) {
    CHECK((a.change_mask[i] == 0.0 || a.change_mask[i] == 1.0));
  }
}

TEST_CASE("loss history CSV round-trips its header and row count") {
  std::vector<LossHistoryRow> history(3);
  for (int i = 0; i < 3; ++i) {
    history[static_cast<std::size_t>(i)].iteration = 1 + i / 2;
    history[static_cast<std::size_t>(i)].epoch = 1 + i % 2;
    history[static_cast<std::size_t>(i)].losses.total = 0.5 * (i + 1);
  }
  const std::string path = (std::filesystem::temp_directory_path() / "cstn_history_test.csv").string();
  write_loss_history_csv(path, history);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,epoch,recon,trans,cyc,align,total");
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 3);
  std::filesystem::remove(path);
}
