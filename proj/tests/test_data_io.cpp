#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "cstn/data_io.hpp"
#include "cstn/errors.hpp"
#include "cstn/rng.hpp"
#include "oracles.hpp"

using namespace cstn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("cstn_io_" + std::to_string(::getpid()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("tensor container round trip is lossless after quantization") {
  TempDir tmp;
  RandomStream rng(1);
  const Tensor img = oracle::random_tensor({13, 9, 4}, rng);
  save_raster_raw(tmp.file("a.raw"), img);
  const Tensor loaded = load_raster(tmp.file("a.raw"));
  // One float32 quantization on first save, then exact.
  for (std::size_t i = 0; i < img.size(); ++i) {
    CHECK(loaded[i] == static_cast<double>(static_cast<float>(img[i])));
  }
  save_raster_raw(tmp.file("b.raw"), loaded);
  const Tensor again = load_raster(tmp.file("b.raw"));
  CHECK(oracle::max_abs_diff(loaded, again) == 0.0);
}

TEST_CASE("container rejects corrupt files") {
  TempDir tmp;
  {
    std::ofstream out(tmp.file("junk.raw"), std::ios::binary);
    out << "NOTACONTAINER";
  }
  CHECK_THROWS_AS(load_raster(tmp.file("junk.raw")), IoError);
  CHECK_THROWS_AS(load_raster(tmp.file("missing.raw")), IoError);
  CHECK_THROWS_AS(load_raster(tmp.file("image.bmp")), IoError);
}

TEST_CASE("png round trip scales 8-bit values into [0,1]") {
  TempDir tmp;
  Tensor img({5, 4, 3});
  RandomStream rng(2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
  }
  save_image_png(tmp.file("img.png"), img);
  const Tensor loaded = load_raster(tmp.file("img.png"));
  REQUIRE(loaded.same_shape(img));
  CHECK(oracle::max_abs_diff(loaded, img) <= 1e-12);
}

TEST_CASE("binary masks survive the png round trip and reject gray values") {
  TempDir tmp;
  RandomStream rng(3);
  const Tensor mask = oracle::random_binary({17, 11}, rng);
  save_mask_png(tmp.file("m.png"), mask);
  const Tensor loaded = load_mask_png(tmp.file("m.png"));
  CHECK(oracle::max_abs_diff(loaded, mask) == 0.0);
  Tensor gray({2, 2, 1});
  gray.fill(0.5);
  save_image_png(tmp.file("gray.png"), gray);
  CHECK_THROWS_AS(load_mask_png(tmp.file("gray.png")), ValidationError);
}

TEST_CASE("difference image files round trip") {
  TempDir tmp;
  RandomStream rng(4);
  const Tensor di = oracle::random_tensor({7, 9}, rng, 0, 3);
  save_difference_image(tmp.file("d.raw"), di);
  const Tensor loaded = load_difference_image(tmp.file("d.raw"));
  for (std::size_t i = 0; i < di.size(); ++i) {
    CHECK(loaded[i] == static_cast<double>(static_cast<float>(di[i])));
  }
}

TEST_CASE("load_pair validates sizes and honors the resample target") {
  TempDir tmp;
  RandomStream rng(5);
  save_raster_raw(tmp.file("x.raw"), oracle::random_tensor({32, 32, 2}, rng));
  save_raster_raw(tmp.file("y.raw"), oracle::random_tensor({24, 40, 1}, rng));
  CHECK_THROWS_AS(load_pair(tmp.file("x.raw"), tmp.file("y.raw")), ValidationError);
  LoadPairOptions options;
  options.resample = true;
  options.target_height = 28;
  options.target_width = 30;
  const ImagePair pair = load_pair(tmp.file("x.raw"), tmp.file("y.raw"), options);
  CHECK(pair.x.dim(0) == 28);
  CHECK(pair.x.dim(1) == 30);
  CHECK(pair.y.dim(0) == 28);
  CHECK(pair.y.dim(1) == 30);
}

TEST_CASE("normalization") {
  SUBCASE("min-max example") {
    Tensor img({1, 3, 1});
    img[0] = 10.0;
    img[1] = 20.0;
    img[2] = 30.0;
    const Tensor out = normalize(img);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == doctest::Approx(0.5));
    CHECK(out[2] == 1.0);
  }
  SUBCASE("a channel already spanning [0,1] is unchanged") {
    RandomStream rng(6);
    Tensor img = oracle::random_tensor({8, 8, 1}, rng);
    img[0] = 0.0;
    img[1] = 1.0;
    const Tensor out = normalize(img);
    CHECK(oracle::max_abs_diff(out, img) <= 1e-7);
  }
  SUBCASE("constant channels map to zero") {
    const Tensor out = normalize(Tensor::full({4, 4, 2}, 7.0));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
  }
  SUBCASE("idempotent") {
    RandomStream rng(7);
    const Tensor img = oracle::random_tensor({9, 9, 3}, rng, -5, 9);
    const Tensor once = normalize(img);
    const Tensor twice = normalize(once);
    CHECK(oracle::max_abs_diff(once, twice) <= 1e-12);
  }
}

TEST_CASE("bilinear resampling") {
  SUBCASE("identity targets return the image unchanged") {
    RandomStream rng(8);
    const Tensor img = oracle::random_tensor({6, 7, 2}, rng);
    CHECK(oracle::max_abs_diff(resample_bilinear(img, 6, 7), img) == 0.0);
  }
  SUBCASE("2x2 checkerboard collapses to the mean") {
    Tensor img({2, 2, 1});
    img.at(0, 0, 0) = 1.0;
    img.at(1, 1, 0) = 1.0;
    const Tensor out = resample_bilinear(img, 1, 1);
    CHECK(out[0] == doctest::Approx(0.5));
  }
  SUBCASE("4x per-axis reduction of the large-raster geometry") {
    Tensor img({3500, 2000, 1});
    img.fill(0.25);
    const Tensor out = resample_bilinear(img, 875, 500);
    CHECK(out.dim(0) == 875);
    CHECK(out.dim(1) == 500);
    CHECK(out.min_value() == doctest::Approx(0.25));
    CHECK(out.max_value() == doctest::Approx(0.25));
  }
  SUBCASE("invalid targets are rejected") {
    CHECK_THROWS_AS(resample_bilinear(Tensor({4, 4, 1}), 0, 2), ValidationError);
  }
}

TEST_CASE("synthetic scenes") {
  SUBCASE("same seed, bit-identical scene") {
    const SyntheticScene a = generate_synthetic_pair(7, 64, 64, 0.1);
    const SyntheticScene b = generate_synthetic_pair(7, 64, 64, 0.1);
    CHECK(oracle::max_abs_diff(a.image_x, b.image_x) == 0.0);
    CHECK(oracle::max_abs_diff(a.image_y, b.image_y) == 0.0);
    CHECK(oracle::max_abs_diff(a.ground_truth, b.ground_truth) == 0.0);
    const SyntheticScene c = generate_synthetic_pair(8, 64, 64, 0.1);
    CHECK(oracle::max_abs_diff(a.image_x, c.image_x) > 0.0);
  }
  SUBCASE("mask fraction stays near the request") {
    const SyntheticScene scene = generate_synthetic_pair(7, 256, 256, 0.1);
    CHECK(scene.achieved_fraction >= 0.08);
    CHECK(scene.achieved_fraction <= 0.12);
    double count = 0.0;
    for (std::size_t i = 0; i < scene.ground_truth.size(); ++i) {
      const double v = scene.ground_truth[i];
      CHECK((v == 0.0 || v == 1.0));
      count += v;
    }
    CHECK(count / scene.ground_truth.size() == doctest::Approx(scene.achieved_fraction));
  }
  SUBCASE("blobs are 4-connected") {
    // A sparse scene keeps the blobs disjoint, so any diagonal-only link
    // would have to come from the ellipse filling itself.
    const SyntheticScene scene = generate_synthetic_pair(11, 128, 128, 0.03);
    const Tensor& gt = scene.ground_truth;
    const int h = gt.dim(0), w = gt.dim(1);
    // Count components under 4- and 8-connectivity; filled convex blobs
    // must not create diagonal-only bridges within a component.
    const auto count_components = [&](bool diag) {
      std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
      int components = 0;
      std::vector<std::pair<int, int>> stack;
      for (int start = 0; start < h * w; ++start) {
        if (gt[static_cast<std::size_t>(start)] != 1.0 || label[static_cast<std::size_t>(start)] >= 0) continue;
        ++components;
        stack.push_back({start / w, start % w});
        label[static_cast<std::size_t>(start)] = components;
        while (!stack.empty()) {
          const auto [i, j] = stack.back();
          stack.pop_back();
          for (int di = -1; di <= 1; ++di) {
            for (int dj = -1; dj <= 1; ++dj) {
              if (di == 0 && dj == 0) continue;
              if (!diag && di != 0 && dj != 0) continue;
              const int ni = i + di, nj = j + dj;
              if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
              const std::size_t idx = static_cast<std::size_t>(ni) * w + nj;
              if (gt[idx] == 1.0 && label[idx] < 0) {
                label[idx] = components;
                stack.push_back({ni, nj});
              }
            }
          }
        }
      }
      return components;
    };
    CHECK(count_components(false) == count_components(true));
  }
  SUBCASE("latent drives both modalities outside the change mask") {
    const SyntheticScene scene = generate_synthetic_pair(7, 256, 256, 0.1);
    std::vector<double> latent0, latent_mean, mod_x, mod_y;
    for (int i = 0; i < 256; ++i) {
      for (int j = 0; j < 256; ++j) {
        if (scene.ground_truth.at(i, j) == 1.0) continue;
        latent0.push_back(scene.latent.at(i, j, 0));
        latent_mean.push_back((scene.latent.at(i, j, 0) + scene.latent.at(i, j, 1) + scene.latent.at(i, j, 2)) / 3.0);
        mod_x.push_back(scene.image_x.at(i, j, 0));
        mod_y.push_back(scene.image_y.at(i, j, 0));
      }
    }
    CHECK(oracle::mutual_information(latent0, mod_x) > 0.05);
    CHECK(oracle::mutual_information(latent_mean, mod_y) > 0.05);
  }
  SUBCASE("invalid requests") {
    CHECK_THROWS_AS(generate_synthetic_pair(1, 32, 64, 0.1), ValidationError);
    CHECK_THROWS_AS(generate_synthetic_pair(1, 64, 64, 0.9), GenerationError);
    CHECK_THROWS_AS(generate_synthetic_pair(1, 64, 64, 0.0), GenerationError);
  }
}

TEST_CASE("scene directories carry all four artifacts") {
  TempDir tmp;
  const SyntheticScene scene = generate_synthetic_pair(5, 64, 64, 0.1);
  save_scene(tmp.file("scene"), scene);
  CHECK(fs::exists(tmp.path / "scene" / "x.raw"));
  CHECK(fs::exists(tmp.path / "scene" / "y.raw"));
  CHECK(fs::exists(tmp.path / "scene" / "gt.png"));
  CHECK(fs::exists(tmp.path / "scene" / "meta.json"));
  const Tensor x = load_raster(tmp.file("scene/x.raw"));
  CHECK(x.dim(2) == 3);
  const Tensor gt = load_mask_png(tmp.file("scene/gt.png"));
  CHECK(oracle::max_abs_diff(gt, scene.ground_truth) == 0.0);
}
