#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cstn/detector.hpp"
#include "cstn/errors.hpp"
#include "cstn/rng.hpp"
#include "cstn/trainer.hpp"
#include "oracles.hpp"

using namespace cstn;

TEST_CASE("difference image") {
  SUBCASE("identical features give zero") {
    RandomStream rng(1);
    const Tensor f = oracle::random_tensor({4, 5, 6}, rng);
    const Tensor di = difference_image(f, f);
    for (std::size_t i = 0; i < di.size(); ++i) CHECK(di[i] == 0.0);
  }
  SUBCASE("3-4-5 per-pixel norm") {
    Tensor fx({1, 1, 4}), fy({1, 1, 4});
    fx[0] = 3.0;
    fx[1] = 4.0;
    const Tensor di = difference_image(fx, fy);
    CHECK(di[0] == doctest::Approx(5.0));
  }
  SUBCASE("matches a per-pixel loop oracle") {
    RandomStream rng(2);
    const Tensor fx = oracle::random_tensor({6, 7, 16}, rng, -1, 1);
    const Tensor fy = oracle::random_tensor({6, 7, 16}, rng, -1, 1);
    const Tensor di = difference_image(fx, fy);
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 7; ++j) {
        double acc = 0.0;
        for (int c = 0; c < 16; ++c) {
          const double d = fx.at(i, j, c) - fy.at(i, j, c);
          acc += d * d;
        }
        CHECK(di.at(i, j) == doctest::Approx(std::sqrt(acc)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("invariant to consistently swapped concatenation halves") {
    RandomStream rng(3);
    const Tensor a = oracle::random_tensor({5, 5, 3}, rng), b = oracle::random_tensor({5, 5, 3}, rng);
    const Tensor c = oracle::random_tensor({5, 5, 3}, rng), d = oracle::random_tensor({5, 5, 3}, rng);
    const auto concat = [](const Tensor& u, const Tensor& v) {
      Tensor out({u.dim(0), u.dim(1), u.dim(2) + v.dim(2)});
      for (int i = 0; i < u.dim(0); ++i) {
        for (int j = 0; j < u.dim(1); ++j) {
          for (int k = 0; k < u.dim(2); ++k) out.at(i, j, k) = u.at(i, j, k);
          for (int k = 0; k < v.dim(2); ++k) out.at(i, j, u.dim(2) + k) = v.at(i, j, k);
        }
      }
      return out;
    };
    const Tensor di1 = difference_image(concat(a, b), concat(c, d));
    const Tensor di2 = difference_image(concat(b, a), concat(d, c));
    CHECK(oracle::max_abs_diff(di1, di2) < 1e-12);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(difference_image(Tensor({2, 2, 3}), Tensor({2, 2, 4})), ShapeError);
  }
}

TEST_CASE("gaussian filter") {
  SUBCASE("constant input is preserved") {
    const Tensor di = Tensor::full({9, 11}, 3.7);
    const Tensor out = gaussian_filter(di, 1.5, 7);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(3.7).epsilon(1e-12));
  }
  SUBCASE("impulse response is the normalized kernel") {
    Tensor di({15, 15});
    di.at(7, 7) = 1.0;
    const double sigma = 1.5;
    const int k = 7, r = k / 2;
    const Tensor out = gaussian_filter(di, sigma, k);
    double norm = 0.0;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) norm += std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma));
    }
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        const double expected = std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma)) / norm;
        CHECK(out.at(7 + dy, 7 + dx) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
  SUBCASE("mass is preserved over constant borders") {
    RandomStream rng(4);
    Tensor di = Tensor::full({16, 14}, 0.25);
    // Interior (at least kernel-radius deep) gets arbitrary values.
    for (int i = 4; i < 12; ++i) {
      for (int j = 4; j < 10; ++j) di.at(i, j) = rng.uniform(0, 5);
    }
    const Tensor out = gaussian_filter(di, 1.5, 7);
    double sum_in = 0.0, sum_out = 0.0;
    for (std::size_t i = 0; i < di.size(); ++i) {
      sum_in += di[i];
      sum_out += out[i];
    }
    CHECK(std::fabs(sum_in - sum_out) <= 1e-10);
  }
  SUBCASE("output stays within the input range") {
    RandomStream rng(5);
    const Tensor di = oracle::random_tensor({12, 12}, rng, 0, 3);
    const Tensor out = gaussian_filter(di, 2.0, 5);
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i] >= di.min_value() - 1e-12);
      CHECK(out[i] <= di.max_value() + 1e-12);
    }
  }
  SUBCASE("even kernel size is rejected") {
    CHECK_THROWS_AS(gaussian_filter(Tensor({4, 4}), 1.5, 6), ConfigError);
    CHECK_THROWS_AS(gaussian_filter(Tensor({4, 4}), 0.0, 7), ConfigError);
  }
}

TEST_CASE("otsu threshold") {
  SUBCASE("separable bimodal mixture lands between the modes") {
    Tensor di({10, 10});
    for (std::size_t i = 0; i < di.size(); ++i) di[i] = (i % 2 == 0) ? 0.0 : 1.0;
    const OtsuResult result = otsu_threshold(di);
    CHECK(!result.degenerate);
    CHECK(result.threshold > 0.0);
    CHECK(result.threshold < 1.0);
  }
  SUBCASE("constant input degenerates to the constant with all-unchanged map") {
    const Tensor di = Tensor::full({6, 6}, 2.5);
    const OtsuResult result = otsu_threshold(di);
    CHECK(result.degenerate);
    CHECK(result.threshold == 2.5);
    const Tensor cm = binarize(di, result.threshold);
    for (std::size_t i = 0; i < cm.size(); ++i) CHECK(cm[i] == 0.0);
  }
  SUBCASE("matches the exhaustive maximizer on random mixtures") {
    RandomStream rng(6);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = static_cast<int>(rng.uniform_int(32, 512));
      Tensor di({n});
      const bool bimodal = rng.uniform_int(0, 1) == 1;
      for (int i = 0; i < n; ++i) {
        if (bimodal && rng.uniform() < 0.4) di[static_cast<std::size_t>(i)] = rng.normal(3.0, 0.4);
        else di[static_cast<std::size_t>(i)] = std::fabs(rng.normal(0.8, 0.5));
      }
      const OtsuResult got = otsu_threshold(di);
      const double expected = oracle::otsu_threshold_exhaustive(di);
      CHECK(got.threshold == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  SUBCASE("threshold is affine-equivariant") {
    RandomStream rng(7);
    Tensor di({300});
    for (std::size_t i = 0; i < di.size(); ++i) di[i] = rng.uniform(0, 1) + (rng.uniform() < 0.3 ? 2.0 : 0.0);
    const double t0 = otsu_threshold(di).threshold;
    Tensor scaled(di.shape());
    const double a = 3.5, b = -1.25;
    for (std::size_t i = 0; i < di.size(); ++i) scaled[i] = a * di[i] + b;
    const double t1 = otsu_threshold(scaled).threshold;
    CHECK(t1 == doctest::Approx(a * t0 + b).epsilon(1e-9));
  }
}

TEST_CASE("binarize") {
  SUBCASE("boundary values are unchanged") {
    const Tensor cm = binarize(Tensor::zeros({3, 3}), 0.0);
    for (std::size_t i = 0; i < cm.size(); ++i) CHECK(cm[i] == 0.0);
  }
  SUBCASE("strict inequality") {
    Tensor di({3});
    di[0] = 1;
    di[1] = 2;
    di[2] = 3;
    const Tensor cm = binarize(di, 2.0);
    CHECK(cm[0] == 0.0);
    CHECK(cm[1] == 0.0);
    CHECK(cm[2] == 1.0);
  }
  SUBCASE("matches a loop oracle and is monotone in the threshold") {
    RandomStream rng(8);
    const Tensor di = oracle::random_tensor({9, 9}, rng, 0, 2);
    const double t_low = 0.5, t_high = 1.2;
    const Tensor lo = binarize(di, t_low);
    const Tensor hi = binarize(di, t_high);
    for (std::size_t i = 0; i < di.size(); ++i) {
      CHECK(lo[i] == (di[i] > t_low ? 1.0 : 0.0));
      CHECK(hi[i] <= lo[i]);  // raising the threshold never adds changed pixels
    }
  }
}

TEST_CASE("content features and the full pipeline") {
  ArchConfig arch;
  arch.channels_x = 2;
  arch.channels_y = 1;
  arch.content_channels = 8;
  arch.style_dim = 8;
  arch.ffb_channels = 8;
  arch.mlp_hidden = 16;
  ModelParameters params = init_parameters(9, arch);
  RandomStream rng(10);
  const Tensor ix = oracle::random_tensor({24, 20, 2}, rng);
  const Tensor iy = oracle::random_tensor({24, 20, 1}, rng);

  SUBCASE("feature stacking contract and composition oracle") {
    const ContentFeatures f = content_features(params, ix, iy);
    CHECK(f.fx.dim(0) == 24);
    CHECK(f.fx.dim(1) == 20);
    CHECK(f.fx.dim(2) == 2 * arch.content_channels);
    CHECK(f.fy.dim(2) == 2 * arch.content_channels);

    // Step-by-step composition through the public single-network passes.
    const Tensor cx = infer_content_code(params, ix, Domain::X);
    const Tensor cy = infer_content_code(params, iy, Domain::Y);
    const Tensor sx = infer_style_code(params, ix, Domain::X);
    const Tensor sy = infer_style_code(params, iy, Domain::Y);
    const Tensor into_x = infer_decode(params, cy, sx, Domain::X);
    const Tensor into_y = infer_decode(params, cx, sy, Domain::Y);
    const Tensor rec_x = infer_content_code(params, into_y, Domain::Y);
    const Tensor rec_y = infer_content_code(params, into_x, Domain::X);
    for (int i = 0; i < 24; ++i) {
      for (int j = 0; j < 20; ++j) {
        for (int c = 0; c < arch.content_channels; ++c) {
          CHECK(f.fx.at(i, j, c) == cx.at(i, j, c));
          CHECK(f.fx.at(i, j, arch.content_channels + c) == rec_x.at(i, j, c));
          CHECK(f.fy.at(i, j, c) == rec_y.at(i, j, c));
          CHECK(f.fy.at(i, j, arch.content_channels + c) == cy.at(i, j, c));
        }
      }
    }
  }

  SUBCASE("detection pipeline artifacts") {
    FilterConfig filter;
    const DetectionResult result = detect_changes(params, ix, iy, filter);
    CHECK(result.di.dim(0) == 24);
    CHECK(result.cm.dim(0) == 24);
    for (std::size_t i = 0; i < result.cm.size(); ++i) {
      CHECK((result.cm[i] == 0.0 || result.cm[i] == 1.0));
      CHECK(result.di[i] >= 0.0);
    }
  }

  SUBCASE("unfiltered detection equals the training-time mask refresh") {
    FilterConfig no_filter;
    no_filter.enabled = false;
    const DetectionResult result = detect_changes(params, ix, iy, no_filter);
    const Tensor mask = update_change_mask(params, ix, iy);
    CHECK(oracle::max_abs_diff(result.cm, mask) == 0.0);
    const ContentFeatures f = content_features(params, ix, iy);
    CHECK(oracle::max_abs_diff(result.di, difference_image(f.fx, f.fy)) == 0.0);
  }
}
