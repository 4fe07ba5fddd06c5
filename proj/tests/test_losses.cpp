#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cstn/errors.hpp"
#include "cstn/losses.hpp"
#include "cstn/rng.hpp"
#include "oracles.hpp"

using namespace cstn;

TEST_CASE("mean_all") {
  CHECK(mean_all(Tensor::zeros({3, 3, 2})) == 0.0);
  Tensor t({2, 2});
  t[0] = 1;
  t[1] = 2;
  t[2] = 3;
  t[3] = 4;
  CHECK(mean_all(t) == doctest::Approx(2.5));
  RandomStream rng(1);
  const Tensor r = oracle::random_tensor({5, 7, 3}, rng, -2, 2);
  CHECK(std::fabs(mean_all(r) - oracle::mean_loop(r)) <= 1e-12);
  CHECK_THROWS_AS(mean_all(Tensor({0})), ValidationError);
}

TEST_CASE("reconstruction loss") {
  RandomStream rng(2);
  const Tensor x = oracle::random_tensor({6, 6, 2}, rng);
  const Tensor y = oracle::random_tensor({6, 6, 3}, rng);
  CHECK(reconstruction_loss(x, y, x, y) == 0.0);

  Tensor x_off = x;
  for (std::size_t i = 0; i < x_off.size(); ++i) x_off[i] += 1.0;
  CHECK(reconstruction_loss(x, y, x_off, y) == doctest::Approx(1.0));

  const Tensor xr = oracle::random_tensor({6, 6, 2}, rng);
  const Tensor yr = oracle::random_tensor({6, 6, 3}, rng);
  CHECK(reconstruction_loss(x, y, xr, yr) == doctest::Approx(oracle::mse_loop(x, xr) + oracle::mse_loop(y, yr)).epsilon(1e-12));

  CHECK_THROWS_AS(reconstruction_loss(x, y, yr, xr), ShapeError);
}

TEST_CASE("translation loss") {
  RandomStream rng(3);
  const Tensor cx = oracle::random_tensor({4, 4, 8}, rng, -1, 1);
  const Tensor cy = oracle::random_tensor({4, 4, 8}, rng, -1, 1);
  const Tensor sx = oracle::random_tensor({16}, rng, -1, 1);
  const Tensor sy = oracle::random_tensor({16}, rng, -1, 1);
  CHECK(translation_loss(cx, cy, sx, sy, cx, cy, sx, sy) == 0.0);

  Tensor sx_off = sx;
  for (std::size_t i = 0; i < sx_off.size(); ++i) sx_off[i] += 2.0;
  CHECK(translation_loss(cx, cy, sx, sy, cx, cy, sx_off, sy) == doctest::Approx(4.0));

  const Tensor cxr = oracle::random_tensor({4, 4, 8}, rng, -1, 1);
  const Tensor cyr = oracle::random_tensor({4, 4, 8}, rng, -1, 1);
  const Tensor sxr = oracle::random_tensor({16}, rng, -1, 1);
  const Tensor syr = oracle::random_tensor({16}, rng, -1, 1);
  const double expected = oracle::mse_loop(cx, cxr) + oracle::mse_loop(cy, cyr) + oracle::mse_loop(sx, sxr) +
                          oracle::mse_loop(sy, syr);
  CHECK(translation_loss(cx, cy, sx, sy, cxr, cyr, sxr, syr) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cycle loss") {
  RandomStream rng(4);
  const Tensor x = oracle::random_tensor({5, 5, 1}, rng);
  const Tensor y = oracle::random_tensor({5, 5, 2}, rng);
  CHECK(cycle_loss(x, y, x, y) == 0.0);
  Tensor y_off = y;
  for (std::size_t i = 0; i < y_off.size(); ++i) y_off[i] += 0.5;
  CHECK(cycle_loss(x, y, x, y_off) == doctest::Approx(0.25));
  const Tensor xc = oracle::random_tensor({5, 5, 1}, rng);
  const Tensor yc = oracle::random_tensor({5, 5, 2}, rng);
  CHECK(cycle_loss(x, y, xc, yc) == doctest::Approx(oracle::mse_loop(x, xc) + oracle::mse_loop(y, yc)).epsilon(1e-12));
}

namespace {

// Literal translation of the mask-guided alignment objective.
double alignment_oracle(const Tensor& cx, const Tensor& cyr, const Tensor& cxr, const Tensor& cy, const Tensor& pc,
                        double m) {
  const int h = cx.dim(0), w = cx.dim(1), c = cx.dim(2);
  const double n = static_cast<double>(cx.size());
  double t1 = 0, t2 = 0, t3 = 0, t4 = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double mask = pc.at(i, j);
      const double unmask = 1.0 - mask;
      for (int ci = 0; ci < c; ++ci) {
        const double d1 = cx.at(i, j, ci) - cyr.at(i, j, ci);
        const double d2 = cxr.at(i, j, ci) - cy.at(i, j, ci);
        t1 += d1 * d1 * unmask;
        t2 += d2 * d2 * unmask;
        t3 += (1.0 - d1 * d1 / m) * mask;
        t4 += (1.0 - d2 * d2 / m) * mask;
      }
    }
  }
  return t1 / n + t2 / n + t3 / n + t4 / n;
}

}  // namespace

TEST_CASE("alignment loss") {
  RandomStream rng(5);
  const Tensor cx = oracle::random_tensor({6, 5, 8}, rng, -0.99, 0.99);
  const Tensor cy = oracle::random_tensor({6, 5, 8}, rng, -0.99, 0.99);

  SUBCASE("all-unchanged mask with matching codes is zero") {
    CHECK(alignment_loss(cx, cx, cy, cy, Tensor::zeros({6, 5})) == 0.0);
  }
  SUBCASE("all-changed mask with matching codes saturates to 2") {
    CHECK(alignment_loss(cx, cx, cy, cy, Tensor::full({6, 5}, 1.0)) == doctest::Approx(2.0));
  }
  SUBCASE("random codes and mask match the literal oracle") {
    const Tensor cxr = oracle::random_tensor({6, 5, 8}, rng, -0.99, 0.99);
    const Tensor cyr = oracle::random_tensor({6, 5, 8}, rng, -0.99, 0.99);
    const Tensor pc = oracle::random_binary({6, 5}, rng);
    CHECK(alignment_loss(cx, cyr, cxr, cy, pc, 4.0) ==
          doctest::Approx(alignment_oracle(cx, cyr, cxr, cy, pc, 4.0)).epsilon(1e-12));
  }
  SUBCASE("nonnegative for in-range codes") {
    RandomStream r2(77);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor a = oracle::random_tensor({4, 4, 4}, r2, -0.999, 0.999);
      const Tensor b = oracle::random_tensor({4, 4, 4}, r2, -0.999, 0.999);
      const Tensor c = oracle::random_tensor({4, 4, 4}, r2, -0.999, 0.999);
      const Tensor d = oracle::random_tensor({4, 4, 4}, r2, -0.999, 0.999);
      const Tensor pc = oracle::random_binary({4, 4}, r2);
      CHECK(alignment_loss(a, b, c, d, pc, 4.0) >= 0.0);
    }
  }
  SUBCASE("mask must be binary") {
    Tensor pc = Tensor::full({6, 5}, 0.5);
    CHECK_THROWS_AS(alignment_loss(cx, cx, cy, cy, pc), ValidationError);
  }
  SUBCASE("mask must match spatial dims") {
    CHECK_THROWS_AS(alignment_loss(cx, cx, cy, cy, Tensor::zeros({5, 5})), ShapeError);
  }
  SUBCASE("explicitly tiled mask gives the identical value") {
    const Tensor cxr = oracle::random_tensor({6, 5, 8}, rng, -0.99, 0.99);
    const Tensor cyr = oracle::random_tensor({6, 5, 8}, rng, -0.99, 0.99);
    const Tensor pc = oracle::random_binary({6, 5}, rng);
    // Oracle computed channel-by-channel with the tiled mask.
    double total = 0.0;
    const double n = static_cast<double>(cx.size());
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 5; ++j) {
        for (int c = 0; c < 8; ++c) {
          const double mask = pc.at(i, j);
          const double d1 = cx.at(i, j, c) - cyr.at(i, j, c);
          const double d2 = cxr.at(i, j, c) - cy.at(i, j, c);
          total += d1 * d1 * (1 - mask) + d2 * d2 * (1 - mask) + (1 - d1 * d1 / 4.0) * mask +
                   (1 - d2 * d2 / 4.0) * mask;
        }
      }
    }
    CHECK(alignment_loss(cx, cyr, cxr, cy, pc, 4.0) == doctest::Approx(total / n).epsilon(1e-12));
  }
}

TEST_CASE("total is the exact component sum") {
  LossBreakdown parts;
  CHECK(total_loss(parts) == 0.0);
  parts.recon = 1;
  parts.trans = 2;
  parts.cyc = 3;
  parts.align = 4;
  CHECK(total_loss(parts) == 10.0);
  parts.recon = 0.1;
  parts.trans = 0.0203;
  parts.cyc = 7.25e-3;
  parts.align = 1.5;
  CHECK(std::fabs(total_loss(parts) - (0.1 + 0.0203 + 7.25e-3 + 1.5)) <= 1e-12);
}

TEST_CASE("losses are symmetric under domain exchange") {
  RandomStream rng(6);
  const Tensor x = oracle::random_tensor({5, 5, 2}, rng);
  const Tensor y = oracle::random_tensor({5, 5, 3}, rng);
  const Tensor xr = oracle::random_tensor({5, 5, 2}, rng);
  const Tensor yr = oracle::random_tensor({5, 5, 3}, rng);
  CHECK(reconstruction_loss(x, y, xr, yr) == doctest::Approx(reconstruction_loss(y, x, yr, xr)).epsilon(1e-14));

  const Tensor cx = oracle::random_tensor({5, 5, 8}, rng, -1, 1);
  const Tensor cy = oracle::random_tensor({5, 5, 8}, rng, -1, 1);
  const Tensor cxr = oracle::random_tensor({5, 5, 8}, rng, -1, 1);
  const Tensor cyr = oracle::random_tensor({5, 5, 8}, rng, -1, 1);
  const Tensor pc = oracle::random_binary({5, 5}, rng);
  // Swapping the domain roles swaps both code pairs.
  CHECK(alignment_loss(cx, cyr, cxr, cy, pc, 4.0) ==
        doctest::Approx(alignment_loss(cy, cxr, cyr, cx, pc, 4.0)).epsilon(1e-14));
}
