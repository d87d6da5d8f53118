#include "doctest.h"
#include "dram/sensor.hpp"
#include "support.hpp"

using namespace dram;
using namespace dram::sensor;

TEST_CASE("loc_to_pixels") {
  SensorConfig cfg;
  cfg.unit_width_px = 20;
  auto p = loc_to_pixels({0, 0}, 100, 100, cfg);
  CHECK(p.row == 50);
  CHECK(p.col == 50);
  p = loc_to_pixels({1, 0}, 100, 100, cfg);
  CHECK(p.row == 50);
  CHECK(p.col == 70);
  p = loc_to_pixels({-3, 0}, 100, 100, cfg);
  CHECK(p.col == -10);
  p = loc_to_pixels({0, 0.5}, 36, 100, cfg);
  CHECK(p.row == 28);
  const auto back = pixels_to_loc(loc_to_pixels({0.3, -1.7}, 36, 100, cfg), 36, 100, cfg);
  CHECK(back.x == doctest::Approx(0.3));
  CHECK(back.y == doctest::Approx(-1.7));
}

TEST_CASE("loc_to_pixels is affine") {
  SensorConfig cfg;
  cfg.unit_width_px = 12;
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const LocationCoord a{rng.uniform(-3, 3), rng.uniform(-3, 3)}, b{rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const double al = rng.uniform(-2, 2), be = rng.uniform(-2, 2);
    const auto lhs = loc_to_pixels({al * a.x + be * b.x, al * a.y + be * b.y}, 36, 100, cfg);
    const auto pa = loc_to_pixels(a, 36, 100, cfg), pb = loc_to_pixels(b, 36, 100, cfg);
    CHECK(lhs.row == doctest::Approx(al * pa.row + be * pb.row - (al + be - 1) * 18));
    CHECK(lhs.col == doctest::Approx(al * pa.col + be * pb.col - (al + be - 1) * 50));
  }
}

TEST_CASE("extract_patch examples") {
  const Tensor ones({1, 16, 16}, 1);
  CHECK(extract_patch(ones, {8, 8}, 8) == Tensor({1, 8, 8}, 1));
  const Tensor corner = extract_patch(ones, {0, 0}, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(corner[r * 4 + c] == ((r >= 2 && c >= 2) ? 1 : 0));
  CHECK(extract_patch(ones, {-100, 40}, 6) == Tensor({1, 6, 6}));
  CHECK_THROWS_AS(extract_patch(Tensor({16, 16}), {0, 0}, 4), DimensionError);
}

TEST_CASE("extract_patch rounds the center half-up") {
  Tensor img({1, 5, 5});
  for (std::size_t i = 0; i < 25; ++i) img[i] = static_cast<Scalar>(i);
  // center 1.5 rounds to 2, so a size-1 patch reads row 2
  CHECK(extract_patch(img, {1.5, 2.49}, 1)[0] == 12);
  CHECK(extract_patch(img, {1.49, 2.5}, 1)[0] == 8);
}

TEST_CASE("extract_patch matches the naive extractor") {
  Rng rng(2);
  for (int i = 0; i < 300; ++i) {
    const std::size_t c = 1 + rng.below(2), h = 1 + rng.below(30), w = 1 + rng.below(30);
    const Tensor img = testing::random_tensor({c, h, w}, rng, 0, 1);
    const double row = rng.uniform(-20, 50), col = rng.uniform(-20, 50);
    const std::size_t size = 1 + rng.below(24);
    CHECK(extract_patch(img, {row, col}, size) == testing::naive_patch(img, row, col, size));
  }
}

TEST_CASE("downsample") {
  CHECK(downsample(Tensor({1, 6, 9}, 0.25), 2, 3) == Tensor({1, 2, 3}, 0.25));
  CHECK(downsample(Tensor({1, 2, 2}, {1, 2, 3, 4}), 1, 1) == Tensor({1, 1, 1}, {2.5}));
  Tensor checker({1, 4, 4});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) checker[r * 4 + c] = static_cast<Scalar>((r + c) % 2);
  CHECK(downsample(checker, 2, 2) == Tensor({1, 2, 2}, 0.5));
  // non-divisible extents fall back to bilinear, constants stay constant
  const Tensor bil = downsample(Tensor({2, 7, 11}, 0.75), 3, 4);
  for (Scalar v : bil.data()) CHECK(v == doctest::Approx(0.75));
  CHECK_THROWS_AS(downsample(checker, 0, 2), DimensionError);
  CHECK_THROWS_AS(downsample(checker, 5, 2), DimensionError);
}

TEST_CASE("bilinear downsample of a linear ramp stays linear") {
  Tensor ramp({1, 1, 10});
  for (std::size_t i = 0; i < 10; ++i) ramp[i] = static_cast<Scalar>(i);
  const Tensor out = downsample(ramp, 1, 4);
  // output sample k sits at input coordinate (k + 0.5) * 2.5 - 0.5
  for (std::size_t k = 0; k < 4; ++k) CHECK(out[k] == doctest::Approx((k + 0.5) * 2.5 - 0.5));
}

TEST_CASE("foveal glimpse") {
  SensorConfig cfg{10, 8, 2, 8};
  const Tensor uniform({1, 40, 40}, 0.3);
  auto obs = extract_foveal_glimpse(uniform, {0.2, -0.1}, cfg);
  CHECK(obs.fine == Tensor({1, 8, 8}, 0.3));
  CHECK(obs.coarse == Tensor({1, 8, 8}, 0.3));

  Rng rng(3);
  const Tensor img = testing::random_tensor({1, 40, 40}, rng, 0, 1);
  obs = extract_foveal_glimpse(img, {0, 0}, cfg);
  CHECK(obs.fine == testing::naive_patch(img, 20, 20, 8));
  CHECK(obs.coarse == testing::naive_block_mean(testing::naive_patch(img, 20, 20, 16), 2));

  obs = extract_foveal_glimpse(img, {50, -50}, cfg);
  CHECK(obs.fine == Tensor({1, 8, 8}));
  CHECK(obs.coarse == Tensor({1, 8, 8}));
}

TEST_CASE("foveal_batch equals per-image glimpses") {
  SensorConfig cfg{12, 6, 3, 8};
  Rng rng(4);
  const Tensor a = testing::random_tensor({2, 30, 50}, rng, 0, 1), b = testing::random_tensor({2, 30, 50}, rng, 0, 1);
  const Tensor* imgs[2] = {&a, &b};
  const Tensor locs({2, 2}, {0.4, -0.3, -1.2, 0.9});
  const Tensor batch = foveal_batch(imgs, locs, cfg);
  REQUIRE(batch.shape() == Shape{2, 4, 6, 6});
  for (std::size_t i = 0; i < 2; ++i) {
    const auto obs = extract_foveal_glimpse(*imgs[i], {locs.at(i, 0), locs.at(i, 1)}, cfg);
    const Scalar* row = batch.ptr() + i * 4 * 36;
    CHECK(std::equal(obs.fine.ptr(), obs.fine.ptr() + 72, row));
    CHECK(std::equal(obs.coarse.ptr(), obs.coarse.ptr() + 72, row + 72));
  }
  CHECK_THROWS_AS(foveal_batch(imgs, Tensor({1, 2}), cfg), DimensionError);
}

TEST_CASE("context view") {
  SensorConfig cfg{12, 6, 3, 10};
  const Tensor img({1, 40, 30}, 0.5);
  const Tensor* imgs[1] = {&img};
  CHECK(context_batch(imgs, cfg) == Tensor({1, 1, 10, 10}, 0.5));
  cfg.context_size = 41;
  CHECK_THROWS_AS(context_batch(imgs, cfg), DimensionError);
}

TEST_CASE("sensor config validation") {
  CHECK_NOTHROW(SensorConfig{}.validate());
  CHECK_THROWS(SensorConfig{0, 12, 3, 32}.validate());
  CHECK_THROWS(SensorConfig{20, 1, 3, 32}.validate());
  CHECK_THROWS(SensorConfig{20, 12, 1, 32}.validate());
}
