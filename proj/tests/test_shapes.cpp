#include <doctest.h>

#include <set>

#include "mfg/shapes.hpp"

using namespace mfg;

TEST_CASE("disc surface points sit near radius 0.8 after normalization") {
  ShapeSpec spec{ShapeFamily::kDisc, {0.5}, 42};
  const double sigma = 0.005;
  const PointSet ps = sample_surface(spec, 256, sigma);
  REQUIRE(ps.size() == 256);
  for (const Vec2& p : ps) {
    CHECK(p.norm() >= 0.8 - 3.0 * sigma);
    CHECK(p.norm() <= 0.8 + 3.0 * sigma);
  }
}

TEST_CASE("box boundary points lie on the square") {
  ShapeSpec spec{ShapeFamily::kBox, {0.4, 0.4}, 0};
  const PointSet ps = sample_surface(spec, 4, 0.0);
  REQUIRE(ps.size() == 4);
  for (const Vec2& p : ps) {
    const double m = std::max(std::abs(p.x), std::abs(p.y));
    CHECK(m == doctest::Approx(0.8).epsilon(1e-12));
  }
}

TEST_CASE("legged blob generates finite in-bounds points") {
  ShapeSpec spec = draw_shape_spec(7, 4);  // index 4 -> legged blob family
  REQUIRE(spec.family == ShapeFamily::kLeggedBlob);
  spec.params[0] = 4;  // four legs
  const PointSet ps = sample_surface(spec, 256);
  REQUIRE(ps.size() == 256);
  for (const Vec2& p : ps) {
    REQUIRE(p.finite());
    CHECK(std::abs(p.x) <= 1.0);
    CHECK(std::abs(p.y) <= 1.0);
  }
}

TEST_CASE("corpus generation is deterministic and centered") {
  const auto a = generate_corpus(21, 123);
  const auto b = generate_corpus(21, 123);
  REQUIRE(a.size() == 21);
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].points.size() == b[i].points.size());
    for (size_t j = 0; j < a[i].points.size(); ++j) {
      CHECK(a[i].points[j].x == b[i].points[j].x);
      CHECK(a[i].points[j].y == b[i].points[j].y);
    }
    const Vec2 c = centroid(a[i].points);
    CHECK(std::abs(c.x) < 1e-9);
    CHECK(std::abs(c.y) < 1e-9);
    const Bbox bb = bounds(a[i].points);
    CHECK(std::max(bb.size().x, bb.size().y) == doctest::Approx(1.6).epsilon(0.02));
  }
  // Family frequencies are uniform under the index rule.
  std::vector<int> counts(kNumShapeFamilies, 0);
  for (const auto& item : a) counts[static_cast<int>(item.spec.family)]++;
  for (int c : counts) CHECK(c == 3);
}

TEST_CASE("corpus of one shape works") {
  const auto one = generate_corpus(1, 5);
  REQUIRE(one.size() == 1);
  CHECK(one[0].points.size() == 256);
}

TEST_CASE("degenerate specs are rejected") {
  CHECK_THROWS_AS(sample_surface({ShapeFamily::kDisc, {0.0}, 0}, 16), std::invalid_argument);
  CHECK_THROWS_AS(sample_surface({ShapeFamily::kBox, {0.4, -0.1}, 0}, 16),
                  std::invalid_argument);
}

TEST_CASE("chamfer distance examples") {
  const PointSet a{{0.0, 0.0}};
  const PointSet b{{1.0, 0.0}};
  CHECK(chamfer(a, a) == 0.0);
  CHECK(chamfer(a, b) == doctest::Approx(2.0).epsilon(1e-15));

  const PointSet c{{0.0, 0.0}, {2.0, 0.0}};
  // Brute-force: from c, both points are 1 away from (1,0), mean 1; from b,
  // nearest in c is 1 away. Total 2.
  CHECK(chamfer(c, b) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("chamfer is symmetric, non-negative, zero only on equal multisets") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    PointSet a, b;
    for (int i = 0; i < 12; ++i) a.push_back(rng.normal2());
    for (int i = 0; i < 9; ++i) b.push_back(rng.normal2());
    const double ab = chamfer(a, b);
    CHECK(ab >= 0.0);
    CHECK(ab == chamfer(b, a));
    CHECK(ab > 1e-12);  // random sets differ

    PointSet shuffled = a;
    std::swap(shuffled[0], shuffled[5]);
    CHECK(chamfer(a, shuffled) <= 1e-12);
  }
  CHECK_THROWS_AS(chamfer({}, {{1.0, 1.0}}), std::invalid_argument);
}
