#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "fd_check.hpp"
#include "mfg/denoiser.hpp"

using namespace mfg;

namespace {

PointSet random_points(Rng& rng, int n) {
  PointSet ps(n);
  for (Vec2& p : ps) p = rng.normal2();
  return ps;
}

Embedding random_embedding(Rng& rng, int dim) {
  Embedding c;
  c.vec.resize(dim);
  for (double& v : c.vec) v = 0.3 * rng.normal();
  return c;
}

}  // namespace

TEST_CASE("time embedding matches the base-10000 rule") {
  DenoiserParams p = make_denoiser(4, 4, 0);
  const auto te0 = time_embed(p, 0);
  CHECK(te0[0] == 0.0);
  CHECK(te0[1] == 1.0);
  CHECK(te0[2] == 0.0);
  CHECK(te0[3] == 1.0);

  const auto te1 = time_embed(p, 1);
  CHECK(te1[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(te1[1] == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
  CHECK(te1[2] == doctest::Approx(std::sin(0.01)).epsilon(1e-15));
  CHECK(te1[3] == doctest::Approx(std::cos(0.01)).epsilon(1e-15));

  const auto again = time_embed(p, 1);
  CHECK(te1 == again);
}

TEST_CASE("untrained denoiser predicts exactly zero noise") {
  DenoiserParams p = make_denoiser(32, 32, 3);
  Rng rng(11);
  const PointSet x = random_points(rng, 17);
  const PointSet out = denoiser_forward(p, x, 250, Embedding::null(32));
  for (const Vec2& o : out) {
    CHECK(o.x == 0.0);
    CHECK(o.y == 0.0);
  }
}

TEST_CASE("forward is deterministic and exactly permutation-equivariant") {
  DenoiserParams p = make_denoiser(32, 32, 5);
  // Break the zero output layer so the test is not vacuous.
  Rng wrng(21);
  for (size_t i = p.layout.out2_w.offset; i < p.w.size(); ++i) p.w[i] = 0.1 * wrng.normal();

  Rng rng(13);
  const PointSet x = random_points(rng, 16);
  const Embedding c = random_embedding(rng, 32);

  const PointSet a = denoiser_forward(p, x, 77, c);
  const PointSet b = denoiser_forward(p, x, 77, c);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].y == b[i].y);
  }

  std::vector<int> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 shuffle_rng(99);
  std::shuffle(perm.begin(), perm.end(), shuffle_rng);
  PointSet xp(x.size());
  for (size_t i = 0; i < x.size(); ++i) xp[i] = x[perm[i]];
  const PointSet op = denoiser_forward(p, xp, 77, c);
  for (size_t i = 0; i < x.size(); ++i) {
    CHECK(op[i].x == a[perm[i]].x);  // bit-exact equivariance
    CHECK(op[i].y == a[perm[i]].y);
  }
}

TEST_CASE("dimension mismatch is rejected") {
  DenoiserParams p = make_denoiser(32, 32, 5);
  Rng rng(1);
  CHECK_THROWS_AS(denoiser_forward(p, random_points(rng, 4), 5, Embedding::null(16)),
                  std::invalid_argument);
}

TEST_CASE("backward gradients match central finite differences") {
  DenoiserParams p = make_denoiser(32, 32, 7);
  Rng wrng(23);
  for (size_t i = p.layout.out2_w.offset; i < p.w.size(); ++i) p.w[i] = 0.2 * wrng.normal();

  Rng rng(17);
  const int n = 8;
  const int t = 321;
  PointSet x = random_points(rng, n);
  Embedding c = random_embedding(rng, 32);
  const PointSet upstream = random_points(rng, n);

  DenoiserTape tape;
  denoiser_forward(p, x, t, c, tape);
  const DenoiserGrads grads = denoiser_backward(p, x, tape, upstream);

  auto objective = [&]() {
    const PointSet out = denoiser_forward(p, x, t, c);
    double acc = 0.0;
    for (size_t i = 0; i < out.size(); ++i) acc += out[i].dot(upstream[i]);
    return acc;
  };
  const double h = 1e-5;

  SUBCASE("zero upstream gives zero gradients") {
    const PointSet zeros(n, Vec2{});
    const DenoiserGrads g0 = denoiser_backward(p, x, tape, zeros);
    for (double v : g0.w) CHECK(v == 0.0);
    for (const Vec2& v : g0.x) CHECK((v.x == 0.0 && v.y == 0.0));
    for (double v : g0.cvec) CHECK(v == 0.0);
  }

  // Relative errors are measured against max(|a| + |f|, 1e-3): components
  // far below the output scale carry finite-difference truncation noise, so
  // they are held to a 1e-7 absolute bound instead.
  SUBCASE("input-point gradients") {
    fd::GradCheck check;
    for (int i = 0; i < n; ++i) {
      check.update(2 * i, grads.x[i].x, fd::central(objective, &x[i].x, h), 1e-3);
      check.update(2 * i + 1, grads.x[i].y, fd::central(objective, &x[i].y, h), 1e-3);
    }
    CAPTURE(check.worst_index);
    CAPTURE(check.worst_analytic);
    CAPTURE(check.worst_numeric);
    CHECK(check.max_rel_err <= 1e-4);
  }

  SUBCASE("embedding gradients") {
    fd::GradCheck check;
    for (int d = 0; d < 32; ++d)
      check.update(d, grads.cvec[d], fd::central(objective, &c.vec[d], h), 1e-3);
    CHECK(check.max_rel_err <= 1e-4);
  }

  SUBCASE("parameter gradients (random subsample)") {
    Rng pick(31);
    fd::GradCheck check;
    for (int trial = 0; trial < 220; ++trial) {
      const size_t idx = static_cast<size_t>(pick.uniform_int(0, p.w.size() - 1));
      check.update(static_cast<int>(idx), grads.w[idx], fd::central(objective, &p.w[idx], h),
                   1e-3);
    }
    CAPTURE(check.worst_index);
    CHECK(check.max_rel_err <= 1e-4);
  }
}

TEST_CASE("adam update follows the standard rule") {
  SUBCASE("zero gradient keeps parameters") {
    std::vector<double> w{0.5, -0.25};
    AdamState st(2);
    adam_step(w, {0.0, 0.0}, st, 0.1);
    CHECK(w[0] == 0.5);
    CHECK(w[1] == -0.25);
    CHECK(st.step == 1);
  }

  SUBCASE("first-step magnitude") {
    std::vector<double> w{0.0};
    AdamState st(1);
    adam_step(w, {1.0}, st, 0.1);
    CHECK(w[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  }

  SUBCASE("identical calls from identical states agree") {
    std::vector<double> w1{0.3, 0.7}, w2{0.3, 0.7};
    AdamState s1(2), s2(2);
    for (int i = 0; i < 5; ++i) {
      adam_step(w1, {0.1, -0.2}, s1, 0.05);
      adam_step(w2, {0.1, -0.2}, s2, 0.05);
    }
    CHECK(w1 == w2);
    CHECK(s1.m == s2.m);
    CHECK(s1.v == s2.v);
  }
}
