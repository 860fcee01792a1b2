// Small math types, deterministic RNG, and helpers shared by every module.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mfg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
  Vec2& operator*=(double s) { x *= s; y *= s; return *this; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm2() const { return x * x + y * y; }
  double norm() const { return std::sqrt(norm2()); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

// 2x2 matrix, row major.
struct Mat2 {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;  // [[a, b], [c, d]]

  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  static Mat2 zero() { return {}; }
  static Mat2 outer(const Vec2& u, const Vec2& v) {
    return {u.x * v.x, u.x * v.y, u.y * v.x, u.y * v.y};
  }

  Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
  Mat2 operator-(const Mat2& o) const { return {a - o.a, b - o.b, c - o.c, d - o.d}; }
  Mat2 operator*(double s) const { return {a * s, b * s, c * s, d * s}; }
  Mat2& operator+=(const Mat2& o) { a += o.a; b += o.b; c += o.c; d += o.d; return *this; }
  Vec2 operator*(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
  Mat2 operator*(const Mat2& o) const {
    return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
  }
  Mat2 transposed() const { return {a, c, b, d}; }
  double det() const { return a * d - b * c; }
  double trace() const { return a + d; }
  // Cofactor matrix: det(F) = <cof(F), F>/2 in 2D, d det/dF = cof(F).
  Mat2 cofactor() const { return {d, -c, -b, a}; }
  double frob_inner(const Mat2& o) const { return a * o.a + b * o.b + c * o.c + d * o.d; }
  bool finite() const {
    return std::isfinite(a) && std::isfinite(b) && std::isfinite(c) && std::isfinite(d);
  }
};

inline Mat2 operator*(double s, const Mat2& m) { return m * s; }

// --------------------------------------------------------------------------
// Deterministic RNG.
//
// All randomness in the project flows through this type. Streams are derived
// from a root seed with mix(), never by sharing generator state, so results
// are independent of evaluation order and thread count.
// --------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

  static uint64_t mix(uint64_t a, uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
  }

  uint64_t u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(gen_() % span);
  }

  // Standard normal via Box-Muller (no cached spare, fully stateless per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vec2 normal2() {
    const double a = normal();
    const double b = normal();
    return {a, b};
  }

 private:
  std::mt19937_64 gen_;
};

// --------------------------------------------------------------------------
// Order-independent mean.
//
// Accumulates doubles on a 128-bit fixed-point grid (2^-40 quantum) so the
// result is a function of the value multiset only. Used by every pooling
// reduction in the denoiser, which makes permutation equivariance exact
// rather than approximate.
// --------------------------------------------------------------------------

class FixedAccum {
 public:
  void add(double v) {
    const double r = std::nearbyint(v);
    const long long hi = static_cast<long long>(r);
    const double frac = v - r;
    acc_ += (static_cast<__int128>(hi) << 40) +
            static_cast<long long>(std::llrint(frac * 0x1.0p40));
  }
  double value() const { return static_cast<double>(acc_) * 0x1.0p-40; }

 private:
  __int128 acc_ = 0;
};

inline double stable_mean(std::span<const double> values) {
  FixedAccum acc;
  for (double v : values) acc.add(v);
  return acc.value() / static_cast<double>(values.size());
}

// --------------------------------------------------------------------------
// FNV-1a 64-bit content hash (manifest fingerprints).
// --------------------------------------------------------------------------

inline uint64_t fnv1a64(std::span<const unsigned char> data) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char byte : data) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

// --------------------------------------------------------------------------
// Index-parallel loop. Results must depend only on the index, never on
// execution order; callers merge per-index outputs afterwards.
// --------------------------------------------------------------------------

inline void parallel_for(int64_t n, int jobs, const std::function<void(int64_t)>& body) {
  if (jobs <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  const int workers = static_cast<int>(std::min<int64_t>(jobs, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::atomic<int64_t> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const int64_t i = next.fetch_add(1);
        if (i >= n) return;
        body(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

inline int default_jobs() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

inline double clamp(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

}  // namespace mfg
