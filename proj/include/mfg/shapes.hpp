// Procedural 2D shape corpus: seven closed-region families sampled on their
// boundaries, used as training data for the point-set diffusion model.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfg/core.hpp"
#include "mfg/pointset.hpp"

namespace mfg {

enum class ShapeFamily : int {
  kDisc = 0,
  kBox,
  kCapsule,
  kLShape,
  kLeggedBlob,
  kStar,
  kRingSegment,
};
constexpr int kNumShapeFamilies = 7;

inline const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kDisc: return "disc";
    case ShapeFamily::kBox: return "box";
    case ShapeFamily::kCapsule: return "capsule";
    case ShapeFamily::kLShape: return "lshape";
    case ShapeFamily::kLeggedBlob: return "legged_blob";
    case ShapeFamily::kStar: return "star";
    case ShapeFamily::kRingSegment: return "ring_segment";
  }
  return "?";
}

inline ShapeFamily family_from_name(const std::string& s) {
  for (int i = 0; i < kNumShapeFamilies; ++i) {
    const auto f = static_cast<ShapeFamily>(i);
    if (s == family_name(f)) return f;
  }
  throw std::invalid_argument("unknown shape family: " + s);
}

// Family-specific parameter meanings (trailing rotation optional):
//   disc         {radius}
//   box          {width, height, rotation?}
//   capsule      {half_length, radius, rotation?}
//   lshape       {width, height, arm_a, arm_b, rotation?}
//   legged_blob  {n_legs, body_radius, leg_length, leg_angular_width, phase}
//   star         {base_radius, amplitude, n_points, phase}
//   ring_segment {outer_radius, inner_radius, angular_span, rotation?}
struct ShapeSpec {
  ShapeFamily family = ShapeFamily::kDisc;
  std::vector<double> params;
  uint64_t seed = 0;
};

namespace detail {

inline void append_arc(std::vector<Vec2>& poly, Vec2 center, double radius, double a0,
                       double a1, int segments) {
  for (int i = 0; i <= segments; ++i) {
    const double a = a0 + (a1 - a0) * static_cast<double>(i) / segments;
    poly.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
}

inline void append_polar(std::vector<Vec2>& poly, const std::function<double(double)>& radius,
                         int segments) {
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * M_PI * static_cast<double>(i) / segments;
    const double r = radius(a);
    poly.push_back({r * std::cos(a), r * std::sin(a)});
  }
  poly.push_back(poly.front());
}

// Raised-cosine bump of unit peak, angular half width w/2 around center.
inline double leg_bump(double theta, double center, double width) {
  double d = std::fmod(theta - center + 3.0 * M_PI, 2.0 * M_PI) - M_PI;
  if (std::abs(d) >= 0.5 * width) return 0.0;
  return 0.5 * (1.0 + std::cos(2.0 * M_PI * d / width));
}

}  // namespace detail

// Closed boundary polyline of the region described by the spec.
// Throws std::invalid_argument when the region degenerates to zero area.
inline std::vector<Vec2> boundary_polyline(const ShapeSpec& spec) {
  constexpr int kCurveSegments = 2048;
  std::vector<Vec2> poly;
  const auto& p = spec.params;
  auto need = [&](size_t n) {
    if (p.size() < n) throw std::invalid_argument("shape spec: missing parameters");
  };
  double rotation = 0.0;  // optional trailing parameter, consumed at the end
  switch (spec.family) {
    case ShapeFamily::kDisc: {
      need(1);
      if (p[0] <= 0.0) throw std::invalid_argument("disc: zero area");
      detail::append_polar(poly, [&](double) { return p[0]; }, kCurveSegments);
      break;
    }
    case ShapeFamily::kBox: {
      need(2);
      const double w = p[0], h = p[1];
      if (w <= 0.0 || h <= 0.0) throw std::invalid_argument("box: zero area");
      poly = {{-w / 2, -h / 2}, {w / 2, -h / 2}, {w / 2, h / 2}, {-w / 2, h / 2},
              {-w / 2, -h / 2}};
      if (p.size() > 2) rotation = p[2];
      break;
    }
    case ShapeFamily::kCapsule: {
      need(2);
      const double l = p[0], r = p[1];
      if (r <= 0.0) throw std::invalid_argument("capsule: zero area");
      detail::append_arc(poly, {l, 0.0}, r, -M_PI / 2, M_PI / 2, kCurveSegments / 4);
      detail::append_arc(poly, {-l, 0.0}, r, M_PI / 2, 3 * M_PI / 2, kCurveSegments / 4);
      poly.push_back(poly.front());
      if (p.size() > 2) rotation = p[2];
      break;
    }
    case ShapeFamily::kLShape: {
      need(4);
      const double w = p[0], h = p[1], a = p[2], b = p[3];
      if (w <= 0.0 || h <= 0.0 || a <= 0.0 || b <= 0.0 || a >= h || b >= w)
        throw std::invalid_argument("lshape: zero area");
      poly = {{0, 0}, {w, 0}, {w, a}, {b, a}, {b, h}, {0, h}, {0, 0}};
      if (p.size() > 4) rotation = p[4];
      break;
    }
    case ShapeFamily::kLeggedBlob: {
      need(5);
      const int legs = static_cast<int>(p[0]);
      const double body = p[1], len = p[2], width = p[3], phase = p[4];
      if (legs < 2 || legs > 5) throw std::invalid_argument("legged_blob: legs must be 2..5");
      if (body <= 0.0) throw std::invalid_argument("legged_blob: zero area");
      // Legs point into the lower half plane so the family reads as a crawler.
      std::vector<double> centers;
      for (int i = 0; i < legs; ++i)
        centers.push_back(M_PI + M_PI * (i + 0.5) / legs + phase);
      detail::append_polar(
          poly,
          [&](double theta) {
            double r = body;
            for (double c : centers) r += len * detail::leg_bump(theta, c, width);
            return r;
          },
          kCurveSegments);
      break;
    }
    case ShapeFamily::kStar: {
      need(4);
      const double r0 = p[0], amp = p[1];
      const int m = static_cast<int>(p[2]);
      const double phase = p[3];
      if (r0 <= 0.0 || amp >= 1.0) throw std::invalid_argument("star: zero area");
      detail::append_polar(
          poly, [&](double theta) { return r0 * (1.0 + amp * std::cos(m * theta + phase)); },
          kCurveSegments);
      break;
    }
    case ShapeFamily::kRingSegment: {
      need(3);
      const double ro = p[0], ri = p[1], span = p[2];
      if (ro <= ri || ri < 0.0 || span <= 0.0 || span >= 2.0 * M_PI)
        throw std::invalid_argument("ring_segment: zero area");
      const double a0 = -M_PI / 2 - span / 2, a1 = -M_PI / 2 + span / 2;
      detail::append_arc(poly, {0, 0}, ro, a0, a1, kCurveSegments / 2);
      detail::append_arc(poly, {0, 0}, ri, a1, a0, kCurveSegments / 2);
      poly.push_back(poly.front());
      if (p.size() > 3) rotation = p[3];
      break;
    }
  }
  if (rotation != 0.0) {
    const double c = std::cos(rotation), sn = std::sin(rotation);
    for (Vec2& q : poly) q = {c * q.x - sn * q.y, sn * q.x + c * q.y};
  }
  return poly;
}

// n points approximately uniform in arc length along the boundary, with
// truncated Gaussian jitter, re-centered on the centroid and scaled to a
// maximum extent of 1.6 workspace units.
inline PointSet sample_surface(const ShapeSpec& spec, int n, double sigma_jitter = 0.005) {
  if (n < 1) throw std::invalid_argument("sample_surface: n must be positive");
  const std::vector<Vec2> poly = boundary_polyline(spec);

  std::vector<double> cum(poly.size(), 0.0);
  for (size_t i = 1; i < poly.size(); ++i)
    cum[i] = cum[i - 1] + (poly[i] - poly[i - 1]).norm();
  const double total = cum.back();
  if (!(total > 0.0)) throw std::invalid_argument("sample_surface: degenerate boundary");

  PointSet out;
  out.reserve(n);
  size_t seg = 1;
  for (int j = 0; j < n; ++j) {
    const double s = total * (j + 0.5) / n;
    while (seg + 1 < poly.size() && cum[seg] < s) ++seg;
    const double t = (s - cum[seg - 1]) / std::max(cum[seg] - cum[seg - 1], 1e-300);
    out.push_back(poly[seg - 1] + (poly[seg] - poly[seg - 1]) * t);
  }

  // Normalize the clean boundary first so jitter lands in output units, then
  // re-center exactly; the extent stays 1.6 up to the jitter magnitude.
  {
    const Vec2 c = centroid(out);
    for (Vec2& q : out) q -= c;
    const Bbox b = bounds(out);
    const double extent = std::max(b.size().x, b.size().y);
    if (!(extent > 0.0)) throw std::invalid_argument("sample_surface: zero-extent shape");
    const double scale = 1.6 / extent;
    for (Vec2& q : out) q *= scale;
  }

  if (sigma_jitter > 0.0) {
    Rng rng(spec.seed);
    for (Vec2& q : out) {
      Vec2 d = rng.normal2() * sigma_jitter;
      const double cap = 2.8 * sigma_jitter;  // truncated so outliers cannot
      const double norm = d.norm();           // leave the nominal 3-sigma band
      if (norm > cap) d *= cap / norm;
      q += d;
    }
    const Vec2 c = centroid(out);
    for (Vec2& q : out) q -= c;
  }
  return out;
}

struct CorpusItem {
  ShapeSpec spec;
  PointSet points;
};

// Deterministic spec draw for corpus index i.
inline ShapeSpec draw_shape_spec(uint64_t seed, int64_t index) {
  ShapeSpec spec;
  spec.family = static_cast<ShapeFamily>(index % kNumShapeFamilies);
  spec.seed = Rng::mix(seed, static_cast<uint64_t>(2 * index));
  Rng rng(Rng::mix(seed, static_cast<uint64_t>(2 * index + 1)));
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  switch (spec.family) {
    case ShapeFamily::kDisc:
      spec.params = {u(0.3, 0.7)};
      break;
    case ShapeFamily::kBox:
      spec.params = {u(0.3, 0.9), u(0.3, 0.9), u(0.0, M_PI / 2)};
      break;
    case ShapeFamily::kCapsule:
      spec.params = {u(0.15, 0.55), u(0.1, 0.32), u(0.0, M_PI)};
      break;
    case ShapeFamily::kLShape:
      spec.params = {u(0.45, 0.95), u(0.45, 0.95), 0.0, 0.0, u(0.0, 2.0 * M_PI)};
      spec.params[2] = spec.params[1] * u(0.25, 0.6);
      spec.params[3] = spec.params[0] * u(0.25, 0.6);
      break;
    case ShapeFamily::kLeggedBlob: {
      const int legs = static_cast<int>(rng.uniform_int(2, 5));
      const double spacing = M_PI / legs;
      spec.params = {static_cast<double>(legs), u(0.28, 0.5), u(0.2, 0.55),
                     spacing * u(0.4, 0.75), u(-0.25, 0.25)};
      break;
    }
    case ShapeFamily::kStar:
      spec.params = {u(0.32, 0.58), u(0.12, 0.38), static_cast<double>(rng.uniform_int(4, 8)),
                     u(0.0, 2.0 * M_PI)};
      break;
    case ShapeFamily::kRingSegment: {
      const double ro = u(0.45, 0.78);
      spec.params = {ro, ro * u(0.4, 0.72), u(1.8, 5.4), u(0.0, 2.0 * M_PI)};
      break;
    }
  }
  return spec;
}

inline std::vector<CorpusItem> generate_corpus(int64_t count, uint64_t seed, int n_points = 256,
                                               double sigma_jitter = 0.005) {
  if (count < 1) throw std::invalid_argument("generate_corpus: count must be positive");
  std::vector<CorpusItem> corpus(count);
  for (int64_t i = 0; i < count; ++i) {
    corpus[i].spec = draw_shape_spec(seed, i);
    corpus[i].points = sample_surface(corpus[i].spec, n_points, sigma_jitter);
  }
  return corpus;
}

}  // namespace mfg
