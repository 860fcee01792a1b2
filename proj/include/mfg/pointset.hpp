// Point-set primitives: the diffusion state is an ordered list of 2D points.
#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "mfg/core.hpp"

namespace mfg {

using PointSet = std::vector<Vec2>;

inline bool all_finite(const PointSet& ps) {
  for (const Vec2& p : ps)
    if (!p.finite()) return false;
  return true;
}

inline Vec2 centroid(const PointSet& ps) {
  if (ps.empty()) throw std::invalid_argument("centroid of empty point set");
  Vec2 c{0.0, 0.0};
  for (const Vec2& p : ps) c += p;
  return c / static_cast<double>(ps.size());
}

struct Bbox {
  Vec2 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  Vec2 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};

  void expand(const Vec2& p) {
    lo.x = std::min(lo.x, p.x);
    lo.y = std::min(lo.y, p.y);
    hi.x = std::max(hi.x, p.x);
    hi.y = std::max(hi.y, p.y);
  }
  Vec2 size() const { return hi - lo; }
  Vec2 center() const { return (lo + hi) * 0.5; }
};

inline Bbox bounds(const PointSet& ps) {
  Bbox b;
  for (const Vec2& p : ps) b.expand(p);
  return b;
}

// Symmetric Chamfer distance: mean nearest-neighbor distance in both
// directions. Used as an evaluation metric only, never in a gradient path.
inline double chamfer(const PointSet& a, const PointSet& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer of empty point set");
  auto one_way = [](const PointSet& from, const PointSet& to) {
    double total = 0.0;
    for (const Vec2& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec2& q : to) best = std::min(best, (p - q).norm2());
      total += std::sqrt(best);
    }
    return total / static_cast<double>(from.size());
  };
  return one_way(a, b) + one_way(b, a);
}

}  // namespace mfg
