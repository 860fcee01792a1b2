// Converts a (possibly noisy, intermediate) diffusion sample into a
// simulatable soft robot, and routes simulation gradients from solid
// particles back to the sample.
//
// Pipeline: predicted clean sample -> kernel-density occupancy grid ->
// morphological closing -> exterior flood fill -> largest component ->
// one solid particle per interior cell -> k-means actuator groups.
// The backward map between the solid points and the surface sample uses
// row-normalized Gaussian kernel weights on pairwise distances.
#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>
#include <vector>

#include "mfg/core.hpp"
#include "mfg/diffusion.hpp"
#include "mfg/pointset.hpp"

namespace mfg {

struct DegenerateGeometry : std::runtime_error {
  explicit DegenerateGeometry(const std::string& what) : std::runtime_error(what) {}
};

struct SolidifyConfig {
  int grid_res = 64;
  double bandwidth_cells = 1.5;  // Gaussian KDE bandwidth in cell widths
  double tau_rel = 0.5;          // occupancy threshold relative to the density
                                 // of a uniformly spaced boundary line
  int closing_radius = 1;
};

struct SolidifyReport {
  int grid_res = 0;
  std::vector<uint8_t> occupancy;  // final interior mask, row-major
  int component_count = 0;
  int chosen_component_size = 0;
  double fill_ratio = 0.0;
  Vec2 grid_lo{}, grid_hi{};  // square bounding box the grid covers
  double cell = 0.0;
};

namespace soliddet {

// Density a straight line of points with uniform spacing `gap` produces at
// one of its own points; the self-calibrating occupancy reference.
inline double line_density(double gap, double h) {
  double d = 1.0;
  for (int k = 1;; ++k) {
    const double r = k * gap;
    if (r > 6.0 * h) break;
    d += 2.0 * std::exp(-r * r / (2.0 * h * h));
  }
  return d;
}

inline double median_nn_distance(const PointSet& ps) {
  std::vector<double> nn(ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < ps.size(); ++j) {
      if (i == j) continue;
      best = std::min(best, (ps[i] - ps[j]).norm2());
    }
    nn[i] = std::sqrt(best);
  }
  std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
  return nn[nn.size() / 2];
}

inline void dilate(std::vector<uint8_t>& grid, int res, int radius, uint8_t set_to) {
  std::vector<uint8_t> src = grid;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      if (grid[y * res + x] == set_to) continue;
      bool hit = false;
      for (int dy = -radius; dy <= radius && !hit; ++dy)
        for (int dx = -radius; dx <= radius && !hit; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= res || ny >= res) continue;
          hit = src[ny * res + nx] == set_to;
        }
      if (hit) grid[y * res + x] = set_to;
    }
}

}  // namespace soliddet

// Forward solidification. Throws DegenerateGeometry when no usable interior
// exists; callers map that to a worst-case sentinel.
inline std::pair<std::vector<Vec2>, SolidifyReport> solidify(const PointSet& sample,
                                                             const SolidifyConfig& cfg) {
  if (sample.size() < 2 || !all_finite(sample))
    throw DegenerateGeometry("solidify: degenerate geometry (bad sample)");
  const int res = cfg.grid_res;

  // Square grid over the sample's bounding box.
  Bbox bb = bounds(sample);
  const double extent = std::max(bb.size().x, bb.size().y);
  if (!(extent > 0.0)) throw DegenerateGeometry("solidify: degenerate geometry (zero extent)");
  const Vec2 center = bb.center();
  const double half = 0.5 * extent;
  const Vec2 lo = center - Vec2{half, half};
  const double cell = extent / res;
  const double h = cfg.bandwidth_cells * cell;

  // Kernel density at cell centers; contributions beyond 6h are dropped.
  std::vector<double> density(static_cast<size_t>(res) * res, 0.0);
  const double cutoff = 6.0 * h;
  const int reach = static_cast<int>(std::ceil(cutoff / cell)) + 1;
  for (const Vec2& p : sample) {
    const int cx = static_cast<int>(std::floor((p.x - lo.x) / cell - 0.5));
    const int cy = static_cast<int>(std::floor((p.y - lo.y) / cell - 0.5));
    for (int y = std::max(0, cy - reach); y <= std::min(res - 1, cy + reach); ++y) {
      for (int x = std::max(0, cx - reach); x <= std::min(res - 1, cx + reach); ++x) {
        const Vec2 cc{lo.x + (x + 0.5) * cell, lo.y + (y + 0.5) * cell};
        const double r2 = (cc - p).norm2();
        if (r2 > cutoff * cutoff) continue;
        density[static_cast<size_t>(y) * res + x] += std::exp(-r2 / (2.0 * h * h));
      }
    }
  }

  const double gap = soliddet::median_nn_distance(sample);
  const double tau = cfg.tau_rel * soliddet::line_density(gap, h);

  std::vector<uint8_t> occ(static_cast<size_t>(res) * res, 0);
  for (size_t i = 0; i < occ.size(); ++i) occ[i] = density[i] >= tau ? 1 : 0;

  // Morphological closing: seal pinholes in the boundary band.
  if (cfg.closing_radius > 0) {
    soliddet::dilate(occ, res, cfg.closing_radius, 1);
    std::vector<uint8_t> inv(occ.size());
    for (size_t i = 0; i < occ.size(); ++i) inv[i] = occ[i] ? 0 : 1;
    soliddet::dilate(inv, res, cfg.closing_radius, 1);
    for (size_t i = 0; i < occ.size(); ++i) occ[i] = inv[i] ? 0 : 1;
  }

  // Exterior flood fill from the border; the interior is its complement.
  std::vector<uint8_t> exterior(occ.size(), 0);
  std::queue<int> frontier;
  auto push_exterior = [&](int x, int y) {
    const int idx = y * res + x;
    if (exterior[idx] || occ[idx]) return;
    exterior[idx] = 1;
    frontier.push(idx);
  };
  for (int x = 0; x < res; ++x) {
    push_exterior(x, 0);
    push_exterior(x, res - 1);
  }
  for (int y = 0; y < res; ++y) {
    push_exterior(0, y);
    push_exterior(res - 1, y);
  }
  while (!frontier.empty()) {
    const int idx = frontier.front();
    frontier.pop();
    const int x = idx % res, y = idx / res;
    if (x > 0) push_exterior(x - 1, y);
    if (x < res - 1) push_exterior(x + 1, y);
    if (y > 0) push_exterior(x, y - 1);
    if (y < res - 1) push_exterior(x, y + 1);
  }
  std::vector<uint8_t> interior(occ.size());
  for (size_t i = 0; i < occ.size(); ++i) interior[i] = exterior[i] ? 0 : 1;

  // Largest 4-connected interior component; ties resolve to the first seen.
  std::vector<int> label(interior.size(), -1);
  int components = 0, best_label = -1, best_size = 0;
  for (int start = 0; start < static_cast<int>(interior.size()); ++start) {
    if (!interior[start] || label[start] >= 0) continue;
    const int comp = components++;
    int size = 0;
    std::queue<int> q;
    q.push(start);
    label[start] = comp;
    while (!q.empty()) {
      const int idx = q.front();
      q.pop();
      ++size;
      const int x = idx % res, y = idx / res;
      auto visit = [&](int nx, int ny) {
        const int nidx = ny * res + nx;
        if (interior[nidx] && label[nidx] < 0) {
          label[nidx] = comp;
          q.push(nidx);
        }
      };
      if (x > 0) visit(x - 1, y);
      if (x < res - 1) visit(x + 1, y);
      if (y > 0) visit(x, y - 1);
      if (y < res - 1) visit(x, y + 1);
    }
    if (size > best_size) {
      best_size = size;
      best_label = comp;
    }
  }
  if (best_size == 0) throw DegenerateGeometry("solidify: degenerate geometry (empty interior)");

  SolidifyReport report;
  report.grid_res = res;
  report.component_count = components;
  report.chosen_component_size = best_size;
  report.fill_ratio = static_cast<double>(best_size) / (res * res);
  report.grid_lo = lo;
  report.grid_hi = lo + Vec2{extent, extent};
  report.cell = cell;
  report.occupancy.assign(interior.size(), 0);

  std::vector<Vec2> solid;
  solid.reserve(best_size);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const int idx = y * res + x;
      if (label[idx] == best_label) {
        report.occupancy[idx] = 1;
        solid.push_back({lo.x + (x + 0.5) * cell, lo.y + (y + 0.5) * cell});
      }
    }
  return {std::move(solid), std::move(report)};
}

// --------------------------------------------------------------------------
// Actuator placement: deterministic k-means over a coordinate subset, with
// k-means++ seeding and canonical relabeling by centroid order along the
// first clustering axis.
// --------------------------------------------------------------------------

inline std::vector<int> place_actuators(const std::vector<Vec2>& points, int k,
                                        const std::vector<int>& cluster_axes, uint64_t seed) {
  const int m = static_cast<int>(points.size());
  if (k < 1) throw std::invalid_argument("place_actuators: k must be >= 1");
  if (m < k) throw std::invalid_argument("place_actuators: fewer points than clusters");
  std::vector<int> axes = cluster_axes.empty() ? std::vector<int>{0, 1} : cluster_axes;

  auto coord = [&](const Vec2& p, int axis) { return axis == 0 ? p.x : p.y; };
  auto dist2 = [&](const Vec2& p, const Vec2& q) {
    double d = 0.0;
    for (int a : axes) {
      const double t = coord(p, a) - coord(q, a);
      d += t * t;
    }
    return d;
  };

  // k-means++ seeding.
  Rng rng(Rng::mix(seed, 0x6b6d6531ULL));
  std::vector<Vec2> centers;
  centers.push_back(points[rng.uniform_int(0, m - 1)]);
  std::vector<double> d2(m);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec2& c : centers) best = std::min(best, dist2(points[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      // All remaining points coincide with a center; spread deterministically.
      centers.push_back(points[centers.size() % m]);
      continue;
    }
    double pick = rng.uniform() * total;
    int chosen = m - 1;
    for (int i = 0; i < m; ++i) {
      pick -= d2[i];
      if (pick <= 0.0) {
        chosen = i;
        break;
      }
    }
    centers.push_back(points[chosen]);
  }

  // Lloyd iterations.
  std::vector<int> assign(m, 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (int i = 0; i < m; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d = dist2(points[i], centers[c]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      assign[i] = arg;
    }
    std::vector<Vec2> sums(k, Vec2{});
    std::vector<int> counts(k, 0);
    for (int i = 0; i < m; ++i) {
      sums[assign[i]] += points[i];
      counts[assign[i]] += 1;
    }
    double shift = 0.0;
    for (int c = 0; c < k; ++c) {
      Vec2 nc;
      if (counts[c] == 0) {
        // Re-seed an empty cluster at the point farthest from its center.
        int far = 0;
        double best = -1.0;
        for (int i = 0; i < m; ++i) {
          const double d = dist2(points[i], centers[assign[i]]);
          if (d > best) {
            best = d;
            far = i;
          }
        }
        nc = points[far];
      } else {
        nc = sums[c] / counts[c];
      }
      shift = std::max(shift, dist2(nc, centers[c]));
      centers[c] = nc;
    }
    if (shift < 1e-18) break;
  }
  for (int i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      const double d = dist2(points[i], centers[c]);
      if (d < best) {
        best = d;
        assign[i] = c;
      }
    }
  }

  // Canonical labels: ascending centroid coordinate along the first axis.
  std::vector<int> order(k);
  for (int c = 0; c < k; ++c) order[c] = c;
  const int axis0 = axes[0];
  const int axis1 = axes.size() > 1 ? axes[1] : (axis0 == 0 ? 1 : 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (coord(centers[a], axis0) != coord(centers[b], axis0))
      return coord(centers[a], axis0) < coord(centers[b], axis0);
    return coord(centers[a], axis1) < coord(centers[b], axis1);
  });
  std::vector<int> relabel(k);
  for (int rank = 0; rank < k; ++rank) relabel[order[rank]] = rank;
  for (int i = 0; i < m; ++i) assign[i] = relabel[assign[i]];
  return assign;
}

// --------------------------------------------------------------------------
// Gaussian-kernel backward map between solid points and the surface sample.
// Each solid point distributes its gradient over nearby surface points with
// softmax weights exp(-alpha d^2) normalized over the surface set.
// --------------------------------------------------------------------------

inline PointSet kernel_backward(const std::vector<Vec2>& solid, const PointSet& surface,
                                const std::vector<Vec2>& grad_solid, double alpha = 20.0) {
  if (solid.size() != grad_solid.size())
    throw std::invalid_argument("kernel_backward: gradient shape mismatch");
  PointSet out(surface.size(), Vec2{});
  std::vector<double> w(surface.size());
  for (size_t u = 0; u < solid.size(); ++u) {
    double min_d2 = std::numeric_limits<double>::infinity();
    for (size_t v = 0; v < surface.size(); ++v)
      min_d2 = std::min(min_d2, (solid[u] - surface[v]).norm2());
    double total = 0.0;
    for (size_t v = 0; v < surface.size(); ++v) {
      w[v] = std::exp(-alpha * ((solid[u] - surface[v]).norm2() - min_d2));
      total += w[v];
    }
    for (size_t v = 0; v < surface.size(); ++v) out[v] += grad_solid[u] * (w[v] / total);
  }
  return out;
}

// d x0_hat / d x_t with the noise prediction treated as constant.
inline PointSet chain_grad_to_xt(const PointSet& grad_xhat0, int t, const NoiseSchedule& sched) {
  if (t == 0) return grad_xhat0;
  sched.check_step(t);
  const double scale = 1.0 / std::sqrt(sched.abar(t));
  PointSet out(grad_xhat0.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = grad_xhat0[i] * scale;
  return out;
}

// --------------------------------------------------------------------------
// Full robotizing step.
// --------------------------------------------------------------------------

struct ActuatorLayout {
  int k = 0;                      // 0 = passive design
  std::vector<int> cluster_axes;  // coordinate subset for k-means
  Vec2 fiber{0.0, 1.0};
};

struct WorkspaceMap {
  Vec2 scale{1.0, 1.0};   // workspace = offset + scale * shape coords
  Vec2 offset{0.0, 0.0};
};

struct RobotizeConfig {
  SolidifyConfig solidify;
  ActuatorLayout actuators;
  uint64_t cluster_seed = 0;
  int min_particles = 64;
  double youngs_modulus = 1e4;
  double poisson_ratio = 0.2;
  double mass_density = 1e3;
};

struct RobotDesign {
  std::vector<Vec2> points;        // workspace coordinates
  std::vector<Vec2> shape_points;  // sample-space solid points (gradient mapping)
  std::vector<int> actuator;       // -1 = passive particle
  int n_actuators = 0;
  std::vector<Vec2> fiber;         // unit direction per actuator
  double youngs_modulus = 1e4;
  double poisson_ratio = 0.2;
  double mass_density = 1e3;
  double particle_volume = 0.0;
  WorkspaceMap ws;
  SolidifyReport report;

  int size() const { return static_cast<int>(points.size()); }
};

inline RobotDesign robotize_sample(const PointSet& x_hat0, const RobotizeConfig& cfg,
                                   const WorkspaceMap& ws) {
  auto [solid, report] = solidify(x_hat0, cfg.solidify);
  if (static_cast<int>(solid.size()) < cfg.min_particles)
    throw DegenerateGeometry("robotize: component below minimum particle count");
  // Samples live in [-1, 1] sample space; anything far outside cannot map
  // into the task workspace.
  for (const Vec2& p : solid)
    if (std::abs(p.x) > 1.5 || std::abs(p.y) > 1.5)
      throw DegenerateGeometry("robotize: solid geometry outside the workspace");

  RobotDesign d;
  d.shape_points = solid;
  d.report = std::move(report);
  d.ws = ws;
  d.points.resize(solid.size());
  for (size_t i = 0; i < solid.size(); ++i)
    d.points[i] = {ws.offset.x + ws.scale.x * solid[i].x, ws.offset.y + ws.scale.y * solid[i].y};

  d.n_actuators = cfg.actuators.k;
  if (cfg.actuators.k > 0) {
    d.actuator = place_actuators(solid, cfg.actuators.k, cfg.actuators.cluster_axes,
                                 cfg.cluster_seed);
    d.fiber.assign(cfg.actuators.k, cfg.actuators.fiber);
  } else {
    d.actuator.assign(solid.size(), -1);
  }
  d.youngs_modulus = cfg.youngs_modulus;
  d.poisson_ratio = cfg.poisson_ratio;
  d.mass_density = cfg.mass_density;
  d.particle_volume = std::abs(d.report.cell * ws.scale.x) * std::abs(d.report.cell * ws.scale.y);
  return d;
}

// x_t at diffusion time t -> robot design, via the predicted clean sample.
// At t == 0 the state is used directly.
inline RobotDesign robotize(const PointSet& x_t, int t, const DenoiserParams& p,
                            const Embedding& c, double guidance, const NoiseSchedule& sched,
                            const RobotizeConfig& cfg, const WorkspaceMap& ws) {
  if (t == 0) return robotize_sample(x_t, cfg, ws);
  DenoiserTape tape;
  const PointSet eps_hat = guided_eps(p, x_t, t, c, guidance, tape);
  const PointSet x_hat0 = predict_x0(x_t, t, eps_hat, sched);
  return robotize_sample(x_hat0, cfg, ws);
}

}  // namespace mfg
