// The six task environments: scene assembly, prescribed actuators and
// controllers, scalar performance metrics, and differentiable losses
// (negated performance, with a soft-IoU surrogate for balancing).
//
// Sizes follow the 2D adaptation: stated dimensions keep their numeric
// values with the depth axis dropped. Signed displacements are used for the
// manipulation metrics so dropping or pushing the object the wrong way is
// penalized rather than rewarded.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfg/core.hpp"
#include "mfg/mpm.hpp"
#include "mfg/robotize.hpp"

namespace mfg {

enum class TaskName { kBalancing, kLanding, kCrawling, kHurdling, kGripping, kBoxMoving };

constexpr double kWorstPerformance = -1e9;

inline const char* task_name(TaskName t) {
  switch (t) {
    case TaskName::kBalancing: return "balancing";
    case TaskName::kLanding: return "landing";
    case TaskName::kCrawling: return "crawling";
    case TaskName::kHurdling: return "hurdling";
    case TaskName::kGripping: return "gripping";
    case TaskName::kBoxMoving: return "box_moving";
  }
  return "?";
}

inline TaskName task_from_name(const std::string& s) {
  for (TaskName t : {TaskName::kBalancing, TaskName::kLanding, TaskName::kCrawling,
                     TaskName::kHurdling, TaskName::kGripping, TaskName::kBoxMoving})
    if (s == task_name(t)) return t;
  throw std::invalid_argument("unknown task: " + s);
}

struct ObjectSpec {
  bool present = false;
  Vec2 center{};
  Vec2 size{};
};

struct GlueSpec {
  bool present = false;
  Vec2 lo{}, hi{};
};

struct TaskSpec {
  TaskName name = TaskName::kCrawling;
  Vec2 ws_size{0.08, 0.08};  // robot design workspace (per finger for gripping)
  Vec2 ws_center{0.5, 0.5};
  bool drop_to_surface = false;
  double drop_surface_y = 0.0;
  Vec2 init_velocity{0.0, 0.0};
  std::vector<ColliderBox> colliders;
  Vec2 landing_target{};
  ObjectSpec object;
  GlueSpec glue;
  bool mirrored_gripper = false;
  double mirror_axis_x = 0.5;
  ActuatorLayout actuators;
  ControllerParams prescribed;
  int grid_res = 64;
  int control_steps = 100;
  int solidify_res = 64;
  double sentinel = kWorstPerformance;

  WorkspaceMap ws_map() const {
    return WorkspaceMap{{ws_size.x * 0.5, ws_size.y * 0.5}, ws_center};
  }
};

constexpr double kGroundY = 3.0 / 64.0;

inline TaskSpec build_task(TaskName name) {
  TaskSpec t;
  t.name = name;
  const double g = kGroundY;
  switch (name) {
    case TaskName::kBalancing: {
      // Stick platform 0.02 wide x 0.05 tall; initial upward kick of 0.5.
      t.ws_size = {0.08, 0.08};
      t.ws_center = {0.5, g + 0.05 + 0.05};
      t.drop_to_surface = true;
      t.drop_surface_y = g + 0.05;
      t.init_velocity = {0.0, 0.5};
      t.colliders.push_back({{0.49, 0.0}, {0.51, g + 0.05}, 0.4, false});
      t.actuators.k = 0;
      break;
    }
    case TaskName::kLanding: {
      // Start 0.08 right of and 0.045 above the target, flying right at 0.5.
      t.ws_size = {0.08, 0.08};
      t.landing_target = {0.30, g};
      t.ws_center = {t.landing_target.x + 0.08, g + 0.045};
      t.init_velocity = {0.5, 0.0};
      t.actuators.k = 0;
      break;
    }
    case TaskName::kCrawling: {
      t.ws_size = {0.08, 0.08};
      t.ws_center = {0.5, g + 0.04};
      t.drop_to_surface = true;
      t.drop_surface_y = g;
      t.actuators.k = 4;
      t.actuators.cluster_axes = {0};
      t.actuators.fiber = {0.0, 1.0};
      t.prescribed.kind = ControllerParams::Kind::kSine;
      t.prescribed.sine = {{0.3, 30.0, 0.5 * M_PI, 0.0},
                           {0.3, 30.0, 1.5 * M_PI, 0.0},
                           {0.3, 30.0, 0.0, 0.0},
                           {0.3, 30.0, M_PI, 0.0}};
      break;
    }
    case TaskName::kHurdling: {
      // Obstacle 0.01 x 0.03, placed 0.07 ahead of the workspace front edge.
      t.ws_size = {0.08, 0.08};
      t.ws_center = {0.38, g + 0.04};
      t.drop_to_surface = true;
      t.drop_surface_y = g;
      const double front = t.ws_center.x + 0.04;
      t.colliders.push_back({{front + 0.07, 0.0}, {front + 0.08, g + 0.03}, 0.4, false});
      t.actuators.k = 2;
      t.actuators.cluster_axes = {0};
      t.actuators.fiber = {0.0, 1.0};
      // Ramp (0,0) -> (1.0, 0.3) over the first 30 steps, zero afterwards;
      // the 1.0 channel drives the actuator nearer the obstacle (channel 1,
      // labels ascend left to right).
      t.prescribed.kind = ControllerParams::Kind::kSequence;
      t.prescribed.seq.assign(100, {0.0, 0.0});
      for (int s = 0; s < 30; ++s) {
        const double f = static_cast<double>(s) / 29.0;
        t.prescribed.seq[s] = {0.3 * f, 1.0 * f};
      }
      break;
    }
    case TaskName::kGripping: {
      // Two mirrored fingers hang from a glued base; a 0.03 box rests on the
      // ground 0.08 below the base, flanked by the finger tips.
      t.grid_res = 128;
      t.ws_size = {0.03, 0.065};
      t.ws_center = {0.46, g + 0.0475};  // left finger box center
      t.mirrored_gripper = true;
      t.mirror_axis_x = 0.5;
      t.glue = {true, {0.445, g + 0.08}, {0.555, g + 0.09}};
      t.object = {true, {0.5, g + 0.015}, {0.03, 0.03}};
      t.actuators.k = 2;
      t.actuators.cluster_axes = {0};
      t.actuators.fiber = {0.0, 1.0};
      // (outer, inner): inner ramps up over the first 50 steps, then the
      // outer channel falls from 1 to 0 over the remainder.
      t.prescribed.kind = ControllerParams::Kind::kSequence;
      t.prescribed.seq.assign(100, {0.0, 0.0});
      for (int s = 0; s < 50; ++s) t.prescribed.seq[s] = {0.0, static_cast<double>(s) / 49.0};
      for (int s = 50; s < 100; ++s)
        t.prescribed.seq[s] = {1.0 - static_cast<double>(s - 50) / 49.0, 0.0};
      break;
    }
    case TaskName::kBoxMoving: {
      // A 0.03 box on the ground half a body length right of the robot
      // center; positive performance means the box moved left.
      t.ws_size = {0.16, 0.06};
      t.ws_center = {0.42, g + 0.03};
      t.drop_to_surface = true;
      t.drop_surface_y = g;
      t.object = {true, {t.ws_center.x + 0.08, g + 0.015}, {0.03, 0.03}};
      t.actuators.k = 2;
      t.actuators.cluster_axes = {1};
      t.actuators.fiber = {1.0, 0.0};
      // Lower actuator ramps 0 -> 1 across the horizon, upper stays zero.
      t.prescribed.kind = ControllerParams::Kind::kSequence;
      t.prescribed.seq.assign(100, {0.0, 0.0});
      for (int s = 0; s < 100; ++s)
        t.prescribed.seq[s] = {static_cast<double>(s) / 99.0, 0.0};
      break;
    }
  }
  return t;
}

inline MpmConfig make_mpm_config(const TaskSpec& task, double youngs = 1e4) {
  MpmConfig cfg;
  cfg.grid_res = task.grid_res;
  cfg.control_steps = task.control_steps;
  cfg.ground_y = kGroundY;
  cfg.act_stress_scale = 0.04 * youngs;
  return cfg;
}

// --------------------------------------------------------------------------
// Scene assembly.
// --------------------------------------------------------------------------

namespace taskdet {

inline void fill_box(SimScene& scene, Vec2 lo, Vec2 hi, double spacing, double mass,
                     double vol, double mu, double lam, bool glued, bool object) {
  const int nx = std::max(1, static_cast<int>(std::floor((hi.x - lo.x) / spacing)));
  const int ny = std::max(1, static_cast<int>(std::floor((hi.y - lo.y) / spacing)));
  const double sx = (hi.x - lo.x) / nx;
  const double sy = (hi.y - lo.y) / ny;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      scene.add_particle({lo.x + (i + 0.5) * sx, lo.y + (j + 0.5) * sy}, {0.0, 0.0}, mass, vol,
                         mu, lam, -1, {0.0, 0.0}, glued, object);
}

}  // namespace taskdet

inline SimScene make_scene(const TaskSpec& task, const RobotDesign& design) {
  SimScene scene;
  scene.colliders = task.colliders;
  scene.n_actuators = design.n_actuators;

  double mu = 0.0, lam = 0.0;
  lame_parameters(design.youngs_modulus, design.poisson_ratio, mu, lam);
  const double spacing = std::sqrt(design.particle_volume);
  const double mass = design.mass_density * design.particle_volume;

  // Vertical placement: rest the design on the supporting surface.
  Vec2 shift{0.0, 0.0};
  if (task.drop_to_surface) {
    double min_y = std::numeric_limits<double>::infinity();
    for (const Vec2& p : design.points) min_y = std::min(min_y, p.y);
    shift.y = (task.drop_surface_y + 0.5 * spacing) - min_y;
  }

  auto add_robot_particle = [&](Vec2 pos, int act_label) {
    const Vec2 fib = act_label >= 0 ? design.fiber[act_label] : Vec2{0.0, 0.0};
    scene.add_particle(pos, task.init_velocity, mass, design.particle_volume, mu, lam,
                       act_label, fib, false, false);
  };

  for (int i = 0; i < design.size(); ++i)
    add_robot_particle(design.points[i] + shift, design.actuator[i]);

  if (task.mirrored_gripper) {
    for (int i = 0; i < design.size(); ++i) {
      Vec2 p = design.points[i] + shift;
      p.x = 2.0 * task.mirror_axis_x - p.x;
      add_robot_particle(p, design.actuator[i]);
    }
  }

  if (task.glue.present)
    taskdet::fill_box(scene, task.glue.lo, task.glue.hi, spacing, mass,
                      design.particle_volume, mu, lam, true, false);

  if (task.object.present) {
    const Vec2 half = task.object.size * 0.5;
    taskdet::fill_box(scene, task.object.center - half, task.object.center + half, spacing,
                      mass, design.particle_volume, mu, lam, false, true);
  }
  return scene;
}

// --------------------------------------------------------------------------
// Metrics. All metrics are functions of particle-position frames and are
// invariant to particle relabeling within a role.
// --------------------------------------------------------------------------

namespace taskdet {

inline Vec2 role_centroid(const std::vector<Vec2>& frame, const SimScene& scene, bool object) {
  Vec2 acc{};
  int count = 0;
  for (int p = 0; p < scene.size(); ++p) {
    if (scene.glued[p]) continue;
    if (static_cast<bool>(scene.is_object[p]) != object) continue;
    acc += frame[p];
    ++count;
  }
  if (count == 0) throw std::runtime_error("role_centroid: no particles with requested role");
  return acc / count;
}

inline int role_count(const SimScene& scene, bool object) {
  int count = 0;
  for (int p = 0; p < scene.size(); ++p)
    if (!scene.glued[p] && static_cast<bool>(scene.is_object[p]) == object) ++count;
  return count;
}

inline std::vector<uint8_t> rasterize_robot(const std::vector<Vec2>& frame,
                                            const SimScene& scene, int res) {
  std::vector<uint8_t> occ(static_cast<size_t>(res) * res, 0);
  for (int p = 0; p < scene.size(); ++p) {
    if (scene.glued[p] || scene.is_object[p]) continue;
    const int ix = static_cast<int>(std::floor(frame[p].x * res));
    const int iy = static_cast<int>(std::floor(frame[p].y * res));
    if (ix < 0 || iy < 0 || ix >= res || iy >= res) continue;
    occ[static_cast<size_t>(iy) * res + ix] = 1;
  }
  return occ;
}

}  // namespace taskdet

// Intersection-over-union of the occupied grid cells in the first and last
// frames.
inline double metric_balancing(const RolloutResult& ro, const SimScene& scene, int grid_res) {
  if (ro.frames.size() < 2) throw std::invalid_argument("metric_balancing: need >= 2 frames");
  const auto first = taskdet::rasterize_robot(ro.frames.front(), scene, grid_res);
  const auto last = taskdet::rasterize_robot(ro.frames.back(), scene, grid_res);
  int inter = 0, uni = 0;
  for (size_t i = 0; i < first.size(); ++i) {
    inter += first[i] && last[i];
    uni += first[i] || last[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

inline double metric_landing(const RolloutResult& ro, const SimScene& scene, Vec2 target) {
  const Vec2 c = taskdet::role_centroid(ro.frames.back(), scene, false);
  return std::exp(-(c - target).norm());
}

// Absolute horizontal displacement of the robot centroid (crawling and
// hurdling share the distance-traveled form).
inline double metric_displacement(const RolloutResult& ro, const SimScene& scene) {
  const Vec2 c0 = taskdet::role_centroid(ro.frames.front(), scene, false);
  const Vec2 cH = taskdet::role_centroid(ro.frames.back(), scene, false);
  return std::abs(cH.x - c0.x);
}

// Signed vertical lift of the object.
inline double metric_gripping(const RolloutResult& ro, const SimScene& scene) {
  const Vec2 o0 = taskdet::role_centroid(ro.frames.front(), scene, true);
  const Vec2 oH = taskdet::role_centroid(ro.frames.back(), scene, true);
  return oH.y - o0.y;
}

// Signed leftward displacement of the box.
inline double metric_box(const RolloutResult& ro, const SimScene& scene) {
  const Vec2 o0 = taskdet::role_centroid(ro.frames.front(), scene, true);
  const Vec2 oH = taskdet::role_centroid(ro.frames.back(), scene, true);
  return -(oH.x - o0.x);
}

inline double task_metric(const TaskSpec& task, const RolloutResult& ro, const SimScene& scene) {
  if (ro.failed) return task.sentinel;
  switch (task.name) {
    case TaskName::kBalancing: return metric_balancing(ro, scene, task.grid_res);
    case TaskName::kLanding: return metric_landing(ro, scene, task.landing_target);
    case TaskName::kCrawling:
    case TaskName::kHurdling: return metric_displacement(ro, scene);
    case TaskName::kGripping: return metric_gripping(ro, scene);
    case TaskName::kBoxMoving: return metric_box(ro, scene);
  }
  return task.sentinel;
}

// --------------------------------------------------------------------------
// Differentiable loss: -performance, smooth everywhere the adjoint needs it.
// Balancing uses Gaussian-splatted soft occupancies with min/max IoU.
// --------------------------------------------------------------------------

namespace taskdet {

struct SoftOcc {
  std::vector<double> mass;  // splat sums per cell
  std::vector<double> occ;   // 1 - exp(-mass)
};

inline SoftOcc soft_occupancy(const std::vector<Vec2>& frame, const SimScene& scene, int res) {
  SoftOcc s;
  s.mass.assign(static_cast<size_t>(res) * res, 0.0);
  const double cell = 1.0 / res;
  const double h = cell;  // one-cell bandwidth
  const int reach = 3;
  for (int p = 0; p < scene.size(); ++p) {
    if (scene.glued[p] || scene.is_object[p]) continue;
    const int cx = static_cast<int>(std::floor(frame[p].x * res));
    const int cy = static_cast<int>(std::floor(frame[p].y * res));
    for (int y = std::max(0, cy - reach); y <= std::min(res - 1, cy + reach); ++y)
      for (int x = std::max(0, cx - reach); x <= std::min(res - 1, cx + reach); ++x) {
        const Vec2 cc{(x + 0.5) * cell, (y + 0.5) * cell};
        s.mass[static_cast<size_t>(y) * res + x] +=
            std::exp(-(cc - frame[p]).norm2() / (2.0 * h * h));
      }
  }
  s.occ.resize(s.mass.size());
  for (size_t i = 0; i < s.mass.size(); ++i) s.occ[i] = 1.0 - std::exp(-s.mass[i]);
  return s;
}

// d(soft occupancy IoU)/d(frame positions), accumulated into seeds.
inline void soft_occupancy_backward(const std::vector<Vec2>& frame, const SimScene& scene,
                                    int res, const SoftOcc& s, const std::vector<double>& d_occ,
                                    std::vector<Vec2>& d_frame) {
  const double cell = 1.0 / res;
  const double h = cell;
  const int reach = 3;
  for (int p = 0; p < scene.size(); ++p) {
    if (scene.glued[p] || scene.is_object[p]) continue;
    const int cx = static_cast<int>(std::floor(frame[p].x * res));
    const int cy = static_cast<int>(std::floor(frame[p].y * res));
    Vec2 acc{};
    for (int y = std::max(0, cy - reach); y <= std::min(res - 1, cy + reach); ++y)
      for (int x = std::max(0, cx - reach); x <= std::min(res - 1, cx + reach); ++x) {
        const size_t idx = static_cast<size_t>(y) * res + x;
        if (d_occ[idx] == 0.0) continue;
        const Vec2 cc{(x + 0.5) * cell, (y + 0.5) * cell};
        const double k = std::exp(-(cc - frame[p]).norm2() / (2.0 * h * h));
        // d occ / d mass = exp(-mass); d k / d pos = k (cc - pos)/h^2.
        const double d_mass = d_occ[idx] * std::exp(-s.mass[idx]);
        acc += (cc - frame[p]) * (d_mass * k / (h * h));
      }
    d_frame[p] += acc;
  }
}

inline double soft_iou(const SoftOcc& a, const SoftOcc& b, std::vector<double>* d_a,
                       std::vector<double>* d_b) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.occ.size(); ++i) {
    num += std::min(a.occ[i], b.occ[i]);
    den += std::max(a.occ[i], b.occ[i]);
  }
  const double iou = den > 0.0 ? num / den : 0.0;
  if (d_a && d_b && den > 0.0) {
    d_a->assign(a.occ.size(), 0.0);
    d_b->assign(a.occ.size(), 0.0);
    for (size_t i = 0; i < a.occ.size(); ++i) {
      const bool a_min = a.occ[i] <= b.occ[i];
      // d iou / d min-side = 1/den ; d iou / d max-side = -num/den^2.
      (*(a_min ? d_a : d_b))[i] += 1.0 / den;
      (*(a_min ? d_b : d_a))[i] += -num / (den * den);
    }
  }
  return iou;
}

}  // namespace taskdet

// Smooth scalar loss (lower is better) plus adjoint seeds for rollout_grad.
inline LossSeeds task_loss(const TaskSpec& task, const RolloutResult& ro,
                           const SimScene& scene) {
  if (ro.failed) throw std::runtime_error("task_loss: rollout failed");
  LossSeeds out;
  const int n = scene.size();
  const int last = static_cast<int>(ro.frames.size()) - 1;
  std::vector<Vec2> seed_first(n, Vec2{}), seed_last(n, Vec2{});

  switch (task.name) {
    case TaskName::kBalancing: {
      const auto occ0 = taskdet::soft_occupancy(ro.frames.front(), scene, task.grid_res);
      const auto occH = taskdet::soft_occupancy(ro.frames.back(), scene, task.grid_res);
      std::vector<double> d0, dH;
      const double iou = taskdet::soft_iou(occ0, occH, &d0, &dH);
      out.loss = -iou;
      for (double& v : d0) v = -v;
      for (double& v : dH) v = -v;
      taskdet::soft_occupancy_backward(ro.frames.front(), scene, task.grid_res, occ0, d0,
                                       seed_first);
      taskdet::soft_occupancy_backward(ro.frames.back(), scene, task.grid_res, occH, dH,
                                       seed_last);
      break;
    }
    case TaskName::kLanding: {
      const Vec2 c = taskdet::role_centroid(ro.frames.back(), scene, false);
      const Vec2 delta = c - task.landing_target;
      const double d = delta.norm();
      out.loss = -std::exp(-d);
      if (d > 1e-12) {
        const Vec2 d_c = delta * (std::exp(-d) / d);
        const int m = taskdet::role_count(scene, false);
        for (int p = 0; p < n; ++p)
          if (!scene.glued[p] && !scene.is_object[p]) seed_last[p] = d_c / m;
      }
      break;
    }
    case TaskName::kCrawling:
    case TaskName::kHurdling: {
      const double c0 = taskdet::role_centroid(ro.frames.front(), scene, false).x;
      const double cH = taskdet::role_centroid(ro.frames.back(), scene, false).x;
      const double sign = cH - c0 >= 0.0 ? 1.0 : -1.0;
      out.loss = -std::abs(cH - c0);
      const int m = taskdet::role_count(scene, false);
      for (int p = 0; p < n; ++p) {
        if (scene.glued[p] || scene.is_object[p]) continue;
        seed_last[p].x = -sign / m;
        seed_first[p].x = sign / m;
      }
      break;
    }
    case TaskName::kGripping: {
      const double o0 = taskdet::role_centroid(ro.frames.front(), scene, true).y;
      const double oH = taskdet::role_centroid(ro.frames.back(), scene, true).y;
      out.loss = -(oH - o0);
      const int m = taskdet::role_count(scene, true);
      for (int p = 0; p < n; ++p) {
        if (scene.glued[p] || !scene.is_object[p]) continue;
        seed_last[p].y = -1.0 / m;
        seed_first[p].y = 1.0 / m;
      }
      break;
    }
    case TaskName::kBoxMoving: {
      const double o0 = taskdet::role_centroid(ro.frames.front(), scene, true).x;
      const double oH = taskdet::role_centroid(ro.frames.back(), scene, true).x;
      out.loss = oH - o0;  // -metric, metric = -(dx)
      const int m = taskdet::role_count(scene, true);
      for (int p = 0; p < n; ++p) {
        if (scene.glued[p] || !scene.is_object[p]) continue;
        seed_last[p].x = 1.0 / m;
        seed_first[p].x = -1.0 / m;
      }
      break;
    }
  }
  out.frame_seeds.push_back({0, std::move(seed_first)});
  out.frame_seeds.push_back({last, std::move(seed_last)});
  return out;
}

inline LossFn make_task_loss(const TaskSpec& task) {
  return [task](const RolloutResult& ro, const SimScene& scene) {
    return task_loss(task, ro, scene);
  };
}

}  // namespace mfg
