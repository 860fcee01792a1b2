// Differentiable 2D Material Point Method simulator.
//
// Explicit MLS-MPM on a unit-square grid: quadratic B-spline transfers,
// fixed-corotated elasticity, APIC affine velocities, anisotropic muscle
// fiber actuation, Coulomb-friction grid boundaries, and a full-storage
// reverse-mode adjoint over the whole rollout.
//
// Everything is deliberately sequential inside one rollout (fixed scatter
// order) so results are bit-reproducible; parallelism belongs at the level
// of independent rollouts.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfg/core.hpp"

namespace mfg {

struct MpmConfig {
  int grid_res = 64;
  double dt = 1e-4;
  int substeps_per_control = 17;
  int control_steps = 100;
  Vec2 gravity{0.0, -9.8};
  double ground_y = 3.0 / 64.0;
  double ground_friction = 0.4;
  double act_stress_scale = 400.0;  // first-Piola scale of full actuation
  int boundary_pad = 3;

  double dx() const { return 1.0 / grid_res; }
  double control_dt() const { return dt * substeps_per_control; }
  int total_substeps() const { return control_steps * substeps_per_control; }

  // Explicit integration needs dt below half a cell per elastic wave speed.
  void validate(double max_youngs, double min_density) const {
    const double wave = std::sqrt(max_youngs / min_density);
    if (!(dt <= 0.5 * dx() / wave))
      throw std::invalid_argument("mpm config: dt violates the CFL bound");
    if (grid_res < 4 * boundary_pad)
      throw std::invalid_argument("mpm config: grid too small for boundary pad");
  }
};

struct ColliderBox {
  Vec2 lo, hi;
  double friction = 0.4;
  bool sticky = false;

  bool contains(const Vec2& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
};

// Static per-particle data plus environment; the dynamic state is MpmState.
struct SimScene {
  std::vector<Vec2> x0, v0;
  std::vector<double> mass, volume, mu, lam;
  std::vector<int> actuator;  // control channel, -1 = passive
  std::vector<Vec2> fiber;
  std::vector<uint8_t> glued;
  std::vector<uint8_t> is_object;
  std::vector<double> occupancy;  // density scale, 1 everywhere outside baselines
  int n_actuators = 0;
  std::vector<ColliderBox> colliders;

  int size() const { return static_cast<int>(x0.size()); }

  void add_particle(Vec2 x, Vec2 v, double m, double vol, double mu_, double lam_, int act,
                    Vec2 fib, bool glue, bool object) {
    x0.push_back(x);
    v0.push_back(v);
    mass.push_back(m);
    volume.push_back(vol);
    mu.push_back(mu_);
    lam.push_back(lam_);
    actuator.push_back(act);
    fiber.push_back(fib);
    glued.push_back(glue ? 1 : 0);
    is_object.push_back(object ? 1 : 0);
    occupancy.push_back(1.0);
  }
};

inline void lame_parameters(double youngs, double poisson, double& mu, double& lam) {
  mu = youngs / (2.0 * (1.0 + poisson));
  lam = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
}

// --------------------------------------------------------------------------
// Controllers: open-loop actuation per control step, clamped to [-1, 1].
// --------------------------------------------------------------------------

struct SineWave {
  double amplitude = 0.0, frequency = 0.0, phase = 0.0, bias = 0.0;
};

struct ControllerParams {
  enum class Kind { kNone, kSine, kSequence };
  Kind kind = Kind::kNone;
  std::vector<SineWave> sine;            // per channel
  std::vector<std::vector<double>> seq;  // [control_steps][channels]

  int channels() const {
    if (kind == Kind::kSine) return static_cast<int>(sine.size());
    if (kind == Kind::kSequence) return seq.empty() ? 0 : static_cast<int>(seq[0].size());
    return 0;
  }

  size_t param_count() const {
    if (kind == Kind::kSine) return sine.size() * 4;
    if (kind == Kind::kSequence) return seq.empty() ? 0 : seq.size() * seq[0].size();
    return 0;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    if (kind == Kind::kSine) {
      for (const SineWave& s : sine) {
        out.push_back(s.amplitude);
        out.push_back(s.frequency);
        out.push_back(s.phase);
        out.push_back(s.bias);
      }
    } else if (kind == Kind::kSequence) {
      for (const auto& row : seq)
        for (double v : row) out.push_back(v);
    }
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    if (flat.size() != param_count())
      throw std::invalid_argument("controller: flat parameter size mismatch");
    size_t at = 0;
    if (kind == Kind::kSine) {
      for (SineWave& s : sine) {
        s.amplitude = flat[at++];
        s.frequency = flat[at++];
        s.phase = flat[at++];
        s.bias = flat[at++];
      }
    } else if (kind == Kind::kSequence) {
      for (auto& row : seq)
        for (double& v : row) v = flat[at++];
    }
  }
};

inline std::vector<double> controller_eval(const ControllerParams& cp, int step,
                                           double control_dt) {
  std::vector<double> a(cp.channels(), 0.0);
  if (cp.kind == ControllerParams::Kind::kSine) {
    for (size_t i = 0; i < cp.sine.size(); ++i) {
      const SineWave& s = cp.sine[i];
      const double theta = 2.0 * M_PI * s.frequency * step * control_dt + s.phase;
      a[i] = clamp(s.bias + s.amplitude * std::sin(theta), -1.0, 1.0);
    }
  } else if (cp.kind == ControllerParams::Kind::kSequence) {
    if (step < 0 || step >= static_cast<int>(cp.seq.size()))
      throw std::out_of_range("controller_eval: step out of range");
    for (size_t i = 0; i < cp.seq[step].size(); ++i)
      a[i] = clamp(cp.seq[step][i], -1.0, 1.0);
  }
  return a;
}

// Accumulates d(loss)/d(controller params) given d(loss)/d(actuation) at one
// control step. The clamp passes no gradient where it saturates.
inline void controller_eval_backward(const ControllerParams& cp, int step, double control_dt,
                                     const std::vector<double>& d_act,
                                     std::vector<double>& d_flat) {
  if (cp.kind == ControllerParams::Kind::kSine) {
    for (size_t i = 0; i < cp.sine.size(); ++i) {
      const SineWave& s = cp.sine[i];
      const double tt = step * control_dt;
      const double theta = 2.0 * M_PI * s.frequency * tt + s.phase;
      const double raw = s.bias + s.amplitude * std::sin(theta);
      if (raw <= -1.0 || raw >= 1.0) continue;
      const double d = d_act[i];
      d_flat[4 * i + 0] += d * std::sin(theta);
      d_flat[4 * i + 1] += d * s.amplitude * std::cos(theta) * 2.0 * M_PI * tt;
      d_flat[4 * i + 2] += d * s.amplitude * std::cos(theta);
      d_flat[4 * i + 3] += d;
    }
  } else if (cp.kind == ControllerParams::Kind::kSequence) {
    const size_t ch = cp.seq[step].size();
    for (size_t i = 0; i < ch; ++i) {
      const double raw = cp.seq[step][i];
      if (raw <= -1.0 || raw >= 1.0) continue;
      d_flat[step * ch + i] += d_act[i];
    }
  }
}

// --------------------------------------------------------------------------
// Dynamic state.
// --------------------------------------------------------------------------

struct MpmState {
  std::vector<Vec2> x, v;
  std::vector<Mat2> F, C;

  static MpmState initial(const SimScene& scene) {
    MpmState s;
    s.x = scene.x0;
    s.v = scene.v0;
    s.F.assign(scene.x0.size(), Mat2::identity());
    s.C.assign(scene.x0.size(), Mat2::zero());
    return s;
  }
};

namespace mpmdet {

struct Weights {
  int bx = 0, by = 0;   // base cell index
  double wx[3], wy[3];  // spline weights per axis
  double dwx[3], dwy[3];
};

inline Weights spline_weights(const Vec2& p, double inv_dx) {
  Weights w;
  const double gx = p.x * inv_dx;
  const double gy = p.y * inv_dx;
  w.bx = static_cast<int>(std::floor(gx - 0.5));
  w.by = static_cast<int>(std::floor(gy - 0.5));
  const double fx = gx - w.bx;
  const double fy = gy - w.by;
  w.wx[0] = 0.5 * (1.5 - fx) * (1.5 - fx);
  w.wx[1] = 0.75 - (fx - 1.0) * (fx - 1.0);
  w.wx[2] = 0.5 * (fx - 0.5) * (fx - 0.5);
  w.wy[0] = 0.5 * (1.5 - fy) * (1.5 - fy);
  w.wy[1] = 0.75 - (fy - 1.0) * (fy - 1.0);
  w.wy[2] = 0.5 * (fy - 0.5) * (fy - 0.5);
  // d(weight)/d(f); multiply by inv_dx for d/d(position).
  w.dwx[0] = -(1.5 - fx);
  w.dwx[1] = -2.0 * (fx - 1.0);
  w.dwx[2] = fx - 0.5;
  w.dwy[0] = -(1.5 - fy);
  w.dwy[1] = -2.0 * (fy - 1.0);
  w.dwy[2] = fy - 0.5;
  return w;
}

// 2D polar rotation factor of F.
inline Mat2 polar_rotation(const Mat2& f) {
  const double a0 = f.a + f.d;
  const double a1 = f.c - f.b;
  const double r = std::sqrt(a0 * a0 + a1 * a1);
  if (r < 1e-300) return Mat2::identity();
  const double c = a0 / r, s = a1 / r;
  return {c, -s, s, c};
}

inline Mat2 polar_rotation_backward(const Mat2& f, const Mat2& d_r) {
  const double a0 = f.a + f.d;
  const double a1 = f.c - f.b;
  const double r = std::sqrt(a0 * a0 + a1 * a1);
  if (r < 1e-300) return Mat2::zero();
  const double dc = d_r.a + d_r.d;
  const double ds = d_r.c - d_r.b;
  const double r3 = r * r * r;
  const double da0 = a1 * (dc * a1 - ds * a0) / r3;
  const double da1 = a0 * (ds * a0 - dc * a1) / r3;
  return {da0, -da1, da1, da0};
}

// First Piola-Kirchhoff stress: fixed corotated elasticity plus muscle fiber
// actuation a * s_act * F (f f^T).
inline Mat2 piola_stress(const Mat2& f, double mu, double lam, double act, double act_scale,
                         const Vec2& fiber) {
  const Mat2 r = polar_rotation(f);
  const double j = f.det();
  Mat2 p = (f - r) * (2.0 * mu) + f.cofactor() * (lam * (j - 1.0));
  if (act != 0.0) {
    const Mat2 mf = Mat2::outer(fiber, fiber);
    p += (f * mf) * (act * act_scale);
  }
  return p;
}

// Reverse of piola_stress; returns d/dF and accumulates d/d(actuation).
inline Mat2 piola_stress_backward(const Mat2& f, double mu, double lam, double act,
                                  double act_scale, const Vec2& fiber, const Mat2& d_p,
                                  double* d_act) {
  Mat2 d_f = d_p * (2.0 * mu);
  d_f += polar_rotation_backward(f, d_p * (-2.0 * mu));
  const double j = f.det();
  const Mat2 cof = f.cofactor();
  const double d_j = lam * d_p.frob_inner(cof);
  d_f += cof * d_j;
  const Mat2 d_cof = d_p * (lam * (j - 1.0));
  d_f += Mat2{d_cof.d, -d_cof.c, -d_cof.b, d_cof.a};
  const Mat2 mf = Mat2::outer(fiber, fiber);
  if (d_act) *d_act += act_scale * d_p.frob_inner(f * mf);
  d_f += (d_p * mf) * (act * act_scale);  // f f^T is symmetric
  return d_f;
}

// Coulomb friction projection of a grid velocity against outward normal n.
inline Vec2 project_friction(const Vec2& v, const Vec2& n, double mu_f) {
  const double vn = v.dot(n);
  if (vn >= 0.0) return v;
  const Vec2 vt = v - n * vn;
  const double s = vt.norm();
  if (s <= mu_f * (-vn) || s < 1e-300) return {0.0, 0.0};
  return vt * (1.0 + mu_f * vn / s);
}

inline Vec2 project_friction_backward(const Vec2& v, const Vec2& n, double mu_f,
                                      const Vec2& d_out) {
  const double vn = v.dot(n);
  if (vn >= 0.0) return d_out;
  const Vec2 vt = v - n * vn;
  const double s = vt.norm();
  if (s <= mu_f * (-vn) || s < 1e-300) return {0.0, 0.0};
  const double f = 1.0 + mu_f * vn / s;
  const double q = d_out.dot(vt);  // adjoint of f
  const Vec2 d_vt = d_out * f + vt * (q * (-mu_f * vn) / (s * s * s));
  const double d_vn = q * mu_f / s;
  Vec2 d_v = d_vt - n * n.dot(d_vt);
  d_v += n * d_vn;
  return d_v;
}

}  // namespace mpmdet

// --------------------------------------------------------------------------
// Rollout products.
// --------------------------------------------------------------------------

struct RolloutResult {
  std::vector<std::vector<Vec2>> frames;     // control_steps + 1 position snapshots
  std::vector<std::vector<double>> actions;  // actuation per control step
  bool failed = false;
  int failed_step = -1;
  bool inverted_elements = false;  // any det(F) <= 0 seen at a control step
  bool collider_contact = false;   // any particle entered a collider box
};

// Loss interface for the adjoint: a scalar plus position-gradient seeds on
// selected frames (frame index -> d loss / d positions of that frame).
struct LossSeeds {
  double loss = 0.0;
  std::vector<std::pair<int, std::vector<Vec2>>> frame_seeds;
};
using LossFn = std::function<LossSeeds(const RolloutResult&, const SimScene&)>;

struct AdjointResult {
  bool ok = false;
  double loss = 0.0;
  std::vector<Vec2> d_x0;
  std::vector<double> d_controller;
  std::vector<double> d_occupancy;
  RolloutResult rollout;
};

// --------------------------------------------------------------------------
// Solver.
// --------------------------------------------------------------------------

class MpmSolver {
 public:
  MpmSolver(const SimScene& scene, const MpmConfig& cfg)
      : scene_(&scene), cfg_(cfg), state_(MpmState::initial(scene)) {
    const int cells = cfg.grid_res * cfg.grid_res;
    gm_.assign(cells, 0.0);
    gmom_.assign(cells, Vec2{});
    gv_.assign(cells, Vec2{});
  }

  const MpmState& state() const { return state_; }
  MpmState& state() { return state_; }
  const MpmConfig& config() const { return cfg_; }
  bool blown_up() const { return blown_up_; }

  void reset() {
    state_ = MpmState::initial(*scene_);
    blown_up_ = false;
  }

  // Individual phases are public so tests can probe invariants between them.
  void p2g(const std::vector<double>& act) { p2g_into(state_, act); }

  void grid_update() {
    const int res = cfg_.grid_res;
    for (int iy = 0; iy < res; ++iy)
      for (int ix = 0; ix < res; ++ix) {
        const int node = iy * res + ix;
        gv_[node] = gm_[node] > 0.0 ? node_chain(ix, iy, gmom_[node] / gm_[node]) : Vec2{};
      }
  }

  void g2p() { g2p_into(state_); }

  void substep(const std::vector<double>& act) {
    p2g(act);
    grid_update();
    g2p();
  }

  const std::vector<double>& grid_mass() const { return gm_; }
  const std::vector<Vec2>& grid_momentum() const { return gmom_; }
  const std::vector<Vec2>& grid_velocity() const { return gv_; }

  RolloutResult rollout(const ControllerParams& cp) {
    reset();
    RolloutResult out;
    out.frames.reserve(cfg_.control_steps + 1);
    out.frames.push_back(state_.x);
    for (int step = 0; step < cfg_.control_steps; ++step) {
      const std::vector<double> act = controller_eval(cp, step, cfg_.control_dt());
      for (int s = 0; s < cfg_.substeps_per_control; ++s) substep(act);
      out.actions.push_back(act);
      if (!healthy(out)) {
        out.failed = true;
        out.failed_step = step;
        return out;
      }
      note_diagnostics(out);
      out.frames.push_back(state_.x);
    }
    return out;
  }

  // Full-storage adjoint over the rollout. Gradients are taken with respect
  // to initial particle positions, controller parameters, and per-particle
  // occupancy scales.
  AdjointResult rollout_grad(const ControllerParams& cp, const LossFn& loss_fn) {
    const int n = scene_->size();
    const int total = cfg_.total_substeps();
    const double storage_gb =
        static_cast<double>(total + 1) * n * sizeof(double) * 12.0 / 1e9;
    if (storage_gb > 6.0)
      throw std::runtime_error("rollout_grad: trajectory storage exceeds budget");

    AdjointResult out;
    out.d_x0.assign(n, Vec2{});
    out.d_controller.assign(cp.param_count(), 0.0);
    out.d_occupancy.assign(n, 0.0);

    // Forward pass, storing the state before every substep.
    std::vector<MpmState> states;
    states.reserve(total + 1);
    reset();
    states.push_back(state_);
    out.rollout.frames.push_back(state_.x);
    for (int step = 0; step < cfg_.control_steps; ++step) {
      const std::vector<double> act = controller_eval(cp, step, cfg_.control_dt());
      for (int s = 0; s < cfg_.substeps_per_control; ++s) {
        substep(act);
        states.push_back(state_);
      }
      out.rollout.actions.push_back(act);
      if (!healthy(out.rollout)) {
        out.rollout.failed = true;
        out.rollout.failed_step = step;
        return out;  // ok stays false; caller treats as no-gradient
      }
      out.rollout.frames.push_back(state_.x);
    }

    const LossSeeds seeds = loss_fn(out.rollout, *scene_);
    out.loss = seeds.loss;

    Adjoint adj;
    adj.x.assign(n, Vec2{});
    adj.v.assign(n, Vec2{});
    adj.F.assign(n, Mat2::zero());
    adj.C.assign(n, Mat2::zero());
    auto inject = [&](int frame) {
      for (const auto& [f, seed] : seeds.frame_seeds) {
        if (f != frame) continue;
        if (static_cast<int>(seed.size()) != n)
          throw std::invalid_argument("loss seeds: wrong particle count");
        for (int p = 0; p < n; ++p) adj.x[p] += seed[p];
      }
    };

    std::vector<std::vector<double>> d_act(cfg_.control_steps);
    inject(cfg_.control_steps);
    for (int s = total - 1; s >= 0; --s) {
      const int step = s / cfg_.substeps_per_control;
      if (d_act[step].empty()) d_act[step].assign(out.rollout.actions[step].size(), 0.0);
      backward_substep(states[s], states[s + 1], out.rollout.actions[step], adj, d_act[step],
                       out.d_occupancy);
      if (s % cfg_.substeps_per_control == 0) inject(s / cfg_.substeps_per_control);
    }

    for (int step = 0; step < cfg_.control_steps; ++step)
      if (!d_act[step].empty())
        controller_eval_backward(cp, step, cfg_.control_dt(), d_act[step], out.d_controller);

    out.d_x0 = adj.x;  // seeds at frame 0 plus dynamics flow
    out.ok = true;
    return out;
  }

 private:
  struct Adjoint {
    std::vector<Vec2> x, v;
    std::vector<Mat2> F, C;
  };

  void note_diagnostics(RolloutResult& out) const {
    const double pad = cfg_.dx();
    for (int p = 0; p < scene_->size(); ++p) {
      if (out.inverted_elements && out.collider_contact) return;
      if (state_.F[p].det() <= 0.0) out.inverted_elements = true;
      for (const ColliderBox& box : scene_->colliders) {
        const Vec2& q = state_.x[p];
        if (q.x >= box.lo.x - pad && q.x <= box.hi.x + pad && q.y >= box.lo.y - pad &&
            q.y <= box.hi.y + pad)
          out.collider_contact = true;
      }
    }
  }

  bool stencil_in_bounds(const mpmdet::Weights& w) const {
    return w.bx >= 0 && w.by >= 0 && w.bx <= cfg_.grid_res - 3 && w.by <= cfg_.grid_res - 3;
  }

  bool healthy(const RolloutResult&) const {
    if (blown_up_) return false;
    const double margin = (cfg_.boundary_pad - 1) * cfg_.dx();
    for (int p = 0; p < scene_->size(); ++p) {
      const Vec2& q = state_.x[p];
      if (!q.finite() || !state_.v[p].finite() || !state_.F[p].finite()) return false;
      if (q.x < margin || q.x > 1.0 - margin || q.y < margin || q.y > 1.0 - margin)
        return false;
    }
    return true;
  }

  Vec2 node_pos(int ix, int iy) const { return {ix * cfg_.dx(), iy * cfg_.dx()}; }

  void p2g_into(const MpmState& st, const std::vector<double>& act) {
    const int res = cfg_.grid_res;
    const double dx = cfg_.dx();
    const double inv_dx = res;
    std::fill(gm_.begin(), gm_.end(), 0.0);
    std::fill(gmom_.begin(), gmom_.end(), Vec2{});
    const double stress_coef = -4.0 * cfg_.dt * inv_dx * inv_dx;
    for (int p = 0; p < scene_->size(); ++p) {
      const auto w = mpmdet::spline_weights(st.x[p], inv_dx);
      if (!stencil_in_bounds(w)) {
        blown_up_ = true;
        continue;
      }
      const int ch = scene_->actuator[p];
      const double a = ch >= 0 ? act[ch] : 0.0;
      const Mat2 piola = mpmdet::piola_stress(st.F[p], scene_->mu[p], scene_->lam[p], a,
                                              cfg_.act_stress_scale, scene_->fiber[p]);
      const double occ = scene_->occupancy[p];
      const double m_eff = occ * scene_->mass[p];
      const Mat2 affine = piola * st.F[p].transposed() *
                              (stress_coef * scene_->volume[p] * occ) +
                          st.C[p] * m_eff;
      const Vec2 mv = st.v[p] * m_eff;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          const int node = (w.by + j) * res + (w.bx + i);
          const double wij = w.wx[i] * w.wy[j];
          const Vec2 dpos{(w.bx + i) * dx - st.x[p].x,
                          (w.by + j) * dx - st.x[p].y};
          gm_[node] += wij * m_eff;
          gmom_[node] += (mv + affine * dpos) * wij;
        }
      }
    }
  }

  void g2p_into(MpmState& st) {
    const int res = cfg_.grid_res;
    const double dx = cfg_.dx();
    const double inv_dx = res;
    const double dt = cfg_.dt;
    for (int p = 0; p < scene_->size(); ++p) {
      if (scene_->glued[p]) {
        st.v[p] = {0.0, 0.0};
        st.C[p] = Mat2::zero();
        continue;
      }
      const auto w = mpmdet::spline_weights(st.x[p], inv_dx);
      if (!stencil_in_bounds(w)) {
        blown_up_ = true;
        continue;
      }
      Vec2 new_v{};
      Mat2 b = Mat2::zero();
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          const int node = (w.by + j) * res + (w.bx + i);
          const double wij = w.wx[i] * w.wy[j];
          const Vec2 dpos{(w.bx + i) * dx - st.x[p].x,
                          (w.by + j) * dx - st.x[p].y};
          new_v += gv_[node] * wij;
          b += Mat2::outer(gv_[node], dpos) * wij;
        }
      }
      const Mat2 new_c = b * (4.0 * inv_dx * inv_dx);
      st.v[p] = new_v;
      st.x[p] += new_v * dt;
      st.F[p] = (Mat2::identity() + new_c * dt) * st.F[p];
      st.C[p] = new_c;
    }
  }

  // Gravity then boundary projections, fixed order per node.
  Vec2 node_chain(int ix, int iy, Vec2 v) const {
    const int res = cfg_.grid_res;
    v += cfg_.gravity * cfg_.dt;
    const Vec2 np = node_pos(ix, iy);
    for (const ColliderBox& box : scene_->colliders) {
      if (!box.contains(np)) continue;
      if (box.sticky)
        v = {0.0, 0.0};
      else
        v = mpmdet::project_friction(v, collider_normal(box, np), box.friction);
    }
    if (np.y <= cfg_.ground_y)
      v = mpmdet::project_friction(v, {0.0, 1.0}, cfg_.ground_friction);
    if (ix < cfg_.boundary_pad || ix >= res - cfg_.boundary_pad ||
        iy >= res - cfg_.boundary_pad)
      v = {0.0, 0.0};
    return v;
  }

  // Reverse of node_chain; replays the forward sequence to recover branch
  // inputs, then walks the projections backwards.
  Vec2 node_chain_backward(int ix, int iy, Vec2 v_in_post_gravity_input, Vec2 d_out) const {
    const int res = cfg_.grid_res;
    const Vec2 np = node_pos(ix, iy);
    // Forward replay recording the input of every projection stage.
    std::vector<Vec2> stage_in;
    std::vector<int> stage_kind;  // collider index, -2 ground, -3 walls
    Vec2 v = v_in_post_gravity_input;
    for (size_t b = 0; b < scene_->colliders.size(); ++b) {
      const ColliderBox& box = scene_->colliders[b];
      if (!box.contains(np)) continue;
      stage_in.push_back(v);
      stage_kind.push_back(static_cast<int>(b));
      v = box.sticky ? Vec2{0.0, 0.0}
                     : mpmdet::project_friction(v, collider_normal(box, np), box.friction);
    }
    if (np.y <= cfg_.ground_y) {
      stage_in.push_back(v);
      stage_kind.push_back(-2);
      v = mpmdet::project_friction(v, {0.0, 1.0}, cfg_.ground_friction);
    }
    if (ix < cfg_.boundary_pad || ix >= res - cfg_.boundary_pad ||
        iy >= res - cfg_.boundary_pad) {
      stage_in.push_back(v);
      stage_kind.push_back(-3);
    }

    Vec2 d = d_out;
    for (int k = static_cast<int>(stage_in.size()) - 1; k >= 0; --k) {
      if (stage_kind[k] == -3) {
        d = {0.0, 0.0};
      } else if (stage_kind[k] == -2) {
        d = mpmdet::project_friction_backward(stage_in[k], {0.0, 1.0}, cfg_.ground_friction, d);
      } else {
        const ColliderBox& box = scene_->colliders[stage_kind[k]];
        d = box.sticky ? Vec2{0.0, 0.0}
                       : mpmdet::project_friction_backward(stage_in[k],
                                                           collider_normal(box, np),
                                                           box.friction, d);
      }
    }
    return d;  // gravity shift has identity adjoint
  }

  static Vec2 collider_normal(const ColliderBox& box, const Vec2& np) {
    const double dl = np.x - box.lo.x;
    const double dr = box.hi.x - np.x;
    const double db = np.y - box.lo.y;
    const double dt = box.hi.y - np.y;
    const double m = std::min(std::min(dl, dr), std::min(db, dt));
    if (m == dt) return {0.0, 1.0};
    if (m == db) return {0.0, -1.0};
    if (m == dl) return {-1.0, 0.0};
    return {1.0, 0.0};
  }

  // One reverse substep: consumes the adjoint of the output state in `adj`
  // and replaces it with the adjoint of the input state, accumulating
  // actuation and occupancy gradients along the way.
  void backward_substep(const MpmState& in, const MpmState& out,
                        const std::vector<double>& act, Adjoint& adj,
                        std::vector<double>& d_act, std::vector<double>& d_occ) {
    const int res = cfg_.grid_res;
    const double dx = cfg_.dx();
    const double inv_dx = res;
    const double dt = cfg_.dt;
    const int n = scene_->size();
    const double stress_coef = -4.0 * cfg_.dt * inv_dx * inv_dx;

    // Replay the forward grid for this substep.
    p2g_into(in, act);
    const int cells = res * res;
    std::vector<Vec2> v0(cells);  // velocity right after momentum normalization
    for (int iy = 0; iy < res; ++iy)
      for (int ix = 0; ix < res; ++ix) {
        const int node = iy * res + ix;
        if (gm_[node] > 0.0) {
          v0[node] = gmom_[node] / gm_[node];
          gv_[node] = node_chain(ix, iy, v0[node]);
        } else {
          v0[node] = {0.0, 0.0};
          gv_[node] = {0.0, 0.0};
        }
      }

    std::vector<Vec2> d_gv(cells, Vec2{});
    Adjoint next;
    next.x.assign(n, Vec2{});
    next.v.assign(n, Vec2{});
    next.F.assign(n, Mat2::zero());
    next.C.assign(n, Mat2::zero());

    // ---- G2P adjoint ----
    for (int p = 0; p < n; ++p) {
      if (scene_->glued[p]) {
        next.x[p] += adj.x[p];
        next.F[p] += adj.F[p];
        continue;
      }
      const auto w = mpmdet::spline_weights(in.x[p], inv_dx);
      if (!stencil_in_bounds(w)) continue;
      const Vec2 d_new_v = adj.v[p] + adj.x[p] * dt;
      next.x[p] += adj.x[p];

      // F' = (I + dt C') F ; C' is out.C[p].
      const Mat2 g_mat = Mat2::identity() + out.C[p] * dt;
      const Mat2 d_gmat = adj.F[p] * in.F[p].transposed();
      next.F[p] += g_mat.transposed() * adj.F[p];
      const Mat2 d_new_c = adj.C[p] + d_gmat * dt;
      const Mat2 d_b = d_new_c * (4.0 * inv_dx * inv_dx);

      Vec2 d_x_acc{};
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          const int node = (w.by + j) * res + (w.bx + i);
          const double wij = w.wx[i] * w.wy[j];
          const Vec2 dpos{(w.bx + i) * dx - in.x[p].x,
                          (w.by + j) * dx - in.x[p].y};
          const Vec2 gvn = gv_[node];
          d_gv[node] += d_new_v * wij + (d_b * dpos) * wij;
          const double adj_w = gvn.dot(d_new_v) + gvn.dot(d_b * dpos);
          const Vec2 d_dpos = (d_b.transposed() * gvn) * wij;
          d_x_acc -= d_dpos;
          const Vec2 grad_w{w.dwx[i] * w.wy[j] * inv_dx, w.wx[i] * w.dwy[j] * inv_dx};
          d_x_acc += grad_w * adj_w;
        }
      }
      next.x[p] += d_x_acc;
    }

    // ---- grid adjoint ----
    std::vector<Vec2> d_gmom(cells, Vec2{});
    std::vector<double> d_gm(cells, 0.0);
    for (int iy = 0; iy < res; ++iy)
      for (int ix = 0; ix < res; ++ix) {
        const int node = iy * res + ix;
        if (gm_[node] <= 0.0) continue;
        const Vec2 d = d_gv[node];
        if (d.x == 0.0 && d.y == 0.0) continue;
        const Vec2 d_v1 = node_chain_backward(ix, iy, v0[node] + cfg_.gravity * dt, d);
        d_gmom[node] = d_v1 / gm_[node];
        d_gm[node] = -d_v1.dot(v0[node]) / gm_[node];
      }

    // ---- P2G adjoint ----
    for (int p = 0; p < n; ++p) {
      const auto w = mpmdet::spline_weights(in.x[p], inv_dx);
      if (!stencil_in_bounds(w)) continue;
      const int ch = scene_->actuator[p];
      const double a = ch >= 0 ? act[ch] : 0.0;
      const Mat2 piola = mpmdet::piola_stress(in.F[p], scene_->mu[p], scene_->lam[p], a,
                                              cfg_.act_stress_scale, scene_->fiber[p]);
      const double occ = scene_->occupancy[p];
      const double m_eff = occ * scene_->mass[p];
      const double k_stress = stress_coef * scene_->volume[p] * occ;
      const Mat2 s_mat = piola * in.F[p].transposed();
      const Mat2 affine = s_mat * k_stress + in.C[p] * m_eff;
      const Vec2 vp = in.v[p];

      Mat2 d_affine = Mat2::zero();
      Vec2 d_v_acc{};
      Vec2 d_x_acc{};
      double d_meff = 0.0;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          const int node = (w.by + j) * res + (w.bx + i);
          const double wij = w.wx[i] * w.wy[j];
          const Vec2 dpos{(w.bx + i) * dx - in.x[p].x,
                          (w.by + j) * dx - in.x[p].y};
          const Vec2 dmv = d_gmom[node];
          const double dm = d_gm[node];
          d_v_acc += dmv * (wij * m_eff);
          d_affine += Mat2::outer(dmv, dpos) * wij;
          const double adj_w =
              m_eff * dmv.dot(vp) + dmv.dot(affine * dpos) + m_eff * dm;
          const Vec2 d_dpos = (affine.transposed() * dmv) * wij;
          d_x_acc -= d_dpos;
          const Vec2 grad_w{w.dwx[i] * w.wy[j] * inv_dx, w.wx[i] * w.dwy[j] * inv_dx};
          d_x_acc += grad_w * adj_w;
          d_meff += wij * (dmv.dot(vp) + dm);
        }
      }
      next.v[p] += d_v_acc;
      next.x[p] += d_x_acc;
      next.C[p] += d_affine * m_eff;

      const Mat2 d_s = d_affine * k_stress;
      const Mat2 d_piola = d_s * in.F[p];
      Mat2 d_f = d_s.transposed() * piola;
      double* d_act_slot = ch >= 0 ? &d_act[ch] : nullptr;
      d_f += mpmdet::piola_stress_backward(in.F[p], scene_->mu[p], scene_->lam[p], a,
                                           cfg_.act_stress_scale, scene_->fiber[p], d_piola,
                                           d_act_slot);
      next.F[p] += d_f;

      // occupancy scales the effective mass and the stress volume together
      d_occ[p] += scene_->mass[p] * d_meff +
                  scene_->mass[p] * d_affine.frob_inner(in.C[p]) +
                  stress_coef * scene_->volume[p] * d_affine.frob_inner(s_mat);
    }

    adj = std::move(next);
  }

  const SimScene* scene_;
  MpmConfig cfg_;
  MpmState state_;
  bool blown_up_ = false;
  std::vector<double> gm_;
  std::vector<Vec2> gmom_;
  std::vector<Vec2> gv_;
};

}  // namespace mfg
