// Physics-augmented generation: online embedding optimization over a
// performance-filtered sample buffer, MCMC-style co-design updates woven
// into reverse diffusion, score composition across embeddings, and the
// voxel/particle co-optimization baselines.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfg/core.hpp"
#include "mfg/diffusion.hpp"
#include "mfg/mpm.hpp"
#include "mfg/robotize.hpp"
#include "mfg/tasks.hpp"

namespace mfg {

// --------------------------------------------------------------------------
// Shared evaluation path: clean sample -> robot -> prescribed controller ->
// rollout -> task performance. Robotizing failures map to the task sentinel.
// --------------------------------------------------------------------------

inline RobotizeConfig robotize_config_for(const TaskSpec& task) {
  RobotizeConfig cfg;
  cfg.solidify.grid_res = task.solidify_res;
  cfg.actuators = task.actuators;
  cfg.cluster_seed = 0;
  return cfg;
}

struct EvalResult {
  double performance = 0.0;
  bool degenerate = false;
  RolloutResult rollout;
};

inline EvalResult evaluate_design(const RobotDesign& design, const TaskSpec& task,
                                  const ControllerParams& controller) {
  EvalResult out;
  const SimScene scene = make_scene(task, design);
  const MpmConfig cfg = make_mpm_config(task, design.youngs_modulus);
  cfg.validate(design.youngs_modulus, design.mass_density);
  MpmSolver solver(scene, cfg);
  out.rollout = solver.rollout(controller);
  out.performance = task_metric(task, out.rollout, scene);
  return out;
}

inline EvalResult evaluate(const PointSet& x0, const TaskSpec& task) {
  try {
    const RobotDesign design = robotize_sample(x0, robotize_config_for(task), task.ws_map());
    return evaluate_design(design, task, task.prescribed);
  } catch (const DegenerateGeometry&) {
    EvalResult out;
    out.performance = task.sentinel;
    out.degenerate = true;
    return out;
  }
}

// --------------------------------------------------------------------------
// Embedding optimization (online buffer + conditioning-vector training).
// --------------------------------------------------------------------------

struct BufferEntry {
  PointSet x0;
  double performance = 0.0;
  int epoch_created = 0;
  int64_t order = 0;  // global insertion counter, newer entries are larger
};

struct EmbedOptimConfig {
  int buffer_capacity = 60;
  int min_buffer = 60;
  int samples_per_epoch = 60;
  int train_iters_per_epoch = 1;
  int top_k = 6;
  int batch_size = 6;
  double embed_lr = 1e-2;
  double guidance = 2.0;
  int max_epochs = 10;
};

inline EmbedOptimConfig embed_config_for(TaskName name) {
  EmbedOptimConfig cfg;
  switch (name) {
    case TaskName::kBalancing:
    case TaskName::kLanding:
      cfg.buffer_capacity = 600;
      cfg.top_k = 12;
      break;
    case TaskName::kHurdling:
      cfg.buffer_capacity = 600;
      cfg.top_k = 6;
      break;
    default:
      cfg.buffer_capacity = 60;
      cfg.top_k = 6;
      break;
  }
  return cfg;
}

// Union, then keep the top-k performers plus the newest of the rest up to
// capacity (oldest dropped first).
inline std::vector<BufferEntry> filter_buffer(std::vector<BufferEntry> buffer,
                                              std::vector<BufferEntry> fresh,
                                              const EmbedOptimConfig& cfg) {
  for (BufferEntry& e : fresh) buffer.push_back(std::move(e));
  if (static_cast<int>(buffer.size()) <= cfg.buffer_capacity) return buffer;

  std::vector<int> idx(buffer.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  std::vector<int> by_perf = idx;
  std::sort(by_perf.begin(), by_perf.end(), [&](int a, int b) {
    if (buffer[a].performance != buffer[b].performance)
      return buffer[a].performance > buffer[b].performance;
    return buffer[a].order > buffer[b].order;
  });
  std::vector<uint8_t> keep(buffer.size(), 0);
  int kept = 0;
  for (int i = 0; i < static_cast<int>(by_perf.size()) && kept < cfg.top_k; ++i, ++kept)
    keep[by_perf[i]] = 1;

  std::vector<int> by_age = idx;  // newest first
  std::sort(by_age.begin(), by_age.end(),
            [&](int a, int b) { return buffer[a].order > buffer[b].order; });
  for (int i : by_age) {
    if (kept >= cfg.buffer_capacity) break;
    if (!keep[i]) {
      keep[i] = 1;
      ++kept;
    }
  }

  std::vector<BufferEntry> out;
  out.reserve(kept);
  for (size_t i = 0; i < buffer.size(); ++i)
    if (keep[i]) out.push_back(std::move(buffer[i]));
  std::sort(out.begin(), out.end(),
            [](const BufferEntry& a, const BufferEntry& b) { return a.order < b.order; });
  return out;
}

// Indices of the top-k usable (non-sentinel) entries for training batches.
inline std::vector<int> top_k_region(const std::vector<BufferEntry>& buffer,
                                     const EmbedOptimConfig& cfg, double sentinel) {
  std::vector<int> idx;
  for (size_t i = 0; i < buffer.size(); ++i)
    if (buffer[i].performance > sentinel) idx.push_back(static_cast<int>(i));
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (buffer[a].performance != buffer[b].performance)
      return buffer[a].performance > buffer[b].performance;
    return buffer[a].order > buffer[b].order;
  });
  if (static_cast<int>(idx.size()) > cfg.top_k) idx.resize(cfg.top_k);
  return idx;
}

struct EmbedOptimState {
  Embedding c;
  AdamState adam;
  std::vector<BufferEntry> buffer;
  int epoch = 0;
  int64_t next_order = 0;

  static EmbedOptimState init(int embed_dim) {
    EmbedOptimState s;
    s.c = Embedding::null(embed_dim);
    s.adam = AdamState(embed_dim);
    return s;
  }
};

struct EpochStats {
  int epoch = 0;
  double mean_performance = 0.0;    // over the fresh samples (sentinels included)
  double buffer_mean = 0.0;         // over the filtered buffer
  double best_performance = 0.0;    // best in buffer after filtering
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double embed_norm = 0.0;
  int degenerate = 0;
  bool trained = false;
};

// One epoch: draw conditional samples, score them in simulation, filter the
// buffer, then take embedding-only gradient steps on the denoising loss over
// the top-k region. Denoiser weights are never touched.
inline EpochStats embed_optim_epoch(EmbedOptimState& state, const TaskSpec& task,
                                    const DenoiserParams& p, const NoiseSchedule& sched,
                                    const EmbedOptimConfig& cfg, uint64_t epoch_seed,
                                    int n_points, int jobs = 1) {
  EpochStats stats;
  stats.epoch = state.epoch;

  // Conditional generation, one RNG stream per sample.
  std::vector<PointSet> samples(cfg.samples_per_epoch);
  std::vector<double> perf(cfg.samples_per_epoch, 0.0);
  std::vector<uint8_t> degenerate(cfg.samples_per_epoch, 0);
  const Embedding c_snapshot = state.c;
  parallel_for(cfg.samples_per_epoch, jobs, [&](int64_t i) {
    Rng rng(Rng::mix(epoch_seed, 0x73616d70ULL + i));
    samples[i] = sample(p, n_points, c_snapshot, cfg.guidance, sched, rng);
    const EvalResult ev = evaluate(samples[i], task);
    perf[i] = ev.performance;
    degenerate[i] = ev.degenerate ? 1 : 0;
  });

  std::vector<BufferEntry> fresh(cfg.samples_per_epoch);
  for (int i = 0; i < cfg.samples_per_epoch; ++i) {
    fresh[i].x0 = std::move(samples[i]);
    fresh[i].performance = perf[i];
    fresh[i].epoch_created = state.epoch;
    fresh[i].order = state.next_order++;
    stats.mean_performance += perf[i] / cfg.samples_per_epoch;
    stats.degenerate += degenerate[i];
  }
  state.buffer = filter_buffer(std::move(state.buffer), std::move(fresh), cfg);

  stats.best_performance = task.sentinel;
  for (const BufferEntry& e : state.buffer) {
    stats.best_performance = std::max(stats.best_performance, e.performance);
    stats.buffer_mean += e.performance / state.buffer.size();
  }

  // Embedding training on the top-k region.
  if (static_cast<int>(state.buffer.size()) >= cfg.min_buffer) {
    const std::vector<int> region = top_k_region(state.buffer, cfg, task.sentinel);
    if (region.empty()) {
      stats.trained = false;  // nothing usable: every entry is a sentinel
    } else {
      Rng rng(Rng::mix(epoch_seed, 0x747261696eULL));
      for (int iter = 0; iter < cfg.train_iters_per_epoch; ++iter) {
        std::vector<std::pair<const PointSet*, const Embedding*>> batch;
        batch.reserve(cfg.batch_size);
        for (int b = 0; b < cfg.batch_size; ++b) {
          const int pick = region[rng.uniform_int(0, static_cast<int64_t>(region.size()) - 1)];
          batch.push_back({&state.buffer[pick].x0, &state.c});
        }
        const TrainStepResult rs = train_step(p, batch, sched, rng, /*cond_drop=*/0.0, jobs);
        std::vector<double> grad_c(p.embed_dim, 0.0);
        for (const auto& g : rs.grad_c)
          for (int d = 0; d < p.embed_dim; ++d) grad_c[d] += g[d] / rs.grad_c.size();
        adam_step(state.c.vec, grad_c, state.adam, cfg.embed_lr);
        state.c.is_null = false;
        stats.train_loss = rs.loss;
        stats.trained = true;
      }
    }
  }
  stats.embed_norm = 0.0;
  for (double v : state.c.vec) stats.embed_norm += v * v;
  stats.embed_norm = std::sqrt(stats.embed_norm);
  state.epoch += 1;
  return stats;
}

// --------------------------------------------------------------------------
// Diffusion as co-design.
// --------------------------------------------------------------------------

struct CodesignConfig {
  int t_max = 400;  // 0 disables co-design entirely
  int t_min = 0;
  int delta_t = 50;
  int mcmc_steps = 5;  // K
  std::string sigma_rule = "scaled_beta";  // "scaled_beta" | "beta" | "const"
  double sigma_const = 0.0;
  double kappa = 1e4;
  double gamma = 0.01;
  double renorm_scale = 10.0;  // <= 0 disables gradient renormalization
  bool noise_eq6_form = false;  // true: sigma^2 noise, false: standard ULA sigma
  bool reset_controller = false;
  double guidance = 2.0;

  double sigma_at(int t, const NoiseSchedule& sched) const {
    const double beta = sched.beta[std::max(1, t) - 1];
    if (sigma_rule == "scaled_beta") return 1e-4 * beta;
    if (sigma_rule == "beta") return beta;
    if (sigma_rule == "const") return sigma_const;
    throw std::invalid_argument("unknown sigma rule: " + sigma_rule);
  }

  bool window_active(int t) const {
    if (t_max <= 0 || mcmc_steps <= 0) return false;
    if (t < t_min || t > t_max) return false;
    return (t_max - t) % delta_t == 0;
  }
};

inline CodesignConfig codesign_config_for(TaskName name) {
  CodesignConfig cfg;
  switch (name) {
    case TaskName::kBalancing:
      cfg.mcmc_steps = 3;
      cfg.gamma = 0.0;  // passive: no controller
      break;
    case TaskName::kLanding:
      cfg.t_max = 150;
      cfg.delta_t = 25;
      cfg.mcmc_steps = 3;
      cfg.gamma = 0.0;
      break;
    case TaskName::kCrawling:
      cfg.gamma = 0.01;
      break;
    default:
      cfg.gamma = 0.001;
      break;
  }
  return cfg;
}

struct McmcDiagnostics {
  bool design_grad_ok = false;
  double performance = 0.0;
  double eps_norm = 0.0;
  double grad_norm = 0.0;  // after renormalization
};

// One co-design MCMC step at diffusion time t: a Langevin-style design move
// along (score - kappa * simulation gradient), plus a plain gradient-ascent
// move on the controller.
inline McmcDiagnostics mcmc_codesign_step(PointSet& x_t, int t, ControllerParams& phi,
                                          const DenoiserParams& p, const Embedding& c,
                                          const TaskSpec& task, const CodesignConfig& ccfg,
                                          const NoiseSchedule& sched, Rng& rng) {
  McmcDiagnostics diag;
  const int n = static_cast<int>(x_t.size());

  DenoiserTape tape;
  PointSet eps_hat;
  PointSet x_hat0;
  if (t == 0) {
    eps_hat.assign(n, Vec2{});
    x_hat0 = x_t;
  } else {
    eps_hat = guided_eps(p, x_t, t, c, ccfg.guidance, tape);
    x_hat0 = predict_x0(x_t, t, eps_hat, sched);
  }
  for (const Vec2& e : eps_hat) diag.eps_norm += e.norm2();
  diag.eps_norm = std::sqrt(diag.eps_norm);

  // Simulation gradients; robotizing or rollout failure skips the physics
  // term and leaves the plain diffusion move. With both physics weights at
  // zero the simulation is not touched at all.
  PointSet g_x(n, Vec2{});
  std::vector<double> d_phi(phi.param_count(), 0.0);
  const bool physics_active = ccfg.kappa != 0.0 || ccfg.gamma != 0.0;
  if (physics_active) {
    try {
      const RobotDesign design =
          robotize_sample(x_hat0, robotize_config_for(task), task.ws_map());
      const SimScene scene = make_scene(task, design);
      const MpmConfig mcfg = make_mpm_config(task, design.youngs_modulus);
      MpmSolver solver(scene, mcfg);
      const AdjointResult adj = solver.rollout_grad(phi, make_task_loss(task));
      if (adj.ok) {
        diag.performance = task_metric(task, adj.rollout, scene);
        const int m = design.size();
        std::vector<Vec2> d_shape(m, Vec2{});
        for (int i = 0; i < m; ++i) {
          Vec2 d = adj.d_x0[i];
          if (task.mirrored_gripper) {
            Vec2 dm = adj.d_x0[m + i];
            dm.x = -dm.x;  // mirrored copy: x flips back through the reflection
            d += dm;
          }
          d_shape[i] = {d.x * design.ws.scale.x, d.y * design.ws.scale.y};
        }
        const PointSet d_xhat0 =
            kernel_backward(design.shape_points, x_hat0, d_shape, /*alpha=*/20.0);
        g_x = chain_grad_to_xt(d_xhat0, t, sched);
        d_phi = adj.d_controller;
        diag.design_grad_ok = true;
      }
    } catch (const DegenerateGeometry&) {
      diag.performance = task.sentinel;
    }
  }

  // Renormalize so the scaled design gradient stays within renorm_scale of
  // the score magnitude.
  double gnorm = 0.0;
  for (const Vec2& g : g_x) gnorm += g.norm2();
  gnorm = std::sqrt(gnorm);
  if (ccfg.renorm_scale > 0.0 && gnorm > 0.0 &&
      ccfg.kappa * gnorm > ccfg.renorm_scale * diag.eps_norm) {
    const double scale = ccfg.renorm_scale * diag.eps_norm / (ccfg.kappa * gnorm);
    for (Vec2& g : g_x) g *= scale;
    gnorm *= scale;
  }
  diag.grad_norm = gnorm;

  const double sigma = ccfg.sigma_at(t, sched);
  const double drift = 0.5 * sigma * sigma;
  const double noise_coef = ccfg.noise_eq6_form ? sigma * sigma : sigma;
  for (int i = 0; i < n; ++i) {
    const Vec2 step = (eps_hat[i] - g_x[i] * ccfg.kappa) * drift;
    x_t[i] += step + rng.normal2() * noise_coef;
  }

  if (ccfg.gamma != 0.0 && !d_phi.empty()) {
    std::vector<double> flat = phi.flatten();
    for (size_t i = 0; i < flat.size(); ++i) flat[i] -= ccfg.gamma * d_phi[i];
    phi.unflatten(flat);
  }
  return diag;
}

struct CodesignResult {
  PointSet x0;
  ControllerParams controller;
  double performance = 0.0;
  bool degenerate = false;
  int mcmc_invocations = 0;
};

// Full reverse diffusion with co-design windows every delta_t steps between
// t_max and t_min. With t_max == 0 or K == 0 the trajectory is bit-identical
// to plain conditional sampling under the same seed.
inline CodesignResult sample_codesign(const DenoiserParams& p, int n_points, const Embedding& c,
                                      const TaskSpec& task, const CodesignConfig& ccfg,
                                      const NoiseSchedule& sched, Rng& rng) {
  CodesignResult out;
  out.controller = task.prescribed;
  const ControllerParams phi_init = task.prescribed;

  SampleHook hook = [&](int t, PointSet& x) {
    if (!ccfg.window_active(t)) return;
    if (ccfg.reset_controller) out.controller = phi_init;
    for (int k = 0; k < ccfg.mcmc_steps; ++k) {
      mcmc_codesign_step(x, t, out.controller, p, c, task, ccfg, sched, rng);
      out.mcmc_invocations += 1;
    }
  };
  out.x0 = sample(p, n_points, c, ccfg.guidance, sched, rng, hook);

  try {
    const RobotDesign design =
        robotize_sample(out.x0, robotize_config_for(task), task.ws_map());
    out.performance = evaluate_design(design, task, out.controller).performance;
  } catch (const DegenerateGeometry&) {
    out.performance = task.sentinel;
    out.degenerate = true;
  }
  return out;
}

// --------------------------------------------------------------------------
// Score composition across several embeddings.
// --------------------------------------------------------------------------

inline PointSet compose_embeddings(const std::vector<std::pair<Embedding, double>>& parts,
                                   const DenoiserParams& p, const PointSet& x_t, int t) {
  if (parts.empty()) throw std::invalid_argument("compose_embeddings: need at least one part");
  DenoiserTape tape;
  const Embedding null_c = Embedding::null(p.embed_dim);
  const PointSet eps_null = denoiser_forward(p, x_t, t, null_c, tape);
  PointSet out = eps_null;
  for (const auto& [c, w] : parts) {
    const PointSet eps_c = denoiser_forward(p, x_t, t, c, tape, /*reuse_features=*/true);
    for (size_t i = 0; i < out.size(); ++i) out[i] += (eps_c[i] - eps_null[i]) * w;
  }
  return out;
}

inline PointSet sample_composed(const DenoiserParams& p, int n_points,
                                const std::vector<std::pair<Embedding, double>>& parts,
                                const NoiseSchedule& sched, Rng& rng) {
  PointSet x(n_points);
  for (Vec2& q : x) q = rng.normal2();
  for (int t = sched.T; t >= 1; --t) {
    const PointSet eps_hat = compose_embeddings(parts, p, x, t);
    x = ddpm_step(x, t, eps_hat, sched, rng);
  }
  return x;
}

// --------------------------------------------------------------------------
// Gradient-descent co-optimization baselines over fixed lattices: per-voxel
// or per-particle existence logits plus the task controller.
// --------------------------------------------------------------------------

struct BaselineConfig {
  enum class Kind { kVoxel, kParticle };
  Kind kind = Kind::kParticle;
  int lattice_res = 32;  // sites across the workspace
  int voxel_res = 16;    // shared-logit blocks (voxel baseline)
  int iters = 10;
  int restarts = 20;
  double design_lr = 0.01;
  double gamma = 0.01;
  uint64_t seed = 0;
};

struct BaselineRun {
  double init_performance = 0.0;
  double best_performance = 0.0;
  std::vector<double> history;  // best-so-far per iteration
};

struct BaselineOutcome {
  double best = -std::numeric_limits<double>::infinity();
  int best_restart = -1;
  std::vector<BaselineRun> runs;
};

namespace baselinedet {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Lattice {
  std::vector<Vec2> sites;       // workspace positions (pre-placement)
  std::vector<int> logit_index;  // site -> logit slot
  int n_logits = 0;
  double spacing = 0.0;
};

inline Lattice build_lattice(const TaskSpec& task, int res, int voxel_res, bool shared_voxels) {
  Lattice lat;
  const Vec2 lo = task.ws_center - task.ws_size * 0.5;
  const double sx = task.ws_size.x / res;
  const double sy = task.ws_size.y / res;
  lat.spacing = std::min(sx, sy);
  for (int j = 0; j < res; ++j)
    for (int i = 0; i < res; ++i) {
      lat.sites.push_back({lo.x + (i + 0.5) * sx, lo.y + (j + 0.5) * sy});
      if (shared_voxels) {
        const int vi = i * voxel_res / res;
        const int vj = j * voxel_res / res;
        lat.logit_index.push_back(vj * voxel_res + vi);
      } else {
        lat.logit_index.push_back(j * res + i);
      }
    }
  lat.n_logits = shared_voxels ? voxel_res * voxel_res : res * res;
  return lat;
}

}  // namespace baselinedet

inline BaselineOutcome run_baseline(const TaskSpec& task, const BaselineConfig& bcfg,
                                    int jobs = 1) {
  const bool shared = bcfg.kind == BaselineConfig::Kind::kVoxel;
  const baselinedet::Lattice lat =
      baselinedet::build_lattice(task, bcfg.lattice_res, bcfg.voxel_res, shared);

  // Fixed actuator layout on the full lattice.
  std::vector<int> labels(lat.sites.size(), -1);
  if (task.actuators.k > 0)
    labels = place_actuators(lat.sites, task.actuators.k, task.actuators.cluster_axes,
                             Rng::mix(bcfg.seed, 0x626173ULL));

  // A design standing in for the lattice so make_scene handles placement,
  // mirroring, glue, and objects identically to the generative path.
  RobotDesign proto;
  proto.points = lat.sites;
  proto.shape_points = lat.sites;
  proto.actuator = labels;
  proto.n_actuators = task.actuators.k;
  proto.fiber.assign(std::max(1, task.actuators.k), task.actuators.fiber);
  proto.particle_volume = lat.spacing * lat.spacing;
  proto.ws = task.ws_map();

  const MpmConfig mcfg = make_mpm_config(task, proto.youngs_modulus);
  const LossFn loss_fn = make_task_loss(task);

  BaselineOutcome outcome;
  outcome.runs.resize(bcfg.restarts);

  parallel_for(bcfg.restarts, jobs, [&](int64_t r) {
    Rng rng(Rng::mix(bcfg.seed, 0x72657374ULL + r));
    // Random blob initialization: a soft disc with noisy logits.
    const Vec2 blob_c{0.25 + 0.5 * rng.uniform(), 0.25 + 0.5 * rng.uniform()};
    const double blob_r = 0.25 + 0.3 * rng.uniform();
    std::vector<double> logits(lat.n_logits, 0.0);
    const Vec2 lo = task.ws_center - task.ws_size * 0.5;
    for (size_t i = 0; i < lat.sites.size(); ++i) {
      const Vec2 rel{(lat.sites[i].x - lo.x) / task.ws_size.x,
                     (lat.sites[i].y - lo.y) / task.ws_size.y};
      const double d = (rel - blob_c).norm() / blob_r;
      const double o = clamp(0.9 * std::exp(-d * d) + 0.05, 0.05, 0.95);
      logits[lat.logit_index[i]] = std::log(o / (1.0 - o)) + 0.3 * rng.normal();
    }

    ControllerParams phi = task.prescribed;
    BaselineRun run;
    auto build_scene = [&](const std::vector<double>& lg) {
      SimScene scene = make_scene(task, proto);
      // Robot lattice sites come first (twice for mirrored assemblies).
      const int m = static_cast<int>(lat.sites.size());
      const int copies = task.mirrored_gripper ? 2 : 1;
      for (int copy = 0; copy < copies; ++copy)
        for (int i = 0; i < m; ++i)
          scene.occupancy[copy * m + i] = baselinedet::sigmoid(lg[lat.logit_index[i]]);
      return scene;
    };

    {
      SimScene scene = build_scene(logits);
      MpmSolver solver(scene, mcfg);
      run.init_performance = task_metric(task, solver.rollout(phi), scene);
    }
    run.best_performance = run.init_performance;

    for (int it = 0; it < bcfg.iters; ++it) {
      SimScene scene = build_scene(logits);
      MpmSolver solver(scene, mcfg);
      const AdjointResult adj = solver.rollout_grad(phi, loss_fn);
      if (!adj.ok) break;
      run.best_performance =
          std::max(run.best_performance, task_metric(task, adj.rollout, scene));

      // Descent on the loss: occupancy logits and controller together.
      const int m = static_cast<int>(lat.sites.size());
      const int copies = task.mirrored_gripper ? 2 : 1;
      std::vector<double> d_logit(lat.n_logits, 0.0);
      for (int copy = 0; copy < copies; ++copy)
        for (int i = 0; i < m; ++i) {
          const double o = scene.occupancy[copy * m + i];
          d_logit[lat.logit_index[i]] += adj.d_occupancy[copy * m + i] * o * (1.0 - o);
        }
      for (int i = 0; i < lat.n_logits; ++i) logits[i] -= bcfg.design_lr * d_logit[i];
      if (bcfg.gamma != 0.0 && phi.param_count() > 0) {
        std::vector<double> flat = phi.flatten();
        for (size_t i = 0; i < flat.size(); ++i) flat[i] -= bcfg.gamma * adj.d_controller[i];
        phi.unflatten(flat);
      }

      SimScene eval_scene = build_scene(logits);
      MpmSolver eval_solver(eval_scene, mcfg);
      const double perf = task_metric(task, eval_solver.rollout(phi), eval_scene);
      run.best_performance = std::max(run.best_performance, perf);
      run.history.push_back(run.best_performance);
    }
    outcome.runs[r] = std::move(run);
  });

  for (int r = 0; r < bcfg.restarts; ++r) {
    if (outcome.runs[r].best_performance > outcome.best) {
      outcome.best = outcome.runs[r].best_performance;
      outcome.best_restart = r;
    }
  }
  return outcome;
}

// Checksum used to assert that embedding optimization never mutates the
// denoiser weights.
inline uint64_t params_checksum(const DenoiserParams& p) {
  return fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(p.w.data()), p.w.size() * sizeof(double)));
}

}  // namespace mfg
