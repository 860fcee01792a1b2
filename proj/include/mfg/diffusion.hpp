// Forward noising, the training objective, ancestral reverse sampling with
// classifier-free guidance, and the predicted-clean-sample map.
#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "mfg/core.hpp"
#include "mfg/denoiser.hpp"
#include "mfg/pointset.hpp"

namespace mfg {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // beta[t-1] for step t in 1..T
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha

  static NoiseSchedule from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.beta = std::move(betas);
    s.alpha.resize(s.T);
    s.alpha_bar.resize(s.T);
    double prod = 1.0;
    for (int i = 0; i < s.T; ++i) {
      if (!(s.beta[i] > 0.0 && s.beta[i] < 1.0))
        throw std::invalid_argument("noise schedule: beta out of (0,1)");
      s.alpha[i] = 1.0 - s.beta[i];
      prod *= s.alpha[i];
      s.alpha_bar[i] = prod;
    }
    return s;
  }

  static NoiseSchedule linear(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
    std::vector<double> b(T);
    for (int i = 0; i < T; ++i)
      b[i] = beta_start + (beta_end - beta_start) * (T == 1 ? 0.0 : double(i) / (T - 1));
    NoiseSchedule s = from_betas(std::move(b));
    if (!(s.alpha_bar.back() < 1e-4))
      throw std::invalid_argument("noise schedule: terminal alpha_bar too large");
    return s;
  }

  double abar(int t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }
  double abar_prev(int t) const { return abar(t - 1); }

  void check_step(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("diffusion step out of range");
  }
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline PointSet q_sample(const PointSet& x0, int t, const PointSet& eps,
                         const NoiseSchedule& sched) {
  sched.check_step(t);
  if (eps.size() != x0.size()) throw std::invalid_argument("q_sample: shape mismatch");
  const double a = std::sqrt(sched.abar(t));
  const double b = std::sqrt(1.0 - sched.abar(t));
  PointSet out(x0.size());
  for (size_t i = 0; i < x0.size(); ++i) out[i] = x0[i] * a + eps[i] * b;
  return out;
}

// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
inline PointSet predict_x0(const PointSet& xt, int t, const PointSet& eps_hat,
                           const NoiseSchedule& sched) {
  sched.check_step(t);
  if (eps_hat.size() != xt.size()) throw std::invalid_argument("predict_x0: shape mismatch");
  const double a = std::sqrt(sched.abar(t));
  const double b = std::sqrt(1.0 - sched.abar(t));
  PointSet out(xt.size());
  for (size_t i = 0; i < xt.size(); ++i) out[i] = (xt[i] - eps_hat[i] * b) / a;
  return out;
}

// Classifier-free guidance: eps_null + s (eps_cond - eps_null).
inline PointSet cfg_eps(const PointSet& eps_null, const PointSet& eps_cond, double s) {
  if (eps_null.size() != eps_cond.size()) throw std::invalid_argument("cfg_eps: shape mismatch");
  PointSet out(eps_null.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = eps_null[i] + (eps_cond[i] - eps_null[i]) * s;
  return out;
}

// One ancestral reverse step. At t == 1 the posterior variance vanishes and
// the mean is returned unperturbed.
inline PointSet ddpm_step(const PointSet& xt, int t, const PointSet& eps_hat,
                          const NoiseSchedule& sched, Rng& rng) {
  sched.check_step(t);
  const double beta = sched.beta[t - 1];
  const double alpha = sched.alpha[t - 1];
  const double abar = sched.abar(t);
  const double abar_prev = sched.abar_prev(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double coef = beta / std::sqrt(1.0 - abar);
  PointSet out(xt.size());
  for (size_t i = 0; i < xt.size(); ++i) out[i] = (xt[i] - eps_hat[i] * coef) * inv_sqrt_alpha;
  if (t > 1) {
    const double sigma = std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta);
    for (Vec2& p : out) p += rng.normal2() * sigma;
  }
  return out;
}

// Guided noise prediction that skips redundant network evaluations and
// shares the input-feature encoding between the two guided passes.
inline PointSet guided_eps(const DenoiserParams& p, const PointSet& x, int t, const Embedding& c,
                           double s, DenoiserTape& tape) {
  const Embedding null_c = Embedding::null(p.embed_dim);
  if (c.is_null || s == 0.0) return denoiser_forward(p, x, t, null_c, tape);
  if (s == 1.0) return denoiser_forward(p, x, t, c, tape);
  const PointSet eps_null = denoiser_forward(p, x, t, null_c, tape);
  const PointSet eps_cond = denoiser_forward(p, x, t, c, tape, /*reuse_features=*/true);
  return cfg_eps(eps_null, eps_cond, s);
}

// Full reverse trajectory from x_T ~ N(0, I). The hook runs after every step
// with the new diffusion time and may overwrite the state in place.
using SampleHook = std::function<void(int t, PointSet& x)>;

inline PointSet sample(const DenoiserParams& p, int n_points, const Embedding& c, double s,
                       const NoiseSchedule& sched, Rng& rng, const SampleHook& hook = {}) {
  PointSet x(n_points);
  for (Vec2& q : x) q = rng.normal2();
  DenoiserTape tape;
  for (int t = sched.T; t >= 1; --t) {
    const PointSet eps_hat = guided_eps(p, x, t, c, s, tape);
    x = ddpm_step(x, t, eps_hat, sched, rng);
    if (hook) hook(t - 1, x);
  }
  return x;
}

// --------------------------------------------------------------------------
// Training step: per element draw t ~ U[1, T] and eps ~ N(0, I), form x_t,
// replace the conditioning with the null embedding with probability
// `cond_drop`, and average the squared error over every coordinate.
// --------------------------------------------------------------------------

struct TrainStepResult {
  double loss = 0.0;
  std::vector<double> grad_w;               // mean gradient w.r.t. denoiser weights
  std::vector<std::vector<double>> grad_c;  // per-element gradient w.r.t. its embedding
  std::vector<bool> dropped;                // which elements trained against the null embedding
};

inline TrainStepResult train_step(const DenoiserParams& p,
                                  const std::vector<std::pair<const PointSet*, const Embedding*>>& batch,
                                  const NoiseSchedule& sched, Rng& rng, double cond_drop = 0.1,
                                  int jobs = 1) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const int bsz = static_cast<int>(batch.size());

  // All randomness is drawn sequentially up front so results are independent
  // of the worker count.
  std::vector<int> ts(bsz);
  std::vector<PointSet> eps(bsz);
  std::vector<bool> dropped(bsz);
  for (int i = 0; i < bsz; ++i) {
    ts[i] = static_cast<int>(rng.uniform_int(1, sched.T));
    eps[i].resize(batch[i].first->size());
    for (Vec2& q : eps[i]) q = rng.normal2();
    dropped[i] = cond_drop > 0.0 && rng.uniform() < cond_drop;
  }

  std::vector<double> losses(bsz, 0.0);
  std::vector<DenoiserGrads> grads(bsz);
  parallel_for(bsz, jobs, [&](int64_t i) {
    const PointSet& x0 = *batch[i].first;
    const Embedding null_c = Embedding::null(p.embed_dim);
    const Embedding& c = dropped[i] ? null_c : *batch[i].second;
    const PointSet xt = q_sample(x0, ts[i], eps[i], sched);
    DenoiserTape tape;
    const PointSet eps_hat = denoiser_forward(p, xt, ts[i], c, tape);
    const double denom = 2.0 * static_cast<double>(x0.size());
    PointSet upstream(x0.size());
    double mse = 0.0;
    for (size_t k = 0; k < x0.size(); ++k) {
      const Vec2 d = eps_hat[k] - eps[i][k];
      mse += d.norm2();
      upstream[k] = d * (2.0 / (denom * bsz));
    }
    losses[i] = mse / denom;
    grads[i] = denoiser_backward(p, xt, tape, upstream);
  });

  TrainStepResult out;
  out.grad_w.assign(p.w.size(), 0.0);
  out.grad_c.resize(bsz);
  out.dropped = dropped;
  for (int i = 0; i < bsz; ++i) {
    out.loss += losses[i] / bsz;
    for (size_t k = 0; k < out.grad_w.size(); ++k) out.grad_w[k] += grads[i].w[k];
    // Per-element embedding gradient, scaled back to a per-element loss.
    out.grad_c[i] = std::move(grads[i].cvec);
    for (double& v : out.grad_c[i]) v *= bsz;
    if (dropped[i]) std::fill(out.grad_c[i].begin(), out.grad_c[i].end(), 0.0);
  }
  return out;
}

}  // namespace mfg
