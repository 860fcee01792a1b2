// Noise-prediction network for point sets, with hand-written forward and
// reverse passes (no autodiff anywhere in the project).
//
// Input points enter through a multi-frequency positional encoding (raw
// coordinates, sin/cos octaves, and kernel-smoothed local offsets) so the
// network can resolve structure well below the coarse noise scale. Three
// per-point blocks follow, each mixing a global context (concatenated mean
// and max pools) back into the point features under FiLM conditioning from
// (time embedding + conditioning vector); a decoder maps concat(point
// features, pooled context) to the 2D noise prediction. The final layer
// starts at zero so an untrained model predicts zero noise.
//
// Mean pools use the order-independent fixed-point accumulator, which makes
// permutation equivariance hold bit-exactly.
#pragma once

#include <cassert>
#include <cmath>
#include <cstring>
#include <vector>

#include "mfg/core.hpp"
#include "mfg/pointset.hpp"

namespace mfg {

struct Embedding {
  std::vector<double> vec;
  bool is_null = false;

  static Embedding null(int dim) {
    Embedding e;
    e.vec.assign(dim, 0.0);
    e.is_null = true;
    return e;
  }
};

namespace nn {

inline double silu(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return x * s;
}

inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

// y = W x (+ b), W row-major [rows x cols].
inline void gemv(const double* w, int rows, int cols, const double* x, const double* b,
                 double* y) {
  for (int r = 0; r < rows; ++r) {
    const double* wr = w + static_cast<size_t>(r) * cols;
    double acc = b ? b[r] : 0.0;
    for (int c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

// y += W^T d.
inline void gemv_transpose_add(const double* w, int rows, int cols, const double* d, double* y) {
  for (int r = 0; r < rows; ++r) {
    const double* wr = w + static_cast<size_t>(r) * cols;
    const double dr = d[r];
    for (int c = 0; c < cols; ++c) y[c] += wr[c] * dr;
  }
}

// G += d x^T.
inline void outer_add(double* g, int rows, int cols, const double* d, const double* x) {
  for (int r = 0; r < rows; ++r) {
    double* gr = g + static_cast<size_t>(r) * cols;
    const double dr = d[r];
    for (int c = 0; c < cols; ++c) gr[c] += dr * x[c];
  }
}

}  // namespace nn

// Per-point input features: raw coordinates, sin/cos octaves, and local
// offsets against kernel-smoothed neighborhood means. The offsets use
// bandwidths matched to the diffusion noise level of the step and are
// normalized by it, which makes them direct estimates of the per-point
// score: E[noise | x] is approximately (x_i - neighborhood mean)/noise.
constexpr int kPointEncodeOctaves = 6;
constexpr int kLocalBandwidths = 3;
constexpr double kLocalBandwidth[kLocalBandwidths] = {0.04, 0.15, 0.5};
constexpr int kPointFeatureDim = 2 + 4 * kPointEncodeOctaves + 2 * kLocalBandwidths;
// Refinement stage: bandwidth multiples of the step's noise level.
constexpr int kCrossBandwidths = 3;
constexpr double kCrossBandwidthScale[kCrossBandwidths] = {0.75, 1.25, 2.0};
constexpr int kRefineInputDim = 2 * kCrossBandwidths + 2;

// Noise magnitude of the default 1000-step linear schedule, used only to set
// feature bandwidths; any monotone map of t works, this one aligns them with
// the product configuration.
inline double default_noise_level(int t) {
  static const std::vector<double> table = [] {
    std::vector<double> v(1001, 0.0);
    double abar = 1.0;
    for (int i = 1; i <= 1000; ++i) {
      abar *= 1.0 - (1e-4 + (0.02 - 1e-4) * (i - 1) / 999.0);
      v[i] = std::sqrt(1.0 - abar);
    }
    return v;
  }();
  return table[std::clamp(t, 1, 1000)];
}

inline void point_encode(const Vec2& p, double* out) {
  out[0] = p.x;
  out[1] = p.y;
  double freq = 0.5 * M_PI;
  int at = 2;
  for (int o = 0; o < kPointEncodeOctaves; ++o) {
    out[at++] = std::sin(freq * p.x);
    out[at++] = std::cos(freq * p.x);
    out[at++] = std::sin(freq * p.y);
    out[at++] = std::cos(freq * p.y);
    freq *= 2.0;
  }
}

// d<out, d_feature>/d p for the sinusoidal part (first 2 + 4*octaves slots).
inline Vec2 point_encode_backward(const Vec2& p, const double* d_feature) {
  Vec2 g{d_feature[0], d_feature[1]};
  double freq = 0.5 * M_PI;
  int at = 2;
  for (int o = 0; o < kPointEncodeOctaves; ++o) {
    g.x += d_feature[at] * freq * std::cos(freq * p.x);
    g.x -= d_feature[at + 1] * freq * std::sin(freq * p.x);
    g.y += d_feature[at + 2] * freq * std::cos(freq * p.y);
    g.y -= d_feature[at + 3] * freq * std::sin(freq * p.y);
    at += 4;
    freq *= 2.0;
  }
  return g;
}

// Softmax neighborhood weights (self excluded) for one bandwidth. Weights
// below exp(-40) of the row maximum are dropped exactly; sums use the
// fixed-point accumulator so the result is independent of point order.
struct LocalTape {
  std::vector<double> w;     // N x N row-stochastic weights
  std::vector<Vec2> mean;    // neighborhood means
};

inline void local_means(const PointSet& x, double h, LocalTape& tape) {
  const int n = static_cast<int>(x.size());
  tape.w.assign(static_cast<size_t>(n) * n, 0.0);
  tape.mean.assign(n, Vec2{});
  const double inv_h2 = 1.0 / (h * h);
  std::vector<double> d2(n);
  for (int i = 0; i < n; ++i) {
    double min_d2 = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      d2[j] = (x[i] - x[j]).norm2();
      min_d2 = std::min(min_d2, d2[j]);
    }
    if (!std::isfinite(min_d2)) {  // single point: offset is zero
      tape.mean[i] = x[i];
      continue;
    }
    FixedAccum z, mx, my;
    double* row = tape.w.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double arg = (d2[j] - min_d2) * inv_h2;
      if (arg > 40.0) continue;
      const double wj = std::exp(-arg);
      row[j] = wj;
      z.add(wj);
      mx.add(wj * x[j].x);
      my.add(wj * x[j].y);
    }
    const double zz = z.value();
    for (int j = 0; j < n; ++j) row[j] /= zz;
    tape.mean[i] = {mx.value() / zz, my.value() / zz};
  }
}

// Kernel-weighted means of a candidate cloud evaluated at query points
// (candidate j = i included). Used by the refinement stage, where the
// candidates are the pass-one estimate of the clean sample.
inline void cross_means(const PointSet& query, const PointSet& cand, double bw,
                        LocalTape& tape) {
  const int n = static_cast<int>(query.size());
  tape.w.assign(static_cast<size_t>(n) * n, 0.0);
  tape.mean.assign(n, Vec2{});
  const double inv_2b2 = 1.0 / (2.0 * bw * bw);
  std::vector<double> d2(n);
  for (int i = 0; i < n; ++i) {
    double min_d2 = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      d2[j] = (query[i] - cand[j]).norm2();
      min_d2 = std::min(min_d2, d2[j]);
    }
    FixedAccum z, mx, my;
    double* row = tape.w.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double arg = (d2[j] - min_d2) * inv_2b2;
      if (arg > 40.0) continue;
      const double wj = std::exp(-arg);
      row[j] = wj;
      z.add(wj);
      mx.add(wj * cand[j].x);
      my.add(wj * cand[j].y);
    }
    const double zz = z.value();
    for (int j = 0; j < n; ++j) row[j] /= zz;
    tape.mean[i] = {mx.value() / zz, my.value() / zz};
  }
}

// Adjoint of cross_means for both the query and candidate clouds.
inline void cross_means_backward(const PointSet& query, const PointSet& cand, double bw,
                                 const LocalTape& tape, const std::vector<Vec2>& d_mean,
                                 PointSet& d_query, PointSet& d_cand) {
  const int n = static_cast<int>(query.size());
  const double inv_2b2 = 1.0 / (2.0 * bw * bw);
  for (int i = 0; i < n; ++i) {
    const Vec2 gi = d_mean[i];
    if (gi.x == 0.0 && gi.y == 0.0) continue;
    const double* row = tape.w.data() + static_cast<size_t>(i) * n;
    const Vec2 mi = tape.mean[i];
    for (int j = 0; j < n; ++j) {
      const double wij = row[j];
      if (wij == 0.0) continue;
      d_cand[j] += gi * wij;
      const double k = -wij * inv_2b2 * gi.dot(cand[j] - mi);
      const Vec2 diff = (query[i] - cand[j]) * (2.0 * k);
      d_query[i] += diff;
      d_cand[j] -= diff;
    }
  }
}

// Accumulates d<mean_i, d_mean_i> into d_x for all points.
inline void local_means_backward(const PointSet& x, double h, const LocalTape& tape,
                                 const std::vector<Vec2>& d_mean, PointSet& d_x) {
  const int n = static_cast<int>(x.size());
  const double inv_h2 = 1.0 / (h * h);
  for (int i = 0; i < n; ++i) {
    const Vec2 gi = d_mean[i];
    if (gi.x == 0.0 && gi.y == 0.0) continue;
    const double* row = tape.w.data() + static_cast<size_t>(i) * n;
    const Vec2 mi = tape.mean[i];
    for (int j = 0; j < n; ++j) {
      const double wij = row[j];
      if (wij == 0.0) continue;
      d_x[j] += gi * wij;
      // Through the softmax: c_ij = -w_ij/h^2 * <g_i, x_j - m_i>.
      const double c = -wij * inv_h2 * gi.dot(x[j] - mi);
      const Vec2 diff = (x[i] - x[j]) * (2.0 * c);
      d_x[i] += diff;
      d_x[j] -= diff;
    }
  }
}

// Offsets of one weight segment inside the flat parameter vector.
struct ParamSegment {
  size_t offset = 0;
  int rows = 0;
  int cols = 0;  // cols == 1 for bias vectors
  size_t count() const { return static_cast<size_t>(rows) * cols; }
};

constexpr int kDenoiserBlocks = 3;

struct DenoiserLayout {
  int embed_dim = 0;
  int hidden = 0;
  ParamSegment time_w, time_b, cond_w;
  struct Block {
    ParamSegment in_w, in_b, ctx_w, ctx_b, scale_w, scale_b, shift_w, shift_b;
  } block[kDenoiserBlocks];
  ParamSegment dec_ctx_w, dec_ctx_b, out1_w, out1_b, out2_w, out2_b;
  ParamSegment refine_w1, refine_b1, refine_w2, refine_b2;
  size_t total = 0;

  DenoiserLayout() = default;
  DenoiserLayout(int e, int h) : embed_dim(e), hidden(h) {
    size_t at = 0;
    auto seg = [&](int rows, int cols) {
      ParamSegment s{at, rows, cols};
      at += s.count();
      return s;
    };
    time_w = seg(h, e);
    time_b = seg(h, 1);
    cond_w = seg(h, e);
    for (int b = 0; b < kDenoiserBlocks; ++b) {
      const int in_dim = (b == 0) ? kPointFeatureDim : h;
      block[b].in_w = seg(h, in_dim);
      block[b].in_b = seg(h, 1);
      block[b].ctx_w = seg(h, 2 * h);  // consumes [mean pool | max pool]
      block[b].ctx_b = seg(h, 1);
      block[b].scale_w = seg(h, h);
      block[b].scale_b = seg(h, 1);
      block[b].shift_w = seg(h, h);
      block[b].shift_b = seg(h, 1);
    }
    dec_ctx_w = seg(h, 2 * h);
    dec_ctx_b = seg(h, 1);
    out1_w = seg(h, 2 * h);
    out1_b = seg(h, 1);
    out2_w = seg(2, h);
    out2_b = seg(2, 1);
    refine_w1 = seg(h, kRefineInputDim);
    refine_b1 = seg(h, 1);
    refine_w2 = seg(2, h);
    refine_b2 = seg(2, 1);
    total = at;
  }
};

struct DenoiserParams {
  int embed_dim = 64;
  int hidden = 64;
  std::vector<double> freq;  // time-embedding frequency table, embed_dim/2
  std::vector<double> w;     // trainable weights, flat
  DenoiserLayout layout;

  size_t param_count() const { return w.size(); }
  const double* seg(const ParamSegment& s) const { return w.data() + s.offset; }
  double* seg(const ParamSegment& s) { return w.data() + s.offset; }
};

inline DenoiserParams make_denoiser(int embed_dim, int hidden, uint64_t seed) {
  DenoiserParams p;
  p.embed_dim = embed_dim;
  p.hidden = hidden;
  p.layout = DenoiserLayout(embed_dim, hidden);
  p.freq.resize(embed_dim / 2);
  for (int i = 0; i < embed_dim / 2; ++i)
    p.freq[i] = std::pow(10000.0, -2.0 * i / embed_dim);
  p.w.assign(p.layout.total, 0.0);

  Rng rng(Rng::mix(seed, 0x6d666731ULL));
  auto init_matrix = [&](const ParamSegment& s) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.cols));
    for (size_t i = 0; i < s.count(); ++i) p.w[s.offset + i] = scale * rng.normal();
  };
  init_matrix(p.layout.time_w);
  init_matrix(p.layout.cond_w);
  for (int b = 0; b < kDenoiserBlocks; ++b) {
    init_matrix(p.layout.block[b].in_w);
    init_matrix(p.layout.block[b].ctx_w);
    init_matrix(p.layout.block[b].scale_w);
    init_matrix(p.layout.block[b].shift_w);
  }
  init_matrix(p.layout.dec_ctx_w);
  init_matrix(p.layout.out1_w);
  init_matrix(p.layout.refine_w1);
  // out2 and refine_w2 stay zero: the untrained model predicts zero noise.
  return p;
}

// Sinusoidal features, interleaved [sin(t*f_0), cos(t*f_0), sin(t*f_1), ...].
inline std::vector<double> time_embed(const DenoiserParams& p, int t) {
  std::vector<double> te(p.embed_dim);
  for (int i = 0; i < p.embed_dim / 2; ++i) {
    te[2 * i] = std::sin(t * p.freq[i]);
    te[2 * i + 1] = std::cos(t * p.freq[i]);
  }
  return te;
}

// Forward activations cached for the reverse pass.
struct DenoiserTape {
  int n = 0;
  int t = 0;
  std::vector<double> te, cvec, g;
  std::vector<double> xfeat;  // N x kPointFeatureDim encoded inputs
  LocalTape local[kLocalBandwidths];
  struct BlockTape {
    std::vector<double> pre;    // N x H pre-activations
    std::vector<double> mixed;  // N x H silu(pre) + ctx
    std::vector<double> out;    // N x H FiLM output, feeds the next block
    std::vector<double> pool;   // [mean | max] over points, 2H
    std::vector<int> argmax;    // winning point per max channel
    std::vector<double> ctx, scale, shift;
  } blk[kDenoiserBlocks];
  std::vector<double> dec_pool, dec_ctx;
  std::vector<int> dec_argmax;
  std::vector<double> out1_pre, out1_act;  // N x H
  // Refinement stage.
  PointSet eps1;                  // pass-one noise estimate
  PointSet candidates;            // x - noise * eps1
  double refine_noise = 1.0;
  double cross_bw[kCrossBandwidths] = {0, 0, 0};
  LocalTape cross[kCrossBandwidths];
  std::vector<double> refine_in;   // N x kRefineInputDim
  std::vector<double> refine_pre;  // N x H
};

namespace detail {

// [mean | max] pooling over the point dimension. The mean uses the exact
// fixed-point accumulator and the max is order-independent by value, so the
// pooled context is a pure function of the feature multiset.
inline void pool_mean_max(const std::vector<double>& rows, int n, int h,
                          std::vector<double>& pool, std::vector<int>& argmax) {
  pool.assign(2 * static_cast<size_t>(h), 0.0);
  argmax.assign(h, 0);
  for (int d = 0; d < h; ++d) {
    FixedAccum acc;
    double best = -std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int p = 0; p < n; ++p) {
      const double v = rows[static_cast<size_t>(p) * h + d];
      acc.add(v);
      if (v > best) {
        best = v;
        arg = p;
      }
    }
    pool[d] = acc.value() / n;
    pool[h + d] = best;
    argmax[d] = arg;
  }
}

}  // namespace detail

// eps_hat = forward(p, x_t, t, c). Output has the shape of the input and is
// permutation-equivariant in the point dimension.
// `reuse_features` skips the positional/local input encoding when the tape
// already holds it for this exact point set (guided sampling evaluates the
// network twice per state).
inline PointSet denoiser_forward(const DenoiserParams& p, const PointSet& x, int t,
                                 const Embedding& c, DenoiserTape& tp,
                                 bool reuse_features = false) {
  if (static_cast<int>(c.vec.size()) != p.embed_dim)
    throw std::invalid_argument("denoiser_forward: embedding dimension mismatch");
  const int n = static_cast<int>(x.size());
  const int h = p.hidden;
  const auto& L = p.layout;

  tp.n = n;
  tp.t = t;
  tp.te = time_embed(p, t);
  tp.cvec = c.vec;

  // Conditioning vector g = W_t te + b_t + W_c c.
  tp.g.assign(h, 0.0);
  nn::gemv(p.seg(L.time_w), h, p.embed_dim, tp.te.data(), p.seg(L.time_b), tp.g.data());
  {
    std::vector<double> gc(h, 0.0);
    nn::gemv(p.seg(L.cond_w), h, p.embed_dim, tp.cvec.data(), nullptr, gc.data());
    for (int d = 0; d < h; ++d) tp.g[d] += gc[d];
  }

  if (!reuse_features) {
    tp.xfeat.resize(static_cast<size_t>(n) * kPointFeatureDim);
    for (int i = 0; i < n; ++i)
      point_encode(x[i], tp.xfeat.data() + static_cast<size_t>(i) * kPointFeatureDim);
    for (int b = 0; b < kLocalBandwidths; ++b) {
      local_means(x, kLocalBandwidth[b], tp.local[b]);
      const int at = 2 + 4 * kPointEncodeOctaves + 2 * b;
      for (int i = 0; i < n; ++i) {
        double* f = tp.xfeat.data() + static_cast<size_t>(i) * kPointFeatureDim;
        f[at] = x[i].x - tp.local[b].mean[i].x;
        f[at + 1] = x[i].y - tp.local[b].mean[i].y;
      }
    }
  }

  for (int b = 0; b < kDenoiserBlocks; ++b) {
    auto& bt = tp.blk[b];
    const auto& bl = L.block[b];
    const int in_dim = (b == 0) ? kPointFeatureDim : h;
    const double* input = (b == 0) ? tp.xfeat.data() : tp.blk[b - 1].out.data();

    bt.pre.resize(static_cast<size_t>(n) * h);
    std::vector<double> act(static_cast<size_t>(n) * h);
    for (int i = 0; i < n; ++i) {
      double* pre = bt.pre.data() + static_cast<size_t>(i) * h;
      nn::gemv(p.seg(bl.in_w), h, in_dim, input + static_cast<size_t>(i) * in_dim,
               p.seg(bl.in_b), pre);
      for (int d = 0; d < h; ++d) act[static_cast<size_t>(i) * h + d] = nn::silu(pre[d]);
    }
    detail::pool_mean_max(act, n, h, bt.pool, bt.argmax);
    bt.ctx.assign(h, 0.0);
    nn::gemv(p.seg(bl.ctx_w), h, 2 * h, bt.pool.data(), p.seg(bl.ctx_b), bt.ctx.data());
    bt.scale.assign(h, 0.0);
    bt.shift.assign(h, 0.0);
    nn::gemv(p.seg(bl.scale_w), h, h, tp.g.data(), p.seg(bl.scale_b), bt.scale.data());
    nn::gemv(p.seg(bl.shift_w), h, h, tp.g.data(), p.seg(bl.shift_b), bt.shift.data());

    bt.mixed.resize(static_cast<size_t>(n) * h);
    bt.out.resize(static_cast<size_t>(n) * h);
    for (int i = 0; i < n; ++i) {
      for (int d = 0; d < h; ++d) {
        const size_t k = static_cast<size_t>(i) * h + d;
        bt.mixed[k] = act[k] + bt.ctx[d];
        bt.out[k] = (1.0 + bt.scale[d]) * bt.mixed[k] + bt.shift[d];
      }
    }
  }

  const std::vector<double>& feat = tp.blk[kDenoiserBlocks - 1].out;
  detail::pool_mean_max(feat, n, h, tp.dec_pool, tp.dec_argmax);
  tp.dec_ctx.assign(h, 0.0);
  nn::gemv(p.seg(L.dec_ctx_w), h, 2 * h, tp.dec_pool.data(), p.seg(L.dec_ctx_b),
           tp.dec_ctx.data());

  tp.out1_pre.resize(static_cast<size_t>(n) * h);
  tp.out1_act.resize(static_cast<size_t>(n) * h);
  tp.eps1.resize(n);
  std::vector<double> z(2 * h);
  for (int i = 0; i < n; ++i) {
    std::memcpy(z.data(), feat.data() + static_cast<size_t>(i) * h, sizeof(double) * h);
    std::memcpy(z.data() + h, tp.dec_ctx.data(), sizeof(double) * h);
    double* pre = tp.out1_pre.data() + static_cast<size_t>(i) * h;
    nn::gemv(p.seg(L.out1_w), h, 2 * h, z.data(), p.seg(L.out1_b), pre);
    double* act = tp.out1_act.data() + static_cast<size_t>(i) * h;
    for (int d = 0; d < h; ++d) act[d] = nn::silu(pre[d]);
    double y[2];
    nn::gemv(p.seg(L.out2_w), 2, h, act, p.seg(L.out2_b), y);
    tp.eps1[i] = {y[0], y[1]};
  }

  // Refinement: re-estimate the noise against the pass-one clean-sample
  // candidates, the structure a posterior denoiser would use.
  const double noise = std::max(0.02, default_noise_level(t));
  tp.refine_noise = noise;
  tp.candidates.resize(n);
  for (int i = 0; i < n; ++i) tp.candidates[i] = x[i] - tp.eps1[i] * noise;
  tp.refine_in.resize(static_cast<size_t>(n) * kRefineInputDim);
  for (int b = 0; b < kCrossBandwidths; ++b) {
    const double bw = clamp(noise * kCrossBandwidthScale[b], 0.02, 2.0);
    tp.cross_bw[b] = bw;
    cross_means(x, tp.candidates, bw, tp.cross[b]);
    for (int i = 0; i < n; ++i) {
      double* r = tp.refine_in.data() + static_cast<size_t>(i) * kRefineInputDim;
      r[2 * b] = (x[i].x - tp.cross[b].mean[i].x) / noise;
      r[2 * b + 1] = (x[i].y - tp.cross[b].mean[i].y) / noise;
    }
  }
  tp.refine_pre.resize(static_cast<size_t>(n) * h);
  PointSet out(n);
  std::vector<double> ract(h);
  for (int i = 0; i < n; ++i) {
    double* r = tp.refine_in.data() + static_cast<size_t>(i) * kRefineInputDim;
    r[2 * kCrossBandwidths] = tp.eps1[i].x;
    r[2 * kCrossBandwidths + 1] = tp.eps1[i].y;
    double* pre = tp.refine_pre.data() + static_cast<size_t>(i) * h;
    nn::gemv(p.seg(L.refine_w1), h, kRefineInputDim, r, p.seg(L.refine_b1), pre);
    for (int d = 0; d < h; ++d) ract[d] = nn::silu(pre[d]);
    double y[2];
    nn::gemv(p.seg(L.refine_w2), 2, h, ract.data(), p.seg(L.refine_b2), y);
    out[i] = tp.eps1[i] + Vec2{y[0], y[1]};
  }
  return out;
}

inline PointSet denoiser_forward(const DenoiserParams& p, const PointSet& x, int t,
                                 const Embedding& c) {
  DenoiserTape tape;
  return denoiser_forward(p, x, t, c, tape);
}

struct DenoiserGrads {
  std::vector<double> w;     // same layout as DenoiserParams::w
  PointSet x;                // d<out, upstream>/d input points
  std::vector<double> cvec;  // d/d conditioning vector
};

// Exact reverse-mode gradients of <forward(p, x, t, c), upstream>.
inline DenoiserGrads denoiser_backward(const DenoiserParams& p, const PointSet& x,
                                       const DenoiserTape& tp, const PointSet& upstream) {
  const int n = tp.n;
  const int h = p.hidden;
  const auto& L = p.layout;
  if (static_cast<int>(upstream.size()) != n)
    throw std::invalid_argument("denoiser_backward: upstream shape mismatch");

  DenoiserGrads gr;
  gr.w.assign(p.w.size(), 0.0);
  gr.x.assign(n, Vec2{0.0, 0.0});
  gr.cvec.assign(p.embed_dim, 0.0);

  // ---- Refinement stage adjoint; produces the pass-one upstream. ----
  PointSet d_eps1 = upstream;
  {
    const double noise = tp.refine_noise;
    std::vector<double> ract(h), d_ract(h), d_rpre(h), d_rin(kRefineInputDim);
    std::vector<std::vector<Vec2>> d_mean(kCrossBandwidths,
                                          std::vector<Vec2>(n, Vec2{}));
    for (int i = 0; i < n; ++i) {
      const double dy[2] = {upstream[i].x, upstream[i].y};
      const double* pre = tp.refine_pre.data() + static_cast<size_t>(i) * h;
      for (int d = 0; d < h; ++d) ract[d] = nn::silu(pre[d]);
      std::fill(d_ract.begin(), d_ract.end(), 0.0);
      nn::gemv_transpose_add(p.seg(L.refine_w2), 2, h, dy, d_ract.data());
      nn::outer_add(gr.w.data() + L.refine_w2.offset, 2, h, dy, ract.data());
      gr.w[L.refine_b2.offset] += dy[0];
      gr.w[L.refine_b2.offset + 1] += dy[1];
      for (int d = 0; d < h; ++d) d_rpre[d] = d_ract[d] * nn::silu_grad(pre[d]);
      std::fill(d_rin.begin(), d_rin.end(), 0.0);
      nn::gemv_transpose_add(p.seg(L.refine_w1), h, kRefineInputDim, d_rpre.data(),
                             d_rin.data());
      nn::outer_add(gr.w.data() + L.refine_w1.offset, h, kRefineInputDim, d_rpre.data(),
                    tp.refine_in.data() + static_cast<size_t>(i) * kRefineInputDim);
      for (int d = 0; d < h; ++d) gr.w[L.refine_b1.offset + d] += d_rpre[d];

      for (int b = 0; b < kCrossBandwidths; ++b) {
        const Vec2 dg{d_rin[2 * b], d_rin[2 * b + 1]};
        gr.x[i] += dg / noise;
        d_mean[b][i] = dg * (-1.0 / noise);
      }
      d_eps1[i] += {d_rin[2 * kCrossBandwidths], d_rin[2 * kCrossBandwidths + 1]};
    }
    PointSet d_cand(n, Vec2{});
    for (int b = 0; b < kCrossBandwidths; ++b)
      cross_means_backward(x, tp.candidates, tp.cross_bw[b], tp.cross[b], d_mean[b], gr.x,
                           d_cand);
    // candidates = x - noise * eps1
    for (int i = 0; i < n; ++i) {
      gr.x[i] += d_cand[i];
      d_eps1[i] -= d_cand[i] * noise;
    }
  }

  std::vector<double> d_feat(static_cast<size_t>(n) * h, 0.0);  // d/d last block output
  std::vector<double> d_g(h, 0.0);

  // Decoder.
  {
    std::vector<double> z(2 * h), d_z(2 * h), d_act(h), d_pre(h), d_dec_ctx(h, 0.0);
    for (int i = 0; i < n; ++i) {
      const double dy[2] = {d_eps1[i].x, d_eps1[i].y};
      const double* act = tp.out1_act.data() + static_cast<size_t>(i) * h;
      const double* pre = tp.out1_pre.data() + static_cast<size_t>(i) * h;
      std::fill(d_act.begin(), d_act.end(), 0.0);
      nn::gemv_transpose_add(p.seg(L.out2_w), 2, h, dy, d_act.data());
      nn::outer_add(gr.w.data() + L.out2_w.offset, 2, h, dy, act);
      gr.w[L.out2_b.offset] += dy[0];
      gr.w[L.out2_b.offset + 1] += dy[1];

      for (int d = 0; d < h; ++d) d_pre[d] = d_act[d] * nn::silu_grad(pre[d]);

      std::memcpy(z.data(), tp.blk[kDenoiserBlocks - 1].out.data() + static_cast<size_t>(i) * h,
                  sizeof(double) * h);
      std::memcpy(z.data() + h, tp.dec_ctx.data(), sizeof(double) * h);
      std::fill(d_z.begin(), d_z.end(), 0.0);
      nn::gemv_transpose_add(p.seg(L.out1_w), h, 2 * h, d_pre.data(), d_z.data());
      nn::outer_add(gr.w.data() + L.out1_w.offset, h, 2 * h, d_pre.data(), z.data());
      for (int d = 0; d < h; ++d) gr.w[L.out1_b.offset + d] += d_pre[d];

      for (int d = 0; d < h; ++d) {
        d_feat[static_cast<size_t>(i) * h + d] += d_z[d];
        d_dec_ctx[d] += d_z[h + d];
      }
    }
    std::vector<double> d_pool(2 * h, 0.0);
    nn::gemv_transpose_add(p.seg(L.dec_ctx_w), h, 2 * h, d_dec_ctx.data(), d_pool.data());
    nn::outer_add(gr.w.data() + L.dec_ctx_w.offset, h, 2 * h, d_dec_ctx.data(),
                  tp.dec_pool.data());
    for (int d = 0; d < h; ++d) gr.w[L.dec_ctx_b.offset + d] += d_dec_ctx[d];
    for (int d = 0; d < h; ++d) {
      for (int i = 0; i < n; ++i) d_feat[static_cast<size_t>(i) * h + d] += d_pool[d] / n;
      d_feat[static_cast<size_t>(tp.dec_argmax[d]) * h + d] += d_pool[h + d];
    }
  }

  // Blocks, in reverse. d_feat enters as the gradient of block b's output.
  for (int b = kDenoiserBlocks - 1; b >= 0; --b) {
    const auto& bt = tp.blk[b];
    const auto& bl = L.block[b];
    const int in_dim = (b == 0) ? kPointFeatureDim : h;

    std::vector<double> d_scale(h, 0.0), d_shift(h, 0.0), d_ctx(h, 0.0);
    std::vector<double> d_act(static_cast<size_t>(n) * h, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int d = 0; d < h; ++d) {
        const size_t k = static_cast<size_t>(i) * h + d;
        const double dh = d_feat[k];
        d_scale[d] += dh * bt.mixed[k];
        d_shift[d] += dh;
        const double d_mixed = dh * (1.0 + bt.scale[d]);
        d_act[k] += d_mixed;
        d_ctx[d] += d_mixed;
      }
    }
    nn::gemv_transpose_add(p.seg(bl.scale_w), h, h, d_scale.data(), d_g.data());
    nn::outer_add(gr.w.data() + bl.scale_w.offset, h, h, d_scale.data(), tp.g.data());
    for (int d = 0; d < h; ++d) gr.w[bl.scale_b.offset + d] += d_scale[d];
    nn::gemv_transpose_add(p.seg(bl.shift_w), h, h, d_shift.data(), d_g.data());
    nn::outer_add(gr.w.data() + bl.shift_w.offset, h, h, d_shift.data(), tp.g.data());
    for (int d = 0; d < h; ++d) gr.w[bl.shift_b.offset + d] += d_shift[d];

    std::vector<double> d_pool(2 * h, 0.0);
    nn::gemv_transpose_add(p.seg(bl.ctx_w), h, 2 * h, d_ctx.data(), d_pool.data());
    nn::outer_add(gr.w.data() + bl.ctx_w.offset, h, 2 * h, d_ctx.data(), bt.pool.data());
    for (int d = 0; d < h; ++d) gr.w[bl.ctx_b.offset + d] += d_ctx[d];
    for (int d = 0; d < h; ++d) {
      for (int i = 0; i < n; ++i) d_act[static_cast<size_t>(i) * h + d] += d_pool[d] / n;
      d_act[static_cast<size_t>(bt.argmax[d]) * h + d] += d_pool[h + d];
    }

    // Through SiLU and the per-point linear layer.
    std::vector<double> d_in(static_cast<size_t>(n) * in_dim, 0.0);
    std::vector<double> d_pre(h);
    for (int i = 0; i < n; ++i) {
      const double* pre = bt.pre.data() + static_cast<size_t>(i) * h;
      for (int d = 0; d < h; ++d)
        d_pre[d] = d_act[static_cast<size_t>(i) * h + d] * nn::silu_grad(pre[d]);
      nn::gemv_transpose_add(p.seg(bl.in_w), h, in_dim, d_pre.data(),
                             d_in.data() + static_cast<size_t>(i) * in_dim);
      const double* in_row = (b == 0)
                                 ? tp.xfeat.data() + static_cast<size_t>(i) * kPointFeatureDim
                                 : tp.blk[b - 1].out.data() + static_cast<size_t>(i) * h;
      nn::outer_add(gr.w.data() + bl.in_w.offset, h, in_dim, d_pre.data(), in_row);
      for (int d = 0; d < h; ++d) gr.w[bl.in_b.offset + d] += d_pre[d];
    }

    if (b > 0) {
      d_feat.swap(d_in);  // now the gradient w.r.t. the previous block's output
    } else {
      for (int i = 0; i < n; ++i)
        gr.x[i] += point_encode_backward(
            x[i], d_in.data() + static_cast<size_t>(i) * kPointFeatureDim);
      // Local offsets: delta_i = x_i - mean_i.
      std::vector<Vec2> d_mean(n);
      for (int lb = 0; lb < kLocalBandwidths; ++lb) {
        const int at = 2 + 4 * kPointEncodeOctaves + 2 * lb;
        for (int i = 0; i < n; ++i) {
          const double* f = d_in.data() + static_cast<size_t>(i) * kPointFeatureDim;
          gr.x[i] += {f[at], f[at + 1]};
          d_mean[i] = {-f[at], -f[at + 1]};
        }
        local_means_backward(x, kLocalBandwidth[lb], tp.local[lb], d_mean, gr.x);
      }
    }
  }

  // Conditioning path: g = W_t te + b_t + W_c c.
  nn::outer_add(gr.w.data() + L.time_w.offset, h, p.embed_dim, d_g.data(), tp.te.data());
  for (int d = 0; d < h; ++d) gr.w[L.time_b.offset + d] += d_g[d];
  nn::outer_add(gr.w.data() + L.cond_w.offset, h, p.embed_dim, d_g.data(), tp.cvec.data());
  nn::gemv_transpose_add(p.seg(L.cond_w), h, p.embed_dim, d_g.data(), gr.cvec.data());

  return gr;
}

// --------------------------------------------------------------------------
// Adam optimizer (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
// --------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  uint64_t step = 0;

  explicit AdamState(size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::vector<double>& w, const std::vector<double>& g, AdamState& st,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (w.size() != g.size() || w.size() != st.m.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  st.step += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < w.size(); ++i) {
    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace mfg
