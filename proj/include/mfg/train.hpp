// Corpus training driver: fits the denoiser jointly with one learned
// conditioning vector per shape family (classifier-free drop included), so
// the conditioning channel carries real shape semantics before any
// embedding optimization happens.
#pragma once

#include <functional>
#include <vector>

#include "mfg/denoiser.hpp"
#include "mfg/diffusion.hpp"
#include "mfg/shapes.hpp"

namespace mfg {

struct CorpusTrainConfig {
  int steps = 20000;
  int batch_size = 12;
  double lr = 3e-4;
  bool cosine_decay = true;  // decay the learning rate to 10% of base
  double family_embed_lr = 1e-3;
  double cond_drop = 0.1;
  int log_every = 500;
  uint64_t seed = 0;
  int jobs = 1;
};

struct TrainedModel {
  DenoiserParams params;
  AdamState adam;
  std::vector<Embedding> family_embeddings;  // one per shape family
  std::vector<double> loss_log;              // mean loss per log window
};

using TrainProgressFn = std::function<void(int step, double window_loss)>;

inline TrainedModel train_corpus(const std::vector<CorpusItem>& corpus,
                                 const CorpusTrainConfig& cfg, int embed_dim, int hidden,
                                 const TrainProgressFn& progress = {}) {
  if (corpus.empty()) throw std::invalid_argument("train_corpus: empty corpus");
  TrainedModel model;
  model.params = make_denoiser(embed_dim, hidden, Rng::mix(cfg.seed, 0x696e6974ULL));
  model.adam = AdamState(model.params.w.size());
  model.family_embeddings.resize(kNumShapeFamilies);

  Rng init_rng(Rng::mix(cfg.seed, 0x66616d31ULL));
  for (int f = 0; f < kNumShapeFamilies; ++f) {
    model.family_embeddings[f].vec.resize(embed_dim);
    model.family_embeddings[f].is_null = false;
    for (double& v : model.family_embeddings[f].vec) v = init_rng.normal() * 0.1;
  }

  // One flat Adam state over the concatenated family table.
  std::vector<double> table(static_cast<size_t>(kNumShapeFamilies) * embed_dim, 0.0);
  for (int f = 0; f < kNumShapeFamilies; ++f)
    for (int d = 0; d < embed_dim; ++d)
      table[static_cast<size_t>(f) * embed_dim + d] = model.family_embeddings[f].vec[d];
  AdamState table_adam(table.size());

  const NoiseSchedule sched = NoiseSchedule::linear();
  Rng rng(Rng::mix(cfg.seed, 0x7374657073ULL));
  double window = 0.0;
  int window_n = 0;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> picks(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b)
      picks[b] = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(corpus.size()) - 1));

    std::vector<std::pair<const PointSet*, const Embedding*>> batch(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int fam = static_cast<int>(corpus[picks[b]].spec.family);
      batch[b] = {&corpus[picks[b]].points, &model.family_embeddings[fam]};
    }

    const TrainStepResult rs = train_step(model.params, batch, sched, rng, cfg.cond_drop,
                                          cfg.jobs);
    double lr = cfg.lr;
    if (cfg.cosine_decay)
      lr *= 0.1 + 0.45 * (1.0 + std::cos(M_PI * step / std::max(1, cfg.steps - 1)));
    adam_step(model.params.w, rs.grad_w, model.adam, lr);

    std::vector<double> table_grad(table.size(), 0.0);
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (rs.dropped[b]) continue;
      const int fam = static_cast<int>(corpus[picks[b]].spec.family);
      for (int d = 0; d < embed_dim; ++d)
        table_grad[static_cast<size_t>(fam) * embed_dim + d] +=
            rs.grad_c[b][d] / cfg.batch_size;
    }
    adam_step(table, table_grad, table_adam, cfg.family_embed_lr);
    for (int f = 0; f < kNumShapeFamilies; ++f)
      for (int d = 0; d < embed_dim; ++d)
        model.family_embeddings[f].vec[d] = table[static_cast<size_t>(f) * embed_dim + d];

    window += rs.loss;
    window_n += 1;
    if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
      const double mean = window / window_n;
      model.loss_log.push_back(mean);
      if (progress) progress(step + 1, mean);
      window = 0.0;
      window_n = 0;
    }
  }
  return model;
}

}  // namespace mfg
