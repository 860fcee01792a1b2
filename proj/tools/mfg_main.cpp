// Experiment runner: corpus generation, diffusion training, sampling,
// embedding optimization, co-design sampling, evaluation, baselines, and
// rendering. Every command resolves its configuration (defaults + file +
// --set overrides), writes it back into the run directory, and finishes
// with a content-hash manifest so identical configs reproduce identical
// bytes. Timestamps only ever go to the run.log sidecar.
//
// Exit codes: 0 success, 1 configuration error, 2 missing artifact,
// 3 numerical failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mfg/artifacts.hpp"
#include "mfg/codesign.hpp"
#include "mfg/render.hpp"
#include "mfg/train.hpp"

namespace fs = std::filesystem;
using mfg::json;

namespace {

struct MissingArtifact : std::runtime_error {
  explicit MissingArtifact(const std::string& what) : std::runtime_error(what) {}
};

json default_config() {
  return json{
      {"seed", 0},
      {"jobs", 0},  // 0 = use all hardware threads
      {"points_per_shape", 256},
      {"embed_dim", 64},
      {"hidden", 64},
      {"schedule", {{"T", 1000}, {"beta_start", 1e-4}, {"beta_end", 0.02}}},
      {"task", {{"name", "crawling"}}},
      {"corpus", {{"count", 2048}, {"sigma_jitter", 0.005}, {"dir", ""}}},
      {"train",
       {{"steps", 20000},
        {"batch", 12},
        {"lr", 3e-4},
        {"family_embed_lr", 1e-3},
        {"cond_drop", 0.1},
        {"log_every", 500},
        {"save_optimizer_state", false}}},
      {"sample",
       {{"count", 8},
        {"guidance", 2.0},
        {"checkpoint", ""},
        {"embedding", ""},
        {"snapshot_every", 0}}},
      {"embed_optim",
       {{"epochs", 10},
        {"embed_lr", 1e-2},
        {"guidance", 2.0},
        {"checkpoint", ""},
        {"resume_buffer", ""},
        // -1 = resolve from the task defaults table
        {"buffer_capacity", -1},
        {"min_buffer", 60},
        {"samples_per_epoch", 60},
        {"train_iters_per_epoch", 1},
        {"top_k", -1},
        {"batch_size", 6}}},
      {"codesign",
       {{"count", 1},
        {"checkpoint", ""},
        {"embedding", ""},
        {"compare_plain", true},
        {"t_max", -1},
        {"t_min", 0},
        {"delta_t", -1},
        {"mcmc_steps", -1},
        {"sigma_rule", "scaled_beta"},
        {"sigma_const", 0.0},
        {"kappa", 1e4},
        {"gamma", -1.0},
        {"renorm_scale", 10.0},
        {"noise_eq6_form", false},
        {"reset_controller", false},
        {"guidance", 2.0}}},
      {"evaluate", {{"samples", ""}, {"controllers", ""}}},
      {"baseline",
       {{"kind", "particle"},
        {"lattice_res", 32},
        {"voxel_res", 16},
        {"iters", 10},
        {"restarts", 20},
        {"design_lr", 0.01}}},
      {"render",
       {{"sample", ""},
        {"controller", ""},
        {"every", 10},
        {"plot_csv", ""},
        {"plot_x", ""},
        {"plot_y", ""}}},
  };
}

// Dotted-path override: "codesign.kappa=5e3". Values parse as JSON when
// possible, otherwise as strings.
void apply_override(json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("--set expects key.path=value, got: " + kv);
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (...) {
    value = raw;
  }
  json* at = &cfg;
  size_t begin = 0;
  for (;;) {
    const size_t dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot - begin);
    if (key.empty()) throw std::invalid_argument("--set: empty key in " + kv);
    if (dot == std::string::npos) {
      (*at)[key] = value;
      return;
    }
    at = &(*at)[key];
    begin = dot + 1;
  }
}

void merge_into(json& base, const json& overlay) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

struct RunContext {
  json cfg;
  fs::path dir;
  std::ofstream log;
  int jobs = 1;
  uint64_t seed = 0;

  void note(const std::string& line) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    log << "[" << ms << "] " << line << "\n";
    log.flush();
    std::cout << line << "\n";
  }
};

RunContext open_run(const std::string& command, const json& cfg, const std::string& out_flag) {
  RunContext ctx;
  ctx.cfg = cfg;
  std::string root = out_flag;
  if (root.empty())
    if (const char* env = std::getenv("MFG_RUN_DIR")) root = env;
  if (root.empty()) root = "runs";
  ctx.dir = fs::path(root) / command;
  fs::create_directories(ctx.dir);
  ctx.log.open(ctx.dir / "run.log", std::ios::app);
  ctx.seed = cfg.at("seed").get<uint64_t>();
  ctx.jobs = cfg.at("jobs").get<int>();
  if (ctx.jobs <= 0) ctx.jobs = mfg::default_jobs();
  mfg::write_json_file(ctx.dir / "resolved_config.json", cfg);
  return ctx;
}

mfg::NoiseSchedule schedule_from(const json& cfg) {
  const auto& s = cfg.at("schedule");
  return mfg::NoiseSchedule::linear(s.at("T").get<int>(), s.at("beta_start").get<double>(),
                                    s.at("beta_end").get<double>());
}

mfg::TaskSpec task_from(const json& cfg) {
  return mfg::build_task(mfg::task_from_name(cfg.at("task").at("name").get<std::string>()));
}

std::vector<mfg::CorpusItem> load_corpus(const fs::path& dir) {
  if (!fs::exists(dir)) throw MissingArtifact("corpus directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json" && e.path().filename() != "resolved_config.json" &&
        e.path().filename() != "manifest.json")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw MissingArtifact("no shape files in " + dir.string());
  std::vector<mfg::CorpusItem> corpus;
  corpus.reserve(files.size());
  for (const auto& f : files) corpus.push_back(mfg::corpus_item_from_json(mfg::read_json_file(f)));
  return corpus;
}

mfg::DenoiserParams require_checkpoint(const json& section) {
  const std::string path = section.at("checkpoint").get<std::string>();
  if (path.empty()) throw MissingArtifact("no checkpoint configured");
  if (!fs::exists(path)) throw MissingArtifact("checkpoint not found: " + path);
  return mfg::load_checkpoint(path);
}

mfg::Embedding embedding_from_file_or_null(const json& section, int embed_dim) {
  const std::string path = section.at("embedding").get<std::string>();
  if (path.empty()) return mfg::Embedding::null(embed_dim);
  if (!fs::exists(path)) throw MissingArtifact("embedding not found: " + path);
  mfg::Embedding e = mfg::embedding_from_json(mfg::read_json_file(path));
  if (static_cast<int>(e.vec.size()) != embed_dim)
    throw std::invalid_argument("embedding dimension mismatch");
  return e;
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

int cmd_gen_corpus(RunContext& ctx) {
  const auto& c = ctx.cfg.at("corpus");
  const int64_t count = c.at("count").get<int64_t>();
  const int n = ctx.cfg.at("points_per_shape").get<int>();
  ctx.note("generating corpus: " + std::to_string(count) + " shapes");
  const auto corpus =
      mfg::generate_corpus(count, ctx.seed, n, c.at("sigma_jitter").get<double>());
  const fs::path shape_dir = ctx.dir / "shapes";
  fs::create_directories(shape_dir);
  mfg::CsvWriter metrics({"shape_id", "family", "n_points"});
  for (size_t i = 0; i < corpus.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "shape_%05zu.json", i);
    mfg::write_json_file(shape_dir / name, mfg::corpus_item_to_json(corpus[i]));
    metrics.row({std::to_string(i), mfg::family_name(corpus[i].spec.family),
                 std::to_string(corpus[i].points.size())});
  }
  metrics.save(ctx.dir / "metrics.csv");
  mfg::write_manifest(ctx.dir);
  ctx.note("corpus written to " + shape_dir.string());
  return 0;
}

int cmd_train(RunContext& ctx) {
  const fs::path corpus_dir = [&]() {
    const std::string d = ctx.cfg.at("corpus").at("dir").get<std::string>();
    if (d.empty()) throw MissingArtifact("train: corpus.dir not set");
    const fs::path p(d);
    return fs::exists(p / "shapes") ? p / "shapes" : p;
  }();
  const auto corpus = load_corpus(corpus_dir);
  ctx.note("loaded corpus of " + std::to_string(corpus.size()) + " shapes");

  const auto& t = ctx.cfg.at("train");
  mfg::CorpusTrainConfig tc;
  tc.steps = t.at("steps").get<int>();
  tc.batch_size = t.at("batch").get<int>();
  tc.lr = t.at("lr").get<double>();
  tc.family_embed_lr = t.at("family_embed_lr").get<double>();
  tc.cond_drop = t.at("cond_drop").get<double>();
  tc.log_every = t.at("log_every").get<int>();
  tc.seed = ctx.seed;
  tc.jobs = ctx.jobs;

  mfg::CsvWriter log({"step", "loss"});
  const mfg::TrainedModel model = mfg::train_corpus(
      corpus, tc, ctx.cfg.at("embed_dim").get<int>(), ctx.cfg.at("hidden").get<int>(),
      [&](int step, double loss) {
        log.row({std::to_string(step), mfg::csv_double(loss)});
        ctx.note("step " + std::to_string(step) + " loss " + mfg::csv_double(loss));
      });
  if (!model.loss_log.empty() && !std::isfinite(model.loss_log.back())) {
    ctx.note("training diverged");
    return 3;
  }

  const bool save_opt = t.at("save_optimizer_state").get<bool>();
  mfg::save_checkpoint(ctx.dir / "checkpoint.bin", model.params,
                       save_opt ? &model.adam : nullptr);
  json fam = json::array();
  for (int f = 0; f < mfg::kNumShapeFamilies; ++f)
    fam.push_back({{"family", mfg::family_name(static_cast<mfg::ShapeFamily>(f))},
                   {"embedding", mfg::embedding_to_json(model.family_embeddings[f])}});
  mfg::write_json_file(ctx.dir / "family_embeddings.json", fam);
  log.save(ctx.dir / "train_log.csv");
  log.save(ctx.dir / "metrics.csv");
  mfg::write_manifest(ctx.dir);
  ctx.note("checkpoint written");
  return 0;
}

int cmd_sample(RunContext& ctx) {
  const auto& s = ctx.cfg.at("sample");
  const mfg::DenoiserParams params = require_checkpoint(s);
  const mfg::Embedding cond = embedding_from_file_or_null(s, params.embed_dim);
  const mfg::NoiseSchedule sched = schedule_from(ctx.cfg);
  const int count = s.at("count").get<int>();
  const double guidance = s.at("guidance").get<double>();
  const int snapshot_every = s.at("snapshot_every").get<int>();
  const int n = ctx.cfg.at("points_per_shape").get<int>();

  fs::create_directories(ctx.dir / "samples");
  std::vector<mfg::PointSet> samples(count);
  std::vector<json> trajectories(count);
  mfg::parallel_for(count, ctx.jobs, [&](int64_t i) {
    mfg::Rng rng(mfg::Rng::mix(ctx.seed, 0x73616d70ULL + i));
    json traj = json::array();
    mfg::SampleHook hook;
    if (snapshot_every > 0)
      hook = [&](int t, mfg::PointSet& x) {
        if (t % snapshot_every == 0)
          traj.push_back({{"t", t}, {"points", mfg::points_to_json(x)}});
      };
    samples[i] = mfg::sample(params, n, cond, guidance, sched, rng, hook);
    trajectories[i] = std::move(traj);
  });
  mfg::CsvWriter metrics({"sample_id", "n_points", "extent_x", "extent_y", "seed"});
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04d.json", i);
    mfg::write_json_file(ctx.dir / "samples" / name,
                         json{{"seed", ctx.seed}, {"index", i},
                              {"points", mfg::points_to_json(samples[i])}});
    if (snapshot_every > 0) {
      char tname[32];
      std::snprintf(tname, sizeof(tname), "trajectory_%04d.json", i);
      mfg::write_json_file(ctx.dir / "samples" / tname, trajectories[i]);
    }
    const mfg::Bbox bb = mfg::bounds(samples[i]);
    metrics.row({std::to_string(i), std::to_string(samples[i].size()),
                 mfg::csv_double(bb.size().x), mfg::csv_double(bb.size().y),
                 std::to_string(ctx.seed)});
  }
  metrics.save(ctx.dir / "metrics.csv");
  mfg::write_manifest(ctx.dir);
  ctx.note("wrote " + std::to_string(count) + " samples");
  return 0;
}

int cmd_optimize_embedding(RunContext& ctx) {
  const auto& e = ctx.cfg.at("embed_optim");
  const mfg::DenoiserParams params = require_checkpoint(e);
  const mfg::NoiseSchedule sched = schedule_from(ctx.cfg);
  const mfg::TaskSpec task = task_from(ctx.cfg);
  const int n = ctx.cfg.at("points_per_shape").get<int>();

  mfg::EmbedOptimConfig cfg = mfg::embed_config_for(task.name);
  if (e.at("buffer_capacity").get<int>() > 0)
    cfg.buffer_capacity = e.at("buffer_capacity").get<int>();
  if (e.at("top_k").get<int>() > 0) cfg.top_k = e.at("top_k").get<int>();
  cfg.min_buffer = e.at("min_buffer").get<int>();
  cfg.samples_per_epoch = e.at("samples_per_epoch").get<int>();
  cfg.train_iters_per_epoch = e.at("train_iters_per_epoch").get<int>();
  cfg.batch_size = e.at("batch_size").get<int>();
  cfg.embed_lr = e.at("embed_lr").get<double>();
  cfg.guidance = e.at("guidance").get<double>();
  cfg.max_epochs = e.at("epochs").get<int>();

  mfg::EmbedOptimState state = mfg::EmbedOptimState::init(params.embed_dim);
  const std::string resume = e.at("resume_buffer").get<std::string>();
  if (!resume.empty()) {
    if (!fs::exists(resume)) throw MissingArtifact("resume buffer not found: " + resume);
    state.buffer = mfg::buffer_from_json(mfg::read_json_file(resume));
    for (const auto& entry : state.buffer)
      state.next_order = std::max(state.next_order, entry.order + 1);
  }

  mfg::CsvWriter log({"epoch", "mean_performance", "buffer_mean", "best_performance",
                      "train_loss", "embed_norm", "degenerate"});
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const mfg::EpochStats st = mfg::embed_optim_epoch(
        state, task, params, sched, cfg, mfg::Rng::mix(ctx.seed, 0x65706f63ULL + epoch), n,
        ctx.jobs);
    log.row({std::to_string(st.epoch), mfg::csv_double(st.mean_performance),
             mfg::csv_double(st.buffer_mean), mfg::csv_double(st.best_performance),
             mfg::csv_double(st.train_loss), mfg::csv_double(st.embed_norm),
             std::to_string(st.degenerate)});
    ctx.note("epoch " + std::to_string(st.epoch) + " mean " +
             mfg::csv_double(st.mean_performance) + " best " +
             mfg::csv_double(st.best_performance));
  }
  mfg::write_json_file(ctx.dir / "embedding.json", mfg::embedding_to_json(state.c));
  mfg::write_json_file(ctx.dir / "buffer.json", mfg::buffer_to_json(state.buffer));
  log.save(ctx.dir / "epoch_log.csv");
  log.save(ctx.dir / "metrics.csv");
  mfg::write_manifest(ctx.dir);
  return 0;
}

int cmd_codesign(RunContext& ctx) {
  const auto& c = ctx.cfg.at("codesign");
  const mfg::DenoiserParams params = require_checkpoint(c);
  const mfg::Embedding cond = embedding_from_file_or_null(c, params.embed_dim);
  const mfg::NoiseSchedule sched = schedule_from(ctx.cfg);
  const mfg::TaskSpec task = task_from(ctx.cfg);
  const int n = ctx.cfg.at("points_per_shape").get<int>();

  mfg::CodesignConfig cc = mfg::codesign_config_for(task.name);
  if (c.at("t_max").get<int>() >= 0) cc.t_max = c.at("t_max").get<int>();
  cc.t_min = c.at("t_min").get<int>();
  if (c.at("delta_t").get<int>() > 0) cc.delta_t = c.at("delta_t").get<int>();
  if (c.at("mcmc_steps").get<int>() >= 0) cc.mcmc_steps = c.at("mcmc_steps").get<int>();
  cc.sigma_rule = c.at("sigma_rule").get<std::string>();
  cc.sigma_const = c.at("sigma_const").get<double>();
  cc.kappa = c.at("kappa").get<double>();
  if (c.at("gamma").get<double>() >= 0.0) cc.gamma = c.at("gamma").get<double>();
  cc.renorm_scale = c.at("renorm_scale").get<double>();
  cc.noise_eq6_form = c.at("noise_eq6_form").get<bool>();
  cc.reset_controller = c.at("reset_controller").get<bool>();
  cc.guidance = c.at("guidance").get<double>();

  const int count = c.at("count").get<int>();
  const bool compare_plain = c.at("compare_plain").get<bool>();

  fs::create_directories(ctx.dir / "samples");
  fs::create_directories(ctx.dir / "controllers");
  std::vector<mfg::CodesignResult> results(count);
  std::vector<double> plain_perf(count, 0.0);
  mfg::parallel_for(count, ctx.jobs, [&](int64_t i) {
    mfg::Rng rng(mfg::Rng::mix(ctx.seed, 0x73616d70ULL + i));
    results[i] = mfg::sample_codesign(params, n, cond, task, cc, sched, rng);
    if (compare_plain) {
      mfg::Rng rng_plain(mfg::Rng::mix(ctx.seed, 0x73616d70ULL + i));
      const mfg::PointSet plain = mfg::sample(params, n, cond, cc.guidance, sched, rng_plain);
      plain_perf[i] = mfg::evaluate(plain, task).performance;
    }
  });

  mfg::CsvWriter metrics({"run_id", "task", "sample_id", "metric", "seed", "plain_metric",
                          "mcmc_invocations", "degenerate"});
  for (int i = 0; i < count; ++i) {
    char name[40];
    std::snprintf(name, sizeof(name), "sample_%04d.json", i);
    mfg::write_json_file(ctx.dir / "samples" / name,
                         json{{"seed", ctx.seed}, {"index", i},
                              {"points", mfg::points_to_json(results[i].x0)}});
    std::snprintf(name, sizeof(name), "controller_%04d.json", i);
    mfg::write_json_file(ctx.dir / "controllers" / name,
                         mfg::controller_to_json(results[i].controller));
    metrics.row({"codesign", mfg::task_name(task.name), std::to_string(i),
                 mfg::csv_double(results[i].performance), std::to_string(ctx.seed),
                 compare_plain ? mfg::csv_double(plain_perf[i]) : "",
                 std::to_string(results[i].mcmc_invocations),
                 results[i].degenerate ? "1" : "0"});
    ctx.note("sample " + std::to_string(i) + " performance " +
             mfg::csv_double(results[i].performance) +
             (compare_plain ? " plain " + mfg::csv_double(plain_perf[i]) : ""));
  }
  metrics.save(ctx.dir / "metrics.csv");
  mfg::write_manifest(ctx.dir);
  return 0;
}

int cmd_evaluate(RunContext& ctx) {
  const auto& e = ctx.cfg.at("evaluate");
  const mfg::TaskSpec task = task_from(ctx.cfg);
  const std::string samples = e.at("samples").get<std::string>();
  if (samples.empty()) throw MissingArtifact("evaluate: samples not set");
  if (!fs::exists(samples)) throw MissingArtifact("samples path not found: " + samples);

  std::vector<fs::path> files;
  if (fs::is_directory(samples)) {
    for (const auto& f : fs::directory_iterator(samples))
      if (f.path().extension() == ".json" &&
          f.path().filename().string().rfind("sample_", 0) == 0)
        files.push_back(f.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(samples);
  }
  if (files.empty()) throw MissingArtifact("no sample files under " + samples);

  const std::string controllers = e.at("controllers").get<std::string>();

  std::vector<double> metric(files.size());
  std::vector<uint8_t> degenerate(files.size(), 0);
  mfg::parallel_for(static_cast<int64_t>(files.size()), ctx.jobs, [&](int64_t i) {
    const json j = mfg::read_json_file(files[i]);
    const mfg::PointSet x0 = mfg::points_from_json(j.at("points"));
    mfg::ControllerParams controller = task.prescribed;
    if (!controllers.empty()) {
      char name[40];
      std::snprintf(name, sizeof(name), "controller_%04zu.json", static_cast<size_t>(i));
      const fs::path cpath = fs::path(controllers) / name;
      if (fs::exists(cpath)) controller = mfg::controller_from_json(mfg::read_json_file(cpath));
    }
    try {
      const mfg::RobotDesign design =
          mfg::robotize_sample(x0, mfg::robotize_config_for(task), task.ws_map());
      metric[i] = mfg::evaluate_design(design, task, controller).performance;
    } catch (const mfg::DegenerateGeometry&) {
      metric[i] = task.sentinel;
      degenerate[i] = 1;
    }
  });

  mfg::CsvWriter csv({"run_id", "task", "sample_id", "metric", "seed"});
  for (size_t i = 0; i < files.size(); ++i)
    csv.row({"evaluate", mfg::task_name(task.name), std::to_string(i),
             mfg::csv_double(metric[i]), std::to_string(ctx.seed)});
  csv.save(ctx.dir / "metrics.csv");
  mfg::write_manifest(ctx.dir);
  ctx.note("evaluated " + std::to_string(files.size()) + " samples");
  return 0;
}

int cmd_baseline(RunContext& ctx) {
  const auto& b = ctx.cfg.at("baseline");
  const mfg::TaskSpec task = task_from(ctx.cfg);
  mfg::BaselineConfig bc;
  const std::string kind = b.at("kind").get<std::string>();
  if (kind == "voxel")
    bc.kind = mfg::BaselineConfig::Kind::kVoxel;
  else if (kind == "particle")
    bc.kind = mfg::BaselineConfig::Kind::kParticle;
  else
    throw std::invalid_argument("baseline.kind must be voxel or particle");
  bc.lattice_res = b.at("lattice_res").get<int>();
  bc.voxel_res = b.at("voxel_res").get<int>();
  bc.iters = b.at("iters").get<int>();
  bc.restarts = b.at("restarts").get<int>();
  bc.design_lr = b.at("design_lr").get<double>();
  bc.gamma = mfg::codesign_config_for(task.name).gamma;
  bc.seed = ctx.seed;

  ctx.note("running " + kind + " baseline: " + std::to_string(bc.restarts) + " restarts x " +
           std::to_string(bc.iters) + " iters");
  const mfg::BaselineOutcome out = mfg::run_baseline(task, bc, ctx.jobs);

  mfg::CsvWriter csv({"run_id", "task", "restart", "init_metric", "best_metric", "seed"});
  for (int r = 0; r < bc.restarts; ++r)
    csv.row({kind, mfg::task_name(task.name), std::to_string(r),
             mfg::csv_double(out.runs[r].init_performance),
             mfg::csv_double(out.runs[r].best_performance), std::to_string(ctx.seed)});
  csv.save(ctx.dir / "metrics.csv");
  mfg::write_json_file(ctx.dir / "summary.json",
                       json{{"kind", kind},
                            {"task", mfg::task_name(task.name)},
                            {"best", out.best},
                            {"best_restart", out.best_restart}});
  mfg::write_manifest(ctx.dir);
  ctx.note("best-of-" + std::to_string(bc.restarts) + ": " + mfg::csv_double(out.best));
  return 0;
}

int cmd_render(RunContext& ctx) {
  const auto& r = ctx.cfg.at("render");
  const std::string sample_path = r.at("sample").get<std::string>();
  const std::string plot_csv = r.at("plot_csv").get<std::string>();
  if (sample_path.empty() && plot_csv.empty())
    throw MissingArtifact("render: set render.sample or render.plot_csv");

  if (!sample_path.empty()) {
    if (!fs::exists(sample_path)) throw MissingArtifact("sample not found: " + sample_path);
    const mfg::TaskSpec task = task_from(ctx.cfg);
    const json j = mfg::read_json_file(sample_path);
    const mfg::PointSet x0 = mfg::points_from_json(j.at("points"));
    mfg::ControllerParams controller = task.prescribed;
    const std::string cpath = r.at("controller").get<std::string>();
    if (!cpath.empty()) {
      if (!fs::exists(cpath)) throw MissingArtifact("controller not found: " + cpath);
      controller = mfg::controller_from_json(mfg::read_json_file(cpath));
    }
    const mfg::RobotDesign design =
        mfg::robotize_sample(x0, mfg::robotize_config_for(task), task.ws_map());
    const mfg::SimScene scene = mfg::make_scene(task, design);
    mfg::MpmSolver solver(scene, mfg::make_mpm_config(task, design.youngs_modulus));
    const mfg::RolloutResult ro = solver.rollout(controller);

    const int every = std::max(1, r.at("every").get<int>());
    fs::create_directories(ctx.dir / "frames");
    mfg::CsvWriter trace({"step", "centroid_x", "centroid_y", "metric_so_far"});
    for (size_t f = 0; f < ro.frames.size(); ++f) {
      mfg::Vec2 c{};
      int robots = 0;
      for (int p = 0; p < scene.size(); ++p) {
        if (scene.glued[p] || scene.is_object[p]) continue;
        c += ro.frames[f][p];
        ++robots;
      }
      c = c / std::max(1, robots);
      trace.row({std::to_string(f), mfg::csv_double(c.x), mfg::csv_double(c.y),
                 mfg::csv_double(std::abs(c.x - 0.0))});
      if (f % every == 0 || f + 1 == ro.frames.size()) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04zu.svg", f);
        mfg::write_text_file(ctx.dir / "frames" / name,
                             mfg::render_frame_svg(ro.frames[f], scene, mfg::kGroundY));
      }
    }
    trace.save(ctx.dir / "trace.csv");
    mfg::CsvWriter metrics({"run_id", "task", "sample_id", "metric", "seed"});
    metrics.row({"render", mfg::task_name(task.name), "0",
                 mfg::csv_double(mfg::task_metric(task, ro, scene)),
                 std::to_string(ctx.seed)});
    metrics.save(ctx.dir / "metrics.csv");
    ctx.note("rendered " + std::to_string(ro.frames.size()) + " frames, metric " +
             mfg::csv_double(mfg::task_metric(task, ro, scene)) +
             (ro.collider_contact ? " (collider contact)" : ""));
  }

  if (!plot_csv.empty()) {
    if (!fs::exists(plot_csv)) throw MissingArtifact("plot csv not found: " + plot_csv);
    const std::string x_col = r.at("plot_x").get<std::string>();
    const std::string y_col = r.at("plot_y").get<std::string>();
    std::ifstream f(plot_csv);
    std::string header;
    std::getline(f, header);
    std::vector<std::string> cols;
    size_t start = 0;
    while (start <= header.size()) {
      const size_t comma = header.find(',', start);
      cols.push_back(header.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    int xi = -1, yi = -1;
    for (size_t i = 0; i < cols.size(); ++i) {
      if (cols[i] == x_col) xi = static_cast<int>(i);
      if (cols[i] == y_col) yi = static_cast<int>(i);
    }
    if (xi < 0 || yi < 0)
      throw std::invalid_argument("plot columns not found: " + x_col + ", " + y_col);
    mfg::PlotSeries series;
    series.label = y_col;
    std::string line;
    while (std::getline(f, line)) {
      std::vector<std::string> cells;
      size_t at = 0;
      while (at <= line.size()) {
        const size_t comma = line.find(',', at);
        cells.push_back(line.substr(at, comma - at));
        if (comma == std::string::npos) break;
        at = comma + 1;
      }
      if (static_cast<int>(cells.size()) <= std::max(xi, yi)) continue;
      series.x.push_back(std::stod(cells[xi]));
      series.y.push_back(std::stod(cells[yi]));
    }
    mfg::write_text_file(ctx.dir / "plot.svg",
                         mfg::render_line_plot_svg({series}, x_col, y_col));
    ctx.note("plot written");
  }
  mfg::write_manifest(ctx.dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-steered point-set diffusion for soft robot co-design"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int jobs_flag = -1;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config file")->expected(1);
  app.add_option("--out", out_dir, "output root (default: $MFG_RUN_DIR or ./runs)");
  app.add_option("--jobs", jobs_flag, "parallel worker count (default: all cores)");
  app.add_option("--set", overrides, "override config entries, e.g. codesign.kappa=5e3");

  const std::vector<std::pair<std::string, int (*)(RunContext&)>> commands = {
      {"gen-corpus", cmd_gen_corpus},   {"train", cmd_train},
      {"sample", cmd_sample},           {"optimize-embedding", cmd_optimize_embedding},
      {"codesign", cmd_codesign},       {"evaluate", cmd_evaluate},
      {"baseline", cmd_baseline},       {"render", cmd_render},
  };
  for (const auto& [name, fn] : commands) app.add_subcommand(name)->fallthrough();
  auto* show_config = app.add_subcommand("default-config", "print the default config");
  show_config->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    json cfg = default_config();
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) {
        std::cerr << "config file not found: " << config_path << "\n";
        return 2;
      }
      merge_into(cfg, mfg::json::parse(mfg::read_text_file(config_path)));
    }
    for (const std::string& kv : overrides) apply_override(cfg, kv);
    if (jobs_flag > 0) cfg["jobs"] = jobs_flag;

    if (show_config->parsed()) {
      std::cout << cfg.dump(2) << "\n";
      return 0;
    }
    for (const auto& [name, fn] : commands) {
      if (app.get_subcommand(name)->parsed()) {
        RunContext ctx = open_run(name, cfg, out_dir);
        ctx.note("command: " + name);
        return fn(ctx);
      }
    }
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
}
