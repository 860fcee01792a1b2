// Artifact persistence: JSON shapes/designs/embeddings, the binary denoiser
// checkpoint, CSV metric logs, and content-hash manifests.
//
// Artifacts never contain timestamps; reruns with identical configs and
// seeds must produce byte-identical files.
#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfg/codesign.hpp"
#include "mfg/denoiser.hpp"
#include "mfg/pointset.hpp"
#include "mfg/robotize.hpp"
#include "mfg/shapes.hpp"

namespace mfg {

using json = nlohmann::ordered_json;

// --------------------------------------------------------------------------
// JSON conversions.
// --------------------------------------------------------------------------

inline json points_to_json(const PointSet& ps) {
  json arr = json::array();
  for (const Vec2& p : ps) arr.push_back({p.x, p.y});
  return arr;
}

inline PointSet points_from_json(const json& arr) {
  PointSet ps;
  ps.reserve(arr.size());
  for (const auto& row : arr) ps.push_back({row.at(0).get<double>(), row.at(1).get<double>()});
  return ps;
}

inline json shape_spec_to_json(const ShapeSpec& spec) {
  return json{{"family", family_name(spec.family)},
              {"params", spec.params},
              {"seed", spec.seed}};
}

inline ShapeSpec shape_spec_from_json(const json& j) {
  ShapeSpec spec;
  spec.family = family_from_name(j.at("family").get<std::string>());
  spec.params = j.at("params").get<std::vector<double>>();
  spec.seed = j.at("seed").get<uint64_t>();
  return spec;
}

inline json corpus_item_to_json(const CorpusItem& item) {
  return json{{"spec", shape_spec_to_json(item.spec)}, {"points", points_to_json(item.points)}};
}

inline CorpusItem corpus_item_from_json(const json& j) {
  return {shape_spec_from_json(j.at("spec")), points_from_json(j.at("points"))};
}

inline json embedding_to_json(const Embedding& e) {
  return json{{"vec", e.vec}, {"is_null", e.is_null}};
}

inline Embedding embedding_from_json(const json& j) {
  Embedding e;
  e.vec = j.at("vec").get<std::vector<double>>();
  e.is_null = j.at("is_null").get<bool>();
  return e;
}

inline json design_to_json(const RobotDesign& d) {
  json fibers = json::array();
  for (const Vec2& f : d.fiber) fibers.push_back({f.x, f.y});
  return json{{"points", points_to_json(d.points)},
              {"shape_points", points_to_json(d.shape_points)},
              {"actuator", d.actuator},
              {"n_actuators", d.n_actuators},
              {"fiber", fibers},
              {"youngs_modulus", d.youngs_modulus},
              {"poisson_ratio", d.poisson_ratio},
              {"mass_density", d.mass_density},
              {"particle_volume", d.particle_volume},
              {"ws_scale", {d.ws.scale.x, d.ws.scale.y}},
              {"ws_offset", {d.ws.offset.x, d.ws.offset.y}},
              {"report",
               {{"grid_res", d.report.grid_res},
                {"component_count", d.report.component_count},
                {"chosen_component_size", d.report.chosen_component_size},
                {"fill_ratio", d.report.fill_ratio}}}};
}

inline RobotDesign design_from_json(const json& j) {
  RobotDesign d;
  d.points = points_from_json(j.at("points"));
  d.shape_points = points_from_json(j.at("shape_points"));
  d.actuator = j.at("actuator").get<std::vector<int>>();
  d.n_actuators = j.at("n_actuators").get<int>();
  for (const auto& row : j.at("fiber"))
    d.fiber.push_back({row.at(0).get<double>(), row.at(1).get<double>()});
  d.youngs_modulus = j.at("youngs_modulus").get<double>();
  d.poisson_ratio = j.at("poisson_ratio").get<double>();
  d.mass_density = j.at("mass_density").get<double>();
  d.particle_volume = j.at("particle_volume").get<double>();
  d.ws.scale = {j.at("ws_scale").at(0).get<double>(), j.at("ws_scale").at(1).get<double>()};
  d.ws.offset = {j.at("ws_offset").at(0).get<double>(), j.at("ws_offset").at(1).get<double>()};
  d.report.grid_res = j.at("report").at("grid_res").get<int>();
  d.report.component_count = j.at("report").at("component_count").get<int>();
  d.report.chosen_component_size = j.at("report").at("chosen_component_size").get<int>();
  d.report.fill_ratio = j.at("report").at("fill_ratio").get<double>();
  return d;
}

inline json controller_to_json(const ControllerParams& cp) {
  json j;
  switch (cp.kind) {
    case ControllerParams::Kind::kNone: j["kind"] = "none"; break;
    case ControllerParams::Kind::kSine: j["kind"] = "sine"; break;
    case ControllerParams::Kind::kSequence: j["kind"] = "sequence"; break;
  }
  if (cp.kind == ControllerParams::Kind::kSine) {
    json waves = json::array();
    for (const SineWave& s : cp.sine)
      waves.push_back({{"amplitude", s.amplitude},
                       {"frequency", s.frequency},
                       {"phase", s.phase},
                       {"bias", s.bias}});
    j["sine"] = waves;
  } else if (cp.kind == ControllerParams::Kind::kSequence) {
    j["seq"] = cp.seq;
  }
  return j;
}

inline ControllerParams controller_from_json(const json& j) {
  ControllerParams cp;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "none") {
    cp.kind = ControllerParams::Kind::kNone;
  } else if (kind == "sine") {
    cp.kind = ControllerParams::Kind::kSine;
    for (const auto& w : j.at("sine"))
      cp.sine.push_back({w.at("amplitude").get<double>(), w.at("frequency").get<double>(),
                         w.at("phase").get<double>(), w.at("bias").get<double>()});
  } else if (kind == "sequence") {
    cp.kind = ControllerParams::Kind::kSequence;
    cp.seq = j.at("seq").get<std::vector<std::vector<double>>>();
  } else {
    throw std::invalid_argument("unknown controller kind: " + kind);
  }
  return cp;
}

inline json buffer_to_json(const std::vector<BufferEntry>& buffer) {
  json arr = json::array();
  for (const BufferEntry& e : buffer)
    arr.push_back({{"x0", points_to_json(e.x0)},
                   {"performance", e.performance},
                   {"epoch_created", e.epoch_created},
                   {"order", e.order}});
  return arr;
}

inline std::vector<BufferEntry> buffer_from_json(const json& arr) {
  std::vector<BufferEntry> out;
  for (const auto& j : arr) {
    BufferEntry e;
    e.x0 = points_from_json(j.at("x0"));
    e.performance = j.at("performance").get<double>();
    e.epoch_created = j.at("epoch_created").get<int>();
    e.order = j.at("order").get<int64_t>();
    out.push_back(std::move(e));
  }
  return out;
}

// --------------------------------------------------------------------------
// File helpers.
// --------------------------------------------------------------------------

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

inline json read_json_file(const std::filesystem::path& path) {
  return json::parse(read_text_file(path));
}

// --------------------------------------------------------------------------
// Checkpoint: little-endian binary.
// Header: magic "MFG1", u32 version, u32 embed_dim, u32 hidden, u32 flags
// (bit 0: optimizer state present), u64 trainable parameter count.
// Body: frequency table (embed_dim/2 doubles), parameters, then optionally
// Adam first/second moments and the step counter.
// --------------------------------------------------------------------------

constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const DenoiserParams& p,
                            const AdamState* adam = nullptr) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  auto put = [&](const void* data, size_t bytes) {
    f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  };
  f.write("MFG1", 4);
  const uint32_t version = kCheckpointVersion;
  const uint32_t e = static_cast<uint32_t>(p.embed_dim);
  const uint32_t h = static_cast<uint32_t>(p.hidden);
  const uint32_t flags = adam ? 1u : 0u;
  const uint64_t count = p.w.size();
  put(&version, 4);
  put(&e, 4);
  put(&h, 4);
  put(&flags, 4);
  put(&count, 8);
  put(p.freq.data(), p.freq.size() * sizeof(double));
  put(p.w.data(), p.w.size() * sizeof(double));
  if (adam) {
    if (adam->m.size() != p.w.size() || adam->v.size() != p.w.size())
      throw std::invalid_argument("save_checkpoint: optimizer state size mismatch");
    put(adam->m.data(), adam->m.size() * sizeof(double));
    put(adam->v.data(), adam->v.size() * sizeof(double));
    put(&adam->step, 8);
  }
}

inline DenoiserParams load_checkpoint(const std::filesystem::path& path,
                                      AdamState* adam = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  auto get = [&](void* data, size_t bytes) {
    f.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) throw std::runtime_error("truncated checkpoint: " + path.string());
  };
  char magic[4];
  get(magic, 4);
  if (std::memcmp(magic, "MFG1", 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path.string());
  uint32_t version = 0, e = 0, h = 0, flags = 0;
  uint64_t count = 0;
  get(&version, 4);
  get(&e, 4);
  get(&h, 4);
  get(&flags, 4);
  get(&count, 8);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version");
  DenoiserParams p;
  p.embed_dim = static_cast<int>(e);
  p.hidden = static_cast<int>(h);
  p.layout = DenoiserLayout(p.embed_dim, p.hidden);
  if (count != p.layout.total) throw std::runtime_error("checkpoint parameter count mismatch");
  p.freq.resize(e / 2);
  p.w.resize(count);
  get(p.freq.data(), p.freq.size() * sizeof(double));
  get(p.w.data(), p.w.size() * sizeof(double));
  if ((flags & 1u) && adam) {
    adam->m.resize(count);
    adam->v.resize(count);
    get(adam->m.data(), count * sizeof(double));
    get(adam->v.data(), count * sizeof(double));
    get(&adam->step, 8);
  }
  return p;
}

// --------------------------------------------------------------------------
// CSV with locale-independent, round-trippable doubles.
// --------------------------------------------------------------------------

inline std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(std::move(header)) {
    for (size_t i = 0; i < columns_.size(); ++i)
      body_ += columns_[i] + (i + 1 < columns_.size() ? "," : "\n");
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_.size())
      throw std::invalid_argument("csv row arity mismatch");
    for (size_t i = 0; i < cells.size(); ++i)
      body_ += cells[i] + (i + 1 < cells.size() ? "," : "\n");
  }

  const std::string& str() const { return body_; }
  void save(const std::filesystem::path& path) const { write_text_file(path, body_); }

 private:
  std::vector<std::string> columns_;
  std::string body_;
};

// --------------------------------------------------------------------------
// Run manifest: every produced file with its FNV-1a64 content hash.
// --------------------------------------------------------------------------

inline void write_manifest(const std::filesystem::path& run_dir,
                           const std::vector<std::string>& exclude = {"manifest.json",
                                                                      "run.log"}) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = std::filesystem::relative(entry.path(), run_dir).string();
    bool skip = false;
    for (const std::string& e : exclude) skip = skip || rel == e;
    if (!skip) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  json manifest = json::array();
  for (const auto& path : files) {
    const std::string content = read_text_file(path);
    char hash[20];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(content)));
    manifest.push_back({{"file", std::filesystem::relative(path, run_dir).string()},
                        {"fnv1a64", hash},
                        {"bytes", content.size()}});
  }
  write_json_file(run_dir / "manifest.json", json{{"files", manifest}});
}

}  // namespace mfg
