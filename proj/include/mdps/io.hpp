#pragma once

// File formats and persistence: JSON checkpoints for the parameter store,
// line-delimited JSON datasets with a hashed manifest, CSV metric tables, and
// atomic writes (temp + rename) so partial files never appear.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdps/nn.hpp"
#include "mdps/simulator.hpp"

namespace mdps {

using json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kDatasetVersion = 1;

// ---------------------------------------------------------------------------
// Low-level file helpers.

inline void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("atomic_write_file: cannot open " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("atomic_write_file: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_file: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::uint64_t fnv1a_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned name -> values map; exact round-trip.

inline void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  json j;
  j["format_version"] = kCheckpointVersion;
  json params = json::object();
  for (const auto& b : store.blocks()) {
    const auto s = store.slice(b.name);
    params[b.name] = std::vector<double>(s.begin(), s.end());
  }
  j["params"] = std::move(params);
  atomic_write_file(path, j.dump());
}

/// Load values into an already-registered store; block names and sizes must
/// match exactly.
inline void load_checkpoint(ParamStore& store, const std::filesystem::path& path) {
  const json j = json::parse(read_file(path));
  if (j.at("format_version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported format version");
  }
  const json& params = j.at("params");
  for (const auto& b : store.blocks()) {
    const auto it = params.find(b.name);
    if (it == params.end()) {
      throw std::runtime_error("load_checkpoint: missing block " + b.name);
    }
    const auto values = it->get<std::vector<double>>();
    if (values.size() != b.size) {
      throw std::runtime_error("load_checkpoint: size mismatch for block " + b.name);
    }
    auto s = store.slice(b.name);
    for (std::size_t i = 0; i < values.size(); ++i) s[i] = values[i];
  }
}

// ---------------------------------------------------------------------------
// Sim config and dataset files.

inline json sim_config_to_json(const SimConfig& cfg) {
  return json{{"arena", {cfg.arena.x_min, cfg.arena.x_max, cfg.arena.y_min, cfg.arena.y_max}},
              {"radar", {cfg.radar_x, cfg.radar_y}},
              {"alpha", cfg.alpha},
              {"kappa_obs", cfg.kappa_obs},
              {"speeds", cfg.speeds},
              {"dt", cfg.dt},
              {"horizon", cfg.horizon},
              {"waypoint_tolerance", cfg.waypoint_tolerance},
              {"max_turn", cfg.max_turn},
              {"waypoint_margin", cfg.waypoint_margin},
              {"loss_every", cfg.loss_every}};
}

inline SimConfig sim_config_from_json(const json& j) {
  SimConfig cfg;
  if (j.contains("arena")) {
    cfg.arena.x_min = j["arena"][0];
    cfg.arena.x_max = j["arena"][1];
    cfg.arena.y_min = j["arena"][2];
    cfg.arena.y_max = j["arena"][3];
  }
  if (j.contains("radar")) {
    cfg.radar_x = j["radar"][0];
    cfg.radar_y = j["radar"][1];
  }
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.kappa_obs = j.value("kappa_obs", cfg.kappa_obs);
  if (j.contains("speeds")) cfg.speeds = j["speeds"].get<std::vector<double>>();
  cfg.dt = j.value("dt", cfg.dt);
  cfg.horizon = j.value("horizon", cfg.horizon);
  cfg.waypoint_tolerance = j.value("waypoint_tolerance", cfg.waypoint_tolerance);
  cfg.max_turn = j.value("max_turn", cfg.max_turn);
  cfg.waypoint_margin = j.value("waypoint_margin", cfg.waypoint_margin);
  cfg.loss_every = j.value("loss_every", cfg.loss_every);
  return cfg;
}

namespace detail {
inline std::string trajectory_lines(const std::vector<Trajectory>& split) {
  std::string out;
  for (const Trajectory& tr : split) {
    json rec;
    json states = json::array();
    for (const State3& s : tr.states) states.push_back({s.x, s.y, s.theta.rad()});
    rec["states"] = std::move(states);
    rec["obs"] = tr.observations;
    rec["loss_mask"] = tr.loss_mask;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Trajectory> parse_trajectory_lines(const std::string& bytes) {
  std::vector<Trajectory> split;
  std::istringstream in(bytes);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    Trajectory tr;
    for (const auto& s : rec.at("states")) {
      tr.states.push_back(State3{s[0].get<double>(), s[1].get<double>(),
                                 Angle(s[2].get<double>())});
    }
    tr.observations = rec.at("obs").get<std::vector<double>>();
    tr.loss_mask = rec.at("loss_mask").get<std::vector<std::size_t>>();
    split.push_back(std::move(tr));
  }
  return split;
}
}  // namespace detail

/// Writes train/val/eval JSONL files plus a manifest holding the config, the
/// seed, split counts, and per-split content hashes.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format_version"] = kDatasetVersion;
  manifest["seed"] = ds.seed;
  manifest["config"] = sim_config_to_json(ds.config);
  json counts, hashes;
  const std::pair<const char*, const std::vector<Trajectory>*> splits[3] = {
      {"train", &ds.train}, {"val", &ds.val}, {"eval", &ds.eval}};
  for (const auto& [name, split] : splits) {
    const std::string lines = detail::trajectory_lines(*split);
    atomic_write_file(dir / (std::string(name) + ".jsonl"), lines);
    counts[name] = split->size();
    hashes[name] = hash_hex(fnv1a_hash(lines));
  }
  manifest["counts"] = std::move(counts);
  manifest["hashes"] = std::move(hashes);
  atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Loads a dataset directory and verifies the manifest hashes.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = json::parse(read_file(dir / "manifest.json"));
  if (manifest.at("format_version").get<int>() != kDatasetVersion) {
    throw std::runtime_error("load_dataset: unsupported format version");
  }
  Dataset ds;
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.config = sim_config_from_json(manifest.at("config"));
  const std::pair<const char*, std::vector<Trajectory>*> splits[3] = {
      {"train", &ds.train}, {"val", &ds.val}, {"eval", &ds.eval}};
  for (const auto& [name, split] : splits) {
    const std::string bytes = read_file(dir / (std::string(name) + ".jsonl"));
    const std::string expect = manifest.at("hashes").at(name).get<std::string>();
    if (hash_hex(fnv1a_hash(bytes)) != expect) {
      throw std::runtime_error(std::string("load_dataset: hash mismatch for split ") + name);
    }
    *split = detail::parse_trajectory_lines(bytes);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV tables.

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      if (i) buf_ += ',';
      buf_ += columns_[i];
    }
    buf_ += '\n';
  }

  void row(std::span<const std::string> cells) {
    if (cells.size() != columns_.size()) throw std::invalid_argument("CsvWriter: cell count");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) buf_ += ',';
      buf_ += cells[i];
    }
    buf_ += '\n';
  }

  const std::string& bytes() const { return buf_; }

 private:
  std::vector<std::string> columns_;
  std::string buf_;
};

/// Shortest round-trip double formatting (matches JSON number output).
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double parsed = 0.0;
  std::sscanf(buf, "%lf", &parsed);
  if (parsed == v) {
    for (int prec = 1; prec < 17; ++prec) {
      char b2[32];
      std::snprintf(b2, sizeof(b2), "%.*g", prec, v);
      std::sscanf(b2, "%lf", &parsed);
      if (parsed == v) return b2;
    }
  }
  return buf;
}

}  // namespace mdps
