#pragma once

// Experiment orchestration: (method x resampler x seed) grids over one
// dataset, raw per-sequence metric tables, box-plot summaries, and content-
// hash based resumption.  Aggregates are always recomputable from the raw
// CSV files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mdps/eval.hpp"
#include "mdps/io.hpp"
#include "mdps/train.hpp"

namespace mdps {

// ---------------------------------------------------------------------------
// Config (de)serialization.

inline json train_config_to_json(const TrainConfig& tc) {
  return json{{"particles", tc.particles},
              {"batch", tc.batch},
              {"grad_clip", tc.grad_clip},
              {"truncate_every", tc.truncate_every},
              {"soft_lambda", tc.soft_lambda},
              {"threads", tc.threads},
              {"stage_filter", {{"lr", tc.stage_filter.lr}, {"epochs", tc.stage_filter.epochs}}},
              {"stage_filter_bw_epochs", tc.stage_filter_bw_epochs},
              {"stage_smoother",
               {{"lr", tc.stage_smoother.lr}, {"epochs", tc.stage_smoother.epochs}}},
              {"stage_joint", {{"lr", tc.stage_joint.lr}, {"epochs", tc.stage_joint.epochs}}},
              {"stage_ffbs", {{"lr", tc.stage_ffbs.lr}, {"epochs", tc.stage_ffbs.epochs}}},
              {"hidden", tc.hyper.hidden},
              {"init_bw_resample",
               {tc.hyper.init_bw_resample.sigma_x, tc.hyper.init_bw_resample.sigma_y,
                tc.hyper.init_bw_resample.kappa_theta}},
              {"init_bw_posterior",
               {tc.hyper.init_bw_posterior.sigma_x, tc.hyper.init_bw_posterior.sigma_y,
                tc.hyper.init_bw_posterior.kappa_theta}},
              {"init_bw_smooth",
               {tc.hyper.init_bw_smooth.sigma_x, tc.hyper.init_bw_smooth.sigma_y,
                tc.hyper.init_bw_smooth.kappa_theta}}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig tc;
  tc.particles = j.value("particles", tc.particles);
  tc.batch = j.value("batch", tc.batch);
  tc.grad_clip = j.value("grad_clip", tc.grad_clip);
  tc.truncate_every = j.value("truncate_every", tc.truncate_every);
  tc.soft_lambda = j.value("soft_lambda", tc.soft_lambda);
  tc.threads = j.value("threads", tc.threads);
  const auto stage = [&](const char* key, StageConfig def) {
    if (!j.contains(key)) return def;
    return StageConfig{j[key].value("lr", def.lr), j[key].value("epochs", def.epochs)};
  };
  tc.stage_filter = stage("stage_filter", tc.stage_filter);
  tc.stage_filter_bw_epochs = j.value("stage_filter_bw_epochs", tc.stage_filter_bw_epochs);
  tc.stage_smoother = stage("stage_smoother", tc.stage_smoother);
  tc.stage_joint = stage("stage_joint", tc.stage_joint);
  tc.stage_ffbs = stage("stage_ffbs", tc.stage_ffbs);
  if (j.contains("hidden")) tc.hyper.hidden = j["hidden"].get<std::vector<std::uint32_t>>();
  const auto bw = [&](const char* key, Bandwidth def) {
    if (!j.contains(key)) return def;
    return Bandwidth{j[key][0], j[key][1], j[key][2]};
  };
  tc.hyper.init_bw_resample = bw("init_bw_resample", tc.hyper.init_bw_resample);
  tc.hyper.init_bw_posterior = bw("init_bw_posterior", tc.hyper.init_bw_posterior);
  tc.hyper.init_bw_smooth = bw("init_bw_smooth", tc.hyper.init_bw_smooth);
  return tc;
}

inline json eval_options_to_json(const EvalOptions& eo) {
  json th = json::array();
  for (const auto& t : eo.recall_thresholds) th.push_back({t.pos, t.theta});
  return json{{"particles", eo.particles}, {"seed", eo.seed},
              {"threads", eo.threads},     {"top_k", eo.top_k},
              {"nms_radius_pos", eo.nms_radius_pos},
              {"nms_radius_theta", eo.nms_radius_theta},
              {"soft_lambda", eo.soft_lambda},
              {"recall_thresholds", th}};
}

inline EvalOptions eval_options_from_json(const json& j) {
  EvalOptions eo;
  eo.particles = j.value("particles", eo.particles);
  eo.seed = j.value("seed", eo.seed);
  eo.threads = j.value("threads", eo.threads);
  eo.top_k = j.value("top_k", eo.top_k);
  eo.nms_radius_pos = j.value("nms_radius_pos", eo.nms_radius_pos);
  eo.nms_radius_theta = j.value("nms_radius_theta", eo.nms_radius_theta);
  eo.soft_lambda = j.value("soft_lambda", eo.soft_lambda);
  if (j.contains("recall_thresholds")) {
    eo.recall_thresholds.clear();
    for (const auto& t : j["recall_thresholds"]) {
      eo.recall_thresholds.push_back(RecallThreshold{t[0], t[1]});
    }
  }
  return eo;
}

// ---------------------------------------------------------------------------
// Training entry point for any method, writing checkpoint + model sidecar.

inline void train_method(Method method, Resampler resampler, std::uint64_t seed,
                         const Dataset& dataset, const TrainConfig& tcfg,
                         const std::filesystem::path& out_dir, TrainLog* log = nullptr) {
  std::filesystem::create_directories(out_dir);
  BearingsRig rig(method, tcfg.hyper, dataset.config, seed);
  switch (method) {
    case Method::kMdps:
      train_mdps(rig, tcfg, dataset.train, seed, resampler, out_dir, log);
      break;
    case Method::kMdpf:
    case Method::kMdpfBackward:
    case Method::kTgpf:
    case Method::kSrpf:
      train_filter_baseline(rig, tcfg, dataset.train, seed, resampler, out_dir, log);
      break;
    case Method::kFfbs: {
      fit_ffbs_dynamics(rig, tcfg, dataset.train, seed, log);
      EvalOptions opts;
      opts.particles = tcfg.particles;
      opts.threads = tcfg.threads;
      opts.resampler = resampler;
      tune_ffbs_bandwidth(rig, dataset.val, opts, 30, log);
      save_checkpoint(rig.store, out_dir / "checkpoint.json");
      break;
    }
  }
  json model;
  model["method"] = method_name(method);
  model["resampler"] = resampler_name(resampler);
  model["seed"] = seed;
  model["train_config"] = train_config_to_json(tcfg);
  model["sim"] = sim_config_to_json(dataset.config);
  atomic_write_file(out_dir / "model.json", model.dump(2) + "\n");
  if (log) {
    std::string text;
    for (const auto& line : log->lines) {
      text += line;
      text += '\n';
    }
    atomic_write_file(out_dir / "train_log.txt", text);
  }
}

/// Rebuild a rig from a training output directory and load its checkpoint.
inline BearingsRig load_rig(const std::filesystem::path& dir) {
  const json model = json::parse(read_file(dir / "model.json"));
  const TrainConfig tcfg = train_config_from_json(model.at("train_config"));
  const SimConfig sim = sim_config_from_json(model.at("sim"));
  BearingsRig rig(method_from_name(model.at("method").get<std::string>()), tcfg.hyper, sim,
                  model.value("seed", std::uint64_t{0}));
  load_checkpoint(rig.store, dir / "checkpoint.json");
  return rig;
}

// ---------------------------------------------------------------------------
// Metric files.

inline void write_eval_outputs(const EvalReport& report, const EvalOptions& opts,
                               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> cols{"seq", "mean_nll"};
  for (std::size_t h = 0; h < opts.recall_thresholds.size(); ++h) {
    cols.push_back("recall_top1_" + std::to_string(h));
  }
  for (std::size_t h = 0; h < opts.recall_thresholds.size(); ++h) {
    cols.push_back("recall_top" + std::to_string(opts.top_k) + "_" + std::to_string(h));
  }
  CsvWriter csv(cols);
  for (std::size_t s = 0; s < report.per_seq.size(); ++s) {
    std::vector<std::string> row{std::to_string(s), fmt_double(report.per_seq[s].mean_nll)};
    for (double r : report.per_seq[s].recall_top1) row.push_back(fmt_double(r));
    for (double r : report.per_seq[s].recall_topk) row.push_back(fmt_double(r));
    csv.row(row);
  }
  atomic_write_file(dir / "metrics.csv", csv.bytes());

  // timings are environment-dependent and live in their own file, outside
  // determinism guarantees
  CsvWriter timing({"seq", "wall_ms_per_step"});
  for (std::size_t s = 0; s < report.per_seq.size(); ++s) {
    timing.row(std::vector<std::string>{std::to_string(s),
                                        fmt_double(report.per_seq[s].wall_ms_per_step)});
  }
  atomic_write_file(dir / "timing.csv", timing.bytes());

  json summary;
  summary["n_sequences"] = report.per_seq.size();
  summary["nll"] = {{"mean", report.nll_mean}, {"median", report.nll_median},
                    {"q1", report.nll_q1},     {"q3", report.nll_q3},
                    {"min", report.nll_min},   {"max", report.nll_max}};
  summary["recall_top1_mean"] = report.recall_top1_mean;
  summary["recall_topk_mean"] = report.recall_topk_mean;
  summary["eval_options"] = eval_options_to_json(opts);
  atomic_write_file(dir / "summary.json", summary.dump(2) + "\n");
}

/// Parse a metrics.csv back into per-sequence NLLs.
inline std::vector<double> read_metric_nlls(const std::filesystem::path& csv_path) {
  const std::string bytes = read_file(csv_path);
  std::istringstream in(bytes);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> nlls;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    nlls.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
  }
  return nlls;
}

// ---------------------------------------------------------------------------
// Suite runner.

struct SuiteCell {
  Method method = Method::kMdpf;
  Resampler resampler = Resampler::kStratified;
  std::uint64_t seed = 1;

  std::string dir_name() const {
    return method_name(method) + "_" + resampler_name(resampler) + "_s" + std::to_string(seed);
  }
};

struct SuiteSpec {
  std::filesystem::path dataset_dir;
  std::filesystem::path out_dir;
  TrainConfig train;
  EvalOptions eval;
  std::vector<SuiteCell> cells;
};

inline SuiteSpec suite_spec_from_json(const json& j) {
  SuiteSpec spec;
  spec.dataset_dir = j.at("dataset").get<std::string>();
  spec.out_dir = j.at("out").get<std::string>();
  if (j.contains("train")) spec.train = train_config_from_json(j["train"]);
  if (j.contains("eval")) spec.eval = eval_options_from_json(j["eval"]);
  for (const auto& c : j.at("cells")) {
    SuiteCell cell;
    cell.method = method_from_name(c.at("method").get<std::string>());
    if (c.contains("resampler")) {
      cell.resampler = resampler_from_name(c.at("resampler").get<std::string>());
    }
    cell.seed = c.value("seed", cell.seed);
    spec.cells.push_back(cell);
  }
  return spec;
}

namespace detail {
inline std::string cell_config_hash(const SuiteSpec& spec, const SuiteCell& cell,
                                    const json& dataset_manifest) {
  json j;
  j["train"] = train_config_to_json(spec.train);
  j["eval"] = eval_options_to_json(spec.eval);
  j["cell"] = {{"method", method_name(cell.method)},
               {"resampler", resampler_name(cell.resampler)},
               {"seed", cell.seed}};
  j["dataset_hashes"] = dataset_manifest.at("hashes");
  return hash_hex(fnv1a_hash(j.dump()));
}
}  // namespace detail

inline json export_stats(const std::filesystem::path& results_dir);

/// Runs every cell (train + evaluate), skipping cells whose status file
/// already records a completed run with the same config hash.  Failures are
/// recorded per cell and do not stop the suite.
inline json run_experiment_suite(const SuiteSpec& spec) {
  const Dataset dataset = load_dataset(spec.dataset_dir);
  const json manifest = json::parse(read_file(spec.dataset_dir / "manifest.json"));
  std::filesystem::create_directories(spec.out_dir);

  json cells_report = json::array();
  for (const SuiteCell& cell : spec.cells) {
    const std::filesystem::path cell_dir = spec.out_dir / cell.dir_name();
    const std::string config_hash = detail::cell_config_hash(spec, cell, manifest);
    json status;
    const std::filesystem::path status_path = cell_dir / "status.json";
    if (std::filesystem::exists(status_path)) {
      status = json::parse(read_file(status_path));
      if (status.value("status", "") == "done" &&
          status.value("config_hash", "") == config_hash) {
        cells_report.push_back({{"cell", cell.dir_name()}, {"status", "skipped (done)"}});
        continue;
      }
    }
    try {
      TrainLog log;
      train_method(cell.method, cell.resampler, cell.seed, dataset, spec.train, cell_dir, &log);
      BearingsRig rig = load_rig(cell_dir);
      EvalOptions opts = spec.eval;
      opts.resampler = cell.resampler;
      opts.soft_lambda = spec.train.soft_lambda;
      const EvalReport report = evaluate(rig, dataset.eval, opts);
      write_eval_outputs(report, opts, cell_dir);
      status = {{"status", "done"}, {"config_hash", config_hash}};
      atomic_write_file(status_path, status.dump(2) + "\n");
      cells_report.push_back({{"cell", cell.dir_name()}, {"status", "done"}});
    } catch (const std::exception& e) {
      status = {{"status", "failed"}, {"config_hash", config_hash}, {"error", e.what()}};
      atomic_write_file(status_path, status.dump(2) + "\n");
      cells_report.push_back(
          {{"cell", cell.dir_name()}, {"status", "failed"}, {"error", e.what()}});
    }
  }

  json summary = export_stats(spec.out_dir);
  summary["cells"] = std::move(cells_report);
  atomic_write_file(spec.out_dir / "suite_summary.json", summary.dump(2) + "\n");
  return summary;
}

/// Recompute the per-method box statistics purely from the raw metric files.
inline json export_stats(const std::filesystem::path& results_dir) {
  struct Group {
    std::vector<std::uint64_t> seeds;
    std::vector<double> run_medians;
  };
  std::map<std::string, Group> groups;
  for (const auto& entry : std::filesystem::directory_iterator(results_dir)) {
    if (!entry.is_directory()) continue;
    const auto metrics = entry.path() / "metrics.csv";
    const auto model = entry.path() / "model.json";
    if (!std::filesystem::exists(metrics) || !std::filesystem::exists(model)) continue;
    const json m = json::parse(read_file(model));
    const std::string key =
        m.at("method").get<std::string>() + "_" + m.at("resampler").get<std::string>();
    const std::vector<double> nlls = read_metric_nlls(metrics);
    if (nlls.empty()) continue;
    groups[key].seeds.push_back(m.value("seed", std::uint64_t{0}));
    groups[key].run_medians.push_back(quantile(nlls, 0.5));
  }
  json out;
  json methods = json::object();
  for (auto& [key, group] : groups) {
    std::vector<double> med = group.run_medians;
    methods[key] = {{"seeds", group.seeds},
                    {"run_median_nlls", group.run_medians},
                    {"median", quantile(med, 0.5)},
                    {"q1", quantile(med, 0.25)},
                    {"q3", quantile(med, 0.75)},
                    {"min", *std::min_element(med.begin(), med.end())},
                    {"max", *std::max_element(med.begin(), med.end())}};
  }
  out["methods"] = std::move(methods);
  return out;
}

}  // namespace mdps
