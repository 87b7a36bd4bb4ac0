// Command-line front end: dataset generation, training, evaluation,
// resampler benchmarks, particle-count ablations, experiment suites, and
// summary export.  Every command is deterministic given its seed and config;
// failures exit nonzero with a JSON error record on stderr.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mdps/eval.hpp"
#include "mdps/io.hpp"
#include "mdps/suite.hpp"
#include "mdps/train.hpp"

namespace {

using namespace mdps;

json load_json_file(const std::string& path) { return json::parse(read_file(path)); }

int cmd_gen_data(const std::string& out, std::uint64_t seed, const std::string& config_path,
                 std::size_t train_n, std::size_t val_n, std::size_t eval_n) {
  SimConfig cfg;
  DatasetCounts counts{train_n, val_n, eval_n};
  if (!config_path.empty()) {
    const json j = load_json_file(config_path);
    if (j.contains("sim")) cfg = sim_config_from_json(j["sim"]);
    if (j.contains("counts")) {
      counts.train = j["counts"].value("train", counts.train);
      counts.val = j["counts"].value("val", counts.val);
      counts.eval = j["counts"].value("eval", counts.eval);
    }
  }
  const Dataset ds = make_dataset(cfg, counts, seed);
  save_dataset(ds, out);
  std::printf("wrote dataset to %s (train %zu, val %zu, eval %zu)\n", out.c_str(),
              ds.train.size(), ds.val.size(), ds.eval.size());
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out, const std::string& method,
              const std::string& resampler, std::uint64_t seed,
              const std::string& config_path, std::size_t particles, std::size_t threads) {
  const Dataset ds = load_dataset(data_dir);
  TrainConfig tcfg;
  if (!config_path.empty()) tcfg = train_config_from_json(load_json_file(config_path));
  if (particles > 0) tcfg.particles = particles;
  if (threads > 0) tcfg.threads = threads;
  TrainLog log;
  train_method(method_from_name(method), resampler_from_name(resampler), seed, ds, tcfg, out,
               &log);
  std::printf("trained %s -> %s\n", method.c_str(), out.c_str());
  return 0;
}

int cmd_evaluate(const std::string& run_dir, const std::string& data_dir,
                 const std::string& split, std::uint64_t seed, const std::string& out,
                 std::size_t particles, std::size_t threads, const std::string& method) {
  const Dataset ds = load_dataset(data_dir);
  BearingsRig rig = load_rig(run_dir);
  if (!method.empty() && method_from_name(method) != rig.method()) {
    throw std::runtime_error("--method does not match the trained model in " + run_dir);
  }
  const json model = json::parse(read_file(std::filesystem::path(run_dir) / "model.json"));
  EvalOptions opts;
  opts.seed = seed;
  opts.resampler = resampler_from_name(model.at("resampler").get<std::string>());
  const TrainConfig tcfg = train_config_from_json(model.at("train_config"));
  opts.particles = particles > 0 ? particles : tcfg.particles;
  opts.soft_lambda = tcfg.soft_lambda;
  if (threads > 0) opts.threads = threads;
  const std::vector<Trajectory>* chosen = &ds.eval;
  if (split == "train") chosen = &ds.train;
  else if (split == "val") chosen = &ds.val;
  else if (split != "eval") throw std::runtime_error("unknown split: " + split);
  const EvalReport report = evaluate(rig, *chosen, opts);
  const std::string out_dir = out.empty() ? run_dir : out;
  write_eval_outputs(report, opts, out_dir);
  std::printf("evaluated %zu sequences: median nll %s -> %s\n", report.per_seq.size(),
              fmt_double(report.nll_median).c_str(), out_dir.c_str());
  return 0;
}

int cmd_bench_resampling(const std::string& n_list, std::size_t trials,
                         const std::string& out) {
  std::vector<std::size_t> ns;
  std::stringstream ss(n_list);
  std::string tok;
  while (std::getline(ss, tok, ',')) ns.push_back(std::stoul(tok));
  CsvWriter csv({"scheme", "n", "trials", "ns_per_draw", "mean_abs_count_dev"});
  for (const Resampler scheme :
       {Resampler::kStratified, Resampler::kMultinomial, Resampler::kResidual}) {
    for (std::size_t n : ns) {
      RngStream wrng(7, RngPath{rng_stage::kEval, 0, 0, 0});
      std::vector<double> w(n);
      double sum = 0.0;
      for (double& x : w) {
        x = -std::log(wrng.uniform01());
        sum += x;
      }
      for (double& x : w) x /= sum;
      double dev = 0.0;
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t trial = 0; trial < trials; ++trial) {
        const auto idx = resample(scheme, w, n, 11,
                                  RngPath{rng_stage::kEval, static_cast<std::uint32_t>(trial), 0, 0});
        const auto counts = counts_from_indices(idx, n).counts;
        for (std::size_t i = 0; i < n; ++i) {
          dev += std::abs(static_cast<double>(counts[i]) - static_cast<double>(n) * w[i]);
        }
      }
      const auto t1 = std::chrono::steady_clock::now();
      const double ns_per_draw = std::chrono::duration<double, std::nano>(t1 - t0).count() /
                                 static_cast<double>(trials * n);
      csv.row(std::vector<std::string>{
          resampler_name(scheme), std::to_string(n), std::to_string(trials),
          fmt_double(ns_per_draw),
          fmt_double(dev / static_cast<double>(trials * n))});
    }
  }
  if (out.empty()) {
    std::fputs(csv.bytes().c_str(), stdout);
  } else {
    atomic_write_file(out, csv.bytes());
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

int cmd_ablate_particles(const std::string& run_dir, const std::string& data_dir,
                         const std::string& particles_list, std::uint64_t seed,
                         const std::string& out, std::size_t threads) {
  const Dataset ds = load_dataset(data_dir);
  BearingsRig rig = load_rig(run_dir);
  const json model = json::parse(read_file(std::filesystem::path(run_dir) / "model.json"));
  std::vector<std::size_t> ns;
  std::stringstream ss(particles_list);
  std::string tok;
  while (std::getline(ss, tok, ',')) ns.push_back(std::stoul(tok));

  CsvWriter csv({"particles", "nll_median", "nll_q1", "nll_q3", "nll_mean"});
  for (std::size_t n : ns) {
    EvalOptions opts;
    opts.seed = seed;
    opts.particles = n;
    opts.resampler = resampler_from_name(model.at("resampler").get<std::string>());
    opts.soft_lambda = train_config_from_json(model.at("train_config")).soft_lambda;
    if (threads > 0) opts.threads = threads;
    const EvalReport report = evaluate(rig, ds.eval, opts);
    csv.row(std::vector<std::string>{std::to_string(n), fmt_double(report.nll_median),
                                     fmt_double(report.nll_q1), fmt_double(report.nll_q3),
                                     fmt_double(report.nll_mean)});
  }
  if (out.empty()) {
    std::fputs(csv.bytes().c_str(), stdout);
  } else {
    atomic_write_file(out, csv.bytes());
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

int cmd_suite(const std::string& config_path) {
  const SuiteSpec spec = suite_spec_from_json(load_json_file(config_path));
  const json summary = run_experiment_suite(spec);
  std::printf("%s\n", summary.dump(2).c_str());
  return 0;
}

int cmd_export_stats(const std::string& results_dir, const std::string& out) {
  const json summary = export_stats(results_dir);
  const std::string text = summary.dump(2) + "\n";
  if (out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    atomic_write_file(out, text);
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixture-density particle filtering and smoothing"};
  app.require_subcommand(1);

  std::string out, config, data_dir, method = "mdpf", resampler = "stratified";
  std::string split = "eval", run_dir, n_list = "50,100,200,400,800";
  std::string particles_list = "25,50,100,200", results_dir;
  std::uint64_t seed = 1;
  std::size_t train_n = 5000, val_n = 1000, eval_n = 5000;
  std::size_t particles = 0, threads = 0, trials = 200;

  auto* gen = app.add_subcommand("gen-data", "generate a bearings-only dataset");
  gen->add_option("--out", out)->required();
  gen->add_option("--seed", seed);
  gen->add_option("--config", config);
  gen->add_option("--train-count", train_n);
  gen->add_option("--val-count", val_n);
  gen->add_option("--eval-count", eval_n);

  auto* train = app.add_subcommand("train", "train a method on a dataset");
  train->add_option("--data", data_dir)->required();
  train->add_option("--out", out)->required();
  train->add_option("--method", method)
      ->check(CLI::IsMember({"mdps", "mdpf", "mdpf-backward", "tgpf", "srpf", "ffbs"}));
  train->add_option("--resampler", resampler)
      ->check(CLI::IsMember({"stratified", "multinomial", "residual"}));
  train->add_option("--seed", seed);
  train->add_option("--config", config);
  train->add_option("--particles", particles);
  train->add_option("--threads", threads);

  auto* ev = app.add_subcommand("evaluate", "evaluate a trained run directory");
  ev->add_option("--run", run_dir)->required();
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--split", split)->check(CLI::IsMember({"train", "val", "eval"}));
  ev->add_option("--seed", seed);
  ev->add_option("--out", out);
  ev->add_option("--particles", particles);
  ev->add_option("--threads", threads);
  ev->add_option("--method", method);

  auto* bench = app.add_subcommand("bench-resampling", "time the resampling schemes");
  bench->add_option("--n-list", n_list);
  bench->add_option("--trials", trials);
  bench->add_option("--out", out);

  auto* ablate = app.add_subcommand("ablate-particles", "evaluate across particle counts");
  ablate->add_option("--run", run_dir)->required();
  ablate->add_option("--data", data_dir)->required();
  ablate->add_option("--particles-list", particles_list);
  ablate->add_option("--seed", seed);
  ablate->add_option("--out", out);
  ablate->add_option("--threads", threads);

  auto* suite = app.add_subcommand("suite", "run a (method x seed) experiment grid");
  suite->add_option("--config", config)->required();

  auto* exp = app.add_subcommand("export-stats", "recompute summaries from raw metrics");
  exp->add_option("--results", results_dir)->required();
  exp->add_option("--out", out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(out, seed, config, train_n, val_n, eval_n);
    if (train->parsed())
      return cmd_train(data_dir, out, method, resampler, seed, config, particles, threads);
    if (ev->parsed()) {
      return cmd_evaluate(run_dir, data_dir, split, seed, out, particles, threads,
                          ev->count("--method") ? method : "");
    }
    if (bench->parsed()) return cmd_bench_resampling(n_list, trials, out);
    if (ablate->parsed())
      return cmd_ablate_particles(run_dir, data_dir, particles_list, seed, out, threads);
    if (suite->parsed()) return cmd_suite(config);
    if (exp->parsed()) return cmd_export_stats(results_dir, out);
  } catch (const std::exception& e) {
    const json err{{"error", e.what()}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
  return 1;
}
