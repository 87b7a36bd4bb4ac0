#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "mdps/eval.hpp"
#include "mdps/io.hpp"
#include "mdps/train.hpp"
#include "oracles.hpp"

using namespace mdps;

namespace {

SimConfig tiny_sim() {
  SimConfig cfg;
  cfg.horizon = 10;
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig tc;
  tc.particles = 12;
  tc.batch = 5;
  tc.threads = 2;
  tc.hyper.hidden = {8};
  tc.stage_filter = {1e-3, 2};
  tc.stage_filter_bw_epochs = 1;
  tc.stage_smoother = {1e-3, 1};
  tc.stage_joint = {1e-4, 1};
  tc.stage_ffbs = {1e-2, 4};
  return tc;
}

std::vector<Trajectory> tiny_split(const SimConfig& cfg, std::size_t n, bool dense) {
  std::vector<Trajectory> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = generate_trajectory(cfg, 4242, static_cast<std::uint32_t>(i + (dense ? 500 : 0)),
                                 dense);
  }
  return out;
}

}  // namespace

TEST_CASE("overfit smoke test: stage-1 filter loss halves on ten sequences") {
  const SimConfig sim = tiny_sim();
  TrainConfig tc = tiny_train();
  tc.stage_filter = {3e-3, 150};
  tc.stage_filter_bw_epochs = 3;
  const auto data = tiny_split(sim, 10, false);

  BearingsRig rig(Method::kMdpf, tc.hyper, sim, 1);
  const auto nll_now = [&]() {
    double acc = 0.0;
    for (std::size_t s = 0; s < data.size(); ++s) {
      Tape tape{rig.store.values()};
      const auto loss_fn = make_filter_loss(rig, rig.fwd(), GradientMode::kIwsg,
                                            Resampler::kStratified, FilterDirection::kForward,
                                            tc, data, 77);
      acc += loss_fn(tape, s).value();
    }
    return acc / static_cast<double>(data.size());
  };
  const double before = nll_now();
  train_single_filter(rig, rig.fwd(), GradientMode::kIwsg, Resampler::kStratified,
                      FilterDirection::kForward, tc, data, 77);
  const double after = nll_now();
  CHECK(before - after >= 0.5 * std::abs(before));
}

TEST_CASE("mdps stages: frozen blocks stay bit-identical, checkpoints written") {
  const SimConfig sim = tiny_sim();
  const TrainConfig tc = tiny_train();
  const auto data = tiny_split(sim, 6, false);
  const auto dir = std::filesystem::temp_directory_path() / "mdps_test_stages";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  BearingsRig rig(Method::kMdps, tc.hyper, sim, 2);
  train_mdps(rig, tc, data, 11, Resampler::kStratified, dir);

  ParamStore s1, s2;
  for (ParamStore* s : {&s1, &s2}) {
    BearingsRig shape(Method::kMdps, tc.hyper, sim, 2);
    for (const auto& b : shape.store.blocks()) s->def(b.name, b.size);
  }
  load_checkpoint(s1, dir / "checkpoint_stage1.json");
  load_checkpoint(s2, dir / "checkpoint_stage2.json");
  // stage 2 trains only the smoother weight model and the smoothed bandwidth
  for (const char* name : {"fwd.dyn", "fwd.meas", "fwd.bw_resample", "fwd.bw_posterior",
                           "bwd.dyn", "bwd.meas", "bwd.bw_resample", "bwd.bw_posterior"}) {
    const auto a = s1.slice(name);
    const auto b = s2.slice(name);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
  // while the smoother block moved
  bool smoother_moved = false;
  for (std::size_t i = 0; i < s1.slice("smoother").size(); ++i) {
    smoother_moved |= s1.slice("smoother")[i] != s2.slice("smoother")[i];
  }
  CHECK(smoother_moved);
  CHECK(std::filesystem::exists(dir / "checkpoint.json"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluate: determinism and independent NLL recomputation") {
  const SimConfig sim = tiny_sim();
  const TrainConfig tc = tiny_train();
  BearingsRig rig(Method::kMdpf, tc.hyper, sim, 3);
  const auto split = tiny_split(sim, 6, true);

  EvalOptions opts;
  opts.particles = 16;
  opts.seed = 5;
  const EvalReport r1 = evaluate(rig, split, opts);
  const EvalReport r2 = evaluate(rig, split, opts);
  REQUIRE(r1.per_seq.size() == split.size());
  for (std::size_t s = 0; s < split.size(); ++s) {
    CHECK(r1.per_seq[s].mean_nll == r2.per_seq[s].mean_nll);
    CHECK(r1.per_seq[s].recall_top1 == r2.per_seq[s].recall_top1);
    CHECK(r1.per_seq[s].recall_topk == r2.per_seq[s].recall_topk);
  }
  CHECK(r1.nll_median == r2.nll_median);

  // independent recomputation of a sequence's NLL through the public pieces
  const std::size_t s = 2;
  FilterConfig fc;
  fc.particles = opts.particles;
  fc.seed = mdps::detail::sequence_seed(opts.seed, s);
  const ParticleSet init = init_from_truth(split[s].states.front(), fc.particles, fc.seed,
                                           RngPath{fc.rng_stage, 0, 0, 0});
  const FilterTrace tr =
      run_filter(fc, rig.fwd().models(), split[s].observations, {}, init, rig.store.values());
  double nll = 0.0;
  for (std::size_t t = 0; t < split[s].observations.size(); ++t) {
    nll -= mixture_logpdf(tr.posterior_mixture(t), split[s].states[t]);
  }
  nll /= static_cast<double>(split[s].observations.size());
  CHECK(nll == r1.per_seq[s].mean_nll);  // to the digit
}

TEST_CASE("ffbs fit: regression loss decreases and displacement scale is learned") {
  const SimConfig sim = tiny_sim();
  TrainConfig tc = tiny_train();
  const auto data = tiny_split(sim, 12, false);
  BearingsRig rig(Method::kFfbs, tc.hyper, sim, 4);

  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const double before = ffbs_regression_loss_plain(rig, data, all);
  fit_ffbs_dynamics(rig, tc, data, 13);
  const double after = ffbs_regression_loss_plain(rig, data, all);
  CHECK(after < before);

  // predicted mean displacement magnitude lands near the realized speeds
  std::vector<State3> means(data[0].states.size() - 1);
  double mean_disp = 0.0;
  std::size_t count = 0;
  for (const auto& traj : data) {
    rig.ffbs_dynamics().mean_plain(
        rig.store.values(),
        std::span<const State3>(traj.states.data(), traj.states.size() - 1), means);
    for (std::size_t t = 0; t + 1 < traj.states.size(); ++t) {
      mean_disp += std::hypot(means[t].x - traj.states[t].x, means[t].y - traj.states[t].y);
      ++count;
    }
  }
  mean_disp /= static_cast<double>(count);
  CHECK(mean_disp > 0.75);
  CHECK(mean_disp < 2.25);
}

TEST_CASE("ffbs bandwidth tuning picks a finite bandwidth and stores it") {
  const SimConfig sim = tiny_sim();
  TrainConfig tc = tiny_train();
  const auto train = tiny_split(sim, 8, false);
  const auto val = tiny_split(sim, 4, true);
  BearingsRig rig(Method::kFfbs, tc.hyper, sim, 6);
  fit_ffbs_dynamics(rig, tc, train, 13);
  EvalOptions opts;
  opts.particles = 16;
  const Bandwidth bw = tune_ffbs_bandwidth(rig, val, opts, 4);
  CHECK(bw.valid());
  const Bandwidth stored = rig.ffbs_bw().value(rig.store.values());
  CHECK(stored.sigma_x == doctest::Approx(bw.sigma_x).epsilon(1e-9));
  CHECK(stored.kappa_theta == doctest::Approx(bw.kappa_theta).epsilon(1e-9));

  // evaluation of the tuned rig produces finite NLLs
  const EvalReport rep = evaluate(rig, val, opts);
  for (const auto& ev : rep.per_seq) CHECK(std::isfinite(ev.mean_nll));
}

TEST_CASE("quantile helper") {
  std::vector<double> xs{4.0, 1.0, 3.0, 2.0};
  CHECK(quantile(xs, 0.5) == doctest::Approx(2.5));
  CHECK(quantile(xs, 0.0) == doctest::Approx(1.0));
  CHECK(quantile(xs, 1.0) == doctest::Approx(4.0));
  CHECK(quantile(xs, 0.25) == doctest::Approx(1.75));
}
