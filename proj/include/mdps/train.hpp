#pragma once

// Training for the bearings-only task: model-set construction per method,
// the staged MDPS procedure (filters separately, then the smoother weight
// model, then everything jointly), single-filter baselines, and the FFBS
// dynamics regression.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mdps/filters.hpp"
#include "mdps/io.hpp"
#include "mdps/models.hpp"
#include "mdps/nn.hpp"
#include "mdps/simulator.hpp"
#include "mdps/smoothers.hpp"

namespace mdps {

enum class Method { kMdps, kMdpf, kMdpfBackward, kTgpf, kSrpf, kFfbs };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kMdps: return "mdps";
    case Method::kMdpf: return "mdpf";
    case Method::kMdpfBackward: return "mdpf-backward";
    case Method::kTgpf: return "tgpf";
    case Method::kSrpf: return "srpf";
    case Method::kFfbs: return "ffbs";
  }
  throw std::logic_error("method_name");
}

inline Method method_from_name(const std::string& s) {
  if (s == "mdps") return Method::kMdps;
  if (s == "mdpf") return Method::kMdpf;
  if (s == "mdpf-backward") return Method::kMdpfBackward;
  if (s == "tgpf") return Method::kTgpf;
  if (s == "srpf") return Method::kSrpf;
  if (s == "ffbs") return Method::kFfbs;
  throw std::invalid_argument("unknown method: " + s);
}

inline std::string resampler_name(Resampler r) {
  switch (r) {
    case Resampler::kStratified: return "stratified";
    case Resampler::kMultinomial: return "multinomial";
    case Resampler::kResidual: return "residual";
  }
  throw std::logic_error("resampler_name");
}

inline Resampler resampler_from_name(const std::string& s) {
  if (s == "stratified") return Resampler::kStratified;
  if (s == "multinomial") return Resampler::kMultinomial;
  if (s == "residual") return Resampler::kResidual;
  throw std::invalid_argument("unknown resampler: " + s);
}

// ---------------------------------------------------------------------------
// Hyperparameters and training configuration.

struct ModelHyper {
  std::vector<std::uint32_t> hidden{64, 64, 64};
  Bandwidth init_bw_resample{0.5, 0.5, 10.0};
  Bandwidth init_bw_posterior{1.0, 1.0, 4.0};
  Bandwidth init_bw_smooth{1.0, 1.0, 4.0};
};

struct StageConfig {
  double lr = 1e-3;
  std::size_t epochs = 8;
};

struct TrainConfig {
  std::size_t particles = 50;
  std::size_t batch = 16;
  double grad_clip = 100.0;
  int truncate_every = 0;
  double soft_lambda = 0.1;
  std::size_t threads = 2;
  // stage 1 runs in two phases: (a) models with posterior bandwidths held
  // fixed, (b) models frozen, posterior bandwidths trained
  StageConfig stage_filter{1e-3, 8};
  std::size_t stage_filter_bw_epochs = 2;
  StageConfig stage_smoother{1e-3, 4};
  StageConfig stage_joint{1e-4, 3};
  StageConfig stage_ffbs{1e-3, 6};
  ModelHyper hyper;
};

struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Model rig: owns the parameter store and every network a method needs.

class BearingsRig {
 public:
  BearingsRig(Method method, const ModelHyper& hyper, const SimConfig& sim,
              std::uint64_t init_seed)
      : method_(method), sim_(sim) {
    const auto mk_filter = [&](const std::string& prefix, std::uint64_t seed_off) {
      FilterBlock fb;
      fb.dynamics = MlpDynamics::create(store, prefix + ".dyn", hyper.hidden,
                                        init_seed * 1000 + seed_off);
      fb.measurement =
          MlpMeasurement::create(store, prefix + ".meas", hyper.hidden,
                                 init_seed * 1000 + seed_off + 1, sim.radar_x, sim.radar_y);
      fb.bw_resample = BandwidthParams::create(store, prefix + ".bw_resample",
                                               hyper.init_bw_resample);
      fb.bw_posterior = BandwidthParams::create(store, prefix + ".bw_posterior",
                                                hyper.init_bw_posterior);
      fb.prefix = prefix;
      return fb;
    };
    switch (method) {
      case Method::kMdps:
        fwd_ = mk_filter("fwd", 0);
        bwd_ = mk_filter("bwd", 10);
        smoother_ = MlpSmootherWeight::create(store, "smoother", hyper.hidden,
                                              init_seed * 1000 + 20, sim.radar_x, sim.radar_y);
        bw_smooth_ = BandwidthParams::create(store, "bw_smooth", hyper.init_bw_smooth);
        break;
      case Method::kMdpf:
      case Method::kTgpf:
      case Method::kSrpf:
        fwd_ = mk_filter("fwd", 0);
        break;
      case Method::kMdpfBackward:
        bwd_ = mk_filter("bwd", 10);
        break;
      case Method::kFfbs:
        ffbs_dyn_ = FfbsDynamics::create(store, "ffbs.dyn", hyper.hidden, init_seed * 1000 + 30);
        ffbs_bw_ = BandwidthParams::create(store, "ffbs.bw_posterior", hyper.init_bw_posterior);
        ffbs_meas_ = std::make_unique<TrueBearingsLikelihood>(sim.alpha, sim.kappa_obs,
                                                              sim.radar_x, sim.radar_y);
        break;
    }
  }

  struct FilterBlock {
    MlpDynamics dynamics;
    MlpMeasurement measurement;
    BandwidthParams bw_resample;
    BandwidthParams bw_posterior;
    std::string prefix;

    FilterModels models() const {
      return FilterModels{&dynamics, &measurement, BandwidthSource::from_params(bw_resample),
                          BandwidthSource::from_params(bw_posterior)};
    }
  };

  Method method() const { return method_; }
  const SimConfig& sim() const { return sim_; }
  const FilterBlock& fwd() const { return fwd_; }
  const FilterBlock& bwd() const { return bwd_; }
  const MlpSmootherWeight& smoother() const { return smoother_; }
  BandwidthParams bw_smooth() const { return bw_smooth_; }
  const FfbsDynamics& ffbs_dynamics() const { return ffbs_dyn_; }
  BandwidthParams ffbs_bw() const { return ffbs_bw_; }
  const TrueBearingsLikelihood& ffbs_measurement() const { return *ffbs_meas_; }

  /// Freeze mask over the flat parameter vector from block-name predicates.
  std::vector<std::uint8_t> freeze_mask(
      const std::function<bool(const std::string&)>& frozen) const {
    std::vector<std::uint8_t> mask(store.size(), 0);
    for (const auto& b : store.blocks()) {
      if (frozen(b.name)) {
        for (std::size_t i = 0; i < b.size; ++i) mask[b.offset + i] = 1;
      }
    }
    return mask;
  }

  ParamStore store;

 private:
  Method method_;
  SimConfig sim_;
  FilterBlock fwd_;
  FilterBlock bwd_;
  MlpSmootherWeight smoother_;
  BandwidthParams bw_smooth_;
  FfbsDynamics ffbs_dyn_;
  BandwidthParams ffbs_bw_;
  std::unique_ptr<TrueBearingsLikelihood> ffbs_meas_;
};

// ---------------------------------------------------------------------------
// Deterministic parallel map: results land in index order.

inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  const std::size_t workers = std::min(threads, n);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Loss plumbing shared by all filter-style training loops.

namespace detail {

inline std::vector<std::size_t> batch_indices(std::size_t pool_size, std::size_t batch,
                                              std::uint64_t seed, std::uint32_t step) {
  RngStream rng(seed, RngPath{rng_stage::kTrain, step, 0, rng_purpose::kBatch});
  std::vector<std::size_t> idx(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    idx[i] = std::min(pool_size - 1,
                      static_cast<std::size_t>(rng.uniform01() * static_cast<double>(pool_size)));
  }
  return idx;
}

inline std::uint64_t sequence_seed(std::uint64_t base, std::size_t seq_index) {
  return mdps::detail::mix64(base + 0x51ab5941ull * (seq_index + 1));
}

/// Mean filter NLL over the trajectory's loss mask, on the tape.
inline Var filter_nll(Tape& tape, const FilterTrace& trace, const Trajectory& traj) {
  Var acc = tape.constant(0.0);
  for (std::size_t t : traj.loss_mask) {
    const std::size_t s = trace.step_for_time(t);
    acc = acc - filter_posterior_logpdf(tape, trace, s, traj.states[t]);
  }
  return acc / static_cast<double>(traj.loss_mask.size());
}

inline double filter_nll_plain(const FilterTrace& trace, const Trajectory& traj,
                               std::span<const std::size_t> indices) {
  double acc = 0.0;
  for (std::size_t t : indices) {
    const std::size_t s = trace.step_for_time(t);
    acc -= mixture_logpdf(trace.posterior_mixture(s), traj.states[t]);
  }
  return acc / static_cast<double>(indices.size());
}

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// One Adam step over a batch: builds one tape per sequence (in parallel),
/// accumulates gradients in batch order, clips, updates.
inline StepResult sgd_step(
    ParamStore& store, AdamState& adam, const AdamConfig& acfg,
    std::span<const std::uint8_t> freeze, const TrainConfig& tcfg,
    std::span<const std::size_t> batch,
    const std::function<Var(Tape&, std::size_t seq_index)>& build_loss) {
  const std::size_t b = batch.size();
  std::vector<std::vector<double>> grads(b);
  std::vector<double> losses(b);
  const std::vector<double> params(store.values().begin(), store.values().end());

  parallel_for(b, tcfg.threads, [&](std::size_t k) {
    static thread_local Tape tape;
    tape.reset(params);
    Var loss = build_loss(tape, batch[k]);
    losses[k] = loss.value();
    if (!std::isfinite(losses[k])) {
      throw TrainingDiverged("non-finite loss on sequence " + std::to_string(batch[k]));
    }
    tape.backward(loss);
    grads[k].assign(tape.param_adjoints().begin(), tape.param_adjoints().end());
  });

  std::vector<double> total(store.size(), 0.0);
  double mean_loss = 0.0;
  for (std::size_t k = 0; k < b; ++k) {
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += grads[k][i];
    mean_loss += losses[k];
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  for (double& g : total) g *= inv_b;
  mean_loss *= inv_b;

  StepResult res;
  res.loss = mean_loss;
  res.grad_norm = tcfg.grad_clip > 0.0 ? clip_global_norm(total, tcfg.grad_clip)
                                       : std::sqrt([&] {
                                           double s = 0.0;
                                           for (double g : total) s += g * g;
                                           return s;
                                         }());
  adam_step(store.values(), total, adam, acfg, freeze);
  return res;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Filter training (stage 1 and the single-filter baselines).

struct TrainLog {
  std::vector<std::string> lines;
  void add(const std::string& s) { lines.push_back(s); }
};

/// Build the per-sequence loss for one filter (forward or backward).
inline std::function<Var(Tape&, std::size_t)> make_filter_loss(
    const BearingsRig& rig, const BearingsRig::FilterBlock& block, GradientMode mode,
    Resampler resampler, FilterDirection direction, const TrainConfig& tcfg,
    const std::vector<Trajectory>& data, std::uint64_t run_seed) {
  return [&rig, &block, mode, resampler, direction, &tcfg, &data,
          run_seed](Tape& tape, std::size_t seq) -> Var {
    const Trajectory& traj = data[seq];
    // stable copy: tape value storage reallocates while recording
    const std::vector<double> params(tape.param_values().begin(), tape.param_values().end());
    FilterConfig fc;
    fc.particles = tcfg.particles;
    fc.resampler = resampler;
    fc.gradient_mode = mode;
    fc.soft_lambda = tcfg.soft_lambda;
    fc.direction = direction;
    fc.truncate_every = tcfg.truncate_every;
    fc.seed = detail::sequence_seed(run_seed, seq);
    fc.rng_stage = direction == FilterDirection::kForward ? rng_stage::kFilterForward
                                                          : rng_stage::kFilterBackward;
    const ParticleSet init =
        direction == FilterDirection::kForward
            ? init_from_truth(traj.states.front(), fc.particles, fc.seed,
                              RngPath{fc.rng_stage, 0, 0, 0})
            : init_uniform(rig.sim().arena, fc.particles, fc.seed,
                           RngPath{fc.rng_stage, 0, 0, 0});
    const FilterTrace trace =
        run_filter(fc, block.models(), traj.observations, {}, init, params, &tape);
    return detail::filter_nll(tape, trace, traj);
  };
}

/// Two-phase filter training: (a) networks and resampling bandwidth with the
/// posterior bandwidth frozen, then (b) everything frozen except the
/// posterior bandwidth.
inline void train_single_filter(BearingsRig& rig, const BearingsRig::FilterBlock& block,
                                GradientMode mode, Resampler resampler,
                                FilterDirection direction, const TrainConfig& tcfg,
                                const std::vector<Trajectory>& data, std::uint64_t run_seed,
                                TrainLog* log = nullptr) {
  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, data.size() / std::max<std::size_t>(1, tcfg.batch));
  const auto loss_fn =
      make_filter_loss(rig, block, mode, resampler, direction, tcfg, data, run_seed);

  const auto run_phase = [&](const std::vector<std::uint8_t>& freeze, double lr,
                             std::size_t epochs, std::uint32_t step_base,
                             const char* tag) {
    AdamState adam(rig.store.size());
    AdamConfig acfg;
    acfg.lr = lr;
    std::uint32_t step = step_base;
    for (std::size_t e = 0; e < epochs; ++e) {
      double epoch_loss = 0.0;
      for (std::size_t k = 0; k < steps_per_epoch; ++k) {
        const auto batch = detail::batch_indices(data.size(), tcfg.batch, run_seed, step++);
        const auto res = detail::sgd_step(rig.store, adam, acfg, freeze, tcfg, batch, loss_fn);
        epoch_loss += res.loss;
      }
      if (log) {
        log->add(block.prefix + " " + tag + " epoch " + std::to_string(e) + " loss " +
                 fmt_double(epoch_loss / static_cast<double>(steps_per_epoch)));
      }
    }
  };

  const std::string bw_post_name = block.prefix + ".bw_posterior";
  const auto freeze_bw_post = rig.freeze_mask([&](const std::string& name) {
    return name == bw_post_name || !name.starts_with(block.prefix + ".");
  });
  const auto freeze_all_but_bw_post = rig.freeze_mask(
      [&](const std::string& name) { return name != bw_post_name; });

  run_phase(freeze_bw_post, tcfg.stage_filter.lr, tcfg.stage_filter.epochs, 0, "models");
  run_phase(freeze_all_but_bw_post, tcfg.stage_filter.lr, tcfg.stage_filter_bw_epochs,
            1u << 20, "posterior-bw");
}

// ---------------------------------------------------------------------------
// MDPS stages 2 and 3.

inline std::function<Var(Tape&, std::size_t)> make_mdps_loss(
    const BearingsRig& rig, const TrainConfig& tcfg, const std::vector<Trajectory>& data,
    std::uint64_t run_seed, Resampler resampler, bool filters_taped) {
  return [&rig, &tcfg, &data, run_seed, resampler, filters_taped](Tape& tape,
                                                                  std::size_t seq) -> Var {
    const Trajectory& traj = data[seq];
    const std::vector<double> params(tape.param_values().begin(), tape.param_values().end());
    const std::uint64_t seed = detail::sequence_seed(run_seed, seq);
    FilterConfig fc;
    fc.particles = tcfg.particles;
    fc.resampler = resampler;
    fc.soft_lambda = tcfg.soft_lambda;
    fc.truncate_every = tcfg.truncate_every;
    fc.seed = seed;
    FilterConfig bc = fc;
    bc.direction = FilterDirection::kBackward;
    bc.rng_stage = rng_stage::kFilterBackward;
    const ParticleSet finit = init_from_truth(traj.states.front(), fc.particles, fc.seed,
                                              RngPath{fc.rng_stage, 0, 0, 0});
    const ParticleSet binit = init_uniform(rig.sim().arena, bc.particles, bc.seed,
                                           RngPath{bc.rng_stage, 0, 0, 0});
    Tape* filter_tape = filters_taped ? &tape : nullptr;
    const FilterTrace fwd = run_filter(fc, rig.fwd().models(), traj.observations, {}, finit,
                                       params, filter_tape);
    const FilterTrace bwd = run_filter(bc, rig.bwd().models(), traj.observations, {}, binit,
                                       params, filter_tape);
    SmootherConfig sc;
    sc.seed = seed;
    sc.resampler = resampler;
    const SmoothedPosterior post =
        mdps_combine(sc, fwd, bwd, rig.smoother(), BandwidthSource::from_params(rig.bw_smooth()),
                     traj.observations, params, &tape);
    return smoothed_nll(tape, post, traj.states, traj.loss_mask);
  };
}

/// Full three-stage MDPS training.  Returns per-stage checkpoints (written
/// under out_dir when provided).
inline void train_mdps(BearingsRig& rig, const TrainConfig& tcfg,
                       const std::vector<Trajectory>& data, std::uint64_t run_seed,
                       Resampler resampler, const std::filesystem::path& out_dir = {},
                       TrainLog* log = nullptr) {
  if (rig.method() != Method::kMdps) throw std::invalid_argument("train_mdps: wrong rig");
  // stage 1: the two filters, separately, with independent losses
  train_single_filter(rig, rig.fwd(), GradientMode::kIwsg, resampler,
                      FilterDirection::kForward, tcfg, data, run_seed, log);
  train_single_filter(rig, rig.bwd(), GradientMode::kIwsg, resampler,
                      FilterDirection::kBackward, tcfg, data, run_seed + 1, log);
  if (!out_dir.empty()) save_checkpoint(rig.store, out_dir / "checkpoint_stage1.json");

  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, data.size() / std::max<std::size_t>(1, tcfg.batch));

  const auto run_stage = [&](const std::vector<std::uint8_t>& freeze, const StageConfig& sc,
                             bool filters_taped, std::uint32_t step_base, const char* tag) {
    AdamState adam(rig.store.size());
    AdamConfig acfg;
    acfg.lr = sc.lr;
    const auto loss_fn =
        make_mdps_loss(rig, tcfg, data, run_seed + 2, resampler, filters_taped);
    std::uint32_t step = step_base;
    for (std::size_t e = 0; e < sc.epochs; ++e) {
      double epoch_loss = 0.0;
      for (std::size_t k = 0; k < steps_per_epoch; ++k) {
        const auto batch =
            detail::batch_indices(data.size(), tcfg.batch, run_seed + 2, step++);
        const auto res = detail::sgd_step(rig.store, adam, acfg, freeze, tcfg, batch, loss_fn);
        epoch_loss += res.loss;
      }
      if (log) {
        log->add(std::string("mdps ") + tag + " epoch " + std::to_string(e) + " loss " +
                 fmt_double(epoch_loss / static_cast<double>(steps_per_epoch)));
      }
    }
  };

  // stage 2: filters frozen, smoother weight model + smoothed bandwidth
  const auto freeze_filters = rig.freeze_mask([](const std::string& name) {
    return name.starts_with("fwd.") || name.starts_with("bwd.");
  });
  run_stage(freeze_filters, tcfg.stage_smoother, /*filters_taped=*/false, 2u << 20, "stage2");
  if (!out_dir.empty()) save_checkpoint(rig.store, out_dir / "checkpoint_stage2.json");

  // stage 3: everything unfrozen, joint loss
  const std::vector<std::uint8_t> no_freeze(rig.store.size(), 0);
  run_stage(no_freeze, tcfg.stage_joint, /*filters_taped=*/true, 3u << 20, "stage3");
  if (!out_dir.empty()) save_checkpoint(rig.store, out_dir / "checkpoint.json");
}

/// Single-filter baselines: mdpf, mdpf-backward, tgpf, srpf.
inline void train_filter_baseline(BearingsRig& rig, const TrainConfig& tcfg,
                                  const std::vector<Trajectory>& data, std::uint64_t run_seed,
                                  Resampler resampler,
                                  const std::filesystem::path& out_dir = {},
                                  TrainLog* log = nullptr) {
  GradientMode mode = GradientMode::kIwsg;
  FilterDirection dir = FilterDirection::kForward;
  switch (rig.method()) {
    case Method::kMdpf: break;
    case Method::kMdpfBackward: dir = FilterDirection::kBackward; break;
    case Method::kTgpf: mode = GradientMode::kTruncated; break;
    case Method::kSrpf: mode = GradientMode::kSoft; break;
    default: throw std::invalid_argument("train_filter_baseline: not a filter method");
  }
  const auto& block = dir == FilterDirection::kForward ? rig.fwd() : rig.bwd();
  train_single_filter(rig, block, mode, resampler, dir, tcfg, data, run_seed, log);
  if (!out_dir.empty()) save_checkpoint(rig.store, out_dir / "checkpoint.json");
}

// ---------------------------------------------------------------------------
// FFBS: dynamics regression on consecutive true-state pairs, then a
// validation grid search for the posterior KDE bandwidth.

inline double ffbs_regression_loss_plain(const BearingsRig& rig,
                                         const std::vector<Trajectory>& data,
                                         std::span<const std::size_t> seqs) {
  double acc = 0.0;
  std::size_t count = 0;
  std::vector<State3> means;
  for (std::size_t s : seqs) {
    const auto& st = data[s].states;
    means.resize(st.size() - 1);
    rig.ffbs_dynamics().mean_plain(rig.store.values(),
                                   std::span<const State3>(st.data(), st.size() - 1), means);
    for (std::size_t t = 0; t + 1 < st.size(); ++t) {
      const double dx = st[t + 1].x - means[t].x;
      const double dy = st[t + 1].y - means[t].y;
      const double dth = wrap_angle(st[t + 1].theta.rad() - means[t].theta.rad());
      acc += 0.5 * (dx * dx / (FfbsDynamics::kStdX * FfbsDynamics::kStdX) +
                    dy * dy / (FfbsDynamics::kStdY * FfbsDynamics::kStdY) +
                    dth * dth / (FfbsDynamics::kStdTheta * FfbsDynamics::kStdTheta));
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

/// Mean-squared regression of the FFBS mean network on consecutive truth
/// pairs; the standard deviations stay fixed.
inline void fit_ffbs_dynamics(BearingsRig& rig, const TrainConfig& tcfg,
                              const std::vector<Trajectory>& data, std::uint64_t run_seed,
                              TrainLog* log = nullptr) {
  if (rig.method() != Method::kFfbs) throw std::invalid_argument("fit_ffbs_dynamics: wrong rig");
  const auto freeze = rig.freeze_mask(
      [](const std::string& name) { return !name.starts_with("ffbs.dyn"); });
  AdamState adam(rig.store.size());
  AdamConfig acfg;
  acfg.lr = tcfg.stage_ffbs.lr;
  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, data.size() / std::max<std::size_t>(1, tcfg.batch));

  const auto loss_fn = [&rig, &data](Tape& tape, std::size_t seq) -> Var {
    const auto& st = data[seq].states;
    const std::span<const State3> from(st.data(), st.size() - 1);
    const std::vector<TapedState3> mu = rig.ffbs_dynamics().mean_taped(tape, from);
    Var acc = tape.constant(0.0);
    const double wx = 0.5 / (FfbsDynamics::kStdX * FfbsDynamics::kStdX);
    const double wy = 0.5 / (FfbsDynamics::kStdY * FfbsDynamics::kStdY);
    const double wt = 0.5 / (FfbsDynamics::kStdTheta * FfbsDynamics::kStdTheta);
    for (std::size_t t = 0; t + 1 < st.size(); ++t) {
      const Var dx = tape.constant(st[t + 1].x) - mu[t].x;
      const Var dy = tape.constant(st[t + 1].y) - mu[t].y;
      const Var dth = wrap(tape.constant(st[t + 1].theta.rad()) - mu[t].theta);
      acc = acc + (dx * dx * wx + dy * dy * wy + dth * dth * wt);
    }
    return acc / static_cast<double>(st.size() - 1);
  };

  std::uint32_t step = 0;
  for (std::size_t e = 0; e < tcfg.stage_ffbs.epochs; ++e) {
    double epoch_loss = 0.0;
    for (std::size_t k = 0; k < steps_per_epoch; ++k) {
      const auto batch = detail::batch_indices(data.size(), tcfg.batch, run_seed, step++);
      const auto res = detail::sgd_step(rig.store, adam, acfg, freeze, tcfg, batch, loss_fn);
      epoch_loss += res.loss;
    }
    if (log) {
      log->add("ffbs regression epoch " + std::to_string(e) + " loss " +
               fmt_double(epoch_loss / static_cast<double>(steps_per_epoch)));
    }
  }
}

}  // namespace mdps
