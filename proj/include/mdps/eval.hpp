#pragma once

// Evaluation: dense NLL under each method's posterior mixture, top-k mode
// recall via non-maximal suppression, and wall-time accounting.  All
// aggregates are recomputable from the per-sequence values.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mdps/train.hpp"

namespace mdps {

struct RecallThreshold {
  double pos = 1.0;               // meters
  double theta = kPi / 6.0;       // radians
};

struct EvalOptions {
  std::size_t particles = 50;
  std::uint64_t seed = 0;
  Resampler resampler = Resampler::kStratified;
  double soft_lambda = 0.1;
  std::size_t threads = 2;
  std::size_t top_k = 3;
  double nms_radius_pos = 5.0;          // NMS deletion radii
  double nms_radius_theta = kPi / 6.0;  // 30 degrees
  std::vector<RecallThreshold> recall_thresholds{{1.0, kPi / 6.0},
                                                 {2.0, kPi / 6.0},
                                                 {5.0, kPi / 6.0}};
};

struct SequenceEval {
  double mean_nll = 0.0;
  std::vector<double> recall_top1;  // fraction of steps hit, per threshold
  std::vector<double> recall_topk;
  double wall_ms_per_step = 0.0;  // measured; excluded from determinism checks
};

struct EvalReport {
  std::vector<SequenceEval> per_seq;
  double nll_mean = 0.0, nll_median = 0.0, nll_q1 = 0.0, nll_q3 = 0.0;
  double nll_min = 0.0, nll_max = 0.0;
  std::vector<double> recall_top1_mean, recall_topk_mean;
  double wall_ms_per_step_median = 0.0;
};

/// Linear-interpolation quantile of an unsorted sample.
inline double quantile(std::vector<double> xs, double p) {
  if (xs.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = p * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

namespace detail {

/// Per-time-step posterior particle sets plus the KDE bandwidth used to
/// evaluate log-densities; what every method reduces to at evaluation time.
struct PosteriorSequence {
  std::vector<ParticleSet> sets;
  Bandwidth bandwidth;
};

inline PosteriorSequence eval_posteriors(const BearingsRig& rig, Resampler resampler,
                                         double soft_lambda, std::size_t particles,
                                         std::uint64_t seed, const Trajectory& traj) {
  PosteriorSequence out;
  const std::size_t T = traj.observations.size();
  const auto params = rig.store.values();

  const auto filter_posteriors = [&](const BearingsRig::FilterBlock& block, GradientMode mode,
                                     FilterDirection dir) {
    FilterConfig fc;
    fc.particles = particles;
    fc.resampler = resampler;
    fc.gradient_mode = mode;
    fc.soft_lambda = soft_lambda;
    fc.direction = dir;
    fc.seed = seed;
    fc.rng_stage = dir == FilterDirection::kForward ? rng_stage::kFilterForward
                                                    : rng_stage::kFilterBackward;
    const ParticleSet init =
        dir == FilterDirection::kForward
            ? init_from_truth(traj.states.front(), particles, seed, RngPath{fc.rng_stage, 0, 0, 0})
            : init_uniform(rig.sim().arena, particles, seed, RngPath{fc.rng_stage, 0, 0, 0});
    const FilterTrace trace =
        run_filter(fc, block.models(), traj.observations, {}, init, params);
    out.sets.resize(T);
    for (std::size_t t = 0; t < T; ++t) out.sets[t] = trace.steps[trace.step_for_time(t)].post;
    out.bandwidth = trace.bw_posterior_value;
  };

  switch (rig.method()) {
    case Method::kMdpf:
      filter_posteriors(rig.fwd(), GradientMode::kIwsg, FilterDirection::kForward);
      break;
    case Method::kTgpf:
      filter_posteriors(rig.fwd(), GradientMode::kTruncated, FilterDirection::kForward);
      break;
    case Method::kSrpf:
      filter_posteriors(rig.fwd(), GradientMode::kSoft, FilterDirection::kForward);
      break;
    case Method::kMdpfBackward:
      filter_posteriors(rig.bwd(), GradientMode::kIwsg, FilterDirection::kBackward);
      break;
    case Method::kMdps: {
      FilterConfig fc;
      fc.particles = particles;
      fc.resampler = resampler;
      fc.seed = seed;
      FilterConfig bc = fc;
      bc.direction = FilterDirection::kBackward;
      bc.rng_stage = rng_stage::kFilterBackward;
      const ParticleSet finit = init_from_truth(traj.states.front(), particles, seed,
                                                RngPath{fc.rng_stage, 0, 0, 0});
      const ParticleSet binit =
          init_uniform(rig.sim().arena, particles, seed, RngPath{bc.rng_stage, 0, 0, 0});
      const FilterTrace fwd =
          run_filter(fc, rig.fwd().models(), traj.observations, {}, finit, params);
      const FilterTrace bwd =
          run_filter(bc, rig.bwd().models(), traj.observations, {}, binit, params);
      SmootherConfig sc;
      sc.seed = seed;
      sc.resampler = resampler;
      const SmoothedPosterior post =
          mdps_combine(sc, fwd, bwd, rig.smoother(),
                       BandwidthSource::from_params(rig.bw_smooth()), traj.observations, params);
      out.sets.resize(T);
      for (std::size_t t = 0; t < T; ++t) out.sets[t] = post.steps[t].particles;
      out.bandwidth = post.bw_value;
      break;
    }
    case Method::kFfbs: {
      FilterConfig fc;
      fc.particles = particles;
      fc.resampler = resampler;
      fc.gradient_mode = GradientMode::kTruncated;
      fc.seed = seed;
      FilterModels models;
      models.dynamics = &rig.ffbs_dynamics();
      models.measurement = &rig.ffbs_measurement();
      models.bw_resample = BandwidthSource::from_params(rig.ffbs_bw());
      models.bw_posterior = BandwidthSource::from_params(rig.ffbs_bw());
      const ParticleSet init = init_from_truth(traj.states.front(), particles, seed,
                                               RngPath{fc.rng_stage, 0, 0, 0});
      const FilterTrace trace =
          run_filter(fc, models, traj.observations, {}, init, params);
      const FfbsDynamics& dyn = rig.ffbs_dynamics();
      const auto mean_fn = [&](std::span<const State3> from, std::span<State3> mu) {
        dyn.mean_plain(params, from, mu);
      };
      const auto lp_fn = [&](const State3& mu, const State3& to) {
        return dyn.logpdf_given_mean(mu, to);
      };
      const auto smoothed = ffbs_smooth(trace, mean_fn, lp_fn);
      out.sets.resize(T);
      for (std::size_t t = 0; t < T; ++t) {
        out.sets[t] = trace.steps[t].post;
        out.sets[t].log_weights = smoothed[t];
      }
      out.bandwidth = rig.ffbs_bw().value(params);
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Dense-truth evaluation of one trained rig over a split.
inline EvalReport evaluate(const BearingsRig& rig, const std::vector<Trajectory>& split,
                           const EvalOptions& opts) {
  EvalReport report;
  report.per_seq.resize(split.size());

  parallel_for(split.size(), opts.threads, [&](std::size_t s) {
    const Trajectory& traj = split[s];
    const std::uint64_t seed = detail::sequence_seed(opts.seed, s);
    const auto t0 = std::chrono::steady_clock::now();
    const detail::PosteriorSequence post = detail::eval_posteriors(
        rig, opts.resampler, opts.soft_lambda, opts.particles, seed, traj);
    const auto t1 = std::chrono::steady_clock::now();

    SequenceEval ev;
    ev.recall_top1.assign(opts.recall_thresholds.size(), 0.0);
    ev.recall_topk.assign(opts.recall_thresholds.size(), 0.0);
    const std::size_t T = traj.observations.size();
    double nll = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      nll -= mixture_logpdf(MixtureDensity{post.sets[t], post.bandwidth}, traj.states[t]);
      const auto modes =
          extract_modes(post.sets[t], opts.top_k, opts.nms_radius_pos, opts.nms_radius_theta);
      for (std::size_t h = 0; h < opts.recall_thresholds.size(); ++h) {
        const auto& th = opts.recall_thresholds[h];
        const auto hit = [&](const Mode& m) {
          const double dp = std::hypot(m.state.x - traj.states[t].x,
                                       m.state.y - traj.states[t].y);
          const double dth = std::abs(
              wrap_angle(m.state.theta.rad() - traj.states[t].theta.rad()));
          return dp <= th.pos && dth <= th.theta;
        };
        if (!modes.empty() && hit(modes[0])) ev.recall_top1[h] += 1.0;
        for (const Mode& m : modes) {
          if (hit(m)) {
            ev.recall_topk[h] += 1.0;
            break;
          }
        }
      }
    }
    ev.mean_nll = nll / static_cast<double>(T);
    for (double& r : ev.recall_top1) r /= static_cast<double>(T);
    for (double& r : ev.recall_topk) r /= static_cast<double>(T);
    ev.wall_ms_per_step =
        std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(T);
    report.per_seq[s] = std::move(ev);
  });

  std::vector<double> nlls(report.per_seq.size());
  std::vector<double> times(report.per_seq.size());
  report.recall_top1_mean.assign(opts.recall_thresholds.size(), 0.0);
  report.recall_topk_mean.assign(opts.recall_thresholds.size(), 0.0);
  for (std::size_t s = 0; s < report.per_seq.size(); ++s) {
    nlls[s] = report.per_seq[s].mean_nll;
    times[s] = report.per_seq[s].wall_ms_per_step;
    for (std::size_t h = 0; h < opts.recall_thresholds.size(); ++h) {
      report.recall_top1_mean[h] += report.per_seq[s].recall_top1[h];
      report.recall_topk_mean[h] += report.per_seq[s].recall_topk[h];
    }
  }
  const double inv = 1.0 / static_cast<double>(report.per_seq.size());
  for (double& r : report.recall_top1_mean) r *= inv;
  for (double& r : report.recall_topk_mean) r *= inv;
  report.nll_mean = 0.0;
  for (double v : nlls) report.nll_mean += v;
  report.nll_mean *= inv;
  report.nll_median = quantile(nlls, 0.5);
  report.nll_q1 = quantile(nlls, 0.25);
  report.nll_q3 = quantile(nlls, 0.75);
  report.nll_min = *std::min_element(nlls.begin(), nlls.end());
  report.nll_max = *std::max_element(nlls.begin(), nlls.end());
  report.wall_ms_per_step_median = quantile(times, 0.5);
  return report;
}

/// Validation grid search for the FFBS posterior KDE bandwidth.  The filter
/// and backward reweighting run once per sequence; candidates only change
/// the KDE evaluation.
inline Bandwidth tune_ffbs_bandwidth(BearingsRig& rig, const std::vector<Trajectory>& val,
                                     const EvalOptions& opts, std::size_t max_sequences = 30,
                                     TrainLog* log = nullptr) {
  if (rig.method() != Method::kFfbs) throw std::invalid_argument("tune_ffbs_bandwidth: wrong rig");
  const std::size_t n_seq = std::min(val.size(), max_sequences);
  std::vector<detail::PosteriorSequence> cached(n_seq);
  parallel_for(n_seq, opts.threads, [&](std::size_t s) {
    cached[s] = detail::eval_posteriors(rig, opts.resampler, opts.soft_lambda, opts.particles,
                                        detail::sequence_seed(opts.seed, s), val[s]);
  });

  const std::vector<double> sigmas{0.2, 0.3, 0.45, 0.7, 1.0};
  const std::vector<double> kappas{4.0, 8.0, 16.0, 32.0};
  Bandwidth best;
  double best_nll = std::numeric_limits<double>::infinity();
  for (double sigma : sigmas) {
    for (double kappa : kappas) {
      const Bandwidth cand{sigma, sigma, kappa};
      std::vector<double> nlls(n_seq);
      for (std::size_t s = 0; s < n_seq; ++s) {
        double nll = 0.0;
        const std::size_t T = val[s].states.size();
        for (std::size_t t = 0; t < T; ++t) {
          nll -= mixture_logpdf(MixtureDensity{cached[s].sets[t], cand}, val[s].states[t]);
        }
        nlls[s] = nll / static_cast<double>(T);
      }
      const double med = quantile(nlls, 0.5);
      if (log) {
        log->add("ffbs bw sigma " + fmt_double(sigma) + " kappa " + fmt_double(kappa) +
                 " median nll " + fmt_double(med));
      }
      if (med < best_nll) {
        best_nll = med;
        best = cand;
      }
    }
  }
  auto raw = rig.store.slice("ffbs.bw_posterior");
  raw[0] = raw_from_sigma(best.sigma_x);
  raw[1] = raw_from_sigma(best.sigma_y);
  raw[2] = raw_from_kappa(best.kappa_theta);
  return best;
}

}  // namespace mdps
