#pragma once

// Particle filter loops.  One driver covers the three gradient estimators:
//   iwsg      - mixture resampling with importance-weighted sample gradients
//   truncated - discrete resampling, gradients cut at every resampling step
//   soft      - discrete resampling from a uniform-mixed distribution with
//               gradient-carrying weight ratios
// A filter runs taped (training) or plain (inference); forward values agree
// bitwise between the two modes.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdps/autodiff.hpp"
#include "mdps/core.hpp"
#include "mdps/kernels.hpp"
#include "mdps/mixture.hpp"
#include "mdps/models.hpp"
#include "mdps/resampling.hpp"

namespace mdps {

enum class GradientMode { kIwsg, kTruncated, kSoft };
enum class FilterDirection { kForward, kBackward };

/// A bandwidth that is either a fixed value or a learned raw-parameter block.
struct BandwidthSource {
  std::optional<BandwidthParams> learned;
  Bandwidth fixed{};

  static BandwidthSource from_params(BandwidthParams bp) {
    BandwidthSource s;
    s.learned = bp;
    return s;
  }
  static BandwidthSource from_value(Bandwidth b) {
    BandwidthSource s;
    s.fixed = b;
    return s;
  }

  Bandwidth value_of(std::span<const double> params) const {
    return learned ? learned->value(params) : fixed;
  }

  VarVec effective(Tape& tape) const {
    return learned ? learned->effective(tape) : constant_bandwidth(tape, fixed);
  }
};

struct FilterConfig {
  std::size_t particles = 50;
  Resampler resampler = Resampler::kStratified;
  GradientMode gradient_mode = GradientMode::kIwsg;
  double soft_lambda = 0.1;
  FilterDirection direction = FilterDirection::kForward;
  int truncate_every = 0;  // optional extra BPTT truncation; 0 = off
  std::uint64_t seed = 0;
  std::uint32_t rng_stage = rng_stage::kFilterForward;
};

struct FilterModels {
  const DynamicsModel* dynamics = nullptr;
  const MeasurementModel* measurement = nullptr;
  BandwidthSource bw_resample;
  BandwidthSource bw_posterior;
};

// ---------------------------------------------------------------------------
// Initialization.

struct ArenaBounds {
  double x_min = -10.0, x_max = 10.0;
  double y_min = -10.0, y_max = 10.0;
};

/// Truth plus small Gaussian position noise and von Mises angle noise.
inline ParticleSet init_from_truth(const State3& truth, std::size_t n, std::uint64_t seed,
                                   RngPath path, double sigma_xy = 0.01,
                                   double kappa = 100.0) {
  if (n < 1) throw std::invalid_argument("init_from_truth: n < 1");
  ParticleSet ps;
  ps.states.resize(n);
  ps.log_weights.assign(n, -std::log(static_cast<double>(n)));
  ps.t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    RngPath p = path;
    p.particle = static_cast<std::uint32_t>(i);
    p.purpose = rng_purpose::kInit;
    RngStream rng(seed, p);
    ps.states[i].x = gauss_sample(truth.x, sigma_xy, rng);
    ps.states[i].y = gauss_sample(truth.y, sigma_xy, rng);
    ps.states[i].theta = vm_sample(truth.theta, kappa, rng);
  }
  return ps;
}

/// Uniform over the arena with uniform angles.
inline ParticleSet init_uniform(const ArenaBounds& bounds, std::size_t n, std::uint64_t seed,
                                RngPath path) {
  if (n < 1) throw std::invalid_argument("init_uniform: n < 1");
  if (!(bounds.x_max > bounds.x_min) || !(bounds.y_max > bounds.y_min)) {
    throw std::invalid_argument("init_uniform: empty bounds");
  }
  ParticleSet ps;
  ps.states.resize(n);
  ps.log_weights.assign(n, -std::log(static_cast<double>(n)));
  ps.t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    RngPath p = path;
    p.particle = static_cast<std::uint32_t>(i);
    p.purpose = rng_purpose::kInit;
    RngStream rng(seed, p);
    ps.states[i].x = rng.uniform(bounds.x_min, bounds.x_max);
    ps.states[i].y = rng.uniform(bounds.y_min, bounds.y_max);
    ps.states[i].theta = Angle(rng.uniform(-kPi, kPi));
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Traces.

struct StepTrace {
  ParticleSet pre;   // predictive set (post-dynamics, pre-measurement)
  ParticleSet post;  // after the measurement update, normalized
  bool degenerate = false;  // all measurement weights at the floor

  // Taped handles, populated in gradient mode.
  std::vector<TapedState3> states;  // particle states at this step
  std::vector<Var> pre_logw;
  std::vector<Var> post_logw;
};

struct FilterTrace {
  std::vector<StepTrace> steps;  // filter-local order (backward runs reversed)
  FilterDirection direction = FilterDirection::kForward;
  bool taped = false;
  Bandwidth bw_resample_value;
  Bandwidth bw_posterior_value;
  std::optional<VarVec> bw_resample_vars;
  std::optional<VarVec> bw_posterior_vars;

  std::size_t size() const { return steps.size(); }

  /// Map a real time index to the filter-local step index.
  std::size_t step_for_time(std::size_t t) const {
    return direction == FilterDirection::kForward ? t : steps.size() - 1 - t;
  }

  MixtureDensity predictive_mixture(std::size_t step) const {
    return MixtureDensity{steps[step].pre, bw_resample_value};
  }
  MixtureDensity posterior_mixture(std::size_t step) const {
    return MixtureDensity{steps[step].post, bw_posterior_value};
  }

  TapedMixture predictive_mixture_taped(Tape& tape, std::size_t step) const {
    return make_taped_mixture(tape, steps[step].states, steps[step].pre_logw,
                              *bw_resample_vars);
  }
  TapedMixture posterior_mixture_taped(Tape& tape, std::size_t step) const {
    return make_taped_mixture(tape, steps[step].states, steps[step].post_logw,
                              *bw_posterior_vars);
  }
};

// ---------------------------------------------------------------------------
// The filter driver.

namespace detail {

inline std::vector<double> dynamics_noise(const FilterConfig& cfg, std::uint32_t step,
                                          std::size_t n) {
  std::vector<double> etas(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(cfg.seed, RngPath{cfg.rng_stage, step, static_cast<std::uint32_t>(i),
                                    rng_purpose::kDynamicsNoise});
    etas[3 * i] = rng.normal();
    etas[3 * i + 1] = rng.normal();
    etas[3 * i + 2] = rng.normal();
  }
  return etas;
}

inline bool all_at_floor(std::span<const double> log_l) {
  const double floor_log = std::log(MlpMeasurement::kMinWeight) + 1e-9;
  for (double l : log_l) {
    if (l > floor_log) return false;
  }
  return true;
}

}  // namespace detail

/// Run a filter over a full observation sequence.  When `tape` is non-null
/// the run is recorded for backpropagation; otherwise everything stays on
/// plain doubles.  A backward-direction filter consumes the observations
/// reversed and the actions reversed and negated.
inline FilterTrace run_filter(const FilterConfig& cfg, const FilterModels& models,
                              std::span<const double> observations,
                              std::span<const Action> actions, const ParticleSet& init,
                              std::span<const double> params, Tape* tape = nullptr) {
  const std::size_t T = observations.size();
  if (T < 1) throw std::invalid_argument("run_filter: empty observation sequence");
  if (!actions.empty() && actions.size() != T) {
    throw std::invalid_argument("run_filter: action/observation length mismatch");
  }
  const std::size_t n = cfg.particles;
  if (init.size() == 0) throw std::invalid_argument("run_filter: empty init set");
  const bool grad = tape != nullptr;

  std::vector<double> obs(observations.begin(), observations.end());
  std::vector<Action> acts(actions.begin(), actions.end());
  if (cfg.direction == FilterDirection::kBackward) {
    std::reverse(obs.begin(), obs.end());
    std::reverse(acts.begin(), acts.end());
    for (Action& a : acts) {
      a.dx = -a.dx;
      a.dy = -a.dy;
      a.dtheta = -a.dtheta;
    }
  }

  FilterTrace trace;
  trace.direction = cfg.direction;
  trace.taped = grad;
  trace.bw_resample_value = models.bw_resample.value_of(params);
  trace.bw_posterior_value = models.bw_posterior.value_of(params);
  if (grad) {
    trace.bw_resample_vars = models.bw_resample.effective(*tape);
    trace.bw_posterior_vars = models.bw_posterior.effective(*tape);
  }
  trace.steps.resize(T);

  const double log_n = std::log(static_cast<double>(n));
  const double log_init_n = std::log(static_cast<double>(init.size()));
  (void)log_init_n;

  for (std::size_t s = 0; s < T; ++s) {
    StepTrace& st = trace.steps[s];
    const auto step_u32 = static_cast<std::uint32_t>(s);

    // --- predictive set
    if (s == 0) {
      st.pre = init;
      st.pre.t = 0;
      if (grad) {
        st.states.resize(init.size());
        st.pre_logw.resize(init.size());
        for (std::size_t i = 0; i < init.size(); ++i) {
          st.states[i].x = tape->constant(init.states[i].x);
          st.states[i].y = tape->constant(init.states[i].y);
          st.states[i].theta = tape->constant(init.states[i].theta.rad());
          st.pre_logw[i] = tape->constant(init.log_weights[i]);
        }
      }
    } else {
      const StepTrace& prev = trace.steps[s - 1];
      const RngPath rpath{cfg.rng_stage, step_u32, 0, 0};
      std::vector<State3> proposed_from(n);
      std::vector<double> pre_logw_plain(n);
      std::vector<Var> pre_logw_taped;

      const bool truncate_here =
          cfg.truncate_every > 0 && (s % static_cast<std::size_t>(cfg.truncate_every)) == 0;

      switch (cfg.gradient_mode) {
        case GradientMode::kIwsg: {
          MixtureDensity snapshot{prev.post, trace.bw_resample_value};
          const auto draws = mixture_sample(snapshot, n, cfg.seed, rpath, cfg.resampler);
          for (std::size_t i = 0; i < n; ++i) proposed_from[i] = draws[i].point;
          pre_logw_plain.assign(n, -log_n);
          if (grad) {
            pre_logw_taped.resize(n);
            if (truncate_here) {
              for (std::size_t i = 0; i < n; ++i) {
                pre_logw_taped[i] = tape->constant(-log_n);
              }
            } else {
              TapedMixture live = make_taped_mixture(*tape, prev.states, prev.post_logw,
                                                     *trace.bw_resample_vars);
              const Var log_inv_n = tape->constant(-log_n);
              for (std::size_t i = 0; i < n; ++i) {
                const Var log_iwsg = mdps::log(iwsg_attach(*tape, draws[i].point, live, snapshot));
                pre_logw_taped[i] = log_iwsg + log_inv_n;
              }
            }
          }
          break;
        }
        case GradientMode::kTruncated: {
          const std::vector<double> w = prev.post.weights();
          const auto idx = resample(cfg.resampler, w, n, cfg.seed, rpath);
          for (std::size_t i = 0; i < n; ++i) proposed_from[i] = prev.post.states[idx[i]];
          pre_logw_plain.assign(n, -log_n);
          if (grad) {
            pre_logw_taped.resize(n);
            for (std::size_t i = 0; i < n; ++i) pre_logw_taped[i] = tape->constant(-log_n);
          }
          break;
        }
        case GradientMode::kSoft: {
          const double lambda = cfg.soft_lambda;
          if (lambda < 0.0 || lambda > 1.0) {
            throw std::invalid_argument("run_filter: soft lambda outside [0, 1]");
          }
          const std::vector<double> w = prev.post.weights();
          std::vector<double> v(n);
          for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = (1.0 - lambda) * w[i] + lambda / static_cast<double>(w.size());
          }
          const auto idx = resample(cfg.resampler, v, n, cfg.seed, rpath);
          for (std::size_t i = 0; i < n; ++i) proposed_from[i] = prev.post.states[idx[i]];
          // w_j / v_j, then normalized
          std::vector<double> unnorm(n);
          for (std::size_t i = 0; i < n; ++i) {
            unnorm[i] = prev.post.log_weights[idx[i]] - std::log(v[idx[i]]);
          }
          const double lz = logsumexp(unnorm);
          for (std::size_t i = 0; i < n; ++i) pre_logw_plain[i] = unnorm[i] - lz;
          if (grad) {
            std::vector<Var> unnorm_t(n);
            for (std::size_t i = 0; i < n; ++i) {
              const Var lw_prev = truncate_here ? tape->constant(prev.post.log_weights[idx[i]])
                                                : prev.post_logw[idx[i]];
              const Var vi = (1.0 - lambda) * mdps::exp(lw_prev) +
                             lambda / static_cast<double>(w.size());
              unnorm_t[i] = lw_prev - mdps::log(vi);
            }
            const Var lz_t = logsumexp(*tape, unnorm_t);
            pre_logw_taped.resize(n);
            for (std::size_t i = 0; i < n; ++i) pre_logw_taped[i] = unnorm_t[i] - lz_t;
          }
          break;
        }
      }

      // --- dynamics
      const std::vector<double> etas = detail::dynamics_noise(cfg, step_u32, n);
      const std::optional<Action> act =
          acts.empty() ? std::nullopt : std::optional<Action>(acts[s]);
      st.pre.states.resize(n);
      st.pre.log_weights = pre_logw_plain;
      st.pre.t = static_cast<int>(s);
      if (grad) {
        st.states = models.dynamics->propose(*tape, proposed_from, act, etas);
        st.pre_logw = std::move(pre_logw_taped);
        for (std::size_t i = 0; i < n; ++i) {
          st.pre.states[i].x = st.states[i].x.value();
          st.pre.states[i].y = st.states[i].y.value();
          st.pre.states[i].theta = Angle(st.states[i].theta.value());
        }
      } else {
        models.dynamics->propose_plain(params, proposed_from, act, etas, st.pre.states);
      }
    }

    // --- measurement update
    const std::size_t m = st.pre.size();
    std::vector<double> log_l(m);
    if (grad) {
      const std::vector<Var> log_l_t = models.measurement->log_weight(*tape, st.states, obs[s]);
      for (std::size_t i = 0; i < m; ++i) log_l[i] = log_l_t[i].value();
      std::vector<Var> unnorm(m);
      for (std::size_t i = 0; i < m; ++i) unnorm[i] = st.pre_logw[i] + log_l_t[i];
      const Var lz = logsumexp(*tape, unnorm);
      st.post_logw.resize(m);
      for (std::size_t i = 0; i < m; ++i) st.post_logw[i] = unnorm[i] - lz;
    } else {
      models.measurement->log_weight_plain(params, st.pre.states, obs[s], log_l);
    }
    st.degenerate = detail::all_at_floor(log_l);

    st.post.states = st.pre.states;
    st.post.t = st.pre.t;
    st.post.log_weights.resize(m);
    if (grad) {
      for (std::size_t i = 0; i < m; ++i) st.post.log_weights[i] = st.post_logw[i].value();
    } else {
      std::vector<double> unnorm(m);
      for (std::size_t i = 0; i < m; ++i) unnorm[i] = st.pre.log_weights[i] + log_l[i];
      const double lz = logsumexp(unnorm);
      for (std::size_t i = 0; i < m; ++i) st.post.log_weights[i] = unnorm[i] - lz;
    }
  }
  return trace;
}

/// Taped posterior log-density at a point (used for NLL losses).
inline Var filter_posterior_logpdf(Tape& tape, const FilterTrace& trace, std::size_t step,
                                   const State3& x) {
  TapedMixture mix = trace.posterior_mixture_taped(tape, step);
  return mix.logpdf_at(tape, x);
}

/// Single-particle convenience wrapper over the batched dynamics interface.
inline TapedState3 dynamics_propose(Tape& tape, const DynamicsModel& model,
                                    const State3& particle, const std::optional<Action>& action,
                                    std::span<const double, 3> eta) {
  const std::vector<double> etas(eta.begin(), eta.end());
  return model.propose(tape, std::span<const State3>(&particle, 1), action, etas)[0];
}

}  // namespace mdps
