#pragma once

// Two-filter smoothing over mixture-density filters, the classic FFBS
// reweighting baseline, and non-maximal-suppression mode extraction.
//
// The smoothed posterior at time t is built by drawing N particles from each
// filter's predictive mixture (M = 2N total), then weighting each draw by a
// learned score over (particle, observation, forward density, backward
// density), divided by the proposal density q = (fwd + bwd) / 2.  Draws from
// q carry unit-valued importance weights whose gradients flow back into both
// filters.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdps/filters.hpp"

namespace mdps {

struct SmootherConfig {
  std::uint64_t seed = 0;
  Resampler resampler = Resampler::kStratified;
  // Inference-only shortcut: skip the density evaluations and leave the
  // smoothed weights uniform, making the combination O(N) per step.
  bool uniform_weights = false;
};

struct SmoothedStep {
  ParticleSet particles;        // M draws with normalized smoothed weights
  std::vector<double> log_q;    // proposal log-density at each draw
  std::vector<double> log_fwd;  // forward predictive log-density at each draw
  std::vector<double> log_bwd;  // backward predictive log-density at each draw
  std::vector<Var> logw_taped;
};

struct SmoothedPosterior {
  std::vector<SmoothedStep> steps;
  Bandwidth bw_value;
  std::optional<VarVec> bw_vars;
  bool taped = false;

  std::size_t size() const { return steps.size(); }
  MixtureDensity posterior_mixture(std::size_t t) const {
    return MixtureDensity{steps[t].particles, bw_value};
  }
};

namespace detail {
/// Same reduction order as the taped two-element logsumexp block.
inline double logaddexp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
inline const double kLogHalf = std::log(0.5);
}  // namespace detail

/// Combine aligned forward and backward filter traces into the smoothed
/// posterior sequence.  The backward trace must cover the same T steps in
/// reversed order.
inline SmoothedPosterior mdps_combine(const SmootherConfig& cfg, const FilterTrace& fwd,
                                      const FilterTrace& bwd, const SmootherWeightModel& net,
                                      const BandwidthSource& bw_smooth,
                                      std::span<const double> observations,
                                      std::span<const double> params, Tape* tape = nullptr) {
  const std::size_t T = observations.size();
  if (fwd.size() != T || bwd.size() != T) {
    throw std::invalid_argument("mdps_combine: trace/observation length mismatch");
  }
  if (fwd.direction != FilterDirection::kForward ||
      bwd.direction != FilterDirection::kBackward) {
    throw std::invalid_argument("mdps_combine: trace directions misaligned");
  }
  const bool grad = tape != nullptr;
  // With plain (frozen) filter traces, density inputs enter as constants and
  // gradients reach only the weight model and the smoothed bandwidth.
  const bool filters_taped = grad && fwd.taped && bwd.taped;
  if (filters_taped != (grad && (fwd.taped || bwd.taped))) {
    throw std::invalid_argument("mdps_combine: traces must be both taped or both plain");
  }

  SmoothedPosterior post;
  post.taped = grad;
  post.bw_value = bw_smooth.value_of(params);
  if (grad) post.bw_vars = bw_smooth.effective(*tape);
  post.steps.resize(T);

  for (std::size_t t = 0; t < T; ++t) {
    SmoothedStep& st = post.steps[t];
    const std::size_t sb = bwd.step_for_time(t);
    const MixtureDensity fwd_mix = fwd.predictive_mixture(t);
    const MixtureDensity bwd_mix = bwd.predictive_mixture(sb);

    // N draws from each filter's predictive mixture
    const auto draws_f = mixture_sample(
        fwd_mix, fwd_mix.particles.size(), cfg.seed,
        RngPath{rng_stage::kSmoother, static_cast<std::uint32_t>(2 * t), 0, 0}, cfg.resampler);
    const auto draws_b = mixture_sample(
        bwd_mix, bwd_mix.particles.size(), cfg.seed,
        RngPath{rng_stage::kSmoother, static_cast<std::uint32_t>(2 * t + 1), 0, 0},
        cfg.resampler);
    const std::size_t m = draws_f.size() + draws_b.size();

    st.particles.states.resize(m);
    st.particles.t = static_cast<int>(t);
    for (std::size_t i = 0; i < draws_f.size(); ++i) st.particles.states[i] = draws_f[i].point;
    for (std::size_t i = 0; i < draws_b.size(); ++i) {
      st.particles.states[draws_f.size() + i] = draws_b[i].point;
    }

    if (cfg.uniform_weights) {
      st.particles.log_weights.assign(m, -std::log(static_cast<double>(m)));
      continue;
    }

    st.log_fwd.resize(m);
    st.log_bwd.resize(m);
    st.log_q.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      st.log_fwd[i] = mixture_logpdf(fwd_mix, st.particles.states[i]);
      st.log_bwd[i] = mixture_logpdf(bwd_mix, st.particles.states[i]);
      st.log_q[i] = detail::logaddexp2(detail::kLogHalf + st.log_fwd[i],
                                       detail::kLogHalf + st.log_bwd[i]);
    }

    std::vector<double> log_l(m);
    net.log_weight_plain(params, st.particles.states, observations[t], st.log_fwd,
                         st.log_bwd, log_l);
    std::vector<double> unnorm(m);
    for (std::size_t i = 0; i < m; ++i) unnorm[i] = log_l[i] - st.log_q[i];
    const double lz = logsumexp(unnorm);
    st.particles.log_weights.resize(m);
    for (std::size_t i = 0; i < m; ++i) st.particles.log_weights[i] = unnorm[i] - lz;

    if (grad) {
      std::vector<Var> lf(m), lb(m), carrier(m);
      if (filters_taped) {
        TapedMixture live_f = fwd.predictive_mixture_taped(*tape, t);
        TapedMixture live_b = bwd.predictive_mixture_taped(*tape, sb);
        const Var log_half = tape->constant(detail::kLogHalf);
        for (std::size_t i = 0; i < m; ++i) {
          lf[i] = live_f.logpdf_at(*tape, st.particles.states[i]);
          lb[i] = live_b.logpdf_at(*tape, st.particles.states[i]);
          const Var parts[2] = {lf[i] + log_half, lb[i] + log_half};
          const Var lq_live =
              tape->logsumexp_block(tape->gather(std::span<const Var>(parts, 2)));
          carrier[i] = lq_live - tape->constant(st.log_q[i]);
        }
      } else {
        for (std::size_t i = 0; i < m; ++i) {
          lf[i] = tape->constant(st.log_fwd[i]);
          lb[i] = tape->constant(st.log_bwd[i]);
          carrier[i] = tape->constant(0.0);
        }
      }
      const std::vector<Var> log_l_t =
          net.log_weight(*tape, st.particles.states, observations[t], lf, lb);
      std::vector<Var> unnorm_t(m);
      for (std::size_t i = 0; i < m; ++i) {
        unnorm_t[i] = log_l_t[i] - tape->constant(st.log_q[i]) + carrier[i];
      }
      const Var lz_t = logsumexp(*tape, unnorm_t);
      st.logw_taped.resize(m);
      for (std::size_t i = 0; i < m; ++i) {
        st.logw_taped[i] = unnorm_t[i] - lz_t;
        st.particles.log_weights[i] = st.logw_taped[i].value();
      }
    }
  }
  return post;
}

/// Mean negative log-density of the true states under the smoothed posterior
/// mixtures, over the given time indices.
inline double smoothed_nll_plain(const SmoothedPosterior& post, std::span<const State3> truth,
                                 std::span<const std::size_t> loss_indices) {
  if (loss_indices.empty()) throw std::invalid_argument("smoothed_nll: empty loss indices");
  double acc = 0.0;
  for (std::size_t t : loss_indices) {
    acc -= mixture_logpdf(post.posterior_mixture(t), truth[t]);
  }
  return acc / static_cast<double>(loss_indices.size());
}

inline Var smoothed_nll(Tape& tape, const SmoothedPosterior& post, std::span<const State3> truth,
                        std::span<const std::size_t> loss_indices) {
  if (loss_indices.empty()) throw std::invalid_argument("smoothed_nll: empty loss indices");
  if (!post.taped) throw std::invalid_argument("smoothed_nll: posterior not taped");
  Var acc = tape.constant(0.0);
  for (std::size_t t : loss_indices) {
    const SmoothedStep& st = post.steps[t];
    std::vector<double> flat(3 * st.particles.size());
    for (std::size_t i = 0; i < st.particles.size(); ++i) {
      flat[3 * i] = st.particles.states[i].x;
      flat[3 * i + 1] = st.particles.states[i].y;
      flat[3 * i + 2] = st.particles.states[i].theta.rad();
    }
    VarVec comps = tape.constants(flat);
    VarVec logw = tape.gather(st.logw_taped);
    const double point[3] = {truth[t].x, truth[t].y, truth[t].theta.rad()};
    VarVec pt = tape.constants(point);
    acc = acc - tape.mix_logpdf3(pt, comps, logw, *post.bw_vars);
  }
  return acc / static_cast<double>(loss_indices.size());
}

/// Single-draw smoothed weight: the learned score divided by the proposal
/// density.  The combination loop works in log space; this is the
/// plain-ratio form for callers holding a density value.
inline Var smoother_weight(Tape& tape, const SmootherWeightModel& net, const State3& particle,
                           double observation, Var log_fwd_density, Var log_bwd_density,
                           double q_density) {
  if (!(q_density > 0.0)) throw std::invalid_argument("smoother_weight: q density <= 0");
  const Var lf[1] = {log_fwd_density};
  const Var lb[1] = {log_bwd_density};
  const std::vector<Var> log_l = net.log_weight(
      tape, std::span<const State3>(&particle, 1), observation,
      std::span<const Var>(lf, 1), std::span<const Var>(lb, 1));
  return exp(log_l[0]) / q_density;
}

// ---------------------------------------------------------------------------
// FFBS: backward reweighting of a forward trace through an explicit
// transition density.  Particle locations never move.

/// Returns normalized smoothed log-weights per step; weights at the final
/// step equal the filter's.
inline std::vector<std::vector<double>> ffbs_smooth(
    const FilterTrace& fwd,
    const std::function<void(std::span<const State3>, std::span<State3>)>& mean_fn,
    const std::function<double(const State3&, const State3&)>& logpdf_given_mean) {
  const std::size_t T = fwd.size();
  if (T == 0) throw std::invalid_argument("ffbs_smooth: empty trace");
  std::vector<std::vector<double>> smoothed(T);
  smoothed[T - 1] = fwd.steps[T - 1].post.log_weights;

  std::vector<State3> means;
  std::vector<double> lp;  // lp[i * n_next + j] = log p(x_{t+1}^j | x_t^i)
  for (std::size_t t = T - 1; t-- > 0;) {
    const ParticleSet& cur = fwd.steps[t].post;
    const ParticleSet& next = fwd.steps[t + 1].post;
    const std::size_t n = cur.size(), n_next = next.size();
    means.resize(n);
    mean_fn(cur.states, means);
    lp.resize(n * n_next);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n_next; ++j) {
        lp[i * n_next + j] = logpdf_given_mean(means[i], next.states[j]);
      }
    }
    // denom_j = log sum_k w_t^k p(x_{t+1}^j | x_t^k)
    std::vector<double> denom(n_next);
    std::vector<double> tmp(n);
    for (std::size_t j = 0; j < n_next; ++j) {
      for (std::size_t k = 0; k < n; ++k) tmp[k] = cur.log_weights[k] + lp[k * n_next + j];
      denom[j] = logsumexp(tmp);
    }
    std::vector<double>& w = smoothed[t];
    w.resize(n);
    std::vector<double> inner(n_next);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n_next; ++j) {
        inner[j] = smoothed[t + 1][j] + lp[i * n_next + j] - denom[j];
      }
      w[i] = cur.log_weights[i] + logsumexp(inner);
    }
    const double lz = logsumexp(w);
    for (double& x : w) x -= lz;
  }
  return smoothed;
}

// ---------------------------------------------------------------------------
// Non-maximal-suppression mode extraction.

struct Mode {
  State3 state;
  double mass = 0.0;  // posterior mass suppressed with this mode
};

/// Repeatedly take the highest-weight particle, delete everything within the
/// position and angle radii, and renormalize.  Returns at most k modes,
/// fewer if the particle set is exhausted.
inline std::vector<Mode> extract_modes(const ParticleSet& ps, std::size_t k,
                                       double radius_pos, double radius_theta) {
  if (k < 1) throw std::invalid_argument("extract_modes: k < 1");
  std::vector<double> w = ps.weights();
  std::vector<bool> alive(ps.size(), true);
  std::vector<Mode> modes;
  double scale = 1.0;  // fraction of original mass still alive
  for (std::size_t round = 0; round < k; ++round) {
    std::size_t best = ps.size();
    double best_w = -1.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (alive[i] && w[i] > best_w) {
        best = i;
        best_w = w[i];
      }
    }
    if (best == ps.size()) break;
    const State3& mode_state = ps.states[best];
    double deleted = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!alive[i]) continue;
      const double dx = ps.states[i].x - mode_state.x;
      const double dy = ps.states[i].y - mode_state.y;
      const double dth =
          std::abs(wrap_angle(ps.states[i].theta.rad() - mode_state.theta.rad()));
      if (std::sqrt(dx * dx + dy * dy) <= radius_pos && dth <= radius_theta) {
        alive[i] = false;
        deleted += w[i];
      }
    }
    modes.push_back(Mode{mode_state, deleted * scale});
    if (deleted >= 1.0 - 1e-15) break;
    scale *= 1.0 - deleted;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (alive[i]) w[i] /= 1.0 - deleted;
    }
  }
  return modes;
}

}  // namespace mdps
