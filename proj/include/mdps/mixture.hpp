#pragma once

// Kernel density mixtures over particle sets: plain evaluation, stratified
// sampling, and the gradient-carrying importance weight attached to every
// mixture draw (unit forward value, density-ratio gradient).

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdps/autodiff.hpp"
#include "mdps/core.hpp"
#include "mdps/kernels.hpp"
#include "mdps/nn.hpp"
#include "mdps/resampling.hpp"

namespace mdps {

/// Continuous posterior m(x | particles, weights, bandwidth).
struct MixtureDensity {
  ParticleSet particles;
  Bandwidth bandwidth;
};

namespace detail {
inline void flatten_components(const ParticleSet& ps, std::vector<double>& comps,
                               std::vector<double>& logw) {
  comps.resize(3 * ps.size());
  logw.assign(ps.log_weights.begin(), ps.log_weights.end());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    comps[3 * i] = ps.states[i].x;
    comps[3 * i + 1] = ps.states[i].y;
    comps[3 * i + 2] = ps.states[i].theta.rad();
  }
}
}  // namespace detail

/// Log density of the 3D kernel mixture at x.  Same reduction as the taped
/// instruction, so taped and plain evaluations agree bitwise.
inline double mixture_logpdf(const MixtureDensity& m, const State3& x) {
  if (!m.bandwidth.valid()) throw std::invalid_argument("mixture_logpdf: invalid bandwidth");
  if (m.particles.size() == 0) throw std::invalid_argument("mixture_logpdf: empty particle set");
  std::vector<double> comps, logw;
  detail::flatten_components(m.particles, comps, logw);
  const double point[3] = {x.x, x.y, x.theta.rad()};
  const double bw[3] = {m.bandwidth.sigma_x, m.bandwidth.sigma_y, m.bandwidth.kappa_theta};
  return detail::mix_logpdf3_forward(point, comps.data(), logw.data(), bw,
                                     static_cast<std::uint32_t>(logw.size()));
}

/// One sample from the mixture: a discrete component pick plus per-dimension
/// kernel perturbation.
struct MixtureDraw {
  State3 point;
  std::uint32_t component = 0;
};

/// Draw `count` points.  Component indices come from stratified (default),
/// multinomial, or residual resampling of the mixture weights; positions are
/// perturbed as mu + sigma * eta and the angle by a von Mises draw with the
/// mixture kappa.
inline std::vector<MixtureDraw> mixture_sample(const MixtureDensity& m, std::size_t count,
                                               std::uint64_t seed, RngPath path,
                                               Resampler scheme = Resampler::kStratified) {
  if (count < 1) throw std::invalid_argument("mixture_sample: count < 1");
  if (!m.bandwidth.valid()) throw std::invalid_argument("mixture_sample: invalid bandwidth");
  const std::vector<double> w = m.particles.weights();
  const std::vector<std::uint32_t> comp = resample(scheme, w, count, seed, path);
  std::vector<MixtureDraw> draws(count);
  for (std::size_t k = 0; k < count; ++k) {
    RngPath p = path;
    p.particle = static_cast<std::uint32_t>(k);
    p.purpose = rng_purpose::kPerturb;
    RngStream rng(seed, p);
    const State3& mu = m.particles.states[comp[k]];
    MixtureDraw d;
    d.component = comp[k];
    d.point.x = gauss_sample(mu.x, m.bandwidth.sigma_x, rng);
    d.point.y = gauss_sample(mu.y, m.bandwidth.sigma_y, rng);
    d.point.theta = vm_sample(mu.theta, m.bandwidth.kappa_theta, rng);
    draws[k] = d;
  }
  return draws;
}

// ---------------------------------------------------------------------------
// Taped mixtures.

struct TapedState3 {
  Var x, y, theta;
};

/// A mixture whose components, weights and bandwidth live on a tape.
struct TapedMixture {
  VarVec comps;  // 3N interleaved (x, y, theta)
  VarVec logw;   // N
  VarVec bw;     // sigma_x, sigma_y, kappa (effective values)

  std::uint32_t size() const { return logw.n; }

  Var logpdf(Tape& tape, VarVec point3) const {
    return tape.mix_logpdf3(point3, comps, logw, bw);
  }

  Var logpdf_at(Tape& tape, const State3& point) const {
    const Var p[3] = {tape.constant(point.x), tape.constant(point.y),
                      tape.constant(point.theta.rad())};
    return logpdf(tape, tape.gather(std::span<const Var>(p, 3)));
  }

  /// Forward values as a plain mixture (the phi_0 snapshot).
  MixtureDensity snapshot() const {
    MixtureDensity m;
    const Tape& tape = *comps.tape;
    m.particles.states.resize(logw.n);
    m.particles.log_weights.resize(logw.n);
    for (std::uint32_t i = 0; i < logw.n; ++i) {
      m.particles.states[i].x = tape.value(comps.base + 3 * i);
      m.particles.states[i].y = tape.value(comps.base + 3 * i + 1);
      m.particles.states[i].theta = Angle(tape.value(comps.base + 3 * i + 2));
      m.particles.log_weights[i] = tape.value(logw.base + i);
    }
    m.bandwidth.sigma_x = tape.value(bw.base);
    m.bandwidth.sigma_y = tape.value(bw.base + 1);
    m.bandwidth.kappa_theta = tape.value(bw.base + 2);
    return m;
  }
};

inline TapedMixture make_taped_mixture(Tape& tape, std::span<const TapedState3> states,
                                       std::span<const Var> logw, VarVec bw) {
  if (states.size() != logw.size() || states.empty()) {
    throw std::invalid_argument("make_taped_mixture: size mismatch");
  }
  std::vector<Var> ids;
  ids.reserve(3 * states.size());
  for (const TapedState3& s : states) {
    ids.push_back(s.x);
    ids.push_back(s.y);
    ids.push_back(s.theta);
  }
  TapedMixture m;
  m.comps = tape.gather(ids);
  m.logw = tape.gather(logw);
  m.bw = bw;
  return m;
}

/// Raw (unconstrained) bandwidth parameters in a ParamStore block of size 3.
/// Effective values are sigma = floor + exp(raw) and a soft-capped kappa.
struct BandwidthParams {
  std::size_t offset = 0;

  static BandwidthParams create(ParamStore& store, const std::string& name,
                                const Bandwidth& init) {
    BandwidthParams bp;
    bp.offset = store.def(name, 3);
    auto s = store.slice(name);
    s[0] = raw_from_sigma(init.sigma_x);
    s[1] = raw_from_sigma(init.sigma_y);
    s[2] = raw_from_kappa(init.kappa_theta);
    return bp;
  }

  static BandwidthParams attach(const ParamStore& store, const std::string& name) {
    const auto& b = store.block(name);
    if (b.size != 3) throw std::invalid_argument("BandwidthParams::attach: bad block size");
    return BandwidthParams{b.offset};
  }

  Bandwidth value(std::span<const double> params) const {
    Bandwidth b;
    b.sigma_x = sigma_from_raw(params[offset]);
    b.sigma_y = sigma_from_raw(params[offset + 1]);
    b.kappa_theta = kappa_from_raw(params[offset + 2]);
    return b;
  }

  /// Taped effective (sigma_x, sigma_y, kappa) block.
  VarVec effective(Tape& tape) const {
    const Var sx = kSigmaFloor + exp(tape.param(static_cast<std::uint32_t>(offset)));
    const Var sy = kSigmaFloor + exp(tape.param(static_cast<std::uint32_t>(offset + 1)));
    const Var kap = 1.0 / (exp(-tape.param(static_cast<std::uint32_t>(offset + 2))) + 1.0 / kKappaCap);
    const Var v[3] = {sx, sy, kap};
    return tape.gather(std::span<const Var>(v, 3));
  }
};

/// Taped constant-bandwidth block (for analytic models and frozen evals).
inline VarVec constant_bandwidth(Tape& tape, const Bandwidth& b) {
  const Var v[3] = {tape.constant(b.sigma_x), tape.constant(b.sigma_y),
                    tape.constant(b.kappa_theta)};
  return tape.gather(std::span<const Var>(v, 3));
}

/// The importance weight of a mixture draw: exp(log m(z | phi) - log m(z | phi_0)).
/// Forward value is exactly 1; the reverse pass carries grad m / m(phi_0).
/// The snapshot must be value-identical to the live mixture at attach time.
inline Var iwsg_attach(Tape& tape, const State3& draw_point, const TapedMixture& live,
                       const MixtureDensity& snapshot) {
  const Var live_log = live.logpdf_at(tape, draw_point);
  const double snap_log = mixture_logpdf(snapshot, draw_point);
  if (std::abs(live_log.value() - snap_log) > 1e-12) {
    throw std::invalid_argument("iwsg_attach: snapshot is not value-identical to live mixture");
  }
  return exp(live_log - tape.constant(snap_log));
}

}  // namespace mdps
