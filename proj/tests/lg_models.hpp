#pragma once

// Analytic 1D linear-Gaussian models plugged into the filter/smoother
// interfaces, embedded in the x dimension of State3 (y and theta pinned at
// zero).  Together with the Kalman/RTS reference in oracles.hpp these form
// the exact-inference oracle for the particle machinery.

#include <cmath>
#include <vector>

#include "mdps/models.hpp"
#include "oracles.hpp"

namespace lgtest {

using mdps::Angle;
using mdps::State3;
using mdps::TapedState3;
using mdps::Tape;
using mdps::Var;

struct LgDynamics : mdps::DynamicsModel {
  double a, q;
  LgDynamics(double a_, double q_) : a(a_), q(q_) {}

  std::vector<TapedState3> propose(Tape& tape, std::span<const State3> prev,
                                   const std::optional<mdps::Action>&,
                                   std::span<const double> etas) const override {
    std::vector<TapedState3> out(prev.size());
    for (std::size_t i = 0; i < prev.size(); ++i) {
      out[i].x = tape.constant(a * prev[i].x + q * etas[3 * i]);
      out[i].y = tape.constant(0.0);
      out[i].theta = tape.constant(0.0);
    }
    return out;
  }

  void propose_plain(std::span<const double>, std::span<const State3> prev,
                     const std::optional<mdps::Action>&, std::span<const double> etas,
                     std::span<State3> out) const override {
    for (std::size_t i = 0; i < prev.size(); ++i) {
      out[i].x = a * prev[i].x + q * etas[3 * i];
      out[i].y = 0.0;
      out[i].theta = Angle(0.0);
    }
  }
};

struct LgMeasurement : mdps::MeasurementModel {
  double r;
  explicit LgMeasurement(double r_) : r(r_) {}

  std::vector<Var> log_weight(Tape& tape, std::span<const TapedState3> particles,
                              double observation) const override {
    std::vector<Var> out(particles.size());
    for (std::size_t i = 0; i < particles.size(); ++i) {
      out[i] = tape.constant(mdps::gauss_logpdf(observation - particles[i].x.value(), r));
    }
    return out;
  }

  void log_weight_plain(std::span<const double>, std::span<const State3> particles,
                        double observation, std::span<double> out) const override {
    for (std::size_t i = 0; i < particles.size(); ++i) {
      out[i] = mdps::gauss_logpdf(observation - particles[i].x, r);
    }
  }
};

/// True smoothed weight numerator: p(y|x) * m_fwd * m_bwd / gamma(x), with
/// gamma the stationary prior implicit in the backward filter.
struct LgSmootherWeight : mdps::SmootherWeightModel {
  double r, sigma_stat;
  LgSmootherWeight(double r_, double sigma_stat_) : r(r_), sigma_stat(sigma_stat_) {}

  std::vector<Var> log_weight(Tape& tape, std::span<const State3> particles,
                              double observation, std::span<const Var> log_fwd,
                              std::span<const Var> log_bwd) const override {
    std::vector<Var> out(particles.size());
    for (std::size_t i = 0; i < particles.size(); ++i) {
      const double c = mdps::gauss_logpdf(observation - particles[i].x, r) -
                       mdps::gauss_logpdf(particles[i].x, sigma_stat);
      out[i] = log_fwd[i] + log_bwd[i] + tape.constant(c);
    }
    return out;
  }

  void log_weight_plain(std::span<const double>, std::span<const State3> particles,
                        double observation, std::span<const double> log_fwd,
                        std::span<const double> log_bwd, std::span<double> out) const override {
    for (std::size_t i = 0; i < particles.size(); ++i) {
      out[i] = log_fwd[i] + log_bwd[i] + mdps::gauss_logpdf(observation - particles[i].x, r) -
               mdps::gauss_logpdf(particles[i].x, sigma_stat);
    }
  }
};

struct LgData {
  std::vector<double> xs;
  std::vector<double> ys;
};

inline LgData simulate(const oracle::Lgssm& m, std::size_t T, std::uint64_t seed,
                       std::uint32_t seq) {
  LgData d;
  d.xs.resize(T);
  d.ys.resize(T);
  mdps::RngStream rng(seed, mdps::RngPath{mdps::rng_stage::kSim, seq, 0, 0});
  double x = m.mu0 + std::sqrt(m.p0) * rng.normal();
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) x = m.a * x + m.q * rng.normal();
    d.xs[t] = x;
    d.ys[t] = x + m.r * rng.normal();
  }
  return d;
}

inline mdps::ParticleSet sample_gaussian_init(double mu, double sigma, std::size_t n,
                                              std::uint64_t seed, std::uint32_t tag) {
  mdps::ParticleSet ps;
  ps.states.resize(n);
  ps.log_weights.assign(n, -std::log(static_cast<double>(n)));
  for (std::size_t i = 0; i < n; ++i) {
    mdps::RngStream rng(seed, mdps::RngPath{mdps::rng_stage::kSim, tag,
                                            static_cast<std::uint32_t>(i),
                                            mdps::rng_purpose::kInit});
    ps.states[i].x = mu + sigma * rng.normal();
    ps.states[i].y = 0.0;
    ps.states[i].theta = Angle(0.0);
  }
  return ps;
}

}  // namespace lgtest
