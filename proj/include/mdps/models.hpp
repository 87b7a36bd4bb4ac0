#pragma once

// Learnable dynamics / measurement / smoother-weight models behind small
// interfaces, so analytic models can be plugged in for oracle checks.  Each
// model has a taped path (training) and a plain path (inference); both run
// the same arithmetic.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdps/autodiff.hpp"
#include "mdps/core.hpp"
#include "mdps/kernels.hpp"
#include "mdps/mixture.hpp"
#include "mdps/nn.hpp"

namespace mdps {

class DynamicsModel {
 public:
  virtual ~DynamicsModel() = default;

  /// Propose one new state per previous state.  Previous states enter as
  /// plain values (mixture draws are detached by construction); etas holds
  /// three standard-normal draws per particle.
  virtual std::vector<TapedState3> propose(Tape& tape, std::span<const State3> prev,
                                           const std::optional<Action>& action,
                                           std::span<const double> etas) const = 0;

  virtual void propose_plain(std::span<const double> params, std::span<const State3> prev,
                             const std::optional<Action>& action,
                             std::span<const double> etas, std::span<State3> out) const = 0;
};

class MeasurementModel {
 public:
  virtual ~MeasurementModel() = default;

  /// Per-particle log weight for one observation over taped particles.
  virtual std::vector<Var> log_weight(Tape& tape, std::span<const TapedState3> particles,
                                      double observation) const = 0;

  virtual void log_weight_plain(std::span<const double> params,
                                std::span<const State3> particles, double observation,
                                std::span<double> out) const = 0;
};

class SmootherWeightModel {
 public:
  virtual ~SmootherWeightModel() = default;

  /// Log numerator of the smoothed weight: the learned score of a particle
  /// given the observation and its forward/backward predictive log-densities.
  /// The division by the proposal density happens at the call site.
  virtual std::vector<Var> log_weight(Tape& tape, std::span<const State3> particles,
                                      double observation, std::span<const Var> log_fwd,
                                      std::span<const Var> log_bwd) const = 0;

  virtual void log_weight_plain(std::span<const double> params,
                                std::span<const State3> particles, double observation,
                                std::span<const double> log_fwd,
                                std::span<const double> log_bwd,
                                std::span<double> out) const = 0;
};

// ---------------------------------------------------------------------------
// Bearings-only task models.

/// Residual dynamics network.  Position inputs are masked to keep the
/// proposal translation-invariant; the angle enters as (sin, cos).  Input is
/// [0, 0, sin th, cos th, eta1, eta2, eta3]; the output residual is bounded
/// to [-5, 5] m on positions and [-2, 2] on the angle-vector components.
class MlpDynamics : public DynamicsModel {
 public:
  static constexpr std::uint32_t kInDim = 7;
  static constexpr std::uint32_t kOutDim = 4;

  MlpDynamics() = default;
  MlpDynamics(Mlp net, double pos_bound = 5.0, double vec_bound = 2.0)
      : net_(std::move(net)), pos_bound_(pos_bound), vec_bound_(vec_bound) {}

  static MlpDynamics create(ParamStore& store, const std::string& name,
                            std::vector<std::uint32_t> hidden, std::uint64_t seed) {
    return MlpDynamics(Mlp::create(store, name, MlpSpec{kInDim, std::move(hidden), kOutDim}, seed));
  }
  static MlpDynamics attach(const ParamStore& store, const std::string& name,
                            std::vector<std::uint32_t> hidden) {
    return MlpDynamics(Mlp::attach(store, name, MlpSpec{kInDim, std::move(hidden), kOutDim}));
  }

  const Mlp& net() const { return net_; }

  std::vector<TapedState3> propose(Tape& tape, std::span<const State3> prev,
                                   const std::optional<Action>& action,
                                   std::span<const double> etas) const override {
    (void)action;  // no actions in the bearings-only task
    const auto rows = static_cast<std::uint32_t>(prev.size());
    std::vector<double> feat(static_cast<std::size_t>(rows) * kInDim);
    fill_features(prev, etas, feat);
    VarVec in = tape.constants(feat);
    VarVec out = net_.forward(tape, in, rows);
    std::vector<TapedState3> next(rows);
    for (std::uint32_t r = 0; r < rows; ++r) {
      const Var dx = tanh(out[r * kOutDim]) * pos_bound_;
      const Var dy = tanh(out[r * kOutDim + 1]) * pos_bound_;
      const Var du = tanh(out[r * kOutDim + 2]) * vec_bound_;
      const Var dv = tanh(out[r * kOutDim + 3]) * vec_bound_;
      next[r].x = dx + prev[r].x;
      next[r].y = dy + prev[r].y;
      const auto [su, cu] = angle_to_vec(prev[r].theta);
      next[r].theta = wrap(atan2(du + su, dv + cu));
    }
    return next;
  }

  void propose_plain(std::span<const double> params, std::span<const State3> prev,
                     const std::optional<Action>& action, std::span<const double> etas,
                     std::span<State3> out) const override {
    (void)action;
    const auto rows = static_cast<std::uint32_t>(prev.size());
    std::vector<double> feat(static_cast<std::size_t>(rows) * kInDim);
    fill_features(prev, etas, feat);
    std::vector<double> raw(static_cast<std::size_t>(rows) * kOutDim);
    net_.forward_plain(params, feat, raw, rows);
    for (std::uint32_t r = 0; r < rows; ++r) {
      const double dx = std::tanh(raw[r * kOutDim]) * pos_bound_;
      const double dy = std::tanh(raw[r * kOutDim + 1]) * pos_bound_;
      const double du = std::tanh(raw[r * kOutDim + 2]) * vec_bound_;
      const double dv = std::tanh(raw[r * kOutDim + 3]) * vec_bound_;
      out[r].x = dx + prev[r].x;
      out[r].y = dy + prev[r].y;
      const auto [su, cu] = angle_to_vec(prev[r].theta);
      out[r].theta = Angle(std::atan2(du + su, dv + cu));
    }
  }

 private:
  void fill_features(std::span<const State3> prev, std::span<const double> etas,
                     std::span<double> feat) const {
    if (etas.size() != 3 * prev.size()) {
      throw std::invalid_argument("MlpDynamics: need 3 noise draws per particle");
    }
    for (std::size_t r = 0; r < prev.size(); ++r) {
      double* f = feat.data() + r * kInDim;
      const auto [su, cu] = angle_to_vec(prev[r].theta);
      f[0] = 0.0;  // masked x
      f[1] = 0.0;  // masked y
      f[2] = su;
      f[3] = cu;
      f[4] = etas[3 * r];
      f[5] = etas[3 * r + 1];
      f[6] = etas[3 * r + 2];
    }
  }

  Mlp net_;
  double pos_bound_ = 5.0;
  double vec_bound_ = 2.0;
};

namespace detail {
/// Sigmoid output scaling to [wmin, 1], identical formula on both paths.
inline double scale_weight_plain(double raw, double wmin) {
  const double s = 0.5 * (std::tanh(raw * 0.5) + 1.0);
  return wmin + (1.0 - wmin) * s;
}
inline Var scale_weight(Var raw, double wmin) {
  return wmin + (1.0 - wmin) * sigmoid(raw);
}
}  // namespace detail

/// Measurement network for the bearings task.  Features: the particle angle,
/// the particle-to-radar bearing, and the observed bearing, all as (sin, cos)
/// pairs.  Output scaled into [1e-5, 1].
class MlpMeasurement : public MeasurementModel {
 public:
  static constexpr std::uint32_t kInDim = 6;
  static constexpr double kMinWeight = 1e-5;

  MlpMeasurement() = default;
  MlpMeasurement(Mlp net, double radar_x, double radar_y)
      : net_(std::move(net)), radar_x_(radar_x), radar_y_(radar_y) {}

  static MlpMeasurement create(ParamStore& store, const std::string& name,
                               std::vector<std::uint32_t> hidden, std::uint64_t seed,
                               double radar_x = 0.0, double radar_y = 0.0) {
    return MlpMeasurement(Mlp::create(store, name, MlpSpec{kInDim, std::move(hidden), 1}, seed),
                          radar_x, radar_y);
  }
  static MlpMeasurement attach(const ParamStore& store, const std::string& name,
                               std::vector<std::uint32_t> hidden, double radar_x = 0.0,
                               double radar_y = 0.0) {
    return MlpMeasurement(Mlp::attach(store, name, MlpSpec{kInDim, std::move(hidden), 1}),
                          radar_x, radar_y);
  }

  std::vector<Var> log_weight(Tape& tape, std::span<const TapedState3> particles,
                              double observation) const override {
    const auto rows = static_cast<std::uint32_t>(particles.size());
    const double oy = std::sin(observation);
    const double ox = std::cos(observation);
    std::vector<Var> feat;
    feat.reserve(static_cast<std::size_t>(rows) * kInDim);
    const Var oys = tape.constant(oy);
    const Var oxs = tape.constant(ox);
    const Var rx = tape.constant(radar_x_);
    const Var ry = tape.constant(radar_y_);
    for (const TapedState3& s : particles) {
      const Var psi = atan2(s.y - ry, s.x - rx);
      feat.push_back(sin(s.theta));
      feat.push_back(cos(s.theta));
      feat.push_back(sin(psi));
      feat.push_back(cos(psi));
      feat.push_back(oys);
      feat.push_back(oxs);
    }
    VarVec out = net_.forward(tape, tape.gather(feat), rows);
    std::vector<Var> logw(rows);
    for (std::uint32_t r = 0; r < rows; ++r) {
      logw[r] = log(detail::scale_weight(out[r], kMinWeight));
    }
    return logw;
  }

  void log_weight_plain(std::span<const double> params, std::span<const State3> particles,
                        double observation, std::span<double> out) const override {
    const auto rows = static_cast<std::uint32_t>(particles.size());
    const double oy = std::sin(observation);
    const double ox = std::cos(observation);
    std::vector<double> feat(static_cast<std::size_t>(rows) * kInDim);
    for (std::uint32_t r = 0; r < rows; ++r) {
      double* f = feat.data() + static_cast<std::size_t>(r) * kInDim;
      const State3& s = particles[r];
      const double psi = std::atan2(s.y - radar_y_, s.x - radar_x_);
      f[0] = std::sin(s.theta.rad());
      f[1] = std::cos(s.theta.rad());
      f[2] = std::sin(psi);
      f[3] = std::cos(psi);
      f[4] = oy;
      f[5] = ox;
    }
    std::vector<double> raw(rows);
    net_.forward_plain(params, feat, raw, rows);
    for (std::uint32_t r = 0; r < rows; ++r) {
      out[r] = std::log(detail::scale_weight_plain(raw[r], kMinWeight));
    }
  }

 private:
  Mlp net_;
  double radar_x_ = 0.0;
  double radar_y_ = 0.0;
};

/// Smoother weight network: the measurement features plus the forward and
/// backward predictive log-densities of the particle.
class MlpSmootherWeight : public SmootherWeightModel {
 public:
  static constexpr std::uint32_t kInDim = 8;
  static constexpr double kMinWeight = 1e-5;

  MlpSmootherWeight() = default;
  MlpSmootherWeight(Mlp net, double radar_x, double radar_y)
      : net_(std::move(net)), radar_x_(radar_x), radar_y_(radar_y) {}

  static MlpSmootherWeight create(ParamStore& store, const std::string& name,
                                  std::vector<std::uint32_t> hidden, std::uint64_t seed,
                                  double radar_x = 0.0, double radar_y = 0.0) {
    return MlpSmootherWeight(
        Mlp::create(store, name, MlpSpec{kInDim, std::move(hidden), 1}, seed), radar_x, radar_y);
  }
  static MlpSmootherWeight attach(const ParamStore& store, const std::string& name,
                                  std::vector<std::uint32_t> hidden, double radar_x = 0.0,
                                  double radar_y = 0.0) {
    return MlpSmootherWeight(Mlp::attach(store, name, MlpSpec{kInDim, std::move(hidden), 1}),
                             radar_x, radar_y);
  }

  std::vector<Var> log_weight(Tape& tape, std::span<const State3> particles,
                              double observation, std::span<const Var> log_fwd,
                              std::span<const Var> log_bwd) const override {
    const auto rows = static_cast<std::uint32_t>(particles.size());
    if (log_fwd.size() != rows || log_bwd.size() != rows) {
      throw std::invalid_argument("MlpSmootherWeight: density input size mismatch");
    }
    const double oy = std::sin(observation);
    const double ox = std::cos(observation);
    std::vector<Var> feat;
    feat.reserve(static_cast<std::size_t>(rows) * kInDim);
    const Var oys = tape.constant(oy);
    const Var oxs = tape.constant(ox);
    for (std::uint32_t r = 0; r < rows; ++r) {
      const State3& s = particles[r];
      const double psi = std::atan2(s.y - radar_y_, s.x - radar_x_);
      feat.push_back(tape.constant(std::sin(s.theta.rad())));
      feat.push_back(tape.constant(std::cos(s.theta.rad())));
      feat.push_back(tape.constant(std::sin(psi)));
      feat.push_back(tape.constant(std::cos(psi)));
      feat.push_back(oys);
      feat.push_back(oxs);
      feat.push_back(log_fwd[r]);
      feat.push_back(log_bwd[r]);
    }
    VarVec out = net_.forward(tape, tape.gather(feat), rows);
    std::vector<Var> logw(rows);
    for (std::uint32_t r = 0; r < rows; ++r) {
      logw[r] = log(detail::scale_weight(out[r], kMinWeight));
    }
    return logw;
  }

  void log_weight_plain(std::span<const double> params, std::span<const State3> particles,
                        double observation, std::span<const double> log_fwd,
                        std::span<const double> log_bwd, std::span<double> out) const override {
    const auto rows = static_cast<std::uint32_t>(particles.size());
    const double oy = std::sin(observation);
    const double ox = std::cos(observation);
    std::vector<double> feat(static_cast<std::size_t>(rows) * kInDim);
    for (std::uint32_t r = 0; r < rows; ++r) {
      double* f = feat.data() + static_cast<std::size_t>(r) * kInDim;
      const State3& s = particles[r];
      const double psi = std::atan2(s.y - radar_y_, s.x - radar_x_);
      f[0] = std::sin(s.theta.rad());
      f[1] = std::cos(s.theta.rad());
      f[2] = std::sin(psi);
      f[3] = std::cos(psi);
      f[4] = oy;
      f[5] = ox;
      f[6] = log_fwd[r];
      f[7] = log_bwd[r];
    }
    std::vector<double> raw(rows);
    net_.forward_plain(params, feat, raw, rows);
    for (std::uint32_t r = 0; r < rows; ++r) {
      out[r] = std::log(detail::scale_weight_plain(raw[r], kMinWeight));
    }
  }

 private:
  Mlp net_;
  double radar_x_ = 0.0;
  double radar_y_ = 0.0;
};

// ---------------------------------------------------------------------------
// FFBS dynamics: a mean network with hand-tuned fixed standard deviations,
// so the transition density can be evaluated, not just simulated.  The angle
// residual is treated as a bounded-variance Normal on the wrapped difference.

class FfbsDynamics : public DynamicsModel {
 public:
  static constexpr std::uint32_t kInDim = 2;   // (sin th, cos th); positions masked
  static constexpr std::uint32_t kOutDim = 4;  // bounded residual, angle as vector
  static constexpr double kStdX = 1.0;
  static constexpr double kStdY = 1.0;
  static constexpr double kStdTheta = 1.25;

  FfbsDynamics() = default;
  explicit FfbsDynamics(Mlp net) : net_(std::move(net)) {}

  static FfbsDynamics create(ParamStore& store, const std::string& name,
                             std::vector<std::uint32_t> hidden, std::uint64_t seed) {
    return FfbsDynamics(Mlp::create(store, name, MlpSpec{kInDim, std::move(hidden), kOutDim}, seed));
  }
  static FfbsDynamics attach(const ParamStore& store, const std::string& name,
                             std::vector<std::uint32_t> hidden) {
    return FfbsDynamics(Mlp::attach(store, name, MlpSpec{kInDim, std::move(hidden), kOutDim}));
  }

  const Mlp& net() const { return net_; }

  /// Predicted next-state mean for a batch of states.
  void mean_plain(std::span<const double> params, std::span<const State3> from,
                  std::span<State3> out) const {
    const auto rows = static_cast<std::uint32_t>(from.size());
    std::vector<double> feat(static_cast<std::size_t>(rows) * kInDim);
    for (std::uint32_t r = 0; r < rows; ++r) {
      const auto [su, cu] = angle_to_vec(from[r].theta);
      feat[r * kInDim] = su;
      feat[r * kInDim + 1] = cu;
    }
    std::vector<double> raw(static_cast<std::size_t>(rows) * kOutDim);
    net_.forward_plain(params, feat, raw, rows);
    for (std::uint32_t r = 0; r < rows; ++r) {
      const double dx = std::tanh(raw[r * kOutDim]) * 5.0;
      const double dy = std::tanh(raw[r * kOutDim + 1]) * 5.0;
      const double du = std::tanh(raw[r * kOutDim + 2]) * 2.0;
      const double dv = std::tanh(raw[r * kOutDim + 3]) * 2.0;
      const auto [su, cu] = angle_to_vec(from[r].theta);
      out[r].x = from[r].x + dx;
      out[r].y = from[r].y + dy;
      out[r].theta = Angle(std::atan2(du + su, dv + cu));
    }
  }

  /// Taped mean for regression training.
  std::vector<TapedState3> mean_taped(Tape& tape, std::span<const State3> from) const {
    const auto rows = static_cast<std::uint32_t>(from.size());
    std::vector<double> feat(static_cast<std::size_t>(rows) * kInDim);
    for (std::uint32_t r = 0; r < rows; ++r) {
      const auto [su, cu] = angle_to_vec(from[r].theta);
      feat[r * kInDim] = su;
      feat[r * kInDim + 1] = cu;
    }
    VarVec in = tape.constants(feat);
    VarVec raw = net_.forward(tape, in, rows);
    std::vector<TapedState3> out(rows);
    for (std::uint32_t r = 0; r < rows; ++r) {
      const Var dx = tanh(raw[r * kOutDim]) * 5.0;
      const Var dy = tanh(raw[r * kOutDim + 1]) * 5.0;
      const Var du = tanh(raw[r * kOutDim + 2]) * 2.0;
      const Var dv = tanh(raw[r * kOutDim + 3]) * 2.0;
      const auto [su, cu] = angle_to_vec(from[r].theta);
      out[r].x = dx + from[r].x;
      out[r].y = dy + from[r].y;
      out[r].theta = atan2(du + su, dv + cu);
    }
    return out;
  }

  double logpdf_given_mean(const State3& mean, const State3& to) const {
    return gauss_logpdf(to.x - mean.x, kStdX) + gauss_logpdf(to.y - mean.y, kStdY) +
           gauss_logpdf(wrap_angle(to.theta.rad() - mean.theta.rad()), kStdTheta);
  }

  /// Explicit transition density p(to | from).
  double transition_logpdf(std::span<const double> params, const State3& from,
                           const State3& to) const {
    State3 mu;
    mean_plain(params, std::span<const State3>(&from, 1), std::span<State3>(&mu, 1));
    return logpdf_given_mean(mu, to);
  }

  // DynamicsModel: simulate by sampling around the mean with the fixed stds.
  // FFBS is non-differentiable, so the taped proposal wraps the plain one in
  // constants; the tape's parameter leaves hold the live values.
  std::vector<TapedState3> propose(Tape& tape, std::span<const State3> prev,
                                   const std::optional<Action>& action,
                                   std::span<const double> etas) const override {
    std::vector<State3> out(prev.size());
    const std::vector<double> params(tape.param_values().begin(), tape.param_values().end());
    propose_plain(params, prev, action, etas, out);
    std::vector<TapedState3> taped(prev.size());
    for (std::size_t r = 0; r < prev.size(); ++r) {
      taped[r].x = tape.constant(out[r].x);
      taped[r].y = tape.constant(out[r].y);
      taped[r].theta = tape.constant(out[r].theta.rad());
    }
    return taped;
  }

  void propose_plain(std::span<const double> params, std::span<const State3> prev,
                     const std::optional<Action>& action, std::span<const double> etas,
                     std::span<State3> out) const override {
    (void)action;
    if (etas.size() != 3 * prev.size()) {
      throw std::invalid_argument("FfbsDynamics: need 3 noise draws per particle");
    }
    mean_plain(params, prev, out);
    for (std::size_t r = 0; r < prev.size(); ++r) {
      out[r].x += kStdX * etas[3 * r];
      out[r].y += kStdY * etas[3 * r + 1];
      out[r].theta = Angle(out[r].theta.rad() + kStdTheta * etas[3 * r + 2]);
    }
  }

 private:
  Mlp net_;
};

// ---------------------------------------------------------------------------
// Analytic bearings likelihood (outlier-mixed von Mises), used by FFBS in
// place of a learned measurement model.

class TrueBearingsLikelihood : public MeasurementModel {
 public:
  TrueBearingsLikelihood(double alpha, double kappa, double radar_x = 0.0,
                         double radar_y = 0.0)
      : alpha_(alpha), kappa_(kappa), radar_x_(radar_x), radar_y_(radar_y) {}

  double logpdf(const State3& s, double observation) const {
    const double psi = std::atan2(s.y - radar_y_, s.x - radar_x_);
    const double vm = std::exp(vm_logpdf(observation - psi, kappa_));
    return std::log(alpha_ / kTwoPi + (1.0 - alpha_) * vm);
  }

  std::vector<Var> log_weight(Tape& tape, std::span<const TapedState3> particles,
                              double observation) const override {
    std::vector<Var> out(particles.size());
    for (std::size_t r = 0; r < particles.size(); ++r) {
      const State3 s{particles[r].x.value(), particles[r].y.value(),
                     Angle(particles[r].theta.value())};
      out[r] = tape.constant(logpdf(s, observation));
    }
    return out;
  }

  void log_weight_plain(std::span<const double> params, std::span<const State3> particles,
                        double observation, std::span<double> out) const override {
    (void)params;
    for (std::size_t r = 0; r < particles.size(); ++r) {
      out[r] = logpdf(particles[r], observation);
    }
  }

 private:
  double alpha_;
  double kappa_;
  double radar_x_;
  double radar_y_;
};

}  // namespace mdps
