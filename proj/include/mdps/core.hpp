#pragma once

// Core value types shared by every module: canonical angles, planar poses,
// weighted particle sets and the counter-based RNG streams everything draws
// noise from.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace mdps {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Canonical representative of theta in (-pi, pi]; -pi maps to pi.
inline double wrap_angle(double theta) {
  if (!std::isfinite(theta)) {
    throw std::invalid_argument("wrap_angle: non-finite input");
  }
  double w = theta - kTwoPi * std::ceil((theta - kPi) / kTwoPi);
  if (w > kPi) w -= kTwoPi;
  if (w <= -kPi) w += kTwoPi;
  return w;
}

class Angle {
 public:
  Angle() = default;
  explicit Angle(double radians) : rad_(wrap_angle(radians)) {}
  double rad() const { return rad_; }

 private:
  double rad_ = 0.0;
};

/// Unit-circle embedding (sin(theta), cos(theta)).
inline std::pair<double, double> angle_to_vec(Angle theta) {
  return {std::sin(theta.rad()), std::cos(theta.rad())};
}

/// Inverse of angle_to_vec, scale-invariant; (0, 0) is rejected.
inline Angle vec_to_angle(double u, double v) {
  if (u == 0.0 && v == 0.0) {
    throw std::invalid_argument("vec_to_angle: zero vector");
  }
  return Angle(std::atan2(u, v));
}

/// Planar pose (x, y, theta).
struct State3 {
  double x = 0.0;
  double y = 0.0;
  Angle theta;
};

/// Optional odometry increment; absent for the bearings-only task.
struct Action {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;
};

/// Fixed left-to-right log-sum-exp reduction.
inline double logsumexp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("logsumexp: empty input");
  double m = v[0];
  for (double x : v) {
    if (x > m) m = x;
  }
  if (!std::isfinite(m)) return m;  // all -inf, or a stray inf/nan
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// N weighted poses at one time index.  Weights live in log space and are
/// kept normalized (logsumexp == 0) by every operation that returns a set.
struct ParticleSet {
  std::vector<State3> states;
  std::vector<double> log_weights;
  int t = 0;

  std::size_t size() const { return states.size(); }

  bool normalized(double tol = 1e-9) const {
    if (states.empty() || states.size() != log_weights.size()) return false;
    return std::abs(logsumexp(log_weights)) <= tol;
  }

  void normalize() {
    const double lz = logsumexp(log_weights);
    if (!std::isfinite(lz)) {
      throw std::runtime_error("ParticleSet::normalize: degenerate weights");
    }
    for (double& lw : log_weights) lw -= lz;
  }

  std::vector<double> weights() const {
    std::vector<double> w(log_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i]);
    return w;
  }

  /// Weighted mean with the angle averaged on the circle.
  State3 mean() const {
    double mx = 0.0, my = 0.0, su = 0.0, cu = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      const double w = std::exp(log_weights[i]);
      mx += w * states[i].x;
      my += w * states[i].y;
      su += w * std::sin(states[i].theta.rad());
      cu += w * std::cos(states[i].theta.rad());
    }
    State3 m;
    m.x = mx;
    m.y = my;
    m.theta = (su == 0.0 && cu == 0.0) ? Angle(0.0) : vec_to_angle(su, cu);
    return m;
  }
};

// ---------------------------------------------------------------------------
// Counter-based RNG.
//
// Streams are keyed by (seed, stage, time, particle, purpose).  The same key
// always yields the same draw sequence, and distinct keys give independent
// streams, which is what makes particle-parallel execution and
// common-random-number finite differences deterministic.

namespace rng_stage {
enum : std::uint32_t {
  kSim = 1,
  kFilterForward = 2,
  kFilterBackward = 3,
  kSmoother = 4,
  kParamInit = 5,
  kTrain = 6,
  kEval = 7,
};
}  // namespace rng_stage

namespace rng_purpose {
enum : std::uint32_t {
  kGeneric = 0,
  kInit = 1,
  kResampleSlot = 2,
  kPerturb = 3,
  kDynamicsNoise = 4,
  kObservation = 5,
  kOutlier = 6,
  kWaypoint = 7,
  kSpeed = 8,
  kStart = 9,
  kBatch = 10,
};
}  // namespace rng_purpose

struct RngPath {
  std::uint32_t stage = 0;
  std::uint32_t t = 0;
  std::uint32_t particle = 0;
  std::uint32_t purpose = 0;
};

namespace detail {
inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}
}  // namespace detail

class RngStream {
 public:
  RngStream(std::uint64_t seed, RngPath path) {
    std::uint64_t k = detail::mix64(seed + 0x9e3779b97f4a7c15ull);
    const std::uint32_t labels[4] = {path.stage, path.t, path.particle, path.purpose};
    for (std::uint32_t label : labels) {
      k = detail::mix64(k + 0x9e3779b97f4a7c15ull + label);
    }
    key_ = k;
  }

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + 0x9e3779b97f4a7c15ull * counter_);
  }

  /// Uniform draw in (0, 1].
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Uniform draw in (lo, hi].
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (no spare caching).
  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace mdps
