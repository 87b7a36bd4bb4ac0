#pragma once

// Per-dimension smoothing kernels: Gaussian for x/y and von Mises for the
// angle, plus the modified Bessel function I0 needed by the von Mises
// normalizer.  Bandwidths are learned as unconstrained raw parameters and
// mapped through smooth floors/caps.

#include <cmath>
#include <stdexcept>

#include "mdps/core.hpp"

namespace mdps {

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)
inline constexpr double kSigmaFloor = 1e-3;                 // meters
inline constexpr double kKappaCap = 1e4;

/// Kernel spread per state dimension: Gaussian sigmas for x/y (meters) and a
/// von Mises concentration for the angle.
struct Bandwidth {
  double sigma_x = 0.5;
  double sigma_y = 0.5;
  double kappa_theta = 10.0;

  bool valid() const {
    return sigma_x > 0.0 && sigma_y > 0.0 && kappa_theta > 0.0 &&
           std::isfinite(sigma_x) && std::isfinite(sigma_y) &&
           std::isfinite(kappa_theta);
  }
};

// Raw-parameter mappings.  sigma = floor + exp(s) keeps sigma above the
// floor with a smooth gradient; kappa = 1 / (exp(-k) + 1/cap) behaves like
// exp(k) for small kappa and saturates at the cap.
inline double sigma_from_raw(double s) { return kSigmaFloor + std::exp(s); }
inline double raw_from_sigma(double sigma) {
  if (sigma <= kSigmaFloor) throw std::invalid_argument("raw_from_sigma: sigma at or below floor");
  return std::log(sigma - kSigmaFloor);
}
inline double kappa_from_raw(double k) { return 1.0 / (std::exp(-k) + 1.0 / kKappaCap); }
inline double raw_from_kappa(double kappa) {
  if (kappa <= 0.0 || kappa >= kKappaCap) throw std::invalid_argument("raw_from_kappa: kappa outside (0, cap)");
  return -std::log(1.0 / kappa - 1.0 / kKappaCap);
}

/// log N(d; 0, sigma^2)
inline double gauss_logpdf(double d, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gauss_logpdf: sigma <= 0");
  const double z = d / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * kLogTwoPi;
}

inline double gauss_sample(double mu, double sigma, RngStream& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("gauss_sample: sigma < 0");
  return mu + sigma * rng.normal();
}

namespace detail {

// Power series sums S0 = I0(kappa) and S1 = I1(kappa)/(kappa/2) for small
// kappa; uniformly accurate below the switch point.
inline void bessel_series(double kappa, double& i0, double& i1_over_half_kappa) {
  const double t = 0.25 * kappa * kappa;
  double term = 1.0;
  double s0 = 1.0;
  double s1 = 1.0;  // sum of t^m / (m! (m+1)!)
  double term1 = 1.0;
  for (int m = 1; m < 200; ++m) {
    term *= t / (static_cast<double>(m) * m);
    term1 *= t / (static_cast<double>(m) * (m + 1));
    s0 += term;
    s1 += term1;
    if (term < 1e-18 * s0 && term1 < 1e-18 * s1) break;
  }
  i0 = s0;
  i1_over_half_kappa = s1;
}

// Asymptotic tails: I_nu(k) ~ e^k / sqrt(2 pi k) * sum_j c_j / k^j with
// c_j built from the recurrence below; truncated where terms stop shrinking.
inline double bessel_asymptotic_sum(double kappa, double mu4) {
  double sum = 1.0;
  double term = 1.0;
  double prev = 1.0;
  for (int j = 1; j <= 14; ++j) {
    const double num = mu4 - (2.0 * j - 1.0) * (2.0 * j - 1.0);
    term *= -num / (8.0 * j * kappa);
    if (std::abs(term) >= std::abs(prev)) break;  // divergent tail begins
    sum += term;
    prev = term;
  }
  return sum;
}

inline constexpr double kBesselSwitch = 30.0;

}  // namespace detail

/// log I0(kappa); relative error below 1e-10 over kappa >= 0.
inline double log_bessel_i0(double kappa) {
  if (kappa < 0.0 || !std::isfinite(kappa)) {
    throw std::invalid_argument("log_bessel_i0: kappa < 0");
  }
  if (kappa < detail::kBesselSwitch) {
    double i0, i1h;
    detail::bessel_series(kappa, i0, i1h);
    return std::log(i0);
  }
  const double s0 = detail::bessel_asymptotic_sum(kappa, 0.0);
  return kappa - 0.5 * std::log(kTwoPi * kappa) + std::log(s0);
}

/// I1(kappa) / I0(kappa), the derivative of log I0.
inline double bessel_i1_i0_ratio(double kappa) {
  if (kappa < 0.0 || !std::isfinite(kappa)) {
    throw std::invalid_argument("bessel_i1_i0_ratio: kappa < 0");
  }
  if (kappa < detail::kBesselSwitch) {
    double i0, i1h;
    detail::bessel_series(kappa, i0, i1h);
    return 0.5 * kappa * i1h / i0;
  }
  const double s0 = detail::bessel_asymptotic_sum(kappa, 0.0);
  const double s1 = detail::bessel_asymptotic_sum(kappa, 4.0);
  return s1 / s0;
}

/// log VonMises(dtheta; 0, kappa); exactly 2*pi periodic in dtheta.
inline double vm_logpdf(double dtheta, double kappa) {
  if (!(kappa > 0.0)) throw std::invalid_argument("vm_logpdf: kappa <= 0");
  return kappa * std::cos(dtheta) - kLogTwoPi - log_bessel_i0(kappa);
}

/// Best-Fisher rejection sampler for VonMises(mu, kappa), wrapped to (-pi, pi].
inline Angle vm_sample(Angle mu, double kappa, RngStream& rng) {
  if (!(kappa > 0.0)) throw std::invalid_argument("vm_sample: kappa <= 0");
  if (kappa < 1e-8) {
    return Angle(rng.uniform(-kPi, kPi));
  }
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  double f = 0.0;
  for (;;) {
    const double u1 = rng.uniform01();
    const double u2 = rng.uniform01();
    const double z = std::cos(kPi * u1);
    f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2.0 - c) - u2 > 0.0) break;
    if (std::log(c / u2) + 1.0 - c >= 0.0) break;
  }
  const double u3 = rng.uniform01();
  const double sign = (u3 > 0.5) ? 1.0 : -1.0;
  return Angle(mu.rad() + sign * std::acos(std::clamp(f, -1.0, 1.0)));
}

}  // namespace mdps
