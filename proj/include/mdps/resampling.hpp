#pragma once

// Discrete resampling over weighted particle indices: multinomial, stratified
// and residual schemes, all built on one inverse-CDF primitive.
//
// Interval convention: the weight CDF partitions (0, 1] into half-open cells
// (cdf[j-1], cdf[j]] and uniforms are drawn in (0, 1], so boundary ties go to
// the left index and zero-weight particles are unselectable.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdps/core.hpp"

namespace mdps {

struct WeightCdf {
  std::vector<double> cumulative;

  /// Left-to-right running sum; the last entry is forced to exactly 1 so a
  /// draw of u == 1 cannot fall off the end.
  static WeightCdf from_weights(std::span<const double> weights) {
    if (weights.empty()) throw std::invalid_argument("WeightCdf: empty weights");
    double sum = 0.0;
    WeightCdf cdf;
    cdf.cumulative.resize(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] < 0.0 || !std::isfinite(weights[i])) {
        throw std::invalid_argument("WeightCdf: negative or non-finite weight");
      }
      sum += weights[i];
      cdf.cumulative[i] = sum;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw std::invalid_argument("WeightCdf: weights not normalized");
    }
    cdf.cumulative.back() = 1.0;
    return cdf;
  }

  std::size_t size() const { return cumulative.size(); }
};

/// Smallest index j with cdf[j] >= u, for u in (0, 1].
inline std::size_t inverse_cdf_lookup(const WeightCdf& cdf, double u) {
  if (!(u > 0.0) || u > 1.0) {
    throw std::invalid_argument("inverse_cdf_lookup: u outside (0, 1]");
  }
  auto it = std::lower_bound(cdf.cumulative.begin(), cdf.cumulative.end(), u);
  return static_cast<std::size_t>(it - cdf.cumulative.begin());
}

struct ResampleCounts {
  std::vector<std::uint32_t> counts;
};

inline ResampleCounts counts_from_indices(std::span<const std::uint32_t> indices,
                                          std::size_t n) {
  ResampleCounts rc;
  rc.counts.assign(n, 0);
  for (std::uint32_t idx : indices) rc.counts.at(idx)++;
  return rc;
}

namespace detail {
// Per-slot substream: slot k of a resampling pass always sees the same
// uniform regardless of execution order.
inline double slot_uniform(std::uint64_t seed, RngPath path, std::uint32_t slot) {
  RngPath p = path;
  p.particle = slot;
  p.purpose = rng_purpose::kResampleSlot;
  return RngStream(seed, p).uniform01();
}
}  // namespace detail

/// N_out i.i.d. categorical draws; E[count_i] = N_out * w_i.
inline std::vector<std::uint32_t> resample_multinomial(std::span<const double> weights,
                                                       std::size_t n_out,
                                                       std::uint64_t seed,
                                                       RngPath path) {
  if (n_out < 1) throw std::invalid_argument("resample_multinomial: n_out < 1");
  const WeightCdf cdf = WeightCdf::from_weights(weights);
  std::vector<std::uint32_t> indices(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double u = detail::slot_uniform(seed, path, static_cast<std::uint32_t>(k));
    indices[k] = static_cast<std::uint32_t>(inverse_cdf_lookup(cdf, u));
  }
  return indices;
}

/// One uniform per stratum ((k-1)/N, k/N], mapped through the inverse CDF.
/// Counts obey |count_i - N_out * w_i| < 2 in every trial.
inline std::vector<std::uint32_t> resample_stratified(std::span<const double> weights,
                                                      std::size_t n_out,
                                                      std::uint64_t seed,
                                                      RngPath path) {
  if (n_out < 1) throw std::invalid_argument("resample_stratified: n_out < 1");
  const WeightCdf cdf = WeightCdf::from_weights(weights);
  std::vector<std::uint32_t> indices(n_out);
  const double inv = 1.0 / static_cast<double>(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double u = (static_cast<double>(k) +
                      detail::slot_uniform(seed, path, static_cast<std::uint32_t>(k))) *
                     inv;
    indices[k] = static_cast<std::uint32_t>(inverse_cdf_lookup(cdf, std::min(u, 1.0)));
  }
  return indices;
}

/// floor(N_out * w_i) deterministic copies, remainder drawn multinomially
/// from the residual weights.
inline std::vector<std::uint32_t> resample_residual(std::span<const double> weights,
                                                    std::size_t n_out,
                                                    std::uint64_t seed,
                                                    RngPath path) {
  if (n_out < 1) throw std::invalid_argument("resample_residual: n_out < 1");
  // Validate normalization through the shared path even though the CDF
  // itself is only needed for the stochastic remainder.
  (void)WeightCdf::from_weights(weights);

  const double n = static_cast<double>(n_out);
  std::vector<std::uint32_t> indices;
  indices.reserve(n_out);
  std::vector<double> residual(weights.size());
  double residual_sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double target = n * weights[i];
    const auto copies = static_cast<std::uint32_t>(std::floor(target));
    for (std::uint32_t c = 0; c < copies; ++c) {
      indices.push_back(static_cast<std::uint32_t>(i));
    }
    residual[i] = target - std::floor(target);
    residual_sum += residual[i];
  }
  const std::size_t r = n_out - indices.size();
  if (r > 0) {
    for (double& w : residual) w /= residual_sum;
    // Floating point can leave the residual sum a hair off; renormalize hard.
    double s = std::accumulate(residual.begin(), residual.end(), 0.0);
    for (double& w : residual) w /= s;
    const WeightCdf rcdf = WeightCdf::from_weights(residual);
    for (std::size_t k = 0; k < r; ++k) {
      const double u = detail::slot_uniform(seed, path, static_cast<std::uint32_t>(k));
      indices.push_back(static_cast<std::uint32_t>(inverse_cdf_lookup(rcdf, u)));
    }
  }
  return indices;
}

enum class Resampler { kStratified, kMultinomial, kResidual };

inline std::vector<std::uint32_t> resample(Resampler scheme,
                                           std::span<const double> weights,
                                           std::size_t n_out, std::uint64_t seed,
                                           RngPath path) {
  switch (scheme) {
    case Resampler::kStratified:
      return resample_stratified(weights, n_out, seed, path);
    case Resampler::kMultinomial:
      return resample_multinomial(weights, n_out, seed, path);
    case Resampler::kResidual:
      return resample_residual(weights, n_out, seed, path);
  }
  throw std::logic_error("resample: unknown scheme");
}

}  // namespace mdps
