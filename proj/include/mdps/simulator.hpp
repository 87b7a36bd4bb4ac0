#pragma once

// The bearings-only tracking world: waypoint-driven vehicle trajectories in a
// square arena observed as noisy bearings from a fixed radar, with a uniform
// outlier fraction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdps/core.hpp"
#include "mdps/filters.hpp"
#include "mdps/kernels.hpp"

namespace mdps {

struct SimConfig {
  ArenaBounds arena{-10.0, 10.0, -10.0, 10.0};
  double radar_x = 0.0;
  double radar_y = 0.0;
  double alpha = 0.15;       // outlier fraction
  double kappa_obs = 50.0;   // von Mises concentration of inlier bearings
  std::vector<double> speeds{1.0, 2.0};
  double dt = 1.0;
  std::size_t horizon = 50;  // sequence length T
  double waypoint_tolerance = 0.5;
  double max_turn = kPi / 4.0;
  // waypoints (and starts) are drawn this far inside the arena so that
  // turn-limited maneuvers can never leave it
  double waypoint_margin = 5.5;
  std::size_t loss_every = 4;  // training truth cadence
  std::size_t max_steps_per_waypoint = 48;

  bool valid() const {
    return alpha >= 0.0 && alpha <= 1.0 && kappa_obs > 0.0 && horizon >= 1 &&
           !speeds.empty() && arena.x_max > arena.x_min && arena.y_max > arena.y_min;
  }
};

struct Trajectory {
  std::vector<State3> states;
  std::vector<double> observations;  // canonical bearings
  std::vector<std::size_t> loss_mask;
};

struct Dataset {
  std::vector<Trajectory> train, val, eval;
  SimConfig config;
  std::uint64_t seed = 0;
};

/// Bearing from the radar to the state.
inline Angle true_bearing(const State3& s, double radar_x, double radar_y) {
  const double dx = s.x - radar_x;
  const double dy = s.y - radar_y;
  if (dx == 0.0 && dy == 0.0) {
    throw std::invalid_argument("true_bearing: state coincides with the radar");
  }
  return Angle(std::atan2(dy, dx));
}

/// One observation draw: uniform outlier with probability alpha, otherwise
/// von Mises noise around the true bearing.
inline Angle observe(const State3& s, const SimConfig& cfg, RngStream& rng) {
  if (!cfg.valid()) throw std::invalid_argument("observe: invalid config");
  const double u = rng.uniform01();
  if (u < cfg.alpha) {
    return Angle(rng.uniform(-kPi, kPi));
  }
  return vm_sample(true_bearing(s, cfg.radar_x, cfg.radar_y), cfg.kappa_obs, rng);
}

namespace detail {
struct WaypointBox {
  double x0, x1, y0, y1;
};
inline WaypointBox waypoint_box(const SimConfig& cfg) {
  WaypointBox b{cfg.arena.x_min + cfg.waypoint_margin, cfg.arena.x_max - cfg.waypoint_margin,
                cfg.arena.y_min + cfg.waypoint_margin, cfg.arena.y_max - cfg.waypoint_margin};
  if (!(b.x1 > b.x0) || !(b.y1 > b.y0)) {
    throw std::invalid_argument("generate_trajectory: arena too small for the margin");
  }
  return b;
}
}  // namespace detail

/// Waypoint-following vehicle: move toward the current waypoint at the
/// current speed, heading limited by the turn rate; on arrival pick a fresh
/// waypoint and redraw the speed.
inline Trajectory generate_trajectory(const SimConfig& cfg, std::uint64_t seed,
                                      std::uint32_t seq, bool dense_truth) {
  if (!cfg.valid()) throw std::invalid_argument("generate_trajectory: invalid config");
  const auto box = detail::waypoint_box(cfg);
  RngStream rng(seed, RngPath{rng_stage::kSim, seq, 0, rng_purpose::kWaypoint});
  RngStream obs_rng(seed, RngPath{rng_stage::kSim, seq, 0, rng_purpose::kObservation});

  const auto draw_speed = [&]() {
    const auto k = static_cast<std::size_t>(rng.uniform01() * static_cast<double>(cfg.speeds.size()));
    return cfg.speeds[std::min(k, cfg.speeds.size() - 1)];
  };

  double x = rng.uniform(box.x0, box.x1);
  double y = rng.uniform(box.y0, box.y1);
  double wx = 0.0, wy = 0.0;
  const auto draw_waypoint = [&]() {
    do {
      wx = rng.uniform(box.x0, box.x1);
      wy = rng.uniform(box.y0, box.y1);
    } while (std::hypot(wx - x, wy - y) <= cfg.waypoint_tolerance);
  };
  draw_waypoint();
  double speed = draw_speed();
  double theta = std::atan2(wy - y, wx - x);
  std::size_t steps_on_waypoint = 0;

  Trajectory traj;
  traj.states.resize(cfg.horizon);
  traj.observations.resize(cfg.horizon);
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    if (t > 0) {
      ++steps_on_waypoint;
      if (std::hypot(wx - x, wy - y) <= cfg.waypoint_tolerance ||
          steps_on_waypoint > cfg.max_steps_per_waypoint) {
        draw_waypoint();
        speed = draw_speed();
        steps_on_waypoint = 0;
      }
      const double desired = std::atan2(wy - y, wx - x);
      const double turn =
          std::clamp(wrap_angle(desired - theta), -cfg.max_turn, cfg.max_turn);
      theta = wrap_angle(theta + turn);
      x += cfg.dt * speed * std::cos(theta);
      y += cfg.dt * speed * std::sin(theta);
    }
    traj.states[t] = State3{x, y, Angle(theta)};
    traj.observations[t] = observe(traj.states[t], cfg, obs_rng).rad();
  }

  if (dense_truth) {
    traj.loss_mask.resize(cfg.horizon);
    for (std::size_t t = 0; t < cfg.horizon; ++t) traj.loss_mask[t] = t;
  } else {
    for (std::size_t t = cfg.loss_every - 1; t < cfg.horizon; t += cfg.loss_every) {
      traj.loss_mask.push_back(t);
    }
  }
  return traj;
}

struct DatasetCounts {
  std::size_t train = 5000;
  std::size_t val = 1000;
  std::size_t eval = 5000;
};

/// Deterministic dataset generation; sequence s of each split has its own
/// RNG path (splits are tagged into the sequence index space).
inline Dataset make_dataset(const SimConfig& cfg, const DatasetCounts& counts,
                            std::uint64_t seed) {
  if (counts.train < 1 || counts.val < 1 || counts.eval < 1) {
    throw std::invalid_argument("make_dataset: all split counts must be >= 1");
  }
  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;
  const auto gen_split = [&](std::size_t count, std::uint32_t tag, bool dense) {
    std::vector<Trajectory> split(count);
    for (std::size_t i = 0; i < count; ++i) {
      split[i] = generate_trajectory(cfg, seed, tag + static_cast<std::uint32_t>(i), dense);
    }
    return split;
  };
  ds.train = gen_split(counts.train, 0u, false);
  ds.val = gen_split(counts.val, 0x40000000u, true);
  ds.eval = gen_split(counts.eval, 0x80000000u, true);
  return ds;
}

}  // namespace mdps
