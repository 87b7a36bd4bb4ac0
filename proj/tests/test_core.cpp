#include <doctest.h>

#include <cmath>
#include <vector>

#include "mdps/core.hpp"
#include "oracles.hpp"

using namespace mdps;

TEST_CASE("wrap_angle canonical range") {
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(3.0 * kPi) == doctest::Approx(kPi).epsilon(1e-12));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi).epsilon(1e-12));
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi).epsilon(1e-12));
  CHECK_THROWS_AS(wrap_angle(std::numeric_limits<double>::infinity()), std::invalid_argument);
  CHECK_THROWS_AS(wrap_angle(std::nan("")), std::invalid_argument);

  // wrap(theta + 2 pi k) == wrap(theta)
  for (double theta : {-2.7, -0.4, 0.0, 1.1, 3.0}) {
    for (int k : {-3, -1, 1, 4}) {
      CHECK(wrap_angle(theta + kTwoPi * k) == doctest::Approx(wrap_angle(theta)).epsilon(1e-10));
    }
  }
  // always in (-pi, pi]
  for (int i = -1000; i <= 1000; ++i) {
    const double w = wrap_angle(0.137 * i);
    CHECK(w > -kPi);
    CHECK(w <= kPi);
  }
}

TEST_CASE("angle_to_vec / vec_to_angle") {
  auto [u0, v0] = angle_to_vec(Angle(0.0));
  CHECK(u0 == doctest::Approx(0.0));
  CHECK(v0 == doctest::Approx(1.0));
  auto [u1, v1] = angle_to_vec(Angle(kPi / 2));
  CHECK(u1 == doctest::Approx(1.0));
  CHECK(v1 == doctest::Approx(0.0).epsilon(1e-12));
  auto [u2, v2] = angle_to_vec(Angle(kPi));
  CHECK(u2 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(v2 == doctest::Approx(-1.0));

  CHECK(vec_to_angle(0.0, 1.0).rad() == 0.0);
  CHECK(vec_to_angle(1.0, 0.0).rad() == doctest::Approx(kPi / 2));
  // scale invariance
  const double base = vec_to_angle(0.6, 0.8).rad();
  for (double c : {0.1, 2.0, 37.5}) {
    CHECK(vec_to_angle(0.6 * c, 0.8 * c).rad() == doctest::Approx(base).epsilon(1e-14));
  }
  CHECK_THROWS_AS(vec_to_angle(0.0, 0.0), std::invalid_argument);

  // round trip over the whole canonical range
  for (int i = -314; i <= 314; ++i) {
    const double theta = static_cast<double>(i) / 100.0;
    const auto [u, v] = angle_to_vec(Angle(theta));
    CHECK(vec_to_angle(u, v).rad() == doctest::Approx(wrap_angle(theta)).epsilon(1e-12));
  }
}

TEST_CASE("RngStream determinism and stream independence") {
  RngPath path{rng_stage::kSim, 7, 3, rng_purpose::kDynamicsNoise};
  RngStream a(42, path), b(42, path);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c(42, path);
  RngStream d(43, path);
  int differing = 0;
  for (int i = 0; i < 64; ++i) differing += (c.next_u64() != d.next_u64());
  CHECK(differing > 60);

  // permuting particle indices permutes per-particle noise identically
  std::vector<double> first, second;
  for (std::uint32_t i = 0; i < 8; ++i) {
    RngStream s(9, RngPath{1, 2, i, 4});
    first.push_back(s.normal());
  }
  for (std::uint32_t i = 8; i-- > 0;) {
    RngStream s(9, RngPath{1, 2, i, 4});
    second.insert(second.begin(), s.normal());
  }
  CHECK(first == second);
}

TEST_CASE("RngStream uniform01 and normal statistics") {
  RngStream rng(123, RngPath{1, 1, 1, 1});
  const int n = 100000;
  std::vector<double> us(n), zs(n);
  for (int i = 0; i < n; ++i) {
    us[i] = rng.uniform01();
    CHECK(us[i] > 0.0);
    CHECK(us[i] <= 1.0);
    zs[i] = rng.normal();
  }
  const auto u = oracle::mean_std(us);
  CHECK(std::abs(u.mean - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  const auto z = oracle::mean_std(zs);
  CHECK(std::abs(z.mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(z.std == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("logsumexp fixed-order reduction") {
  std::vector<double> v{-1.0, -2.0, -3.0};
  const double expect = std::log(std::exp(-1.0) + std::exp(-2.0) + std::exp(-3.0));
  CHECK(logsumexp(v) == doctest::Approx(expect).epsilon(1e-14));
  std::vector<double> big{1000.0, 1000.0};
  CHECK(logsumexp(big) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("ParticleSet normalization and mean") {
  ParticleSet ps;
  ps.states = {State3{0.0, 0.0, Angle(0.1)}, State3{2.0, 4.0, Angle(0.3)}};
  ps.log_weights = {std::log(0.25), std::log(0.75)};
  CHECK(ps.normalized());
  ps.log_weights = {0.0, 0.0};
  CHECK_FALSE(ps.normalized());
  ps.normalize();
  CHECK(ps.normalized());
  const State3 m = ps.mean();
  CHECK(m.x == doctest::Approx(1.0));
  CHECK(m.y == doctest::Approx(2.0));
  CHECK(m.theta.rad() == doctest::Approx(0.2).epsilon(1e-3));
}
