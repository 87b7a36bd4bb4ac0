#include <doctest.h>

#include <cmath>
#include <vector>

#include "mdps/models.hpp"
#include "mdps/smoothers.hpp"
#include "oracles.hpp"

using namespace mdps;

namespace {

double replay_fd(Tape& tape, Var out, std::span<const double> params, std::size_t j,
                 double eps = 1e-5) {
  std::vector<double> p(params.begin(), params.end());
  p[j] += eps;
  const double hi = tape.replay(out, p);
  p[j] -= 2.0 * eps;
  const double lo = tape.replay(out, p);
  return (hi - lo) / (2.0 * eps);
}

}  // namespace

TEST_CASE("dynamics: zero network, translation invariance, bounds") {
  ParamStore store;
  MlpDynamics dyn = MlpDynamics::create(store, "dyn", {4}, 1);
  SUBCASE("zero weights give a zero residual") {
    for (double& v : store.values()) v = 0.0;
    const State3 prev{3.0, -2.0, Angle(0.8)};
    const std::vector<double> etas{0.5, -0.3, 1.2};
    State3 out;
    dyn.propose_plain(store.values(), std::span<const State3>(&prev, 1), std::nullopt, etas,
                      std::span<State3>(&out, 1));
    CHECK(out.x == prev.x);
    CHECK(out.y == prev.y);
    CHECK(out.theta.rad() == doctest::Approx(prev.theta.rad()).epsilon(1e-12));
  }
  SUBCASE("translating the particle translates the output identically") {
    const State3 a{1.0, 2.0, Angle(-0.4)};
    const State3 b{1.0 + 7.5, 2.0 - 3.25, Angle(-0.4)};
    const std::vector<double> etas{0.1, 0.7, -0.9};
    State3 oa, ob;
    dyn.propose_plain(store.values(), std::span<const State3>(&a, 1), std::nullopt, etas,
                      std::span<State3>(&oa, 1));
    dyn.propose_plain(store.values(), std::span<const State3>(&b, 1), std::nullopt, etas,
                      std::span<State3>(&ob, 1));
    CHECK(ob.x - oa.x == doctest::Approx(7.5).epsilon(1e-12));
    CHECK(ob.y - oa.y == doctest::Approx(-3.25).epsilon(1e-12));
    CHECK(ob.theta.rad() == oa.theta.rad());
  }
  SUBCASE("position residual bounded even for a saturated network") {
    for (double& v : store.values()) v = 25.0;
    const State3 prev{0.0, 0.0, Angle(0.0)};
    const std::vector<double> etas{3.0, 3.0, 3.0};
    State3 out;
    dyn.propose_plain(store.values(), std::span<const State3>(&prev, 1), std::nullopt, etas,
                      std::span<State3>(&out, 1));
    CHECK(std::abs(out.x) <= 5.0);
    CHECK(std::abs(out.y) <= 5.0);
  }
}

TEST_CASE("dynamics: gradcheck of the proposal against replay FD") {
  ParamStore store;
  MlpDynamics dyn = MlpDynamics::create(store, "dyn", {4}, 7);
  Tape tape{store.values()};
  const State3 prev{0.5, -0.5, Angle(1.1)};
  const std::vector<double> etas{0.4, -1.0, 0.6};
  const auto out = dyn.propose(tape, std::span<const State3>(&prev, 1), std::nullopt, etas);
  Var probe = out[0].x * 0.7 + out[0].y * 1.3 + sin(out[0].theta);
  tape.backward(probe);
  for (std::size_t j = 0; j < store.size(); ++j) {
    const double fd = replay_fd(tape, probe, store.values(), j);
    const double an = tape.param_adjoints()[j];
    CHECK(std::abs(an - fd) <= 1e-5 * std::max({std::abs(an), std::abs(fd), 1e-7}));
  }
}

TEST_CASE("measurement: codomain, determinism, gradcheck") {
  ParamStore store;
  MlpMeasurement meas = MlpMeasurement::create(store, "meas", {4}, 3);
  RngStream rng(5, RngPath{rng_stage::kEval, 0, 0, 0});
  for (int rep = 0; rep < 50; ++rep) {
    const State3 s{rng.uniform(-10, 10), rng.uniform(-10, 10), Angle(rng.uniform(-kPi, kPi))};
    double lw;
    meas.log_weight_plain(store.values(), std::span<const State3>(&s, 1),
                          rng.uniform(-kPi, kPi), std::span<double>(&lw, 1));
    CHECK(lw >= std::log(1e-5) - 1e-12);
    CHECK(lw <= 0.0);
  }

  const State3 s{1.0, 2.0, Angle(0.3)};
  const State3 pair[2] = {s, s};
  double lw2[2];
  meas.log_weight_plain(store.values(), std::span<const State3>(pair, 2), 0.9,
                        std::span<double>(lw2, 2));
  CHECK(lw2[0] == lw2[1]);

  Tape tape{store.values()};
  std::vector<TapedState3> taped{
      TapedState3{tape.constant(0.4), tape.constant(-0.8), tape.constant(0.2)}};
  const auto lws = meas.log_weight(tape, taped, 0.7);
  tape.backward(lws[0]);
  for (std::size_t j = 0; j < store.size(); ++j) {
    const double fd = replay_fd(tape, lws[0], store.values(), j);
    const double an = tape.param_adjoints()[j];
    CHECK(std::abs(an - fd) <= 1e-5 * std::max({std::abs(an), std::abs(fd), 1e-7}));
  }
}

TEST_CASE("smoother weight: equal inputs, explicit q division, gradcheck") {
  ParamStore store;
  MlpSmootherWeight net = MlpSmootherWeight::create(store, "sm", {4}, 9);
  Tape tape{store.values()};

  // identical particles with identical density inputs score identically
  const State3 s{0.3, 0.4, Angle(-0.2)};
  const State3 pair[2] = {s, s};
  const Var lf[2] = {tape.constant(-1.0), tape.constant(-1.0)};
  const Var lb[2] = {tape.constant(-2.0), tape.constant(-2.0)};
  const auto lws = net.log_weight(tape, std::span<const State3>(pair, 2), 0.5,
                                  std::span<const Var>(lf, 2), std::span<const Var>(lb, 2));
  CHECK(lws[0].value() == lws[1].value());

  // doubling q halves the unnormalized weight
  const Var w1 = smoother_weight(tape, net, s, 0.5, lf[0], lb[0], 0.4);
  const Var w2 = smoother_weight(tape, net, s, 0.5, lf[0], lb[0], 0.8);
  CHECK(w1.value() == doctest::Approx(2.0 * w2.value()).epsilon(1e-12));
  CHECK_THROWS_AS(smoother_weight(tape, net, s, 0.5, lf[0], lb[0], 0.0), std::invalid_argument);
  CHECK_THROWS_AS(smoother_weight(tape, net, s, 0.5, lf[0], lb[0], -1.0), std::invalid_argument);

  // gradient of the numerator over a fixed q
  tape.backward(w1);
  for (std::size_t j = 0; j < store.size(); ++j) {
    const double fd = replay_fd(tape, w1, store.values(), j);
    const double an = tape.param_adjoints()[j];
    CHECK(std::abs(an - fd) <= 1e-5 * std::max({std::abs(an), std::abs(fd), 1e-7}));
  }
}

TEST_CASE("ffbs dynamics: explicit density peak, symmetry, normalization") {
  ParamStore store;
  FfbsDynamics dyn = FfbsDynamics::create(store, "ffbs", {4}, 11);
  const State3 from{1.0, -1.0, Angle(0.6)};
  State3 mu;
  dyn.mean_plain(store.values(), std::span<const State3>(&from, 1), std::span<State3>(&mu, 1));

  // peak value at the predicted mean
  const double peak = dyn.transition_logpdf(store.values(), from, mu);
  const double expect = -std::log(FfbsDynamics::kStdX * std::sqrt(kTwoPi)) -
                        std::log(FfbsDynamics::kStdY * std::sqrt(kTwoPi)) -
                        std::log(FfbsDynamics::kStdTheta * std::sqrt(kTwoPi));
  CHECK(peak == doctest::Approx(expect).epsilon(1e-12));

  // symmetric in the sign of the angle residual
  State3 plus = mu, minus = mu;
  plus.theta = Angle(mu.theta.rad() + 0.4);
  minus.theta = Angle(mu.theta.rad() - 0.4);
  CHECK(dyn.transition_logpdf(store.values(), from, plus) ==
        doctest::Approx(dyn.transition_logpdf(store.values(), from, minus)).epsilon(1e-12));

  // integrates to about 1 over the position dimensions at fixed angle
  const int n = 160;
  const double span = 6.0;
  const double h = 2.0 * span / n;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double wx = (i == 0 || i == n) ? 0.5 : 1.0;
    for (int j = 0; j <= n; ++j) {
      const double wy = (j == 0 || j == n) ? 0.5 : 1.0;
      State3 to{mu.x - span + h * i, mu.y - span + h * j, mu.theta};
      integral += wx * wy * std::exp(dyn.transition_logpdf(store.values(), from, to));
    }
  }
  integral *= h * h;
  const double angle_factor = std::exp(gauss_logpdf(0.0, FfbsDynamics::kStdTheta));
  CHECK(integral == doctest::Approx(angle_factor).epsilon(1e-3));
}

TEST_CASE("true bearings likelihood matches the analytic mixture") {
  TrueBearingsLikelihood lik(0.15, 50.0);
  const State3 s{3.0, 4.0, Angle(0.0)};
  const double psi = std::atan2(4.0, 3.0);
  for (double y : {psi, psi + 0.1, psi + kPi}) {
    double lw;
    lik.log_weight_plain({}, std::span<const State3>(&s, 1), y, std::span<double>(&lw, 1));
    const double expect =
        std::log(0.15 / kTwoPi + 0.85 * std::exp(vm_logpdf(y - psi, 50.0)));
    CHECK(lw == doctest::Approx(expect).epsilon(1e-13));
  }
}
