#include <doctest.h>

#include <cmath>
#include <vector>

#include "mdps/autodiff.hpp"
#include "mdps/nn.hpp"
#include "oracles.hpp"

using namespace mdps;

namespace {

// Central finite differences through tape replay, the independent numerical
// route for everything backward() computes.
double fd_grad(Tape& tape, Var loss, std::vector<double> params, std::size_t i,
               double eps = 1e-5) {
  params[i] += eps;
  const double hi = tape.replay(loss, params);
  params[i] -= 2.0 * eps;
  const double lo = tape.replay(loss, params);
  return (hi - lo) / (2.0 * eps);
}

double max_rel_err(Tape& tape, Var loss, std::span<const double> params,
                   double eps = 1e-5, double floor = 1e-7) {
  tape.backward(loss);
  std::vector<double> p(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double fd = fd_grad(tape, loss, p, i, eps);
    const double an = tape.param_adjoints()[i];
    const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace

TEST_CASE("backward: square, logsumexp, simple chains") {
  {
    const std::vector<double> p{3.0};
    Tape tape{p};
    Var x = tape.param(0);
    Var loss = x * x;
    tape.backward(loss);
    CHECK(tape.param_adjoints()[0] == doctest::Approx(6.0).epsilon(1e-14));
  }
  {
    const std::vector<double> p{0.3, 1.2};
    Tape tape{p};
    const Var xs[2] = {tape.param(0), tape.param(1)};
    Var loss = logsumexp(tape, std::span<const Var>(xs, 2));
    tape.backward(loss);
    const double z = std::exp(0.3) + std::exp(1.2);
    CHECK(tape.param_adjoints()[0] == doctest::Approx(std::exp(0.3) / z).epsilon(1e-12));
    CHECK(tape.param_adjoints()[1] == doctest::Approx(std::exp(1.2) / z).epsilon(1e-12));
  }
  {
    Tape other;
    Tape tape{std::vector<double>{1.0}};
    Var loss = tape.param(0) * 2.0;
    CHECK_THROWS_AS(other.backward(loss), std::invalid_argument);
  }
}

TEST_CASE("detach semantics") {
  {
    const std::vector<double> p{2.0};
    Tape tape{p};
    Var x = tape.param(0);
    Var loss = detach(x) * x;
    CHECK(loss.value() == doctest::Approx(4.0));
    tape.backward(loss);
    CHECK(tape.param_adjoints()[0] == doctest::Approx(2.0).epsilon(1e-14));
  }
  {
    const std::vector<double> p{5.0};
    Tape tape{p};
    Var x = tape.param(0);
    Var loss = x / detach(x);
    CHECK(loss.value() == doctest::Approx(1.0));
    tape.backward(loss);
    CHECK(tape.param_adjoints()[0] == doctest::Approx(0.2).epsilon(1e-14));
  }
  {
    const std::vector<double> p{1.7};
    Tape tape{p};
    Var x = tape.param(0);
    Var d1 = detach(x);
    Var d2 = detach(d1);
    CHECK(d1.value() == d2.value());
    Var loss = d2 * x;
    tape.backward(loss);
    CHECK(tape.param_adjoints()[0] == doctest::Approx(1.7).epsilon(1e-14));
  }
}

TEST_CASE("replay reproduces forward values and freezes detach boundaries") {
  const std::vector<double> p{1.5, -0.4};
  Tape tape{p};
  Var a = tape.param(0);
  Var b = tape.param(1);
  Var c = tape.constant(2.0);
  Var frozen = detach(a * b);
  Var loss = exp(a) + frozen * c + b;

  CHECK(tape.replay(loss, p) == loss.value());  // bit-identical

  std::vector<double> p2{2.0, -0.4};
  const double replayed = tape.replay(loss, p2);
  // frozen keeps its recorded value (-0.6), so only exp(a) and b move
  CHECK(replayed == doctest::Approx(std::exp(2.0) + (-0.6) * 2.0 + (-0.4)).epsilon(1e-14));
}

TEST_CASE("every scalar primitive gradient matches replay finite differences") {
  const std::vector<double> p{0.7, 1.3};
  {
    Tape tape{p};
    Var x = tape.param(0), y = tape.param(1);
    Var loss = ((x + y) * (x - y) / (y * y) + exp(x * 0.3) - log(y) * tanh(x)) +
               sin(x) * cos(y) + atan2(x, y) + wrap(x + 0.2);
    CHECK(max_rel_err(tape, loss, p) < 1e-5);
  }
  {
    Tape tape{p};
    Var x = tape.param(0), y = tape.param(1);
    Var loss = prelu(x - 1.0, y) + prelu(x + 1.0, y) + log_bessel_i0(y * 3.0) +
               mdps::gauss_logpdf(x, y) + mdps::vm_logpdf(x * 2.0, y * 4.0) + sigmoid(x);
    CHECK(max_rel_err(tape, loss, p) < 1e-5);
  }
}

TEST_CASE("block instructions match their scalar expansions") {
  // affine + prelu block vs hand-composed scalars
  const std::vector<double> p{0.3, -0.5, 0.2, 0.8, 0.1, -0.2, 0.25};  // W(2x2), b(2), slope
  Tape tape{p};
  const Var in[2] = {tape.constant(0.9), tape.constant(-1.1)};
  VarVec inb = tape.gather(std::span<const Var>(in, 2));
  VarVec out = tape.affine(inb, 1, 2, 2, 0);
  VarVec act = tape.prelu_block(out, tape.param(6));
  Var loss = act[0] * 1.0 + act[1] * 2.0;

  Var m0 = tape.param(0) * in[0] + tape.param(1) * in[1] + tape.param(4);
  Var m1 = tape.param(2) * in[0] + tape.param(3) * in[1] + tape.param(5);
  Var a0 = prelu(m0, tape.param(6));
  Var a1 = prelu(m1, tape.param(6));
  Var loss2 = a0 * 1.0 + a1 * 2.0;

  CHECK(loss.value() == doctest::Approx(loss2.value()).epsilon(1e-14));
  CHECK(max_rel_err(tape, loss, p) < 1e-5);

  tape.backward(loss);
  std::vector<double> g1(tape.param_adjoints().begin(), tape.param_adjoints().end());
  tape.backward(loss2);
  std::vector<double> g2(tape.param_adjoints().begin(), tape.param_adjoints().end());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-12));
  }
}

TEST_CASE("fused mixture log-density matches a primitive composition") {
  // three components, params: [x_i, y_i, th_i] x3, logw x3 (unnormalized ok
  // for the check), sigma_x, sigma_y, kappa
  std::vector<double> p;
  const double comps[9] = {0.0, 0.1, 0.4, 1.0, -0.5, -2.8, -1.2, 0.7, 1.9};
  for (double c : comps) p.push_back(c);
  const double lw[3] = {std::log(0.5), std::log(0.2), std::log(0.3)};
  for (double l : lw) p.push_back(l);
  p.push_back(0.6);
  p.push_back(0.9);
  p.push_back(4.0);

  Tape tape{p};
  const Var pt[3] = {tape.constant(0.2), tape.constant(-0.1), tape.constant(0.5)};
  VarVec point = tape.gather(std::span<const Var>(pt, 3));
  std::vector<Var> comp_vars, lw_vars;
  for (int i = 0; i < 9; ++i) comp_vars.push_back(tape.param(i));
  for (int i = 9; i < 12; ++i) lw_vars.push_back(tape.param(i));
  VarVec compb = tape.gather(comp_vars);
  VarVec lwb = tape.gather(lw_vars);
  const Var bwv[3] = {tape.param(12), tape.param(13), tape.param(14)};
  VarVec bw = tape.gather(std::span<const Var>(bwv, 3));
  Var fused = tape.mix_logpdf3(point, compb, lwb, bw);

  // primitive route
  std::vector<Var> terms;
  for (int i = 0; i < 3; ++i) {
    Var t = tape.param(9 + i) + mdps::gauss_logpdf(pt[0] - tape.param(3 * i), bwv[0]) +
            mdps::gauss_logpdf(pt[1] - tape.param(3 * i + 1), bwv[1]) +
            mdps::vm_logpdf(pt[2] - tape.param(3 * i + 2), bwv[2]);
    terms.push_back(t);
  }
  Var composed = logsumexp(tape, terms);

  CHECK(fused.value() == doctest::Approx(composed.value()).epsilon(1e-13));

  tape.backward(fused);
  std::vector<double> g1(tape.param_adjoints().begin(), tape.param_adjoints().end());
  tape.backward(composed);
  std::vector<double> g2(tape.param_adjoints().begin(), tape.param_adjoints().end());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-10));
  }
  CHECK(max_rel_err(tape, fused, p) < 1e-5);
}

TEST_CASE("mlp: zero weights, identity layer, gradcheck") {
  {
    ParamStore store;
    Mlp mlp = Mlp::create(store, "net", MlpSpec{3, {4}, 2}, 1);
    for (double& v : store.values()) v = 0.0;
    Tape tape{store.values()};
    const Var in[3] = {tape.constant(0.5), tape.constant(-1.0), tape.constant(2.0)};
    VarVec out = mlp.forward(tape, tape.gather(std::span<const Var>(in, 3)), 1);
    CHECK(out[0].value() == 0.0);
    CHECK(out[1].value() == 0.0);
  }
  {
    ParamStore store;
    Mlp mlp = Mlp::create(store, "net", MlpSpec{2, {}, 2}, 1);
    auto s = store.slice("net");
    s[0] = 1.0; s[1] = 0.0; s[2] = 0.0; s[3] = 1.0; s[4] = 0.0; s[5] = 0.0;
    Tape tape{store.values()};
    const Var in[2] = {tape.constant(0.77), tape.constant(-3.1)};
    VarVec out = mlp.forward(tape, tape.gather(std::span<const Var>(in, 2)), 1);
    CHECK(out[0].value() == doctest::Approx(0.77));
    CHECK(out[1].value() == doctest::Approx(-3.1));
  }
  {
    ParamStore store;
    Mlp mlp = Mlp::create(store, "net", MlpSpec{10, {6, 5, 4}, 2}, 7);
    Tape tape{store.values()};
    std::vector<Var> in;
    RngStream rng(3, RngPath{rng_stage::kEval, 0, 0, 0});
    for (int i = 0; i < 10; ++i) in.push_back(tape.constant(rng.normal()));
    VarVec out = mlp.forward(tape, tape.gather(in), 1);
    Var loss = out[0] * 1.3 + tanh(out[1]);
    CHECK(max_rel_err(tape, loss, store.values()) < 1e-5);
  }
}

TEST_CASE("mlp plain forward is bit-identical to the taped forward") {
  ParamStore store;
  Mlp mlp = Mlp::create(store, "net", MlpSpec{4, {8, 8}, 3}, 11);
  RngStream rng(9, RngPath{rng_stage::kEval, 1, 0, 0});
  const std::uint32_t rows = 5;
  std::vector<double> input(4 * rows);
  for (double& x : input) x = rng.normal();

  Tape tape{store.values()};
  std::vector<Var> in_vars;
  for (double x : input) in_vars.push_back(tape.constant(x));
  VarVec out = mlp.forward(tape, tape.gather(in_vars), rows);

  std::vector<double> plain(3 * rows);
  mlp.forward_plain(store.values(), input, plain, rows);
  for (std::uint32_t i = 0; i < out.n; ++i) {
    CHECK(plain[i] == out[i].value());  // exact
  }
}

TEST_CASE("adam: first step, zero gradient, quadratic convergence") {
  {
    std::vector<double> params{1.0};
    std::vector<double> grads{1.0};
    AdamState st(1);
    adam_step(params, grads, st, AdamConfig{0.1});
    CHECK(params[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
  }
  {
    std::vector<double> params{0.3, -2.0};
    const std::vector<double> before = params;
    std::vector<double> grads{0.0, 0.0};
    AdamState st(2);
    for (int i = 0; i < 5; ++i) adam_step(params, grads, st, AdamConfig{0.1});
    CHECK(params == before);
  }
  {
    std::vector<double> params{-4.0};
    AdamState st(1);
    for (int i = 0; i < 200; ++i) {
      std::vector<double> grads{2.0 * (params[0] - 3.0)};
      adam_step(params, grads, st, AdamConfig{0.1});
    }
    CHECK(std::abs(params[0] - 3.0) < 1e-2);
  }
  {
    std::vector<double> params{1.0};
    std::vector<double> grads{1.0, 2.0};
    AdamState st(1);
    CHECK_THROWS_AS(adam_step(params, grads, st, AdamConfig{}), std::invalid_argument);
  }
}

TEST_CASE("freeze mask keeps slots bit-identical") {
  std::vector<double> params{1.0, 2.0};
  std::vector<double> grads{0.5, 0.5};
  std::vector<std::uint8_t> freeze{1, 0};
  AdamState st(2);
  adam_step(params, grads, st, AdamConfig{0.1}, freeze);
  CHECK(params[0] == 1.0);
  CHECK(params[1] != 2.0);
  CHECK(st.m[0] == 0.0);
}

TEST_CASE("clip_global_norm") {
  std::vector<double> g{3.0, 4.0};
  const double norm = clip_global_norm(g, 100.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(g[0] == 3.0);
  const double norm2 = clip_global_norm(g, 1.0);
  CHECK(norm2 == doctest::Approx(5.0));
  CHECK(std::sqrt(g[0] * g[0] + g[1] * g[1]) == doctest::Approx(1.0));
}

TEST_CASE("param store serialization layout is stable") {
  ParamStore store;
  store.def("b", 2);
  store.def("a", 3);
  CHECK(store.block("b").offset == 0);
  CHECK(store.block("a").offset == 2);
  CHECK(store.size() == 5);
  CHECK_THROWS_AS(store.def("a", 1), std::invalid_argument);
  CHECK_THROWS_AS(store.block("zz"), std::out_of_range);
}
