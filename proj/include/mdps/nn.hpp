#pragma once

// Flat named parameter storage, the Adam optimizer, and a small PReLU MLP
// that runs either on the tape (training) or on plain doubles (inference).
// Both paths share the same accumulation kernels, so values agree bitwise.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdps/autodiff.hpp"
#include "mdps/core.hpp"

namespace mdps {

/// Named slices over one flat vector of trainable values.  Slice order is
/// the registration order and doubles as the tape's parameter-leaf order.
class ParamStore {
 public:
  struct Block {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  std::size_t def(const std::string& name, std::size_t size) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore::def: duplicate name " + name);
    Block b{name, values_.size(), size};
    index_[name] = blocks_.size();
    blocks_.push_back(b);
    values_.resize(values_.size() + size, 0.0);
    return b.offset;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const Block& block(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: unknown block " + name);
    return blocks_[it->second];
  }

  std::span<double> slice(const std::string& name) {
    const Block& b = block(name);
    return {values_.data() + b.offset, b.size};
  }
  std::span<const double> slice(const std::string& name) const {
    const Block& b = block(name);
    return {values_.data() + b.offset, b.size};
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  std::vector<double> values_;
  std::vector<Block> blocks_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Adam.

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update.  Slots with freeze_mask[i] != 0 are left
/// untouched, moments included.
inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& state, const AdamConfig& cfg,
                      std::span<const std::uint8_t> freeze_mask = {}) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  if (!freeze_mask.empty() && freeze_mask.size() != params.size()) {
    throw std::invalid_argument("adam_step: freeze mask shape mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!freeze_mask.empty() && freeze_mask[i]) continue;
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// Scale gradients so the global L2 norm is at most max_norm; returns the
/// pre-clip norm.
inline double clip_global_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// MLP.

struct MlpSpec {
  std::uint32_t in_dim = 0;
  std::vector<std::uint32_t> hidden;
  std::uint32_t out_dim = 0;

  // Per hidden layer: W, b, prelu slope.  Output layer: W, b.
  std::size_t param_count() const {
    std::size_t n = 0;
    std::uint32_t in = in_dim;
    for (std::uint32_t h : hidden) {
      n += static_cast<std::size_t>(h) * in + h + 1;
      in = h;
    }
    n += static_cast<std::size_t>(out_dim) * in + out_dim;
    return n;
  }
};

/// Fully-connected PReLU network over a named ParamStore block.
class Mlp {
 public:
  Mlp() = default;

  /// Register a fresh block and initialize it: fan-in scaled uniform weights,
  /// zero biases, PReLU slopes at 0.25.
  static Mlp create(ParamStore& store, const std::string& name, MlpSpec spec,
                    std::uint64_t seed) {
    Mlp mlp;
    mlp.spec_ = std::move(spec);
    mlp.offset_ = store.def(name, mlp.spec_.param_count());
    std::span<double> p = store.slice(name);
    RngStream rng(seed, RngPath{rng_stage::kParamInit,
                                static_cast<std::uint32_t>(std::hash<std::string>{}(name)),
                                0, rng_purpose::kInit});
    std::size_t off = 0;
    std::uint32_t in = mlp.spec_.in_dim;
    for (std::size_t l = 0; l <= mlp.spec_.hidden.size(); ++l) {
      const bool output = l == mlp.spec_.hidden.size();
      const std::uint32_t out = output ? mlp.spec_.out_dim : mlp.spec_.hidden[l];
      const double bound = std::sqrt(1.0 / static_cast<double>(in));
      for (std::uint32_t i = 0; i < out * in; ++i) p[off + i] = rng.uniform(-bound, bound);
      off += static_cast<std::size_t>(out) * in;
      off += out;  // biases stay zero
      if (!output) p[off++] = 0.25;
      in = out;
    }
    return mlp;
  }

  /// Attach to an existing block (e.g. after loading a checkpoint).
  static Mlp attach(const ParamStore& store, const std::string& name, MlpSpec spec) {
    Mlp mlp;
    mlp.spec_ = std::move(spec);
    const auto& b = store.block(name);
    if (b.size != mlp.spec_.param_count()) {
      throw std::invalid_argument("Mlp::attach: block size does not match spec for " + name);
    }
    mlp.offset_ = b.offset;
    return mlp;
  }

  const MlpSpec& spec() const { return spec_; }
  std::size_t offset() const { return offset_; }

  /// Taped forward over `rows` stacked inputs (rows * in_dim block).
  VarVec forward(Tape& tape, VarVec input, std::uint32_t rows) const {
    if (input.n != rows * spec_.in_dim) {
      throw std::invalid_argument("Mlp::forward: input size mismatch");
    }
    VarVec h = input;
    std::size_t off = offset_;
    std::uint32_t in = spec_.in_dim;
    for (std::uint32_t width : spec_.hidden) {
      h = tape.affine(h, rows, in, width, static_cast<std::uint32_t>(off));
      off += static_cast<std::size_t>(width) * in + width;
      const Var slope = tape.param(static_cast<std::uint32_t>(off));
      off += 1;
      h = tape.prelu_block(h, slope);
      in = width;
    }
    return tape.affine(h, rows, in, spec_.out_dim, static_cast<std::uint32_t>(off));
  }

  /// Plain-double forward, bit-identical to the taped path.
  void forward_plain(std::span<const double> params, std::span<const double> input,
                     std::span<double> output, std::uint32_t rows) const {
    if (input.size() != static_cast<std::size_t>(rows) * spec_.in_dim ||
        output.size() != static_cast<std::size_t>(rows) * spec_.out_dim) {
      throw std::invalid_argument("Mlp::forward_plain: size mismatch");
    }
    std::vector<double> cur(input.begin(), input.end());
    std::vector<double> next;
    std::size_t off = offset_;
    std::uint32_t in = spec_.in_dim;
    for (std::uint32_t width : spec_.hidden) {
      next.resize(static_cast<std::size_t>(rows) * width);
      detail::affine_forward(params.data() + off,
                             params.data() + off + static_cast<std::size_t>(width) * in,
                             cur.data(), next.data(), rows, in, width);
      off += static_cast<std::size_t>(width) * in + width;
      const double slope = params[off++];
      for (double& x : next) x = x > 0.0 ? x : slope * x;
      cur.swap(next);
      in = width;
    }
    detail::affine_forward(params.data() + off,
                           params.data() + off + static_cast<std::size_t>(spec_.out_dim) * in,
                           cur.data(), output.data(), rows, in, spec_.out_dim);
  }

 private:
  MlpSpec spec_;
  std::size_t offset_ = 0;
};

}  // namespace mdps
