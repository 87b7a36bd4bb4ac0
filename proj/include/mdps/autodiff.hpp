#pragma once

// Reverse-mode automatic differentiation on an append-only instruction tape.
//
// Nodes are scalar values; a handful of block instructions (gather, batched
// affine, block PReLU, logsumexp, fused 3D mixture log-density) batch the hot
// loops while keeping the same gradient contract as their scalar expansions.
// Parameter leaves occupy ids [0, n_params) and are bound from a flat vector,
// so param adjoints come straight out of the adjoint array after backward().
//
// The tape can also be replayed: re-running the forward pass with modified
// parameter values while holding constants and detach outputs at their
// recorded values.  Replay is the finite-difference oracle for backward();
// by construction it differentiates exactly the function backward() claims
// to differentiate (detach boundaries frozen, recorded noise frozen).

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdps/kernels.hpp"

namespace mdps {

enum class Op : std::uint8_t {
  kConst,
  kConstBlock,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kExp,
  kLog,
  kTanh,
  kSin,
  kCos,
  kWrap,
  kAtan2,
  kPRelu,
  kDetach,
  kLogBesselI0,
  kGaussLogPdf,  // (d, sigma)
  kVmLogPdf,     // (dtheta, kappa)
  kGather,
  kAffine,
  kPReluBlock,
  kLogSumExp,
  kSum,
  kMixLogPdf3,
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;
  double value() const;
};

/// Handle to a contiguous block of tape values.
struct VarVec {
  Tape* tape = nullptr;
  std::uint32_t base = 0;
  std::uint32_t n = 0;
  Var operator[](std::uint32_t i) const { return Var{tape, base + i}; }
};

namespace detail {

/// Shared dot-product kernel with a fixed 4-accumulator reduction order.
/// Every forward path (tape creation, replay, plain MLP inference) funnels
/// through this, so their results are bit-identical.
inline double dot4(const double* x, const double* w, std::uint32_t n) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
  std::uint32_t i = 0;
  for (; i + 4 <= n; i += 4) {
    a0 += x[i] * w[i];
    a1 += x[i + 1] * w[i + 1];
    a2 += x[i + 2] * w[i + 2];
    a3 += x[i + 3] * w[i + 3];
  }
  for (; i < n; ++i) a0 += x[i] * w[i];
  return (a0 + a1) + (a2 + a3);
}

/// y[r,:] = W x[r,:] + b for rows stored contiguously; W row-major.
inline void affine_forward(const double* w, const double* b, const double* x,
                           double* y, std::uint32_t rows, std::uint32_t in_dim,
                           std::uint32_t out_dim) {
  for (std::uint32_t r = 0; r < rows; ++r) {
    const double* xr = x + static_cast<std::size_t>(r) * in_dim;
    double* yr = y + static_cast<std::size_t>(r) * out_dim;
    for (std::uint32_t o = 0; o < out_dim; ++o) {
      yr[o] = b[o] + dot4(xr, w + static_cast<std::size_t>(o) * in_dim, in_dim);
    }
  }
}

/// Forward value of the fused 3D kernel mixture log-density.  comps holds
/// [x_i, y_i, theta_i] interleaved; bw holds (sigma_x, sigma_y, kappa).
inline double mix_logpdf3_forward(const double* point, const double* comps,
                                  const double* logw, const double* bw,
                                  std::uint32_t n) {
  const double sx = bw[0], sy = bw[1], kap = bw[2];
  const double log_norm =
      -std::log(sx) - std::log(sy) - 2.0 * kLogTwoPi - log_bessel_i0(kap);
  // Two fixed-order passes: max first, then sum of shifted exponentials.
  double m = -1e300;
  double s = 0.0;
  for (int pass = 0; pass < 2; ++pass) {
    for (std::uint32_t i = 0; i < n; ++i) {
      const double dx = (point[0] - comps[3 * i]) / sx;
      const double dy = (point[1] - comps[3 * i + 1]) / sy;
      const double dth = point[2] - comps[3 * i + 2];
      const double term = logw[i] - 0.5 * (dx * dx + dy * dy) +
                          kap * std::cos(dth) + log_norm;
      if (pass == 0) {
        if (term > m) m = term;
      } else {
        s += std::exp(term - m);
      }
    }
  }
  return m + std::log(s);
}

}  // namespace detail

class Tape {
 public:
  struct Instr {
    Op op;
    std::uint32_t out;
    std::uint32_t a = 0, b = 0, c = 0, d = 0, e = 0;
  };

  explicit Tape(std::span<const double> param_values = {}) { bind_params(param_values); }

  void bind_params(std::span<const double> param_values) {
    if (!instrs_.empty() || values_.size() > n_params_) {
      throw std::logic_error("Tape::bind_params: tape already in use");
    }
    n_params_ = param_values.size();
    values_.assign(param_values.begin(), param_values.end());
  }

  std::size_t n_params() const { return n_params_; }
  std::size_t n_values() const { return values_.size(); }
  std::size_t n_instructions() const { return instrs_.size(); }

  void reserve(std::size_t instrs, std::size_t values) {
    instrs_.reserve(instrs);
    values_.reserve(values);
  }

  /// Drop everything after the parameter leaves; capacity is kept.
  void reset() {
    instrs_.clear();
    pool_.clear();
    values_.resize(n_params_);
    adjoints_.clear();
  }

  /// Reset and rebind fresh parameter values in one step.
  void reset(std::span<const double> param_values) {
    instrs_.clear();
    pool_.clear();
    adjoints_.clear();
    n_params_ = param_values.size();
    values_.assign(param_values.begin(), param_values.end());
  }

  Var param(std::uint32_t index) {
    if (index >= n_params_) throw std::out_of_range("Tape::param: index out of range");
    return Var{this, index};
  }

  double value(std::uint32_t id) const { return values_[id]; }
  std::span<const double> param_values() const { return {values_.data(), n_params_}; }
  double adjoint(std::uint32_t id) const { return adjoints_.empty() ? 0.0 : adjoints_[id]; }
  std::span<const double> param_adjoints() const {
    return {adjoints_.data(), n_params_};
  }

  Var constant(double v) {
    const std::uint32_t out = alloc(1);
    instrs_.push_back({Op::kConst, out});
    values_[out] = v;
    return Var{this, out};
  }

  VarVec constants(std::span<const double> vs) {
    const auto n = static_cast<std::uint32_t>(vs.size());
    const std::uint32_t out = alloc(n);
    instrs_.push_back({Op::kConstBlock, out, n});
    for (std::uint32_t i = 0; i < n; ++i) values_[out + i] = vs[i];
    return VarVec{this, out, n};
  }

  Var unary(Op op, Var x) {
    check(x);
    const std::uint32_t out = alloc(1);
    instrs_.push_back({op, out, x.id});
    exec(instrs_.back(), values_.data());
    return Var{this, out};
  }

  Var binary(Op op, Var x, Var y) {
    check(x);
    check(y);
    const std::uint32_t out = alloc(1);
    instrs_.push_back({op, out, x.id, y.id});
    exec(instrs_.back(), values_.data());
    return Var{this, out};
  }

  /// Copy arbitrary vars into a fresh contiguous block.
  VarVec gather(std::span<const Var> xs) {
    const auto n = static_cast<std::uint32_t>(xs.size());
    const std::uint32_t off = static_cast<std::uint32_t>(pool_.size());
    for (const Var& v : xs) {
      check(v);
      pool_.push_back(v.id);
    }
    const std::uint32_t out = alloc(n);
    instrs_.push_back({Op::kGather, out, off, n});
    exec(instrs_.back(), values_.data());
    return VarVec{this, out, n};
  }

  /// rows x in_dim -> rows x out_dim affine map; parameters live at param ids
  /// [w_base, w_base + out_dim*in_dim) row-major followed by out_dim biases.
  VarVec affine(VarVec in, std::uint32_t rows, std::uint32_t in_dim,
                std::uint32_t out_dim, std::uint32_t w_base) {
    if (in.n != rows * in_dim) throw std::invalid_argument("Tape::affine: size mismatch");
    if (w_base + out_dim * in_dim + out_dim > n_params_) {
      throw std::invalid_argument("Tape::affine: parameter slice out of range");
    }
    const std::uint32_t out = alloc(rows * out_dim);
    instrs_.push_back({Op::kAffine, out, in.base, w_base, rows, in_dim, out_dim});
    exec(instrs_.back(), values_.data());
    return VarVec{this, out, rows * out_dim};
  }

  VarVec prelu_block(VarVec in, Var slope) {
    check(slope);
    const std::uint32_t out = alloc(in.n);
    instrs_.push_back({Op::kPReluBlock, out, in.base, slope.id, in.n});
    exec(instrs_.back(), values_.data());
    return VarVec{this, out, in.n};
  }

  Var logsumexp_block(VarVec in) {
    if (in.n == 0) throw std::invalid_argument("Tape::logsumexp_block: empty");
    const std::uint32_t out = alloc(1);
    instrs_.push_back({Op::kLogSumExp, out, in.base, in.n});
    exec(instrs_.back(), values_.data());
    return Var{this, out};
  }

  Var sum_block(VarVec in) {
    if (in.n == 0) throw std::invalid_argument("Tape::sum_block: empty");
    const std::uint32_t out = alloc(1);
    instrs_.push_back({Op::kSum, out, in.base, in.n});
    exec(instrs_.back(), values_.data());
    return Var{this, out};
  }

  /// Fused KDE mixture log-density of a 3D point under n components.
  /// point: 3 contiguous values (x, y, theta); comps: 3n interleaved values;
  /// logw: n values; bw: 3 contiguous values (sigma_x, sigma_y, kappa).
  Var mix_logpdf3(VarVec point, VarVec comps, VarVec logw, VarVec bw) {
    if (point.n != 3 || bw.n != 3 || comps.n != 3 * logw.n || logw.n == 0) {
      throw std::invalid_argument("Tape::mix_logpdf3: block size mismatch");
    }
    const std::uint32_t out = alloc(1);
    instrs_.push_back({Op::kMixLogPdf3, out, point.base, comps.base, logw.base,
                       bw.base, logw.n});
    exec(instrs_.back(), values_.data());
    return Var{this, out};
  }

  /// Propagate d(loss)/d(node) into every node; parameter adjoints are the
  /// first n_params entries.
  void backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("Tape::backward: loss not on this tape");
    adjoints_.assign(values_.size(), 0.0);
    adjoints_[loss.id] = 1.0;
    for (auto it = instrs_.rbegin(); it != instrs_.rend(); ++it) {
      backward_instr(*it);
    }
  }

  /// Re-run the forward pass with new parameter values.  Constants and
  /// detach outputs keep their recorded values, so replay differentiates the
  /// same function backward() does.  Returns the recomputed value of `out`.
  double replay(Var out, std::span<const double> new_param_values) {
    if (out.tape != this) throw std::invalid_argument("Tape::replay: var not on this tape");
    if (new_param_values.size() != n_params_) {
      throw std::invalid_argument("Tape::replay: parameter count mismatch");
    }
    scratch_ = values_;
    for (std::size_t i = 0; i < n_params_; ++i) scratch_[i] = new_param_values[i];
    for (const Instr& ins : instrs_) {
      if (ins.op == Op::kConst || ins.op == Op::kConstBlock) continue;
      if (ins.op == Op::kDetach) continue;  // frozen at recorded value
      exec(ins, scratch_.data());
    }
    return scratch_[out.id];
  }

 private:
  std::uint32_t alloc(std::uint32_t n) {
    const auto out = static_cast<std::uint32_t>(values_.size());
    values_.resize(values_.size() + n);
    return out;
  }

  void check(Var v) const {
    if (v.tape != this) throw std::invalid_argument("Tape: var from another tape");
  }

  void exec(const Instr& ins, double* v) const {
    switch (ins.op) {
      case Op::kConst:
      case Op::kConstBlock:
        break;
      case Op::kAdd: v[ins.out] = v[ins.a] + v[ins.b]; break;
      case Op::kSub: v[ins.out] = v[ins.a] - v[ins.b]; break;
      case Op::kMul: v[ins.out] = v[ins.a] * v[ins.b]; break;
      case Op::kDiv: v[ins.out] = v[ins.a] / v[ins.b]; break;
      case Op::kNeg: v[ins.out] = -v[ins.a]; break;
      case Op::kExp: v[ins.out] = std::exp(v[ins.a]); break;
      case Op::kLog: v[ins.out] = std::log(v[ins.a]); break;
      case Op::kTanh: v[ins.out] = std::tanh(v[ins.a]); break;
      case Op::kSin: v[ins.out] = std::sin(v[ins.a]); break;
      case Op::kCos: v[ins.out] = std::cos(v[ins.a]); break;
      case Op::kWrap: v[ins.out] = wrap_angle(v[ins.a]); break;
      case Op::kAtan2: v[ins.out] = std::atan2(v[ins.a], v[ins.b]); break;
      case Op::kPRelu: {
        const double x = v[ins.a];
        v[ins.out] = x > 0.0 ? x : v[ins.b] * x;
        break;
      }
      case Op::kDetach: v[ins.out] = v[ins.a]; break;
      case Op::kLogBesselI0: v[ins.out] = log_bessel_i0(v[ins.a]); break;
      case Op::kGaussLogPdf: v[ins.out] = gauss_logpdf(v[ins.a], v[ins.b]); break;
      case Op::kVmLogPdf: v[ins.out] = vm_logpdf(v[ins.a], v[ins.b]); break;
      case Op::kGather: {
        for (std::uint32_t i = 0; i < ins.b; ++i) {
          v[ins.out + i] = v[pool_[ins.a + i]];
        }
        break;
      }
      case Op::kAffine:
        detail::affine_forward(v + ins.b, v + ins.b + ins.e * ins.d, v + ins.a,
                               v + ins.out, ins.c, ins.d, ins.e);
        break;
      case Op::kPReluBlock: {
        const double s = v[ins.b];
        for (std::uint32_t i = 0; i < ins.c; ++i) {
          const double x = v[ins.a + i];
          v[ins.out + i] = x > 0.0 ? x : s * x;
        }
        break;
      }
      case Op::kLogSumExp: {
        double m = v[ins.a];
        for (std::uint32_t i = 1; i < ins.b; ++i) m = std::max(m, v[ins.a + i]);
        double s = 0.0;
        for (std::uint32_t i = 0; i < ins.b; ++i) s += std::exp(v[ins.a + i] - m);
        v[ins.out] = m + std::log(s);
        break;
      }
      case Op::kSum: {
        double s = 0.0;
        for (std::uint32_t i = 0; i < ins.b; ++i) s += v[ins.a + i];
        v[ins.out] = s;
        break;
      }
      case Op::kMixLogPdf3:
        v[ins.out] = detail::mix_logpdf3_forward(v + ins.a, v + ins.b, v + ins.c,
                                                 v + ins.d, ins.e);
        break;
    }
  }

  void backward_instr(const Instr& ins) {
    const double* v = values_.data();
    double* adj = adjoints_.data();
    const double g = adj[ins.out];
    switch (ins.op) {
      case Op::kConst:
      case Op::kConstBlock:
        break;
      case Op::kAdd:
        if (g != 0.0) { adj[ins.a] += g; adj[ins.b] += g; }
        break;
      case Op::kSub:
        if (g != 0.0) { adj[ins.a] += g; adj[ins.b] -= g; }
        break;
      case Op::kMul:
        if (g != 0.0) { adj[ins.a] += g * v[ins.b]; adj[ins.b] += g * v[ins.a]; }
        break;
      case Op::kDiv:
        if (g != 0.0) {
          adj[ins.a] += g / v[ins.b];
          adj[ins.b] -= g * v[ins.a] / (v[ins.b] * v[ins.b]);
        }
        break;
      case Op::kNeg:
        if (g != 0.0) adj[ins.a] -= g;
        break;
      case Op::kExp:
        if (g != 0.0) adj[ins.a] += g * v[ins.out];
        break;
      case Op::kLog:
        if (g != 0.0) adj[ins.a] += g / v[ins.a];
        break;
      case Op::kTanh:
        if (g != 0.0) adj[ins.a] += g * (1.0 - v[ins.out] * v[ins.out]);
        break;
      case Op::kSin:
        if (g != 0.0) adj[ins.a] += g * std::cos(v[ins.a]);
        break;
      case Op::kCos:
        if (g != 0.0) adj[ins.a] -= g * std::sin(v[ins.a]);
        break;
      case Op::kWrap:
        if (g != 0.0) adj[ins.a] += g;
        break;
      case Op::kAtan2:
        if (g != 0.0) {
          const double denom = v[ins.a] * v[ins.a] + v[ins.b] * v[ins.b];
          adj[ins.a] += g * v[ins.b] / denom;
          adj[ins.b] -= g * v[ins.a] / denom;
        }
        break;
      case Op::kPRelu:
        if (g != 0.0) {
          const double x = v[ins.a];
          if (x > 0.0) {
            adj[ins.a] += g;
          } else {
            adj[ins.a] += g * v[ins.b];
            adj[ins.b] += g * x;
          }
        }
        break;
      case Op::kDetach:
        break;  // gradient wall
      case Op::kLogBesselI0:
        if (g != 0.0) adj[ins.a] += g * bessel_i1_i0_ratio(v[ins.a]);
        break;
      case Op::kGaussLogPdf:
        if (g != 0.0) {
          const double sigma = v[ins.b];
          const double z = v[ins.a] / sigma;
          adj[ins.a] -= g * z / sigma;
          adj[ins.b] += g * (z * z - 1.0) / sigma;
        }
        break;
      case Op::kVmLogPdf:
        if (g != 0.0) {
          const double kap = v[ins.b];
          adj[ins.a] -= g * kap * std::sin(v[ins.a]);
          adj[ins.b] += g * (std::cos(v[ins.a]) - bessel_i1_i0_ratio(kap));
        }
        break;
      case Op::kGather:
        for (std::uint32_t i = 0; i < ins.b; ++i) {
          adj[pool_[ins.a + i]] += adj[ins.out + i];
        }
        break;
      case Op::kAffine: {
        const std::uint32_t rows = ins.c, in_dim = ins.d, out_dim = ins.e;
        const double* w = v + ins.b;
        double* adj_w = adj + ins.b;
        double* adj_b = adj + ins.b + static_cast<std::size_t>(out_dim) * in_dim;
        for (std::uint32_t r = 0; r < rows; ++r) {
          const double* xr = v + ins.a + static_cast<std::size_t>(r) * in_dim;
          double* adj_xr = adj + ins.a + static_cast<std::size_t>(r) * in_dim;
          const double* gr = adj + ins.out + static_cast<std::size_t>(r) * out_dim;
          for (std::uint32_t o = 0; o < out_dim; ++o) {
            const double go = gr[o];
            if (go == 0.0) continue;
            adj_b[o] += go;
            const double* wo = w + static_cast<std::size_t>(o) * in_dim;
            double* adj_wo = adj_w + static_cast<std::size_t>(o) * in_dim;
            for (std::uint32_t i = 0; i < in_dim; ++i) {
              adj_wo[i] += go * xr[i];
              adj_xr[i] += go * wo[i];
            }
          }
        }
        break;
      }
      case Op::kPReluBlock: {
        const double s = v[ins.b];
        double adj_s = 0.0;
        for (std::uint32_t i = 0; i < ins.c; ++i) {
          const double go = adj[ins.out + i];
          if (go == 0.0) continue;
          const double x = v[ins.a + i];
          if (x > 0.0) {
            adj[ins.a + i] += go;
          } else {
            adj[ins.a + i] += go * s;
            adj_s += go * x;
          }
        }
        adj[ins.b] += adj_s;
        break;
      }
      case Op::kLogSumExp: {
        if (g != 0.0) {
          const double out = v[ins.out];
          for (std::uint32_t i = 0; i < ins.b; ++i) {
            adj[ins.a + i] += g * std::exp(v[ins.a + i] - out);
          }
        }
        break;
      }
      case Op::kSum:
        if (g != 0.0) {
          for (std::uint32_t i = 0; i < ins.b; ++i) adj[ins.a + i] += g;
        }
        break;
      case Op::kMixLogPdf3: {
        if (g == 0.0) break;
        const double* point = v + ins.a;
        const double* comps = v + ins.b;
        const double* logw = v + ins.c;
        const double* bw = v + ins.d;
        const std::uint32_t n = ins.e;
        const double sx = bw[0], sy = bw[1], kap = bw[2];
        const double log_norm = -std::log(sx) - std::log(sy) - 2.0 * kLogTwoPi -
                                log_bessel_i0(kap);
        const double out = v[ins.out];
        const double ratio = bessel_i1_i0_ratio(kap);
        double g_sx = 0.0, g_sy = 0.0, g_kap = 0.0;
        double g_px = 0.0, g_py = 0.0, g_pth = 0.0;
        for (std::uint32_t i = 0; i < n; ++i) {
          const double dx = point[0] - comps[3 * i];
          const double dy = point[1] - comps[3 * i + 1];
          const double dth = point[2] - comps[3 * i + 2];
          const double zx = dx / sx, zy = dy / sy;
          const double cth = std::cos(dth);
          const double term = logw[i] - 0.5 * (zx * zx + zy * zy) + kap * cth + log_norm;
          const double si = g * std::exp(term - out);  // softmax share * upstream
          adj[ins.c + i] += si;
          const double ddx = -si * zx / sx;
          const double ddy = -si * zy / sy;
          const double ddth = -si * kap * std::sin(dth);
          g_px += ddx;
          g_py += ddy;
          g_pth += ddth;
          adj[ins.b + 3 * i] -= ddx;
          adj[ins.b + 3 * i + 1] -= ddy;
          adj[ins.b + 3 * i + 2] -= ddth;
          g_sx += si * (zx * zx - 1.0) / sx;
          g_sy += si * (zy * zy - 1.0) / sy;
          g_kap += si * (cth - ratio);
        }
        adj[ins.a] += g_px;
        adj[ins.a + 1] += g_py;
        adj[ins.a + 2] += g_pth;
        adj[ins.d] += g_sx;
        adj[ins.d + 1] += g_sy;
        adj[ins.d + 2] += g_kap;
        break;
      }
    }
  }

  std::vector<Instr> instrs_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
  std::vector<std::uint32_t> pool_;
  std::vector<double> scratch_;
  std::size_t n_params_ = 0;
};

inline double Var::value() const { return tape->value(id); }

// Scalar operator sugar.
inline Var operator+(Var a, Var b) { return a.tape->binary(Op::kAdd, a, b); }
inline Var operator-(Var a, Var b) { return a.tape->binary(Op::kSub, a, b); }
inline Var operator*(Var a, Var b) { return a.tape->binary(Op::kMul, a, b); }
inline Var operator/(Var a, Var b) { return a.tape->binary(Op::kDiv, a, b); }
inline Var operator-(Var a) { return a.tape->unary(Op::kNeg, a); }
inline Var operator+(Var a, double b) { return a + a.tape->constant(b); }
inline Var operator+(double a, Var b) { return b.tape->constant(a) + b; }
inline Var operator-(Var a, double b) { return a - a.tape->constant(b); }
inline Var operator-(double a, Var b) { return b.tape->constant(a) - b; }
inline Var operator*(Var a, double b) { return a * a.tape->constant(b); }
inline Var operator*(double a, Var b) { return b.tape->constant(a) * b; }
inline Var operator/(Var a, double b) { return a / a.tape->constant(b); }
inline Var operator/(double a, Var b) { return b.tape->constant(a) / b; }

inline Var exp(Var a) { return a.tape->unary(Op::kExp, a); }
inline Var log(Var a) { return a.tape->unary(Op::kLog, a); }
inline Var tanh(Var a) { return a.tape->unary(Op::kTanh, a); }
inline Var sin(Var a) { return a.tape->unary(Op::kSin, a); }
inline Var cos(Var a) { return a.tape->unary(Op::kCos, a); }
inline Var wrap(Var a) { return a.tape->unary(Op::kWrap, a); }
inline Var detach(Var a) { return a.tape->unary(Op::kDetach, a); }
inline Var atan2(Var u, Var v) { return u.tape->binary(Op::kAtan2, u, v); }
inline Var prelu(Var x, Var slope) { return x.tape->binary(Op::kPRelu, x, slope); }
inline Var log_bessel_i0(Var a) { return a.tape->unary(Op::kLogBesselI0, a); }
inline Var gauss_logpdf(Var d, Var sigma) { return d.tape->binary(Op::kGaussLogPdf, d, sigma); }
inline Var vm_logpdf(Var dtheta, Var kappa) { return dtheta.tape->binary(Op::kVmLogPdf, dtheta, kappa); }

inline Var logsumexp(Tape& tape, std::span<const Var> xs) {
  return tape.logsumexp_block(tape.gather(xs));
}

/// Logistic sigmoid built from tanh.
inline Var sigmoid(Var x) { return 0.5 * (tanh(x * 0.5) + 1.0); }

}  // namespace mdps
