#pragma once

// Differentiable operations. Every op takes the tape it records onto as its
// first argument; gradients are accumulated into the operands' grad buffers
// when the tape is replayed.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lpattn/error.hpp"
#include "lpattn/rng.hpp"
#include "lpattn/tensor.hpp"

namespace lpattn {

using TokenId = std::int32_t;

/// Additive sentinel placed on masked (future) attention positions.
inline constexpr double kMaskSentinel = -1e9;

namespace detail {

template <typename T, typename... Ts>
bool tracks(const Tape<T>& tape, const Ts&... inputs) {
  return tape.recording() && (inputs.requires_grad() || ...);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <typename T>
std::size_t last_dim(const Tensor<T>& x) {
  return x.shape().back();
}

// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t h = 0; h < k; ++h) {
      const T av = arow[h];
      if (av == T{0}) continue;
      const T* brow = b + h * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * n;
    for (std::size_t h = 0; h < k; ++h) {
      const T av = arow[h];
      if (av == T{0}) continue;
      T* crow = c + h * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T, via an explicit transpose of b.
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* g, const T* b, T* c, std::vector<T>& scratch) {
  scratch.resize(k * n);
  for (std::size_t h = 0; h < k; ++h)
    for (std::size_t j = 0; j < n; ++j) scratch[j * k + h] = b[h * n + j];
  gemm_nn(m, n, k, g, scratch.data(), c);
}

template <typename T, typename F, typename G>
Tensor<T> unary_op(Tape<T>& tape, const Tensor<T>& x, F f, G df) {
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto yv = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = f(xv[i]);
  if (tracks(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out, df]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xg = x.grad_mut();
      auto xv = x.data();
      auto yv = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * df(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace detail

/// a[m x k] * b[k x n]. Also accepts a of shape [..., m, k] against a 2-D b
/// (leading axes flattened), and equal-rank batched operands [..., m, k] x
/// [..., k, n] with identical leading extents.
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  auto fail = [&] {
    throw DimensionError("matmul: incompatible shapes " + to_string(as) + " and " + to_string(bs));
  };
  if (as.size() < 2 || bs.size() < 2) fail();
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k) fail();

  std::size_t batch = 1;
  std::size_t m = 0;
  bool batched = false;
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);
  if (bs.size() == 2) {
    m = a.size() / k;
  } else {
    if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) fail();
    m = as[as.size() - 2];
    batch = a.size() / (m * k);
    batched = true;
  }

  Tensor<T> out(out_shape);
  {
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* cp = out.data().data();
    for (std::size_t s = 0; s < batch; ++s) {
      detail::gemm_nn(m, k, n, ap + s * m * k, bp + (batched ? s * k * n : 0), cp + s * m * n);
    }
  }
  if (detail::tracks(tape, a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out, batch, m, k, n, batched]() mutable {
      if (!out.has_grad()) return;
      const T* gp = out.grad().data();
      const T* ap = a.data().data();
      const T* bp = b.data().data();
      std::vector<T> scratch;
      if (a.requires_grad()) {
        T* ag = a.grad_mut().data();
        for (std::size_t s = 0; s < batch; ++s) {
          detail::gemm_nt(m, k, n, gp + s * m * n, bp + (batched ? s * k * n : 0), ag + s * m * k, scratch);
        }
      }
      if (b.requires_grad()) {
        T* bg = b.grad_mut().data();
        for (std::size_t s = 0; s < batch; ++s) {
          detail::gemm_tn(m, k, n, ap + s * m * k, gp + s * m * n, bg + (batched ? s * k * n : 0));
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (detail::tracks(tape, a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      for (auto* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto tg = t->grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) tg[i] += g[i];
      }
    });
  }
  return out;
}

/// x[..., n] + bias[n], bias repeated over every row.
template <typename T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = detail::last_dim(x);
  if (bias.rank() != 1 || bias.size() != n) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match rows of " + to_string(x.shape()));
  }
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto bv = bias.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + bv[i % n];
  if (detail::tracks(tape, x, bias)) {
    out.set_requires_grad(true);
    tape.record([x, bias, out, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (x.requires_grad()) {
        auto xg = x.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto bg = bias.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) bg[i % n] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (detail::tracks(tape, a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto av = a.data();
      auto bv = b.data();
      if (a.requires_grad()) {
        auto ag = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) bg[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

/// x * c for a constant c.
template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T c) {
  return detail::unary_op(
      tape, x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

/// x * s where s is a one-element tensor that receives a gradient.
template <typename T>
Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& s) {
  if (s.size() != 1) throw DimensionError("mul_scalar: expected a one-element scale, got " + to_string(s.shape()));
  const T c = s[0];
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * c;
  if (detail::tracks(tape, x, s)) {
    out.set_requires_grad(true);
    tape.record([x, s, out, c]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xv = x.data();
      if (x.requires_grad()) {
        auto xg = x.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * c;
      }
      if (s.requires_grad()) {
        T acc{0};
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
        s.grad_mut()[0] += acc;
      }
    });
  }
  return out;
}

/// |x|, with gradient 0 at exactly 0.
template <typename T>
Tensor<T> abs(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary_op(
      tape, x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

/// x^e elementwise, for x >= 0 wherever e is non-integral. At x == 0 the
/// derivative is 0 (e != 1) or 1 (e == 1), never inf.
template <typename T>
Tensor<T> pow_scalar(Tape<T>& tape, const Tensor<T>& x, T e) {
  return detail::unary_op(
      tape, x, [e](T v) { return std::pow(v, e); },
      [e](T v, T) {
        if (e == T{1}) return T{1};
        if (v == T{0}) return T{0};
        return e * std::pow(v, e - T{1});
      });
}

/// max(x, c) elementwise; gradient passes only where x > c.
template <typename T>
Tensor<T> clamp_min(Tape<T>& tape, const Tensor<T>& x, T c) {
  return detail::unary_op(
      tape, x, [c](T v) { return v > c ? v : c; }, [c](T v, T) { return v > c ? T{1} : T{0}; });
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return detail::unary_op(
      tape, x, [](T v) { return T(0.5) * v * (T{1} + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        return T(0.5) * (T{1} + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

/// log(1 + e^x), evaluated without overflow.
template <typename T>
Tensor<T> softplus(Tape<T>& tape, const Tensor<T>& x) {
  return detail::unary_op(
      tape, x, [](T v) { return v > T{0} ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](T v, T) { return T{1} / (T{1} + std::exp(-v)); });
}

/// Sum over the last axis, keeping it with extent 1.
template <typename T>
Tensor<T> sum_last(Tape<T>& tape, const Tensor<T>& x) {
  const std::size_t d = detail::last_dim(x);
  Shape shape = x.shape();
  shape.back() = 1;
  Tensor<T> out(shape);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < ov.size(); ++r) {
    T acc{0};
    for (std::size_t j = 0; j < d; ++j) acc += xv[r * d + j];
    ov[r] = acc;
  }
  if (detail::tracks(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out, d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xg = x.grad_mut();
      for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += g[i / d];
    });
  }
  return out;
}

/// Sum of every element, as a one-element tensor.
template <typename T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& x) {
  T acc{0};
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::tracks(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (auto& v : x.grad_mut()) v += g;
    });
  }
  return out;
}

/// x[..., d] / n[..., 1], each row divided by its own scalar.
template <typename T>
Tensor<T> div_rows(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& n) {
  const std::size_t d = detail::last_dim(x);
  if (n.size() * d != x.size() || detail::last_dim(n) != 1) {
    throw DimensionError("div_rows: divisor " + to_string(n.shape()) + " does not match rows of " + to_string(x.shape()));
  }
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto nv = n.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] / nv[i / d];
  if (detail::tracks(tape, x, n)) {
    out.set_requires_grad(true);
    tape.record([x, n, out, d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto nv = n.data();
      auto yv = out.data();
      if (x.requires_grad()) {
        auto xg = x.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] / nv[i / d];
      }
      if (n.requires_grad()) {
        auto ng = n.grad_mut();
        for (std::size_t r = 0; r < nv.size(); ++r) {
          T acc{0};
          for (std::size_t j = 0; j < d; ++j) acc += g[r * d + j] * yv[r * d + j];
          ng[r] -= acc / nv[r];
        }
      }
    });
  }
  return out;
}

/// Row-wise softmax over the last axis, with per-row max subtraction.
template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x) {
  const std::size_t d = detail::last_dim(x);
  const std::size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T* yr = ov.data() + r * d;
    T mx = xr[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    T total{0};
    for (std::size_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    const T inv = T{1} / total;
    for (std::size_t j = 0; j < d; ++j) yr[j] *= inv;
  }
  if (detail::tracks(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out, d, rows]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto yv = out.data();
      auto xg = x.grad_mut();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g.data() + r * d;
        const T* yr = yv.data() + r * d;
        T dot{0};
        for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
        T* xr = xg.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) xr[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

/// Adds kMaskSentinel to every position j > i of each trailing [T x T] block.
template <typename T>
Tensor<T> causal_mask(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() < 2 || x.shape()[x.rank() - 1] != x.shape()[x.rank() - 2]) {
    throw DimensionError("causal_mask: expected trailing square axes, got " + to_string(x.shape()));
  }
  const std::size_t t = detail::last_dim(x);
  Tensor<T> out = x.clone();
  out.set_requires_grad(false);
  auto ov = out.data();
  const T sentinel = static_cast<T>(kMaskSentinel);
  for (std::size_t base = 0; base < ov.size(); base += t * t)
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = i + 1; j < t; ++j) ov[base + i * t + j] += sentinel;
  if (detail::tracks(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xg = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
    });
  }
  return out;
}

/// Layer normalisation over the last axis followed by gain and bias.
template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  const std::size_t d = detail::last_dim(x);
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + to_string(gain.shape()) + "/" + to_string(bias.shape()) +
                         " do not match " + to_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(rows);
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mean) * rstd[r];
      xhat[r * d + j] = h;
      ov[r * d + j] = h * gv[j] + bv[j];
    }
  }
  if (detail::tracks(tape, x, gain, bias)) {
    out.set_requires_grad(true);
    tape.record([x, gain, bias, out, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gv = gain.data();
      if (gain.requires_grad() || bias.requires_grad()) {
        auto gg = gain.grad_mut();
        auto bg = bias.grad_mut();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) {
            gg[j] += g[r * d + j] * xhat[r * d + j];
            bg[j] += g[r * d + j];
          }
      }
      if (x.requires_grad()) {
        auto xg = x.grad_mut();
        const T inv_d = T{1} / static_cast<T>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh{0};
          T mean_dh_h{0};
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + j];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * gv[j];
            xg[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

/// Mean over rows of -log softmax(logits)[target], via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const TokenId> targets) {
  const std::size_t v = detail::last_dim(logits);
  const std::size_t rows = logits.size() / v;
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         to_string(logits.shape()));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " at row " + std::to_string(r) +
                       " outside [0, " + std::to_string(v) + ")");
    }
  }
  auto lv = logits.data();
  std::vector<T> lse(rows);
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    const T* lr = lv.data() + r * v;
    T mx = lr[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
    T s{0};
    for (std::size_t j = 0; j < v; ++j) s += std::exp(lr[j] - mx);
    lse[r] = mx + std::log(s);
    total += lse[r] - lr[targets[r]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(rows));
  if (detail::tracks(tape, logits)) {
    out.set_requires_grad(true);
    std::vector<TokenId> tgt(targets.begin(), targets.end());
    tape.record([logits, out, v, rows, lse = std::move(lse), tgt = std::move(tgt)]() mutable {
      if (!out.has_grad()) return;
      const T scale = out.grad()[0] / static_cast<T>(rows);
      auto lv = logits.data();
      auto lg = logits.grad_mut();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < v; ++j) lg[r * v + j] += scale * std::exp(lv[r * v + j] - lse[r]);
        lg[r * v + static_cast<std::size_t>(tgt[r])] -= scale;
      }
    });
  }
  return out;
}

/// Inverted dropout: survivors are scaled by 1/(1-rate). Rate 0 is identity.
template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = uniform01(rng) >= rate ? keep_scale : T{0};
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * mask[i];
  if (detail::tracks(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out, mask = std::move(mask)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xg = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * mask[i];
    });
  }
  return out;
}

/// Rows of table[V x d] selected by ids; result is [ids.size() x d].
template <typename T>
Tensor<T> embedding_lookup(Tape<T>& tape, const Tensor<T>& table, std::span<const TokenId> ids) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be 2-D, got " + to_string(table.shape()));
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  Tensor<T> out(Shape{ids.size(), d});
  auto tv = table.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[r]) + " outside [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * d, d, ov.data() + r * d);
  }
  if (detail::tracks(tape, table)) {
    out.set_requires_grad(true);
    std::vector<TokenId> saved(ids.begin(), ids.end());
    tape.record([table, out, d, saved = std::move(saved)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto tg = table.grad_mut();
      for (std::size_t r = 0; r < saved.size(); ++r) {
        T* dst = tg.data() + static_cast<std::size_t>(saved[r]) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[r * d + j];
      }
    });
  }
  return out;
}

namespace detail {

// Differentiable gather: out[i] = x[index[i]], a permutation of elements.
template <typename T>
Tensor<T> permute_elements(Tape<T>& tape, const Tensor<T>& x, Shape out_shape, std::vector<std::size_t> index) {
  Tensor<T> out(std::move(out_shape));
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[index[i]];
  if (tracks(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out, index = std::move(index)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xg = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) xg[index[i]] += g[i];
    });
  }
  return out;
}

}  // namespace detail

/// [..., m, n] -> [..., n, m].
template <typename T>
Tensor<T> transpose_last_two(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last_two: rank < 2 for " + to_string(x.shape()));
  const std::size_t m = x.shape()[x.rank() - 2];
  const std::size_t n = x.shape()[x.rank() - 1];
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<std::size_t> index(x.size());
  for (std::size_t base = 0; base < x.size(); base += m * n)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) index[base + j * m + i] = base + i * n + j;
  return detail::permute_elements(tape, x, std::move(shape), std::move(index));
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (detail::tracks(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xg = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
    });
  }
  return out;
}

/// [B, T, H*dk] -> [B, H, T, dk].
template <typename T>
Tensor<T> split_heads(Tape<T>& tape, const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + to_string(x.shape()) + " into " + std::to_string(heads) + " heads");
  }
  const std::size_t b = x.dim(0), t = x.dim(1), dk = x.dim(2) / heads;
  std::vector<std::size_t> index(x.size());
  std::size_t o = 0;
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t j = 0; j < dk; ++j) index[o++] = (bi * t + ti) * heads * dk + h * dk + j;
  return detail::permute_elements(tape, x, Shape{b, heads, t, dk}, std::move(index));
}

/// [B, H, T, dk] -> [B, T, H*dk].
template <typename T>
Tensor<T> concat_heads(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("concat_heads: expected [B,H,T,dk], got " + to_string(x.shape()));
  const std::size_t b = x.dim(0), heads = x.dim(1), t = x.dim(2), dk = x.dim(3);
  std::vector<std::size_t> index(x.size());
  std::size_t o = 0;
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dk; ++j) index[o++] = ((bi * heads + h) * t + ti) * dk + j;
  return detail::permute_elements(tape, x, Shape{b, t, heads * dk}, std::move(index));
}

/// x * w + b for w [in x out], b [out].
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_bias(tape, matmul(tape, x, w), b);
}

}  // namespace lpattn
