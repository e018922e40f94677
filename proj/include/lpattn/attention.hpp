#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lpattn/error.hpp"
#include "lpattn/ops.hpp"
#include "lpattn/rng.hpp"
#include "lpattn/tensor.hpp"

namespace lpattn {

enum class AttentionVariant { standard, qknorm, lp };

inline std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::standard: return "standard";
    case AttentionVariant::qknorm: return "qknorm";
    case AttentionVariant::lp: return "lp";
  }
  return "?";
}

inline AttentionVariant parse_variant(const std::string& s) {
  if (s == "standard") return AttentionVariant::standard;
  if (s == "qknorm") return AttentionVariant::qknorm;
  if (s == "lp") return AttentionVariant::lp;
  throw ConfigError("unknown attention variant '" + s + "' (expected standard, qknorm or lp)");
}

struct AttentionConfig {
  AttentionVariant variant = AttentionVariant::lp;
  double p = 2.0;  // only read by the lp variant
  std::optional<double> alpha_init;  // unset: sqrt(head_dim)
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  double dropout = 0.0;
  double norm_epsilon = 1e-6;

  double effective_alpha_init() const { return alpha_init.value_or(std::sqrt(static_cast<double>(head_dim))); }

  /// The exponent the normalisation actually uses (qknorm is p = 2).
  double effective_p() const { return variant == AttentionVariant::qknorm ? 2.0 : p; }

  void validate() const {
    if (!(p >= 1.0)) throw ConfigError("attention: p must be >= 1 for a proper norm, got " + std::to_string(p));
    if (!(effective_alpha_init() > 0.0)) throw ConfigError("attention: alpha_init must be positive");
    if (heads == 0 || head_dim == 0) throw ConfigError("attention: heads and head_dim must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("attention: dropout must lie in [0, 1)");
    if (!(norm_epsilon > 0.0)) throw ConfigError("attention: norm_epsilon must be positive");
  }
};

/// Unconstrained value whose softplus equals `alpha`.
inline double inverse_softplus(double alpha) { return alpha > 30.0 ? alpha : std::log(std::expm1(alpha)); }

/// Divides each row of x[..., d_k] by max(||row||_p, epsilon).
///
/// The norm is assembled from differentiable pieces, abs -> pow(p) -> sum ->
/// clamp -> pow(1/p). Clamping the p-th power sum at epsilon^p is the same as
/// clamping the norm at epsilon (x -> x^(1/p) is monotone) and keeps the
/// 1/p-th root away from its infinite slope at 0, so zero rows give zero
/// rows with finite gradients.
template <typename T>
Tensor<T> lp_normalize_rows(Tape<T>& tape, const Tensor<T>& x, double p, double epsilon) {
  if (!(p >= 1.0)) throw ConfigError("lp_normalize_rows: p must be >= 1, got " + std::to_string(p));
  if (!(epsilon > 0.0)) throw ConfigError("lp_normalize_rows: epsilon must be positive");
  const T pt = static_cast<T>(p);
  auto powered = pow_scalar(tape, abs(tape, x), pt);
  auto total = clamp_min(tape, sum_last(tape, powered), static_cast<T>(std::pow(epsilon, p)));
  auto norm = pow_scalar(tape, total, static_cast<T>(1.0 / p));
  return div_rows(tape, x, norm);
}

/// Euclidean row normalisation with a hand-derived backward pass; an
/// independent route to lp_normalize_rows at p = 2.
template <typename T>
Tensor<T> l2_normalize_rows(Tape<T>& tape, const Tensor<T>& x, double epsilon) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  const T eps = static_cast<T>(epsilon);
  Tensor<T> out(x.shape());
  std::vector<T> norms(rows);
  std::vector<bool> clamped(rows);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T sq{0};
    for (std::size_t j = 0; j < d; ++j) sq += xv[r * d + j] * xv[r * d + j];
    const T n = std::sqrt(sq);
    clamped[r] = !(n > eps);
    norms[r] = clamped[r] ? eps : n;
    for (std::size_t j = 0; j < d; ++j) ov[r * d + j] = xv[r * d + j] / norms[r];
  }
  if (detail::tracks(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out, d, rows, norms = std::move(norms), clamped = std::move(clamped)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto yv = out.data();
      auto xg = x.grad_mut();
      for (std::size_t r = 0; r < rows; ++r) {
        // d(x/|x|) = (g - y (g.y)) / |x|
        T gy{0};
        if (!clamped[r]) {
          for (std::size_t j = 0; j < d; ++j) gy += g[r * d + j] * yv[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) xg[r * d + j] += (g[r * d + j] - yv[r * d + j] * gy) / norms[r];
      }
    });
  }
  return out;
}

/// Pre-softmax scores for q[..., T, d_k] against k[..., T, d_k].
/// standard: q k^T / sqrt(d_k). qknorm / lp: softplus(alpha_raw) * q k^T on
/// already-normalised rows.
template <typename T>
Tensor<T> attention_logits(Tape<T>& tape, const Tensor<T>& q_hat, const Tensor<T>& k_hat, const Tensor<T>* alpha_raw,
                           AttentionVariant variant) {
  auto scores = matmul(tape, q_hat, transpose_last_two(tape, k_hat));
  if (variant == AttentionVariant::standard) {
    const double dk = static_cast<double>(q_hat.shape().back());
    return scale(tape, scores, static_cast<T>(1.0 / std::sqrt(dk)));
  }
  if (alpha_raw == nullptr) throw ContractError("attention_logits: normalised variants need an alpha parameter");
  return mul_scalar(tape, scores, softplus(tape, *alpha_raw));
}

/// Multi-head causal self-attention with a selectable query/key normalisation.
template <typename T>
class CausalSelfAttention {
 public:
  CausalSelfAttention(const std::string& prefix, AttentionConfig config, std::size_t context_len, Rng& rng,
                      double init_std, double residual_std)
      : config_(config), context_len_(context_len) {
    config_.validate();
    const std::size_t d = config_.heads * config_.head_dim;
    auto normal = [&](double stddev) {
      Tensor<T> w(Shape{d, d});
      std::normal_distribution<double> dist(0.0, stddev);
      for (auto& v : w.data()) v = static_cast<T>(dist(rng));
      return w;
    };
    w_q_ = Parameter<T>(prefix + ".w_q", normal(init_std), true);
    w_k_ = Parameter<T>(prefix + ".w_k", normal(init_std), true);
    w_v_ = Parameter<T>(prefix + ".w_v", normal(init_std), true);
    w_o_ = Parameter<T>(prefix + ".w_o", normal(residual_std), true);
    b_q_ = Parameter<T>(prefix + ".b_q", Tensor<T>(Shape{d}), false);
    b_k_ = Parameter<T>(prefix + ".b_k", Tensor<T>(Shape{d}), false);
    b_v_ = Parameter<T>(prefix + ".b_v", Tensor<T>(Shape{d}), false);
    b_o_ = Parameter<T>(prefix + ".b_o", Tensor<T>(Shape{d}), false);
    if (config_.variant != AttentionVariant::standard) {
      alpha_ = Parameter<T>(prefix + ".alpha",
                            Tensor<T>::scalar(static_cast<T>(inverse_softplus(config_.effective_alpha_init()))), false);
    }
  }

  const AttentionConfig& config() const { return config_; }

  /// Positive scale currently applied to normalised logits (1/sqrt(d_k) for standard).
  double alpha() const {
    if (!alpha_) return 1.0 / std::sqrt(static_cast<double>(config_.head_dim));
    const double raw = static_cast<double>(alpha_->tensor[0]);
    return raw > 0 ? raw + std::log1p(std::exp(-raw)) : std::log1p(std::exp(raw));
  }

  std::vector<Parameter<T>> parameters() const {
    std::vector<Parameter<T>> out{w_q_, b_q_, w_k_, b_k_, w_v_, b_v_, w_o_, b_o_};
    if (alpha_) out.push_back(*alpha_);
    return out;
  }

  /// x: [B, T, d] -> [B, T, d].
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool train, Rng& rng) const {
    const std::size_t d = config_.heads * config_.head_dim;
    if (x.rank() != 3 || x.dim(2) != d) {
      throw DimensionError("attention: expected [B,T," + std::to_string(d) + "], got " + to_string(x.shape()));
    }
    if (x.dim(1) > context_len_) {
      throw ContractError("attention: sequence length " + std::to_string(x.dim(1)) + " exceeds context " +
                          std::to_string(context_len_));
    }
    auto q = split_heads(tape, linear(tape, x, w_q_.tensor, b_q_.tensor), config_.heads);
    auto k = split_heads(tape, linear(tape, x, w_k_.tensor, b_k_.tensor), config_.heads);
    auto v = split_heads(tape, linear(tape, x, w_v_.tensor, b_v_.tensor), config_.heads);
    switch (config_.variant) {
      case AttentionVariant::standard:
        break;
      case AttentionVariant::qknorm:
        q = l2_normalize_rows(tape, q, config_.norm_epsilon);
        k = l2_normalize_rows(tape, k, config_.norm_epsilon);
        break;
      case AttentionVariant::lp:
        q = lp_normalize_rows(tape, q, config_.p, config_.norm_epsilon);
        k = lp_normalize_rows(tape, k, config_.p, config_.norm_epsilon);
        break;
    }
    auto logits = attention_logits(tape, q, k, alpha_ ? &alpha_->tensor : nullptr, config_.variant);
    auto weights = softmax_rows(tape, causal_mask(tape, logits));
    if (train) weights = dropout(tape, weights, config_.dropout, rng);
    auto y = concat_heads(tape, matmul(tape, weights, v));
    auto out = linear(tape, y, w_o_.tensor, b_o_.tensor);
    if (train) out = dropout(tape, out, config_.dropout, rng);
    return out;
  }

 private:
  AttentionConfig config_;
  std::size_t context_len_;
  Parameter<T> w_q_, b_q_, w_k_, b_k_, w_v_, b_v_, w_o_, b_o_;
  std::optional<Parameter<T>> alpha_;
};

}  // namespace lpattn
