#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include "lpattn/attention.hpp"
#include "lpattn/error.hpp"
#include "lpattn/ops.hpp"
#include "lpattn/rng.hpp"
#include "lpattn/tensor.hpp"

namespace lpattn {

struct ModelConfig {
  std::size_t n_layer = 6;
  std::size_t n_head = 6;
  std::size_t d_model = 384;
  std::size_t context_len = 256;
  std::size_t vocab_size = 65;
  double dropout = 0.2;
  bool tie_weights = true;
  AttentionConfig attention;
  std::uint64_t seed = 1337;

  std::size_t head_dim() const { return d_model / n_head; }

  /// Six layers, six heads, width 384, context 256, dropout 0.2, 65 symbols.
  static ModelConfig paper(AttentionVariant variant = AttentionVariant::lp, double p = 2.0) {
    ModelConfig c;
    c.attention.variant = variant;
    c.attention.p = p;
    c.sync_attention();
    return c;
  }

  /// Desk-scale model: 2 layers, 2 heads, width 64, context 64.
  static ModelConfig tiny(AttentionVariant variant = AttentionVariant::lp, double p = 2.0) {
    ModelConfig c;
    c.n_layer = 2;
    c.n_head = 2;
    c.d_model = 64;
    c.context_len = 64;
    c.dropout = 0.0;
    c.attention.variant = variant;
    c.attention.p = p;
    c.sync_attention();
    return c;
  }

  /// Copies heads / head_dim / dropout into the attention sub-config.
  void sync_attention() {
    attention.heads = n_head;
    attention.head_dim = n_head ? d_model / n_head : 0;
    attention.dropout = dropout;
  }

  void validate() const {
    if (n_layer == 0 || n_head == 0 || d_model == 0 || context_len == 0 || vocab_size == 0) {
      throw ConfigError("model: all dimensions must be positive");
    }
    if (d_model % n_head != 0) {
      throw ConfigError("model: d_model " + std::to_string(d_model) + " is not divisible by n_head " +
                        std::to_string(n_head));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
    if (attention.heads != n_head || attention.head_dim != head_dim()) {
      throw ConfigError("model: attention heads/head_dim disagree with n_head/d_model (call sync_attention)");
    }
    attention.validate();
  }
};

/// Number of trainable scalars implied by a configuration.
inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t norm = 2 * d;
  const std::size_t attn = 4 * (d * d + d) + (c.attention.variant == AttentionVariant::standard ? 0 : 1);
  const std::size_t mlp = d * 4 * d + 4 * d + 4 * d * d + d;
  std::size_t total = c.vocab_size * d + c.context_len * d;
  total += c.n_layer * (2 * norm + attn + mlp);
  total += norm;
  if (!c.tie_weights) total += d * c.vocab_size;
  return total;
}

/// A batch of token ids laid out row-major as [batch x time].
struct TokenBatch {
  std::vector<TokenId> ids;
  std::size_t batch = 0;
  std::size_t time = 0;
};

/// Decoder-only transformer: token + learned position embeddings, pre-norm
/// blocks (attention and a 4x GELU MLP), final norm, LM head (tied to the
/// token embedding by default).
template <typename T>
class GptModel {
 public:
  GptModel(const GptModel&) = delete;
  GptModel& operator=(const GptModel&) = delete;
  GptModel(GptModel&&) noexcept = default;
  GptModel& operator=(GptModel&&) noexcept = default;

  explicit GptModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed);
    const std::size_t d = config_.d_model;
    constexpr double init_std = 0.02;
    const double residual_std = init_std / std::sqrt(2.0 * static_cast<double>(config_.n_layer));

    auto normal = [&](Shape shape, double stddev) {
      Tensor<T> w(std::move(shape));
      std::normal_distribution<double> dist(0.0, stddev);
      for (auto& v : w.data()) v = static_cast<T>(dist(rng));
      return w;
    };
    auto norm_pair = [&](const std::string& name) {
      return std::pair{Parameter<T>(name + ".gain", Tensor<T>(Shape{d}, T{1}), false),
                       Parameter<T>(name + ".bias", Tensor<T>(Shape{d}), false)};
    };

    token_embedding_ = Parameter<T>("token_embedding", normal({config_.vocab_size, d}, init_std), false);
    position_embedding_ = Parameter<T>("position_embedding", normal({config_.context_len, d}, init_std), false);
    for (std::size_t l = 0; l < config_.n_layer; ++l) {
      const std::string prefix = "block." + std::to_string(l);
      auto [g1, b1] = norm_pair(prefix + ".norm1");
      auto [g2, b2] = norm_pair(prefix + ".norm2");
      Block block{g1, b1,
                  CausalSelfAttention<T>(prefix + ".attn", config_.attention, config_.context_len, rng, init_std,
                                         residual_std),
                  g2, b2,
                  Parameter<T>(prefix + ".mlp.w_fc", normal({d, 4 * d}, init_std), true),
                  Parameter<T>(prefix + ".mlp.b_fc", Tensor<T>(Shape{4 * d}), false),
                  Parameter<T>(prefix + ".mlp.w_proj", normal({4 * d, d}, residual_std), true),
                  Parameter<T>(prefix + ".mlp.b_proj", Tensor<T>(Shape{d}), false)};
      blocks_.push_back(std::move(block));
    }
    std::tie(final_gain_, final_bias_) = norm_pair("final_norm");
    if (!config_.tie_weights) {
      lm_head_ = Parameter<T>("lm_head", normal({d, config_.vocab_size}, init_std), true);
    }
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<Parameter<T>>& parameters() const { return params_cache(); }
  std::vector<Parameter<T>>& parameters() { return params_cache(); }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
  }

  const CausalSelfAttention<T>& attention(std::size_t layer) const { return blocks_.at(layer).attn; }

  /// Logits [B, T, vocab].
  Tensor<T> forward(Tape<T>& tape, const TokenBatch& batch, bool train, Rng& rng) const {
    const std::size_t b = batch.batch;
    const std::size_t t = batch.time;
    const std::size_t d = config_.d_model;
    if (b == 0 || t == 0 || batch.ids.size() != b * t) {
      throw ContractError("forward: batch holds " + std::to_string(batch.ids.size()) + " ids for shape [" +
                          std::to_string(b) + "x" + std::to_string(t) + "]");
    }
    if (t > config_.context_len) {
      throw ContractError("forward: sequence length " + std::to_string(t) + " exceeds context " +
                          std::to_string(config_.context_len));
    }
    for (TokenId id : batch.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
        throw ContractError("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(config_.vocab_size));
      }
    }
    std::vector<TokenId> positions(b * t);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<TokenId>(i % t);

    auto x = add(tape, embedding_lookup(tape, token_embedding_.tensor, batch.ids),
                 embedding_lookup(tape, position_embedding_.tensor, positions));
    x = reshape(tape, x, Shape{b, t, d});
    if (train) x = dropout(tape, x, config_.dropout, rng);
    for (const auto& blk : blocks_) {
      auto h = layer_norm(tape, x, blk.norm1_gain.tensor, blk.norm1_bias.tensor);
      x = add(tape, x, blk.attn.forward(tape, h, train, rng));
      h = layer_norm(tape, x, blk.norm2_gain.tensor, blk.norm2_bias.tensor);
      h = gelu(tape, linear(tape, h, blk.w_fc.tensor, blk.b_fc.tensor));
      h = linear(tape, h, blk.w_proj.tensor, blk.b_proj.tensor);
      if (train) h = dropout(tape, h, config_.dropout, rng);
      x = add(tape, x, h);
    }
    x = layer_norm(tape, x, final_gain_.tensor, final_bias_.tensor);
    auto head = config_.tie_weights ? transpose_last_two(tape, token_embedding_.tensor) : lm_head_.tensor;
    return matmul(tape, x, head);
  }

  /// Mean next-token cross-entropy.
  Tensor<T> loss(Tape<T>& tape, const TokenBatch& inputs, std::span<const TokenId> targets, bool train,
                 Rng& rng) const {
    auto logits = forward(tape, inputs, train, rng);
    auto flat = reshape(tape, logits, Shape{inputs.batch * inputs.time, config_.vocab_size});
    return cross_entropy(tape, flat, targets);
  }

  /// Autoregressive sampling; temperature <= 0 is greedy argmax decoding.
  std::vector<TokenId> generate(std::vector<TokenId> prompt, std::size_t n_tokens, double temperature,
                                Rng& rng) const {
    if (prompt.empty()) throw ContractError("generate: prompt must be non-empty");
    const std::size_t v = config_.vocab_size;
    for (std::size_t step = 0; step < n_tokens; ++step) {
      const std::size_t t = std::min(prompt.size(), config_.context_len);
      TokenBatch window{std::vector<TokenId>(prompt.end() - static_cast<std::ptrdiff_t>(t), prompt.end()), 1, t};
      Tape<T> tape(false);
      auto logits = forward(tape, window, false, rng);
      auto last = logits.data().subspan((t - 1) * v, v);
      TokenId next = 0;
      if (temperature <= 0.0) {
        next = static_cast<TokenId>(std::max_element(last.begin(), last.end()) - last.begin());
      } else {
        double mx = -std::numeric_limits<double>::infinity();
        for (T l : last) mx = std::max(mx, static_cast<double>(l) / temperature);
        std::vector<double> probs(v);
        double total = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
          probs[j] = std::exp(static_cast<double>(last[j]) / temperature - mx);
          total += probs[j];
        }
        double u = uniform01(rng) * total;
        next = static_cast<TokenId>(v - 1);
        for (std::size_t j = 0; j < v; ++j) {
          u -= probs[j];
          if (u < 0.0) {
            next = static_cast<TokenId>(j);
            break;
          }
        }
      }
      prompt.push_back(next);
    }
    return prompt;
  }

 private:
  struct Block {
    Parameter<T> norm1_gain, norm1_bias;
    CausalSelfAttention<T> attn;
    Parameter<T> norm2_gain, norm2_bias;
    Parameter<T> w_fc, b_fc, w_proj, b_proj;
  };

  std::vector<Parameter<T>>& params_cache() const {
    if (params_.empty()) {
      params_.push_back(token_embedding_);
      params_.push_back(position_embedding_);
      for (const auto& blk : blocks_) {
        params_.push_back(blk.norm1_gain);
        params_.push_back(blk.norm1_bias);
        for (auto& p : blk.attn.parameters()) params_.push_back(p);
        params_.push_back(blk.norm2_gain);
        params_.push_back(blk.norm2_bias);
        params_.push_back(blk.w_fc);
        params_.push_back(blk.b_fc);
        params_.push_back(blk.w_proj);
        params_.push_back(blk.b_proj);
      }
      params_.push_back(final_gain_);
      params_.push_back(final_bias_);
      if (!config_.tie_weights) params_.push_back(lm_head_);
    }
    return params_;
  }

  ModelConfig config_;
  Parameter<T> token_embedding_;
  Parameter<T> position_embedding_;
  std::vector<Block> blocks_;
  Parameter<T> final_gain_, final_bias_;
  Parameter<T> lm_head_;
  mutable std::vector<Parameter<T>> params_;
};

}  // namespace lpattn
