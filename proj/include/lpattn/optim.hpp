#pragma once

#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lpattn/error.hpp"
#include "lpattn/tensor.hpp"

namespace lpattn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// Decoupled-weight-decay Adam. Decay is applied only to parameters whose
/// `decay` flag is set. Moment state is keyed by parameter name.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  const AdamWConfig& config() const { return config_; }
  long step_count() const { return step_; }

  /// One update at learning rate `lr`; zeroes every gradient afterwards.
  void step(std::span<Parameter<T>> params, double lr) {
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) throw ContractError("adamw_step: parameter '" + p.name + "' has no gradient");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto& p : params) {
      auto& st = state_[p.name];
      auto value = p.tensor.data();
      auto grad = p.tensor.grad();
      if (st.m.empty()) {
        st.m.assign(value.size(), 0.0);
        st.v.assign(value.size(), 0.0);
      }
      const double decay = p.decay ? lr * config_.weight_decay : 0.0;
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * g;
        st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * g * g;
        const double m_hat = st.m[i] / bc1;
        const double v_hat = st.v[i] / bc2;
        double w = static_cast<double>(value[i]);
        w -= decay * w;
        w -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        value[i] = static_cast<T>(w);
      }
      p.tensor.zero_grad();
    }
  }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamWConfig config_;
  std::unordered_map<std::string, Moments> state_;
  long step_ = 0;
};

template <typename T>
double global_grad_norm(std::span<const Parameter<T>> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Parameter<T>> params, double max_norm) {
  const double norm = global_grad_norm<T>(params);
  if (norm > max_norm) {
    const double factor = max_norm / (norm + 1e-6);
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.grad_mut()) g = static_cast<T>(g * factor);
    }
  }
  return norm;
}

}  // namespace lpattn
