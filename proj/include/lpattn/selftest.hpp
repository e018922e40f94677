#pragma once

// Quick invariant checks runnable from the command line. The full property
// suite lives in the test tree; this is a seconds-long subset for checking a
// build on a new machine.

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "lpattn/attention.hpp"
#include "lpattn/data.hpp"
#include "lpattn/model.hpp"
#include "lpattn/ops.hpp"

namespace lpattn {

namespace selftest_detail {

inline constexpr double kSweep[] = {1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};

inline ModelConfig micro(AttentionVariant v, double p) {
  ModelConfig c;
  c.n_layer = 1;
  c.n_head = 2;
  c.d_model = 8;
  c.context_len = 4;
  c.vocab_size = 11;
  c.dropout = 0.0;
  c.attention.variant = v;
  c.attention.p = p;
  c.sync_attention();
  return c;
}

inline bool unit_norm(std::string& why) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> normal;
  for (std::size_t dk : {4u, 64u}) {
    Tensor<float> x({200, dk});
    for (auto& e : x.data()) e = static_cast<float>(normal(gen));
    for (double p : kSweep) {
      Tape<float> tape(false);
      auto y = lp_normalize_rows(tape, x, p, 1e-6);
      auto y2 = lp_normalize_rows(tape, scale(tape, x, 1e3f), p, 1e-6);
      for (std::size_t r = 0; r < 200; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < dk; ++j) s += std::pow(std::abs(static_cast<double>(y[r * dk + j])), p);
        if (std::abs(std::pow(s, 1.0 / p) - 1.0) > 1e-5) {
          why = "norm off by " + std::to_string(std::pow(s, 1.0 / p) - 1.0) + " at p=" + std::to_string(p);
          return false;
        }
      }
      for (std::size_t i = 0; i < y.size(); ++i)
        if (std::abs(y[i] - y2[i]) > 1e-5) {
          why = "scale invariance broken at p=" + std::to_string(p);
          return false;
        }
    }
  }
  return true;
}

inline bool qknorm_reduction(std::string& why) {
  auto cfg = micro(AttentionVariant::lp, 2.0);
  GptModel<double> a(cfg);
  cfg.attention.variant = AttentionVariant::qknorm;
  GptModel<double> b(cfg);
  TokenBatch batch{{1, 5, 9, 2, 3, 3, 0, 10}, 2, 4};
  Rng rng(0);
  Tape<double> tape(false);
  auto la = a.forward(tape, batch, false, rng);
  auto lb = b.forward(tape, batch, false, rng);
  for (std::size_t i = 0; i < la.size(); ++i)
    if (std::abs(la[i] - lb[i]) > 1e-6) {
      why = "lp(p=2) and qknorm logits differ by " + std::to_string(std::abs(la[i] - lb[i]));
      return false;
    }
  return true;
}

inline bool gradients(std::string& why) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::uniform_int_distribution<int> tok(0, 10);
  for (double p : kSweep) {
    GptModel<double> model(micro(AttentionVariant::lp, p));
    for (auto& prm : model.parameters())
      for (auto& w : prm.tensor.data()) w += noise(gen);
    TokenBatch batch{std::vector<TokenId>(8), 2, 4};
    std::vector<TokenId> targets(8);
    for (auto& id : batch.ids) id = tok(gen);
    for (auto& id : targets) id = tok(gen);
    Rng rng(0);
    auto params = model.parameters();
    for (auto& prm : params) prm.tensor.zero_grad();
    {
      Tape<double> tape;
      auto loss = model.loss(tape, batch, targets, false, rng);
      tape.backward(loss);
    }
    auto eval = [&] {
      Tape<double> tape(false);
      return model.loss(tape, batch, targets, false, rng).item();
    };
    constexpr double h = 1e-5;
    std::uniform_int_distribution<std::size_t> which(0, params.size() - 1);
    for (int s = 0; s < 30; ++s) {
      auto& t = params[which(gen)].tensor;
      const std::size_t j = std::uniform_int_distribution<std::size_t>(0, t.size() - 1)(gen);
      const double analytic = t.has_grad() ? t.grad()[j] : 0.0;
      const double orig = t[j];
      t[j] = orig + h;
      const double up = eval();
      t[j] = orig - h;
      const double down = eval();
      t[j] = orig;
      const double numeric = (up - down) / (2 * h);
      const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
      if (err > 1e-3) {
        why = "gradient mismatch at p=" + std::to_string(p) + " (rel err " + std::to_string(err) + ")";
        return false;
      }
    }
  }
  return true;
}

inline bool causality(std::string& why) {
  GptModel<float> model(ModelConfig::tiny(AttentionVariant::lp, 3.0));
  TokenBatch batch{std::vector<TokenId>(24), 1, 24};
  for (std::size_t i = 0; i < 24; ++i) batch.ids[i] = static_cast<TokenId>((i * 11) % 65);
  Rng rng(0);
  Tape<float> tape(false);
  auto base = model.forward(tape, batch, false, rng);
  batch.ids[12] = 64 - batch.ids[12];
  auto changed = model.forward(tape, batch, false, rng);
  for (std::size_t i = 0; i < 12 * 65; ++i)
    if (base[i] != changed[i]) {
      why = "a later token changed an earlier output";
      return false;
    }
  return true;
}

inline bool uniform_loss(std::string& why) {
  GptModel<float> model(ModelConfig::tiny());
  for (auto& prm : model.parameters())
    if (prm.name.starts_with("final_norm"))
      for (auto& e : prm.tensor.data()) e = 0.0f;
  TokenBatch batch{std::vector<TokenId>(32, 7), 1, 32};
  std::vector<TokenId> targets(32, 3);
  Rng rng(0);
  Tape<float> tape(false);
  const double loss = model.loss(tape, batch, targets, false, rng).item();
  if (std::abs(loss - std::log(65.0)) > 1e-4) {
    why = "uniform-logit loss " + std::to_string(loss);
    return false;
  }
  return true;
}

inline bool folds(std::string& why) {
  const std::size_t n = 100'003, t = 64;
  std::vector<TokenId> tokens(n, 0);
  for (const auto& f : make_folds(n, 10, t + 1)) {
    BatchSampler sampler(tokens, f, t, 5 + f.fold_index);
    for (std::size_t off : sampler.sample_batch(1000).offsets)
      if (off < f.val.end && off + t + 1 > f.val.begin) {
        why = "training window overlaps validation span of fold " + std::to_string(f.fold_index);
        return false;
      }
  }
  return true;
}

}  // namespace selftest_detail

/// Runs the quick checks, printing one line each. Returns true when all pass.
inline bool run_selftest(std::ostream& os) {
  using Check = bool (*)(std::string&);
  const std::pair<const char*, Check> checks[] = {
      {"lp normalisation unit norm and scale invariance", selftest_detail::unit_norm},
      {"lp at p=2 matches qknorm", selftest_detail::qknorm_reduction},
      {"model gradients match finite differences", selftest_detail::gradients},
      {"causal masking", selftest_detail::causality},
      {"uniform logits give ln 65", selftest_detail::uniform_loss},
      {"folds keep training windows out of validation", selftest_detail::folds},
  };
  bool all = true;
  for (const auto& [name, check] : checks) {
    std::string why;
    bool ok = false;
    try {
      ok = check(why);
    } catch (const std::exception& e) {
      why = e.what();
    }
    os << (ok ? "ok    " : "FAIL  ") << name;
    if (!ok) os << ": " << why;
    os << '\n';
    all = all && ok;
  }
  return all;
}

}  // namespace lpattn
