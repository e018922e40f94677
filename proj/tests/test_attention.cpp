#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

namespace lpattn {
namespace {

using testing::grad_check;
using testing::random_away_from_zero;
using testing::random_tensor;

constexpr double kSweep[] = {1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};

double lp_norm(std::span<const double> v, double p) {
  double s = 0;
  for (double x : v) s += std::pow(std::abs(x), p);
  return std::pow(s, 1.0 / p);
}

Tensor<double> normalize(const std::vector<double>& row, double p) {
  Tape<double> tape(false);
  return lp_normalize_rows(tape, Tensor<double>({1, row.size()}, row), p, 1e-6);
}

TEST(LpNormalize, KnownRows) {
  auto a = normalize({3, 4}, 2.0);
  EXPECT_NEAR(a[0], 0.6, 1e-12);
  EXPECT_NEAR(a[1], 0.8, 1e-12);
  auto b = normalize({-2, 0, 2}, 1.0);
  EXPECT_NEAR(b[0], -0.5, 1e-12);
  EXPECT_EQ(b[1], 0.0);
  EXPECT_NEAR(b[2], 0.5, 1e-12);
  // 9^(1/3) = 2.0800838230519041...
  auto c = normalize({1, 2}, 3.0);
  EXPECT_NEAR(c[0], 0.480750, 1e-5);
  EXPECT_NEAR(c[1], 0.961500, 1e-5);
}

TEST(LpNormalize, ZeroRowStaysZeroWithFiniteGradient) {
  for (double p : kSweep) {
    Tensor<float> x({2, 4});
    x[4] = 1.0f;
    x.set_requires_grad(true);
    Tape<float> tape;
    auto y = lp_normalize_rows(tape, x, p, 1e-6);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y[j], 0.0f);
    auto loss = sum_all(tape, y);
    tape.backward(loss);
    for (float g : x.grad()) EXPECT_TRUE(std::isfinite(g)) << "p=" << p;
  }
}

TEST(LpNormalize, RejectsPBelowOne) {
  Tape<float> tape(false);
  EXPECT_THROW(lp_normalize_rows(tape, Tensor<float>({1, 2}, 1.0f), 0.5, 1e-6), ConfigError);
  AttentionConfig cfg;
  cfg.p = 0.99;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.p = 2.0;
  cfg.alpha_init = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(LpNormalize, UnitNormAndScaleInvariance) {
  std::mt19937_64 gen(21);
  for (double p : kSweep) {
    auto x = random_tensor<double>({50, 16}, gen, -3, 3, false);
    Tape<double> tape(false);
    auto y = lp_normalize_rows(tape, x, p, 1e-6);
    auto y2 = lp_normalize_rows(tape, scale(tape, x, 7.5), p, 1e-6);
    for (std::size_t r = 0; r < 50; ++r) {
      EXPECT_NEAR(lp_norm(y.data().subspan(r * 16, 16), p), 1.0, 1e-5);
      for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(y[r * 16 + j], y2[r * 16 + j], 1e-5);
    }
  }
}

TEST(LpNormalize, L2RouteAgreesWithGenericRoute) {
  std::mt19937_64 gen(22);
  auto x = random_tensor<double>({10, 8}, gen);
  Tape<double> tape(false);
  auto a = lp_normalize_rows(tape, x, 2.0, 1e-6);
  auto b = l2_normalize_rows(tape, x, 1e-6);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  auto w = random_tensor<double>({10, 8}, gen, -1, 1, false);
  auto r = grad_check({x}, [&](Tape<double>& t) { return sum_all(t, mul(t, l2_normalize_rows(t, x, 1e-6), w)); });
  EXPECT_LT(r.max_rel_err, 1e-3);
}

TEST(LpNormalize, GradientMatchesFiniteDifferencesForEverySweepP) {
  std::mt19937_64 gen(23);
  for (double p : kSweep) {
    auto x = random_away_from_zero<double>({3, 5}, gen);
    auto w = random_tensor<double>({3, 5}, gen, -1, 1, false);
    auto r = grad_check({x}, [&](Tape<double>& t) { return sum_all(t, mul(t, lp_normalize_rows(t, x, p, 1e-6), w)); });
    EXPECT_LT(r.max_rel_err, 1e-3) << "p=" << p;
  }
}

TEST(AttentionLogits, KnownValues) {
  Tape<double> tape(false);
  auto alpha_one = Tensor<double>::scalar(inverse_softplus(1.0));
  Tensor<double> unit({1, 2}, {0.6, 0.8});
  auto s = attention_logits(tape, unit, unit, &alpha_one, AttentionVariant::lp);
  EXPECT_NEAR(s.item(), 1.0, 1e-12);

  // 2 * 1 * 2 / 9^(2/3), evaluated at 30 digits.
  auto s3 = attention_logits(tape, normalize({1, 2}, 3.0), normalize({2, 1}, 3.0), &alpha_one, AttentionVariant::lp);
  EXPECT_NEAR(s3.item(), 0.924482, 1e-5);

  Tensor<double> e0({1, 4}, {1, 0, 0, 0});
  EXPECT_NEAR(attention_logits<double>(tape, e0, e0, nullptr, AttentionVariant::standard).item(), 0.5, 1e-12);
  EXPECT_THROW(attention_logits<double>(tape, e0, e0, nullptr, AttentionVariant::qknorm), ContractError);
}

TEST(AttentionLogits, BoundedByAlphaAndNormEquivalence) {
  std::mt19937_64 gen(24);
  const double alpha = 3.0;
  auto raw = Tensor<double>::scalar(inverse_softplus(alpha));
  for (double p : kSweep) {
    for (std::size_t dk : {4u, 32u}) {
      const double bound = alpha * std::pow(static_cast<double>(dk), std::max(0.0, 1.0 - 2.0 / p)) + 1e-4;
      auto q = random_tensor<double>({64, dk}, gen, -5, 5, false);
      auto k = random_tensor<double>({64, dk}, gen, -5, 5, false);
      Tape<double> tape(false);
      auto s = attention_logits(tape, lp_normalize_rows(tape, q, p, 1e-6), lp_normalize_rows(tape, k, p, 1e-6), &raw,
                                AttentionVariant::lp);
      for (double v : s.data()) EXPECT_LE(std::abs(v), bound) << "p=" << p << " dk=" << dk;
    }
  }
}

TEST(AttentionLogits, ScalingAQueryLeavesItsDistributionUnchanged) {
  std::mt19937_64 gen(25);
  auto raw = Tensor<double>::scalar(inverse_softplus(4.0));
  for (double p : kSweep) {
    auto q = random_tensor<double>({3, 8}, gen, -1, 1, false);
    auto k = random_tensor<double>({5, 8}, gen, -1, 1, false);
    Tape<double> tape(false);
    auto kn = lp_normalize_rows(tape, k, p, 1e-6);
    auto base = softmax_rows(tape, attention_logits(tape, lp_normalize_rows(tape, q, p, 1e-6), kn, &raw, AttentionVariant::lp));
    auto scaled =
        softmax_rows(tape, attention_logits(tape, lp_normalize_rows(tape, scale(tape, q, 12.0), p, 1e-6), kn, &raw,
                                            AttentionVariant::lp));
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base[i], scaled[i], 1e-6);
  }
}

AttentionConfig small_config(AttentionVariant v, double p, std::size_t heads = 2, std::size_t head_dim = 4) {
  AttentionConfig c;
  c.variant = v;
  c.p = p;
  c.heads = heads;
  c.head_dim = head_dim;
  return c;
}

TEST(CausalAttention, SingleTokenOutputIsProjectedValue) {
  std::mt19937_64 gen(26);
  for (auto v : {AttentionVariant::standard, AttentionVariant::qknorm, AttentionVariant::lp}) {
    Rng rng(1);
    CausalSelfAttention<double> layer("attn", small_config(v, 3.0), 8, rng, 0.3, 0.3);
    auto ps = layer.parameters();
    for (auto& p : ps)
      for (auto& x : p.tensor.data()) x = std::uniform_real_distribution<double>(-0.5, 0.5)(gen);
    auto x = random_tensor<double>({1, 1, 8}, gen, -1, 1, false);
    Tape<double> tape(false);
    auto out = layer.forward(tape, x, false, rng);
    // v = x W_v + b_v ; out = v W_o + b_o
    const auto& wv = ps[4].tensor;
    const auto& bv = ps[5].tensor;
    const auto& wo = ps[6].tensor;
    const auto& bo = ps[7].tensor;
    std::vector<double> val(8);
    for (std::size_t j = 0; j < 8; ++j) {
      val[j] = bv[j];
      for (std::size_t i = 0; i < 8; ++i) val[j] += x[i] * wv[i * 8 + j];
    }
    for (std::size_t j = 0; j < 8; ++j) {
      double expect = bo[j];
      for (std::size_t i = 0; i < 8; ++i) expect += val[i] * wo[i * 8 + j];
      EXPECT_NEAR(out[j], expect, 1e-12) << to_string(v);
    }
  }
}

TEST(CausalAttention, FutureTokensDoNotAffectThePast) {
  std::mt19937_64 gen(27);
  for (auto v : {AttentionVariant::standard, AttentionVariant::qknorm, AttentionVariant::lp}) {
    Rng rng(2);
    CausalSelfAttention<float> layer("attn", small_config(v, 2.5), 16, rng, 0.2, 0.2);
    auto x = random_tensor<float>({2, 6, 8}, gen, -1, 1, false);
    for (std::size_t t = 0; t + 1 < 6; ++t) {
      auto y = x.clone();
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t j = 0; j < 8; ++j) y[(b * 6 + t + 1) * 8 + j] += 3.0f;
      Tape<float> tape(false);
      auto a = layer.forward(tape, x, false, rng);
      auto c = layer.forward(tape, y, false, rng);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t s = 0; s <= t; ++s)
          for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(a[(b * 6 + s) * 8 + j], c[(b * 6 + s) * 8 + j]);
    }
  }
}

TEST(CausalAttention, LpAtTwoMatchesQkNorm) {
  std::mt19937_64 gen(28);
  Rng r1(3), r2(3);
  CausalSelfAttention<float> lp("attn", small_config(AttentionVariant::lp, 2.0), 16, r1, 0.2, 0.2);
  CausalSelfAttention<float> qk("attn", small_config(AttentionVariant::qknorm, 7.0), 16, r2, 0.2, 0.2);
  auto x = random_tensor<float>({3, 7, 8}, gen, -1, 1, false);
  Tape<float> tape(false);
  auto a = lp.forward(tape, x, false, r1);
  auto b = qk.forward(tape, x, false, r2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(CausalAttention, RejectsSequencesLongerThanContext) {
  Rng rng(4);
  CausalSelfAttention<float> layer("attn", small_config(AttentionVariant::lp, 2.0), 4, rng, 0.02, 0.02);
  Tape<float> tape(false);
  EXPECT_THROW(layer.forward(tape, Tensor<float>({1, 5, 8}), false, rng), ContractError);
}

TEST(CausalAttention, AlphaIsPositiveAndInitialisedToSqrtHeadDim) {
  Rng rng(5);
  CausalSelfAttention<float> layer("attn", small_config(AttentionVariant::lp, 3.0, 2, 16), 4, rng, 0.02, 0.02);
  EXPECT_NEAR(layer.alpha(), 4.0, 1e-5);
  auto ps = layer.parameters();
  ps.back().tensor[0] = -40.0f;
  EXPECT_GT(layer.alpha(), 0.0);
}

// Draws layer weights so that every query/key component stays at least
// `guard` away from zero for the given input (the |x|^p kink for p < 2).
bool projections_clear_zero(const CausalSelfAttention<double>& layer, const Tensor<double>& x, double guard) {
  auto ps = layer.parameters();
  const std::size_t d = x.dim(2);
  for (std::size_t which : {0u, 2u}) {
    Tape<double> tape(false);
    auto proj = linear(tape, x, ps[which].tensor, ps[which + 1].tensor);
    for (std::size_t i = 0; i < proj.size(); ++i)
      if (std::abs(proj[i]) < guard) return false;
    (void)d;
  }
  return true;
}

TEST(CausalAttention, FullBlockGradientForEverySweepP) {
  std::mt19937_64 gen(29);
  for (double p : kSweep) {
    Rng rng(6);
    CausalSelfAttention<double> layer("attn", small_config(AttentionVariant::lp, p), 4, rng, 0.3, 0.3);
    auto ps = layer.parameters();
    Tensor<double> x;
    int attempts = 0;
    do {
      x = random_tensor<double>({2, 4, 8}, gen);
      for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t which : {0u, 2u, 4u, 6u})
          for (auto& w : ps[which].tensor.data()) w = std::uniform_real_distribution<double>(-0.15, 0.15)(gen);
        for (std::size_t which : {1u, 3u}) {
          auto b = random_away_from_zero<double>({8}, gen, 0.4, 1.0);
          std::copy(b.data().begin(), b.data().end(), ps[which].tensor.data().begin());
        }
      }
      ++attempts;
    } while (!projections_clear_zero(layer, x, 0.05) && attempts < 200);
    ASSERT_LT(attempts, 200);
    auto w = random_tensor<double>({2, 4, 8}, gen, -1, 1, false);
    std::vector<Tensor<double>> inputs{x};
    for (auto& prm : ps) inputs.push_back(prm.tensor);
    auto r = grad_check(inputs, [&](Tape<double>& t) { return sum_all(t, mul(t, layer.forward(t, x, false, rng), w)); });
    EXPECT_LT(r.max_rel_err, 1e-3) << "p=" << p;
  }
}

}  // namespace
}  // namespace lpattn
