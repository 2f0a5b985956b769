// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mmembed/errors.hpp"
#include "mmembed/model.hpp"
#include "mmembed/rng.hpp"
#include "mmembed/trainer.hpp"
#include "test_support.hpp"

using namespace mmembed;

namespace {

ModelParams<double> random_params(Variant v, ModelDims d, std::uint64_t seed) {
  ModelParams<double> p(v, d);
  Rng rng(seed);
  p.for_each_tensor([&](const TensorRef<double>& t) {
    for (auto& x : t.values) x = rng.uniform(-0.5, 0.5);
  });
  return p;
}

double scalar_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Variant, ParseAndPrint) {
  for (Variant v : {Variant::text, Variant::a, Variant::a_noshare, Variant::b, Variant::c}) {
    EXPECT_EQ(parse_variant(to_string(v)), v);
  }
  EXPECT_EQ(parse_variant("a_noshare"), Variant::a_noshare);
  EXPECT_THROW(parse_variant("d"), ConfigError);
}

TEST(Params, ShapesPerVariant) {
  const ModelDims d{50, 8, 16, 12};
  const ModelParams<double> a(Variant::a, d), c(Variant::c, d), n(Variant::a_noshare, d),
      t(Variant::text, d);
  EXPECT_EQ(a.visual.rows(), 16u);
  EXPECT_EQ(c.visual.rows(), 8u);
  EXPECT_EQ(a.gate_reset.cols(), 24u);
  EXPECT_EQ(a.decode.rows(), 8u);
  EXPECT_EQ(a.decode.cols(), 16u);
  EXPECT_TRUE(t.visual.empty());
  EXPECT_EQ(&a.softmax_weights(), &a.embedding);
  EXPECT_NE(&n.softmax_weights(), &n.embedding);
  EXPECT_EQ(n.parameter_count(), a.parameter_count() + 50u * 8u);
}

TEST(Params, SharedStorageSurvivesCopy) {
  auto p = random_params(Variant::a, {10, 4, 6, 8}, 1);
  auto q = p;
  q.softmax_weights()(3, 2) = 42.0;
  EXPECT_EQ(q.embedding(3, 2), 42.0);
  EXPECT_NE(p.embedding(3, 2), 42.0);
}

TEST(Gru, ZeroWeightFixedPoint) {
  ModelParams<double> p(Variant::text, {10, 3, 4, 0});
  std::fill(p.bias_reset.begin(), p.bias_reset.end(), 1.0);
  std::fill(p.bias_update.begin(), p.bias_update.end(), 1.0);
  const std::vector<double> e{0.3, -2.0, 5.0}, h(4, 0.0);
  const auto c = gru_step<double>(p, e, h);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(c.candidate[i], 0.0);
    EXPECT_EQ(c.h[i], 0.0);
  }
}

TEST(Gru, SaturatedUpdateCarriesState) {
  auto p = random_params(Variant::text, {10, 3, 4, 0}, 2);
  std::fill(p.bias_update.begin(), p.bias_update.end(), 50.0);
  const std::vector<double> e{0.3, -0.2, 0.5}, h{0.1, -0.4, 0.7, 0.2};
  const auto c = gru_step<double>(p, e, h);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(c.h[i], h[i], 1e-12);
}

TEST(Gru, MatchesScalarTranscription) {
  const std::size_t de = 3, dh = 4;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = random_params(Variant::text, {10, de, dh, 0}, seed);
    Rng rng(seed + 100);
    std::vector<double> e(de), h(dh);
    for (auto& x : e) x = rng.uniform(-1, 1);
    for (auto& x : h) x = rng.uniform(-1, 1);
    const auto c = gru_step<double>(p, e, h);

    double x[7], r[4], u[4], xc[7];
    for (std::size_t i = 0; i < de; ++i) x[i] = xc[i] = e[i];
    for (std::size_t i = 0; i < dh; ++i) x[de + i] = h[i];
    for (std::size_t i = 0; i < dh; ++i) {
      double ar = p.bias_reset[i], au = p.bias_update[i];
      for (std::size_t j = 0; j < de + dh; ++j) {
        ar += p.gate_reset(i, j) * x[j];
        au += p.gate_update(i, j) * x[j];
      }
      r[i] = scalar_sigmoid(ar);
      u[i] = scalar_sigmoid(au);
    }
    for (std::size_t i = 0; i < dh; ++i) xc[de + i] = r[i] * h[i];
    for (std::size_t i = 0; i < dh; ++i) {
      double ac = p.bias_candidate[i];
      for (std::size_t j = 0; j < de + dh; ++j) ac += p.gate_candidate(i, j) * xc[j];
      const double cand = std::tanh(ac);
      const double hn = u[i] * h[i] + (1.0 - u[i]) * cand;
      EXPECT_NEAR(c.reset[i], r[i], 1e-12);
      EXPECT_NEAR(c.update[i], u[i], 1e-12);
      EXPECT_NEAR(c.candidate[i], cand, 1e-12);
      EXPECT_NEAR(c.h[i], hn, 1e-12);
    }
  }
}

TEST(Gru, ShapeMismatchThrows) {
  const auto p = random_params(Variant::text, {10, 3, 4, 0}, 1);
  const std::vector<double> e(2), h(4);
  EXPECT_THROW(gru_step<double>(p, e, h), ShapeError);
}

TEST(Gru, BackwardMatchesFiniteDifferences) {
  auto p = random_params(Variant::text, {10, 3, 4, 0}, 7);
  Rng rng(8);
  std::vector<double> e(3), h(4), g(4);
  for (auto& x : e) x = rng.uniform(-1, 1);
  for (auto& x : h) x = rng.uniform(-1, 1);
  for (auto& x : g) x = rng.uniform(-1, 1);
  auto loss = [&] {
    const auto c = gru_step<double>(p, e, h);
    return dot<double>(g, c.h);
  };
  auto grads = p.zeros_like();
  std::vector<double> de(3, 0.0), dh(4, 0.0);
  gru_step_backward<double>(p, gru_step<double>(p, e, h), g, grads, de, dh);
  std::vector<ParamSlot<double>> slots{
      {"W_r", p.gate_reset.values(), grads.gate_reset.values()},
      {"W_u", p.gate_update.values(), grads.gate_update.values()},
      {"W_c", p.gate_candidate.values(), grads.gate_candidate.values()},
      {"b_r", p.bias_reset, grads.bias_reset},
      {"b_u", p.bias_update, grads.bias_update},
      {"b_c", p.bias_candidate, grads.bias_candidate},
      {"e", e, de},
      {"h", h, dh}};
  const auto rep = check_gradients<double>(loss, std::span<const ParamSlot<double>>(slots), 1e-4, 1e-4);
  EXPECT_TRUE(rep.passed()) << rep.worst_param << "[" << rep.worst_index << "] " << rep.max_rel_error;
}

TEST(Visual, ZeroWeightsGiveZeroState) {
  auto p = random_params(Variant::a, {10, 3, 4, 8}, 3);
  p.visual.fill(0.0);
  std::fill(p.visual_bias.begin(), p.visual_bias.end(), 0.0);
  const VisualFeature f{{1, 0, 1, 1, 0, 1, 0, 1}};
  for (double v : visual_init(p, &f)) EXPECT_EQ(v, 0.0);
}

TEST(Visual, ZeroFeatureGivesReluBias) {
  const auto p = random_params(Variant::a, {10, 3, 4, 8}, 4);
  const VisualFeature f{std::vector<std::uint8_t>(8, 0)};
  const auto h0 = visual_init(p, &f);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(h0[i], std::max(0.0, p.visual_bias[i]));
}

TEST(Visual, NonNegativeAndVariantRules) {
  const auto p = random_params(Variant::b, {10, 3, 4, 8}, 5);
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    VisualFeature f;
    for (int k = 0; k < 8; ++k) f.bits.push_back(rng.bernoulli(0.5));
    for (double v : visual_init(p, &f)) EXPECT_GE(v, 0.0);
  }
  EXPECT_THROW(visual_init(p, nullptr), DataError);
  const auto t = random_params(Variant::text, {10, 3, 4, 8}, 5);
  for (double v : visual_init(t, nullptr)) EXPECT_EQ(v, 0.0);
  const auto c = random_params(Variant::c, {10, 3, 4, 8}, 5);
  const VisualFeature f{std::vector<std::uint8_t>(8, 1)};
  EXPECT_THROW(visual_init(c, &f), ContractViolation);
  EXPECT_EQ(visual_projection(c, f).size(), 3u);
}

TEST(Init, GateBiasesAreOne) {
  Rng rng(1);
  const auto p = init_params<double>(Variant::a, {100, 8, 16, 32}, rng);
  for (double v : p.bias_reset) EXPECT_EQ(v, 1.0);
  for (double v : p.bias_update) EXPECT_EQ(v, 1.0);
  for (double v : p.bias_candidate) EXPECT_EQ(v, 0.0);
  for (double v : p.softmax_bias) EXPECT_EQ(v, 0.0);
  for (double v : p.visual_bias) EXPECT_EQ(v, 0.0);
}

TEST(Init, DeterministicAndBounded) {
  Rng a(9), b(9);
  const auto p = init_params<double>(Variant::a_noshare, {60, 8, 16, 32}, a);
  const auto q = init_params<double>(Variant::a_noshare, {60, 8, 16, 32}, b);
  p.for_each_tensor([&](const TensorRef<const double>& t) {
    if (t.cols == 1) return;
    const double s = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
    for (double v : t.values) {
      EXPECT_LE(std::abs(v), s);
    }
  });
  EXPECT_EQ(p.embedding, q.embedding);
  EXPECT_EQ(p.softmax_weights(), q.softmax_weights());
  EXPECT_EQ(p.visual, q.visual);
}

TEST(Init, WeightMeanNearZero) {
  Rng rng(12);
  // 512 x 256 = 131072 visual weights, each uniform in [-s, s].
  const auto p = init_params<double>(Variant::a, {10, 8, 512, 256}, rng);
  const auto v = p.visual.values();
  double sum = 0.0;
  for (double x : v) sum += x;
  const double n = static_cast<double>(v.size());
  const double s = std::sqrt(6.0 / (512.0 + 256.0));
  const double sigma_of_mean = s / std::sqrt(3.0) / std::sqrt(n);
  EXPECT_LT(std::abs(sum / n), 3.0 * sigma_of_mean);
}
