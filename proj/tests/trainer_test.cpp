// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "mmembed/checkpoint.hpp"
#include "mmembed/errors.hpp"
#include "mmembed/synthetic.hpp"
#include "mmembed/trainer.hpp"

using namespace mmembed;

namespace {

struct SmallData {
  SynthDataset ds;
  std::vector<CorpusRecord> records;
  Vocabulary vocab;
};

SmallData small_data() {
  SynthConfig cfg;
  cfg.num_concepts = 3;
  cfg.images_per_concept = 8;
  cfg.sentences_per_image = 3;
  cfg.words_per_concept = 4;
  cfg.noise_words = 6;
  cfg.feature_dim = 12;
  cfg.num_triplets = 10;
  SmallData d{generate_synthetic(cfg), {}, {}};
  for (const auto& s : d.ds.corpus) d.records.push_back({s.image_id, normalize(s.text)});
  std::vector<Tokens> toks;
  for (const auto& r : d.records) toks.push_back(r.tokens);
  d.vocab = Vocabulary::build(toks, 1);
  return d;
}

TrainConfig small_config(Variant v) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.embed_dim = 6;
  cfg.state_dim = 8;
  cfg.negatives = 5;
  cfg.batch_size = 8;
  cfg.max_epochs = 3;
  cfg.learning_rate = 0.5;
  cfg.validation_size = 8;
  cfg.eval_interval = 3;
  cfg.patience = 100;
  return cfg;
}

ModelParams<double> single_scalar_model() {
  return ModelParams<double>(Variant::text, {1, 1, 1, 0});
}

double param_norm_diff(const ModelParams<double>& a, const ModelParams<double>& b) {
  std::vector<std::span<const double>> va;
  a.for_each_tensor([&](const TensorRef<const double>& t) { va.push_back(t.values); });
  double sq = 0.0;
  std::size_t k = 0;
  b.for_each_tensor([&](const TensorRef<const double>& t) {
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const double d = t.values[i] - va[k][i];
      sq += d * d;
    }
    ++k;
  });
  return std::sqrt(sq);
}

std::string checkpoint_bytes(const ModelParams<double>& p, const Vocabulary& v) {
  std::ostringstream out;
  write_checkpoint(out, Checkpoint<double>{"", v, p});
  return out.str();
}

}  // namespace

TEST(Sgd, ZeroGradientLeavesParams) {
  Rng rng(1);
  auto p = init_params<double>(Variant::a, {10, 3, 4, 5}, rng);
  const auto before = p;
  sgd_step(p, p.zeros_like(), 4, 1.0, 10.0);
  EXPECT_EQ(param_norm_diff(p, before), 0.0);
}

TEST(Sgd, ScalarUpdate) {
  auto p = single_scalar_model();
  p.decode(0, 0) = 1.0;
  auto g = p.zeros_like();
  g.decode(0, 0) = 4.0;
  const auto st = sgd_step(p, g, 1, 1.0, 10.0);
  EXPECT_EQ(p.decode(0, 0), -3.0);
  EXPECT_FALSE(st.clipped);
  EXPECT_EQ(st.grad_norm, 4.0);
}

TEST(Sgd, MeanOverSentences) {
  auto p = single_scalar_model();
  auto g = p.zeros_like();
  g.decode(0, 0) = 8.0;
  sgd_step(p, g, 4, 0.5, 10.0);
  EXPECT_EQ(p.decode(0, 0), -1.0);
}

TEST(Sgd, ClipsGlobalNorm) {
  Rng rng(2);
  auto p = init_params<double>(Variant::a_noshare, {10, 3, 4, 5}, rng);
  const auto before = p;
  auto g = p.zeros_like();
  g.embedding(0, 0) = 12.0;
  g.softmax_weights()(1, 1) = 16.0;  // norm 20
  const auto st = sgd_step(p, g, 1, 0.3, 10.0);
  EXPECT_TRUE(st.clipped);
  EXPECT_NEAR(st.grad_norm, 20.0, 1e-12);
  EXPECT_NEAR(param_norm_diff(p, before), 10.0 * 0.3, 1e-12);
}

TEST(Sgd, NonFiniteGradientAborts) {
  auto p = single_scalar_model();
  p.decode(0, 0) = 2.0;
  auto g = p.zeros_like();
  g.decode(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sgd_step(p, g, 1, 1.0, 10.0), NumericError);
  EXPECT_EQ(p.decode(0, 0), 2.0);
}

TEST(EarlyStop, PatienceTwoStopsAfterTwoWorseEvaluations) {
  EarlyStopping s(2);
  EXPECT_FALSE(s.observe(1.0));  // baseline
  EXPECT_FALSE(s.observe(1.1));
  EXPECT_TRUE(s.observe(1.2));
  EXPECT_EQ(s.best(), 1.0);
}

TEST(EarlyStop, ImprovementResetsCount) {
  EarlyStopping s(2);
  s.observe(1.0);
  EXPECT_FALSE(s.observe(1.5));
  EXPECT_FALSE(s.observe(0.9));
  EXPECT_TRUE(s.last_improved());
  EXPECT_FALSE(s.observe(0.95));
  EXPECT_TRUE(s.observe(0.95));
}

TEST(Config, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.validation_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Examples, MissingFeatureNamesImage) {
  const std::vector<CorpusRecord> recs{{"imgX", {"a", "b"}}};
  const auto v = Vocabulary::build(std::vector<Tokens>{{"a", "b"}}, 1);
  FeatureTable empty(4);
  try {
    make_examples(recs, v, &empty, Variant::a);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("imgX"), std::string::npos);
  }
  EXPECT_NO_THROW(make_examples(recs, v, nullptr, Variant::text));
}

TEST(Train, SameSeedBitwiseIdentical) {
  const auto d = small_data();
  for (Variant v : {Variant::text, Variant::a, Variant::c}) {
    const auto ex = make_examples(d.records, d.vocab, &d.ds.features, v);
    const auto cfg = small_config(v);
    const auto r1 = train<double>(ex, d.vocab, d.ds.features.dim(), cfg);
    const auto r2 = train<double>(ex, d.vocab, d.ds.features.dim(), cfg);
    EXPECT_EQ(checkpoint_bytes(r1.params, d.vocab), checkpoint_bytes(r2.params, d.vocab));
    EXPECT_EQ(r1.step_token_loss, r2.step_token_loss);
  }
}

TEST(Train, MultiThreadedIsDeterministicPerThreadCount) {
  const auto d = small_data();
  const auto ex = make_examples(d.records, d.vocab, &d.ds.features, Variant::a);
  auto cfg = small_config(Variant::a);
  cfg.threads = 3;
  const auto r1 = train<double>(ex, d.vocab, d.ds.features.dim(), cfg);
  const auto r2 = train<double>(ex, d.vocab, d.ds.features.dim(), cfg);
  EXPECT_EQ(checkpoint_bytes(r1.params, d.vocab), checkpoint_bytes(r2.params, d.vocab));
  cfg.threads = 1;
  const auto r3 = train<double>(ex, d.vocab, d.ds.features.dim(), cfg);
  EXPECT_LT(param_norm_diff(r1.params, r3.params), 1e-9);
}

TEST(Train, ReturnsBestValidationCheckpoint) {
  const auto d = small_data();
  const auto ex = make_examples(d.records, d.vocab, &d.ds.features, Variant::a);
  auto cfg = small_config(Variant::a);
  cfg.learning_rate = 2.0;
  cfg.max_epochs = 5;
  const auto r = train<double>(ex, d.vocab, d.ds.features.dim(), cfg);
  ASSERT_GE(r.log.size(), 2u);
  EXPECT_TRUE(std::isnan(r.log[0].train_loss));
  for (const auto& row : r.log) EXPECT_LE(r.best_val_loss, row.val_loss);
  Trainer<double> t(cfg, d.vocab, d.ds.features.dim());
  const auto val = std::span<const TrainingExample>(ex).last(cfg.validation_size);
  EXPECT_DOUBLE_EQ(t.evaluate(r.params, val), r.best_val_loss);
}

TEST(Train, EarlyStoppingHalts) {
  const auto d = small_data();
  const auto ex = make_examples(d.records, d.vocab, &d.ds.features, Variant::text);
  auto cfg = small_config(Variant::text);
  cfg.learning_rate = 50.0;  // diverges or stalls quickly
  cfg.clip_norm = 100.0;
  cfg.max_epochs = 50;
  cfg.eval_interval = 1;
  cfg.patience = 2;
  const auto r = train<double>(ex, d.vocab, d.ds.features.dim(), cfg);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_LT(r.steps, 50u * 3u);
}

TEST(Train, LossDecreasesAndStaysFinite) {
  const auto d = small_data();
  const auto ex = make_examples(d.records, d.vocab, &d.ds.features, Variant::a);
  auto cfg = small_config(Variant::a);
  cfg.max_epochs = 20;
  cfg.eval_interval = 10;
  const auto r = train<double>(ex, d.vocab, d.ds.features.dim(), cfg);
  EXPECT_LT(r.best_val_loss, r.log.front().val_loss);
  r.params.for_each_tensor([](const TensorRef<const double>& t) { EXPECT_TRUE(all_finite<double>(t.values)); });
}

TEST(Train, RejectsTooManyNegatives) {
  const auto d = small_data();
  auto cfg = small_config(Variant::text);
  cfg.negatives = d.vocab.size();
  EXPECT_THROW((Trainer<double>(cfg, d.vocab, 0)), ConfigError);
}

TEST(Train, LogCsv) {
  std::vector<LogRow> rows{{0, 0, std::numeric_limits<double>::quiet_NaN(), 2.5}, {10, 1, 1.5, 2.0}};
  std::ostringstream out;
  write_log_csv(out, rows);
  EXPECT_EQ(out.str(), "step,epoch,train_loss,val_loss\n0,0,nan,2.5\n10,1,1.5,2\n");
}
