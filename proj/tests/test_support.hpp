// SPDX-License-Identifier: Apache-2.0
//
// Tiny models and corpora shared by the unit tests and the acceptance run.
#ifndef MMEMBED_TESTS_TEST_SUPPORT_HPP_
#define MMEMBED_TESTS_TEST_SUPPORT_HPP_

#include <string>
#include <vector>

#include "mmembed/features.hpp"
#include "mmembed/gradcheck.hpp"
#include "mmembed/model.hpp"
#include "mmembed/objective.hpp"
#include "mmembed/rng.hpp"
#include "mmembed/sampled_softmax.hpp"
#include "mmembed/text.hpp"
#include "mmembed/trainer.hpp"

namespace mmembed::testing {

struct TinyProblem {
  Vocabulary vocab;
  FeatureTable features;
  std::vector<TokenSequence> sentences;
  std::vector<std::string> images;
  ModelParams<double> params;
  std::uint64_t seed = 0;
};

struct TinyShape {
  std::size_t vocab = 50;
  std::size_t embed = 8;
  std::size_t state = 16;
  std::size_t feature = 12;
  std::size_t sentences = 2;
  std::size_t min_len = 4;
  std::size_t max_len = 6;
};

/// Random vocabulary, features, sentences and parameters. Biases are
/// randomized as well so every parameter has a generic gradient.
inline TinyProblem make_tiny_problem(Variant variant, std::uint64_t seed, const TinyShape& shape = {}) {
  TinyProblem pb;
  pb.seed = seed;
  Rng rng(derive_seed(seed, "tiny"));
  std::vector<std::pair<std::string, std::uint64_t>> words;
  for (std::size_t i = 0; i + Vocabulary::kReserved < shape.vocab; ++i) {
    words.emplace_back("w" + std::to_string(i), 1 + rng.below(100));
  }
  pb.vocab = Vocabulary::from_counts(words, shape.sentences);
  pb.features = FeatureTable(shape.feature);
  for (std::size_t s = 0; s < shape.sentences; ++s) {
    const std::string id = "img" + std::to_string(s);
    VisualFeature f;
    for (std::size_t k = 0; k < shape.feature; ++k) f.bits.push_back(rng.bernoulli(0.5));
    pb.features.insert(id, f);
    pb.images.push_back(id);
    Tokens toks;
    const std::size_t len = shape.min_len + rng.below(shape.max_len - shape.min_len + 1);
    for (std::size_t k = 0; k < len; ++k) {
      toks.push_back(pb.vocab.word(static_cast<WordId>(Vocabulary::kReserved +
                                                       rng.below(shape.vocab - Vocabulary::kReserved))));
    }
    pb.sentences.push_back(encode(toks, pb.vocab));
  }
  Rng init(derive_seed(seed, "tiny-init"));
  pb.params = init_params<double>(variant, ModelDims{shape.vocab, shape.embed, shape.state, shape.feature}, init);
  pb.params.for_each_tensor([&](const TensorRef<double>& t) {
    if (t.cols != 1) return;
    for (auto& v : t.values) v += rng.uniform(-0.5, 0.5);
  });
  return pb;
}

/// Sum of sentence losses with fixed negative streams, so repeated calls see
/// the same candidates.
inline double tiny_loss(const TinyProblem& pb, const ModelParams<double>& params,
                        const NegativeSampler& sampler, const ObjectiveOptions& opts,
                        ModelParams<double>* grads) {
  double total = 0.0;
  for (std::size_t i = 0; i < pb.sentences.size(); ++i) {
    Rng rng(derive_seed(pb.seed, "tiny-negatives", i));
    const VisualFeature* f = uses_visual(params.variant()) ? pb.features.find(pb.images[i]) : nullptr;
    total += sentence_forward<double>(params, pb.sentences[i], f, sampler, opts, rng, grads).loss;
  }
  return total;
}

/// Central-difference check of every parameter of the tiny problem.
inline GradCheckReport check_tiny_gradients(TinyProblem& pb, const ObjectiveOptions& opts,
                                            double h = 1e-4, double tol = 1e-4) {
  const NegativeSampler sampler(pb.vocab);
  auto grads = pb.params.zeros_like();
  tiny_loss(pb, pb.params, sampler, opts, &grads);

  std::vector<ParamSlot<double>> slots;
  std::vector<std::span<double>> analytic;
  grads.for_each_tensor([&](const TensorRef<double>& t) { analytic.push_back(t.values); });
  std::size_t k = 0;
  pb.params.for_each_tensor([&](const TensorRef<double>& t) {
    slots.push_back({std::string(t.name), t.values, analytic[k++]});
  });
  auto loss = [&] { return tiny_loss(pb, pb.params, sampler, opts, nullptr); };
  return check_gradients<double>(loss, std::span<const ParamSlot<double>>(slots), h, tol);
}

}  // namespace mmembed::testing

#endif  // MMEMBED_TESTS_TEST_SUPPORT_HPP_
