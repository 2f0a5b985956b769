// SPDX-License-Identifier: Apache-2.0
//
// Loss and gradients of one sentence for every model variant.
//
// Inputs are seq[0..L-1] and targets seq[1..L]. Each position decodes
// d_t = W_d h_t and pays a sampled-softmax loss (positions whose target is
// <unk> are skipped); the language-model loss is the mean over scored
// positions. On top of that:
//   B adds  lambda * || h_last - ReLU(W_I f + b_I) ||
//   C adds  lambda * (1 / L_c) * sum_t || e_t - ReLU(W_I f + b_I) ||
// where the C sum runs over the L_c content tokens of the sentence.
#ifndef MMEMBED_OBJECTIVE_HPP_
#define MMEMBED_OBJECTIVE_HPP_

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mmembed/errors.hpp"
#include "mmembed/features.hpp"
#include "mmembed/model.hpp"
#include "mmembed/rng.hpp"
#include "mmembed/sampled_softmax.hpp"
#include "mmembed/tensor.hpp"
#include "mmembed/text.hpp"

namespace mmembed {

struct ObjectiveOptions {
  double lambda = 1.0;
  std::size_t negatives = 1024;
};

/// Guard for the norm gradient at the origin.
inline constexpr double kNormEpsilon = 1e-8;

template <class Real>
struct SentenceResult {
  Real loss{0};
  Real lm_loss{0};
  Real aux_loss{0};
  /// Positions that contributed a softmax term.
  std::size_t scored = 0;
  bool skipped = false;
  std::string diagnostic;
};

template <class Real>
SentenceResult<Real> sentence_forward(const ModelParams<Real>& p, const TokenSequence& seq,
                                      const VisualFeature* feature,
                                      const NegativeSampler& sampler,
                                      const ObjectiveOptions& opts, Rng& rng,
                                      ModelParams<Real>* grads = nullptr) {
  SentenceResult<Real> result;
  const Variant variant = p.variant();
  if (uses_visual(variant) && feature == nullptr) {
    throw DataError("variant " + std::string(to_string(variant)) + " needs a visual feature");
  }
  if (seq.ids.size() < 2 || seq.ids.front() != Vocabulary::kBos ||
      seq.ids.back() != Vocabulary::kEos) {
    throw ContractViolation("token sequence must be <bos> ... <eos>");
  }
  if (seq.content_count() == 0) {
    result.skipped = true;
    result.diagnostic = "sentence has no content tokens";
    return result;
  }
  if (sampler.size() != p.dims().vocab) {
    throw ShapeError("sampler covers " + std::to_string(sampler.size()) + " words, model has " +
                     std::to_string(p.dims().vocab));
  }

  const std::size_t de = p.dims().embed;
  const std::size_t ds = p.dims().state;
  const std::size_t steps = seq.ids.size() - 1;
  const Real lambda = static_cast<Real>(opts.lambda);

  std::vector<Real> projected;
  if (uses_visual(variant)) projected = visual_projection(p, *feature);

  std::vector<Real> h0 = visual_initial_state(variant) ? projected : std::vector<Real>(ds, Real{0});

  // Forward through the GRU.
  std::vector<GruCache<Real>> trace;
  trace.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const auto& h_prev = t == 0 ? h0 : trace.back().h;
    trace.push_back(gru_step<Real>(p, p.embedding.row(seq.ids[t]), h_prev));
  }

  // Softmax terms.
  struct Scored {
    std::size_t step;
    std::vector<Real> decoded;
    SoftmaxResult<Real> softmax;
  };
  std::vector<Scored> scored;
  const auto& U = p.softmax_weights();
  for (std::size_t t = 0; t < steps; ++t) {
    const WordId target = seq.ids[t + 1];
    if (target == Vocabulary::kUnk) continue;
    std::vector<Real> decoded = affine_forward<Real>(p.decode, trace[t].h, {});
    const auto negatives = sampler.sample(opts.negatives, target, rng);
    auto sm = sampled_softmax_loss<Real>(U, p.softmax_bias, decoded, target, negatives,
                                         sampler.probabilities());
    result.lm_loss += sm.loss;
    scored.push_back({t, std::move(decoded), std::move(sm)});
  }
  result.scored = scored.size();
  if (!scored.empty()) result.lm_loss /= static_cast<Real>(scored.size());

  // Auxiliary visual regression terms.
  std::vector<Real> final_diff;
  Real final_norm{0};
  std::vector<std::size_t> content_steps;
  std::vector<std::vector<Real>> emb_diffs;
  std::vector<Real> emb_norms;
  if (variant == Variant::b) {
    final_diff = trace.back().h;
    axpy<Real>(Real{-1}, projected, final_diff);
    final_norm = l2_norm<Real>(final_diff);
    result.aux_loss = lambda * final_norm;
  } else if (variant == Variant::c) {
    for (std::size_t t = 0; t < steps; ++t) {
      if (Vocabulary::is_reserved(seq.ids[t])) continue;
      content_steps.push_back(t);
      std::vector<Real> diff(p.embedding.row(seq.ids[t]).begin(), p.embedding.row(seq.ids[t]).end());
      axpy<Real>(Real{-1}, projected, diff);
      emb_norms.push_back(l2_norm<Real>(diff));
      emb_diffs.push_back(std::move(diff));
    }
    Real sum{0};
    for (Real n : emb_norms) sum += n;
    result.aux_loss = lambda * sum / static_cast<Real>(content_steps.size());
  }
  result.loss = result.lm_loss + result.aux_loss;
  if (!std::isfinite(static_cast<double>(result.loss))) {
    throw NumericError("non-finite sentence loss");
  }
  if (grads == nullptr) return result;

  // Backward.
  std::vector<std::vector<Real>> dh(steps, std::vector<Real>(ds, Real{0}));
  auto& dU = grads->softmax_weights();
  const Real inv_scored = scored.empty() ? Real{0} : Real{1} / static_cast<Real>(scored.size());
  for (const auto& s : scored) {
    accumulate_softmax_grads<Real>(s.softmax, s.decoded, dU, grads->softmax_bias, inv_scored);
    std::vector<Real> d_decoded(s.softmax.grad_decoded);
    for (auto& v : d_decoded) v *= inv_scored;
    affine_backward<Real>(p.decode, trace[s.step].h, d_decoded, grads->decode, {}, dh[s.step]);
  }

  std::vector<Real> d_projected;
  if (uses_visual(variant)) d_projected.assign(projected.size(), Real{0});

  if (variant == Variant::b) {
    const Real scale = lambda / std::max(final_norm, static_cast<Real>(kNormEpsilon));
    axpy<Real>(scale, final_diff, dh.back());
    axpy<Real>(-scale, final_diff, d_projected);
  } else if (variant == Variant::c) {
    const Real per = lambda / static_cast<Real>(content_steps.size());
    for (std::size_t k = 0; k < content_steps.size(); ++k) {
      const Real scale = per / std::max(emb_norms[k], static_cast<Real>(kNormEpsilon));
      axpy<Real>(scale, emb_diffs[k], grads->embedding.row(seq.ids[content_steps[k]]));
      axpy<Real>(-scale, emb_diffs[k], d_projected);
    }
  }

  std::vector<Real> d_embed(de);
  std::vector<Real> d_prev(ds);
  for (std::size_t t = steps; t-- > 0;) {
    std::fill(d_embed.begin(), d_embed.end(), Real{0});
    std::fill(d_prev.begin(), d_prev.end(), Real{0});
    gru_step_backward<Real>(p, trace[t], dh[t], *grads, d_embed, d_prev);
    axpy<Real>(Real{1}, d_embed, grads->embedding.row(seq.ids[t]));
    if (t > 0) {
      axpy<Real>(Real{1}, d_prev, dh[t - 1]);
    } else if (visual_initial_state(variant)) {
      axpy<Real>(Real{1}, d_prev, d_projected);
    }
  }

  if (uses_visual(variant)) visual_projection_backward<Real>(*feature, projected, d_projected, *grads);
  return result;
}

}  // namespace mmembed

#endif  // MMEMBED_OBJECTIVE_HPP_
