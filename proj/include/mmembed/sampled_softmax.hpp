// SPDX-License-Identifier: Apache-2.0
//
// Sampled softmax over {target} ∪ negatives with the -ln q(w) proposal
// correction, and the log-frequency negative sampler that supplies q.
#ifndef MMEMBED_SAMPLED_SOFTMAX_HPP_
#define MMEMBED_SAMPLED_SOFTMAX_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mmembed/errors.hpp"
#include "mmembed/rng.hpp"
#include "mmembed/tensor.hpp"
#include "mmembed/text.hpp"

namespace mmembed {

/// Draws negatives without replacement from q(w) ∝ weight(w). Built from a
/// vocabulary the weight is ln(1 + count); <bos> and <unk> are never
/// candidates, while <eos> is (it is a prediction target).
class NegativeSampler {
 public:
  explicit NegativeSampler(const Vocabulary& vocab) : NegativeSampler(log_count_weights(vocab)) {}

  explicit NegativeSampler(std::vector<double> weights) : q_(std::move(weights)) {
    double total = 0.0;
    for (double w : q_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("sampling weights must be finite and >= 0");
      total += w;
    }
    if (!(total > 0.0)) throw ConfigError("no word has positive sampling weight");
    for (auto& w : q_) {
      w /= total;
      if (w > 0.0) ++eligible_;
    }
    build_alias();
  }

  static std::vector<double> log_count_weights(const Vocabulary& vocab) {
    std::vector<double> w(vocab.size(), 0.0);
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      if (id == Vocabulary::kBos || id == Vocabulary::kUnk) continue;
      w[id] = std::log1p(static_cast<double>(vocab.count(static_cast<WordId>(id))));
    }
    return w;
  }

  std::size_t size() const noexcept { return q_.size(); }
  /// Words with q > 0.
  std::size_t eligible() const noexcept { return eligible_; }
  double probability(WordId w) const { return q_.at(w); }
  std::span<const double> probabilities() const noexcept { return q_; }

  /// `count` distinct ids, none equal to `exclude`.
  std::vector<WordId> sample(std::size_t count, WordId exclude, Rng& rng) const {
    const bool exclude_eligible = exclude < q_.size() && q_[exclude] > 0.0;
    const std::size_t available = eligible_ - (exclude_eligible ? 1 : 0);
    if (count > available || count >= eligible_) {
      throw ConfigError("cannot draw " + std::to_string(count) + " distinct negatives from " +
                        std::to_string(eligible_) + " eligible words");
    }
    if (2 * count <= available) return sample_by_rejection(count, exclude, rng);
    return sample_by_keys(count, exclude, rng);
  }

 private:
  // Repeated draws with duplicates discarded; cheap when count << eligible.
  std::vector<WordId> sample_by_rejection(std::size_t count, WordId exclude, Rng& rng) const {
    std::vector<WordId> out;
    out.reserve(count);
    std::unordered_set<WordId> seen;
    seen.reserve(count * 2 + 1);
    seen.insert(exclude);
    while (out.size() < count) {
      const WordId w = draw(rng);
      if (seen.insert(w).second) out.push_back(w);
    }
    return out;
  }

  // Efraimidis-Spirakis keys u^(1/w): the top `count` keys form a weighted
  // sample without replacement. Used when most of the vocabulary is drawn.
  std::vector<WordId> sample_by_keys(std::size_t count, WordId exclude, Rng& rng) const {
    std::vector<std::pair<double, WordId>> keys;
    keys.reserve(eligible_);
    for (std::size_t w = 0; w < q_.size(); ++w) {
      if (q_[w] <= 0.0 || w == exclude) continue;
      double u = rng.uniform();
      while (u == 0.0) u = rng.uniform();
      keys.emplace_back(std::log(u) / q_[w], static_cast<WordId>(w));
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(count), keys.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    std::vector<WordId> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(keys[i].second);
    return out;
  }

  WordId draw(Rng& rng) const {
    const std::size_t i = rng.below(alias_prob_.size());
    return rng.uniform() < alias_prob_[i] ? static_cast<WordId>(i) : alias_[i];
  }

  // Vose's alias method.
  void build_alias() {
    const std::size_t n = q_.size();
    alias_prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    std::vector<std::size_t> small, large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = q_[i] * static_cast<double>(n);
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back();
      small.pop_back();
      const std::size_t l = large.back();
      alias_prob_[s] = scaled[s];
      alias_[s] = static_cast<WordId>(l);
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (std::size_t l : large) alias_prob_[l] = 1.0;
    // Leftovers from rounding; a zero-weight slot must never be returned.
    for (std::size_t s : small) alias_prob_[s] = q_[s] > 0.0 ? 1.0 : 0.0;
    for (std::size_t s : small) {
      if (q_[s] <= 0.0) {
        const auto it = std::find_if(q_.begin(), q_.end(), [](double v) { return v > 0.0; });
        alias_[s] = static_cast<WordId>(it - q_.begin());
      }
    }
  }

  std::vector<double> q_;
  std::size_t eligible_ = 0;
  std::vector<double> alias_prob_;
  std::vector<WordId> alias_;
};

template <class Real>
struct SoftmaxResult {
  Real loss{0};
  /// candidates[0] is the target.
  std::vector<WordId> candidates;
  /// dLoss/dlogit per candidate: p(w) - [w == target].
  std::vector<Real> grad_logits;
  /// dLoss/d(decoded vector).
  std::vector<Real> grad_decoded;
};

/// logit(w) = U_M[w] . d + b_M[w] - ln q(w) over S = {target} ∪ negatives;
/// loss = -log softmax_S(logit)[target].
template <class Real>
SoftmaxResult<Real> sampled_softmax_loss(const Matrix<Real>& weights, std::span<const Real> bias,
                                         std::span<const Real> decoded, WordId target,
                                         std::span<const WordId> negatives,
                                         std::span<const double> q) {
  detail::require_shape(decoded.size() == weights.cols(), "sampled_softmax_loss", decoded.size(),
                        weights.cols());
  detail::require_shape(bias.size() == weights.rows(), "sampled_softmax_loss", bias.size(),
                        weights.rows());
  SoftmaxResult<Real> r;
  r.candidates.reserve(negatives.size() + 1);
  r.candidates.push_back(target);
  r.candidates.insert(r.candidates.end(), negatives.begin(), negatives.end());
  {
    std::vector<WordId> sorted = r.candidates;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ContractViolation("sampled_softmax_loss: duplicate candidate (or target among negatives)");
    }
  }
  const std::size_t n = r.candidates.size();
  std::vector<Real> logits(n);
  Real max_logit = -std::numeric_limits<Real>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    const WordId w = r.candidates[k];
    if (w >= weights.rows() || w >= q.size()) throw ContractViolation("candidate id out of range");
    if (!(q[w] > 0.0)) {
      throw ContractViolation("candidate " + std::to_string(w) + " has zero sampling probability");
    }
    logits[k] = dot<Real>(weights.row(w), decoded) + bias[w] - static_cast<Real>(std::log(q[w]));
    max_logit = std::max(max_logit, logits[k]);
  }
  const Real target_logit = logits[0];
  Real sum{0};
  for (std::size_t k = 0; k < n; ++k) {
    logits[k] = std::exp(logits[k] - max_logit);
    sum += logits[k];
  }
  r.grad_logits.resize(n);
  r.grad_decoded.assign(decoded.size(), Real{0});
  for (std::size_t k = 0; k < n; ++k) {
    const Real p = logits[k] / sum;
    r.grad_logits[k] = p - (k == 0 ? Real{1} : Real{0});
    axpy<Real>(r.grad_logits[k], weights.row(r.candidates[k]), r.grad_decoded);
  }
  r.loss = std::log(sum) + max_logit - target_logit;
  return r;
}

/// Scatters a SoftmaxResult into weight-row and bias gradients.
template <class Real>
void accumulate_softmax_grads(const SoftmaxResult<Real>& r, std::span<const Real> decoded,
                              Matrix<Real>& d_weights, std::span<Real> d_bias, Real scale = Real{1}) {
  for (std::size_t k = 0; k < r.candidates.size(); ++k) {
    const WordId w = r.candidates[k];
    const Real g = scale * r.grad_logits[k];
    axpy<Real>(g, decoded, d_weights.row(w));
    d_bias[w] += g;
  }
}

}  // namespace mmembed

#endif  // MMEMBED_SAMPLED_SOFTMAX_HPP_
