// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch SGD with global-norm clipping and validation early stopping.
#ifndef MMEMBED_TRAINER_HPP_
#define MMEMBED_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mmembed/errors.hpp"
#include "mmembed/features.hpp"
#include "mmembed/model.hpp"
#include "mmembed/objective.hpp"
#include "mmembed/parallel.hpp"
#include "mmembed/rng.hpp"
#include "mmembed/sampled_softmax.hpp"
#include "mmembed/text.hpp"

namespace mmembed {

struct TrainConfig {
  Variant variant = Variant::a;
  std::size_t embed_dim = 128;
  std::size_t state_dim = 512;
  std::size_t negatives = 1024;
  double learning_rate = 1.0;
  std::size_t batch_size = 256;
  double clip_norm = 10.0;
  std::size_t max_epochs = 5;
  double lambda = 1.0;
  std::uint64_t seed = 1;
  /// Held-out sentences taken from the corpus tail. When zero,
  /// `validation_fraction` of the corpus is used instead.
  std::size_t validation_size = 0;
  double validation_fraction = 0.05;
  std::size_t eval_interval = 100;
  std::size_t patience = 3;
  std::size_t threads = 1;

  void validate() const {
    if (embed_dim == 0 || state_dim == 0) throw ConfigError("dimensions must be positive");
    if (negatives == 0) throw ConfigError("negatives must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
    if (max_epochs == 0) throw ConfigError("max epochs must be positive");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("validation fraction must lie in [0, 1)");
    }
    if (eval_interval == 0) throw ConfigError("eval interval must be positive");
    if (patience == 0) throw ConfigError("patience must be positive");
    if (threads == 0) throw ConfigError("threads must be positive");
  }

  /// Stable `key=value` lines; embedded in checkpoints.
  std::string echo() const {
    std::ostringstream out;
    out.precision(17);
    out << "variant=" << to_string(variant) << '\n'
        << "dim-embed=" << embed_dim << '\n'
        << "dim-state=" << state_dim << '\n'
        << "negatives=" << negatives << '\n'
        << "lr=" << learning_rate << '\n'
        << "batch=" << batch_size << '\n'
        << "clip=" << clip_norm << '\n'
        << "epochs=" << max_epochs << '\n'
        << "lambda=" << lambda << '\n'
        << "seed=" << seed << '\n'
        << "validation-size=" << validation_size << '\n'
        << "validation-fraction=" << validation_fraction << '\n'
        << "eval-interval=" << eval_interval << '\n'
        << "patience=" << patience << '\n';
    return out.str();
  }
};

/// Weights uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)); gate biases
/// b_r and b_u start at 1, every other bias at 0.
template <class Real>
ModelParams<Real> init_params(Variant variant, const ModelDims& dims, Rng& rng) {
  ModelParams<Real> p(variant, dims);
  p.for_each_tensor([&](const TensorRef<Real>& t) {
    if (t.cols == 1) return;  // biases
    const double s = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
    for (auto& v : t.values) v = static_cast<Real>(rng.uniform(-s, s));
  });
  std::fill(p.bias_reset.begin(), p.bias_reset.end(), Real{1});
  std::fill(p.bias_update.begin(), p.bias_update.end(), Real{1});
  return p;
}

template <class Real>
ModelParams<Real> init_params(const TrainConfig& cfg, const Vocabulary& vocab,
                              std::size_t feature_dim, Rng& rng) {
  return init_params<Real>(cfg.variant, ModelDims{vocab.size(), cfg.embed_dim, cfg.state_dim, feature_dim},
                           rng);
}

struct SgdStats {
  double grad_norm = 0.0;
  bool clipped = false;
};

/// g = summed / n; clip g to `clip_norm` in global L2 norm; theta -= lr * g.
/// Parameters are left untouched when the gradient is not finite.
template <class Real>
SgdStats sgd_step(ModelParams<Real>& params, const ModelParams<Real>& summed, std::size_t n_sentences,
                  double learning_rate, double clip_norm) {
  if (params.variant() != summed.variant() || !(params.dims() == summed.dims())) {
    throw ShapeError("sgd_step: gradient shapes do not match parameters");
  }
  if (n_sentences == 0) return {};
  const double inv_n = 1.0 / static_cast<double>(n_sentences);
  double sq = 0.0;
  summed.for_each_tensor([&](const TensorRef<const Real>& t) {
    for (Real g : t.values) sq += static_cast<double>(g) * static_cast<double>(g);
  });
  SgdStats stats;
  stats.grad_norm = std::sqrt(sq) * inv_n;
  if (!std::isfinite(stats.grad_norm)) throw NumericError("non-finite gradient; step aborted");
  double scale = inv_n;
  if (stats.grad_norm > clip_norm) {
    scale *= clip_norm / stats.grad_norm;
    stats.clipped = true;
  }
  const Real step = static_cast<Real>(learning_rate * scale);
  std::vector<std::span<const Real>> grads;
  summed.for_each_tensor([&](const TensorRef<const Real>& t) { grads.push_back(t.values); });
  std::size_t k = 0;
  params.for_each_tensor([&](const TensorRef<Real>& t) {
    const auto g = grads[k++];
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] -= step * g[i];
  });
  return stats;
}

template <class Real>
SgdStats sgd_step(ModelParams<Real>& params, const ModelParams<Real>& summed, std::size_t n_sentences,
                  const TrainConfig& cfg) {
  return sgd_step(params, summed, n_sentences, cfg.learning_rate, cfg.clip_norm);
}

/// Tracks the best validation loss. The first observation is the baseline;
/// `observe` returns true once `patience` consecutive later observations
/// have failed to improve on the best.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop.
  bool observe(double loss) {
    ++observations_;
    if (loss < best_) {
      best_ = loss;
      last_improved_ = true;
      bad_ = 0;
    } else {
      last_improved_ = false;
      ++bad_;
    }
    return bad_ >= patience_;
  }

  bool last_improved() const noexcept { return last_improved_; }
  double best() const noexcept { return best_; }
  std::size_t observations() const noexcept { return observations_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  bool last_improved_ = false;
  std::size_t bad_ = 0;
  std::size_t observations_ = 0;
};

/// One encoded sentence plus its image.
struct TrainingExample {
  TokenSequence seq;
  std::string image_id;
  const VisualFeature* feature = nullptr;
};

/// Encodes records and attaches features. Throws DataError naming the image
/// when a visual variant lacks a feature.
inline std::vector<TrainingExample> make_examples(std::span<const CorpusRecord> records,
                                                  const Vocabulary& vocab,
                                                  const FeatureTable* features, Variant variant) {
  std::vector<TrainingExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    TrainingExample ex{encode(r.tokens, vocab), r.image_id, nullptr};
    if (uses_visual(variant)) {
      ex.feature = features ? features->find(r.image_id) : nullptr;
      if (ex.feature == nullptr) throw DataError("no visual feature for image '" + r.image_id + "'");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

struct LogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double val_loss = std::numeric_limits<double>::quiet_NaN();
};

inline void write_log_csv(std::ostream& out, std::span<const LogRow> rows) {
  out << "step,epoch,train_loss,val_loss\n";
  out.precision(9);
  for (const auto& r : rows) {
    out << r.step << ',' << r.epoch << ',' << r.train_loss << ',' << r.val_loss << '\n';
  }
}

template <class Real>
struct TrainResult {
  ModelParams<Real> params;
  std::vector<LogRow> log;
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t steps = 0;
  bool early_stopped = false;
  /// Mean per-token sampled loss of each step's batch.
  std::vector<double> step_token_loss;
  std::size_t skipped_sentences = 0;
};

namespace detail {

template <class Real>
void add_into(ModelParams<Real>& dst, const ModelParams<Real>& src) {
  std::vector<std::span<const Real>> s;
  src.for_each_tensor([&](const TensorRef<const Real>& t) { s.push_back(t.values); });
  std::size_t k = 0;
  dst.for_each_tensor([&](const TensorRef<Real>& t) {
    const auto v = s[k++];
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] += v[i];
  });
}

template <class Real>
void zero(ModelParams<Real>& g) {
  g.for_each_tensor([](const TensorRef<Real>& t) { std::fill(t.values.begin(), t.values.end(), Real{0}); });
}

struct BatchTotals {
  double loss = 0.0;
  double lm_token_loss = 0.0;
  std::size_t tokens = 0;
  std::size_t sentences = 0;
  std::size_t skipped = 0;

  void add(const BatchTotals& o) {
    loss += o.loss;
    lm_token_loss += o.lm_token_loss;
    tokens += o.tokens;
    sentences += o.sentences;
    skipped += o.skipped;
  }
};

}  // namespace detail

template <class Real>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Vocabulary& vocab, std::size_t feature_dim)
      : cfg_(cfg), vocab_(vocab), feature_dim_(feature_dim), sampler_(vocab) {
    cfg_.validate();
    if (cfg_.negatives >= sampler_.eligible()) {
      throw ConfigError("negatives (" + std::to_string(cfg_.negatives) +
                        ") must be smaller than the eligible vocabulary (" +
                        std::to_string(sampler_.eligible()) + ")");
    }
  }

  const NegativeSampler& sampler() const noexcept { return sampler_; }

  /// Called with every log row as it is produced.
  void on_log(std::function<void(const LogRow&)> fn) { on_log_ = std::move(fn); }

  /// Mean sentence loss over `examples` with fixed per-sentence negative
  /// streams, so repeated evaluations are comparable.
  double evaluate(const ModelParams<Real>& params, std::span<const TrainingExample> examples) const {
    if (examples.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> losses(examples.size(), 0.0);
    std::vector<char> skipped(examples.size(), 0);
    parallel_slices(examples.size(), cfg_.threads, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        Rng rng(derive_seed(cfg_.seed, "validation", i));
        const auto r = sentence_forward<Real>(params, examples[i].seq, examples[i].feature, sampler_,
                                              objective(), rng, nullptr);
        losses[i] = static_cast<double>(r.loss);
        skipped[i] = r.skipped;
      }
    });
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
      if (skipped[i]) continue;
      sum += losses[i];
      ++n;
    }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  }

  TrainResult<Real> train(std::span<const TrainingExample> examples) const {
    if (examples.empty()) throw DataError("training corpus is empty");
    for (const auto& ex : examples) {
      if (uses_visual(cfg_.variant) && ex.feature == nullptr) {
        throw DataError("no visual feature for image '" + ex.image_id + "'");
      }
    }
    std::size_t n_val = cfg_.validation_size;
    if (n_val == 0) {
      n_val = static_cast<std::size_t>(cfg_.validation_fraction * static_cast<double>(examples.size()));
    }
    if (n_val >= examples.size()) throw ConfigError("validation set would consume the whole corpus");
    const auto train_set = examples.first(examples.size() - n_val);
    const auto val_set = examples.last(n_val);

    Rng init_rng(derive_seed(cfg_.seed, "init"));
    TrainResult<Real> result;
    ModelParams<Real> params = init_params<Real>(cfg_, vocab_, feature_dim_, init_rng);
    const std::size_t workers = std::max<std::size_t>(1, std::min(cfg_.threads, cfg_.batch_size));
    std::vector<ModelParams<Real>> tapes(workers, params.zeros_like());

    EarlyStopping stopper(cfg_.patience);
    const bool validating = !val_set.empty();
    if (validating) {
      const double v0 = evaluate(params, val_set);
      stopper.observe(v0);
      result.params = params;
      result.best_val_loss = v0;
      result.log.push_back({0, 0, std::numeric_limits<double>::quiet_NaN(), v0});
      if (on_log_) on_log_(result.log.back());
    }

    std::size_t step = 0;
    double window_loss = 0.0;
    std::size_t window_sentences = 0;
    bool stop = false;
    std::size_t last_eval_step = 0;
    std::size_t epoch = 0;
    auto record = [&](std::size_t ep) {
      LogRow row{step, ep, window_sentences ? window_loss / static_cast<double>(window_sentences)
                                            : std::numeric_limits<double>::quiet_NaN(),
                 std::numeric_limits<double>::quiet_NaN()};
      window_loss = 0.0;
      window_sentences = 0;
      last_eval_step = step;
      if (validating) {
        row.val_loss = evaluate(params, val_set);
        stop = stopper.observe(row.val_loss);
        if (stopper.last_improved()) {
          result.params = params;
          result.best_val_loss = row.val_loss;
        }
      }
      result.log.push_back(row);
      if (on_log_) on_log_(row);
    };

    std::vector<std::size_t> order(train_set.size());
    for (epoch = 0; epoch < cfg_.max_epochs && !stop; ++epoch) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng shuffle_rng(derive_seed(cfg_.seed, "shuffle", epoch));
      shuffle_rng.shuffle(order);

      for (std::size_t start = 0; start < order.size() && !stop; start += cfg_.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
        std::vector<detail::BatchTotals> totals(workers);
        for (auto& t : tapes) detail::zero(t);
        parallel_slices(end - start, workers, [&](std::size_t w, std::size_t b, std::size_t e) {
          for (std::size_t k = start + b; k < start + e; ++k) {
            const std::size_t idx = order[k];
            Rng rng(derive_seed(cfg_.seed, "negatives", epoch, step, idx));
            const auto r = sentence_forward<Real>(params, train_set[idx].seq, train_set[idx].feature,
                                                  sampler_, objective(), rng, &tapes[w]);
            if (r.skipped) {
              ++totals[w].skipped;
              continue;
            }
            totals[w].loss += static_cast<double>(r.loss);
            totals[w].lm_token_loss += static_cast<double>(r.lm_loss) * static_cast<double>(r.scored);
            totals[w].tokens += r.scored;
            ++totals[w].sentences;
          }
        });
        for (std::size_t w = 1; w < workers; ++w) {
          detail::add_into(tapes[0], tapes[w]);
          totals[0].add(totals[w]);
        }
        sgd_step(params, tapes[0], totals[0].sentences, cfg_);
        ++step;
        result.skipped_sentences += totals[0].skipped;
        window_loss += totals[0].loss;
        window_sentences += totals[0].sentences;
        result.step_token_loss.push_back(
            totals[0].tokens ? totals[0].lm_token_loss / static_cast<double>(totals[0].tokens) : 0.0);
        if (step % cfg_.eval_interval == 0) record(epoch);
      }
    }
    result.early_stopped = stop;
    if (step != last_eval_step) record(epoch == 0 ? 0 : epoch - 1);
    result.steps = step;
    if (!validating) result.params = std::move(params);
    return result;
  }

 private:
  ObjectiveOptions objective() const { return {cfg_.lambda, cfg_.negatives}; }

  TrainConfig cfg_;
  const Vocabulary& vocab_;
  std::size_t feature_dim_;
  NegativeSampler sampler_;
  std::function<void(const LogRow&)> on_log_;
};

template <class Real>
TrainResult<Real> train(std::span<const TrainingExample> examples, const Vocabulary& vocab,
                        std::size_t feature_dim, const TrainConfig& cfg) {
  return Trainer<Real>(cfg, vocab, feature_dim).train(examples);
}

}  // namespace mmembed

#endif  // MMEMBED_TRAINER_HPP_
