// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multimodal corpora with a known concept structure.
//
// Every concept owns a disjoint cluster of words and a block of feature bits.
// An image of concept c gets the bits of block c set (then each bit flips
// with probability `feature_noise`), and each of its sentences mixes
// `concept_words_per_sentence` words from cluster c with
// `noise_words_per_sentence` words drawn from a pool shared by all concepts,
// in random order. With one cluster word per sentence the textual context of
// a cluster word is independent of its concept, so only the image can tell
// the concepts apart.
#ifndef MMEMBED_SYNTHETIC_HPP_
#define MMEMBED_SYNTHETIC_HPP_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mmembed/errors.hpp"
#include "mmembed/features.hpp"
#include "mmembed/rng.hpp"
#include "mmembed/triplets.hpp"

namespace mmembed {

struct SynthConfig {
  std::size_t num_concepts = 10;
  std::size_t images_per_concept = 200;
  std::size_t sentences_per_image = 10;
  std::size_t words_per_concept = 20;
  std::size_t noise_words = 50;
  std::size_t concept_words_per_sentence = 1;
  std::size_t noise_words_per_sentence = 4;
  std::size_t feature_dim = 256;
  double feature_noise = 0.05;
  std::size_t num_triplets = 10000;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_concepts < 2) throw ConfigError("synthetic data needs at least 2 concepts");
    if (words_per_concept < 2) throw ConfigError("each cluster needs at least 2 words");
    if (feature_dim < num_concepts) {
      throw ConfigError("feature dimension " + std::to_string(feature_dim) +
                        " cannot encode " + std::to_string(num_concepts) + " concepts");
    }
    if (concept_words_per_sentence > words_per_concept) {
      throw ConfigError("more cluster words per sentence than words per cluster");
    }
    if (concept_words_per_sentence + noise_words_per_sentence == 0) {
      throw ConfigError("sentences would be empty");
    }
    if (noise_words_per_sentence > 0 && noise_words == 0) {
      throw ConfigError("noise words requested but the noise pool is empty");
    }
    if (!(feature_noise >= 0.0 && feature_noise <= 0.5)) {
      throw ConfigError("feature noise must lie in [0, 0.5]");
    }
  }
};

struct SynthSentence {
  std::string image_id;
  std::string text;
};

struct SynthDataset {
  std::vector<SynthSentence> corpus;
  FeatureTable features;
  std::vector<Triplet> triplets;
  std::vector<std::vector<std::string>> concept_words;
  std::vector<std::string> noise_words;
  std::vector<std::size_t> image_concept;
  std::vector<std::size_t> triplet_base_concept;
};

inline std::string synth_concept_word(std::size_t cluster, std::size_t j) {
  return "c" + std::to_string(cluster) + "w" + std::to_string(j);
}

inline std::string synth_noise_word(std::size_t j) { return "n" + std::to_string(j); }

inline std::string synth_image_id(std::size_t i) {
  std::string digits = std::to_string(i);
  return "img" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

inline SynthDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset ds;
  ds.features = FeatureTable(cfg.feature_dim);
  const std::size_t K = cfg.num_concepts;
  for (std::size_t c = 0; c < K; ++c) {
    auto& cluster = ds.concept_words.emplace_back();
    for (std::size_t j = 0; j < cfg.words_per_concept; ++j) cluster.push_back(synth_concept_word(c, j));
  }
  for (std::size_t j = 0; j < cfg.noise_words; ++j) ds.noise_words.push_back(synth_noise_word(j));

  Rng feature_rng(derive_seed(cfg.seed, "synth-features"));
  Rng text_rng(derive_seed(cfg.seed, "synth-text"));
  const std::size_t block = cfg.feature_dim / K;
  const std::size_t images = K * cfg.images_per_concept;
  for (std::size_t i = 0; i < images; ++i) {
    const std::size_t c = i % K;
    const std::string id = synth_image_id(i);
    ds.image_concept.push_back(c);

    VisualFeature f;
    f.bits.assign(cfg.feature_dim, 0);
    for (std::size_t b = c * block; b < (c + 1) * block; ++b) f.bits[b] = 1;
    for (auto& bit : f.bits) {
      if (feature_rng.bernoulli(cfg.feature_noise)) bit ^= 1;
    }
    ds.features.insert(id, std::move(f));

    for (std::size_t s = 0; s < cfg.sentences_per_image; ++s) {
      std::vector<std::string> words;
      std::vector<std::size_t> picks(cfg.words_per_concept);
      for (std::size_t j = 0; j < picks.size(); ++j) picks[j] = j;
      for (std::size_t k = 0; k < cfg.concept_words_per_sentence; ++k) {
        const std::size_t at = k + text_rng.below(picks.size() - k);
        std::swap(picks[k], picks[at]);
        words.push_back(ds.concept_words[c][picks[k]]);
      }
      for (std::size_t k = 0; k < cfg.noise_words_per_sentence; ++k) {
        words.push_back(ds.noise_words[text_rng.below(ds.noise_words.size())]);
      }
      text_rng.shuffle(words);
      std::string text;
      for (std::size_t k = 0; k < words.size(); ++k) text += (k ? " " : "") + words[k];
      ds.corpus.push_back({id, std::move(text)});
    }
  }

  Rng triplet_rng(derive_seed(cfg.seed, "synth-triplets"));
  for (std::size_t t = 0; t < cfg.num_triplets; ++t) {
    const std::size_t c = t % K;
    const auto& cluster = ds.concept_words[c];
    const std::size_t a = triplet_rng.below(cluster.size());
    std::size_t b = triplet_rng.below(cluster.size() - 1);
    if (b >= a) ++b;
    std::size_t other = triplet_rng.below(K - 1);
    if (other >= c) ++other;
    const auto& neg_cluster = ds.concept_words[other];
    ds.triplets.push_back(
        {cluster[a], cluster[b], neg_cluster[triplet_rng.below(neg_cluster.size())]});
    ds.triplet_base_concept.push_back(c);
  }
  return ds;
}

struct SynthPaths {
  std::filesystem::path corpus;
  std::filesystem::path features;
  std::filesystem::path triplets;
};

/// Writes corpus.tsv, features.tsv and triplets.tsv under `dir`.
inline SynthPaths write_synthetic(const SynthDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SynthPaths paths{dir / "corpus.tsv", dir / "features.tsv", dir / "triplets.tsv"};
  {
    std::ofstream out(paths.corpus, std::ios::binary);
    for (const auto& s : ds.corpus) out << s.image_id << '\t' << s.text << '\n';
    if (!out) throw DataError("failed writing " + paths.corpus.string());
  }
  {
    std::ofstream out(paths.features, std::ios::binary);
    ds.features.write(out);
    if (!out) throw DataError("failed writing " + paths.features.string());
  }
  {
    std::ofstream out(paths.triplets, std::ios::binary);
    write_triplets(out, ds.triplets);
    if (!out) throw DataError("failed writing " + paths.triplets.string());
  }
  return paths;
}

}  // namespace mmembed

#endif  // MMEMBED_SYNTHETIC_HPP_
