// SPDX-License-Identifier: Apache-2.0
//
// mmembed: train multimodal word embeddings, mine and clean evaluation
// triplets, and score embeddings by triplet precision.
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "mmembed/mmembed.hpp"

namespace {

using namespace mmembed;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("mmembed");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("MMEMBED_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path)) {
    throw DataError(std::string(what) + " not found: " + path);
  }
}

std::ofstream open_output(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw DataError("failed writing " + path);
}

struct TextOptions {
  std::string corpus;
  std::uint64_t min_count = 50;
  FilterOptions filter;
};

void add_text_options(CLI::App* cmd, TextOptions& t) {
  cmd->add_option("--corpus", t.corpus, "image_id<TAB>sentence file")->required();
  cmd->add_option("--min-count", t.min_count, "minimum word frequency")->capture_default_str();
  cmd->add_option("--min-len", t.filter.min_len, "drop sentences shorter than this")->capture_default_str();
  cmd->add_option("--overlap", t.filter.overlap_threshold, "near-duplicate unigram overlap threshold")
      ->capture_default_str();
}

std::vector<CorpusRecord> load_filtered_corpus(const TextOptions& t) {
  require_file(t.corpus, "corpus");
  t.filter.validate();
  const auto raw = load_corpus(t.corpus);
  auto kept = filter_corpus(raw, t.filter);
  spdlog::info("corpus: {} sentences, {} after filtering", raw.size(), kept.size());
  return kept;
}

Vocabulary vocab_of(const std::vector<CorpusRecord>& records, std::uint64_t min_count) {
  WordCounter counter;
  for (const auto& r : records) counter.add(r.tokens);
  return Vocabulary::build(counter, min_count);
}

Embeddings embeddings_from(const std::string& checkpoint, const std::string& embeddings) {
  if (!checkpoint.empty() == !embeddings.empty()) {
    throw ConfigError("give exactly one of --checkpoint or --embeddings");
  }
  if (!checkpoint.empty()) {
    require_file(checkpoint, "checkpoint");
    const auto ck = load_checkpoint<double>(checkpoint);
    return Embeddings::from_vocab(ck.vocab, ck.params.embedding);
  }
  require_file(embeddings, "embedding file");
  return Embeddings::load_text(embeddings);
}

// ---------------------------------------------------------------- build-vocab

struct BuildVocabCmd {
  TextOptions text;
  std::string out;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("build-vocab", "count words and write the vocabulary");
    add_text_options(cmd, text);
    cmd->add_option("--out", out, "vocabulary file")->required();
    cmd->callback([this] { run(); });
  }

  void run() const {
    const auto v = vocab_of(load_filtered_corpus(text), text.min_count);
    auto f = open_output(out);
    v.write(f);
    finish(f, out);
    spdlog::info("vocabulary: {} entries -> {}", v.size(), out);
  }
};

// ---------------------------------------------------------------------- train

struct TrainCmd {
  TextOptions text;
  std::string features;
  std::size_t feature_dim = 0;
  std::string vocab;
  std::string variant = "a";
  TrainConfig cfg;
  std::string out;
  std::string log;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("train", "train an embedding model");
    add_text_options(cmd, text);
    cmd->add_option("--features", features, "image_id<TAB>hex feature file");
    cmd->add_option("--feature-dim", feature_dim, "feature width in bits (0 infers it)");
    cmd->add_option("--vocab", vocab, "vocabulary file (built from the corpus when absent)");
    cmd->add_option("--variant", variant, "text, a, a-noshare, b or c")->capture_default_str();
    cmd->add_option("--dim-embed", cfg.embed_dim)->capture_default_str();
    cmd->add_option("--dim-state", cfg.state_dim)->capture_default_str();
    cmd->add_option("--negatives", cfg.negatives)->capture_default_str();
    cmd->add_option("--lr", cfg.learning_rate)->capture_default_str();
    cmd->add_option("--batch", cfg.batch_size, "sentences per step")->capture_default_str();
    cmd->add_option("--clip", cfg.clip_norm, "global gradient norm bound")->capture_default_str();
    cmd->add_option("--epochs", cfg.max_epochs)->capture_default_str();
    cmd->add_option("--lambda", cfg.lambda, "auxiliary loss weight")->capture_default_str();
    cmd->add_option("--seed", cfg.seed)->capture_default_str();
    cmd->add_option("--threads", cfg.threads)->capture_default_str();
    cmd->add_option("--validation", cfg.validation_fraction, "held-out fraction of the corpus")
        ->capture_default_str();
    cmd->add_option("--validation-size", cfg.validation_size, "held-out sentence count (overrides fraction)");
    cmd->add_option("--eval-interval", cfg.eval_interval, "steps between validations")->capture_default_str();
    cmd->add_option("--patience", cfg.patience, "evaluations without improvement")->capture_default_str();
    cmd->add_option("--out", out, "checkpoint file")->required();
    cmd->add_option("--log", log, "CSV training log (default: <out>.log.csv)");
    cmd->callback([this] { run(); });
  }

  void run() {
    cfg.variant = parse_variant(variant);
    cfg.validate();
    const auto records = load_filtered_corpus(text);
    Vocabulary v;
    if (!vocab.empty()) {
      require_file(vocab, "vocabulary");
      v = Vocabulary::load(vocab);
    } else {
      v = vocab_of(records, text.min_count);
    }
    std::optional<FeatureTable> table;
    if (uses_visual(cfg.variant)) {
      if (features.empty()) {
        throw ConfigError("variant " + std::string(to_string(cfg.variant)) + " needs --features");
      }
      require_file(features, "feature file");
      table = FeatureTable::load(features, feature_dim);
    }
    const auto examples = make_examples(records, v, table ? &*table : nullptr, cfg.variant);
    const std::size_t fdim = table ? table->dim() : 0;
    spdlog::info("training variant {} on {} sentences, vocabulary {}", to_string(cfg.variant),
                 examples.size(), v.size());

    const std::string log_path = log.empty() ? out + ".log.csv" : log;
    auto log_file = open_output(log_path);
    log_file << "step,epoch,train_loss,val_loss\n";
    Trainer<double> trainer(cfg, v, fdim);
    trainer.on_log([&](const LogRow& row) {
      std::ostringstream line;
      write_log_csv(line, std::span<const LogRow>(&row, 1));
      const std::string s = line.str();
      log_file << s.substr(s.find('\n') + 1);
      log_file.flush();
      spdlog::info("step {} epoch {} train {:.4f} val {:.4f}", row.step, row.epoch, row.train_loss,
                   row.val_loss);
    });
    const auto result = trainer.train(examples);
    finish(log_file, log_path);
    save_checkpoint(out, Checkpoint<double>{cfg.echo(), v, result.params});
    spdlog::info("{} steps{}, best validation loss {:.4f}, checkpoint -> {}", result.steps,
                 result.early_stopped ? " (early stop)" : "", result.best_val_loss, out);
    if (result.skipped_sentences > 0) {
      spdlog::warn("{} sentence visits had no scorable target", result.skipped_sentences);
    }
  }
};

// ----------------------------------------------------------------------- eval

struct EvalCmd {
  std::string checkpoint;
  std::string embeddings;
  std::string triplets;
  std::size_t threads = 1;
  std::string out;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval", "triplet precision of a model or embedding file");
    cmd->add_option("--checkpoint", checkpoint);
    cmd->add_option("--embeddings", embeddings, "word<TAB>v1 v2 ... file");
    cmd->add_option("--triplets", triplets, "base<TAB>positive<TAB>negative file")->required();
    cmd->add_option("--threads", threads)->capture_default_str();
    cmd->add_option("--out", out, "also write the report here");
    cmd->callback([this] { run(); });
  }

  void run() const {
    if (threads == 0) throw ConfigError("threads must be positive");
    const auto emb = embeddings_from(checkpoint, embeddings);
    require_file(triplets, "triplet file");
    const auto t = load_triplets(triplets);
    if (t.empty()) throw DataError("triplet file is empty: " + triplets);
    const auto report = evaluate(t, emb, threads);
    write_report(std::cout, report);
    if (!out.empty()) {
      auto f = open_output(out);
      write_report(f, report);
      finish(f, out);
    }
  }
};

// ----------------------------------------------------------------------- mine

struct MineCmd {
  std::string clicks;
  std::string annotations;
  std::string pool;
  MineOptions opts;
  std::string out;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("mine", "mine triplets from a click log");
    cmd->add_option("--clicks", clicks, "query<TAB>item_id<TAB>clicks file")->required();
    cmd->add_option("--annotations", annotations, "item_id<TAB>annotation file")->required();
    cmd->add_option("--pool", pool, "negative phrase pool, one per line")->required();
    cmd->add_option("--top-k", opts.top_k, "positives per query")->capture_default_str();
    cmd->add_option("--seed", opts.seed)->capture_default_str();
    cmd->add_option("--threads", opts.threads)->capture_default_str();
    cmd->add_option("--out", out, "triplet file")->required();
    cmd->callback([this] { run(); });
  }

  void run() const {
    if (opts.threads == 0) throw ConfigError("threads must be positive");
    require_file(clicks, "click log");
    require_file(annotations, "annotation file");
    require_file(pool, "phrase pool");
    const auto c = load_click_log(clicks);
    const auto a = load_annotations(annotations);
    const auto p = load_pool(pool);
    const auto t = mine(c, a, p, opts);
    auto f = open_output(out);
    write_triplets(f, t);
    finish(f, out);
    spdlog::info("{} triplets -> {}", t.size(), out);
  }
};

// ---------------------------------------------------------------------- clean

struct CleanCmd {
  std::string votes;
  std::string out;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("clean", "keep triplets a majority of annotators agree with");
    cmd->add_option("--votes", votes, "base<TAB>positive<TAB>negative<TAB>A,D,R,U file")->required();
    cmd->add_option("--out", out, "gold triplet file")->required();
    cmd->callback([this] { run(); });
  }

  void run() const {
    require_file(votes, "vote file");
    const auto s = aggregate_votes(load_votes(votes));
    for (const auto& d : s.diagnostics) spdlog::warn("{}", d);
    auto f = open_output(out);
    write_triplets(f, s.accepted);
    finish(f, out);
    spdlog::info("kept {}, dropped {} -> {}", s.accepted.size(), s.rejected, out);
  }
};

// ------------------------------------------------------------------------- nn

struct NnCmd {
  std::string checkpoint;
  std::string embeddings;
  std::string word;
  std::size_t k = 10;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("nn", "nearest words by cosine similarity");
    cmd->add_option("--checkpoint", checkpoint);
    cmd->add_option("--embeddings", embeddings);
    cmd->add_option("--word", word)->required();
    cmd->add_option("--k", k)->capture_default_str();
    cmd->callback([this] { run(); });
  }

  void run() const {
    const auto emb = embeddings_from(checkpoint, embeddings);
    for (const auto& n : nearest_neighbours(emb, word, k)) {
      std::printf("%s\t%.6f\n", n.word.c_str(), n.similarity);
    }
  }
};

// --------------------------------------------------------------------- export

struct ExportCmd {
  std::string checkpoint;
  std::string out;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("export", "write the embedding table as text");
    cmd->add_option("--checkpoint", checkpoint)->required();
    cmd->add_option("--out", out)->required();
    cmd->callback([this] { run(); });
  }

  void run() const {
    const auto emb = embeddings_from(checkpoint, "");
    auto f = open_output(out);
    emb.write_text(f);
    finish(f, out);
    spdlog::info("{} x {} embeddings -> {}", emb.size(), emb.dim(), out);
  }
};

// ---------------------------------------------------------------------- synth

struct SynthCmd {
  SynthConfig cfg;
  std::string out;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("synth", "generate a synthetic concept dataset");
    cmd->add_option("--concepts", cfg.num_concepts)->capture_default_str();
    cmd->add_option("--images-per-concept", cfg.images_per_concept)->capture_default_str();
    cmd->add_option("--sentences-per-image", cfg.sentences_per_image)->capture_default_str();
    cmd->add_option("--words-per-concept", cfg.words_per_concept)->capture_default_str();
    cmd->add_option("--noise-words", cfg.noise_words)->capture_default_str();
    cmd->add_option("--concept-words-per-sentence", cfg.concept_words_per_sentence)->capture_default_str();
    cmd->add_option("--noise-words-per-sentence", cfg.noise_words_per_sentence)->capture_default_str();
    cmd->add_option("--feature-dim", cfg.feature_dim)->capture_default_str();
    cmd->add_option("--feature-noise", cfg.feature_noise, "bit flip probability")->capture_default_str();
    cmd->add_option("--num-triplets", cfg.num_triplets)->capture_default_str();
    cmd->add_option("--seed", cfg.seed)->capture_default_str();
    cmd->add_option("--out", out, "output directory")->required();
    cmd->callback([this] { run(); });
  }

  void run() const {
    const auto paths = write_synthetic(generate_synthetic(cfg), out);
    spdlog::info("wrote {}, {}, {}", paths.corpus.string(), paths.features.string(),
                 paths.triplets.string());
  }
};

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Multimodal word embeddings: training, triplet mining and evaluation"};
  app.require_subcommand(1);

  BuildVocabCmd build_vocab;
  TrainCmd train_cmd;
  EvalCmd eval_cmd;
  MineCmd mine_cmd;
  CleanCmd clean_cmd;
  NnCmd nn_cmd;
  ExportCmd export_cmd;
  SynthCmd synth_cmd;
  build_vocab.attach(app);
  train_cmd.attach(app);
  eval_cmd.attach(app);
  mine_cmd.attach(app);
  clean_cmd.attach(app);
  nn_cmd.attach(app);
  export_cmd.attach(app);
  synth_cmd.attach(app);
  app.set_config("--config", "", "INI file with one [subcommand] section of flag=value lines; "
                                  "command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);

  // --config may follow the subcommand name; the root app owns it.
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      const std::string file = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      args.insert(args.begin(), {"--config", file});
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      const std::string opt = args[i];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      args.insert(args.begin(), opt);
      break;
    }
  }
  std::reverse(args.begin(), args.end());

  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  } catch (const NumericError& e) {
    spdlog::error("{}", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitInput;
  }
  return kExitOk;
}
