#pragma once

// End-to-end comparison: data -> BPE -> baseline -> fine-tuned length
// variants -> decoding strategies -> comparison table. Everything is driven
// by one key/value config and one seed.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lenctl/config.hpp"
#include "lenctl/corpus.hpp"
#include "lenctl/decode.hpp"
#include "lenctl/eval.hpp"
#include "lenctl/model/checkpoint.hpp"
#include "lenctl/model/trainer.hpp"
#include "lenctl/record.hpp"

namespace lenctl::experiment {

// Config sections shared with the individual CLI subcommands.
std::set<std::string> synth_keys();
corpus::SynthSpec synth_from(const KeyValueConfig& kv, const corpus::SynthSpec& base = {});

// prefix "train" or "finetune"
std::set<std::string> train_keys(const std::string& prefix);
model::TrainOptions train_options_from(const KeyValueConfig& kv, const std::string& prefix,
                                       const model::TrainOptions& base = {});

std::set<std::string> model_keys();
model::ModelConfig model_from(const KeyValueConfig& kv);

// Training on classified pairs; length tokens are injected into the sources
// (and added to the vocabulary) when the mode uses them. The checkpoint holds the best dev-loss parameters.
struct Trained {
  model::Checkpoint checkpoint;
  model::TrainReport report;
};
Trained train_fresh(const std::vector<corpus::SentencePair>& train, const std::vector<corpus::SentencePair>& dev,
                    const textproc::MergeTable& merges, textproc::Vocabulary vocab, model::ModelConfig mc,
                    const model::TrainOptions& opts, std::uint64_t init_seed, std::uint64_t train_seed,
                    const std::string& config_hash);
Trained train_finetune(const model::Checkpoint& base, model::LengthMode mode,
                       const std::vector<corpus::SentencePair>& train, const std::vector<corpus::SentencePair>& dev,
                       const model::TrainOptions& opts, std::uint64_t init_seed, std::uint64_t train_seed,
                       const std::string& config_hash);

// One decoding run over the test set, written as
//   mode[:class][:penalty][:scale=X]
// e.g. "none", "none:penalty", "token:short", "abs", "token+rel:normal:scale=1.1".
struct Strategy {
  std::string label;
  model::LengthMode mode = model::LengthMode::kNone;
  decode::DecodeControl control;
};
Strategy parse_strategy(const std::string& text, int beam, double penalty_alpha);

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "experiment_out";
  int threads = 1;

  // Either three TSV files or the synthetic generator.
  std::optional<std::filesystem::path> train_tsv, dev_tsv, test_tsv;
  corpus::SynthSpec synth;
  int dev_pairs = 200;
  int test_pairs = 200;

  int bpe_merges = 500;
  corpus::Thresholds thresholds;
  model::ModelConfig model;
  model::TrainOptions train;
  model::TrainOptions finetune;

  int beam = 4;
  double penalty_alpha = 0.5;
  std::vector<Strategy> strategies;
  std::size_t max_test_sentences = 0;  // 0 = all

  std::string config_hash;  // excludes experiment.out_dir and experiment.threads
  KeyValueConfig source;

  // Rejects unknown keys, naming the first offender.
  static ExperimentConfig from(const KeyValueConfig& kv);
  std::vector<model::LengthMode> variants() const;  // fine-tuned modes, in first-use order
};

struct StrategyResult {
  Strategy strategy;
  eval::BleuReport bleu;
  eval::LengthStats lengths;
  double mean_out_chars = 0.0;
  std::size_t failures = 0;  // sentences whose decoding raised an error
  std::size_t unfinished = 0;
};

struct ExperimentResult {
  std::vector<StrategyResult> rows;
  eval::ComparisonTable table;
  std::vector<model::TrainReport> training;  // baseline first, then variants
};

using Logger = std::function<void(const Record&)>;

// Writes every artifact under cfg.out_dir. On failure the rows finished so
// far are still written before the exception propagates.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Logger& log = {});

}  // namespace lenctl::experiment
