#pragma once

// Parallel-corpus handling: length-ratio classes, length-token injection,
// bucket statistics, the synthetic controllable-length task, and batching.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lenctl/textproc.hpp"

namespace lenctl::corpus {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Thresholds {
  double t_min = 1.0;
  double t_max = 1.2;

  void validate() const;
};

enum class LengthClass { kShort, kNormal, kLong };

inline constexpr LengthClass kAllClasses[] = {LengthClass::kShort, LengthClass::kNormal,
                                              LengthClass::kLong};

std::string_view token_form(LengthClass c);  // "<short>" ...
std::string_view class_name(LengthClass c);  // "short" ...
std::optional<LengthClass> parse_class_name(std::string_view name);
std::optional<LengthClass> parse_token_form(std::string_view token);

// Short if ratio <= t_min, Normal if t_min < ratio <= t_max, Long otherwise.
LengthClass classify(double ratio, const Thresholds& th = {});

struct SentencePair {
  std::string src;
  std::string tgt;
  int src_chars = 0;  // never includes a length token
  int tgt_chars = 0;
  double ratio = 0.0;
  LengthClass length_class = LengthClass::kNormal;
};

// Builds a classified pair. Throws on empty source.
SentencePair make_pair(std::string src, std::string tgt, const Thresholds& th = {});

// Source with a leading length token removed, if present.
std::string_view strip_length_token(std::string_view src);
bool has_length_token(std::string_view src);

SentencePair inject_token(const SentencePair& pair);

struct BucketCounts {
  std::size_t short_count = 0;
  std::size_t normal_count = 0;
  std::size_t long_count = 0;

  std::size_t total() const { return short_count + normal_count + long_count; }
  std::size_t& operator[](LengthClass c);
  std::size_t operator[](LengthClass c) const;
  friend bool operator==(const BucketCounts&, const BucketCounts&) = default;
};

BucketCounts bucket_stats(std::span<const SentencePair> corpus);
std::string bucket_record(std::string_view corpus_name, const BucketCounts& counts);

// Tertile boundaries of the empirical ratio distribution.
Thresholds tertile_thresholds(std::span<const SentencePair> corpus);

// Ingestion. Lines with an empty source are skipped and counted.
struct IngestResult {
  std::vector<SentencePair> pairs;
  std::size_t rejected = 0;
};
IngestResult ingest(const std::vector<std::pair<std::string, std::string>>& raw,
                    const Thresholds& th = {});
std::vector<std::pair<std::string, std::string>> read_parallel(const std::filesystem::path& src,
                                                               const std::filesystem::path& tgt);
std::vector<std::pair<std::string, std::string>> read_tsv(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

// ---------------------------------------------------------------------------
// Synthetic task.
//
// Each lemma has a source word and two target realizations: a short form and a
// long form (short form plus a suffix). A sentence renders the same lemma
// sequence on both sides; the per-pair style picks the realizations:
//   terse    all short forms
//   verbose  all long forms
//   neutral  each lemma's default form, flipped with probability neutral_flip
// Every source sentence is rendered variants_per_source times with
// independently drawn styles, so one source string occurs with several
// target lengths.

enum class Style { kTerse, kNeutral, kVerbose };
std::string_view style_name(Style s);

struct SynthSpec {
  int lexicon_size = 40;
  int src_word_min = 3;
  int src_word_max = 7;
  int short_delta_min = -2;  // short form length = source word length + delta
  int short_delta_max = -1;
  int long_delta_min = 1;    // long form length = source word length + delta
  int long_delta_max = 3;
  int min_words = 3;
  int max_words = 8;
  double terse = 0.25;
  double neutral = 0.5;
  double verbose = 0.25;
  double neutral_long_fraction = 0.5;
  double neutral_flip = 0.1;
  int variants_per_source = 2;
  int pairs = 2000;
  std::uint64_t lexicon_seed = 1;
  std::uint64_t seed = 7;

  void validate() const;
};

struct Lemma {
  std::string source;
  std::string short_form;
  std::string long_form;
  bool neutral_long = false;
};

std::vector<Lemma> build_lexicon(const SynthSpec& spec);

struct SyntheticCorpus {
  std::vector<SentencePair> pairs;
  std::vector<Style> styles;  // parallel to pairs
};

SyntheticCorpus generate_synthetic(const SynthSpec& spec, const Thresholds& th = {});

// ---------------------------------------------------------------------------
// Encoded pairs and batches.

struct EncodedPair {
  std::size_t index = 0;
  std::vector<int> src;  // length token id first when injected
  std::vector<int> tgt;  // no BOS/EOS
  std::vector<int> tgt_char_lens;
  // tgt_cursor[t] = char_length of the detokenized prefix tgt[0..t); size tgt + 1.
  std::vector<int> tgt_cursor;
  int tgt_chars = 0;
  int src_chars = 0;

  std::size_t token_count() const { return src.size() + tgt.size(); }
};

EncodedPair encode_pair(const SentencePair& pair, const textproc::MergeTable& merges,
                        const textproc::Vocabulary& vocab, bool with_token, std::size_t index);

std::vector<EncodedPair> encode_corpus(std::span<const SentencePair> pairs,
                                       const textproc::MergeTable& merges,
                                       const textproc::Vocabulary& vocab, bool with_token);

// Character cursor of every prefix of a token list: entry t is the length of
// the detokenized tokens[0..t).
std::vector<int> prefix_cursors(const std::vector<std::string>& tokens);

// Padded batch. Decoder inputs are BOS + target, outputs target + EOS.
// dec_pos[r * tgt_len + t] is the character cursor of decoder position t,
// the surface length of the target prefix before t.
struct Batch {
  std::size_t rows = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src;
  std::vector<int> src_lengths;
  std::vector<std::uint8_t> src_mask;
  std::vector<int> tgt_in;
  std::vector<int> tgt_out;
  std::vector<int> tgt_lengths;
  std::vector<std::uint8_t> tgt_mask;
  std::vector<int> dec_pos;
  std::vector<int> target_chars;
  std::vector<std::size_t> indices;

  std::size_t real_tokens() const;
};

Batch make_batch(std::span<const EncodedPair* const> pairs);

// Packs pairs into batches of at most max_tokens source+target tokens.
// Pairs are grouped by length and the batch order is shuffled with `seed`.
std::vector<Batch> make_batches(std::span<const EncodedPair> corpus, std::size_t max_tokens,
                                std::uint64_t seed);

}  // namespace lenctl::corpus
