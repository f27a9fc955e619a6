#pragma once

// Greedy and beam-search decoding with a length penalty, length tokens and
// a target character length for length-encoding models.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lenctl/corpus.hpp"
#include "lenctl/encodings.hpp"
#include "lenctl/model/transformer.hpp"
#include "lenctl/textproc.hpp"

namespace lenctl::decode {

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DecodeControl {
  int beam_size = 4;
  double alpha = 0.0;  // length-penalty exponent
  std::optional<corpus::LengthClass> token_class;
  std::optional<int> target_len_chars;  // defaults to the source length
  double scale = 1.0;
  int max_len_tokens = 0;  // 0 = 2 * source tokens + 10

  void validate() const;
  // Checks the settings against the model's length mode.
  void check_mode(model::LengthMode mode) const;
};

// ((5 + len) / 6)^alpha
double length_penalty(int len_tokens, double alpha);

// Target length handed to the length encoding: explicit target or source
// characters, times scale, rounded half up, at least 1.
int resolve_target_len(int src_chars, const DecodeControl& ctrl);

// Surface characters contributed by each token id, used to move the decoder
// cursor as tokens are generated.
class CharTable {
 public:
  explicit CharTable(const textproc::Vocabulary& vocab);
  CharTable(std::vector<int> chars, std::vector<bool> continuation);

  struct State {
    int pos = 0;
    bool pending_space = false;  // previous token ended a word
  };
  State advance(State s, int token) const;
  int size() const { return static_cast<int>(chars_.size()); }

 private:
  std::vector<int> chars_;
  std::vector<bool> continuation_;
};

struct Hypothesis {
  std::vector<int> tokens;   // generated ids, EOS excluded
  std::vector<int> cursors;  // cursor at each decoder position, tokens.size() + 1 entries
  double log_prob = 0.0;
  double score = 0.0;        // log_prob / length_penalty once finished
  encodings::CharCursor cursor;
  bool pending_space = false;
  bool finished = false;
};

// Log-probabilities of the next token for a set of live hypotheses of equal
// length; returns hyps.size() rows of vocab() values.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual int vocab() const = 0;
  virtual std::vector<double> next(std::span<const Hypothesis* const> hyps) = 0;
};

struct SearchSpec {
  int beam_size = 4;
  double alpha = 0.0;
  int max_len = 10;
  int eos = textproc::Vocabulary::kEos;
  int target_len = 1;             // cursor.len of every hypothesis
  std::vector<int> banned;        // never generated
  const CharTable* chars = nullptr;
};

struct SearchResult {
  std::vector<Hypothesis> ranked;  // best first
  bool unfinished = false;         // nothing reached EOS within max_len
};

SearchResult beam_search(StepScorer& scorer, const SearchSpec& spec);
// Argmax rollout.
SearchResult greedy(StepScorer& scorer, const SearchSpec& spec);

struct Translation {
  std::string text;
  double score = 0.0;
  int src_chars = 0;
  int out_chars = 0;
  int target_len = 0;  // 0 when the model has no length encoding
  bool unfinished = false;
  std::string error;   // non-empty when the sentence failed
};

class Translator {
 public:
  Translator(const model::Transformer<float>& model, const textproc::MergeTable& merges,
             const textproc::Vocabulary& vocab);

  Translation translate(std::string_view source, const DecodeControl& ctrl) const;

  // One result per input, in order. A failing sentence yields an empty text
  // and an error message instead of aborting the run.
  std::vector<Translation> translate_corpus(std::span<const std::string> sources,
                                            const DecodeControl& ctrl, int threads = 1) const;

 private:
  const model::Transformer<float>& model_;
  const textproc::MergeTable& merges_;
  const textproc::Vocabulary& vocab_;
  CharTable chars_;
  std::vector<int> banned_;
};

// Detokenizes generated subwords; a trailing continuation marker is dropped.
std::string render_tokens(std::vector<std::string> tokens);

// "src_chars=.. out_chars=.. score=.." line for the metadata sidecar.
std::string metadata_record(const Translation& t);

}  // namespace lenctl::decode
