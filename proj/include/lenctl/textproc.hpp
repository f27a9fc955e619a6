#pragma once

// Subword segmentation and character-length bookkeeping.
//
// Every length computation in the project goes through char_length(): it
// counts Unicode code points of the whitespace-normalized string, including
// the single spaces between words. TokenSeq carries, per subword, the number
// of surface characters it contributes, with the inter-word space attributed
// to the last subword of each non-final word. Summing a prefix of char_lens
// therefore gives the decoder-side character cursor.

#include <cstddef>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lenctl::textproc {

inline constexpr std::string_view kContinuationMarker = "@@";

class TextError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Number of code points in a UTF-8 string.
std::size_t code_points(std::string_view text);

// Collapses runs of whitespace to one space and strips both ends.
std::string normalize_whitespace(std::string_view text);

std::vector<std::string> split_words(std::string_view text);

std::size_t char_length(std::string_view text);

struct Merge {
  std::string left;
  std::string right;

  friend bool operator==(const Merge&, const Merge&) = default;
};

class MergeTable {
 public:
  MergeTable() = default;
  explicit MergeTable(std::vector<Merge> merges);

  const std::vector<Merge>& merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }
  bool empty() const { return merges_.empty(); }

  // Rank of the pair in learned order, or npos.
  std::size_t rank(std::string_view left, std::string_view right) const;

  // Symbols produced by the merges.
  std::vector<std::string> symbols() const;

  std::string_view marker() const { return kContinuationMarker; }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  friend bool operator==(const MergeTable& a, const MergeTable& b) {
    return a.merges_ == b.merges_;
  }

 private:
  std::vector<Merge> merges_;
  std::unordered_map<std::string, std::size_t> ranks_;
};

struct TokenSeq {
  std::vector<std::string> tokens;
  std::vector<int> char_lens;
  int total_chars = 0;
};

// Iteratively merges the most frequent adjacent symbol pair. Ties go to the
// lexicographically smallest (left, right). Stops early when no word has two
// symbols left.
MergeTable learn_bpe(const std::vector<std::string>& corpus, std::size_t num_merges);

// Segments one word into subwords (no markers).
std::vector<std::string> segment_word(std::string_view word, const MergeTable& table);

TokenSeq apply_bpe(std::string_view sentence, const MergeTable& table);

bool is_continuation(std::string_view token);
std::string_view strip_marker(std::string_view token);

// Per-token character contributions for a token list in marker convention.
std::vector<int> token_char_lens(const std::vector<std::string>& tokens);

std::string detokenize(const std::vector<std::string>& tokens);
std::string detokenize(const TokenSeq& seq);

// Merge table file: "#bpe-v1[ key=value...]" header, then "left right" lines.
void write_merge_table(const MergeTable& table, const std::filesystem::path& path,
                       const std::map<std::string, std::string>& header_fields = {});
MergeTable read_merge_table(const std::filesystem::path& path);
MergeTable parse_merge_table(std::string_view text);
std::string format_merge_table(const MergeTable& table,
                               const std::map<std::string, std::string>& header_fields = {});

// Subword <-> id map shared by source and target.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  // Adds a token if absent; returns its id.
  int add(const std::string& token);

  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Specials plus every subword of the segmented corpus, sorted.
Vocabulary build_vocabulary(const std::vector<std::string>& sentences, const MergeTable& table);

}  // namespace lenctl::textproc
