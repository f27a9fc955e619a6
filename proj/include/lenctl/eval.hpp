#pragma once

// Corpus BLEU with multi-bleu semantics (single reference, 4-grams,
// whitespace tokens, case-sensitive), BLEU without the brevity penalty, and
// character length ratios.

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lenctl::eval {

class EvalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Tokens = std::vector<std::string>;

struct BleuReport {
  std::array<double, 4> precisions{};  // p1..p4
  std::array<long long, 4> matches{};
  std::array<long long, 4> totals{};
  double brevity_penalty = 0.0;
  double bleu = 0.0;       // 0-100
  double bleu_star = 0.0;  // 0-100
  long long hyp_tokens = 0;
  long long ref_tokens = 0;
};

Tokens split_tokens(const std::string& line);

BleuReport corpus_bleu(std::span<const Tokens> hyps, std::span<const Tokens> refs);
BleuReport corpus_bleu(std::span<const std::string> hyps, std::span<const std::string> refs);

// BLEU with the brevity penalty removed.
double bleu_star(const BleuReport& r);

struct LengthStats {
  double lr_src = 0.0;
  double lr_ref = 0.0;
  double lr_src_std = 0.0;      // population standard deviation
  std::size_t sentences = 0;    // used in the statistics
  std::size_t excluded = 0;     // empty source or reference
  std::vector<double> src_ratios;
};

// Length tokens at the start of a source line are not counted.
LengthStats length_stats(std::span<const std::string> outputs, std::span<const std::string> sources,
                         std::span<const std::string> references);

struct RunRow {
  std::string label;
  BleuReport bleu;
  LengthStats lengths;
};

struct ComparisonTable {
  static constexpr std::array<const char*, 6> kColumns = {"label", "BLEU", "BLEU*", "LR_src", "LR_ref",
                                                          "LR_std"};
  std::vector<std::array<std::string, 6>> rows;

  std::string text() const;  // aligned columns
  std::string tsv() const;
};

ComparisonTable compare_runs(std::span<const RunRow> runs);

// Flat "key=value" record of a report.
std::string report_record(const BleuReport& b, const LengthStats& l);

}  // namespace lenctl::eval
