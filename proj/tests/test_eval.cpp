#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lenctl/eval.hpp"

using namespace lenctl::eval;

namespace {

// Counts by direct scanning; no hashing, no shared code with the library.
long long occurrences(const Tokens& s, const Tokens& gram) {
  long long c = 0;
  for (std::size_t i = 0; i + gram.size() <= s.size(); ++i) {
    if (std::equal(gram.begin(), gram.end(), s.begin() + static_cast<long>(i))) ++c;
  }
  return c;
}

double brute_bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, double* bp_out = nullptr) {
  long double log_sum = 0;
  bool zero = false;
  long long c = 0, r = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    c += static_cast<long long>(hyps[s].size());
    r += static_cast<long long>(refs[s].size());
  }
  for (std::size_t n = 1; n <= 4; ++n) {
    long long match = 0, total = 0;
    for (std::size_t s = 0; s < hyps.size(); ++s) {
      const auto& h = hyps[s];
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        Tokens gram(h.begin() + static_cast<long>(i), h.begin() + static_cast<long>(i + n));
        ++total;
        // count each distinct n-gram once, at its first occurrence
        bool first = true;
        for (std::size_t j = 0; j < i; ++j) {
          if (std::equal(gram.begin(), gram.end(), h.begin() + static_cast<long>(j))) first = false;
        }
        if (first) match += std::min(occurrences(h, gram), occurrences(refs[s], gram));
      }
    }
    if (total == 0 || match == 0) zero = true;
    else log_sum += std::log(static_cast<long double>(match) / total);
  }
  long double bp = c >= r ? 1.0L : (c == 0 ? 0.0L : std::exp(1.0L - static_cast<long double>(r) / c));
  if (bp_out) *bp_out = static_cast<double>(bp);
  return zero ? 0.0 : static_cast<double>(100.0L * bp * std::exp(log_sum / 4));
}

std::vector<Tokens> random_corpus(std::mt19937_64& rng, std::size_t n, int vocab, int max_len) {
  std::vector<Tokens> out(n);
  for (auto& s : out) {
    const int len = static_cast<int>(rng() % static_cast<unsigned>(max_len + 1));
    for (int i = 0; i < len; ++i) s.push_back("w" + std::to_string(rng() % static_cast<unsigned>(vocab)));
  }
  return out;
}

// Reference derived from the hypothesis by a few random edits, so that
// higher-order n-grams overlap.
std::vector<Tokens> perturb(std::mt19937_64& rng, const std::vector<Tokens>& hyps, int vocab) {
  std::vector<Tokens> out = hyps;
  for (auto& s : out) {
    const int edits = static_cast<int>(rng() % 3);
    for (int e = 0; e < edits; ++e) {
      const auto w = "w" + std::to_string(rng() % static_cast<unsigned>(vocab));
      const auto at = s.empty() ? 0 : static_cast<long>(rng() % s.size());
      switch (rng() % 3) {
        case 0: s.insert(s.begin() + at, w); break;
        case 1: if (!s.empty()) s.erase(s.begin() + at); break;
        default: if (!s.empty()) s[static_cast<std::size_t>(at)] = w;
      }
    }
  }
  return out;
}

}  // namespace

TEST(Bleu, WorkedExamples) {
  std::vector<std::string> h{"a b c d e"}, r{"a b c d e"};
  auto id = corpus_bleu(h, r);
  EXPECT_DOUBLE_EQ(id.bleu, 100.0);
  EXPECT_EQ(id.brevity_penalty, 1.0);

  std::vector<std::string> h2{"a b c d e"}, r2{"a b c d"};
  auto b2 = corpus_bleu(h2, r2);
  EXPECT_NEAR(b2.precisions[0], 0.8, 1e-15);
  EXPECT_NEAR(b2.precisions[1], 0.75, 1e-15);
  EXPECT_NEAR(b2.precisions[2], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b2.precisions[3], 0.5, 1e-15);
  EXPECT_EQ(b2.brevity_penalty, 1.0);
  EXPECT_NEAR(b2.bleu, 100.0 * std::pow(0.8 * 0.75 * (2.0 / 3.0) * 0.5, 0.25), 1e-12);
  EXPECT_NEAR(b2.bleu, 66.87, 0.01);
  EXPECT_EQ(bleu_star(b2), b2.bleu);

  auto b3 = corpus_bleu(r2, h2);
  EXPECT_NEAR(b3.brevity_penalty, std::exp(-0.25), 1e-15);
  EXPECT_NEAR(b3.bleu, 77.88, 0.01);
  EXPECT_NEAR(bleu_star(b3), 100.0, 1e-12);
  EXPECT_GT(b3.bleu_star, b3.bleu);
}

TEST(Bleu, ZeroPrecisionGivesZero) {
  std::vector<std::string> h{"a b c"}, r{"a b d"};
  auto b = corpus_bleu(h, r);
  EXPECT_EQ(b.bleu, 0.0);
  EXPECT_EQ(bleu_star(b), 0.0);
  EXPECT_NEAR(b.precisions[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b.precisions[1], 0.5, 1e-15);
  EXPECT_EQ(b.precisions[2], 0.0);
}

TEST(Bleu, ClipsRepeatedNgrams) {
  std::vector<std::string> h{"the the the the"}, r{"the cat"};
  auto b = corpus_bleu(h, r);
  EXPECT_EQ(b.matches[0], 1);
  EXPECT_EQ(b.totals[0], 4);
}

TEST(Bleu, MismatchedCountsThrow) {
  std::vector<std::string> h{"a", "b"}, r{"a"};
  EXPECT_THROW(corpus_bleu(h, r), EvalError);
  std::vector<std::string> e;
  EXPECT_THROW(corpus_bleu(e, e), EvalError);
}

TEST(Bleu, MatchesBruteForceOnRandomCorpora) {
  std::mt19937_64 rng(17);
  int nonzero = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 5;
    const int vocab = 2 + static_cast<int>(rng() % 9);
    auto hyps = random_corpus(rng, n, vocab, 9);
    auto refs = trial % 2 ? random_corpus(rng, n, vocab, 9) : perturb(rng, hyps, vocab);
    double bp = 0;
    const double want = brute_bleu(hyps, refs, &bp);
    auto got = corpus_bleu(std::span<const Tokens>(hyps), std::span<const Tokens>(refs));
    EXPECT_NEAR(got.bleu, want, 1e-9) << trial;
    EXPECT_NEAR(got.brevity_penalty, bp, 1e-12);
    if (want > 0) {
      ++nonzero;
      EXPECT_NEAR(got.bleu_star, want / bp, 1e-9);
    }
    EXPECT_GE(got.bleu_star, got.bleu);
    if (got.bleu > 0 && got.hyp_tokens < got.ref_tokens) {
      EXPECT_GT(got.bleu_star, got.bleu);
    }
    if (got.hyp_tokens >= got.ref_tokens) {
      EXPECT_EQ(got.bleu_star, got.bleu);
    }
  }
  EXPECT_GT(nonzero, 100);
}

TEST(Bleu, OrderInvariant) {
  std::mt19937_64 rng(5);
  auto hyps = random_corpus(rng, 6, 4, 10);
  auto refs = random_corpus(rng, 6, 4, 10);
  auto a = corpus_bleu(std::span<const Tokens>(hyps), std::span<const Tokens>(refs));
  std::vector<std::size_t> perm{3, 1, 5, 0, 2, 4};
  std::vector<Tokens> h2, r2;
  for (auto i : perm) {
    h2.push_back(hyps[i]);
    r2.push_back(refs[i]);
  }
  auto b = corpus_bleu(std::span<const Tokens>(h2), std::span<const Tokens>(r2));
  EXPECT_EQ(a.matches, b.matches);
  EXPECT_NEAR(a.bleu, b.bleu, 1e-12);
}

TEST(Bleu, IgnoresCharacterLengths) {
  std::vector<std::string> h{"a bb c", "dd e"}, r{"a bb c x", "dd e"};
  std::vector<std::string> h2{"aaaaa b cccc", "d eeeeeeee"}, r2{"aaaaa b cccc yy", "d eeeeeeee"};
  EXPECT_EQ(corpus_bleu(h, r).bleu, corpus_bleu(h2, r2).bleu);
}

TEST(LengthStats, Examples) {
  std::vector<std::string> src{"abcdefghij", "abcdefghij"};
  auto same = length_stats(src, src, src);
  EXPECT_DOUBLE_EQ(same.lr_src, 1.0);
  EXPECT_DOUBLE_EQ(same.lr_ref, 1.0);
  EXPECT_EQ(same.lr_src_std, 0.0);

  std::vector<std::string> out{"abcdefghi", "abcdefghijk"};
  auto st = length_stats(out, src, src);
  EXPECT_NEAR(st.lr_src, 1.0, 1e-15);
  EXPECT_NEAR(st.lr_src_std, 0.1, 1e-15);
  ASSERT_EQ(st.src_ratios.size(), 2u);
  EXPECT_NEAR(st.src_ratios[0], 0.9, 1e-15);
}

TEST(LengthStats, SkipsLengthTokenAndEmptyLines) {
  std::vector<std::string> out{"abcd", "xyz", "q"}, src{"<long> abcd", "", "qq"}, ref{"abcd", "xyz", ""};
  auto st = length_stats(out, src, ref);
  EXPECT_EQ(st.sentences, 1u);
  EXPECT_EQ(st.excluded, 2u);
  EXPECT_DOUBLE_EQ(st.lr_src, 1.0);
  std::vector<std::string> bad{"a"};
  EXPECT_THROW(length_stats(bad, src, ref), EvalError);
}

TEST(LengthStats, CountsCharactersNotTokens) {
  std::vector<std::string> src{"abc de"}, a{"abcd e"}, b{"a b c d"};
  // "abcd e" and "a b c d" differ in token count, the character ratio sees only code points
  EXPECT_DOUBLE_EQ(length_stats(a, src, src).lr_src, 1.0);
  EXPECT_NEAR(length_stats(b, src, src).lr_src, 7.0 / 6.0, 1e-15);
  std::vector<std::string> u{"ééé"}, us{"abc"};
  EXPECT_DOUBLE_EQ(length_stats(u, us, us).lr_src, 1.0);
}

TEST(LengthStats, OrderInvariant) {
  std::vector<std::string> out{"ab", "abcdef", "abc"}, src{"abc", "abcd", "abcde"};
  std::vector<std::string> out2{"abc", "ab", "abcdef"}, src2{"abcde", "abc", "abcd"};
  auto a = length_stats(out, src, src), b = length_stats(out2, src2, src2);
  EXPECT_NEAR(a.lr_src, b.lr_src, 1e-15);
  EXPECT_NEAR(a.lr_src_std, b.lr_src_std, 1e-15);
}

TEST(CompareRuns, Schema) {
  std::vector<std::string> h{"a b c d"}, r{"a b c d e"};
  RunRow one{"baseline", corpus_bleu(h, r), length_stats(h, r, r)};
  RunRow two{"token", corpus_bleu(r, r), length_stats(r, r, r)};
  std::vector<RunRow> runs{one};
  auto t1 = compare_runs(runs);
  ASSERT_EQ(t1.rows.size(), 1u);
  runs.push_back(two);
  auto t = compare_runs(runs);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "baseline");
  EXPECT_EQ(t.rows[1][0], "token");
  EXPECT_EQ(t.rows[0][1], "77.88");
  EXPECT_EQ(t.rows[0][2], "100.00");
  const auto tsv = t.tsv();
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "label\tBLEU\tBLEU*\tLR_src\tLR_ref\tLR_std");
  EXPECT_NE(t.text().find("BLEU*"), std::string::npos);
  EXPECT_NE(report_record(one.bleu, one.lengths).find("lr_src_std="), std::string::npos);
}
