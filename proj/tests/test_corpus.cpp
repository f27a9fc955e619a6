#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "lenctl/config.hpp"
#include "lenctl/corpus.hpp"

using namespace lenctl::corpus;
using lenctl::textproc::MergeTable;
using lenctl::textproc::Vocabulary;

TEST(Classify, TableBoundaries) {
  EXPECT_EQ(classify(1.0), LengthClass::kShort);
  EXPECT_EQ(classify(1.2), LengthClass::kNormal);
  EXPECT_EQ(classify(1.2000001), LengthClass::kLong);
  EXPECT_EQ(classify(0.3), LengthClass::kShort);
  EXPECT_EQ(classify(1.0000001), LengthClass::kNormal);
}

TEST(Classify, PartitionsPositiveReals) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1e-3, 5.0);
  for (int i = 0; i < 10000; ++i) {
    const double r = u(rng);
    const auto c = classify(r);
    const bool s = r <= 1.0, n = r > 1.0 && r <= 1.2, l = r > 1.2;
    EXPECT_EQ(s + n + l, 1);
    EXPECT_EQ(c == LengthClass::kShort, s);
    EXPECT_EQ(c == LengthClass::kNormal, n);
    EXPECT_EQ(c == LengthClass::kLong, l);
  }
}

TEST(InjectToken, Examples) {
  auto p = make_pair("hello", "hi");
  ASSERT_EQ(p.length_class, LengthClass::kShort);
  auto q = inject_token(p);
  EXPECT_EQ(q.src, "<short> hello");
  EXPECT_EQ(q.src_chars, 5);
  EXPECT_EQ(q.tgt, p.tgt);
  EXPECT_THROW(inject_token(q), CorpusError);

  auto a = make_pair("a", "abc");
  EXPECT_EQ(inject_token(a).src, "<long> a");
}

TEST(MakePair, RejectsEmptySource) {
  EXPECT_THROW(make_pair("   ", "x"), CorpusError);
  auto r = ingest({{"", "x"}, {"ab", "abc"}});
  EXPECT_EQ(r.rejected, 1u);
  EXPECT_EQ(r.pairs.size(), 1u);
}

TEST(BucketStats, Examples) {
  EXPECT_EQ(bucket_stats({}).total(), 0u);
  std::vector<SentencePair> v{make_pair("aa", "a"), make_pair("aaaaaaaaaa", "aaaaaaaaaaa"),
                              make_pair("aa", "aaa")};
  auto c = bucket_stats(v);
  EXPECT_EQ(c.short_count, 1u);
  EXPECT_EQ(c.normal_count, 1u);
  EXPECT_EQ(c.long_count, 1u);
  EXPECT_EQ(bucket_record("t", c), "corpus=t short=1 normal=1 long=1 total=3");
}

TEST(Synthetic, DeterministicAndPartitioned) {
  SynthSpec spec;
  spec.pairs = 1000;
  spec.seed = 7;
  auto a = generate_synthetic(spec);
  auto b = generate_synthetic(spec);
  ASSERT_EQ(a.pairs.size(), 1000u);
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    EXPECT_EQ(a.pairs[i].src, b.pairs[i].src);
    EXPECT_EQ(a.pairs[i].tgt, b.pairs[i].tgt);
  }
  auto counts = bucket_stats(a.pairs);
  EXPECT_EQ(counts.total(), 1000u);
  EXPECT_GT(counts.short_count, 0u);
  EXPECT_GT(counts.normal_count, 0u);
  EXPECT_GT(counts.long_count, 0u);
  for (const auto& p : a.pairs) {
    EXPECT_EQ(p.length_class, classify(static_cast<double>(p.tgt_chars) / p.src_chars));
  }
}

TEST(Synthetic, VerboseLongerThanTerse) {
  SynthSpec spec;
  spec.pairs = 600;
  auto c = generate_synthetic(spec);
  double sv = 0, st = 0;
  int nv = 0, nt = 0;
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    if (c.styles[i] == Style::kVerbose) sv += c.pairs[i].ratio, ++nv;
    if (c.styles[i] == Style::kTerse) st += c.pairs[i].ratio, ++nt;
  }
  ASSERT_GT(nv, 0);
  ASSERT_GT(nt, 0);
  EXPECT_GT(sv / nv, st / nt);
}

TEST(Synthetic, SameSourceSeveralLengths) {
  SynthSpec spec;
  spec.pairs = 400;
  auto c = generate_synthetic(spec);
  std::map<std::string, std::set<int>> lens;
  for (const auto& p : c.pairs) lens[p.src].insert(p.tgt_chars);
  std::size_t multi = 0;
  for (const auto& [s, l] : lens) multi += l.size() > 1;
  EXPECT_GT(multi, lens.size() / 4);
}

TEST(Synthetic, AllTerseEqualLengthIsShort) {
  SynthSpec spec;
  spec.terse = 1.0;
  spec.neutral = 0.0;
  spec.verbose = 0.0;
  spec.short_delta_min = spec.short_delta_max = 0;
  spec.pairs = 200;
  for (const auto& p : generate_synthetic(spec).pairs) {
    EXPECT_DOUBLE_EQ(p.ratio, 1.0);
    EXPECT_EQ(p.length_class, LengthClass::kShort);
  }
}

TEST(Synthetic, InfeasibleSpec) {
  SynthSpec spec;
  spec.lexicon_size = 0;
  EXPECT_THROW(generate_synthetic(spec), CorpusError);
  spec.lexicon_size = 500;
  spec.src_word_min = spec.src_word_max = 1;
  EXPECT_THROW(generate_synthetic(spec), CorpusError);
}

static std::vector<EncodedPair> toy_encoded(int n) {
  SynthSpec spec;
  spec.pairs = n;
  auto c = generate_synthetic(spec);
  std::vector<std::string> text;
  for (const auto& p : c.pairs) text.push_back(p.src), text.push_back(p.tgt);
  auto table = lenctl::textproc::learn_bpe(text, 50);
  auto vocab = lenctl::textproc::build_vocabulary(text, table);
  return encode_corpus(c.pairs, table, vocab, false);
}

TEST(Batches, PartitionAndBudget) {
  auto enc = toy_encoded(100);
  auto batches = make_batches(enc, 200, 9);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    std::size_t tokens = 0;
    for (auto i : b.indices) {
      seen.insert(i);
      tokens += enc[i].token_count();
    }
    EXPECT_LE(tokens, 200u);
  }
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 100u);

  auto again = make_batches(enc, 200, 9);
  ASSERT_EQ(again.size(), batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) EXPECT_EQ(again[i].indices, batches[i].indices);

  EXPECT_EQ(make_batches(std::span(enc).first(1), 100000, 1).size(), 1u);
  EXPECT_THROW(make_batches(enc, 3, 1), CorpusError);
}

TEST(Batches, CursorEndsAtTotalChars) {
  auto enc = toy_encoded(50);
  for (const auto& b : make_batches(enc, 400, 2)) {
    for (std::size_t r = 0; r < b.rows; ++r) {
      const auto& p = enc[b.indices[r]];
      const std::size_t eos_at = p.tgt.size();
      EXPECT_EQ(b.tgt_out[r * b.tgt_len + eos_at], Vocabulary::kEos);
      EXPECT_EQ(b.dec_pos[r * b.tgt_len + eos_at], p.tgt_chars);
      EXPECT_EQ(b.dec_pos[r * b.tgt_len], 0);
    }
  }
}

TEST(Config, ParseAndValidate) {
  auto c = lenctl::KeyValueConfig::parse("# x\nsynth.pairs = 20\ndecode.scales = 0.93, 1.0\n");
  EXPECT_EQ(c.get_int("synth.pairs", 0), 20);
  EXPECT_EQ(c.get_doubles("decode.scales", {}), (std::vector<double>{0.93, 1.0}));
  EXPECT_NO_THROW(c.validate({"synth.pairs", "decode.scales"}));
  try {
    c.validate({"synth.pairs"});
    FAIL();
  } catch (const lenctl::ConfigError& e) {
    EXPECT_EQ(e.key(), "decode.scales");
  }
  EXPECT_THROW(lenctl::KeyValueConfig::parse("a = 1\na = 2\n"), lenctl::ConfigError);
  EXPECT_EQ(c.hash(), lenctl::KeyValueConfig::parse("decode.scales = 0.93, 1.0\nsynth.pairs=20").hash());
}

TEST(PrefixCursors, SurfaceLengthOfEachPrefix) {
  std::vector<std::string> toks{"ab@@", "c", "de", "f@@", "g"};
  EXPECT_EQ(prefix_cursors(toks), (std::vector<int>{0, 2, 3, 6, 8, 9}));
  for (std::size_t t = 0; t <= toks.size(); ++t) {
    std::vector<std::string> prefix(toks.begin(), toks.begin() + static_cast<long>(t));
    // a dangling marker cannot be detokenized; drop it for the oracle
    std::string surface;
    for (const auto& p : prefix) surface += std::string(lenctl::textproc::strip_marker(p)) + (lenctl::textproc::is_continuation(p) ? "" : " ");
    EXPECT_EQ(prefix_cursors(toks)[t], static_cast<int>(lenctl::textproc::char_length(surface)));
  }
}
