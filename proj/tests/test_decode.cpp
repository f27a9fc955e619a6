#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "lenctl/decode.hpp"
#include "lenctl/model/trainer.hpp"

using namespace lenctl;
using namespace lenctl::decode;

namespace {

// Next-token distribution is a fixed pseudo-random function of the prefix.
class TableScorer : public StepScorer {
 public:
  TableScorer(int vocab, std::uint64_t seed, double sharpness = 2.0)
      : v_(vocab), seed_(seed), sharp_(sharpness) {}

  int vocab() const override { return v_; }

  std::vector<double> dist(const std::vector<int>& prefix) const {
    std::uint64_t h = seed_;
    for (int t : prefix) h = h * 1000003u + static_cast<std::uint64_t>(t) + 1;
    std::mt19937_64 rng(h);
    std::normal_distribution<double> n(0.0, sharp_);
    std::vector<double> z(static_cast<std::size_t>(v_));
    for (auto& x : z) x = n(rng);
    double mx = *std::max_element(z.begin(), z.end()), se = 0;
    for (double x : z) se += std::exp(x - mx);
    for (auto& x : z) x = x - mx - std::log(se);
    return z;
  }

  std::vector<double> next(std::span<const Hypothesis* const> hyps) override {
    ++calls;
    std::vector<double> out;
    for (const auto* h : hyps) {
      auto d = dist(h->tokens);
      out.insert(out.end(), d.begin(), d.end());
    }
    return out;
  }

  int calls = 0;

 private:
  int v_;
  std::uint64_t seed_;
  double sharp_;
};

// Best penalized sequence among all that end in EOS within max_len steps.
std::pair<std::vector<int>, double> exhaustive(const TableScorer& s, const SearchSpec& spec) {
  std::pair<std::vector<int>, double> best{{}, -1e300};
  std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix, double lp) {
    if (static_cast<int>(prefix.size()) >= spec.max_len) return;
    const auto d = s.dist(prefix);
    for (int j = 0; j < s.vocab(); ++j) {
      if (std::find(spec.banned.begin(), spec.banned.end(), j) != spec.banned.end()) continue;
      if (j == spec.eos) {
        const double sc = (lp + d[static_cast<std::size_t>(j)]) /
                          std::pow((5.0 + static_cast<double>(prefix.size()) + 1) / 6.0, spec.alpha);
        if (sc > best.second) best = {prefix, sc};
      } else {
        prefix.push_back(j);
        walk(prefix, lp + d[static_cast<std::size_t>(j)]);
        prefix.pop_back();
      }
    }
  };
  std::vector<int> p;
  walk(p, 0.0);
  return best;
}

}  // namespace

TEST(LengthPenalty, Examples) {
  EXPECT_EQ(length_penalty(1, 0.0), 1.0);
  EXPECT_EQ(length_penalty(40, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(length_penalty(1, 0.5), 1.0);
  EXPECT_NEAR(length_penalty(13, 0.5), std::sqrt(3.0), 1e-15);
  EXPECT_THROW(length_penalty(0, 0.5), DecodeError);
}

TEST(ResolveTargetLen, Examples) {
  DecodeControl c;
  EXPECT_EQ(resolve_target_len(20, c), 20);
  c.scale = 1.2;
  EXPECT_EQ(resolve_target_len(20, c), 24);
  c.scale = 0.93;
  c.target_len_chars = 15;
  EXPECT_EQ(resolve_target_len(20, c), 14);
  c.target_len_chars.reset();
  c.scale = 0.01;
  EXPECT_EQ(resolve_target_len(20, c), 1);
  c.scale = 0.5;
  EXPECT_EQ(resolve_target_len(5, c), 3);
}

TEST(DecodeControl, ModeChecks) {
  DecodeControl c;
  EXPECT_NO_THROW(c.check_mode(model::LengthMode::kNone));
  EXPECT_THROW(c.check_mode(model::LengthMode::kToken), DecodeError);
  c.token_class = corpus::LengthClass::kShort;
  EXPECT_NO_THROW(c.check_mode(model::LengthMode::kTokenRel));
  EXPECT_THROW(c.check_mode(model::LengthMode::kAbs), DecodeError);
  c.token_class.reset();
  c.scale = 1.1;
  EXPECT_THROW(c.check_mode(model::LengthMode::kNone), DecodeError);
  EXPECT_NO_THROW(c.check_mode(model::LengthMode::kRel));
  c.scale = 0;
  EXPECT_THROW(c.validate(), DecodeError);
  c.scale = 1;
  c.beam_size = 0;
  EXPECT_THROW(c.validate(), DecodeError);
}

TEST(CharTable, CursorMatchesDetokenizedLength) {
  textproc::Vocabulary vocab(std::vector<std::string>{"<pad>", "<s>", "</s>", "<unk>", "ab@@", "c", "dé@@", "f",
                                                      "gh", "i@@"});
  CharTable table(vocab);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::string> toks;
    CharTable::State s;
    const int n = static_cast<int>(rng() % 8);
    for (int i = 0; i < n; ++i) {
      const int id = 4 + static_cast<int>(rng() % 6);
      toks.push_back(vocab.token(id));
      s = table.advance(s, id);
    }
    EXPECT_EQ(s.pos, static_cast<int>(textproc::char_length(render_tokens(toks))));
    EXPECT_EQ(corpus::prefix_cursors(toks).back(), s.pos);
  }
}

TEST(BeamSearch, ExhaustiveOracleOnSmallVocab) {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    for (double alpha : {0.0, 0.5, 1.5}) {
      TableScorer s(5, seed, 1.0);
      SearchSpec spec;
      spec.eos = 0;
      spec.max_len = 4;
      spec.alpha = alpha;
      spec.beam_size = 625;
      auto want = exhaustive(s, spec);
      auto got = beam_search(s, spec);
      ASSERT_FALSE(got.unfinished);
      EXPECT_EQ(got.ranked.front().tokens, want.first) << seed << " " << alpha;
      EXPECT_NEAR(got.ranked.front().score, want.second, 1e-12);
    }
  }
}

TEST(BeamSearch, WidthOneIsGreedy) {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    TableScorer s(7, seed);
    SearchSpec spec;
    spec.beam_size = 1;
    spec.eos = 2;
    spec.banned = {0, 1};
    spec.max_len = 12;
    auto b = beam_search(s, spec);
    auto g = greedy(s, spec);
    ASSERT_EQ(b.ranked.size(), 1u);
    EXPECT_EQ(b.ranked[0].tokens, g.ranked[0].tokens);
    EXPECT_EQ(b.ranked[0].log_prob, g.ranked[0].log_prob);
    EXPECT_EQ(b.unfinished, g.unfinished);
  }
}

TEST(BeamSearch, ScoresAreSummedLogProbs) {
  TableScorer s(6, 9);
  SearchSpec spec;
  spec.eos = 0;
  spec.beam_size = 5;
  spec.max_len = 8;
  auto r = beam_search(s, spec);
  for (const auto& h : r.ranked) {
    double lp = 0, prev = 0;
    std::vector<int> prefix;
    for (int t : h.tokens) {
      lp += s.dist(prefix)[static_cast<std::size_t>(t)];
      EXPECT_LE(lp, prev);
      prev = lp;
      prefix.push_back(t);
    }
    lp += s.dist(prefix)[0];
    EXPECT_NEAR(h.log_prob, lp, 1e-12);
    EXPECT_LE(h.log_prob, 0.0);
    EXPECT_TRUE(h.finished);
  }
  for (std::size_t i = 1; i < r.ranked.size(); ++i) EXPECT_GE(r.ranked[i - 1].score, r.ranked[i].score);
}

// Two finished hypotheses with the same log-probability and different lengths.
class TieScorer : public StepScorer {
 public:
  int vocab() const override { return 3; }
  std::vector<double> next(std::span<const Hypothesis* const> hyps) override {
    std::vector<double> out;
    for (const auto* h : hyps) {
      std::vector<double> row(3, -100.0);
      if (h->tokens.empty()) {
        // EOS now, or token 1 then a certain EOS: both total log(0.5)
        row[0] = std::log(0.5);
        row[1] = std::log(0.5);
      } else {
        row[0] = 0.0;
      }
      out.insert(out.end(), row.begin(), row.end());
    }
    return out;
  }
};

TEST(BeamSearch, PenaltyBreaksLengthTies) {
  TieScorer s;
  SearchSpec spec;
  spec.eos = 0;
  spec.beam_size = 2;
  spec.max_len = 3;
  spec.alpha = 0.0;
  auto r0 = beam_search(s, spec);
  ASSERT_GE(r0.ranked.size(), 2u);
  EXPECT_EQ(r0.ranked[0].score, r0.ranked[1].score);
  spec.alpha = 0.5;
  auto r1 = beam_search(s, spec);
  ASSERT_GE(r1.ranked.size(), 2u);
  // logP / penalty with logP < 0: the larger penalty of the longer output
  // brings its score closer to zero
  EXPECT_EQ(r1.ranked[0].tokens, std::vector<int>{1});
  EXPECT_GT(r1.ranked[0].score, r1.ranked[1].score);
}

TEST(BeamSearch, UnfinishedIsFlagged) {
  TableScorer s(5, 4);
  SearchSpec spec;
  spec.eos = 0;
  spec.banned = {0};
  spec.max_len = 6;
  auto r = beam_search(s, spec);
  EXPECT_TRUE(r.unfinished);
  ASSERT_FALSE(r.ranked.empty());
  EXPECT_EQ(r.ranked.front().tokens.size(), 6u);
  EXPECT_FALSE(r.ranked.front().finished);
  auto g = greedy(s, spec);
  EXPECT_TRUE(g.unfinished);
}

TEST(BeamSearch, CursorFollowsGeneratedCharacters) {
  CharTable chars({0, 2, 1, 3}, {false, true, false, false});
  TableScorer s(4, 12);
  SearchSpec spec;
  spec.eos = 0;
  spec.beam_size = 3;
  spec.max_len = 9;
  spec.target_len = 17;
  spec.chars = &chars;
  auto r = beam_search(s, spec);
  const std::vector<std::string> surface{"", "xx@@", "y", "zzz"};
  for (const auto& h : r.ranked) {
    std::vector<std::string> toks;
    for (int t : h.tokens) toks.push_back(surface[static_cast<std::size_t>(t)]);
    EXPECT_EQ(h.cursor.pos, static_cast<long long>(textproc::char_length(render_tokens(toks))));
    EXPECT_EQ(h.cursor.len, 17);
    EXPECT_EQ(h.cursors, corpus::prefix_cursors(toks));
  }
}

namespace {

struct TinySystem {
  textproc::MergeTable merges;
  textproc::Vocabulary vocab;
  std::unique_ptr<model::Transformer<float>> model;
  std::vector<std::string> sources;
};

TinySystem tiny_system(model::LengthMode mode) {
  corpus::SynthSpec spec;
  spec.pairs = 40;
  spec.lexicon_size = 10;
  auto syn = corpus::generate_synthetic(spec);
  std::vector<std::string> text;
  TinySystem s;
  for (auto& p : syn.pairs) {
    text.push_back(p.src);
    text.push_back(p.tgt);
    s.sources.push_back(p.src);
  }
  s.merges = textproc::learn_bpe(text, 30);
  s.vocab = textproc::build_vocabulary(text, s.merges);
  if (model::uses_token(mode)) {
    for (auto c : corpus::kAllClasses) s.vocab.add(std::string(corpus::token_form(c)));
  }
  model::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.ffn_hidden = 32;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.vocab = s.vocab.size();
  cfg.length_mode = mode;
  s.model = std::make_unique<model::Transformer<float>>(cfg, 5);
  return s;
}

}  // namespace

TEST(Translator, CorpusAlignmentAndDeterminism) {
  auto s = tiny_system(model::LengthMode::kTokenRel);
  Translator tr(*s.model, s.merges, s.vocab);
  DecodeControl c;
  c.token_class = corpus::LengthClass::kLong;
  c.max_len_tokens = 6;
  EXPECT_TRUE(tr.translate_corpus({}, c).empty());
  std::vector<std::string> src(s.sources.begin(), s.sources.begin() + 8);
  src[3] = "";
  auto a = tr.translate_corpus(src, c);
  auto b = tr.translate_corpus(src, c, 3);
  ASSERT_EQ(a.size(), src.size());
  ASSERT_EQ(b.size(), src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    EXPECT_EQ(a[i].text, b[i].text);
    EXPECT_EQ(a[i].score, b[i].score);
    EXPECT_EQ(a[i].out_chars, static_cast<int>(textproc::char_length(a[i].text)));
    if (i == 3) {
      EXPECT_FALSE(a[i].error.empty());
    } else {
      EXPECT_TRUE(a[i].error.empty()) << a[i].error;
      EXPECT_EQ(a[i].src_chars, static_cast<int>(textproc::char_length(src[i])));
      EXPECT_EQ(a[i].target_len, a[i].src_chars);
    }
  }
  EXPECT_NE(metadata_record(a[0]).find("src_chars="), std::string::npos);
}

TEST(Translator, BeamOneMatchesGreedyOnModel) {
  auto s = tiny_system(model::LengthMode::kAbs);
  Translator tr(*s.model, s.merges, s.vocab);
  DecodeControl c;
  c.beam_size = 1;
  c.scale = 1.1;
  for (int i = 0; i < 5; ++i) {
    auto t = tr.translate(s.sources[static_cast<std::size_t>(i)], c);
    EXPECT_EQ(t.target_len, resolve_target_len(t.src_chars, c));
  }
  DecodeControl bad;
  bad.token_class = corpus::LengthClass::kShort;
  EXPECT_THROW(tr.translate(s.sources[0], bad), DecodeError);
}

TEST(Translator, NeverEmitsSpecialTokens) {
  auto s = tiny_system(model::LengthMode::kToken);
  Translator tr(*s.model, s.merges, s.vocab);
  DecodeControl c;
  c.token_class = corpus::LengthClass::kShort;
  for (int i = 0; i < 6; ++i) {
    auto t = tr.translate(s.sources[static_cast<std::size_t>(i)], c);
    for (auto form : {"<short>", "<normal>", "<long>", "<unk>", "<s>", "<pad>"}) {
      EXPECT_EQ(t.text.find(form), std::string::npos) << t.text;
    }
  }
}
