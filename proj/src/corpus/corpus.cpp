#include "lenctl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "lenctl/record.hpp"

namespace lenctl::corpus {

void Thresholds::validate() const {
  if (!(t_min > 0.0) || !(t_min <= t_max) || !std::isfinite(t_max)) {
    throw CorpusError("thresholds must satisfy 0 < t_min <= t_max");
  }
}

std::string_view token_form(LengthClass c) {
  switch (c) {
    case LengthClass::kShort: return "<short>";
    case LengthClass::kNormal: return "<normal>";
    case LengthClass::kLong: return "<long>";
  }
  return "<normal>";
}

std::string_view class_name(LengthClass c) {
  switch (c) {
    case LengthClass::kShort: return "short";
    case LengthClass::kNormal: return "normal";
    case LengthClass::kLong: return "long";
  }
  return "normal";
}

std::optional<LengthClass> parse_class_name(std::string_view name) {
  for (auto c : kAllClasses) {
    if (class_name(c) == name) return c;
  }
  return std::nullopt;
}

std::optional<LengthClass> parse_token_form(std::string_view token) {
  for (auto c : kAllClasses) {
    if (token_form(c) == token) return c;
  }
  return std::nullopt;
}

LengthClass classify(double ratio, const Thresholds& th) {
  if (ratio <= th.t_min) return LengthClass::kShort;
  if (ratio <= th.t_max) return LengthClass::kNormal;
  return LengthClass::kLong;
}

SentencePair make_pair(std::string src, std::string tgt, const Thresholds& th) {
  if (has_length_token(src)) throw CorpusError("source already carries a length token");
  SentencePair p;
  p.src_chars = static_cast<int>(textproc::char_length(src));
  p.tgt_chars = static_cast<int>(textproc::char_length(tgt));
  if (p.src_chars == 0) throw CorpusError("empty source sentence");
  p.src = textproc::normalize_whitespace(src);
  p.tgt = textproc::normalize_whitespace(tgt);
  p.ratio = static_cast<double>(p.tgt_chars) / static_cast<double>(p.src_chars);
  p.length_class = classify(p.ratio, th);
  return p;
}

std::string_view strip_length_token(std::string_view src) {
  while (!src.empty() && src.front() == ' ') src.remove_prefix(1);
  for (auto c : kAllClasses) {
    const auto form = token_form(c);
    if (src.substr(0, form.size()) == form &&
        (src.size() == form.size() || src[form.size()] == ' ')) {
      src.remove_prefix(form.size());
      while (!src.empty() && src.front() == ' ') src.remove_prefix(1);
      return src;
    }
  }
  return src;
}

bool has_length_token(std::string_view src) {
  const auto words = textproc::split_words(src);
  return !words.empty() && parse_token_form(words.front()).has_value();
}

SentencePair inject_token(const SentencePair& pair) {
  if (has_length_token(pair.src)) throw CorpusError("double injection");
  SentencePair out = pair;
  out.src = std::string(token_form(pair.length_class)) + " " + pair.src;
  return out;
}

std::size_t& BucketCounts::operator[](LengthClass c) {
  switch (c) {
    case LengthClass::kShort: return short_count;
    case LengthClass::kNormal: return normal_count;
    case LengthClass::kLong: return long_count;
  }
  return normal_count;
}

std::size_t BucketCounts::operator[](LengthClass c) const {
  return const_cast<BucketCounts&>(*this)[c];
}

BucketCounts bucket_stats(std::span<const SentencePair> corpus) {
  BucketCounts counts;
  for (const auto& p : corpus) ++counts[p.length_class];
  return counts;
}

std::string bucket_record(std::string_view corpus_name, const BucketCounts& counts) {
  return Record()
      .add("corpus", corpus_name)
      .add("short", counts.short_count)
      .add("normal", counts.normal_count)
      .add("long", counts.long_count)
      .add("total", counts.total())
      .str();
}

Thresholds tertile_thresholds(std::span<const SentencePair> corpus) {
  if (corpus.empty()) throw CorpusError("cannot derive thresholds from an empty corpus");
  std::vector<double> ratios;
  ratios.reserve(corpus.size());
  for (const auto& p : corpus) ratios.push_back(p.ratio);
  std::sort(ratios.begin(), ratios.end());
  const auto at = [&](double q) {
    const auto i = static_cast<std::size_t>(q * static_cast<double>(ratios.size() - 1));
    return ratios[i];
  };
  Thresholds th{at(1.0 / 3.0), at(2.0 / 3.0)};
  th.validate();
  return th;
}

IngestResult ingest(const std::vector<std::pair<std::string, std::string>>& raw,
                    const Thresholds& th) {
  th.validate();
  IngestResult result;
  for (const auto& [s, t] : raw) {
    if (textproc::char_length(s) == 0) {
      ++result.rejected;
      continue;
    }
    result.pairs.push_back(make_pair(s, t, th));
  }
  return result;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw CorpusError("write failed: " + path.string());
}

std::vector<std::pair<std::string, std::string>> read_parallel(const std::filesystem::path& src,
                                                               const std::filesystem::path& tgt) {
  auto s = read_lines(src);
  auto t = read_lines(tgt);
  if (s.size() != t.size()) {
    throw CorpusError("parallel files differ in line count: " + src.string() + " (" +
                      std::to_string(s.size()) + ") vs " + tgt.string() + " (" +
                      std::to_string(t.size()) + ")");
  }
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out.emplace_back(std::move(s[i]), std::move(t[i]));
  return out;
}

std::vector<std::pair<std::string, std::string>> read_tsv(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  for (auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw CorpusError(path.string() + ":" + std::to_string(line_no) +
                        ": expected exactly one tab");
    }
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view style_name(Style s) {
  switch (s) {
    case Style::kTerse: return "terse";
    case Style::kNeutral: return "neutral";
    case Style::kVerbose: return "verbose";
  }
  return "neutral";
}

void SynthSpec::validate() const {
  if (lexicon_size < 1) throw CorpusError("synth: empty lexicon");
  if (src_word_min < 1 || src_word_max < src_word_min) {
    throw CorpusError("synth: invalid source word length range");
  }
  if (long_delta_min > long_delta_max || short_delta_min > short_delta_max) {
    throw CorpusError("synth: invalid delta range");
  }
  if (long_delta_min <= short_delta_max || long_delta_min < 1) {
    throw CorpusError("synth: long forms must be strictly longer than short forms");
  }
  if (min_words < 1 || max_words < min_words) throw CorpusError("synth: invalid sentence length");
  if (terse < 0 || neutral < 0 || verbose < 0 ||
      std::abs(terse + neutral + verbose - 1.0) > 1e-9) {
    throw CorpusError("synth: style fractions must be nonnegative and sum to 1");
  }
  if (neutral_flip < 0 || neutral_flip > 1 || neutral_long_fraction < 0 ||
      neutral_long_fraction > 1) {
    throw CorpusError("synth: probabilities must lie in [0, 1]");
  }
  if (variants_per_source < 1) throw CorpusError("synth: variants_per_source must be >= 1");
  if (pairs < 0) throw CorpusError("synth: negative pair count");
}

namespace {

std::string random_word(std::mt19937_64& rng, int length, std::string_view alphabet) {
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string w;
  for (int i = 0; i < length; ++i) w.push_back(alphabet[pick(rng)]);
  return w;
}

}  // namespace

std::vector<Lemma> build_lexicon(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.lexicon_seed);
  constexpr std::string_view kSourceLetters = "abcdefghijklm";
  constexpr std::string_view kTargetLetters = "nopqrstuvwxyz";

  const int max_suffix = spec.long_delta_max - spec.short_delta_min;
  std::vector<std::string> suffixes(static_cast<std::size_t>(max_suffix + 1));
  for (int len = 1; len <= max_suffix; ++len) {
    suffixes[static_cast<std::size_t>(len)] = random_word(rng, len, kTargetLetters);
  }

  std::uniform_int_distribution<int> src_len(spec.src_word_min, spec.src_word_max);
  std::uniform_int_distribution<int> short_delta(spec.short_delta_min, spec.short_delta_max);
  std::uniform_int_distribution<int> long_delta(spec.long_delta_min, spec.long_delta_max);
  std::bernoulli_distribution neutral_long(spec.neutral_long_fraction);

  std::set<std::string> used;
  std::vector<Lemma> lexicon;
  int attempts = 0;
  while (static_cast<int>(lexicon.size()) < spec.lexicon_size) {
    if (++attempts > spec.lexicon_size * 1000) {
      throw CorpusError("synth: lexicon infeasible (cannot draw distinct words)");
    }
    const int n = src_len(rng);
    Lemma lemma;
    lemma.source = random_word(rng, n, kSourceLetters);
    const int short_len = std::max(1, n + short_delta(rng));
    const int long_len = n + long_delta(rng);
    lemma.short_form = random_word(rng, short_len, kTargetLetters);
    lemma.long_form = lemma.short_form + suffixes[static_cast<std::size_t>(long_len - short_len)];
    lemma.neutral_long = neutral_long(rng);
    if (used.count(lemma.source) || used.count(lemma.short_form) || used.count(lemma.long_form)) {
      continue;
    }
    used.insert(lemma.source);
    used.insert(lemma.short_form);
    used.insert(lemma.long_form);
    lexicon.push_back(std::move(lemma));
  }
  return lexicon;
}

SyntheticCorpus generate_synthetic(const SynthSpec& spec, const Thresholds& th) {
  th.validate();
  const auto lexicon = build_lexicon(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> words(spec.min_words, spec.max_words);
  std::uniform_int_distribution<std::size_t> lemma_pick(0, lexicon.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticCorpus out;
  out.pairs.reserve(static_cast<std::size_t>(spec.pairs));
  std::vector<std::size_t> sentence;
  for (int p = 0; p < spec.pairs; ++p) {
    if (p % spec.variants_per_source == 0) {
      sentence.assign(static_cast<std::size_t>(words(rng)), 0);
      for (auto& l : sentence) l = lemma_pick(rng);
    }
    const double u = unit(rng);
    const Style style = u < spec.terse                  ? Style::kTerse
                        : u < spec.terse + spec.neutral ? Style::kNeutral
                                                        : Style::kVerbose;
    std::string src;
    std::string tgt;
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      const auto& lemma = lexicon[sentence[i]];
      bool use_long = false;
      switch (style) {
        case Style::kTerse: use_long = false; break;
        case Style::kVerbose: use_long = true; break;
        case Style::kNeutral:
          use_long = lemma.neutral_long;
          if (unit(rng) < spec.neutral_flip) use_long = !use_long;
          break;
      }
      if (i > 0) {
        src.push_back(' ');
        tgt.push_back(' ');
      }
      src += lemma.source;
      tgt += use_long ? lemma.long_form : lemma.short_form;
    }
    out.pairs.push_back(make_pair(std::move(src), std::move(tgt), th));
    out.styles.push_back(style);
  }
  return out;
}

// ---------------------------------------------------------------------------

EncodedPair encode_pair(const SentencePair& pair, const textproc::MergeTable& merges,
                        const textproc::Vocabulary& vocab, bool with_token, std::size_t index) {
  EncodedPair e;
  e.index = index;
  if (with_token) {
    const auto form = std::string(token_form(pair.length_class));
    if (!vocab.contains(form)) throw CorpusError("vocabulary lacks length token " + form);
    e.src.push_back(vocab.id(form));
  }
  const auto src_tokens = textproc::apply_bpe(strip_length_token(pair.src), merges);
  const auto src_ids = vocab.encode(src_tokens.tokens);
  e.src.insert(e.src.end(), src_ids.begin(), src_ids.end());
  e.src_chars = src_tokens.total_chars;
  const auto tgt_tokens = textproc::apply_bpe(pair.tgt, merges);
  e.tgt = vocab.encode(tgt_tokens.tokens);
  e.tgt_char_lens = tgt_tokens.char_lens;
  e.tgt_cursor = prefix_cursors(tgt_tokens.tokens);
  e.tgt_chars = tgt_tokens.total_chars;
  return e;
}

std::vector<int> prefix_cursors(const std::vector<std::string>& tokens) {
  std::vector<int> out(tokens.size() + 1, 0);
  int chars = 0;
  bool pending_space = false;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (pending_space) ++chars;
    chars += static_cast<int>(textproc::code_points(textproc::strip_marker(tokens[t])));
    pending_space = !textproc::is_continuation(tokens[t]);
    out[t + 1] = chars;
  }
  return out;
}

std::vector<EncodedPair> encode_corpus(std::span<const SentencePair> pairs,
                                       const textproc::MergeTable& merges,
                                       const textproc::Vocabulary& vocab, bool with_token) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.push_back(encode_pair(pairs[i], merges, vocab, with_token, i));
  }
  return out;
}

std::size_t Batch::real_tokens() const {
  std::size_t n = 0;
  for (auto v : src_mask) n += v;
  for (auto v : tgt_mask) n += v;
  return n;
}

Batch make_batch(std::span<const EncodedPair* const> pairs) {
  using textproc::Vocabulary;
  Batch b;
  b.rows = pairs.size();
  for (const auto* p : pairs) {
    if (p->src.empty()) throw CorpusError("pair " + std::to_string(p->index) + " has no source tokens");
    b.src_len = std::max(b.src_len, p->src.size());
    b.tgt_len = std::max(b.tgt_len, p->tgt.size() + 1);
  }
  b.src.assign(b.rows * b.src_len, Vocabulary::kPad);
  b.src_mask.assign(b.rows * b.src_len, 0);
  b.tgt_in.assign(b.rows * b.tgt_len, Vocabulary::kPad);
  b.tgt_out.assign(b.rows * b.tgt_len, Vocabulary::kPad);
  b.tgt_mask.assign(b.rows * b.tgt_len, 0);
  b.dec_pos.assign(b.rows * b.tgt_len, 0);
  for (std::size_t r = 0; r < b.rows; ++r) {
    const auto& p = *pairs[r];
    for (std::size_t i = 0; i < p.src.size(); ++i) {
      b.src[r * b.src_len + i] = p.src[i];
      b.src_mask[r * b.src_len + i] = 1;
    }
    const std::size_t n = p.tgt.size();
    if (p.tgt_cursor.size() != n + 1) {
      throw CorpusError("pair " + std::to_string(p.index) + " lacks target cursors");
    }
    for (std::size_t t = 0; t < b.tgt_len; ++t) {
      const std::size_t at = r * b.tgt_len + t;
      b.dec_pos[at] = p.tgt_cursor[std::min(t, n)];
      if (t <= n) {
        b.tgt_in[at] = t == 0 ? Vocabulary::kBos : p.tgt[t - 1];
        b.tgt_out[at] = t < n ? p.tgt[t] : Vocabulary::kEos;
        b.tgt_mask[at] = 1;
      }
    }
    b.src_lengths.push_back(static_cast<int>(p.src.size()));
    b.tgt_lengths.push_back(static_cast<int>(n + 1));
    b.target_chars.push_back(p.tgt_chars);
    b.indices.push_back(p.index);
  }
  return b;
}

std::vector<Batch> make_batches(std::span<const EncodedPair> corpus, std::size_t max_tokens,
                                std::uint64_t seed) {
  for (const auto& p : corpus) {
    if (p.token_count() > max_tokens) {
      throw CorpusError("pair " + std::to_string(p.index) + " has " +
                        std::to_string(p.token_count()) + " tokens, exceeding the batch budget of " +
                        std::to_string(max_tokens));
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::uint64_t> keys(corpus.size());
  for (auto& k : keys) k = rng();
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ta = corpus[a].token_count();
    const auto tb = corpus[b].token_count();
    return ta != tb ? ta < tb : keys[a] < keys[b];
  });

  std::vector<Batch> batches;
  std::vector<const EncodedPair*> current;
  std::size_t used = 0;
  for (auto i : order) {
    const auto& p = corpus[i];
    if (!current.empty() && used + p.token_count() > max_tokens) {
      batches.push_back(make_batch(current));
      current.clear();
      used = 0;
    }
    current.push_back(&p);
    used += p.token_count();
  }
  if (!current.empty()) batches.push_back(make_batch(current));
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

}  // namespace lenctl::corpus
