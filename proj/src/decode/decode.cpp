#include "lenctl/decode.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "lenctl/record.hpp"

namespace lenctl::decode {

void DecodeControl::validate() const {
  if (beam_size < 1) throw DecodeError("beam size must be >= 1");
  if (!(scale > 0) || !std::isfinite(scale)) throw DecodeError("scale must be a positive number");
  if (!(alpha >= 0) || !std::isfinite(alpha)) throw DecodeError("alpha must be >= 0");
  if (target_len_chars && *target_len_chars < 1) throw DecodeError("target length must be a positive integer");
  if (max_len_tokens < 0) throw DecodeError("max_len_tokens must be >= 0");
}

void DecodeControl::check_mode(model::LengthMode mode) const {
  validate();
  const auto name = std::string(model::mode_name(mode));
  if (model::uses_token(mode) && !token_class) {
    throw DecodeError("length mode " + name + " needs a length class (short, normal or long)");
  }
  if (!model::uses_token(mode) && token_class) {
    throw DecodeError("length mode " + name + " does not take a length class");
  }
  if (!model::uses_encoding(mode) && (target_len_chars || scale != 1.0)) {
    throw DecodeError("length mode " + name + " has no length encoding; target length and scale do not apply");
  }
}

double length_penalty(int len_tokens, double alpha) {
  if (len_tokens < 1) throw DecodeError("length penalty needs len >= 1");
  if (alpha == 0.0) return 1.0;
  return std::pow((5.0 + len_tokens) / 6.0, alpha);
}

int resolve_target_len(int src_chars, const DecodeControl& ctrl) {
  const double base = ctrl.target_len_chars ? *ctrl.target_len_chars : src_chars;
  // scale is usually a short decimal; nudge before flooring so 13.95 stays 13.95
  const double scaled = base * ctrl.scale;
  const double rounded = std::floor(scaled + 0.5 + 1e-9 * std::max(1.0, std::abs(scaled)));
  return std::max(1, static_cast<int>(rounded));
}

CharTable::CharTable(const textproc::Vocabulary& vocab) {
  const int n = vocab.size();
  chars_.assign(static_cast<std::size_t>(n), 0);
  continuation_.assign(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n; ++i) {
    const auto& tok = vocab.token(i);
    if (i <= textproc::Vocabulary::kUnk || corpus::parse_token_form(tok)) continue;
    chars_[static_cast<std::size_t>(i)] = static_cast<int>(textproc::code_points(textproc::strip_marker(tok)));
    continuation_[static_cast<std::size_t>(i)] = textproc::is_continuation(tok);
  }
}

CharTable::CharTable(std::vector<int> chars, std::vector<bool> continuation)
    : chars_(std::move(chars)), continuation_(std::move(continuation)) {
  if (chars_.size() != continuation_.size()) throw DecodeError("char table size mismatch");
}

CharTable::State CharTable::advance(State s, int token) const {
  const auto i = static_cast<std::size_t>(token);
  if (s.pending_space) ++s.pos;
  s.pos += chars_.at(i);
  s.pending_space = !continuation_[i];
  return s;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Hypothesis initial(const SearchSpec& spec) {
  Hypothesis h;
  h.cursors = {0};
  h.cursor = {0, spec.target_len};
  return h;
}

Hypothesis extend(const Hypothesis& h, int token, double lp, const SearchSpec& spec) {
  Hypothesis out = h;
  out.log_prob += lp;
  if (token == spec.eos) {
    out.finished = true;
    out.score = out.log_prob / length_penalty(static_cast<int>(out.tokens.size()) + 1, spec.alpha);
    return out;
  }
  CharTable::State s{static_cast<int>(h.cursor.pos), h.pending_space};
  if (spec.chars) s = spec.chars->advance(s, token);
  out.tokens.push_back(token);
  out.cursor.pos = s.pos;
  out.pending_space = s.pending_space;
  out.cursors.push_back(s.pos);
  return out;
}

std::vector<double> score_step(StepScorer& scorer, const std::vector<Hypothesis>& live,
                               const SearchSpec& spec) {
  std::vector<const Hypothesis*> ptrs;
  for (const auto& h : live) ptrs.push_back(&h);
  auto lp = scorer.next(ptrs);
  const std::size_t v = static_cast<std::size_t>(scorer.vocab());
  if (lp.size() != live.size() * v) throw DecodeError("scorer returned the wrong number of scores");
  for (std::size_t r = 0; r < live.size(); ++r) {
    for (int b : spec.banned) lp[r * v + static_cast<std::size_t>(b)] = kNegInf;
  }
  return lp;
}

void rank(std::vector<Hypothesis>& hyps, bool finished) {
  std::stable_sort(hyps.begin(), hyps.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return finished ? a.score > b.score : a.log_prob > b.log_prob;
  });
}

void check(const SearchSpec& spec) {
  if (spec.beam_size < 1) throw DecodeError("beam size must be >= 1");
  if (spec.max_len < 1) throw DecodeError("max_len must be >= 1");
  if (spec.target_len < 1) throw DecodeError("target length must be >= 1");
}

}  // namespace

SearchResult beam_search(StepScorer& scorer, const SearchSpec& spec) {
  check(spec);
  const std::size_t beam = static_cast<std::size_t>(spec.beam_size);
  const std::size_t v = static_cast<std::size_t>(scorer.vocab());
  std::vector<Hypothesis> live{initial(spec)}, finished;

  for (int step = 0; step < spec.max_len && !live.empty() && finished.size() < beam; ++step) {
    const auto lp = score_step(scorer, live, spec);
    struct Cand {
      double total;
      std::size_t hyp;
      int token;
    };
    std::vector<Cand> cands;
    cands.reserve(live.size() * v);
    for (std::size_t h = 0; h < live.size(); ++h) {
      for (std::size_t j = 0; j < v; ++j) {
        const double s = lp[h * v + j];
        if (s == kNegInf) continue;
        cands.push_back({live[h].log_prob + s, h, static_cast<int>(j)});
      }
    }
    const std::size_t keep = std::min(cands.size(), 2 * beam);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.total != b.total) return a.total > b.total;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep && next.size() < beam; ++i) {
      const auto& c = cands[i];
      const double s = lp[c.hyp * v + static_cast<std::size_t>(c.token)];
      if (c.token == spec.eos) {
        // only EOS among the top `beam` candidates ends a hypothesis
        if (i < beam) finished.push_back(extend(live[c.hyp], c.token, s, spec));
        continue;
      }
      next.push_back(extend(live[c.hyp], c.token, s, spec));
    }
    live = std::move(next);
  }

  SearchResult out;
  if (finished.empty()) {
    out.unfinished = true;
    for (auto& h : live) h.score = h.log_prob / length_penalty(std::max<int>(1, static_cast<int>(h.tokens.size())), spec.alpha);
    rank(live, true);
    out.ranked = std::move(live);
  } else {
    rank(finished, true);
    out.ranked = std::move(finished);
  }
  return out;
}

SearchResult greedy(StepScorer& scorer, const SearchSpec& spec) {
  check(spec);
  const std::size_t v = static_cast<std::size_t>(scorer.vocab());
  std::vector<Hypothesis> live{initial(spec)};
  for (int step = 0; step < spec.max_len; ++step) {
    const auto lp = score_step(scorer, live, spec);
    std::size_t best = 0;
    for (std::size_t j = 1; j < v; ++j) {
      if (lp[j] > lp[best]) best = j;
    }
    if (lp[best] == kNegInf) break;
    auto h = extend(live[0], static_cast<int>(best), lp[best], spec);
    if (h.finished) return SearchResult{{std::move(h)}, false};
    live[0] = std::move(h);
  }
  SearchResult out;
  out.unfinished = true;
  live[0].score = live[0].log_prob / length_penalty(std::max<int>(1, static_cast<int>(live[0].tokens.size())), spec.alpha);
  out.ranked = std::move(live);
  return out;
}

namespace {

class ModelScorer final : public StepScorer {
 public:
  ModelScorer(const model::Transformer<float>& m, std::span<const int> src, int target_len)
      : model_(m), mem_(m.encode(src)), target_len_(target_len) {}

  int vocab() const override { return model_.config().vocab; }

  std::vector<double> next(std::span<const Hypothesis* const> hyps) override {
    std::vector<std::vector<int>> prefixes, cursors;
    prefixes.reserve(hyps.size());
    cursors.reserve(hyps.size());
    for (const auto* h : hyps) {
      prefixes.push_back(h->tokens);
      cursors.push_back(h->cursors);
    }
    auto lp = model_.next_log_probs(mem_, prefixes, cursors, target_len_);
    return std::vector<double>(lp.begin(), lp.end());
  }

 private:
  const model::Transformer<float>& model_;
  model::Transformer<float>::Memory mem_;
  int target_len_;
};

}  // namespace

Translator::Translator(const model::Transformer<float>& model, const textproc::MergeTable& merges,
                       const textproc::Vocabulary& vocab)
    : model_(model), merges_(merges), vocab_(vocab), chars_(vocab) {
  if (vocab.size() != model.config().vocab) throw DecodeError("vocabulary does not match the model");
  banned_ = {textproc::Vocabulary::kPad, textproc::Vocabulary::kBos, textproc::Vocabulary::kUnk};
  for (auto c : corpus::kAllClasses) {
    const auto form = corpus::token_form(c);
    if (vocab.contains(form)) banned_.push_back(vocab.id(form));
  }
}

Translation Translator::translate(std::string_view source, const DecodeControl& ctrl) const {
  const auto mode = model_.config().length_mode;
  ctrl.check_mode(mode);
  const auto src = textproc::apply_bpe(corpus::strip_length_token(source), merges_);
  if (src.tokens.empty()) throw DecodeError("empty source sentence");
  std::vector<int> ids;
  if (ctrl.token_class) {
    const auto form = corpus::token_form(*ctrl.token_class);
    if (!vocab_.contains(form)) throw DecodeError("model vocabulary has no " + std::string(form) + " token");
    ids.push_back(vocab_.id(form));
  }
  for (int id : vocab_.encode(src.tokens)) ids.push_back(id);

  Translation t;
  t.src_chars = src.total_chars;
  SearchSpec spec;
  spec.beam_size = ctrl.beam_size;
  spec.alpha = ctrl.alpha;
  spec.max_len = ctrl.max_len_tokens > 0 ? ctrl.max_len_tokens : 2 * static_cast<int>(src.tokens.size()) + 10;
  spec.banned = banned_;
  spec.chars = &chars_;
  if (model::uses_encoding(mode)) {
    t.target_len = resolve_target_len(src.total_chars, ctrl);
    spec.target_len = t.target_len;
  }
  ModelScorer scorer(model_, ids, spec.target_len);
  auto res = beam_search(scorer, spec);
  const auto& best = res.ranked.front();
  std::vector<std::string> toks;
  toks.reserve(best.tokens.size());
  for (int id : best.tokens) toks.push_back(vocab_.token(id));
  t.text = render_tokens(std::move(toks));
  t.out_chars = static_cast<int>(textproc::char_length(t.text));
  t.score = best.score;
  t.unfinished = res.unfinished;
  return t;
}

std::vector<Translation> Translator::translate_corpus(std::span<const std::string> sources,
                                                      const DecodeControl& ctrl, int threads) const {
  ctrl.check_mode(model_.config().length_mode);
  std::vector<Translation> out(sources.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < sources.size(); i = next++) {
      try {
        out[i] = translate(sources[i], ctrl);
      } catch (const std::exception& e) {
        out[i] = Translation{};
        out[i].src_chars = static_cast<int>(textproc::char_length(corpus::strip_length_token(sources[i])));
        out[i].error = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(sources.size())));
  if (n == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(work);
  }
  return out;
}

std::string render_tokens(std::vector<std::string> tokens) {
  if (!tokens.empty() && textproc::is_continuation(tokens.back())) {
    tokens.back() = std::string(textproc::strip_marker(tokens.back()));
  }
  return textproc::detokenize(tokens);
}

std::string metadata_record(const Translation& t) {
  Record r;
  r.add("src_chars", t.src_chars).add("out_chars", t.out_chars).add("score", t.score);
  if (t.target_len > 0) r.add("target_len", t.target_len);
  if (t.unfinished) r.add("unfinished", true);
  if (!t.error.empty()) r.add("error", t.error);
  return r.str();
}

}  // namespace lenctl::decode
