#include "lenctl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

#include "lenctl/corpus.hpp"
#include "lenctl/record.hpp"
#include "lenctl/textproc.hpp"

namespace lenctl::eval {

Tokens split_tokens(const std::string& line) {
  Tokens out;
  std::istringstream in(line);
  for (std::string t; in >> t;) out.push_back(std::move(t));
  return out;
}

namespace {

using Counts = std::unordered_map<std::string, long long>;

Counts ngrams(const Tokens& s, std::size_t n) {
  Counts c;
  if (s.size() < n) return c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      key += s[i + k];
      key.push_back('\x1f');
    }
    ++c[key];
  }
  return c;
}

}  // namespace

BleuReport corpus_bleu(std::span<const Tokens> hyps, std::span<const Tokens> refs) {
  if (hyps.size() != refs.size()) {
    throw EvalError("hypothesis and reference counts differ (" + std::to_string(hyps.size()) + " vs " +
                    std::to_string(refs.size()) + ")");
  }
  if (hyps.empty()) throw EvalError("empty corpus");
  BleuReport r;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    r.hyp_tokens += static_cast<long long>(hyps[s].size());
    r.ref_tokens += static_cast<long long>(refs[s].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = ngrams(hyps[s], n);
      const auto g = ngrams(refs[s], n);
      for (const auto& [key, count] : h) {
        r.totals[n - 1] += count;
        auto it = g.find(key);
        if (it != g.end()) r.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = r.totals[n] > 0 ? static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]) : 0.0;
    if (r.precisions[n] == 0.0) zero = true;
    else log_sum += std::log(r.precisions[n]);
  }
  const double c = static_cast<double>(r.hyp_tokens), ref = static_cast<double>(r.ref_tokens);
  if (c >= ref) r.brevity_penalty = 1.0;
  else r.brevity_penalty = c > 0 ? std::exp(1.0 - ref / c) : 0.0;
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  r.bleu_star = bleu_star(r);
  return r;
}

BleuReport corpus_bleu(std::span<const std::string> hyps, std::span<const std::string> refs) {
  std::vector<Tokens> h, g;
  h.reserve(hyps.size());
  g.reserve(refs.size());
  for (const auto& s : hyps) h.push_back(split_tokens(s));
  for (const auto& s : refs) g.push_back(split_tokens(s));
  return corpus_bleu(std::span<const Tokens>(h), std::span<const Tokens>(g));
}

double bleu_star(const BleuReport& r) {
  if (r.bleu == 0.0 || r.brevity_penalty <= 0.0) return 0.0;
  return r.bleu / r.brevity_penalty;
}

LengthStats length_stats(std::span<const std::string> outputs, std::span<const std::string> sources,
                         std::span<const std::string> references) {
  if (outputs.size() != sources.size() || outputs.size() != references.size()) {
    throw EvalError("outputs, sources and references must be aligned");
  }
  LengthStats st;
  double sum_src = 0, sum_ref = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const double src = static_cast<double>(textproc::char_length(corpus::strip_length_token(sources[i])));
    const double ref = static_cast<double>(textproc::char_length(references[i]));
    if (src == 0 || ref == 0) {
      ++st.excluded;
      continue;
    }
    const double out = static_cast<double>(textproc::char_length(outputs[i]));
    st.src_ratios.push_back(out / src);
    sum_src += out / src;
    sum_ref += out / ref;
  }
  st.sentences = st.src_ratios.size();
  if (st.sentences == 0) return st;
  const double n = static_cast<double>(st.sentences);
  st.lr_src = sum_src / n;
  st.lr_ref = sum_ref / n;
  double ss = 0;
  for (double x : st.src_ratios) ss += (x - st.lr_src) * (x - st.lr_src);
  st.lr_src_std = std::sqrt(ss / n);
  return st;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

ComparisonTable compare_runs(std::span<const RunRow> runs) {
  ComparisonTable t;
  for (const auto& r : runs) {
    t.rows.push_back({r.label, fixed(r.bleu.bleu, 2), fixed(r.bleu.bleu_star, 2), fixed(r.lengths.lr_src, 3),
                      fixed(r.lengths.lr_ref, 3), fixed(r.lengths.lr_src_std, 3)});
  }
  return t;
}

std::string ComparisonTable::text() const {
  std::array<std::size_t, 6> width{};
  for (std::size_t c = 0; c < 6; ++c) width[c] = std::string(kColumns[c]).size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < 6; ++c) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](auto&& cell) {
    std::string s;
    for (std::size_t c = 0; c < 6; ++c) {
      std::string v = cell(c);
      if (c == 0) s += v + std::string(width[c] - v.size(), ' ');
      else s += "  " + std::string(width[c] - v.size(), ' ') + v;
    }
    return s + "\n";
  };
  std::string out = line([&](std::size_t c) { return std::string(kColumns[c]); });
  for (const auto& row : rows) out += line([&](std::size_t c) { return row[c]; });
  return out;
}

std::string ComparisonTable::tsv() const {
  std::string out;
  for (std::size_t c = 0; c < 6; ++c) out += std::string(c ? "\t" : "") + kColumns[c];
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < 6; ++c) out += (c ? "\t" : "") + row[c];
    out += "\n";
  }
  return out;
}

std::string report_record(const BleuReport& b, const LengthStats& l) {
  Record r;
  r.add("bleu", b.bleu).add("bleu_star", b.bleu_star).add("bp", b.brevity_penalty);
  for (std::size_t n = 0; n < 4; ++n) r.add("p" + std::to_string(n + 1), b.precisions[n]);
  r.add("hyp_tokens", b.hyp_tokens).add("ref_tokens", b.ref_tokens);
  r.add("lr_src", l.lr_src).add("lr_ref", l.lr_ref).add("lr_src_std", l.lr_src_std);
  r.add("std", "population").add("sentences", l.sentences).add("excluded", l.excluded);
  return r.str();
}

}  // namespace lenctl::eval
