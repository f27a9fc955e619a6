#include "lenctl/textproc.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace lenctl::textproc {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Splits a UTF-8 word into code-point strings.
std::vector<std::string> code_point_symbols(std::string_view word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    std::size_t j = i + 1;
    while (j < word.size() && (static_cast<unsigned char>(word[j]) & 0xC0) == 0x80) ++j;
    out.emplace_back(word.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string pair_key(std::string_view left, std::string_view right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key.append(left);
  key.push_back(' ');
  key.append(right);
  return key;
}

void merge_in_place(std::vector<std::string>& symbols, const std::string& left,
                    const std::string& right) {
  std::vector<std::string> merged;
  merged.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      merged.push_back(left + right);
      i += 2;
    } else {
      merged.push_back(std::move(symbols[i]));
      ++i;
    }
  }
  symbols = std::move(merged);
}

}  // namespace

std::size_t code_points(std::string_view text) {
  std::size_t n = 0;
  for (char c : text) {
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::size_t char_length(std::string_view text) {
  return code_points(normalize_whitespace(text));
}

MergeTable::MergeTable(std::vector<Merge> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    const auto& m = merges_[i];
    if (m.left.empty() || m.right.empty()) {
      throw TextError("merge " + std::to_string(i) + " has an empty symbol");
    }
    auto [it, inserted] = ranks_.emplace(pair_key(m.left, m.right), i);
    if (!inserted) {
      throw TextError("duplicate merge (" + m.left + ", " + m.right + ")");
    }
  }
}

std::size_t MergeTable::rank(std::string_view left, std::string_view right) const {
  auto it = ranks_.find(pair_key(left, right));
  return it == ranks_.end() ? npos : it->second;
}

std::vector<std::string> MergeTable::symbols() const {
  std::set<std::string> out;
  for (const auto& m : merges_) out.insert(m.left + m.right);
  return {out.begin(), out.end()};
}

MergeTable learn_bpe(const std::vector<std::string>& corpus, std::size_t num_merges) {
  std::map<std::string, long> word_freq;
  for (const auto& sentence : corpus) {
    for (auto& w : split_words(sentence)) ++word_freq[w];
  }
  if (word_freq.empty()) throw TextError("empty corpus");

  std::vector<std::vector<std::string>> words;
  std::vector<long> freqs;
  words.reserve(word_freq.size());
  for (const auto& [w, f] : word_freq) {
    words.push_back(code_point_symbols(w));
    freqs.push_back(f);
  }

  std::vector<Merge> merges;
  while (merges.size() < num_merges) {
    std::map<std::pair<std::string, std::string>, long> counts;
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& syms = words[w];
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) counts[{syms[i], syms[i + 1]}] += freqs[w];
    }
    if (counts.empty()) break;
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [left, right] = best->first;
    for (auto& syms : words) merge_in_place(syms, left, right);
    merges.push_back({left, right});
  }
  return MergeTable(std::move(merges));
}

std::vector<std::string> segment_word(std::string_view word, const MergeTable& table) {
  auto symbols = code_point_symbols(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = MergeTable::npos;
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const std::size_t r = table.rank(symbols[i], symbols[i + 1]);
      if (r < best_rank) {
        best_rank = r;
        best_at = i;
      }
    }
    if (best_rank == MergeTable::npos) break;
    const std::string left = symbols[best_at];
    const std::string right = symbols[best_at + 1];
    merge_in_place(symbols, left, right);
  }
  return symbols;
}

TokenSeq apply_bpe(std::string_view sentence, const MergeTable& table) {
  TokenSeq seq;
  const auto words = split_words(sentence);
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto subwords = segment_word(words[w], table);
    for (std::size_t j = 0; j < subwords.size(); ++j) {
      int chars = static_cast<int>(code_points(subwords[j]));
      if (j + 1 < subwords.size()) {
        seq.tokens.push_back(subwords[j] + std::string(kContinuationMarker));
      } else {
        seq.tokens.push_back(subwords[j]);
        if (w + 1 < words.size()) chars += 1;
      }
      seq.char_lens.push_back(chars);
      seq.total_chars += chars;
    }
  }
  return seq;
}

bool is_continuation(std::string_view token) {
  return token.size() >= kContinuationMarker.size() &&
         token.substr(token.size() - kContinuationMarker.size()) == kContinuationMarker;
}

std::string_view strip_marker(std::string_view token) {
  return is_continuation(token) ? token.substr(0, token.size() - kContinuationMarker.size())
                                : token;
}

std::vector<int> token_char_lens(const std::vector<std::string>& tokens) {
  std::vector<int> lens;
  lens.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    int chars = static_cast<int>(code_points(strip_marker(tokens[i])));
    if (!is_continuation(tokens[i]) && i + 1 < tokens.size()) chars += 1;
    lens.push_back(chars);
  }
  return lens;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& tok = tokens[i];
    const auto body = strip_marker(tok);
    if (body.empty()) throw TextError("empty subword at position " + std::to_string(i));
    for (char c : body) {
      if (is_space(c)) throw TextError("whitespace inside subword at position " + std::to_string(i));
    }
    out.append(body);
    if (is_continuation(tok)) {
      if (i + 1 == tokens.size()) throw TextError("dangling continuation marker at end of sequence");
    } else if (i + 1 < tokens.size()) {
      out.push_back(' ');
    }
  }
  return out;
}

std::string detokenize(const TokenSeq& seq) {
  if (seq.char_lens.size() != seq.tokens.size()) {
    throw TextError("token/char_lens size mismatch");
  }
  std::string out = detokenize(seq.tokens);
  if (static_cast<int>(char_length(out)) != seq.total_chars) {
    throw TextError("total_chars does not match detokenized length");
  }
  return out;
}

std::string format_merge_table(const MergeTable& table,
                               const std::map<std::string, std::string>& header_fields) {
  std::ostringstream os;
  os << "#bpe-v1";
  for (const auto& [k, v] : header_fields) os << ' ' << k << '=' << v;
  os << '\n';
  for (const auto& m : table.merges()) os << m.left << ' ' << m.right << '\n';
  return os.str();
}

void write_merge_table(const MergeTable& table, const std::filesystem::path& path,
                       const std::map<std::string, std::string>& header_fields) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TextError("cannot write " + path.string());
  out << format_merge_table(table, header_fields);
  if (!out) throw TextError("write failed: " + path.string());
}

MergeTable parse_merge_table(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  std::vector<Merge> merges;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      const auto words = split_words(line);
      if (words.empty() || words.front() != "#bpe-v1") {
        throw TextError("merge table: missing #bpe-v1 header");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_words(line);
    if (fields.empty()) continue;
    if (fields.size() != 2) {
      throw TextError("merge table line " + std::to_string(line_no) + ": expected 'left right'");
    }
    merges.push_back({fields[0], fields[1]});
  }
  if (!header_seen) throw TextError("merge table: missing #bpe-v1 header");
  return MergeTable(std::move(merges));
}

MergeTable read_merge_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TextError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_merge_table(ss.str());
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<s>", "</s>", "<unk>"}) add(s);
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) {
    if (ids_.count(t)) throw TextError("duplicate vocabulary entry " + t);
    add(t);
  }
  if (tokens_.size() < 4 || tokens_[kPad] != "<pad>" || tokens_[kBos] != "<s>" ||
      tokens_[kEos] != "</s>" || tokens_[kUnk] != "<unk>") {
    throw TextError("vocabulary must start with <pad> <s> </s> <unk>");
  }
}

int Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw TextError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Vocabulary build_vocabulary(const std::vector<std::string>& sentences, const MergeTable& table) {
  std::set<std::string> subwords;
  for (const auto& s : sentences) {
    for (auto& t : apply_bpe(s, table).tokens) subwords.insert(std::move(t));
  }
  Vocabulary vocab;
  for (const auto& t : subwords) vocab.add(t);
  return vocab;
}

}  // namespace lenctl::textproc
