#include "lenctl/model/transformer.hpp"

#include <cmath>
#include <random>

#include "lenctl/nnet/rng.hpp"
#include "lenctl/textproc.hpp"

namespace lenctl::model {

using nnet::Graph;
using nnet::ParameterSet;
using nnet::Shape;
using nnet::Tensor;
using nnet::Var;

std::string_view mode_name(LengthMode m) {
  switch (m) {
    case LengthMode::kNone: return "none";
    case LengthMode::kToken: return "token";
    case LengthMode::kAbs: return "abs";
    case LengthMode::kRel: return "rel";
    case LengthMode::kTokenAbs: return "token+abs";
    case LengthMode::kTokenRel: return "token+rel";
  }
  return "none";
}

LengthMode parse_mode(std::string_view name) {
  for (auto m : {LengthMode::kNone, LengthMode::kToken, LengthMode::kAbs, LengthMode::kRel,
                 LengthMode::kTokenAbs, LengthMode::kTokenRel}) {
    if (mode_name(m) == name) return m;
  }
  throw ModelError("unknown length mode '" + std::string(name) +
                   "' (expected none, token, abs, rel, token+abs, token+rel)");
}

bool uses_token(LengthMode m) {
  return m == LengthMode::kToken || m == LengthMode::kTokenAbs || m == LengthMode::kTokenRel;
}

std::optional<encodings::Variant> encoding_variant(LengthMode m) {
  switch (m) {
    case LengthMode::kAbs:
    case LengthMode::kTokenAbs: return encodings::Variant::kLengthAbsolute;
    case LengthMode::kRel:
    case LengthMode::kTokenRel: return encodings::Variant::kLengthRelative;
    default: return std::nullopt;
  }
}

void ModelConfig::validate() const {
  if (d_model < 2 || d_model % 2 != 0) throw ModelError("d_model must be even and >= 2");
  if (heads < 1 || d_model % heads != 0) throw ModelError("d_model must be divisible by heads");
  if (layers < 1) throw ModelError("layers must be >= 1");
  if (ffn_hidden < 1) throw ModelError("ffn_hidden must be >= 1");
  if (vocab < 5) throw ModelError("vocabulary too small");
  if (levels < 1) throw ModelError("levels must be >= 1");
  if (!(base > 1)) throw ModelError("encoding base must exceed 1");
}

void ModelConfig::store(KeyValueConfig& kv) const {
  kv.set("model.d_model", std::to_string(d_model));
  kv.set("model.ffn_hidden", std::to_string(ffn_hidden));
  kv.set("model.heads", std::to_string(heads));
  kv.set("model.layers", std::to_string(layers));
  kv.set("model.vocab", std::to_string(vocab));
  kv.set("model.length_mode", std::string(mode_name(length_mode)));
  kv.set("model.levels", std::to_string(levels));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", base);
  kv.set("model.base", buf);
}

ModelConfig ModelConfig::from(const KeyValueConfig& kv) {
  ModelConfig c;
  c.d_model = static_cast<int>(kv.get_int("model.d_model", c.d_model));
  c.ffn_hidden = static_cast<int>(kv.get_int("model.ffn_hidden", c.ffn_hidden));
  c.heads = static_cast<int>(kv.get_int("model.heads", c.heads));
  c.layers = static_cast<int>(kv.get_int("model.layers", c.layers));
  c.vocab = static_cast<int>(kv.get_int("model.vocab", c.vocab));
  try {
    c.length_mode = parse_mode(kv.get_string("model.length_mode", "none"));
  } catch (const ModelError& e) {
    throw ConfigError("model.length_mode", e.what());
  }
  c.levels = static_cast<int>(kv.get_int("model.levels", c.levels));
  c.base = kv.get_double("model.base", c.base);
  return c;
}

namespace {

std::string layer_key(const char* side, int l, const char* rest) {
  return std::string(side) + std::to_string(l) + "." + rest;
}

// Parameter name and shape, in creation order.
std::vector<std::pair<std::string, Shape>> layout(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t f = static_cast<std::size_t>(c.ffn_hidden);
  const std::size_t v = static_cast<std::size_t>(c.vocab);
  std::vector<std::pair<std::string, Shape>> out;
  auto ln = [&](const std::string& p) {
    out.push_back({p + ".g", {d}});
    out.push_back({p + ".b", {d}});
  };
  auto att = [&](const std::string& p) {
    for (const char* m : {"q", "k", "v", "o"}) {
      out.push_back({p + ".w" + m, {d, d}});
      out.push_back({p + ".b" + m, {d}});
    }
  };
  auto ffn = [&](const std::string& p) {
    out.push_back({p + ".w1", {d, f}});
    out.push_back({p + ".b1", {f}});
    out.push_back({p + ".w2", {f, d}});
    out.push_back({p + ".b2", {d}});
  };
  out.push_back({"embed", {v, d}});
  for (int l = 0; l < c.layers; ++l) {
    ln(layer_key("enc", l, "ln1"));
    att(layer_key("enc", l, "att"));
    ln(layer_key("enc", l, "ln2"));
    ffn(layer_key("enc", l, "ffn"));
  }
  ln("enc.ln");
  for (int l = 0; l < c.layers; ++l) {
    ln(layer_key("dec", l, "ln1"));
    att(layer_key("dec", l, "self"));
    ln(layer_key("dec", l, "ln2"));
    att(layer_key("dec", l, "cross"));
    ln(layer_key("dec", l, "ln3"));
    ffn(layer_key("dec", l, "ffn"));
  }
  ln("dec.ln");
  out.push_back({"out.w", {d, v}});
  out.push_back({"out.b", {v}});
  return out;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Forward pass over a parameter set that is either mutable (gradients flow
// into it) or const (inference).
template <typename Real, typename PS>
struct Net {
  Graph<Real>& g;
  PS& ps;
  const ModelConfig& cfg;
  const RunOptions<Real>& opt;
  std::uint64_t counter = 0;

  Var p(const std::string& name) { return g.param(ps.at(name)); }

  Var drop(Var x) {
    if (opt.dropout <= 0) return x;
    return g.dropout(x, opt.dropout, nnet::combine_streams(opt.stream, ++counter));
  }

  Var norm(Var x, const std::string& pre) { return g.layer_norm(x, p(pre + ".g"), p(pre + ".b")); }

  Var mha(Var xq, Var xkv, const std::string& pre, const nnet::AttentionShape& shape) {
    Var q = g.linear(xq, p(pre + ".wq"), p(pre + ".bq"));
    Var k = g.linear(xkv, p(pre + ".wk"), p(pre + ".bk"));
    Var v = g.linear(xkv, p(pre + ".wv"), p(pre + ".bv"));
    Var a = g.attention(q, k, v, shape, opt.attention_dropout,
                        nnet::combine_streams(opt.stream, ++counter));
    return g.linear(a, p(pre + ".wo"), p(pre + ".bo"));
  }

  Var ffn(Var x, const std::string& pre) {
    Var h = g.relu(g.linear(x, p(pre + ".w1"), p(pre + ".b1")));
    if (opt.dropout > 0) h = drop(h);
    return g.linear(h, p(pre + ".w2"), p(pre + ".b2"));
  }

  Var embed(std::span<const int> ids, const Tensor<Real>& offsets) {
    const Real scale = std::sqrt(static_cast<Real>(cfg.d_model));
    return drop(g.add(g.embedding(p("embed"), ids, scale), g.constant(offsets)));
  }

  Var encoder(std::span<const int> src, std::size_t rows, std::size_t len,
              std::span<const int> lengths) {
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    Tensor<Real> pe(Shape{rows * len, d});
    for (std::size_t i = 0; i < len; ++i) {
      auto row = std::span<Real>(pe.data() + i * d, d);
      encodings::sinusoid_into<Real>(static_cast<double>(i), cfg.d_model, cfg.base, row);
      for (std::size_t r = 1; r < rows; ++r) std::copy(row.begin(), row.end(), pe.data() + (r * len + i) * d);
    }
    Var x = embed(src, pe);
    nnet::AttentionShape shape{rows, len, len, static_cast<std::size_t>(cfg.heads), lengths, false};
    for (int l = 0; l < cfg.layers; ++l) {
      Var n1 = norm(x, layer_key("enc", l, "ln1"));
      x = g.add(x, drop(mha(n1, n1, layer_key("enc", l, "att"), shape)));
      x = g.add(x, drop(ffn(norm(x, layer_key("enc", l, "ln2")), layer_key("enc", l, "ffn"))));
    }
    return norm(x, "enc.ln");
  }

  // Decoder states before the final norm.
  Var decoder(Var memory, std::span<const int> mem_lengths, std::size_t src_len,
              std::span<const int> tgt_in, const Tensor<Real>& offsets, std::size_t rows,
              std::size_t tgt_len, Var* dec_input) {
    Var x = embed(tgt_in, offsets);
    if (dec_input) *dec_input = x;
    const std::size_t h = static_cast<std::size_t>(cfg.heads);
    nnet::AttentionShape self{rows, tgt_len, tgt_len, h, {}, true};
    nnet::AttentionShape cross{rows, tgt_len, src_len, h, mem_lengths, false};
    for (int l = 0; l < cfg.layers; ++l) {
      Var n1 = norm(x, layer_key("dec", l, "ln1"));
      x = g.add(x, drop(mha(n1, n1, layer_key("dec", l, "self"), self)));
      x = g.add(x, drop(mha(norm(x, layer_key("dec", l, "ln2")), memory, layer_key("dec", l, "cross"), cross)));
      x = g.add(x, drop(ffn(norm(x, layer_key("dec", l, "ln3")), layer_key("dec", l, "ffn"))));
    }
    return x;
  }

  Var project(Var x) { return g.linear(norm(x, "dec.ln"), p("out.w"), p("out.b")); }
};

}  // namespace

template <typename Real>
Transformer<Real>::Transformer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  init(seed);
}

template <typename Real>
Transformer<Real>::Transformer(const ModelConfig& cfg, ParameterSet<Real> params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  check_params();
}

template <typename Real>
void Transformer<Real>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, shape] : layout(cfg_)) {
    Tensor<Real> t(shape);
    if (name == "embed") {
      std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(cfg_.d_model)));
      for (auto& v : t.storage()) v = static_cast<Real>(n(rng));
    } else if (shape.size() == 2) {
      const double lim = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> u(-lim, lim);
      for (auto& v : t.storage()) v = static_cast<Real>(u(rng));
    } else if (ends_with(name, ".g")) {
      t.fill(Real(1));
    }
    params_.add(name, std::move(t));
  }
}

template <typename Real>
void Transformer<Real>::check_params() const {
  const auto expected = layout(cfg_);
  if (params_.size() != expected.size()) {
    throw ModelError("parameter set has " + std::to_string(params_.size()) + " tensors, model needs " +
                     std::to_string(expected.size()));
  }
  for (const auto& [name, shape] : expected) {
    const auto* p = params_.find(name);
    if (!p) throw ModelError("missing parameter '" + name + "'");
    if (p->value.shape() != shape) {
      throw ModelError("parameter '" + name + "' has shape " + nnet::shape_string(p->value.shape()) +
                       ", expected " + nnet::shape_string(shape));
    }
  }
}

template <typename Real>
Tensor<Real> Transformer<Real>::decoder_offsets(std::size_t rows, std::size_t tgt_len,
                                                std::span<const int> dec_pos,
                                                std::span<const int> target_lens) const {
  const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
  const auto variant = encoding_variant(cfg_.length_mode);
  if (variant.has_value() != !target_lens.empty()) {
    throw ModelError(variant ? "target lengths are required by length mode " +
                                   std::string(mode_name(cfg_.length_mode))
                             : "target lengths given but length mode " +
                                   std::string(mode_name(cfg_.length_mode)) + " has no encoding");
  }
  if (variant && target_lens.size() != rows) {
    throw ModelError("expected " + std::to_string(rows) + " target lengths, got " +
                     std::to_string(target_lens.size()));
  }
  if (dec_pos.size() != rows * tgt_len) throw ModelError("decoder cursor count mismatch");
  Tensor<Real> out(Shape{rows * tgt_len, d});
  std::vector<Real> le(d);
  encodings::EncodingSpec spec{cfg_.d_model, variant.value_or(encodings::Variant::kPositional),
                               cfg_.levels, cfg_.base};
  auto& cache = encodings::EncodingCache::global();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < tgt_len; ++t) {
      Real* row = out.data() + (r * tgt_len + t) * d;
      encodings::sinusoid_into<Real>(static_cast<double>(t), cfg_.d_model, cfg_.base,
                                     std::span<Real>(row, d));
      if (variant) {
        const int len = target_lens[r];
        if (len < 1) throw ModelError("target length must be >= 1");
        cache.encode<Real>(spec, {dec_pos[r * tgt_len + t], len}, le);
        for (std::size_t j = 0; j < d; ++j) row[j] += le[j];
      }
    }
  }
  return out;
}

template <typename Real>
template <typename Params>
Var Transformer<Real>::run(Graph<Real>& g, Params& ps, const corpus::Batch& b,
                           std::span<const int> target_lens, const RunOptions<Real>& opt,
                           Var* dec_input) const {
  for (int id : b.src) {
    if (id < 0 || id >= cfg_.vocab) throw ModelError("source id " + std::to_string(id) + " outside vocabulary");
  }
  const auto offsets = decoder_offsets(b.rows, b.tgt_len, b.dec_pos, target_lens);
  Net<Real, Params> net{g, ps, cfg_, opt};
  Var mem = net.encoder(b.src, b.rows, b.src_len, b.src_lengths);
  Var dec = net.decoder(mem, b.src_lengths, b.src_len, b.tgt_in, offsets, b.rows, b.tgt_len, dec_input);
  return net.project(dec);
}

template <typename Real>
Var Transformer<Real>::forward(Graph<Real>& g, const corpus::Batch& b,
                               std::span<const int> target_lens, const RunOptions<Real>& opt,
                               Var* dec_input) const {
  return run(g, params_, b, target_lens, opt, dec_input);
}

template <typename Real>
Var Transformer<Real>::forward(Graph<Real>& g, const corpus::Batch& b,
                               std::span<const int> target_lens, const RunOptions<Real>& opt,
                               Var* dec_input) {
  if (!g.grad_enabled()) return std::as_const(*this).forward(g, b, target_lens, opt, dec_input);
  return run(g, params_, b, target_lens, opt, dec_input);
}

template <typename Real>
Var Transformer<Real>::loss(Graph<Real>& g, const corpus::Batch& b, Real smoothing,
                            const RunOptions<Real>& opt, nnet::XentStats* stats) {
  std::span<const int> lens;
  if (uses_encoding(cfg_.length_mode)) lens = b.target_chars;
  Var logits = forward(g, b, lens, opt);
  return g.label_smoothed_xent(logits, b.tgt_out, smoothing, textproc::Vocabulary::kPad, stats);
}

template <typename Real>
Var Transformer<Real>::loss(Graph<Real>& g, const corpus::Batch& b, Real smoothing,
                            const RunOptions<Real>& opt, nnet::XentStats* stats) const {
  std::span<const int> lens;
  if (uses_encoding(cfg_.length_mode)) lens = b.target_chars;
  Var logits = forward(g, b, lens, opt);
  return g.label_smoothed_xent(logits, b.tgt_out, smoothing, textproc::Vocabulary::kPad, stats);
}

template <typename Real>
typename Transformer<Real>::Memory Transformer<Real>::encode(std::span<const int> src) const {
  if (src.empty()) throw ModelError("empty source sentence");
  for (int id : src) {
    if (id < 0 || id >= cfg_.vocab) throw ModelError("source id " + std::to_string(id) + " outside vocabulary");
  }
  Graph<Real> g(false);
  RunOptions<Real> opt;
  Net<Real, const ParameterSet<Real>> net{g, params_, cfg_, opt};
  const int len = static_cast<int>(src.size());
  Var mem = net.encoder(src, 1, src.size(), std::span<const int>(&len, 1));
  return Memory{g.value(mem), src.size()};
}

template <typename Real>
std::vector<Real> Transformer<Real>::next_log_probs(const Memory& mem,
                                                    std::span<const std::vector<int>> prefixes,
                                                    std::span<const std::vector<int>> cursors,
                                                    int target_len) const {
  const std::size_t nb = prefixes.size();
  if (nb == 0) return {};
  if (cursors.size() != nb) throw ModelError("one cursor list per prefix required");
  const std::size_t t = prefixes[0].size() + 1;
  const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
  std::vector<int> tgt_in(nb * t), dec_pos(nb * t);
  for (std::size_t h = 0; h < nb; ++h) {
    if (prefixes[h].size() + 1 != t || cursors[h].size() != t) {
      throw ModelError("prefixes must share one length and carry one cursor per position");
    }
    tgt_in[h * t] = textproc::Vocabulary::kBos;
    for (std::size_t i = 0; i + 1 < t; ++i) tgt_in[h * t + i + 1] = prefixes[h][i];
    std::copy(cursors[h].begin(), cursors[h].end(), dec_pos.begin() + static_cast<long>(h * t));
  }
  std::vector<int> lens;
  if (uses_encoding(cfg_.length_mode)) lens.assign(nb, target_len);
  const auto offsets = decoder_offsets(nb, t, dec_pos, lens);

  Graph<Real> g(false);
  RunOptions<Real> opt;
  Net<Real, const ParameterSet<Real>> net{g, params_, cfg_, opt};
  Tensor<Real> tiled(Shape{nb * mem.src_len, d});
  for (std::size_t h = 0; h < nb; ++h) {
    std::copy(mem.states.storage().begin(), mem.states.storage().end(), tiled.data() + h * mem.src_len * d);
  }
  std::vector<int> mem_lengths(nb, static_cast<int>(mem.src_len));
  Var memory = g.constant(std::move(tiled));
  Var dec = net.decoder(memory, mem_lengths, mem.src_len, tgt_in, offsets, nb, t, nullptr);
  std::vector<std::size_t> last(nb);
  for (std::size_t h = 0; h < nb; ++h) last[h] = h * t + t - 1;
  Var logits = net.project(g.gather_rows(dec, std::move(last)));
  const auto& z = g.value(logits);
  const std::size_t v = z.cols();
  std::vector<Real> out(z.storage());
  for (std::size_t h = 0; h < nb; ++h) {
    Real* row = out.data() + h * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double se = 0;
    for (std::size_t j = 0; j < v; ++j) se += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < v; ++j) row[j] = static_cast<Real>(row[j] - lse);
  }
  return out;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace lenctl::model
