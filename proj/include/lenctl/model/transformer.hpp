#pragma once

// Pre-norm transformer encoder-decoder with optional decoder-side length
// encoding.
//
// Source input:  embed(x) * sqrt(d) + PE(i)
// Decoder input: embed(y) * sqrt(d) + PE(t) [+ LE(cursor_t)]
// The embedding table is shared by both sides; the output projection is a
// separate matrix.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lenctl/config.hpp"
#include "lenctl/corpus.hpp"
#include "lenctl/encodings.hpp"
#include "lenctl/nnet/graph.hpp"

namespace lenctl::model {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LengthMode { kNone, kToken, kAbs, kRel, kTokenAbs, kTokenRel };

std::string_view mode_name(LengthMode m);  // none token abs rel token+abs token+rel
LengthMode parse_mode(std::string_view name);
bool uses_token(LengthMode m);
std::optional<encodings::Variant> encoding_variant(LengthMode m);
inline bool uses_encoding(LengthMode m) { return encoding_variant(m).has_value(); }

struct ModelConfig {
  int d_model = 64;
  int ffn_hidden = 256;
  int heads = 4;
  int layers = 2;
  int vocab = 0;
  LengthMode length_mode = LengthMode::kNone;
  int levels = 5;
  double base = 10000.0;

  void validate() const;
  int head_dim() const { return d_model / heads; }

  // "model.*" keys.
  void store(KeyValueConfig& kv) const;
  static ModelConfig from(const KeyValueConfig& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename Real>
struct RunOptions {
  Real dropout = 0;
  Real attention_dropout = 0;
  std::uint64_t stream = 0;  // dropout stream for this forward pass
};

template <typename Real>
class Transformer {
 public:
  // Fresh parameters drawn from `seed`.
  Transformer(const ModelConfig& cfg, std::uint64_t seed);
  // Adopts existing parameters; every expected name and shape must be present.
  Transformer(const ModelConfig& cfg, nnet::ParameterSet<Real> params);

  const ModelConfig& config() const { return cfg_; }
  nnet::ParameterSet<Real>& params() { return params_; }
  const nnet::ParameterSet<Real>& params() const { return params_; }

  // Teacher-forced logits, shape [rows * tgt_len, vocab]. target_lens must
  // have one entry per row when the mode uses a length encoding and be empty
  // otherwise. dec_input, if given, receives the decoder input node.
  nnet::Var forward(nnet::Graph<Real>& g, const corpus::Batch& b, std::span<const int> target_lens,
                    const RunOptions<Real>& opt, nnet::Var* dec_input = nullptr) const;
  nnet::Var forward(nnet::Graph<Real>& g, const corpus::Batch& b, std::span<const int> target_lens,
                    const RunOptions<Real>& opt, nnet::Var* dec_input = nullptr);

  // Mean label-smoothed loss over the batch, with training lengths taken from
  // the batch targets.
  nnet::Var loss(nnet::Graph<Real>& g, const corpus::Batch& b, Real smoothing,
                 const RunOptions<Real>& opt, nnet::XentStats* stats = nullptr);
  nnet::Var loss(nnet::Graph<Real>& g, const corpus::Batch& b, Real smoothing,
                 const RunOptions<Real>& opt, nnet::XentStats* stats = nullptr) const;

  // PE(t) (+ LE) rows added to the decoder embeddings.
  nnet::Tensor<Real> decoder_offsets(std::size_t rows, std::size_t tgt_len,
                                     std::span<const int> dec_pos,
                                     std::span<const int> target_lens) const;

  // Inference. The encoder runs once per sentence; next_log_probs scores one
  // next token for each of several equal-length prefixes.
  struct Memory {
    nnet::Tensor<Real> states;  // [src_len, d]
    std::size_t src_len = 0;
  };
  Memory encode(std::span<const int> src) const;

  // prefixes[h] holds the generated tokens (no BOS); cursors[h] has
  // prefixes[h].size() + 1 entries, the cursor at each decoder position.
  // Returns [prefixes.size(), vocab] log-probabilities.
  std::vector<Real> next_log_probs(const Memory& mem, std::span<const std::vector<int>> prefixes,
                                   std::span<const std::vector<int>> cursors, int target_len) const;

 private:
  template <typename Params>
  nnet::Var run(nnet::Graph<Real>& g, Params& ps, const corpus::Batch& b,
                std::span<const int> target_lens, const RunOptions<Real>& opt,
                nnet::Var* dec_input) const;

  void init(std::uint64_t seed);
  void check_params() const;

  ModelConfig cfg_;
  nnet::ParameterSet<Real> params_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace lenctl::model
