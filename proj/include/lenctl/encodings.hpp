#pragma once

// Sinusoidal positional encoding and the two decoder length encodings.
//
// Component k of a d-dimensional encoding of argument x is
//   sin(x / base^(k/d))  for even k
//   cos(x / base^(k/d))  for odd k
// so components 2i and 2i+1 use exponents 2i/d and (2i+1)/d respectively.
//
//   positional : x = pos (token index)
//   absolute   : x = len - pos (remaining characters, may go negative)
//   relative   : x = q_N(pos / len) = floor(min(pos/len, 1) * N)

#include <cstdint>
#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string_view>
#include <tuple>
#include <vector>

namespace lenctl::encodings {

class EncodingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Variant { kPositional, kLengthAbsolute, kLengthRelative };

std::string_view variant_name(Variant v);  // "pe", "abs", "rel"
Variant parse_variant(std::string_view name);

struct EncodingSpec {
  int dim = 64;
  Variant variant = Variant::kPositional;
  int levels = 5;  // N, relative variant only
  double base = 10000.0;

  void validate() const;
};

struct CharCursor {
  long long pos = 0;  // characters of all preceding tokens
  long long len = 1;  // character length of the sequence
};

// Writes the d components for argument x into out (size d).
template <typename Real>
void sinusoid_into(double x, int dim, double base, std::span<Real> out);

std::vector<double> sinusoidal_pe(long long pos, const EncodingSpec& spec);
std::vector<double> le_abs(CharCursor cursor, const EncodingSpec& spec);
int quantize(CharCursor cursor, int levels);
std::vector<double> le_rel(CharCursor cursor, const EncodingSpec& spec);

// Argument fed to the sinusoid for a length-encoding variant.
double length_argument(CharCursor cursor, const EncodingSpec& spec);

// Encodings for pos = 0..max_pos at fixed len, computed once per key.
class EncodingTable {
 public:
  EncodingTable(const EncodingSpec& spec, long long len, long long max_pos);

  long long max_pos() const { return max_pos_; }
  int dim() const { return dim_; }
  std::span<const double> row(long long pos) const;

 private:
  int dim_;
  long long max_pos_;
  std::vector<double> values_;
};

// Process-wide cache keyed by (variant, d, N, base, len). Concurrent readers
// share a lock; population takes it exclusively.
class EncodingCache {
 public:
  std::shared_ptr<const EncodingTable> get(const EncodingSpec& spec, long long len);

  // Fills out with the encoding at cursor, using a cached table when the
  // position is covered and computing directly otherwise.
  template <typename Real>
  void encode(const EncodingSpec& spec, CharCursor cursor, std::span<Real> out);

  void clear();
  std::size_t size() const;

  static EncodingCache& global();

 private:
  using Key = std::tuple<int, int, int, double, long long>;
  static constexpr std::size_t kMaxEntries = 4096;
  mutable std::shared_mutex mutex_;
  std::map<Key, std::shared_ptr<const EncodingTable>> tables_;
};

}  // namespace lenctl::encodings
