#include "lenctl/encodings.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <string>

namespace lenctl::encodings {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kPositional: return "pe";
    case Variant::kLengthAbsolute: return "abs";
    case Variant::kLengthRelative: return "rel";
  }
  return "pe";
}

Variant parse_variant(std::string_view name) {
  if (name == "pe") return Variant::kPositional;
  if (name == "abs") return Variant::kLengthAbsolute;
  if (name == "rel") return Variant::kLengthRelative;
  throw EncodingError("unknown encoding variant '" + std::string(name) + "'");
}

void EncodingSpec::validate() const {
  if (dim <= 0 || dim % 2 != 0) {
    throw EncodingError("encoding dimension must be even and positive, got " + std::to_string(dim));
  }
  if (levels < 1) throw EncodingError("quantization levels must be >= 1");
  if (!(base > 1.0)) throw EncodingError("encoding base must exceed 1");
}

template <typename Real>
void sinusoid_into(double x, int dim, double base, std::span<Real> out) {
  for (int k = 0; k < dim; ++k) {
    const double angle = x / std::pow(base, static_cast<double>(k) / dim);
    out[static_cast<std::size_t>(k)] = static_cast<Real>((k % 2 == 0) ? std::sin(angle) : std::cos(angle));
  }
}

template void sinusoid_into<float>(double, int, double, std::span<float>);
template void sinusoid_into<double>(double, int, double, std::span<double>);

namespace {

void require_variant(const EncodingSpec& spec, Variant expected) {
  spec.validate();
  if (spec.variant != expected) {
    throw EncodingError("encoding spec variant is " + std::string(variant_name(spec.variant)) +
                        ", expected " + std::string(variant_name(expected)));
  }
}

std::vector<double> encode_argument(double x, const EncodingSpec& spec) {
  std::vector<double> out(static_cast<std::size_t>(spec.dim));
  sinusoid_into<double>(x, spec.dim, spec.base, out);
  return out;
}

}  // namespace

std::vector<double> sinusoidal_pe(long long pos, const EncodingSpec& spec) {
  require_variant(spec, Variant::kPositional);
  if (pos < 0) throw EncodingError("token position must be nonnegative");
  return encode_argument(static_cast<double>(pos), spec);
}

std::vector<double> le_abs(CharCursor cursor, const EncodingSpec& spec) {
  require_variant(spec, Variant::kLengthAbsolute);
  return encode_argument(length_argument(cursor, spec), spec);
}

int quantize(CharCursor cursor, int levels) {
  if (cursor.len < 1) throw EncodingError("cursor length must be >= 1");
  if (levels < 1) throw EncodingError("quantization levels must be >= 1");
  if (cursor.pos <= 0) return 0;
  if (cursor.pos >= cursor.len) return levels;
  // floor(pos * N / len) in integers; pos < len so the result is < N.
  return static_cast<int>((cursor.pos * levels) / cursor.len);
}

std::vector<double> le_rel(CharCursor cursor, const EncodingSpec& spec) {
  require_variant(spec, Variant::kLengthRelative);
  return encode_argument(length_argument(cursor, spec), spec);
}

double length_argument(CharCursor cursor, const EncodingSpec& spec) {
  switch (spec.variant) {
    case Variant::kPositional: return static_cast<double>(cursor.pos);
    case Variant::kLengthAbsolute: return static_cast<double>(cursor.len - cursor.pos);
    case Variant::kLengthRelative: return static_cast<double>(quantize(cursor, spec.levels));
  }
  return 0.0;
}

EncodingTable::EncodingTable(const EncodingSpec& spec, long long len, long long max_pos)
    : dim_(spec.dim), max_pos_(max_pos) {
  spec.validate();
  values_.resize(static_cast<std::size_t>((max_pos + 1) * dim_));
  for (long long pos = 0; pos <= max_pos; ++pos) {
    const double x = length_argument({pos, len}, spec);
    sinusoid_into<double>(x, dim_, spec.base,
                          std::span<double>(values_).subspan(static_cast<std::size_t>(pos * dim_),
                                                             static_cast<std::size_t>(dim_)));
  }
}

std::span<const double> EncodingTable::row(long long pos) const {
  if (pos < 0 || pos > max_pos_) throw EncodingError("encoding table row out of range");
  return std::span<const double>(values_).subspan(static_cast<std::size_t>(pos * dim_),
                                                  static_cast<std::size_t>(dim_));
}

std::shared_ptr<const EncodingTable> EncodingCache::get(const EncodingSpec& spec, long long len) {
  spec.validate();
  const bool positional = spec.variant == Variant::kPositional;
  const long long key_len = positional ? 0 : len;
  const Key key{static_cast<int>(spec.variant), spec.dim, positional ? 0 : spec.levels, spec.base,
                key_len};
  {
    std::shared_lock lock(mutex_);
    auto it = tables_.find(key);
    if (it != tables_.end()) return it->second;
  }
  const long long max_pos = positional ? 1024 : 2 * std::max<long long>(len, 1) + 32;
  auto table = std::make_shared<const EncodingTable>(spec, std::max<long long>(len, 1), max_pos);
  std::unique_lock lock(mutex_);
  if (tables_.size() >= kMaxEntries) tables_.clear();
  auto [it, inserted] = tables_.emplace(key, std::move(table));
  return it->second;
}

template <typename Real>
void EncodingCache::encode(const EncodingSpec& spec, CharCursor cursor, std::span<Real> out) {
  const auto table = get(spec, cursor.len);
  if (cursor.pos >= 0 && cursor.pos <= table->max_pos()) {
    const auto row = table->row(cursor.pos);
    std::transform(row.begin(), row.end(), out.begin(), [](double v) { return static_cast<Real>(v); });
    return;
  }
  sinusoid_into<Real>(length_argument(cursor, spec), spec.dim, spec.base, out);
}

template void EncodingCache::encode<float>(const EncodingSpec&, CharCursor, std::span<float>);
template void EncodingCache::encode<double>(const EncodingSpec&, CharCursor, std::span<double>);

void EncodingCache::clear() {
  std::unique_lock lock(mutex_);
  tables_.clear();
}

std::size_t EncodingCache::size() const {
  std::shared_lock lock(mutex_);
  return tables_.size();
}

EncodingCache& EncodingCache::global() {
  static EncodingCache cache;
  return cache;
}

}  // namespace lenctl::encodings
