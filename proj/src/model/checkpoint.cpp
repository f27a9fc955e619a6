#include "lenctl/model/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lenctl::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'C', 'T', 'L'};
constexpr char kEnd[4] = {'E', 'N', 'D', '.'};

std::uint32_t crc(const std::string& bytes, std::size_t from) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data() + from), static_cast<uInt>(bytes.size() - from)));
}

class Writer {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::size_t mark() const { return out_.size(); }
  void seal(std::size_t from) { u32(crc(out_, from)); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}

  void raw(void* p, std::size_t n) {
    if (n > b_.size() - pos_) throw CheckpointCorruptError("checkpoint truncated at byte " + std::to_string(pos_));
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > b_.size() - pos_) throw CheckpointCorruptError("checkpoint truncated at byte " + std::to_string(pos_));
    std::string s(b_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t mark() const { return pos_; }
  void check(std::size_t from, const char* what) {
    const std::uint32_t want = crc(b_.substr(from, pos_ - from), 0);
    if (u32() != want) throw CheckpointCorruptError(std::string("checksum mismatch in ") + what);
  }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nnet::TrainHyper hyper_from(const KeyValueConfig& kv) {
  nnet::TrainHyper h;
  h.lr_init = kv.get_double("train.lr_init", h.lr_init);
  h.lr_peak = kv.get_double("train.lr_peak", h.lr_peak);
  h.warmup = kv.get_int("train.warmup", h.warmup);
  h.dropout = kv.get_double("train.dropout", h.dropout);
  h.attention_dropout = kv.get_double("train.attention_dropout", h.attention_dropout);
  h.smoothing = kv.get_double("train.smoothing", h.smoothing);
  h.beta1 = kv.get_double("train.beta1", h.beta1);
  h.beta2 = kv.get_double("train.beta2", h.beta2);
  h.eps = kv.get_double("train.eps", h.eps);
  h.accumulate = static_cast<int>(kv.get_int("train.accumulate", h.accumulate));
  return h;
}

}  // namespace

KeyValueConfig Checkpoint::header() const {
  KeyValueConfig kv;
  config.store(kv);
  kv.set("train.lr_init", fmt17(hyper.lr_init));
  kv.set("train.lr_peak", fmt17(hyper.lr_peak));
  kv.set("train.warmup", std::to_string(hyper.warmup));
  kv.set("train.dropout", fmt17(hyper.dropout));
  kv.set("train.attention_dropout", fmt17(hyper.attention_dropout));
  kv.set("train.smoothing", fmt17(hyper.smoothing));
  kv.set("train.beta1", fmt17(hyper.beta1));
  kv.set("train.beta2", fmt17(hyper.beta2));
  kv.set("train.eps", fmt17(hyper.eps));
  kv.set("train.accumulate", std::to_string(hyper.accumulate));
  kv.set("state.step", std::to_string(step));
  kv.set("state.dev_loss", fmt17(dev_loss));
  kv.set("state.seed", std::to_string(seed));
  kv.set("state.lineage", lineage.empty() ? "-" : lineage);
  kv.set("state.config_hash", config_hash.empty() ? "-" : config_hash);
  return kv;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);

  auto m = w.mark();
  w.str(c.header().canonical());
  w.seal(m);

  m = w.mark();
  w.u32(static_cast<std::uint32_t>(c.vocab.size()));
  for (const auto& t : c.vocab.tokens()) w.str(t);
  w.seal(m);

  m = w.mark();
  w.u32(static_cast<std::uint32_t>(c.merges.size()));
  for (const auto& mg : c.merges.merges()) {
    w.str(mg.left);
    w.str(mg.right);
  }
  w.seal(m);

  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    const auto& p = c.params[i];
    m = w.mark();
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.u64(d);
    w.raw(p.value.data(), p.value.size() * sizeof(float));
    w.seal(m);
  }
  w.raw(kEnd, 4);
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointCorruptError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) +
                                 " is not supported (this build reads version " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  auto m = r.mark();
  const std::string header_text = r.str();
  r.check(m, "header");
  KeyValueConfig kv;
  try {
    kv = KeyValueConfig::parse(header_text);
    c.config = ModelConfig::from(kv);
    c.hyper = hyper_from(kv);
    c.step = kv.get_int("state.step", 0);
    c.dev_loss = kv.get_double("state.dev_loss", 0.0);
    c.seed = kv.get_u64("state.seed", 0);
  } catch (const ConfigError& e) {
    throw CheckpointCorruptError(std::string("bad checkpoint header: ") + e.what());
  }
  c.lineage = kv.get_string("state.lineage", "-");
  if (c.lineage == "-") c.lineage.clear();
  c.config_hash = kv.get_string("state.config_hash", "-");
  if (c.config_hash == "-") c.config_hash.clear();

  m = r.mark();
  std::vector<std::string> tokens(r.u32());
  for (auto& t : tokens) t = r.str();
  r.check(m, "vocabulary");
  try {
    c.vocab = textproc::Vocabulary(tokens);
  } catch (const textproc::TextError& e) {
    throw CheckpointCorruptError(std::string("bad vocabulary: ") + e.what());
  }

  m = r.mark();
  std::vector<textproc::Merge> merges(r.u32());
  for (auto& mg : merges) {
    mg.left = r.str();
    mg.right = r.str();
  }
  r.check(m, "merge table");
  c.merges = textproc::MergeTable(std::move(merges));

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    m = r.mark();
    std::string name = r.str();
    nnet::Shape shape(r.u32());
    if (shape.size() > 8) throw CheckpointCorruptError("implausible rank for tensor " + name);
    for (auto& d : shape) d = r.u64();
    const std::size_t n = nnet::shape_size(shape);
    if (n > bytes.size()) throw CheckpointCorruptError("implausible size for tensor " + name);
    std::vector<float> values(n);
    r.raw(values.data(), n * sizeof(float));
    r.check(m, ("tensor " + name).c_str());
    c.params.add(std::move(name), nnet::Tensor<float>(std::move(shape), std::move(values)));
  }
  char end[4];
  r.raw(end, 4);
  if (std::memcmp(end, kEnd, 4) != 0) throw CheckpointCorruptError("missing end marker");
  if (c.config.vocab != c.vocab.size()) {
    throw CheckpointCorruptError("header vocabulary size disagrees with the stored vocabulary");
  }
  return c;
}

std::string checkpoint_hash(const Checkpoint& ckpt) { return fnv1a_hex(serialize_checkpoint(ckpt)); }

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

template <typename Real>
Transformer<Real> instantiate(const Checkpoint& ckpt) {
  nnet::ParameterSet<Real> ps;
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    ps.add(ckpt.params[i].name, ckpt.params[i].value.template cast<Real>());
  }
  return Transformer<Real>(ckpt.config, std::move(ps));
}

template Transformer<float> instantiate<float>(const Checkpoint&);
template Transformer<double> instantiate<double>(const Checkpoint&);

}  // namespace lenctl::model
