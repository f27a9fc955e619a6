// lenctl: command-line entry point.
//
// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.
// Progress and diagnostics go to stderr as key=value records.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lenctl/config.hpp"
#include "lenctl/corpus.hpp"
#include "lenctl/decode.hpp"
#include "lenctl/encodings.hpp"
#include "lenctl/eval.hpp"
#include "lenctl/experiment.hpp"
#include "lenctl/model/checkpoint.hpp"
#include "lenctl/record.hpp"
#include "lenctl/textproc.hpp"

using namespace lenctl;
namespace fs = std::filesystem;

namespace {

// Bad input that the user can fix by changing arguments.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void emit(const Record& r) { std::cerr << r.str() << std::endl; }

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void make_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

corpus::Thresholds thresholds_from(const KeyValueConfig& kv, corpus::Thresholds th) {
  th.t_min = kv.get_double("thresholds.t_min", th.t_min);
  th.t_max = kv.get_double("thresholds.t_max", th.t_max);
  try {
    th.validate();
  } catch (const corpus::CorpusError& e) {
    throw ConfigError("thresholds", e.what());
  }
  return th;
}

std::vector<corpus::SentencePair> load_pairs(const std::string& src, const std::string& tgt,
                                             const corpus::Thresholds& th, const std::string& name) {
  auto r = corpus::ingest(corpus::read_parallel(src, tgt), th);
  if (r.rejected > 0) emit(Record().add("event", "skipped").add("set", name).add("lines", r.rejected));
  if (r.pairs.empty()) throw UsageError(name + " set is empty: " + src);
  return r.pairs;
}

std::string hash_of(const KeyValueConfig& kv) { return kv.hash(); }

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out, name = "synth";
  std::optional<std::uint64_t> seed;
  std::optional<int> pairs;
};

int run_synth(const SynthArgs& a) {
  auto kv = load_config(a.config);
  auto allowed = experiment::synth_keys();
  allowed.insert({"thresholds.t_min", "thresholds.t_max"});
  kv.validate(allowed);
  if (a.seed) kv.set("synth.seed", std::to_string(*a.seed));
  if (a.pairs) kv.set("synth.pairs", std::to_string(*a.pairs));
  const auto spec = experiment::synth_from(kv);
  const auto th = thresholds_from(kv, {});
  const auto c = corpus::generate_synthetic(spec, th);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  std::vector<std::string> src, tgt;
  for (const auto& p : c.pairs) {
    src.push_back(p.src);
    tgt.push_back(p.tgt);
  }
  corpus::write_lines(dir / (a.name + ".src"), src);
  corpus::write_lines(dir / (a.name + ".tgt"), tgt);
  Record stamp;
  stamp.add("config_hash", hash_of(kv)).add("seed", spec.seed);
  const auto b = corpus::bucket_stats(c.pairs);
  write_text(dir / (a.name + ".manifest"),
             Record(stamp).add("pairs", c.pairs.size()).add("src", a.name + ".src").add("tgt", a.name + ".tgt").str() +
                 "\n" + kv.canonical());
  emit(Record(stamp).add("event", "synth").add("pairs", c.pairs.size()).add("short", b.short_count)
           .add("normal", b.normal_count).add("long", b.long_count));
  return 0;
}

// ---------------------------------------------------------------------------

struct BpeArgs {
  std::vector<std::string> inputs;
  std::string out;
  int merges = 500;
};

int run_bpe(const BpeArgs& a) {
  if (a.merges < 0) throw UsageError("--merges must be >= 0");
  std::vector<std::string> text;
  KeyValueConfig kv;
  kv.set("bpe.merges", std::to_string(a.merges));
  for (const auto& f : a.inputs) {
    const auto lines = corpus::read_lines(f);
    text.insert(text.end(), lines.begin(), lines.end());
  }
  std::string joined;
  for (const auto& line : text) joined += line + "\n";
  kv.set("bpe.data", fnv1a_hex(joined));
  const auto table = textproc::learn_bpe(text, static_cast<std::size_t>(a.merges));
  make_parent(a.out);
  textproc::write_merge_table(table, a.out, {{"config_hash", hash_of(kv)}, {"seed", "0"}});
  emit(Record().add("event", "bpe").add("config_hash", hash_of(kv)).add("merges", table.size())
           .add("lines", text.size()).add("out", a.out));
  return 0;
}

// ---------------------------------------------------------------------------

struct BucketArgs {
  std::string src, tgt, tsv;
  double t_min = 1.0, t_max = 1.2;
};

int run_bucket(const BucketArgs& a) {
  corpus::Thresholds th{a.t_min, a.t_max};
  try {
    th.validate();
  } catch (const corpus::CorpusError& e) {
    throw UsageError(e.what());
  }
  std::vector<std::pair<std::string, std::string>> raw;
  std::string name;
  if (!a.tsv.empty()) {
    if (!a.src.empty() || !a.tgt.empty()) throw UsageError("give either --tsv or --src/--tgt");
    raw = corpus::read_tsv(a.tsv);
    name = a.tsv;
  } else {
    if (a.src.empty() || a.tgt.empty()) throw UsageError("give either --tsv or both --src and --tgt");
    raw = corpus::read_parallel(a.src, a.tgt);
    name = a.src;
  }
  const auto r = corpus::ingest(raw, th);
  std::cout << corpus::bucket_record(name, corpus::bucket_stats(r.pairs)) << " rejected=" << r.rejected << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, src, tgt, dev_src, dev_tgt, bpe, base, mode = "none", out;
  std::uint64_t seed = 1;
};

std::string training_line(const model::TrainReport& r) {
  return Record().add("steps", r.steps).add("best_step", r.best_step).add("dev_loss", r.best_dev_loss)
      .add("early_stopped", r.early_stopped).str();
}

int run_train(const TrainArgs& a) {
  auto kv = load_config(a.config);
  auto allowed = experiment::model_keys();
  for (const auto& k : experiment::train_keys("train")) allowed.insert(k);
  allowed.insert({"thresholds.t_min", "thresholds.t_max"});
  kv.validate(allowed);
  if (!kv.has("model.length_mode")) kv.set("model.length_mode", a.mode);
  kv.set("train.seed", std::to_string(a.seed));
  const auto mc = experiment::model_from(kv);
  auto opts = experiment::train_options_from(kv, "train");
  opts.log = [](const Record& r) { emit(Record(r).add("model", "train")); };
  const auto th = thresholds_from(kv, {});
  const auto train = load_pairs(a.src, a.tgt, th, "train");
  const auto dev = load_pairs(a.dev_src, a.dev_tgt, th, "dev");

  const auto merges = textproc::read_merge_table(a.bpe);
  std::vector<std::string> text;
  for (const auto& p : train) {
    text.push_back(p.src);
    text.push_back(p.tgt);
  }
  const auto vocab = textproc::build_vocabulary(text, merges);
  const auto hash = hash_of(kv);
  auto t = experiment::train_fresh(train, dev, merges, vocab, mc, opts, a.seed, a.seed + 1, hash);
  make_parent(a.out);
  model::save_checkpoint(t.checkpoint, a.out);
  std::cout << Record().add("event", "trained").add("config_hash", hash).add("seed", a.seed)
                   .add("mode", model::mode_name(mc.length_mode)).str()
            << " " << training_line(t.report) << "\n";
  return 0;
}

int run_finetune(const TrainArgs& a) {
  auto kv = load_config(a.config);
  auto allowed = experiment::train_keys("finetune");
  allowed.insert({"thresholds.t_min", "thresholds.t_max"});
  kv.validate(allowed);
  model::LengthMode mode;
  try {
    mode = model::parse_mode(a.mode);
  } catch (const model::ModelError& e) {
    throw UsageError(std::string("--mode: ") + e.what());
  }
  const auto base = model::load_checkpoint(a.base);
  kv.set("finetune.mode", a.mode);
  kv.set("finetune.seed", std::to_string(a.seed));
  kv.set("finetune.base", model::checkpoint_hash(base));
  model::TrainOptions defaults;
  defaults.hyper = base.hyper;
  auto opts = experiment::train_options_from(kv, "finetune", defaults);
  opts.log = [](const Record& r) { emit(Record(r).add("model", "finetune")); };
  const auto th = thresholds_from(kv, {});
  const auto train = load_pairs(a.src, a.tgt, th, "train");
  const auto dev = load_pairs(a.dev_src, a.dev_tgt, th, "dev");
  const auto hash = hash_of(kv);
  auto t = experiment::train_finetune(base, mode, train, dev, opts, a.seed, a.seed + 1, hash);
  make_parent(a.out);
  model::save_checkpoint(t.checkpoint, a.out);
  std::cout << Record().add("event", "finetuned").add("config_hash", hash).add("seed", a.seed)
                   .add("mode", a.mode).add("lineage", t.checkpoint.lineage).str()
            << " " << training_line(t.report) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TranslateArgs {
  std::string ckpt, in, out, meta, klass, target_len_mode = "source";
  double alpha = 0.0, scale = 1.0;
  int beam = 4, threads = 1, max_len = 0;
};

int run_translate(const TranslateArgs& a) {
  decode::DecodeControl ctrl;
  ctrl.beam_size = a.beam;
  ctrl.alpha = a.alpha;
  ctrl.scale = a.scale;
  ctrl.max_len_tokens = a.max_len;
  if (!a.klass.empty()) {
    const auto c = corpus::parse_class_name(a.klass);
    if (!c) throw UsageError("--class must be short, normal or long");
    ctrl.token_class = *c;
  }
  if (a.target_len_mode.rfind("fixed:", 0) == 0) {
    const auto v = a.target_len_mode.substr(6);
    std::size_t used = 0;
    int n = 0;
    try {
      n = std::stoi(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (v.empty() || used != v.size() || n < 1) throw UsageError("--target-len-mode fixed:N needs N >= 1");
    ctrl.target_len_chars = n;
  } else if (a.target_len_mode != "source") {
    throw UsageError("--target-len-mode must be 'source' or 'fixed:N'");
  }
  if (a.threads < 1) throw UsageError("--threads must be >= 1");

  const auto ckpt = model::load_checkpoint(a.ckpt);
  try {
    ctrl.validate();
    ctrl.check_mode(ckpt.config.length_mode);
  } catch (const decode::DecodeError& e) {
    throw UsageError(e.what());
  }
  const auto m = model::instantiate<float>(ckpt);
  decode::Translator tr(m, ckpt.merges, ckpt.vocab);
  const auto sources = corpus::read_lines(a.in);
  const auto out = tr.translate_corpus(sources, ctrl, a.threads);

  std::vector<std::string> hyps, meta;
  Record head;
  head.add("event", "meta").add("config_hash", ckpt.config_hash).add("seed", ckpt.seed)
      .add("ckpt", model::checkpoint_hash(ckpt)).add("mode", model::mode_name(ckpt.config.length_mode))
      .add("beam", a.beam).add("alpha", a.alpha).add("scale", a.scale).add("target_len_mode", a.target_len_mode);
  if (ctrl.token_class) head.add("class", corpus::class_name(*ctrl.token_class));
  meta.push_back("# " + head.str());
  std::size_t failures = 0, unfinished = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    hyps.push_back(out[i].text);
    meta.push_back(decode::metadata_record(out[i]));
    if (!out[i].error.empty()) {
      ++failures;
      emit(Record().add("event", "sentence_failed").add("line", i + 1).add("error", out[i].error));
    }
    if (out[i].unfinished) ++unfinished;
  }
  make_parent(a.out);
  corpus::write_lines(a.out, hyps);
  const std::string meta_path = a.meta.empty() ? a.out + ".meta" : a.meta;
  make_parent(meta_path);
  corpus::write_lines(meta_path, meta);
  emit(Record().add("event", "translated").add("sentences", out.size()).add("failures", failures)
           .add("unfinished", unfinished).add("out", a.out).add("meta", meta_path));
  return failures > 0 ? 2 : 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string hyp, src, ref, format = "text";
};

int run_evaluate(const EvaluateArgs& a) {
  const auto hyps = corpus::read_lines(a.hyp);
  const auto srcs = corpus::read_lines(a.src);
  const auto refs = corpus::read_lines(a.ref);
  const auto b = eval::corpus_bleu(hyps, refs);
  const auto l = eval::length_stats(hyps, srcs, refs);
  if (a.format == "record") {
    std::cout << eval::report_record(b, l) << "\n";
  } else {
    const eval::RunRow row{fs::path(a.hyp).filename().string(), b, l};
    std::cout << eval::compare_runs(std::span<const eval::RunRow>(&row, 1)).text();
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct ExperimentArgs {
  std::string config, out;
  int threads = 0;
};

int run_experiment_cmd(const ExperimentArgs& a) {
  auto kv = KeyValueConfig::load(a.config);
  if (!a.out.empty()) kv.set("experiment.out_dir", a.out);
  if (a.threads > 0) kv.set("experiment.threads", std::to_string(a.threads));
  const auto cfg = experiment::ExperimentConfig::from(kv);
  const auto res = experiment::run_experiment(cfg, [](const Record& r) { emit(r); });
  std::cout << res.table.text();
  return 0;
}

// ---------------------------------------------------------------------------

struct EncodingArgs {
  std::string variant = "pe";
  int dim = 8, levels = 5;
  long long pos = 0, len = 1;
  double base = 10000.0;
};

int run_encodings(const EncodingArgs& a) {
  encodings::EncodingSpec spec;
  spec.dim = a.dim;
  spec.levels = a.levels;
  spec.base = a.base;
  spec.variant = encodings::parse_variant(a.variant);
  spec.validate();
  std::vector<double> v;
  switch (spec.variant) {
    case encodings::Variant::kPositional: v = encodings::sinusoidal_pe(a.pos, spec); break;
    case encodings::Variant::kLengthAbsolute: v = encodings::le_abs({a.pos, a.len}, spec); break;
    case encodings::Variant::kLengthRelative: v = encodings::le_rel({a.pos, a.len}, spec); break;
  }
  Record r;
  r.add("variant", a.variant).add("dim", a.dim).add("pos", a.pos);
  if (spec.variant != encodings::Variant::kPositional) r.add("len", a.len);
  if (spec.variant == encodings::Variant::kLengthRelative) r.add("q", encodings::quantize({a.pos, a.len}, a.levels));
  std::cout << "# " << r.str() << "\n";
  for (double x : v) std::printf("%.17g\n", x);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lenctl: output-length control for a small transformer translator"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic parallel corpus");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--name", synth.name, "File stem for <name>.src/.tgt/.manifest");
  c_synth->add_option("--config", synth.config, "Config file with synth.* and thresholds.* keys");
  c_synth->add_option("--seed", synth.seed, "Overrides synth.seed");
  c_synth->add_option("--pairs", synth.pairs, "Overrides synth.pairs");

  BpeArgs bpe;
  auto* c_bpe = app.add_subcommand("bpe", "Learn BPE merges from text files");
  c_bpe->add_option("--in", bpe.inputs, "Training text (one sentence per line); repeatable")->required()
      ->check(CLI::ExistingFile);
  c_bpe->add_option("--merges", bpe.merges, "Number of merges")->capture_default_str();
  c_bpe->add_option("--out", bpe.out, "Merge table file")->required();

  BucketArgs bucket;
  auto* c_bucket = app.add_subcommand("bucket", "Count short/normal/long pairs");
  c_bucket->add_option("--src", bucket.src, "Source file")->check(CLI::ExistingFile);
  c_bucket->add_option("--tgt", bucket.tgt, "Target file")->check(CLI::ExistingFile);
  c_bucket->add_option("--tsv", bucket.tsv, "Tab-separated source/target file")->check(CLI::ExistingFile);
  c_bucket->add_option("--t-min", bucket.t_min, "Upper ratio bound of the short class")->capture_default_str();
  c_bucket->add_option("--t-max", bucket.t_max, "Upper ratio bound of the normal class")->capture_default_str();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model from scratch");
  c_train->add_option("--config", train.config, "Config file with model.*, train.* and thresholds.* keys");
  c_train->add_option("--bpe", train.bpe, "Merge table")->required()->check(CLI::ExistingFile);
  c_train->add_option("--mode", train.mode, "Length mode unless model.length_mode is set")->capture_default_str();
  TrainArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "Fine-tune a checkpoint with length tokens and/or encodings");
  c_ft->add_option("--config", ft.config, "Config file with finetune.* and thresholds.* keys");
  c_ft->add_option("--base", ft.base, "Base checkpoint")->required()->check(CLI::ExistingFile);
  c_ft->add_option("--mode", ft.mode, "token, abs, rel, token+abs or token+rel")->required();
  for (auto [c, t] : {std::pair{c_train, &train}, std::pair{c_ft, &ft}}) {
    c->add_option("--src", t->src, "Training sources")->required()->check(CLI::ExistingFile);
    c->add_option("--tgt", t->tgt, "Training targets")->required()->check(CLI::ExistingFile);
    c->add_option("--dev-src", t->dev_src, "Dev sources")->required()->check(CLI::ExistingFile);
    c->add_option("--dev-tgt", t->dev_tgt, "Dev targets")->required()->check(CLI::ExistingFile);
    c->add_option("--out", t->out, "Checkpoint to write")->required();
    c->add_option("--seed", t->seed, "Initialization and batching seed")->capture_default_str();
  }

  TranslateArgs tr;
  auto* c_tr = app.add_subcommand("translate", "Decode a file with a checkpoint");
  c_tr->add_option("--ckpt", tr.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_tr->add_option("--in", tr.in, "Source sentences")->required()->check(CLI::ExistingFile);
  c_tr->add_option("--out", tr.out, "Output sentences")->required();
  c_tr->add_option("--meta", tr.meta, "Per-sentence metadata (default <out>.meta)");
  c_tr->add_option("--class", tr.klass, "Length token: short, normal or long");
  c_tr->add_option("--alpha", tr.alpha, "Length-penalty exponent")->capture_default_str();
  c_tr->add_option("--beam", tr.beam, "Beam size")->capture_default_str();
  c_tr->add_option("--target-len-mode", tr.target_len_mode, "source or fixed:N")->capture_default_str();
  c_tr->add_option("--scale", tr.scale, "Multiplier on the target length")->capture_default_str();
  c_tr->add_option("--max-len", tr.max_len, "Token limit (0 = 2 * source tokens + 10)")->capture_default_str();
  c_tr->add_option("--threads", tr.threads, "Decoding threads")->capture_default_str();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "BLEU, BLEU* and length ratios");
  c_ev->add_option("--hyp", ev.hyp, "System output")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--src", ev.src, "Sources")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--ref", ev.ref, "References")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--format", ev.format, "text or record")->check(CLI::IsMember({"text", "record"}))
      ->capture_default_str();

  ExperimentArgs ex;
  auto* c_ex = app.add_subcommand("experiment", "Run the full comparison pipeline");
  c_ex->add_option("--config", ex.config, "Experiment config")->required()->check(CLI::ExistingFile);
  c_ex->add_option("--out", ex.out, "Overrides experiment.out_dir");
  c_ex->add_option("--threads", ex.threads, "Overrides experiment.threads");

  EncodingArgs enc;
  auto* c_enc = app.add_subcommand("encodings", "Print one positional or length encoding vector");
  c_enc->add_option("--variant", enc.variant, "pe, abs or rel")->check(CLI::IsMember({"pe", "abs", "rel"}))
      ->capture_default_str();
  c_enc->add_option("--dim", enc.dim, "Dimension")->capture_default_str();
  c_enc->add_option("--pos", enc.pos, "Position (token index or character cursor)")->capture_default_str();
  c_enc->add_option("--len", enc.len, "Target length in characters")->capture_default_str();
  c_enc->add_option("--levels", enc.levels, "Quantization levels for rel")->capture_default_str();
  c_enc->add_option("--base", enc.base, "Frequency base")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (c_synth->parsed()) return run_synth(synth);
    if (c_bpe->parsed()) return run_bpe(bpe);
    if (c_bucket->parsed()) return run_bucket(bucket);
    if (c_train->parsed()) return run_train(train);
    if (c_ft->parsed()) return run_finetune(ft);
    if (c_tr->parsed()) return run_translate(tr);
    if (c_ev->parsed()) return run_evaluate(ev);
    if (c_ex->parsed()) return run_experiment_cmd(ex);
    if (c_enc->parsed()) return run_encodings(enc);
  } catch (const ConfigError& e) {
    emit(Record().add("event", "error").add("kind", "config").add("key", e.key()).add("error", e.what()));
    return 1;
  } catch (const UsageError& e) {
    emit(Record().add("event", "error").add("kind", "usage").add("error", e.what()));
    return 1;
  } catch (const encodings::EncodingError& e) {
    emit(Record().add("event", "error").add("kind", "usage").add("error", e.what()));
    return 1;
  } catch (const std::exception& e) {
    emit(Record().add("event", "error").add("kind", "runtime").add("error", e.what()));
    return 2;
  }
  return 1;
}
