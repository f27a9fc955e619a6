#include "lenctl/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "lenctl/nnet/rng.hpp"
#include "lenctl/textproc.hpp"

namespace lenctl::experiment {

namespace {

const char* const kSynthFields[] = {"lexicon_size",   "src_word_min",    "src_word_max",
                                    "short_delta_min", "short_delta_max", "long_delta_min",
                                    "long_delta_max", "min_words",       "max_words",
                                    "terse",          "neutral",         "verbose",
                                    "neutral_long_fraction", "neutral_flip", "variants_per_source",
                                    "pairs",          "lexicon_seed",    "seed"};

const char* const kTrainFields[] = {"lr_init",  "lr_peak",    "warmup",    "dropout",  "attention_dropout",
                                    "smoothing", "beta1",     "beta2",     "eps",      "accumulate",
                                    "max_tokens", "max_epochs", "max_steps", "eval_every", "patience"};

std::string sanitize(const std::string& label) {
  std::string s = label;
  for (auto& c : s) {
    if (c == ':' || c == '=' || c == '/' || c == ' ') c = '_';
  }
  return s;
}

std::vector<std::string> sources_of(const std::vector<corpus::SentencePair>& pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) out.push_back(p.src);
  return out;
}

std::vector<std::string> targets_of(const std::vector<corpus::SentencePair>& pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) out.push_back(p.tgt);
  return out;
}

std::vector<corpus::SentencePair> with_tokens(const std::vector<corpus::SentencePair>& pairs) {
  std::vector<corpus::SentencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(corpus::inject_token(p));
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

class Run {
 public:
  Run(const ExperimentConfig& cfg, const Logger& log) : cfg_(cfg), user_log_(log) {
    std::filesystem::create_directories(cfg.out_dir / "data");
    std::filesystem::create_directories(cfg.out_dir / "models");
    std::filesystem::create_directories(cfg.out_dir / "logs");
    std::filesystem::create_directories(cfg.out_dir / "hyp");
    log_file_.open(cfg.out_dir / "experiment.log", std::ios::trunc);
  }

  Record stamp(std::string_view event) const {
    Record r;
    r.add("event", event).add("config_hash", cfg_.config_hash).add("seed", cfg_.seed);
    return r;
  }

  void log(const Record& r) {
    log_file_ << r.str() << "\n";
    log_file_.flush();
    if (user_log_) user_log_(r);
  }

  void prepare_data() {
    if (cfg_.train_tsv) {
      train_ = corpus::ingest(corpus::read_tsv(*cfg_.train_tsv), cfg_.thresholds).pairs;
      dev_ = corpus::ingest(corpus::read_tsv(*cfg_.dev_tsv), cfg_.thresholds).pairs;
      test_ = corpus::ingest(corpus::read_tsv(*cfg_.test_tsv), cfg_.thresholds).pairs;
    } else {
      corpus::SynthSpec spec = cfg_.synth;
      train_ = corpus::generate_synthetic(spec, cfg_.thresholds).pairs;
      spec.seed = nnet::combine_streams(cfg_.synth.seed, 1);
      spec.pairs = cfg_.dev_pairs;
      dev_ = corpus::generate_synthetic(spec, cfg_.thresholds).pairs;
      spec.seed = nnet::combine_streams(cfg_.synth.seed, 2);
      spec.pairs = cfg_.test_pairs;
      test_ = corpus::generate_synthetic(spec, cfg_.thresholds).pairs;
    }
    if (train_.empty() || dev_.empty() || test_.empty()) throw std::runtime_error("train, dev and test sets must be non-empty");
    if (cfg_.max_test_sentences > 0 && test_.size() > cfg_.max_test_sentences) test_.resize(cfg_.max_test_sentences);

    const auto dir = cfg_.out_dir / "data";
    for (auto [name, set] : {std::pair{"train", &train_}, std::pair{"dev", &dev_}, std::pair{"test", &test_}}) {
      corpus::write_lines(dir / (std::string(name) + ".src"), sources_of(*set));
      corpus::write_lines(dir / (std::string(name) + ".tgt"), targets_of(*set));
      log(stamp("data").add("set", name).add("pairs", set->size()).add_fixed("mean_ratio", mean_ratio(*set), 4));
      const auto b = corpus::bucket_stats(*set);
      log(Record(stamp("buckets")).add("set", name).add("short", b.short_count).add("normal", b.normal_count).add("long", b.long_count));
    }

    std::vector<std::string> text;
    for (const auto& p : train_) {
      text.push_back(p.src);
      text.push_back(p.tgt);
    }
    merges_ = textproc::learn_bpe(text, static_cast<std::size_t>(cfg_.bpe_merges));
    vocab_ = textproc::build_vocabulary(text, merges_);
    textproc::write_merge_table(merges_, cfg_.out_dir / "bpe.txt",
                                {{"config_hash", cfg_.config_hash}, {"seed", std::to_string(cfg_.seed)}});
    log(stamp("bpe").add("merges", merges_.size()).add("vocab", vocab_.size()));
  }

  static double mean_ratio(const std::vector<corpus::SentencePair>& set) {
    double s = 0;
    for (const auto& p : set) s += p.ratio;
    return set.empty() ? 0.0 : s / static_cast<double>(set.size());
  }

  model::TrainOptions logged(model::LengthMode mode, model::TrainOptions opts, std::ofstream& train_log) {
    const auto name = std::string(model::mode_name(mode));
    train_log.open(cfg_.out_dir / "logs" / (name + ".log"), std::ios::trunc);
    opts.log = [this, name, &train_log](const Record& r) {
      Record full = stamp("train");
      full.add("model", name);
      const std::string line = full.str() + " " + r.str();
      train_log << line << "\n";
      train_log.flush();
      log_file_ << line << "\n";
      if (user_log_) user_log_(Record(full).add("detail", r.str()));
    };
    return opts;
  }

  void train_models(ExperimentResult& result) {
    model::ModelConfig mc = cfg_.model;
    mc.length_mode = model::LengthMode::kNone;
    {
      std::ofstream train_log;
      auto t = train_fresh(train_, dev_, merges_, vocab_, mc, logged(mc.length_mode, cfg_.train, train_log),
                           nnet::combine_streams(cfg_.seed, 11), nnet::combine_streams(cfg_.seed, 12),
                           cfg_.config_hash);
      result.training.push_back(t.report);
      model::save_checkpoint(t.checkpoint, cfg_.out_dir / "models" / "none.ckpt");
      log(stamp("trained").add("model", "none").add("steps", t.report.steps).add("best_step", t.report.best_step)
              .add("dev_loss", t.report.best_dev_loss));
      checkpoints_.emplace(model::LengthMode::kNone, std::move(t.checkpoint));
    }

    const auto& base_ckpt = checkpoints_.at(model::LengthMode::kNone);
    for (auto mode : cfg_.variants()) {
      if (mode == model::LengthMode::kNone) continue;
      const auto k = static_cast<std::uint64_t>(mode);
      std::ofstream train_log;
      auto t = train_finetune(base_ckpt, mode, train_, dev_, logged(mode, cfg_.finetune, train_log),
                              nnet::combine_streams(cfg_.seed, 100 + k), nnet::combine_streams(cfg_.seed, 200 + k),
                              cfg_.config_hash);
      result.training.push_back(t.report);
      const auto name = std::string(model::mode_name(mode));
      model::save_checkpoint(t.checkpoint, cfg_.out_dir / "models" / (name + ".ckpt"));
      log(stamp("trained").add("model", name).add("steps", t.report.steps).add("best_step", t.report.best_step)
              .add("dev_loss", t.report.best_dev_loss).add("lineage", t.checkpoint.lineage));
      checkpoints_.emplace(mode, std::move(t.checkpoint));
    }
  }

  StrategyResult decode_one(const Strategy& s) {
    const auto& ckpt = checkpoints_.at(s.mode);
    auto it = models_.find(s.mode);
    if (it == models_.end()) it = models_.emplace(s.mode, model::instantiate<float>(ckpt)).first;
    decode::Translator tr(it->second, ckpt.merges, ckpt.vocab);
    const auto sources = sources_of(test_);
    const auto refs = targets_of(test_);
    const auto out = tr.translate_corpus(sources, s.control, cfg_.threads);

    StrategyResult r;
    r.strategy = s;
    std::vector<std::string> hyps, meta;
    meta.push_back("# " + stamp("meta").add("strategy", s.label).str());
    double chars = 0;
    for (const auto& t : out) {
      hyps.push_back(t.text);
      meta.push_back(decode::metadata_record(t));
      chars += t.out_chars;
      if (!t.error.empty()) ++r.failures;
      if (t.unfinished) ++r.unfinished;
    }
    const auto base = cfg_.out_dir / "hyp" / sanitize(s.label);
    corpus::write_lines(base.string() + ".txt", hyps);
    corpus::write_lines(base.string() + ".meta", meta);
    r.bleu = eval::corpus_bleu(hyps, refs);
    r.lengths = eval::length_stats(hyps, sources, refs);
    r.mean_out_chars = out.empty() ? 0.0 : chars / static_cast<double>(out.size());
    log(stamp("decoded").add("strategy", s.label).add_fixed("bleu", r.bleu.bleu, 4)
            .add_fixed("bleu_star", r.bleu.bleu_star, 4).add_fixed("lr_src", r.lengths.lr_src, 4)
            .add_fixed("lr_ref", r.lengths.lr_ref, 4).add_fixed("lr_src_std", r.lengths.lr_src_std, 4)
            .add_fixed("mean_out_chars", r.mean_out_chars, 3).add("failures", r.failures)
            .add("unfinished", r.unfinished));
    return r;
  }

  void write_tables(ExperimentResult& result) {
    std::vector<eval::RunRow> rows;
    for (const auto& r : result.rows) rows.push_back({r.strategy.label, r.bleu, r.lengths});
    result.table = eval::compare_runs(rows);
    const std::string head = "# config_hash=" + cfg_.config_hash + " seed=" + std::to_string(cfg_.seed) + "\n";
    write_text(cfg_.out_dir / "table.txt", head + result.table.text());
    write_text(cfg_.out_dir / "results.tsv", head + result.table.tsv());
    std::string records;
    for (const auto& r : result.rows) {
      records += stamp("result").add("strategy", r.strategy.label).str() + " " +
                 eval::report_record(r.bleu, r.lengths) + "\n";
    }
    write_text(cfg_.out_dir / "results.records", records);
  }

  ExperimentResult run() {
    ExperimentResult result;
    write_text(cfg_.out_dir / "config.txt",
               "# config_hash=" + cfg_.config_hash + " seed=" + std::to_string(cfg_.seed) + "\n" +
                   cfg_.source.canonical());
    log(stamp("start").add("out_dir", cfg_.out_dir.string()));
    try {
      prepare_data();
      train_models(result);
      for (const auto& s : cfg_.strategies) result.rows.push_back(decode_one(s));
    } catch (const std::exception& e) {
      log(stamp("failed").add("error", e.what()).add("completed_rows", result.rows.size()));
      write_tables(result);
      throw;
    }
    write_tables(result);
    log(stamp("done").add("rows", result.rows.size()));
    return result;
  }

 private:
  const ExperimentConfig& cfg_;
  Logger user_log_;
  std::ofstream log_file_;
  std::vector<corpus::SentencePair> train_, dev_, test_;
  textproc::MergeTable merges_;
  textproc::Vocabulary vocab_;
  std::map<model::LengthMode, model::Checkpoint> checkpoints_;
  std::map<model::LengthMode, model::Transformer<float>> models_;
};

model::Checkpoint snapshot(const model::Transformer<float>& m, model::Checkpoint c,
                           const model::TrainOptions& opts, const model::TrainReport& rep) {
  c.config = m.config();
  c.hyper = opts.hyper;
  c.params = {};
  for (std::size_t i = 0; i < m.params().size(); ++i) c.params.add(m.params()[i].name, m.params()[i].value);
  c.step = rep.best_step;
  c.dev_loss = rep.best_dev_loss;
  return c;
}

model::TrainReport fit(model::Transformer<float>& m, const std::vector<corpus::SentencePair>& train,
                       const std::vector<corpus::SentencePair>& dev, const textproc::MergeTable& merges,
                       const textproc::Vocabulary& vocab, model::TrainOptions opts, std::uint64_t seed) {
  const bool tok = model::uses_token(m.config().length_mode);
  const auto tr = corpus::encode_corpus(tok ? with_tokens(train) : train, merges, vocab, tok);
  const auto dv = corpus::encode_corpus(tok ? with_tokens(dev) : dev, merges, vocab, tok);
  opts.seed = seed;
  return model::train_model(m, tr, dv, opts);
}

}  // namespace

Trained train_fresh(const std::vector<corpus::SentencePair>& train, const std::vector<corpus::SentencePair>& dev,
                    const textproc::MergeTable& merges, textproc::Vocabulary vocab, model::ModelConfig mc,
                    const model::TrainOptions& opts, std::uint64_t init_seed, std::uint64_t train_seed,
                    const std::string& config_hash) {
  if (model::uses_token(mc.length_mode)) {
    for (auto c : corpus::kAllClasses) vocab.add(std::string(corpus::token_form(c)));
  }
  mc.vocab = vocab.size();
  model::Transformer<float> m(mc, init_seed);
  Trained t;
  t.report = fit(m, train, dev, merges, vocab, opts, train_seed);
  model::Checkpoint proto;
  proto.merges = merges;
  proto.vocab = vocab;
  proto.seed = init_seed;
  proto.config_hash = config_hash;
  t.checkpoint = snapshot(m, std::move(proto), opts, t.report);
  return t;
}

Trained train_finetune(const model::Checkpoint& base, model::LengthMode mode,
                       const std::vector<corpus::SentencePair>& train, const std::vector<corpus::SentencePair>& dev,
                       const model::TrainOptions& opts, std::uint64_t init_seed, std::uint64_t train_seed,
                       const std::string& config_hash) {
  model::ModelConfig target = base.config;
  target.length_mode = mode;
  auto start = model::prepare_finetune(base, target, init_seed);
  start.seed = init_seed;
  start.config_hash = config_hash;
  auto m = model::instantiate<float>(start);
  Trained t;
  t.report = fit(m, train, dev, start.merges, start.vocab, opts, train_seed);
  t.checkpoint = snapshot(m, std::move(start), opts, t.report);
  return t;
}

std::set<std::string> synth_keys() {
  std::set<std::string> keys;
  for (const char* f : kSynthFields) keys.insert(std::string("synth.") + f);
  return keys;
}

corpus::SynthSpec synth_from(const KeyValueConfig& kv, const corpus::SynthSpec& base) {
  corpus::SynthSpec s = base;
  auto i = [&](const char* f, int& v) { v = static_cast<int>(kv.get_int(std::string("synth.") + f, v)); };
  auto d = [&](const char* f, double& v) { v = kv.get_double(std::string("synth.") + f, v); };
  i("lexicon_size", s.lexicon_size);
  i("src_word_min", s.src_word_min);
  i("src_word_max", s.src_word_max);
  i("short_delta_min", s.short_delta_min);
  i("short_delta_max", s.short_delta_max);
  i("long_delta_min", s.long_delta_min);
  i("long_delta_max", s.long_delta_max);
  i("min_words", s.min_words);
  i("max_words", s.max_words);
  d("terse", s.terse);
  d("neutral", s.neutral);
  d("verbose", s.verbose);
  d("neutral_long_fraction", s.neutral_long_fraction);
  d("neutral_flip", s.neutral_flip);
  i("variants_per_source", s.variants_per_source);
  i("pairs", s.pairs);
  s.lexicon_seed = kv.get_u64("synth.lexicon_seed", s.lexicon_seed);
  s.seed = kv.get_u64("synth.seed", s.seed);
  try {
    s.validate();
  } catch (const corpus::CorpusError& e) {
    throw ConfigError("synth", e.what());
  }
  return s;
}

std::set<std::string> train_keys(const std::string& prefix) {
  std::set<std::string> keys;
  for (const char* f : kTrainFields) keys.insert(prefix + "." + f);
  return keys;
}

model::TrainOptions train_options_from(const KeyValueConfig& kv, const std::string& prefix,
                                       const model::TrainOptions& base) {
  model::TrainOptions o = base;
  auto& h = o.hyper;
  const auto k = [&](const char* f) { return prefix + "." + f; };
  h.lr_init = kv.get_double(k("lr_init"), h.lr_init);
  h.lr_peak = kv.get_double(k("lr_peak"), h.lr_peak);
  h.warmup = kv.get_int(k("warmup"), h.warmup);
  h.dropout = kv.get_double(k("dropout"), h.dropout);
  h.attention_dropout = kv.get_double(k("attention_dropout"), h.attention_dropout);
  h.smoothing = kv.get_double(k("smoothing"), h.smoothing);
  h.beta1 = kv.get_double(k("beta1"), h.beta1);
  h.beta2 = kv.get_double(k("beta2"), h.beta2);
  h.eps = kv.get_double(k("eps"), h.eps);
  h.accumulate = static_cast<int>(kv.get_int(k("accumulate"), h.accumulate));
  o.max_tokens = static_cast<std::size_t>(kv.get_int(k("max_tokens"), static_cast<long long>(o.max_tokens)));
  o.max_epochs = static_cast<int>(kv.get_int(k("max_epochs"), o.max_epochs));
  o.max_steps = kv.get_int(k("max_steps"), o.max_steps);
  o.eval_every = kv.get_int(k("eval_every"), o.eval_every);
  o.patience = static_cast<int>(kv.get_int(k("patience"), o.patience));
  try {
    h.validate();
  } catch (const std::exception& e) {
    throw ConfigError(prefix, e.what());
  }
  if (o.max_tokens < 2) throw ConfigError(k("max_tokens"), "must be >= 2");
  if (o.max_epochs < 0) throw ConfigError(k("max_epochs"), "must be >= 0");
  if (o.patience < 1) throw ConfigError(k("patience"), "must be >= 1");
  return o;
}

std::set<std::string> model_keys() {
  return {"model.d_model", "model.ffn_hidden", "model.heads", "model.layers",
          "model.levels",  "model.base",       "model.length_mode"};
}

model::ModelConfig model_from(const KeyValueConfig& kv) {
  auto c = model::ModelConfig::from(kv);
  c.vocab = 5;  // filled in from the data
  try {
    c.validate();
  } catch (const model::ModelError& e) {
    throw ConfigError("model", e.what());
  }
  c.vocab = 0;
  return c;
}

Strategy parse_strategy(const std::string& text, int beam, double penalty_alpha) {
  Strategy s;
  s.label = text;
  s.control.beam_size = beam;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = text.find(':', start);
    parts.push_back(text.substr(start, colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  try {
    s.mode = model::parse_mode(parts[0]);
  } catch (const model::ModelError& e) {
    throw ConfigError("decode.strategies", "strategy '" + text + "': " + e.what());
  }
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (auto c = corpus::parse_class_name(p)) {
      s.control.token_class = *c;
    } else if (p == "penalty") {
      s.control.alpha = penalty_alpha;
    } else if (p.rfind("scale=", 0) == 0 || p.rfind("len=", 0) == 0) {
      const bool is_scale = p[0] == 's';
      const auto value = p.substr(p.find('=') + 1);
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != value.size() || value.empty()) {
        throw ConfigError("decode.strategies", "strategy '" + text + "': bad number '" + value + "'");
      }
      if (is_scale) s.control.scale = v;
      else s.control.target_len_chars = static_cast<int>(v);
    } else {
      throw ConfigError("decode.strategies", "strategy '" + text + "': unknown modifier '" + p + "'");
    }
  }
  try {
    s.control.check_mode(s.mode);
  } catch (const decode::DecodeError& e) {
    throw ConfigError("decode.strategies", "strategy '" + text + "': " + e.what());
  }
  return s;
}

ExperimentConfig ExperimentConfig::from(const KeyValueConfig& kv) {
  std::set<std::string> allowed = {"experiment.seed", "experiment.out_dir", "experiment.threads",
                                   "data.train",      "data.dev",           "data.test",
                                   "synth.dev_pairs", "synth.test_pairs",   "bpe.merges",
                                   "thresholds.t_min", "thresholds.t_max",  "decode.beam",
                                   "decode.penalty",  "decode.strategies",  "decode.max_sentences"};
  for (const auto& k : synth_keys()) allowed.insert(k);
  for (const auto& k : train_keys("train")) allowed.insert(k);
  for (const auto& k : train_keys("finetune")) allowed.insert(k);
  for (const auto& k : model_keys()) {
    if (k != "model.length_mode") allowed.insert(k);
  }
  kv.validate(allowed);

  ExperimentConfig c;
  c.source = kv;
  // out_dir and threads stay out of the hash
  KeyValueConfig hashed;
  for (const auto& [k, v] : kv.values()) {
    if (k != "experiment.out_dir" && k != "experiment.threads") hashed.set(k, v);
  }
  c.config_hash = hashed.hash();
  c.seed = kv.get_u64("experiment.seed", c.seed);
  c.out_dir = kv.get_string("experiment.out_dir", c.out_dir.string());
  c.threads = static_cast<int>(kv.get_int("experiment.threads", c.threads));
  if (c.threads < 1) throw ConfigError("experiment.threads", "must be >= 1");

  const bool any_tsv = kv.has("data.train") || kv.has("data.dev") || kv.has("data.test");
  if (any_tsv) {
    c.train_tsv = kv.require_string("data.train");
    c.dev_tsv = kv.require_string("data.dev");
    c.test_tsv = kv.require_string("data.test");
  }
  corpus::SynthSpec sb;
  sb.seed = c.seed;
  c.synth = synth_from(kv, sb);
  c.dev_pairs = static_cast<int>(kv.get_int("synth.dev_pairs", c.dev_pairs));
  c.test_pairs = static_cast<int>(kv.get_int("synth.test_pairs", c.test_pairs));
  if (c.dev_pairs < 1) throw ConfigError("synth.dev_pairs", "must be >= 1");
  if (c.test_pairs < 1) throw ConfigError("synth.test_pairs", "must be >= 1");

  c.bpe_merges = static_cast<int>(kv.get_int("bpe.merges", c.bpe_merges));
  if (c.bpe_merges < 0) throw ConfigError("bpe.merges", "must be >= 0");
  c.thresholds.t_min = kv.get_double("thresholds.t_min", c.thresholds.t_min);
  c.thresholds.t_max = kv.get_double("thresholds.t_max", c.thresholds.t_max);
  try {
    c.thresholds.validate();
  } catch (const corpus::CorpusError& e) {
    throw ConfigError("thresholds", e.what());
  }
  c.model = model_from(kv);
  c.train = train_options_from(kv, "train");
  c.finetune = train_options_from(kv, "finetune", c.train);

  c.beam = static_cast<int>(kv.get_int("decode.beam", c.beam));
  if (c.beam < 1) throw ConfigError("decode.beam", "must be >= 1");
  c.penalty_alpha = kv.get_double("decode.penalty", c.penalty_alpha);
  if (c.penalty_alpha < 0) throw ConfigError("decode.penalty", "must be >= 0");
  c.max_test_sentences = static_cast<std::size_t>(kv.get_int("decode.max_sentences", 0));
  const auto names = kv.get_strings("decode.strategies", {"none", "none:penalty", "token:short", "token:normal",
                                                          "token:long", "abs", "rel", "token+abs:normal",
                                                          "token+rel:normal"});
  if (names.empty()) throw ConfigError("decode.strategies", "at least one strategy is required");
  for (const auto& n : names) c.strategies.push_back(parse_strategy(n, c.beam, c.penalty_alpha));
  return c;
}

std::vector<model::LengthMode> ExperimentConfig::variants() const {
  std::vector<model::LengthMode> out;
  for (const auto& s : strategies) {
    if (std::find(out.begin(), out.end(), s.mode) == out.end()) out.push_back(s.mode);
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Logger& log) {
  Run run(cfg, log);
  return run.run();
}

}  // namespace lenctl::experiment
