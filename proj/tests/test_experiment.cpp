#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lenctl/experiment.hpp"

using namespace lenctl;
using namespace lenctl::experiment;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lenctl_test_experiment_" + name);
  fs::remove_all(p);
  return p;
}

KeyValueConfig smoke(const fs::path& out) {
  auto kv = KeyValueConfig::parse(R"(
experiment.seed = 5
synth.pairs = 60
synth.dev_pairs = 12
synth.test_pairs = 10
bpe.merges = 40
model.d_model = 16
model.ffn_hidden = 32
model.heads = 2
model.layers = 1
train.max_epochs = 2
train.max_tokens = 200
train.warmup = 10
finetune.max_epochs = 1
decode.beam = 2
decode.strategies = none, none:penalty, token:short, abs:scale=1.1, token+rel:long
)");
  kv.set("experiment.out_dir", out.string());
  return kv;
}

}  // namespace

TEST(Strategy, ParsesModifiers) {
  auto s = parse_strategy("token+abs:normal:penalty:scale=1.1", 5, 0.7);
  EXPECT_EQ(s.mode, model::LengthMode::kTokenAbs);
  EXPECT_EQ(s.control.beam_size, 5);
  EXPECT_DOUBLE_EQ(s.control.alpha, 0.7);
  EXPECT_DOUBLE_EQ(s.control.scale, 1.1);
  ASSERT_TRUE(s.control.token_class);
  EXPECT_EQ(*s.control.token_class, corpus::LengthClass::kNormal);

  auto n = parse_strategy("none", 4, 0.5);
  EXPECT_EQ(n.mode, model::LengthMode::kNone);
  EXPECT_DOUBLE_EQ(n.control.alpha, 0.0);
  EXPECT_FALSE(n.control.token_class);

  auto f = parse_strategy("abs:len=30", 4, 0.5);
  ASSERT_TRUE(f.control.target_len_chars);
  EXPECT_EQ(*f.control.target_len_chars, 30);
}

TEST(Strategy, RejectsNonsense) {
  EXPECT_THROW(parse_strategy("bogus", 4, 0.5), ConfigError);
  EXPECT_THROW(parse_strategy("abs:fast", 4, 0.5), ConfigError);
  EXPECT_THROW(parse_strategy("abs:scale=x", 4, 0.5), ConfigError);
  EXPECT_THROW(parse_strategy("token", 4, 0.5), ConfigError);         // class missing
  EXPECT_THROW(parse_strategy("none:short", 4, 0.5), ConfigError);    // no token in model
  EXPECT_THROW(parse_strategy("none:scale=1.1", 4, 0.5), ConfigError);
}

TEST(ExperimentConfig, UnknownKeyIsNamed) {
  auto kv = KeyValueConfig::parse("experiment.seed = 1\ntrain.learning_rate = 3\n");
  try {
    ExperimentConfig::from(kv);
    FAIL() << "accepted an unknown key";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "train.learning_rate");
    EXPECT_NE(std::string(e.what()).find("train.learning_rate"), std::string::npos);
  }
}

TEST(ExperimentConfig, BadValueIsNamed) {
  try {
    ExperimentConfig::from(KeyValueConfig::parse("decode.beam = 0\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "decode.beam");
  }
  EXPECT_THROW(ExperimentConfig::from(KeyValueConfig::parse("model.length_mode = abs\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from(KeyValueConfig::parse("data.train = a.tsv\n")), ConfigError);
}

TEST(ExperimentConfig, DefaultsAndVariants) {
  auto c = ExperimentConfig::from(KeyValueConfig::parse("experiment.seed = 9\n"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.synth.seed, 9u);
  EXPECT_EQ(c.finetune.max_epochs, c.train.max_epochs);
  const auto v = c.variants();
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v.front(), model::LengthMode::kNone);

  auto d = ExperimentConfig::from(KeyValueConfig::parse("decode.strategies = rel, token:short, rel:penalty\n"));
  EXPECT_EQ(d.variants(), (std::vector<model::LengthMode>{model::LengthMode::kRel, model::LengthMode::kToken}));
}

TEST(ExperimentConfig, HashFollowsContent) {
  auto a = ExperimentConfig::from(KeyValueConfig::parse("experiment.seed = 1\nbpe.merges = 10\n"));
  auto b = ExperimentConfig::from(KeyValueConfig::parse("bpe.merges = 10\n\n# same\nexperiment.seed = 1\n"));
  auto c = ExperimentConfig::from(KeyValueConfig::parse("experiment.seed = 2\nbpe.merges = 10\n"));
  EXPECT_EQ(a.config_hash, b.config_hash);
  EXPECT_NE(a.config_hash, c.config_hash);
}

TEST(Experiment, SmokeRunWritesEveryArtifact) {
  const auto out = scratch("smoke");
  const auto cfg = ExperimentConfig::from(smoke(out));
  std::size_t records = 0;
  const auto res = run_experiment(cfg, [&](const Record&) { ++records; });
  EXPECT_GT(records, 0u);

  ASSERT_EQ(res.rows.size(), 5u);
  ASSERT_EQ(res.table.rows.size(), 5u);
  EXPECT_EQ(res.training.size(), 4u);  // none, token, abs, token+rel
  for (const auto& r : res.rows) {
    EXPECT_EQ(r.failures, 0u) << r.strategy.label;
    EXPECT_EQ(r.lengths.sentences + r.lengths.excluded, 10u);
  }

  const std::string stamp = "config_hash=" + cfg.config_hash;
  for (const char* f : {"config.txt", "bpe.txt", "table.txt", "results.tsv"}) {
    ASSERT_TRUE(fs::exists(out / f)) << f;
    EXPECT_NE(slurp(out / f).find(stamp), std::string::npos) << f;
  }
  for (const char* f : {"results.records", "experiment.log"}) {
    const auto text = slurp(out / f);
    ASSERT_FALSE(text.empty()) << f;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
      EXPECT_NE(line.find(stamp), std::string::npos) << f << ": " << line;
    }
  }
  for (const char* set : {"train", "dev", "test"}) {
    EXPECT_TRUE(fs::exists(out / "data" / (std::string(set) + ".src")));
    EXPECT_TRUE(fs::exists(out / "data" / (std::string(set) + ".tgt")));
  }
  for (const char* m : {"none", "token", "abs", "token+rel"}) {
    const auto ck = model::load_checkpoint(out / "models" / (std::string(m) + ".ckpt"));
    EXPECT_EQ(ck.config_hash, cfg.config_hash);
    EXPECT_EQ(std::string(model::mode_name(ck.config.length_mode)), m);
    if (std::string(m) != "none") {
      EXPECT_FALSE(ck.lineage.empty());
    }
    EXPECT_TRUE(fs::exists(out / "logs" / (std::string(m) + ".log")));
  }
  for (const char* h : {"none", "none_penalty", "token_short", "abs_scale_1.1", "token+rel_long"}) {
    const auto hyp = corpus::read_lines(out / "hyp" / (std::string(h) + ".txt"));
    const auto meta = corpus::read_lines(out / "hyp" / (std::string(h) + ".meta"));
    EXPECT_EQ(hyp.size(), 10u) << h;
    ASSERT_EQ(meta.size(), 11u) << h;
    EXPECT_NE(meta[0].find(stamp), std::string::npos);
  }
  fs::remove_all(out);
}

TEST(Experiment, SameSeedSameTable) {
  const auto a = scratch("det_a"), b = scratch("det_b");
  auto ka = smoke(a), kb = smoke(b);
  ka.set("decode.strategies", "none, token:long, rel");
  kb.set("decode.strategies", "none, token:long, rel");
  const auto ra = run_experiment(ExperimentConfig::from(ka));
  const auto rb = run_experiment(ExperimentConfig::from(kb));
  EXPECT_EQ(ra.table.text(), rb.table.text());
  EXPECT_EQ(ra.table.tsv(), rb.table.tsv());
  for (const char* h : {"none", "token_long", "rel"}) {
    EXPECT_EQ(slurp(a / "hyp" / (std::string(h) + ".txt")), slurp(b / "hyp" / (std::string(h) + ".txt")));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Experiment, ThreadedDecodingMatchesSerial) {
  const auto a = scratch("thr_a"), b = scratch("thr_b");
  auto ka = smoke(a), kb = smoke(b);
  ka.set("decode.strategies", "none, abs");
  kb.set("decode.strategies", "none, abs");
  kb.set("experiment.threads", "3");
  const auto ra = run_experiment(ExperimentConfig::from(ka));
  const auto rb = run_experiment(ExperimentConfig::from(kb));
  EXPECT_EQ(ra.table.text(), rb.table.text());
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Experiment, FailureKeepsPartialTable) {
  const auto out = scratch("fail");
  auto kv = smoke(out);
  fs::create_directories(out);
  const auto tsv = out / "bad.tsv";
  {
    std::ofstream f(tsv);
    f << "a b\tc d\n";
  }
  kv.set("data.train", tsv.string());
  kv.set("data.dev", tsv.string());
  kv.set("data.test", (out / "missing.tsv").string());
  EXPECT_THROW(run_experiment(ExperimentConfig::from(kv)), std::exception);
  EXPECT_TRUE(fs::exists(out / "table.txt"));
  EXPECT_NE(slurp(out / "experiment.log").find("event=failed"), std::string::npos);
  fs::remove_all(out);
}
