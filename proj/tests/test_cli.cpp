#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "lenctl/corpus.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

// Runs the CLI through the shell; stderr is kept in err.txt inside `dir`.
Run cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" LENCTL_BIN "' " + args + " 2> err.txt";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  for (std::size_t n; (n = fread(buf.data(), 1, buf.size(), p)) > 0;) r.out.append(buf.data(), n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lenctl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string err() const { return slurp(dir_ / "err.txt"); }

  fs::path dir_;
};

const char* kSmoke = R"(experiment.seed = 3
synth.pairs = 50
synth.dev_pairs = 10
synth.test_pairs = 8
bpe.merges = 30
model.d_model = 16
model.ffn_hidden = 32
model.heads = 2
model.layers = 1
train.max_epochs = 1
train.warmup = 10
finetune.max_epochs = 1
decode.beam = 2
decode.strategies = none, token:short, token:long, abs, token+abs:normal:scale=1.1
)";

}  // namespace

TEST_F(Cli, BucketCountsOnePerClass) {
  // ratios 0.5, 1.1 and 1.5 against a 10-character source
  put(dir_ / "c.src", "aaaa bbbbb\naaaa bbbbb\naaaa bbbbb\n");
  put(dir_ / "c.tgt", "ccccc\ncccc dddddd\ncccccc ddddddee\n");
  auto r = cli(dir_, "bucket --src c.src --tgt c.tgt");
  EXPECT_EQ(r.status, 0) << err();
  EXPECT_NE(r.out.find("short=1 normal=1 long=1 total=3"), std::string::npos) << r.out;

  put(dir_ / "c.tsv", "aaaa bbbbb\tccccc\naaaa bbbbb\tcccc dddddd\naaaa bbbbb\tcccccc ddddddee\n");
  r = cli(dir_, "bucket --tsv c.tsv");
  EXPECT_EQ(r.status, 0) << err();
  EXPECT_NE(r.out.find("short=1 normal=1 long=1 total=3"), std::string::npos) << r.out;

  // boundaries are inclusive from above: 1.0 is short, 1.2 is normal
  put(dir_ / "b.src", "aaaaa\naaaaa\n");
  put(dir_ / "b.tgt", "bbbbb\nbbbbbb\n");
  r = cli(dir_, "bucket --src b.src --tgt b.tgt");
  EXPECT_NE(r.out.find("short=1 normal=1 long=0"), std::string::npos) << r.out;
}

TEST_F(Cli, EveryCommandHasHelp) {
  for (const char* c : {"synth", "bpe", "bucket", "train", "finetune", "translate", "evaluate", "experiment",
                        "encodings"}) {
    const auto r = cli(dir_, std::string(c) + " --help");
    EXPECT_EQ(r.status, 0) << c;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << c;
  }
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(cli(dir_, "").status, 1);
  EXPECT_EQ(cli(dir_, "frobnicate").status, 1);
  EXPECT_EQ(cli(dir_, "bucket --src missing.src --tgt missing.tgt").status, 1);
  EXPECT_EQ(cli(dir_, "encodings --dim 3").status, 1);

  put(dir_ / "bad.cfg", "experiment.seed = 1\nmodel.depth = 3\n");
  auto r = cli(dir_, "experiment --config bad.cfg");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(err().find("key=model.depth"), std::string::npos) << err();

  put(dir_ / "broken.ckpt", "LCTL not really a checkpoint");
  put(dir_ / "in.txt", "a b\n");
  r = cli(dir_, "translate --ckpt broken.ckpt --in in.txt --out out.txt");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(err().find("kind=runtime"), std::string::npos) << err();

  put(dir_ / "h.txt", "a\nb\n");
  put(dir_ / "r.txt", "a\n");
  EXPECT_NE(cli(dir_, "evaluate --hyp h.txt --src h.txt --ref r.txt").status, 0);
}

TEST_F(Cli, EncodingsPrintsVector) {
  const auto r = cli(dir_, "encodings --variant abs --dim 4 --pos 3 --len 10");
  ASSERT_EQ(r.status, 0) << err();
  std::istringstream in(r.out);
  std::string head;
  std::getline(in, head);
  EXPECT_EQ(head.rfind("# ", 0), 0u);
  std::vector<double> v;
  for (double x; in >> x;) v.push_back(x);
  ASSERT_EQ(v.size(), 4u);
  EXPECT_DOUBLE_EQ(v[0], std::sin(7.0));
  EXPECT_DOUBLE_EQ(v[1], std::cos(7.0 / std::pow(10000.0, 0.25)));
}

TEST_F(Cli, PipelineStepByStep) {
  ASSERT_EQ(cli(dir_, "synth --out data --name train --pairs 60").status, 0) << err();
  ASSERT_EQ(cli(dir_, "synth --out data --name dev --pairs 12 --seed 99").status, 0) << err();
  EXPECT_NE(slurp(dir_ / "data" / "train.manifest").find("config_hash="), std::string::npos);
  ASSERT_EQ(cli(dir_, "bpe --in data/train.src --in data/train.tgt --merges 30 --out bpe.txt").status, 0) << err();
  EXPECT_EQ(slurp(dir_ / "bpe.txt").rfind("#bpe-v1 config_hash=", 0), 0u);

  put(dir_ / "tiny.cfg", "model.d_model = 16\nmodel.ffn_hidden = 32\nmodel.heads = 2\nmodel.layers = 1\n"
                         "train.max_epochs = 1\ntrain.warmup = 5\n");
  const std::string data = " --src data/train.src --tgt data/train.tgt --dev-src data/dev.src --dev-tgt data/dev.tgt";
  ASSERT_EQ(cli(dir_, "train --config tiny.cfg --bpe bpe.txt --out base.ckpt" + data).status, 0) << err();
  put(dir_ / "ft.cfg", "finetune.max_epochs = 1\n");
  ASSERT_EQ(cli(dir_, "finetune --config ft.cfg --base base.ckpt --mode token+rel --out tr.ckpt" + data).status, 0)
      << err();

  auto r = cli(dir_, "translate --ckpt tr.ckpt --in data/dev.src --out hyp.txt --class long --beam 2");
  ASSERT_EQ(r.status, 0) << err();
  const auto hyp = lenctl::corpus::read_lines(dir_ / "hyp.txt");
  const auto meta = lenctl::corpus::read_lines(dir_ / "hyp.txt.meta");
  EXPECT_EQ(hyp.size(), 12u);
  ASSERT_EQ(meta.size(), 13u);
  EXPECT_NE(meta[0].find("config_hash="), std::string::npos);
  EXPECT_NE(meta[0].find("seed="), std::string::npos);
  EXPECT_NE(meta[1].find("target_len="), std::string::npos);

  r = cli(dir_, "translate --ckpt tr.ckpt --in data/dev.src --out fixed.txt --class long --beam 2 "
                "--target-len-mode fixed:12 --meta fixed.meta");
  ASSERT_EQ(r.status, 0) << err();
  EXPECT_NE(slurp(dir_ / "fixed.meta").find("target_len=12"), std::string::npos);

  r = cli(dir_, "evaluate --hyp hyp.txt --src data/dev.src --ref data/dev.tgt --format record");
  ASSERT_EQ(r.status, 0) << err();
  EXPECT_NE(r.out.find("bleu="), std::string::npos);
  EXPECT_NE(r.out.find("lr_src_std="), std::string::npos);

  // the base model has neither tokens nor encodings
  EXPECT_EQ(cli(dir_, "translate --ckpt base.ckpt --in data/dev.src --out x.txt --class short").status, 1);
  EXPECT_EQ(cli(dir_, "finetune --base base.ckpt --mode sideways --out y.ckpt" + data).status, 1);
}

TEST_F(Cli, ExperimentTwiceSameTableAndStaysInOutDir) {
  put(dir_ / "smoke.cfg", kSmoke);
  const auto a = cli(dir_, "experiment --config smoke.cfg --out run_a");
  ASSERT_EQ(a.status, 0) << err();
  const auto b = cli(dir_, "experiment --config smoke.cfg --out run_b");
  ASSERT_EQ(b.status, 0) << err();
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("token+abs:normal:scale=1.1"), std::string::npos);
  EXPECT_EQ(slurp(dir_ / "run_a" / "results.tsv"), slurp(dir_ / "run_b" / "results.tsv"));

  std::set<std::string> top;
  for (const auto& e : fs::directory_iterator(dir_)) top.insert(e.path().filename().string());
  EXPECT_EQ(top, (std::set<std::string>{"smoke.cfg", "run_a", "run_b", "err.txt"}));

  for (const char* f : {"config.txt", "bpe.txt", "table.txt", "results.tsv", "results.records", "experiment.log",
                        "models/none.ckpt", "models/token.ckpt", "models/abs.ckpt", "models/token+abs.ckpt",
                        "hyp/none.txt", "hyp/none.meta", "hyp/token_short.txt", "hyp/abs.txt",
                        "hyp/token+abs_normal_scale_1.1.txt", "data/test.src", "logs/token.log"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run_a" / f)) << f;
  }
}
