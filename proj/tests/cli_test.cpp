#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <regex>
#include <sstream>

#include "test_util.hpp"

namespace smamba {
namespace {

namespace fs = std::filesystem;
using testing::fixture;
using testing::scratch_dir;

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliRun cli(const std::string& args, const fs::path& dir) {
  const std::string cmd = std::string("'") + SMAMBA_CLI + "' " + args + " > '" +
                          (dir / "stdout.txt").string() + "' 2> '" + (dir / "stderr.txt").string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(dir / "stdout.txt"),
          slurp(dir / "stderr.txt")};
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const std::string kTiny = " --set d_model=8 --set n_layers=1 --set d_state=4 --set batch_size=16";

TEST(Cli, TokenizeAndScaffold) {
  const auto dir = scratch_dir("cli_basic");
  CliRun r = cli("tokenize --smiles 'CC(=O)[NH3+]Cl'", dir);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "C C ( = O ) [NH3+] Cl\n");
  r = cli("scaffold --smiles 'OCCc1ccccc1'", dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "c1ccccc1\n");
  r = cli("scaffold --smiles CCO", dir);
  EXPECT_EQ(r.out, "(acyclic)\n");
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir("cli_codes");
  CliRun r = cli("tokenize --smiles 'CC(C'", dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("byte"), std::string::npos) << r.err;
  r = cli("tokenize --smiles CCO --vocab " + q(dir / "missing.vocab"), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing.vocab"), std::string::npos) << r.err;
  EXPECT_EQ(cli("no-such-command", dir).code, 3);
  EXPECT_EQ(cli("tokenize", dir).code, 3);
  r = cli("build-vocab --corpus " + q(fixture("overfit_32.smi")) + " --out " + q(dir / "v.txt"), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli("pretrain --corpus " + q(fixture("overfit_32.smi")) + " --vocab " + q(dir / "v.txt") +
              " --out " + q(dir / "m.ckpt") + " --set no_such_key=1",
          dir);
  EXPECT_EQ(r.code, 5);
  r = cli("pretrain --corpus " + q(fixture("overfit_32.smi")) + " --vocab " + q(dir / "v.txt") +
              " --out " + q(dir / "m.ckpt") + " --set lr=1e300 --set clip_norm=0 --set max_steps=3" + kTiny,
          dir);
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch_dir("cli_pipeline"));
    const fs::path& d = *dir_;
    CliRun r = cli("build-vocab --corpus " + q(fixture("zinc_mini_1k.smi")) + " --out " + q(d / "v.txt"), d);
    ASSERT_EQ(r.code, 0) << r.err;
    r = cli(pretrain_args(d / "a.ckpt"), d);
    ASSERT_EQ(r.code, 0) << r.err;
    r = cli("split --task-csv " + q(fixture("dili.csv")) + " --label-kind binary --seed 1 --out " +
                q(d / "dili.split"),
            d);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string pretrain_args(const fs::path& out) {
    const fs::path& d = *dir_;
    return "pretrain --corpus " + q(fixture("zinc_mini_1k.smi")) + " --vocab " + q(d / "v.txt") +
           " --out " + q(out) + " --seed 5 --set max_steps=4" + kTiny;
  }
  static std::string finetune_args(const fs::path& out, const std::string& extra = "") {
    const fs::path& d = *dir_;
    return "finetune --base-ckpt " + q(d / "a.ckpt") + " --task-csv " + q(fixture("dili.csv")) +
           " --label-kind binary --split " + q(d / "dili.split") + " --out " + q(out) +
           " --set epochs=1 --set batch_size=32" + extra;
  }

  static fs::path* dir_;
};
fs::path* CliPipeline::dir_ = nullptr;

TEST_F(CliPipeline, PretrainIsByteReproducible) {
  const fs::path& d = *dir_;
  const CliRun r = cli(pretrain_args(d / "b.ckpt"), d);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(d / "a.ckpt"), slurp(d / "b.ckpt"));
  EXPECT_EQ(slurp(d / "a.ckpt.log.jsonl"), slurp(d / "b.ckpt.log.jsonl"));
  std::istringstream log(slurp(d / "a.ckpt.log.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("split"), "train");
    EXPECT_EQ(j.at("step"), ++n);
  }
  EXPECT_EQ(n, 4u);
}

TEST_F(CliPipeline, ManifestRecordsEveryCommand) {
  std::istringstream in(slurp(*dir_ / "manifest.jsonl"));
  std::string line;
  std::vector<std::string> commands;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    commands.push_back(j.at("command"));
    EXPECT_TRUE(j.contains("outputs")) << line;
    EXPECT_TRUE(j.contains("wall_clock_s")) << line;
  }
  ASSERT_GE(commands.size(), 3u);
  EXPECT_EQ(commands[0], "build-vocab");
  EXPECT_EQ(commands[1], "pretrain");
  EXPECT_EQ(commands[2], "split");
}

TEST_F(CliPipeline, FinetuneReportMatchesEvaluate) {
  const fs::path& d = *dir_;
  CliRun r = cli(finetune_args(d / "ft.ckpt", " --report " + q(d / "report.jsonl")), d);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::regex line(R"(\{"dataset":"[^"]+","metric":"ROC-AUC","seed":0,"value":[-+0-9.eE]+\}\n)");
  EXPECT_TRUE(std::regex_match(r.out, line)) << r.out;
  EXPECT_EQ(slurp(d / "report.jsonl"), r.out);

  const CliRun e = cli("evaluate --ckpt " + q(d / "ft.ckpt") + " --task-csv " + q(fixture("dili.csv")) +
                        " --split " + q(d / "dili.split") + " --on test",
                    d);
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.out, r.out);

  // Rerunning gives the same checkpoint bytes.
  ASSERT_EQ(cli(finetune_args(d / "ft2.ckpt"), d).code, 0);
  EXPECT_EQ(slurp(d / "ft.ckpt"), slurp(d / "ft2.ckpt"));
}

TEST_F(CliPipeline, SeveralSeedsAggregate) {
  const fs::path& d = *dir_;
  const CliRun r = cli(finetune_args(d / "multi.ckpt", " --seeds 2"), d);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\"seed\":0"), std::string::npos);
  EXPECT_NE(r.out.find("\"seed\":1"), std::string::npos);
  EXPECT_TRUE(std::regex_search(r.out, std::regex(R"(ROC-AUC test [0-9.]+±[0-9.]+ over 2 seeds)"))) << r.out;
  EXPECT_TRUE(fs::exists(d / "multi-seed0.ckpt"));
  EXPECT_TRUE(fs::exists(d / "multi-seed1.ckpt"));
}

TEST_F(CliPipeline, HeadAndMetricMismatches) {
  const fs::path& d = *dir_;
  EXPECT_EQ(cli(finetune_args(d / "x.ckpt", " --metric MAE"), d).code, 5);
  CliRun r = cli("evaluate --ckpt " + q(d / "a.ckpt") + " --task-csv " + q(fixture("dili.csv")) +
                  " --label-kind binary",
              d);
  EXPECT_EQ(r.code, 5) << r.err;
  ASSERT_EQ(cli(finetune_args(d / "h.ckpt"), d).code, 0);
  r = cli("evaluate --ckpt " + q(d / "h.ckpt") + " --task-csv " + q(fixture("caco2.csv")) +
              " --label-kind continuous",
          d);
  EXPECT_EQ(r.code, 5) << r.err;
}

TEST_F(CliPipeline, CorruptCheckpointIsAnIoError) {
  const fs::path& d = *dir_;
  std::string bytes = slurp(d / "a.ckpt");
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 1);
  std::ofstream(d / "bad.ckpt", std::ios::binary) << bytes;
  const CliRun r = cli("finetune --base-ckpt " + q(d / "bad.ckpt") + " --task-csv " + q(fixture("dili.csv")) +
                        " --label-kind binary --out " + q(d / "y.ckpt"),
                    d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("checksum"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace smamba
