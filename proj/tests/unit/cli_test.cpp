#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmac/cli/app.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "dmac");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = dmac::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const std::string name = ::testing::UnitTest::GetInstance()->current_test_info()->name();
    root = fs::temp_directory_path() / ("dmac_cli_" + name);
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }

  std::string at(const std::string& rel) const { return (root / rel).string(); }

  void make_set(const std::string& rel = "set") {
    const auto r = run({"gen", "--counts", "1,1,1", "--seed", "3", "--out", at(rel)});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path root;
};

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"gen", "--bogus"}).code, 1);
  EXPECT_EQ(run({"gen", "--counts", "1,2"}).code, 1);
  EXPECT_EQ(run({"gen", "--counts", "1,1,1", "--kind", "blur"}).code, 1);
  EXPECT_EQ(run({"eval", "--checkpoint", at("none.ckpt"), "--data", at("x")}).code, 1);
}

TEST_F(CliTest, GenIsReproducible) {
  make_set("a");
  make_set("b");
  EXPECT_EQ(slurp(root / "a/manifest.jsonl"), slurp(root / "b/manifest.jsonl"));
  EXPECT_TRUE(dmac::data::verify_set(root / "a").empty());
  const auto m = nlohmann::json::parse(slurp(root / "a/run_manifest.json"));
  EXPECT_EQ(m["command"], "gen");
  EXPECT_EQ(m["options"]["seed"], "3");
}

TEST_F(CliTest, ConfigFileWithFlagOverride) {
  std::ofstream(root / "gen.json") << R"({"counts": [0, 1, 0], "seed": 5, "kind": "rotation"})";
  const auto r = run({"gen", "--config", at("gen.json"), "--seed", "6", "--out", at("set")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(slurp(root / "set/run_manifest.json"));
  EXPECT_EQ(m["options"]["seed"], "6");
  EXPECT_EQ(m["options"]["kind"], "rotation");
  const auto entries = dmac::data::read_manifest(root / "set");
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_EQ(entries[0].difficulty, dmac::data::Difficulty::Normal);

  std::ofstream(root / "bad.json") << R"({"countz": [1, 1, 1]})";
  EXPECT_EQ(run({"gen", "--config", at("bad.json"), "--counts", "0,0,1", "--out", at("x")}).code, 1);
  EXPECT_EQ(run({"gen", "--config", at("missing.json"), "--counts", "0,0,1", "--out", at("x")}).code, 1);
}

TEST_F(CliTest, OutputRootFromEnvironment) {
  ::setenv("DMAC_OUTPUT_ROOT", at("outroot").c_str(), 1);
  const auto r = run({"gen", "--counts", "0,0,1"});
  ::unsetenv("DMAC_OUTPUT_ROOT");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "outroot/gen/manifest.jsonl"));
}

TEST_F(CliTest, TrainEvaluateInfer) {
  make_set();
  auto r = run({"pretrain", "--data", at("set"), "--iterations", "3", "--batch-size", "3", "--out", at("pre")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto log = slurp(root / "pre/log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);

  r = run({"advtrain", "--data", at("set"), "--checkpoint", at("pre/final.ckpt"), "--iterations", "1", "--batch-size",
           "3", "--variant", "hinge", "--out", at("adv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto meta = dmac::train::load_checkpoint(root / "adv/final.ckpt").meta;
  EXPECT_EQ(meta["counters"]["pretrain"], 3);
  EXPECT_EQ(meta["counters"]["adversarial"], 1);
  EXPECT_EQ(meta["config"]["variant"], "hinge");

  r = run({"eval", "--checkpoint", at("adv/final.ckpt"), "--data", at("set"), "--dump-masks", "--out", at("ev")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("AUC"), std::string::npos);
  EXPECT_TRUE(fs::exists(root / "ev/masks/t000000-foreground_probe_mask.png"));
  std::ifstream rep(root / "ev/report.jsonl");
  std::string line, last;
  std::size_t rows = 0;
  while (std::getline(rep, line)) ++rows, last = line;
  EXPECT_EQ(rows, 10u);
  EXPECT_TRUE(nlohmann::json::parse(last).contains("summary"));

  const auto entries = dmac::data::read_manifest(root / "set");
  r = run({"infer", "--checkpoint", at("adv/final.ckpt"), "--probe", at("set/" + entries[0].paths.probe), "--donor",
           at("set/" + entries[0].paths.donor), "--out", at("inf")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t w = 0, h = 0;
  const auto mask = dmac::data::detail::decode_png(root / "inf/probe_mask.png", PNG_FORMAT_GRAY, w, h);
  EXPECT_EQ(mask.size(), 256u * 256u);
  EXPECT_TRUE(nlohmann::json::parse(slurp(root / "inf/score.json")).contains("score"));
}

TEST_F(CliTest, InferResizesOddInputs) {
  make_set();
  ASSERT_EQ(run({"pretrain", "--data", at("set"), "--iterations", "1", "--out", at("pre")}).code, 0);
  dmac::data::Image odd(100, 60);
  for (std::size_t i = 0; i < odd.rgb.size(); ++i) odd.rgb[i] = static_cast<std::uint8_t>(i * 7);
  dmac::data::write_png(root / "odd.png", odd);
  const auto r = run({"infer", "--checkpoint", at("pre/final.ckpt"), "--probe", at("odd.png"), "--donor",
                      at("odd.png"), "--out", at("inf")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t w = 0, h = 0;
  dmac::data::detail::decode_png(root / "inf/donor_mask.png", PNG_FORMAT_GRAY, w, h);
  EXPECT_EQ(w, 100u);
  EXPECT_EQ(h, 60u);
}

TEST_F(CliTest, ResumedPretrainingMatchesUninterrupted) {
  make_set();
  auto args = [&](const std::string& out) {
    return std::vector<std::string>{"pretrain", "--data", at("set"), "--iterations", "4", "--batch-size", "3",
                                    "--checkpoint-every", "2", "--out", at(out)};
  };
  ASSERT_EQ(run(args("full")).code, 0);
  auto resumed = args("part");
  resumed.insert(resumed.end(), {"--resume", at("full/ckpt-000002.ckpt")});
  const auto r = run(resumed);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(root / "full/final.ckpt"), slurp(root / "part/final.ckpt"));
}

TEST_F(CliTest, BadInputsAreValidationErrors) {
  make_set();
  std::ofstream(root / "junk.ckpt") << "not a checkpoint\n";
  EXPECT_EQ(run({"eval", "--checkpoint", at("junk.ckpt"), "--data", at("set"), "--out", at("ev")}).code, 1);
  fs::create_directories(root / "empty");
  EXPECT_EQ(run({"pretrain", "--data", at("empty"), "--out", at("pre")}).code, 1);
  EXPECT_EQ(run({"pretrain", "--data", at("set"), "--batch-size", "0", "--out", at("pre")}).code, 1);
}

TEST_F(CliTest, GradcheckReportsInjectedFault) {
  const auto r = run({"gradcheck", "--seeds", "2", "--no-model", "--inject-wrong-sign", "--out", at("gc")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("FAIL injected wrong-sign adjoint"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("PASS relu"), std::string::npos) << r.out;
}
