// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/cli.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "support.hpp"

namespace cfex::cli {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "cfex");
  std::ostringstream out, err;
  CliResult r;
  r.code = dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(cfex::testing::scratch_dir("cli"));
    const CliResult r = run({"gen-synth", "--n", "12", "--classes", "3", "--per-class", "20",
                             "--test-per-class", "5", "--support", "3", "--seed", "2", "--out",
                             (*dir_ / "data").string()});
    ASSERT_EQ(r.code, kOk) << r.err;
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }
  static fs::path data(const std::string& name) { return *dir_ / "data" / name; }
  static fs::path* dir_;
};

fs::path* Cli::dir_ = nullptr;

TEST_F(Cli, HelpAndVersionExitZero) {
  EXPECT_EQ(run({"--help"}).code, kOk);
  const CliResult v = run({"--version"});
  EXPECT_EQ(v.code, kOk);
  EXPECT_NE(v.out.find(kVersion), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, kUsageError);
  EXPECT_EQ(run({"no-such-command"}).code, kUsageError);
  const CliResult missing = run({"train-mc", "--bundle", data("train.fex").string(), "--class", "0",
                                 "--out", (*dir_ / "x").string()});
  EXPECT_EQ(missing.code, kUsageError);
  EXPECT_NE(missing.err.find("--head"), std::string::npos);
  EXPECT_EQ(run({"train-mc", "--bundle", data("train.fex").string(), "--head",
                 data("head.chd").string(), "--class", "zero", "--out", (*dir_ / "x").string()})
                .code,
            kUsageError);
}

TEST_F(Cli, DataErrorsExitTwo) {
  const CliResult missing = run({"train-mc", "--bundle", (*dir_ / "absent.fex").string(), "--head",
                                 data("head.chd").string(), "--class", "0", "--out",
                                 (*dir_ / "x").string()});
  EXPECT_EQ(missing.code, kDataError);
  EXPECT_NE(missing.err.find("not found"), std::string::npos);

  // A head file passed where a bundle is expected fails on the magic.
  EXPECT_EQ(run({"train-mc", "--bundle", data("head.chd").string(), "--head",
                 data("head.chd").string(), "--class", "0", "--out", (*dir_ / "x").string()})
                .code,
            kDataError);
  EXPECT_EQ(run({"train-mc", "--bundle", data("train.fex").string(), "--head",
                 data("head.chd").string(), "--class", "9", "--out", (*dir_ / "x").string()})
                .code,
            kDataError);
  EXPECT_EQ(run({"train-mc", "--bundle", data("train.fex").string(), "--head",
                 data("head.chd").string(), "--class", "0", "--lr", "-1", "--out",
                 (*dir_ / "x").string()})
                .code,
            kDataError);
}

TEST_F(Cli, DivergenceExitsThree) {
  const CliResult r = run({"train-head", "--bundle", data("train.fex").string(), "--lr", "1e300",
                           "--epochs", "3", "--out", (*dir_ / "diverge").string()});
  EXPECT_EQ(r.code, kDivergence) << r.err;
}

TEST_F(Cli, RunManifestRecordsInputsAndOutputs) {
  const fs::path out = *dir_ / "mc";
  const CliResult r = run({"train-mc", "--bundle", data("train.fex").string(), "--head",
                           data("head.chd").string(), "--class", "1", "--epochs", "5", "--out",
                           out.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto manifest = nlohmann::json::parse(slurp(out / "run_manifest.json"));
  EXPECT_EQ(manifest["command"], "train-mc");
  EXPECT_EQ(manifest["version"], kVersion);
  EXPECT_EQ(manifest["resolved_config"]["epochs"], 5);
  EXPECT_EQ(manifest["input_digests"]["bundle"]["sha256"], sha256_file(data("train.fex")));
  EXPECT_EQ(manifest["input_digests"]["head"]["sha256"], sha256_file(data("head.chd")));
  bool listed = false;
  for (const auto& o : manifest["outputs"]) listed = listed || o == "mc_class1.cfe";
  EXPECT_TRUE(listed);
  EXPECT_TRUE(fs::exists(out / "mc_class1.cfe"));
  EXPECT_TRUE(fs::exists(out / "report.json"));
}

TEST_F(Cli, CheckpointsAreByteIdenticalAcrossRuns) {
  std::vector<std::string> bytes;
  for (const char* sub : {"a", "b"}) {
    const fs::path out = *dir_ / "repeat" / sub;
    const CliResult r = run({"train-mi", "--bundle", data("train.fex").string(), "--head",
                             data("head.chd").string(), "--class", "2", "--epochs", "5", "--out",
                             out.string()});
    ASSERT_EQ(r.code, kOk) << r.err;
    bytes.push_back(slurp(out / "mi_class2.cfe"));
  }
  EXPECT_FALSE(bytes[0].empty());
  EXPECT_EQ(bytes[0], bytes[1]);
}

TEST_F(Cli, ExplainWritesAReport) {
  const fs::path mc = *dir_ / "explain_mc";
  ASSERT_EQ(run({"train-mc", "--bundle", data("train.fex").string(), "--head",
                 data("head.chd").string(), "--class", "0", "--epochs", "5", "--out",
                 mc.string()})
                .code,
            kOk);
  const fs::path out = *dir_ / "explain";
  const CliResult r = run({"explain", "--bundle", data("train.fex").string(), "--head",
                           data("head.chd").string(), "--checkpoint", (mc / "mc_class0.cfe").string(),
                           "--image", "0", "--manifest", data("dataset.json").string(), "--out",
                           out.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto j = nlohmann::json::parse(slurp(out / "explanation.json"));
  EXPECT_TRUE(j.contains("filters"));
  EXPECT_TRUE(j.contains("top_filters"));
}

TEST(Sha256, KnownDigest) {
  const fs::path dir = cfex::testing::scratch_dir("sha");
  std::ofstream(dir / "abc", std::ios::binary) << "abc";
  EXPECT_EQ(sha256_file(dir / "abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  fs::remove_all(dir);
}

}  // namespace
}  // namespace cfex::cli
