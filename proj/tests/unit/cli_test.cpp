// Copyright 2026 The autous Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "test_support.hpp"

namespace {

using autous::testing::GoldenPath;
using autous::testing::ReadText;
using autous::testing::TempDir;
using autous::testing::WriteText;

struct RunResult {
  int exit_code = -1;
  std::string out;
};

std::string Quote(const std::string& arg) {
  std::string q = "'";
  for (char c : arg) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

RunResult RunCli(const std::vector<std::string>& args) {
  std::string cmd = Quote(AUTOUS_CLI);
  for (const auto& a : args) cmd += " " + Quote(a);
  cmd += " 2>/dev/null";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

TEST(Cli, DatasetFilterExitCodes) {
  RunResult ok = RunCli({"dataset", "filter", "--acc", "0.80", "--classes", "5"});
  EXPECT_EQ(ok.exit_code, 0);
  EXPECT_NE(ok.out.find("accepted"), std::string::npos);
  EXPECT_NE(ok.out.find("0.3562"), std::string::npos);
  EXPECT_EQ(RunCli({"dataset", "filter", "--acc", "0.30", "--classes", "5"}).exit_code, 1);
  EXPECT_EQ(RunCli({"dataset", "filter", "--acc", "1.5", "--classes", "5"}).exit_code, 2);
  EXPECT_EQ(RunCli({"dataset", "filter", "--bogus"}).exit_code, 2);
  EXPECT_EQ(RunCli({}).exit_code, 2);
}

TEST(Cli, ScorePrintsTwoDecimals) {
  TempDir tmp;
  WriteText(tmp / "grades.csv",
            "case_id,rater_id,role,score\n"
            "c1,a1,amateur,4\nc1,a2,amateur,5\nc1,a3,amateur,2\nc1,e1,expert,4\nc1,e2,expert,3\n");
  RunResult r = RunCli({"score", "--grades", (tmp / "grades.csv").string(), "--meteor", "0.42"});
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, "3.25\n");
  RunResult bad = RunCli({"score", "--grades", (tmp / "grades.csv").string(), "--meteor", "1.5"});
  EXPECT_EQ(bad.exit_code, 2);
  WriteText(tmp / "bad.csv", "c1,a1,amateur,9\n");
  EXPECT_EQ(RunCli({"score", "--grades", (tmp / "bad.csv").string(), "--meteor", "0.4"}).exit_code, 3);
}

TEST(Cli, DiagnosePromptMatchesGolden) {
  nlohmann::json ctx = nlohmann::json::parse(ReadText(GoldenPath("case1_context.json")));
  RunResult r = RunCli({"diagnose", "--label", "Malignant", "--chief-complaint", ctx["chief_complaint"],
                     "--physical-exam", ctx["physical_exam"], "--additional-info", ctx["additional_info"],
                     "--prompt-only"});
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, ReadText(GoldenPath("case1_prompt.txt")));
  RunResult mock = RunCli({"diagnose", "--label", "COVID", "--chief-complaint", "Cough", "--json"});
  EXPECT_EQ(mock.exit_code, 0);
  nlohmann::json j = nlohmann::json::parse(mock.out);
  EXPECT_EQ(j["opinion"]["label"], "COVID");
  EXPECT_FALSE(j["justification"].get<std::string>().empty());
  EXPECT_EQ(RunCli({"diagnose", "--label", "Normal", "--chief-complaint", "x"}).exit_code, 3);
}

TEST(Cli, SynthTrainClassify) {
  TempDir tmp;
  RunResult synth = RunCli({"dataset", "synth", "--out", (tmp / "syn").string(), "--per-class", "2", "--frames", "8",
                         "--size", "16", "--seed", "1"});
  ASSERT_EQ(synth.exit_code, 0);
  std::string manifest = (tmp / "syn" / "manifest.tsv").string();
  RunResult train = RunCli({"train", "--manifest", manifest, "--out", (tmp / "m.ckpt").string(), "--preset", "tiny",
                         "--epochs", "1"});
  ASSERT_EQ(train.exit_code, 0);
  std::string clip = std::filesystem::directory_iterator(tmp / "syn" / "clips")->path().string();
  RunResult cls = RunCli({"classify", clip, "--checkpoint", (tmp / "m.ckpt").string(), "--json"});
  EXPECT_EQ(cls.exit_code, 0);
  nlohmann::json j = nlohmann::json::parse(cls.out);
  double sum = 0;
  for (double p : j["probs"]) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-5);
  RunResult missing = RunCli({"eval", "--checkpoint", (tmp / "none.ckpt").string(), "--manifest", manifest});
  EXPECT_NE(missing.exit_code, 0);
}

}  // namespace
