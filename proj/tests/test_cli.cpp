// Copyright 2026 The d4 Authors.
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
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "d4/training.hpp"

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded.
Result cli(const std::string& args) {
  const std::string cmd = "cd " D4_SOURCE_DIR " && " D4_CLI " " + args + " 2>/dev/null";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Scratch : public ::testing::Test {
 protected:
  fs::path dir = fs::temp_directory_path() / ("d4_cli_" + std::to_string(::getpid()));
  void SetUp() override { fs::create_directories(dir); }
  void TearDown() override { fs::remove_all(dir); }
  std::string write(const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return (dir / name).string();
  }
};

TEST(Cli, RunsTheBubbleExample) {
  const Result r = cli("run sketches/bubble.d4");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "7 4 2 2\n");
}

TEST(Cli, ContinuousDiscretizedAgrees) {
  for (const char* plan : {"naive", "collapse", "full"}) {
    const Result r = cli(std::string("run sketches/bubble.d4 --continuous --discretize --plan ") + plan);
    EXPECT_EQ(r.code, 0) << plan;
    EXPECT_EQ(r.out, "7 4 2 2\n") << plan;
  }
}

TEST(Cli, RawContinuousRun) {
  const Result r = cli("run sketches/bubble.d4 --continuous");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "7 4 2 2\n");
}

TEST(Cli, HaltOnlyKeepsInput) {
  EXPECT_EQ(cli("run sketches/halt-only.d4 --in 5").out, "5\n");
  EXPECT_EQ(cli("run sketches/halt-only.d4 --in 5,3").out, "5 3\n");
}

TEST(Cli, SortReferenceOnInput) {
  const Result r = cli("run sketches/sort_reference.d4 --in 3,9,1,3");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "9 3 1\n");
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("run").code, 2);
  EXPECT_EQ(cli("run sketches/bubble.d4 --no-such-flag").code, 2);
  EXPECT_EQ(cli("run sketches/bubble.d4 --plan sideways").code, 2);
  EXPECT_EQ(cli("train --task sort").code, 2);
  EXPECT_EQ(cli("train --sketch sketches/sort_permute.d4 --task juggle").code, 2);
  EXPECT_EQ(cli("eval --checkpoint /nonexistent").code, 2);
  EXPECT_EQ(cli("run /nonexistent/missing.d4").code, 2);
}

TEST_F(Scratch, FaultsExitOne) {
  EXPECT_EQ(cli("run " + write("under.d4", "DROP\n")).code, 1);
  EXPECT_EQ(cli("run " + write("syntax.d4", ": F DUP\n")).code, 1);
  EXPECT_EQ(cli("run " + write("loop.d4", "BEGIN 0 UNTIL\n") + " --max-steps 50").code, 1);
}

TEST_F(Scratch, TraceCsv) {
  const Result r = cli("trace " + write("two.d4", "1 2 +\n"));
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out,
            "step,c,line,word,D,R\n"
            "1,0,1,1,1,\n"
            "2,1,1,2,1 2,\n"
            "3,2,1,+,3,\n");
  const std::string out = (dir / "trace.csv").string();
  EXPECT_EQ(cli("trace " + write("one.d4", "1\n") + " --continuous --out " + out).code, 0);
  std::ifstream in(out);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, d4::state_csv_header());
}

TEST_F(Scratch, TrainThenEval) {
  const Result r = cli("train --sketch sketches/sort_compare.d4 --task sort --train-length 2 --train-size 16 --dev-size 8 "
                       "--test-size 8 --test-lengths 3 --epochs 2 --seed 4 --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string prefix = "run directory: ";
  ASSERT_EQ(r.out.rfind(prefix, 0), 0u) << r.out;
  const fs::path run = r.out.substr(prefix.size(), r.out.find('\n') - prefix.size());
  for (const char* f : {"config.json", "train.jsonl", "dev.jsonl", "program.txt", "plan.txt", "metrics.csv",
                        "results.json", "checkpoint/params.bin", "checkpoint/params.json", "checkpoint/manifest.json"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  const Result e = cli("eval --checkpoint " + (run / "checkpoint").string() + " --lengths 3 --test-size 4");
  EXPECT_EQ(e.code, 0);
  EXPECT_NE(e.out.find('3'), std::string::npos);
  const Result with = cli("run sketches/sort_compare.d4 --in 1,2,2 --checkpoint " + (run / "checkpoint").string());
  EXPECT_EQ(with.code, 0);
}

TEST_F(Scratch, TrainConfigRejectsUnknownKeys) {
  const std::string cfg = write("bad.json", R"({"sketch": "sketches/sort_compare.d4", "task": "sort", "colour": 3, "epochs": 0})");
  EXPECT_EQ(cli("train --config " + cfg).code, 2);
}

TEST_F(Scratch, BenchOpt) {
  const std::string csv = (dir / "bench.csv").string();
  const Result r = cli("bench-opt sketches/sort_reference.d4 --lengths 2,3 --repeats 2 --out " + csv);
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("length\tvariant\tsteps\tmedian_ms\tspeedup\n", 0), 0u);
  EXPECT_NE(r.out.find("full"), std::string::npos);
  EXPECT_TRUE(fs::exists(csv));
}

}  // namespace
