// Copyright 2026 The privdistill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "privdistill.hpp"

namespace privdistill {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code = -1;
  std::string output;
};

// Runs the CLI through the shell, stderr folded into the output.
Outcome Cli(const std::string& args) {
  const std::string cmd = std::string(PRIVDISTILL_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  Outcome o;
  if (pipe == nullptr) return o;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) o.output.append(buf.data(), n);
  const int status = pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

fs::path Scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("privdistill_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path WriteConfig(const fs::path& dir, const json& j) {
  const auto p = dir / "config.json";
  io::WriteJson(p, j);
  return p;
}

TEST(Cli, HelpExitsCleanly) {
  const auto o = Cli("--help");
  EXPECT_EQ(o.code, 0);
  EXPECT_NE(o.output.find("distill"), std::string::npos);
}

TEST(Cli, UnknownSubcommandIsUsageError) { EXPECT_EQ(Cli("frobnicate").code, 1); }

TEST(Cli, MissingConfigNamesPath) {
  const auto o = Cli("--config /nonexistent/cfg.json world gen --out /tmp/privdistill_cli_never");
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.output.find("/nonexistent/cfg.json"), std::string::npos) << o.output;
}

TEST(Cli, InvalidConfigValueIsConfigError) {
  const auto dir = Scratch("invalid");
  const auto cfg = WriteConfig(dir, json::parse(R"({"filter": {"delta": 2.0}})"));
  const auto o = Cli("--config " + cfg.string() + " world gen --out " + dir.string());
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.output.find("error"), std::string::npos);
}

TEST(Cli, PrintsDefaultConfig) {
  const auto o = Cli("world gen --print-default-config");
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_EQ(json::parse(o.output), pipeline::ConfigToJson(pipeline::PipelineConfig{}));
}

TEST(Cli, CohortDimensionMismatchExitsOne) {
  const auto dir = Scratch("dims");
  const auto small = WriteConfig(dir, json::parse(R"({"world": {"patients": 20}})"));
  ASSERT_EQ(Cli("--quiet --config " + small.string() + " world gen --out " + dir.string()).code, 0);
  EXPECT_TRUE(fs::exists(dir / pipeline::paths::kRecords));
  const auto wide = dir / "wide.json";
  io::WriteJson(wide, json::parse(R"({"world": {"patients": 20, "observation_dim": 6}})"));
  const auto o = Cli("--quiet --config " + wide.string() + " world gen --out " + dir.string());
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.output.find("observation dim"), std::string::npos) << o.output;
}

TEST(Cli, DistillSmokeRunThenEval) {
  const auto dir = Scratch("distill");
  const auto cfg = WriteConfig(dir, json::parse(R"({
    "world": {"patients": 40},
    "diffusion": {"epochs": 4, "prompt_limit": 8},
    "reid": {"epochs": 2, "pairs_per_epoch": 128},
    "retrieval": {"epochs": 2, "pairs_per_epoch": 128},
    "align": {"epochs": 2},
    "filter": {"candidates_per_prompt": 3},
    "metrics": {"classifier": {"epochs_stage1": 1, "epochs_stage2": 1}}
  })"));
  const std::string common = "--quiet --config " + cfg.string() + " --out " + (dir / "run").string();
  const auto o = Cli(common + " distill");
  ASSERT_EQ(o.code, 0) << o.output;
  const auto manifest = io::ReadJson(dir / "run" / "manifest.json");
  EXPECT_EQ(manifest.at("format"), pipeline::kManifestFormat);
  EXPECT_TRUE(fs::exists(dir / "run" / pipeline::paths::kDistill));
  const auto e = Cli(common + " eval");
  ASSERT_EQ(e.code, 0) << e.output;
  EXPECT_EQ(json::parse(e.output), io::ReadJson(dir / "run" / pipeline::paths::kEval));

  // A dataset with the wrong record width is rejected against this run.
  const auto bad = dir / "bad.csv";
  diffusion::SaveSynthDataset({{0, std::nullopt, nn::Vector::Zero(7), 1}}, 3, 7, bad);
  const auto b = Cli(common + " eval --dataset " + bad.string());
  EXPECT_EQ(b.code, 1) << b.output;

  const auto s = Cli(common + " sweep-delta --dataset " + (dir / "run" / pipeline::paths::kSynth).string());
  EXPECT_EQ(s.code, 0) << s.output;
}

}  // namespace
}  // namespace privdistill
