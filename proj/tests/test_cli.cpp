// Copyright 2026 The Omnisim Authors
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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "omnisim/commands.hpp"
#include "omnisim/run_config.hpp"

namespace omnisim::app {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("omnisim_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path config(const std::string& text, const std::string& name = "cfg.json") {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  std::string error_for(const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  }

  fs::path dir_;
};

const char* kAutotune = R"({
  "seed": 4,
  "problem": {"kind": "quadratic", "dim": 6, "condition": 10, "noise": 1},
  "cluster": {"n_conv_devices": 8},
  "profile": {"t_conv_compute": 0.4, "t_conv_network": 0, "t_fc": 0.02},
  "grid": {"probe_seconds": 2, "max_rounds": 2},
  "epochs": {"epoch_seconds": 20, "cold_start_seconds": 20, "max_epochs": 4, "target_loss": 1e-9}
})";

TEST_F(Cli, UnknownKeysAreRejectedByName) {
  EXPECT_NE(error_for(R"({"problem": {"kind": "quadratic", "dimm": 3}})").find("'problem.dimm'"),
            std::string::npos);
  EXPECT_NE(error_for(R"({"colour": 1})").find("'colour'"), std::string::npos);
  EXPECT_NE(error_for(R"({"grid": {"probe_seconds": 5, "rounds": 3}})").find("'grid.rounds'"),
            std::string::npos);
}

TEST_F(Cli, TypeAndRangeErrorsNameTheKey) {
  EXPECT_NE(error_for(R"({"cluster": {"n_conv_devices": "8"}})").find("'cluster.n_conv_devices'"),
            std::string::npos);
  EXPECT_NE(error_for(R"({"cluster": {"n_conv_devices": -1}})").find("'cluster.n_conv_devices'"),
            std::string::npos);
  EXPECT_NE(error_for(R"({"grid": {"momenta": [0.3, "x"]}})").find("'grid.momenta[1]'"),
            std::string::npos);
  EXPECT_NE(error_for(R"({"grid": {"momenta": [1.5]}})").find("'grid'"), std::string::npos);
  EXPECT_NE(error_for(R"({"problem": {"kind": "resnet"}})").find("'problem.kind'"),
            std::string::npos);
  EXPECT_NE(error_for("{not json").find("malformed"), std::string::npos);
  EXPECT_EQ(error_for(kAutotune), "");
}

TEST_F(Cli, ConfigHashIgnoresFormatting) {
  EXPECT_EQ(config_hash(R"({"a": 1, "b": [1, 2]})"), config_hash("{\"b\":[1,2],\n\"a\":1}"));
  EXPECT_NE(config_hash(R"({"a": 1})"), config_hash(R"({"a": 2})"));
}

TEST_F(Cli, ValidationErrorsExitWithTwo) {
  EXPECT_EQ(run_command("he-curve", config(R"({"bogus": true})"), dir_ / "o", std::nullopt, false),
            kExitValidation);
  EXPECT_EQ(run_command("no-such-command", config("{}"), dir_ / "o", std::nullopt, false),
            kExitValidation);
  EXPECT_EQ(run_command("he-curve", config("{}"), dir_ / "o", std::nullopt, true), kExitValidation);
  EXPECT_EQ(run_command("he-curve", dir_ / "missing.json", dir_ / "o", std::nullopt, false),
            kExitValidation);
}

TEST_F(Cli, UniversalDivergenceExitsWithThree) {
  const fs::path cfg = config(R"({
    "problem": {"kind": "quadratic", "dim": 4, "condition": 4, "noise": 0.1},
    "cluster": {"n_conv_devices": 4},
    "profile": {"t_conv_compute": 1, "t_conv_network": 0, "t_fc": 0.1},
    "grid": {"sweep_etas": [100, 50], "probe_seconds": 5},
    "epochs": {"epoch_seconds": 50, "cold_start_seconds": 50, "max_epochs": 1}
  })");
  EXPECT_EQ(run_command("autotune", cfg, dir_ / "o", std::nullopt, false), kExitDivergence);
}

TEST_F(Cli, HeCurveWritesRowsAndManifest) {
  const fs::path cfg = config(R"({
    "seed": 9,
    "problem": {"kind": "quadratic", "dim": 4, "condition": 4, "noise": 0.1},
    "cluster": {"n_conv_devices": 16},
    "profile": {"t_conv_compute": 1, "t_conv_network": 0, "t_fc": 0.01},
    "he_curve": {"events": 500}
  })");
  const fs::path out = dir_ / "he";
  ASSERT_EQ(run_command("he-curve", cfg, out, std::nullopt, false), kExitOk);
  const auto rows = lines(out / "he_curve.csv");
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].rfind("g,k,t_conv_s,he_s_per_iter,fc_saturated", 0), 0u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].substr(0, rows[i].find(',')), std::to_string(1u << (i - 1)));
  }
  const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["command"], "he-curve");
  EXPECT_EQ(m["seed"], 9u);
  EXPECT_EQ(m["config_hash"], "fnv1a64:" + config_hash(slurp(cfg)));
  EXPECT_TRUE(m["versions"].contains("omnisim"));
  EXPECT_TRUE(m["versions"].contains("compiler"));

  ASSERT_EQ(run_command("he-curve", cfg, dir_ / "he2", 10, false), kExitOk);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir_ / "he2" / "manifest.json"))["seed"], 10u);
}

TEST_F(Cli, ConvbenchRowsAreCorrect) {
  const fs::path cfg = config(R"({
    "convbench": {"n": 6, "k": 3, "d_in": 2, "d_out": 3, "pad": 1, "batch": 4,
                  "b_p": [1, 2, 4], "workers": [1, 2], "repeats": 1}
  })");
  ASSERT_EQ(run_command("convbench", cfg, dir_ / "cb", std::nullopt, false), kExitOk);
  const auto rows = lines(dir_ / "cb" / "convbench.csv");
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0], "b_p,workers,seconds,correct");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].substr(rows[i].rfind(',') + 1), "true") << rows[i];
  }
}

TEST_F(Cli, SimulateIsDeterministic) {
  const fs::path cfg = config(R"({
    "problem": {"kind": "quadratic", "dim": 4, "condition": 4, "noise": 0.5},
    "cluster": {"n_conv_devices": 8},
    "profile": {"t_conv_compute": 0.5, "t_conv_network": 0.01, "t_fc": 0.05},
    "sim": {"groups": 4, "eta": 0.01, "mu": 0.3, "max_updates": 300}
  })");
  ASSERT_EQ(run_command("simulate", cfg, dir_ / "a", 3, false), kExitOk);
  ASSERT_EQ(run_command("simulate", cfg, dir_ / "b", 3, false), kExitOk);
  ASSERT_EQ(run_command("simulate", cfg, dir_ / "c", 4, false), kExitOk);
  EXPECT_EQ(slurp(dir_ / "a" / "trace.csv"), slurp(dir_ / "b" / "trace.csv"));
  EXPECT_NE(slurp(dir_ / "a" / "trace.csv"), slurp(dir_ / "c" / "trace.csv"));
  EXPECT_EQ(lines(dir_ / "a" / "trace.csv").size(), 301u);
  EXPECT_EQ(lines(dir_ / "a" / "trace.csv")[0],
            "write_step,group_id,read_step,staleness,start_s,finish_s,loss");
  EXPECT_EQ(lines(dir_ / "a" / "loss_trace.csv")[0], "step,sim_time_s,loss");
}

TEST_F(Cli, AutotuneResumeReproducesUninterruptedRun) {
  const fs::path cfg = config(kAutotune);
  const fs::path full = dir_ / "full";
  ASSERT_EQ(run_command("autotune", cfg, full, std::nullopt, false), kExitOk);
  const auto log = lines(full / "decision_log.csv");
  ASSERT_EQ(log[0], "epoch,g,mu,eta,probe_overhead_frac,end_loss,checkpoint");
  ASSERT_EQ(log.size(), 6u);
  EXPECT_NE(log[1].find("checkpoints/ckpt_epoch_0000.txt"), std::string::npos);

  // Simulate a crash after epoch 1: later checkpoints are gone and the CSVs
  // carry a partial epoch.
  const fs::path cut = dir_ / "cut";
  fs::copy(full, cut, fs::copy_options::recursive);
  for (int e = 2; e <= 4; ++e) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_epoch_%04d.txt", e);
    fs::remove(cut / "checkpoints" / name);
  }
  {
    std::ofstream(cut / "decision_log.csv", std::ios::trunc)
        << log[0] << '\n' << log[1] << '\n' << log[2] << '\n' << log[3] << '\n';
  }
  ASSERT_EQ(run_command("autotune", cfg, cut, std::nullopt, true), kExitOk);
  for (const char* f : {"decision_log.csv", "loss_trace.csv", "autotune_summary.csv",
                        "checkpoints/ckpt_epoch_0004.txt"}) {
    EXPECT_EQ(slurp(cut / f), slurp(full / f)) << f;
  }
  EXPECT_TRUE(nlohmann::json::parse(slurp(cut / "manifest.json"))["resumed"].get<bool>());

  EXPECT_EQ(run_command("autotune", cfg, dir_ / "empty", std::nullopt, true), kExitValidation);
}

#ifdef OMNISIM_CLI_PATH
int shell(const std::string& args) {
  const int rc = std::system((std::string(OMNISIM_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

TEST_F(Cli, BinaryExitCodes) {
  const fs::path good = config(R"({"profile": {"t_conv_compute": 1, "t_conv_network": 0, "t_fc": 0.01}, "he_curve": {"events": 200}})");
  const std::string out = (dir_ / "o").string();
  EXPECT_EQ(shell("he-curve --config " + good.string() + " --out " + out), 0);
  EXPECT_EQ(shell("he-curve --config " + good.string() + " --out " + out + " --seed 7"), 0);
  EXPECT_EQ(shell("he-curve --config " + good.string()), 2);
  EXPECT_EQ(shell("he-curve --config " + good.string() + " --out " + out + " --resume"), 2);
  EXPECT_EQ(shell("he-curve --config " + good.string() + " --out " + out + " --seed -3"), 2);
  EXPECT_EQ(shell("he-curve --config " + config(R"({"x": 1})", "bad.json").string() +
                  " --out " + out),
            2);
}
#endif

}  // namespace
}  // namespace omnisim::app
