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

// Experiment commands behind the omnisim binary. Each writes its CSVs and
// a manifest.json into the output directory.

#ifndef OMNISIM_COMMANDS_HPP_
#define OMNISIM_COMMANDS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "omnisim/run_config.hpp"

namespace omnisim::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitDivergence = 3;

struct CommandContext {
  std::filesystem::path out;
  std::uint64_t seed = 1;
  bool resume = false;
  std::string command;
  std::string config_text;  // for the manifest hash
};

// Each returns the output files it wrote, relative to ctx.out.
std::vector<std::string> cmd_convbench(const RunConfig& cfg, const CommandContext& ctx);
std::vector<std::string> cmd_he_curve(const RunConfig& cfg, const CommandContext& ctx);
std::vector<std::string> cmd_momentum_sweep(const RunConfig& cfg, const CommandContext& ctx);
std::vector<std::string> cmd_batch_sweep(const RunConfig& cfg, const CommandContext& ctx);
std::vector<std::string> cmd_autotune(const RunConfig& cfg, const CommandContext& ctx);
std::vector<std::string> cmd_simulate(const RunConfig& cfg, const CommandContext& ctx);

const std::vector<std::string>& command_names();

// Parses and validates the config, runs the command, writes the manifest.
// Errors are reported on stderr and mapped to exit codes: kExitValidation
// for config or argument problems, kExitDivergence when every candidate
// configuration diverged, kExitFailure otherwise.
int run_command(const std::string& command, const std::filesystem::path& config,
                const std::filesystem::path& out, std::optional<std::uint64_t> seed,
                bool resume);

}  // namespace omnisim::app

#endif  // OMNISIM_COMMANDS_HPP_
