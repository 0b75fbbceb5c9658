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

// omnisim <command> --config <path> --out <dir> [--seed <u64>] [--resume]

#include <cstdint>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "omnisim/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"omnisim: desk-scale simulator for asynchronous SGD tradeoffs"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool resume = false;
  for (const auto& name : omnisim::app::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    if (name == "autotune") sub->add_flag("--resume", resume, "continue from the latest checkpoint");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return omnisim::app::kExitValidation;
  }

  const CLI::App* sub = app.get_subcommands().front();
  std::optional<std::uint64_t> seed_opt;
  if (sub->count("--seed") > 0) seed_opt = seed;
  return omnisim::app::run_command(sub->get_name(), config, out, seed_opt, resume);
}
