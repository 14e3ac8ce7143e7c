// Copyright 2026 The segshift Authors
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

// segshift: generate | train | evaluate | ablate | plot
//
//   segshift <command> [--config FILE] [--KEY VALUE ...] [--print-config]
//
// Every configuration key is also a flag; flags override the config file.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "segshift/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace segshift;
  CLI::App app{"Toy-scale anomaly segmentation pipeline under covariate and semantic shift"};
  app.require_subcommand(0, 1);
  std::string config_file;
  bool print_config = false;
  app.add_option("--config", config_file, "flat JSON configuration file")->check(CLI::ExistingFile);
  app.add_flag("--print-config", print_config, "print the resolved configuration and exit");

  std::map<std::string, std::string> flags;
  for (const auto& k : config_keys()) {
    std::string help = k.help + " [default: " + (k.default_value.empty() ? "\"\"" : k.default_value) + "]";
    app.add_option("--" + k.name, flags[k.name], help);
  }

  const std::pair<const char*, const char*> commands[] = {
      {"generate", "synthesise the benchmark and the filtered augmentation set"},
      {"train", "two-stage training (--stage 1|2|both)"},
      {"evaluate", "per-regime metric reports, score histogram, optional uncertainty maps"},
      {"ablate", "on/off grid and margin sweep, one consolidated table"},
      {"plot", "SVG plots of training curves and the ablation table"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunConfig cfg;
    if (!config_file.empty()) cfg.merge_file(config_file);
    for (const auto& k : config_keys())
      if (app.count("--" + k.name)) cfg.set(k.name, flags[k.name]);
    if (print_config) {
      std::cout << cfg.to_json().dump(2) << "\n";
      return 0;
    }
    if (app.get_subcommands().empty()) throw ValidationError("a subcommand is required (generate|train|evaluate|ablate|plot)");
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "generate") return cmd_generate(cfg, std::cerr);
    if (cmd == "train") return cmd_train(cfg, std::cerr);
    if (cmd == "evaluate") return cmd_evaluate(cfg, std::cerr);
    if (cmd == "ablate") return cmd_ablate(cfg, std::cerr);
    return cmd_plot(cfg, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "segshift: error: " << e.what() << "\n";
    return 1;
  }
}
