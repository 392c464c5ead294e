/*
Copyright 2026 the pbpnet authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "pbp/trainer.hpp"

namespace {

// exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure
int exit_code_for(const pbp::Error& e) {
  if (e.kind() == "config") return 2;
  if (e.kind() == "data" || e.kind() == "checkpoint" || e.kind() == "invalid-input")
    return 3;
  if (e.kind() == "numeric") return 4;
  return 1;
}

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file of key = value lines");
  cmd->add_option("--set", args.overrides,
                  "key=value override, applied after the config file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point-plane projection segmentation network"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, grad_args, ablate_args;
  std::string eval_checkpoint;
  double grad_tolerance = 1e-3;

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, train_args);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_args);
  eval->add_option("--checkpoint", eval_checkpoint,
                   "checkpoint path (defaults to the config's checkpoint key)");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check");
  add_common(gradcheck, grad_args);
  gradcheck->add_option("--tolerance", grad_tolerance, "max relative error");

  CLI::App* ablate = app.add_subcommand("ablate", "train/eval the 24-variant grid");
  add_common(ablate, ablate_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      pbp::RunConfig cfg =
          pbp::parse_config(train_args.config_path, train_args.overrides);
      pbp::run_train(cfg, &std::cout);
    } else if (eval->parsed()) {
      pbp::RunConfig cfg =
          pbp::parse_config(eval_args.config_path, eval_args.overrides);
      const std::string ckpt =
          eval_checkpoint.empty() ? cfg.checkpoint : eval_checkpoint;
      pbp::run_eval(cfg, ckpt, &std::cout);
    } else if (gradcheck->parsed()) {
      pbp::RunConfig cfg =
          pbp::parse_config(grad_args.config_path, grad_args.overrides);
      pbp::GradCheckReport report =
          pbp::run_gradcheck(cfg, grad_tolerance, &std::cout);
      if (!report.passed()) {
        std::cerr << "error[numeric]: gradient check failed" << std::endl;
        return 4;
      }
    } else if (ablate->parsed()) {
      pbp::RunConfig cfg =
          pbp::parse_config(ablate_args.config_path, ablate_args.overrides);
      pbp::run_ablate(cfg, &std::cout);
    }
  } catch (const pbp::Error& e) {
    std::cerr << "error[" << e.kind() << "]: " << e.what() << std::endl;
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
