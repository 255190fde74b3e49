/*
 * Copyright 2026 The bdpgan Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "bdpgan/pipeline.hpp"

namespace {

using bdpgan::CommandResult;
using bdpgan::Config;
using bdpgan::ExitCode;
using bdpgan::RunOptions;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out_dir = "runs/default";
};

Config load_config(const Globals& g, bool required) {
  if (g.config.empty()) {
    if (required) throw bdpgan::ConfigError("this command needs --config");
    return Config();
  }
  return Config::load(g.config);
}

RunOptions run_options(const Globals& g) {
  RunOptions o;
  o.out_dir = g.out_dir;
  o.seed = g.seed;
  o.threads = g.threads;
  o.log = &std::cerr;
  return o;
}

int finish(const CommandResult& r) {
  std::cout << r.report.dump(2) << "\n";
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian differentially private GAN toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "flat key = value config file");
  app.add_option("--seed", g.seed, "master seed (overrides the config)");
  app.add_option("--threads", g.threads, "worker threads (overrides the config)");
  app.add_option("--out-dir", g.out_dir, "run directory")->capture_default_str();

  auto* train_gan = app.add_subcommand("train-gan", "train a private WGAN");
  auto* inspect = app.add_subcommand("inspect", "clean vs corrupted GAN comparison");
  auto* train_cls = app.add_subcommand("train-classifier", "train a private classifier");

  auto* annotate = app.add_subcommand("annotate", "label synthetic samples with a classifier");
  bdpgan::AnnotateRequest ann;
  annotate->add_option("--generator", ann.generator, "generator checkpoint")->required();
  annotate->add_option("--annotator", ann.annotator, "classifier checkpoint")->required();
  annotate->add_option("-n,--count", ann.n, "number of samples")->required();
  annotate->add_option("--prefix", ann.prefix, "IDX file prefix")->capture_default_str();

  auto* eval_student = app.add_subcommand("eval-student", "label-budget learning curve");

  auto* account = app.add_subcommand("account", "replay a gradient-norm log");
  std::string norm_log;
  account->add_option("norm_log", norm_log, "norm log CSV")->required();

  auto* calibrate = app.add_subcommand("calibrate", "classical Gaussian noise calibration");
  double eps = 1.0, delta = 1e-5, clip = 1.0;
  calibrate->add_option("--epsilon", eps)->capture_default_str();
  calibrate->add_option("--delta", delta)->capture_default_str();
  calibrate->add_option("--clip-norm", clip)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    const RunOptions opt = run_options(g);
    if (*train_gan) return finish(bdpgan::cmd_train_gan(load_config(g, true), opt));
    if (*inspect) return finish(bdpgan::cmd_inspect(load_config(g, true), opt));
    if (*train_cls) return finish(bdpgan::cmd_train_classifier(load_config(g, true), opt));
    if (*eval_student) return finish(bdpgan::cmd_eval_student(load_config(g, true), opt));
    if (*annotate) {
      ann.seed = g.seed.value_or(0);
      return finish(bdpgan::cmd_annotate(ann, opt));
    }
    if (*account) return finish(bdpgan::cmd_account(norm_log, load_config(g, true), opt));
    if (*calibrate) {
      const CommandResult r = bdpgan::cmd_calibrate(eps, delta, clip);
      for (const auto& w : r.report["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
      return finish(r);
    }
  } catch (const bdpgan::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kFailure);
  }
  return static_cast<int>(ExitCode::kFailure);
}
