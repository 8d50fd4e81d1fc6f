/* Copyright 2026 The fedrec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
// fedrec: experiment runner. See README for the pipeline.

#include <CLI11.hpp>

#include <iostream>

#include "fedrec/commands.hpp"

namespace {

enum Exit { kOk = 0, kFailedCheck = 1, kConfig = 2, kData = 3, kNumerical = 4 };

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "INI config file; defaults are used when omitted");
  cmd->add_option("--seed", c.seed, "override run.seed");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--jobs", c.jobs, "maximum concurrently running clients")->capture_default_str()->check(CLI::PositiveNumber);
}

fedrec::config::RunConfig resolve(const Common& c) {
  auto cfg = c.config_path.empty() ? fedrec::config::parse_config_text("") : fedrec::config::load_config(c.config_path);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.resolve_seeds();
  }
  cfg.federation.jobs = c.jobs;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = fedrec::cli;
  CLI::App app{"Federated multimodal recovery with conditional diffusion"};
  app.require_subcommand(1);
  Common common;
  std::string scenario = "fixed", what;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus and client shards");
  auto* pre = app.add_subcommand("pretrain", "pretrain DGN/SCN on every client");
  auto* trn = app.add_subcommand("train", "run the federated schedule");
  auto* evl = app.add_subcommand("evaluate", "score the trained global models");
  evl->add_option("--scenario", scenario, "fixed|random|full")->capture_default_str();
  auto* abl = app.add_subcommand("ablate", "paired runs with one switch flipped");
  abl->add_option("--switch", what, "afs|conditioning")->required();
  auto* thy = app.add_subcommand("theory-check", "check the convergence and recovery bounds on synthetic problems");
  for (auto* cmd : {gen, pre, trn, evl, abl, thy}) add_common(cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const auto cfg = resolve(common);
    const std::filesystem::path out = common.out;
    if (*gen) {
      cli::gen_data(cfg, out);
    } else if (*pre) {
      cli::pretrain(cfg, out);
    } else if (*trn) {
      const auto t = cli::train(cfg, out);
      const auto s = fedrec::fed::comm_summary(t.log, t.state, t.clients.size());
      std::cout << "rounds " << t.log.stages.size() << ", bytes/round/client " << s.afs_bytes_per_round_client
                << " (all modules every round: " << s.naive_bytes_per_round_client << ")\n";
    } else if (*evl) {
      for (const auto& r : cli::evaluate(cfg, out, scenario))
        std::cout << r.available << " eta=" << cli::num(r.eta) << " acc=" << cli::num(r.report.accuracy)
                  << " waf1=" << cli::num(r.report.waf1) << "\n";
    } else if (*abl) {
      const auto a = cli::ablate(cfg, out, what);
      std::cout << what << ": W=" << a.test.w << " p=" << cli::num(a.test.p) << " r=" << cli::num(a.effect) << "\n";
    } else if (*thy) {
      const bool ok = cli::theory_check(cfg, out);
      std::cout << "theory-check " << (ok ? "passed" : "FAILED") << " (" << (out / "theory.json").string() << ")\n";
      if (!ok) return kFailedCheck;
    }
  } catch (const fedrec::config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const fedrec::corpus::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fedrec::numkit::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
  return kOk;
}
