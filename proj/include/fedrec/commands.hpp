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
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedrec/corpus/io.hpp"
#include "fedrec/experiment.hpp"
#include "fedrec/theory.hpp"

// The subcommands behind tools/fedrec. Each stage reads what the previous one
// wrote under the output directory and stamps every artifact with the config
// hash and seed.
namespace fedrec::cli {

namespace fs = std::filesystem;
using config::RunConfig;
using nlohmann::json;

inline std::string provenance(const RunConfig& cfg) {
  return "# config_hash=" + cfg.hash() + " seed=" + std::to_string(cfg.seed) + "\n";
}

inline std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

inline void write_json(const fs::path& path, const RunConfig& cfg, json body) {
  body["config_hash"] = cfg.hash();
  body["seed"] = cfg.seed;
  auto os = open_out(path);
  os << body.dump(2) << "\n";
}

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// "lv" style, safe inside a CSV field.
inline std::string keys(ModalitySet s) {
  std::string out;
  for (Modality m : s.members()) out += modality_key(m);
  return out;
}

inline fs::path corpus_path(const fs::path& out) { return out / "corpus.jsonl"; }
inline fs::path pretrain_stem(const fs::path& out, std::size_t l, const char* net) {
  return out / "pretrain" / ("client" + std::to_string(l) + "_" + net);
}
inline fs::path global_stem(const fs::path& out, const std::string& module) { return out / "train" / ("global_" + module); }

// ---------------------------------------------------------------------------
// gen-data

inline void gen_data(const RunConfig& cfg, const fs::path& out) {
  auto p = exp::prepare_data(cfg, corpus::generate_corpus(cfg.corpus));
  fs::create_directories(out);
  corpus::save_corpus(corpus_path(out).string(), p.corpus, exp::global_mask(p),
                      {{"config_hash", cfg.hash()}, {"seed", cfg.seed}});
  auto os = open_out(out / "clients.csv");
  os << provenance(cfg) << "client,pattern,train_conv,val_conv,test_conv,train_utt,missing_rate\n";
  for (const auto& s : p.shards) {
    os << s.client_id << "," << (s.fixed_pattern ? keys(*s.fixed_pattern) : std::string("random")) << ","
       << s.train.size() << "," << s.val.size() << "," << s.test.size() << "," << s.train_size(p.corpus) << ","
       << num(corpus::missing_rate(s.mask)) << "\n";
  }
}

/// Corpus from disk, re-sharded by the config; the stored mask must agree.
inline exp::Prepared load_data(const RunConfig& cfg, const fs::path& out) {
  if (!fs::exists(corpus_path(out))) throw corpus::DataError("no corpus under " + out.string() + "; run gen-data first");
  auto [c, mask] = corpus::load_corpus(corpus_path(out).string());
  auto p = exp::prepare_data(cfg, std::move(c));
  if (!(exp::global_mask(p) == mask)) {
    throw corpus::DataError("stored missing-modality mask differs from the configured protocol; rerun gen-data");
  }
  return p;
}

// ---------------------------------------------------------------------------
// pretrain

inline void pretrain(const RunConfig& cfg, const fs::path& out) {
  auto p = load_data(cfg, out);
  exp::pretrain_clients(p);
  for (std::size_t l = 0; l < p.shards.size(); ++l) {
    for (const auto& e : p.pretrain_log[l])
      if (!std::isfinite(e.l)) throw numkit::NumericalError("pretraining loss of client " + std::to_string(l) + " is not finite");
    fs::create_directories(out / "pretrain");
    numkit::save_checkpoint(p.dgn[l], pretrain_stem(out, l, "dgn").string());
    numkit::save_checkpoint(p.scn[l], pretrain_stem(out, l, "scn").string());
    auto os = open_out(out / "pretrain" / ("client" + std::to_string(l) + "_loss.csv"));
    scn::write_loss_csv(os, p.pretrain_log[l], cfg.hash() + " seed=" + std::to_string(cfg.seed));
  }
}

inline numkit::ParameterSet load_or_fail(const fs::path& stem, const char* hint) {
  if (!fs::exists(stem.string() + ".manifest")) throw corpus::DataError("missing checkpoint " + stem.string() + "; " + hint);
  return numkit::load_checkpoint(stem.string());
}

inline exp::Prepared load_pretrained(const RunConfig& cfg, const fs::path& out) {
  auto p = load_data(cfg, out);
  p.dgn.resize(p.shards.size());
  p.scn.resize(p.shards.size());
  for (std::size_t l = 0; l < p.shards.size(); ++l) {
    p.dgn[l] = load_or_fail(pretrain_stem(out, l, "dgn"), "run pretrain first");
    p.scn[l] = load_or_fail(pretrain_stem(out, l, "scn"), "run pretrain first");
  }
  return p;
}

// ---------------------------------------------------------------------------
// train

inline void check_finite(const fed::FederationLog& log) {
  for (const auto& r : log.rows)
    if (r.bytes_up > 0 && !std::isfinite(r.local_loss)) {
      throw numkit::NumericalError("round " + std::to_string(r.round) + " client " + std::to_string(r.client) + " " +
                                   r.module + ": loss is not finite");
    }
}

inline json comm_json(const fed::CommSummary& s) {
  return {{"afs_bytes_per_round_client", s.afs_bytes_per_round_client},
          {"naive_bytes_per_round_client", s.naive_bytes_per_round_client},
          {"diffusion_share", s.diffusion_share},
          {"ratio", s.afs_bytes_per_round_client / s.naive_bytes_per_round_client}};
}

inline void write_training(const RunConfig& cfg, const fs::path& dir, const exp::Trained& t) {
  fs::create_directories(dir);
  auto os = open_out(dir / "round_log.csv");
  fed::write_round_log(os, t.log, cfg.hash(), cfg.seed);
  std::vector<std::string> stages;
  for (auto s : t.log.stages) stages.push_back(fed::stage_name(s));
  write_json(dir / "summary.json", cfg,
             {{"rounds", t.log.stages.size()},
              {"stages", stages},
              {"theta_version", t.state.theta_version},
              {"communication", comm_json(fed::comm_summary(t.log, t.state, t.clients.size()))}});
}

inline exp::Trained train(const RunConfig& cfg, const fs::path& out) {
  auto p = load_pretrained(cfg, out);
  auto t = exp::train(p);
  check_finite(t.log);
  write_training(cfg, out / "train", t);
  for (Modality m : kAllModalities)
    numkit::save_checkpoint(t.state.theta_g[index_of(m)], global_stem(out, std::string("diff_") + modality_key(m)).string());
  numkit::save_checkpoint(t.state.phi_g, global_stem(out, "cls").string());
  return t;
}

inline exp::Trained load_trained(const exp::Prepared& p, const fs::path& out) {
  exp::Trained t;
  t.clients = exp::make_clients(p);
  for (Modality m : kAllModalities)
    t.state.theta_g[index_of(m)] = load_or_fail(global_stem(out, std::string("diff_") + modality_key(m)), "run train first");
  t.state.phi_g = load_or_fail(global_stem(out, "cls"), "run train first");
  std::ifstream is(out / "train" / "summary.json");
  if (!is) throw corpus::DataError("missing train/summary.json; run train first");
  try {
    const json s = json::parse(is);
    const auto v = s.at("theta_version").get<std::vector<std::size_t>>();
    if (v.size() != kNumModalities) throw corpus::DataError("train/summary.json: bad theta_version");
    for (std::size_t m = 0; m < kNumModalities; ++m) t.state.theta_version[m] = v[m];
    t.state.round = s.at("rounds").get<std::size_t>();
  } catch (const json::exception& e) {
    throw corpus::DataError(std::string("train/summary.json: ") + e.what());
  }
  fed::broadcast_diffusion(t.state, t.clients);
  fed::broadcast_classifier(t.state, t.clients);
  return t;
}

// ---------------------------------------------------------------------------
// evaluate

inline const std::vector<std::string>& fixed_patterns() {
  static const std::vector<std::string> p{"l", "v", "a", "lv", "la", "va"};
  return p;
}

inline std::uint64_t eval_seed(const RunConfig& cfg) { return cfg.sub_seed(7); }

struct ScenarioRow {
  std::string available;
  double eta = 0.0;
  eval::EvalReport report;
};

/// One row per pattern (fixed), per η (random), or the complete pattern (full).
inline std::vector<ScenarioRow> score_scenario(const exp::Prepared& p, exp::Trained& t, const fed::FederationConfig& fc,
                                               const std::string& scenario) {
  std::vector<ScenarioRow> rows;
  const auto seed = eval_seed(p.cfg);
  if (scenario == "fixed") {
    for (const auto& s : fixed_patterns()) {
      const auto pat = ModalitySet::parse(s);
      rows.push_back({s, 1.0 - static_cast<double>(pat.count()) / 3.0, exp::evaluate_pattern(p, t, fc, pat, seed)});
    }
  } else if (scenario == "random") {
    for (double eta : p.cfg.eta_grid) rows.push_back({"random", eta, exp::evaluate_random(p, t, fc, eta, seed)});
  } else if (scenario == "full") {
    rows.push_back({"lva", 0.0, exp::evaluate_pattern(p, t, fc, ModalitySet::all(), seed)});
  } else {
    throw config::ConfigError("unknown scenario '" + scenario + "' (expected fixed|random|full)");
  }
  return rows;
}

inline void write_scenario_csv(std::ostream& os, const RunConfig& cfg, const std::string& scenario,
                               const std::vector<ScenarioRow>& rows) {
  os << provenance(cfg) << "scenario,available,eta,acc,waf1,n\n";
  for (const auto& r : rows)
    os << scenario << "," << r.available << "," << num(r.eta) << "," << num(r.report.accuracy) << ","
       << num(r.report.waf1) << "," << r.report.n << "\n";
}

/// PCA of recovered and true latents of one modality, fitted on both together.
inline void write_recovery_projection(std::ostream& os, const RunConfig& cfg, const exp::RecoveredRows& r) {
  const Eigen::Index n = r.recovered.rows();
  Eigen::MatrixXd both(2 * n, r.recovered.cols());
  both << r.recovered, r.original;
  const auto proj = eval::pca_2d(both);
  os << provenance(cfg) << "x,y,label,tag\n";
  for (Eigen::Index i = 0; i < 2 * n; ++i)
    os << num(proj.coords(i, 0)) << "," << num(proj.coords(i, 1)) << "," << r.labels[static_cast<std::size_t>(i % n)]
       << "," << (i < n ? "recovered" : "original") << "\n";
}

inline std::vector<ScenarioRow> evaluate(const RunConfig& cfg, const fs::path& out, const std::string& scenario) {
  if (scenario != "fixed" && scenario != "random" && scenario != "full") {
    throw config::ConfigError("unknown scenario '" + scenario + "' (expected fixed|random|full)");
  }
  auto p = load_pretrained(cfg, out);
  auto t = load_trained(p, out);
  const auto& fc = cfg.federation;
  auto rows = score_scenario(p, t, fc, scenario);
  const fs::path dir = out / "eval";
  {
    auto os = open_out(dir / ("scenario_" + scenario + ".csv"));
    write_scenario_csv(os, cfg, scenario, rows);
  }
  const auto own = exp::evaluate_own_test(t, cfg.dims, fc);
  json body = {{"scenario", scenario}, {"own_test", eval::to_json(own)}};
  if (scenario != "full" && fc.recovery == RecoveryMode::kDiffusion) {
    auto os = open_out(dir / "centroid_error.csv");
    os << provenance(cfg) << "modality,conditional,unconditional,n\n";
    for (Modality m : kAllModalities) {
      const auto seed = numkit::derive_seed(eval_seed(cfg), 50 + index_of(m));
      const auto rc = exp::recovered_test_rows(t, cfg.dims, fc, m, true, seed);
      if (rc.labels.size() < 3) continue;
      const auto ru = exp::recovered_test_rows(t, cfg.dims, fc, m, false, seed);
      const auto ec = eval::centroid_recovery_error(rc.recovered, rc.original, rc.labels, cfg.dims.n_classes);
      const auto eu = eval::centroid_recovery_error(ru.recovered, ru.original, ru.labels, cfg.dims.n_classes);
      os << modality_key(m) << "," << num(ec.mean) << "," << num(eu.mean) << "," << rc.labels.size() << "\n";
      auto ps = open_out(dir / (std::string("pca_") + modality_key(m) + ".csv"));
      write_recovery_projection(ps, cfg, rc);
    }
  }
  write_json(dir / ("scenario_" + scenario + ".json"), cfg, body);
  return rows;
}

// ---------------------------------------------------------------------------
// ablate

struct Ablation {
  std::vector<std::string> keys;
  std::vector<eval::EvalReport> on, off;
  eval::WilcoxonResult test;
  double effect = 0.0;
};

/// Paired runs differing only in `what`; pairs are the fixed patterns, or the
/// η grid under the random protocol.
inline Ablation ablate(const RunConfig& cfg, const fs::path& out, const std::string& what) {
  if (what != "afs" && what != "conditioning") {
    throw config::ConfigError("unknown ablation switch '" + what + "' (expected afs|conditioning)");
  }
  auto p = load_pretrained(cfg, out);
  fed::FederationConfig on = cfg.federation, off = cfg.federation;
  if (what == "afs") off.afs = false;
  else off.sampler.conditional = false;
  auto t_on = exp::train(p, on);
  auto t_off = exp::train(p, off);
  check_finite(t_on.log);
  check_finite(t_off.log);
  const std::string scenario = cfg.protocol == config::Protocol::kFixed ? "fixed" : "random";
  const auto rows_on = score_scenario(p, t_on, on, scenario);
  const auto rows_off = score_scenario(p, t_off, off, scenario);
  Ablation a;
  std::vector<double> diffs;
  for (std::size_t i = 0; i < rows_on.size(); ++i) {
    a.keys.push_back(scenario == "fixed" ? rows_on[i].available : num(rows_on[i].eta));
    a.on.push_back(rows_on[i].report);
    a.off.push_back(rows_off[i].report);
    diffs.push_back(rows_on[i].report.accuracy - rows_off[i].report.accuracy);
  }
  bool any = false;
  for (double d : diffs) any = any || d != 0.0;
  if (any) {
    a.test = eval::wilcoxon_signed_rank_exact(diffs);
    a.effect = eval::rank_biserial(a.test.z, a.test.n);
  }
  const fs::path dir = out / "ablate";
  auto os = open_out(dir / (what + ".csv"));
  os << provenance(cfg) << (scenario == "fixed" ? "available" : "eta")
     << ",acc_on,acc_off,delta_acc,waf1_on,waf1_off,delta_waf1\n";
  for (std::size_t i = 0; i < a.keys.size(); ++i)
    os << a.keys[i] << "," << num(a.on[i].accuracy) << "," << num(a.off[i].accuracy) << ","
       << num(a.on[i].accuracy - a.off[i].accuracy) << "," << num(a.on[i].waf1) << "," << num(a.off[i].waf1) << ","
       << num(a.on[i].waf1 - a.off[i].waf1) << "\n";
  write_json(dir / (what + ".json"), cfg,
             {{"switch", what},
              {"pairs", a.keys.size()},
              {"wilcoxon", {{"W", a.test.w}, {"p", a.test.p}, {"n", a.test.n}, {"z", a.test.z}}},
              {"rank_biserial", a.effect},
              {"communication_on", comm_json(fed::comm_summary(t_on.log, t_on.state, t_on.clients.size()))},
              {"communication_off", comm_json(fed::comm_summary(t_off.log, t_off.state, t_off.clients.size()))}});
  return a;
}

// ---------------------------------------------------------------------------
// theory-check

/// Verdicts for the three bounds; the returned flag is true when all pass.
inline bool theory_check(const RunConfig& cfg, const fs::path& out) {
  const auto seed = cfg.sub_seed(8);
  std::vector<theory::Verdict> v;
  v.push_back(theory::theorem1_suite(30, numkit::derive_seed(seed, 1)));
  theory::Theorem2Config c2;
  const auto r2 = theory::measure_theorem2(c2, numkit::derive_seed(seed, 2));
  v.push_back(theory::theorem2_verdict(r2, c2.trials));
  v.push_back(theory::theorem3_suite({0.1, 0.5}, 20, 20, 50, numkit::derive_seed(seed, 3)));
  json verdicts = json::array();
  bool ok = true;
  for (const auto& x : v) {
    verdicts.push_back(theory::to_json(x));
    ok = ok && x.pass;
  }
  write_json(out / "theory.json", cfg,
             {{"verdicts", verdicts},
              {"recovered_latent_error",
               {{"C_cum", r2.C_cum},
                {"eta_attn", r2.eta_attn},
                {"exact_error", r2.exact_error},
                {"levels", c2.levels},
                {"medians", r2.medians},
                {"bounds", r2.bounds}}}});
  return ok;
}

}  // namespace fedrec::cli
