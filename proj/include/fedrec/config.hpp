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

#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fedrec/corpus/corpus.hpp"
#include "fedrec/fedcore.hpp"
#include "fedrec/modality.hpp"
#include "fedrec/nn.hpp"
#include "fedrec/numkit/params.hpp"
#include "fedrec/pretrain.hpp"

namespace fedrec::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Protocol { kFixed, kRandom };

/// Everything that determines a run. Sub-seeds derive from `seed`.
struct RunConfig {
  corpus::CorpusConfig corpus;
  Protocol protocol = Protocol::kFixed;
  std::vector<ModalitySet> patterns{ModalitySet::parse("lv"), ModalitySet::parse("la"), ModalitySet::parse("va")};
  double eta = 0.3;
  nn::ModelDims dims;
  std::size_t window = 2;
  scn::PretrainConfig pretrain;
  std::size_t n_c = 3;
  fed::FederationConfig federation;
  std::vector<double> eta_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, corpus::kMaxMissingRate};
  std::uint64_t seed = 1;

  std::uint64_t sub_seed(std::uint64_t tag) const { return numkit::derive_seed(seed, tag); }

  /// Pushes the run seed into every component.
  void resolve_seeds() {
    corpus.seed = sub_seed(1);
    pretrain.seed = sub_seed(4);
    federation.seed = sub_seed(5);
  }
  std::uint64_t partition_seed() const { return sub_seed(2); }
  std::uint64_t encoder_seed() const { return sub_seed(3); }
  std::uint64_t protocol_seed() const { return sub_seed(6); }

  void validate() const;
  std::string canonical() const;
  std::string hash() const { return numkit::hex64(numkit::fnv1a(canonical())); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::istringstream is(t);
  T v{};
  if constexpr (std::is_unsigned_v<T>) {
    if (!t.empty() && t[0] == '-') throw ConfigError(key + ": expected a nonnegative integer, got '" + t + "'");
  }
  is >> v;
  if (t.empty() || is.fail() || !is.eof()) throw ConfigError(key + ": cannot parse '" + t + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + t + "'");
}

inline std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(text);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::string section, key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <class T>
Field number(const std::string& sec, const std::string& key, T& ref) {
  return {sec, key, [&ref, sec, key](const std::string& t) { ref = parse_number<T>(sec + "." + key, t); },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) return fmt(ref);
            else return std::to_string(ref);
          }};
}

inline Field flag(const std::string& sec, const std::string& key, bool& ref) {
  return {sec, key, [&ref, sec, key](const std::string& t) { ref = parse_bool(sec + "." + key, t); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

inline std::vector<Field> fields(RunConfig& c) {
  auto& cc = c.corpus;
  auto& fc = c.federation;
  std::vector<Field> f = {
      number("corpus", "n_conversations", cc.n_conversations),
      number("corpus", "utterances_per_conv", cc.utterances_per_conv),
      number("corpus", "n_speakers", cc.n_speakers),
      number("corpus", "n_classes", cc.n_classes),
      {"corpus", "dims",
       [&cc](const std::string& t) {
         auto parts = split(t, ',');
         if (parts.size() != kNumModalities) throw ConfigError("corpus.dims: expected three comma-separated widths");
         for (std::size_t m = 0; m < kNumModalities; ++m) cc.modality_dims[m] = parse_number<std::size_t>("corpus.dims", parts[m]);
       },
       [&cc] {
         return std::to_string(cc.modality_dims[0]) + "," + std::to_string(cc.modality_dims[1]) + "," +
                std::to_string(cc.modality_dims[2]);
       }},
      number("corpus", "class_separation", cc.class_separation),
      {"protocol", "kind",
       [&c](const std::string& t) {
         const auto v = trim(t);
         if (v == "fixed") c.protocol = Protocol::kFixed;
         else if (v == "random") c.protocol = Protocol::kRandom;
         else throw ConfigError("protocol.kind: expected fixed|random, got '" + v + "'");
       },
       [&c] { return std::string(c.protocol == Protocol::kFixed ? "fixed" : "random"); }},
      {"protocol", "patterns",
       [&c](const std::string& t) {
         c.patterns.clear();
         for (const auto& p : split(t, ',')) {
           try {
             c.patterns.push_back(ModalitySet::parse(p));
           } catch (const std::invalid_argument& e) {
             throw ConfigError(std::string("protocol.patterns: ") + e.what());
           }
         }
       },
       [&c] {
         std::string s;
         for (auto p : c.patterns) {
           if (!s.empty()) s += ",";
           for (Modality m : p.members()) s += modality_key(m);
         }
         return s;
       }},
      number("protocol", "eta", c.eta),
      {"protocol", "eta_grid",
       [&c](const std::string& t) {
         c.eta_grid.clear();
         for (const auto& p : split(t, ',')) c.eta_grid.push_back(parse_number<double>("protocol.eta_grid", p));
       },
       [&c] {
         std::string s;
         for (double e : c.eta_grid) s += (s.empty() ? "" : ",") + fmt(e);
         return s;
       }},
      number("model", "d", c.dims.d),
      number("model", "s_tok", c.dims.s_tok),
      number("model", "p_tok", c.dims.p_tok),
      number("model", "heads", c.dims.heads),
      number("model", "mlp_hidden", c.dims.mlp_hidden),
      number("model", "window", c.window),
      number("pretrain", "epochs", c.pretrain.epochs),
      number("pretrain", "lr", c.pretrain.lr),
      number("diffusion", "train_timesteps", fc.diffusion.t_train),
      number("diffusion", "beta_start", fc.diffusion.beta_start),
      number("diffusion", "beta_end", fc.diffusion.beta_end),
      number("diffusion", "p_drop", fc.diffusion.p_drop),
      number("diffusion", "train_w", fc.diffusion.train_w),
      number("diffusion", "batch", fc.diffusion.batch),
      number("diffusion", "lr", fc.diffusion.lr),
      {"diffusion", "sampler",
       [&fc](const std::string& t) {
         const auto v = trim(t);
         if (v == "ddim") fc.sampler.kind = diff::SamplerKind::kDdim;
         else if (v == "ddpm") fc.sampler.kind = diff::SamplerKind::kDdpm;
         else throw ConfigError("diffusion.sampler: expected ddim|ddpm, got '" + v + "'");
       },
       [&fc] { return std::string(fc.sampler.kind == diff::SamplerKind::kDdim ? "ddim" : "ddpm"); }},
      number("diffusion", "timesteps", fc.sampler.timesteps),
      number("diffusion", "guidance_w", fc.sampler.guidance_w),
      flag("diffusion", "conditional", fc.sampler.conditional),
      number("classifier", "batch", fc.classifier.batch),
      number("classifier", "lr", fc.classifier.lr),
      number("federation", "n_c", c.n_c),
      number("federation", "rounds", fc.rounds),
      number("federation", "E", fc.E),
      number("federation", "local_epochs", fc.local_epochs),
      number("federation", "diffusion_epochs", fc.diffusion_epochs),
      number("federation", "participation", fc.participation),
      flag("federation", "strict_alternation", fc.strict_alternation),
      flag("federation", "afs", fc.afs),
      {"federation", "recovery",
       [&fc](const std::string& t) {
         const auto v = trim(t);
         if (v == "diffusion") fc.recovery = RecoveryMode::kDiffusion;
         else if (v == "zero") fc.recovery = RecoveryMode::kZero;
         else throw ConfigError("federation.recovery: expected diffusion|zero, got '" + v + "'");
       },
       [&fc] { return std::string(fc.recovery == RecoveryMode::kDiffusion ? "diffusion" : "zero"); }},
      number("run", "seed", c.seed),
  };
  return f;
}

}  // namespace detail

inline void RunConfig::validate() const {
  try {
    dims.validate();
    federation.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (corpus.n_conversations < 1 || corpus.utterances_per_conv < 1) throw ConfigError("corpus: sizes must be positive");
  if (corpus.n_classes < 2) throw ConfigError("corpus.n_classes must be at least 2");
  if (corpus.n_classes != dims.n_classes) throw ConfigError("model and corpus disagree on the class count");
  if (n_c < 1) throw ConfigError("federation.n_c must be at least 1");
  if (window < 1) throw ConfigError("model.window must be at least 1");
  if (protocol == Protocol::kFixed) {
    if (patterns.size() != n_c) throw ConfigError("protocol.patterns: one pattern per client is required");
    for (auto p : patterns)
      if (p.empty() || p == ModalitySet::all()) throw ConfigError("protocol.patterns: each pattern keeps 1 or 2 modalities");
  }
  auto check_eta = [](double e) {
    if (!(e >= 0.0 && e <= corpus::kMaxMissingRate)) throw ConfigError("missing rate eta must lie in [0, 2/3]");
  };
  check_eta(eta);
  for (double e : eta_grid) check_eta(e);
  const auto& d = federation.diffusion;
  if (d.t_train < 1) throw ConfigError("diffusion.train_timesteps must be positive");
  if (!(d.beta_start > 0.0 && d.beta_start <= d.beta_end && d.beta_end < 1.0)) {
    throw ConfigError("diffusion: need 0 < beta_start <= beta_end < 1");
  }
  if (!(d.p_drop >= 0.0 && d.p_drop < 1.0)) throw ConfigError("diffusion.p_drop must lie in [0, 1)");
  if (d.batch < 1 || federation.classifier.batch < 1) throw ConfigError("batch sizes must be positive");
  const auto& s = federation.sampler;
  if (s.guidance_w < 0.0) throw ConfigError("diffusion.guidance_w must be nonnegative");
  if (s.kind == diff::SamplerKind::kDdpm && s.timesteps != d.t_train) {
    throw ConfigError("diffusion.timesteps must equal train_timesteps for the ddpm sampler");
  }
  if (s.timesteps < 1 || s.timesteps > d.t_train) throw ConfigError("diffusion.timesteps must lie in [1, train_timesteps]");
}

/// Every key in fixed order; the config hash is taken over this text.
inline std::string RunConfig::canonical() const {
  RunConfig copy = *this;
  std::string out, section;
  for (const auto& f : detail::fields(copy)) {
    if (f.section != section) {
      out += "[" + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

/// INI text; sections and keys must be known, missing keys keep defaults.
inline RunConfig parse_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  RunConfig cfg;
  auto fields = detail::fields(cfg);
  std::map<std::string, detail::Field*> index;
  for (auto& f : fields) index[f.section + "." + f.key] = &f;
  for (const auto& [sec, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("key '" + sec + "' outside any section");
    for (const auto& [key, val] : body) {
      auto it = index.find(sec + "." + key);
      if (it == index.end()) throw ConfigError("unknown config key '" + sec + "." + key + "'");
      it->second->set(val.data());
    }
  }
  cfg.dims.n_classes = cfg.corpus.n_classes;
  cfg.resolve_seeds();
  cfg.validate();
  return cfg;
}

inline RunConfig parse_config_text(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

}  // namespace fedrec::config
