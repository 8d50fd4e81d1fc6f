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

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "fedrec/corpus/corpus.hpp"

namespace fedrec::corpus {

// Line-delimited JSON. Line 1 is a header; every further line is one
// utterance: {"conv","index","speaker","label","l","v","a","mask"}.
// Reals are written with 17 significant digits so load(save(x)) == x.

inline constexpr const char* kCorpusFormat = "fedrec-corpus";

namespace detail {
inline void write_array(std::ostream& os, const std::vector<double>& v) {
  char buf[40];
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    os << (i ? "," : "") << buf;
  }
  os << ']';
}
}  // namespace detail

/// `extra` adds provenance keys (config hash, seed) to the header; readers ignore them.
inline void write_corpus(std::ostream& os, const Corpus& c, const MissingMask& mask,
                         const nlohmann::json& extra = nlohmann::json::object()) {
  if (mask.size() != c.utterance_count()) throw DataError("mask does not cover the corpus");
  nlohmann::json header = {{"format", kCorpusFormat},
                           {"version", 1},
                           {"n_classes", c.n_classes},
                           {"n_conversations", c.conversations.size()},
                           {"dims", {{"l", c.dims[0]}, {"v", c.dims[1]}, {"a", c.dims[2]}}}};
  for (auto it = extra.begin(); it != extra.end(); ++it)
    if (!header.contains(it.key())) header[it.key()] = *it;
  os << header.dump() << '\n';
  std::size_t slot = 0;
  for (const auto& conv : c.conversations) {
    for (const auto& u : conv.utterances) {
      os << "{\"conv\":" << conv.id << ",\"index\":" << u.index << ",\"speaker\":" << u.speaker
         << ",\"label\":" << u.label;
      for (Modality m : kAllModalities) {
        os << ",\"" << modality_key(m) << "\":";
        detail::write_array(os, u.features[index_of(m)]);
      }
      os << ",\"mask\":\"" << mask.available[slot++].bit_string() << "\"}\n";
    }
  }
}

inline std::pair<Corpus, MissingMask> read_corpus(std::istream& is) {
  using nlohmann::json;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) -> DataError {
    return DataError("corpus line " + std::to_string(lineno) + ": " + why);
  };
  if (!std::getline(is, line)) throw DataError("corpus file is empty (missing header)");
  ++lineno;
  Corpus c;
  std::size_t n_conv = 0;
  try {
    json h = json::parse(line);
    if (h.at("format") != kCorpusFormat) throw fail("unexpected format tag");
    c.n_classes = h.at("n_classes").get<int>();
    n_conv = h.at("n_conversations").get<std::size_t>();
    c.dims = {h.at("dims").at("l").get<std::size_t>(), h.at("dims").at("v").get<std::size_t>(),
              h.at("dims").at("a").get<std::size_t>()};
  } catch (const json::exception& e) {
    throw fail(std::string("bad header: ") + e.what());
  }

  MissingMask mask;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception& e) {
      throw fail(std::string("not valid JSON: ") + e.what());
    }
    if (!r.is_object()) throw fail("record is not an object");
    for (auto it = r.begin(); it != r.end(); ++it) {
      const std::string& k = it.key();
      if (k != "conv" && k != "index" && k != "speaker" && k != "label" && k != "l" && k != "v" && k != "a" &&
          k != "mask") {
        throw fail("unexpected key '" + k + "'");
      }
    }
    try {
      const auto conv_id = r.at("conv").get<std::size_t>();
      if (c.conversations.empty() || c.conversations.back().id != conv_id) {
        Conversation conv;
        conv.id = conv_id;
        c.conversations.push_back(std::move(conv));
      }
      Utterance u;
      u.index = r.at("index").get<std::size_t>();
      u.speaker = r.at("speaker").get<int>();
      u.label = r.at("label").get<int>();
      if (u.label < 0 || u.label >= c.n_classes) throw fail("label out of range");
      if (u.index != c.conversations.back().size() + 1) throw fail("utterance indices must be contiguous from 1");
      for (Modality m : kAllModalities) {
        u.features[index_of(m)] = r.at(std::string(1, modality_key(m))).get<std::vector<double>>();
        if (u.features[index_of(m)].size() != c.dims[index_of(m)]) throw fail("feature width mismatch");
      }
      const std::string bits = r.at("mask").get<std::string>();
      if (bits.size() != kNumModalities || bits.find_first_not_of("01") != std::string::npos) {
        throw fail("mask must be three 0/1 characters");
      }
      ModalitySet s;
      for (std::size_t i = 0; i < kNumModalities; ++i)
        if (bits[i] == '1') s.insert(kAllModalities[i]);
      if (s.empty()) throw fail("mask leaves no modality available");
      mask.available.push_back(s);
      c.conversations.back().utterances.push_back(std::move(u));
    } catch (const json::exception& e) {
      throw fail(std::string("bad record: ") + e.what());
    }
  }
  if (c.conversations.size() != n_conv) throw DataError("corpus header announces a different conversation count");
  return {std::move(c), std::move(mask)};
}

inline void save_corpus(const std::string& path, const Corpus& c, const MissingMask& mask,
                        const nlohmann::json& extra = nlohmann::json::object()) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_corpus(os, c, mask, extra);
}

inline std::pair<Corpus, MissingMask> load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open corpus " + path);
  return read_corpus(is);
}

}  // namespace fedrec::corpus
