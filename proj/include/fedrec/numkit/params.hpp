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

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedrec/numkit/rng.hpp"
#include "fedrec/numkit/tape.hpp"
#include "fedrec/numkit/tensor.hpp"

namespace fedrec::numkit {

/// Ordered collection of named parameter tensors.
class ParameterSet {
 public:
  void add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(value));
  }

  /// Weight matrix with N(0, 1/fan_in) entries.
  void add_weight(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
    add(name, rng.normal_tensor({in, out}, gain / std::sqrt(static_cast<double>(in))));
  }
  void add_bias(const std::string& name, std::size_t n) { add(name, Tensor::matrix(1, n)); }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& at(const std::string& name) const { return entries_.at(lookup(name)).second; }
  Tensor& at(const std::string& name) { return entries_.at(lookup(name)).second; }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  const Tensor& value(std::size_t i) const { return entries_[i].second; }
  Tensor& value(std::size_t i) { return entries_[i].second; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  /// Subset of entries whose name starts with `prefix`.
  ParameterSet with_prefix(const std::string& prefix) const {
    ParameterSet out;
    for (const auto& [n, v] : entries_)
      if (n.rfind(prefix, 0) == 0) out.add(n, v);
    return out;
  }

  /// Overwrites (or adds) every entry of `other`.
  void assign(const ParameterSet& other) {
    for (const auto& [n, v] : other.entries_) {
      if (contains(n)) at(n) = v;
      else add(n, v);
    }
  }

  bool same_manifest(const ParameterSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (name(i) != other.name(i) || value(i).shape() != other.value(i).shape()) return false;
    return true;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(scalar_count());
    for (const auto& e : entries_) out.insert(out.end(), e.second.data().begin(), e.second.data().end());
    return out;
  }

  bool all_finite() const {
    for (const auto& e : entries_)
      if (!e.second.all_finite()) return false;
    return true;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A ParameterSet placed on a tape as differentiable leaves.
class Bound {
 public:
  Bound(Tape& tape, const ParameterSet& params) : params_(&params) {
    vars_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      vars_.push_back(tape.leaf(params.value(i)));
      index_.emplace(params.name(i), i);
    }
  }

  Var operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("parameter '" + name + "' is not bound");
    return vars_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  /// Adjoints for every bound parameter (zeros for parameters the loss did not use).
  ParameterSet gradients() const {
    ParameterSet g;
    for (std::size_t i = 0; i < vars_.size(); ++i) g.add(params_->name(i), vars_[i].tape->grad(vars_[i]));
    return g;
  }

 private:
  const ParameterSet* params_;
  std::vector<Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// 64-bit FNV-1a over bytes.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

/// Hash over names, shapes and exact bit patterns.
inline std::uint64_t hash_parameters(const ParameterSet& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < p.size(); ++i) {
    h = fnv1a(p.name(i), h);
    for (auto e : p.value(i).shape()) h = fnv1a(&e, sizeof e, h);
    h = fnv1a(p.value(i).ptr(), p.value(i).size() * sizeof(double), h);
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

// ---- checkpoint payload ------------------------------------------------------
//
// Payload: flat little-endian float32 values, entries back to back.
// Manifest: one line per entry, "name<TAB>d0xd1...<TAB>byte_offset".

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
};

struct Checkpoint {
  std::vector<ManifestEntry> manifest;
  std::vector<std::uint8_t> payload;

  std::size_t bytes() const { return payload.size(); }
};

namespace detail {
inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((u >> (8 * b)) & 0xFFu));
}
inline float get_f32(const std::uint8_t* p) {
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}
}  // namespace detail

/// Serializes to 32-bit payload; round trip loses precision beyond float32.
inline Checkpoint serialize(const ParameterSet& params) {
  Checkpoint ck;
  ck.payload.reserve(params.scalar_count() * 4);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ck.manifest.push_back({params.name(i), params.value(i).shape(), ck.payload.size()});
    for (double v : params.value(i).data()) detail::put_f32(ck.payload, static_cast<float>(v));
  }
  return ck;
}

inline ParameterSet deserialize(const Checkpoint& ck) {
  ParameterSet p;
  for (const auto& e : ck.manifest) {
    const std::size_t n = shape_size(e.shape);
    if (e.offset + 4 * n > ck.payload.size()) throw std::runtime_error("checkpoint entry '" + e.name + "' overruns payload");
    Tensor t(e.shape);
    for (std::size_t i = 0; i < n; ++i) t[i] = detail::get_f32(ck.payload.data() + e.offset + 4 * i);
    p.add(e.name, std::move(t));
  }
  return p;
}

inline std::string manifest_text(const Checkpoint& ck) {
  std::ostringstream os;
  for (const auto& e : ck.manifest) {
    os << e.name << '\t';
    for (std::size_t i = 0; i < e.shape.size(); ++i) os << (i ? "x" : "") << e.shape[i];
    os << '\t' << e.offset << '\n';
  }
  return os.str();
}

inline std::vector<ManifestEntry> parse_manifest(const std::string& text) {
  std::vector<ManifestEntry> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string dims;
    if (!std::getline(ls, e.name, '\t') || !std::getline(ls, dims, '\t') || !(ls >> e.offset)) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + " is malformed");
    }
    std::istringstream ds(dims);
    std::string tok;
    while (std::getline(ds, tok, 'x')) e.shape.push_back(std::stoul(tok));
    out.push_back(std::move(e));
  }
  return out;
}

/// Writes `<stem>.bin` and `<stem>.manifest`.
inline void save_checkpoint(const ParameterSet& params, const std::string& stem) {
  const Checkpoint ck = serialize(params);
  std::ofstream bin(stem + ".bin", std::ios::binary);
  bin.write(reinterpret_cast<const char*>(ck.payload.data()), static_cast<std::streamsize>(ck.payload.size()));
  std::ofstream man(stem + ".manifest");
  man << manifest_text(ck);
  if (!bin || !man) throw std::runtime_error("failed to write checkpoint " + stem);
}

inline ParameterSet load_checkpoint(const std::string& stem) {
  std::ifstream man(stem + ".manifest");
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!man || !bin) throw std::runtime_error("checkpoint " + stem + " not found");
  std::stringstream ms;
  ms << man.rdbuf();
  Checkpoint ck;
  ck.manifest = parse_manifest(ms.str());
  ck.payload.assign(std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>());
  return deserialize(ck);
}

}  // namespace fedrec::numkit
