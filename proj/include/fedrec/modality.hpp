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

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedrec {

enum class Modality : std::uint8_t { kLanguage = 0, kVision = 1, kAcoustic = 2 };

inline constexpr std::size_t kNumModalities = 3;
inline constexpr std::array<Modality, kNumModalities> kAllModalities = {Modality::kLanguage, Modality::kVision,
                                                                        Modality::kAcoustic};

constexpr std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

constexpr char modality_key(Modality m) {
  switch (m) {
    case Modality::kLanguage: return 'l';
    case Modality::kVision: return 'v';
    case Modality::kAcoustic: return 'a';
  }
  return '?';
}

inline Modality modality_from_key(char c) {
  switch (c) {
    case 'l': return Modality::kLanguage;
    case 'v': return Modality::kVision;
    case 'a': return Modality::kAcoustic;
    default: throw std::invalid_argument(std::string("unknown modality key '") + c + "'");
  }
}

/// Subset of {l, v, a}; bit i set means modality i is present.
class ModalitySet {
 public:
  constexpr ModalitySet() = default;
  constexpr explicit ModalitySet(std::uint8_t bits) : bits_(bits & 0x7u) {}
  static constexpr ModalitySet all() { return ModalitySet(0x7u); }
  static constexpr ModalitySet none() { return ModalitySet(0u); }
  static constexpr ModalitySet of(Modality m) { return ModalitySet(static_cast<std::uint8_t>(1u << index_of(m))); }

  /// Parses "lv", "{l,a}", "a" and similar.
  static ModalitySet parse(const std::string& text) {
    ModalitySet s;
    for (char c : text) {
      if (c == '{' || c == '}' || c == ',' || c == ' ') continue;
      s.insert(modality_from_key(c));
    }
    return s;
  }

  constexpr bool contains(Modality m) const { return (bits_ >> index_of(m)) & 1u; }
  constexpr void insert(Modality m) { bits_ |= static_cast<std::uint8_t>(1u << index_of(m)); }
  constexpr void erase(Modality m) { bits_ &= static_cast<std::uint8_t>(~(1u << index_of(m))); }
  constexpr std::size_t count() const { return (bits_ & 1u) + ((bits_ >> 1) & 1u) + ((bits_ >> 2) & 1u); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }

  constexpr ModalitySet operator|(ModalitySet o) const { return ModalitySet(bits_ | o.bits_); }
  constexpr ModalitySet operator&(ModalitySet o) const { return ModalitySet(bits_ & o.bits_); }
  constexpr ModalitySet complement() const { return ModalitySet(static_cast<std::uint8_t>(~bits_ & 0x7u)); }
  constexpr bool operator==(const ModalitySet&) const = default;

  std::vector<Modality> members() const {
    std::vector<Modality> out;
    for (Modality m : kAllModalities)
      if (contains(m)) out.push_back(m);
    return out;
  }

  /// "{l,v}" style.
  std::string to_string() const {
    std::string s = "{";
    for (Modality m : members()) {
      if (s.size() > 1) s += ',';
      s += modality_key(m);
    }
    return s + "}";
  }

  /// Fixed-order bit string "lva" -> e.g. "101".
  std::string bit_string() const {
    std::string s;
    for (Modality m : kAllModalities) s += contains(m) ? '1' : '0';
    return s;
  }

 private:
  std::uint8_t bits_ = 0;
};

/// The six legal fixed-protocol patterns (non-empty strict subsets), in table order.
inline std::vector<ModalitySet> fixed_patterns() {
  return {ModalitySet::parse("l"),  ModalitySet::parse("v"),  ModalitySet::parse("a"),
          ModalitySet::parse("lv"), ModalitySet::parse("la"), ModalitySet::parse("va")};
}

}  // namespace fedrec
