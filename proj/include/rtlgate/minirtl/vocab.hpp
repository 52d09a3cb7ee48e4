// Copyright 2026 The rtlgate Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rtlgate::minirtl {

using TokenId = std::int32_t;

// Fixed part of the vocabulary. For these tokens the enum value is the id.
enum class Tk : std::uint8_t {
  // reserved
  Pad, Bos, Eos, Spec, EndSpec, In, Out, Tt, Ns, KReg, KCnt, KFsm,
  // keywords
  Module, Endmodule, Input, Output, Wire, Reg, Assign, Always, At, Posedge,
  Negedge, If, Else, Begin, End,
  // punctuation / operators
  LParen, RParen, LBrack, RBrack, Semi, Comma, Eq, NbAssign, EqEq, Question,
  Colon, Amp, Pipe, Caret, Tilde,
  // literals
  L0, L1, L2, L3, L4,
  // open classes (not ids; see Vocab::kind)
  Ident, ModName,
};

inline constexpr std::size_t kNumFixedTokens = static_cast<std::size_t>(Tk::Ident);

inline constexpr std::array<std::string_view, kNumFixedTokens> kFixedSpellings = {
    "<pad>", "<bos>", "<eos>", "<spec>", "<endspec>", "<in>", "<out>", "<tt>",
    "<ns>", "<kreg>", "<kcnt>", "<kfsm>",
    "module", "endmodule", "input", "output", "wire", "reg", "assign",
    "always", "@", "posedge", "negedge", "if", "else", "begin", "end",
    "(", ")", "[", "]", ";", ",", "=", "<=", "==", "?", ":", "&", "|", "^",
    "~", "0", "1", "2", "3", "4",
};

inline constexpr std::array<std::string_view, 15> kIdentifierPool = {
    "a", "b", "c", "d", "e", "sel", "clk", "rst",
    "y", "z", "q", "q0", "q1", "t0", "t1",
};

inline constexpr std::size_t kNumModuleNames = 64;

inline const std::vector<std::string>& module_name_pool() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n = {
        "and2", "or2",  "xor2",   "nand2", "nor2",  "xnor2", "mux2", "dff",
        "tff",  "cnt2", "detect", "top",   "dut",   "core",  "unit", "gate",
    };
    for (int i = 0; n.size() < kNumModuleNames; ++i) n.push_back("m" + std::to_string(i));
    return n;
  }();
  return names;
}

constexpr TokenId id_of(Tk t) { return static_cast<TokenId>(t); }

/// Dense token table: ids 0..V-1, lookup(tokens[i]) == i.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
      if (!inserted) throw std::invalid_argument("duplicate vocab token: " + tokens_[i]);
    }
  }

  /// The MiniRTL vocabulary: reserved + terminals, identifier pool, module names.
  static const Vocab& minirtl() {
    static const Vocab v = [] {
      std::vector<std::string> t;
      for (auto s : kFixedSpellings) t.emplace_back(s);
      for (auto s : kIdentifierPool) t.emplace_back(s);
      for (const auto& s : module_name_pool()) t.push_back(s);
      return Vocab(std::move(t));
    }();
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& spelling(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  std::optional<TokenId> lookup(std::string_view s) const {
    auto it = index_.find(std::string(s));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id(std::string_view s) const {
    auto r = lookup(s);
    if (!r) throw std::out_of_range("token not in vocab: " + std::string(s));
    return *r;
  }

  // Only meaningful for the MiniRTL vocabulary layout.
  Tk kind(TokenId id) const {
    const auto u = static_cast<std::size_t>(id);
    if (u < kNumFixedTokens) return static_cast<Tk>(u);
    if (u < kNumFixedTokens + kIdentifierPool.size()) return Tk::Ident;
    return Tk::ModName;
  }

  bool is_reserved(TokenId id) const {
    return id >= 0 && id <= id_of(Tk::KFsm);
  }

  /// FNV-1a over the newline-joined token list. Stored in checkpoints.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tokens_) {
      for (unsigned char ch : t) {
        h ^= ch;
        h *= 0x100000001b3ULL;
      }
      h ^= static_cast<unsigned char>('\n');
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace rtlgate::minirtl
