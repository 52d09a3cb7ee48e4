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

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace rtlgate::minirtl {

class LexError : public std::runtime_error {
 public:
  LexError(std::size_t position, std::string lexeme)
      : std::runtime_error("lex error at offset " + std::to_string(position) +
                           ": unexpected '" + lexeme + "'"),
        position_(position),
        lexeme_(std::move(lexeme)) {}

  std::size_t position() const { return position_; }
  const std::string& lexeme() const { return lexeme_; }

 private:
  std::size_t position_;
  std::string lexeme_;
};

/// First offending token. index == token count means "unexpected end".
class SyntaxError : public std::runtime_error {
 public:
  SyntaxError(std::size_t index, std::vector<std::string> expected)
      : std::runtime_error(format(index, expected)),
        index_(index),
        expected_(std::move(expected)) {}

  std::size_t index() const { return index_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  static std::string format(std::size_t index, const std::vector<std::string>& expected) {
    std::string s = "syntax error at token " + std::to_string(index) + ", expected one of:";
    for (const auto& e : expected) s += " " + e;
    return s;
  }

  std::size_t index_;
  std::vector<std::string> expected_;
};

enum class SemanticKind {
  Undeclared,
  Redeclared,
  MultiDriver,
  Undriven,
  CombCycle,
  WidthMismatch,
  IllegalTarget,
  BadInterface,
};

inline const char* to_string(SemanticKind k) {
  switch (k) {
    case SemanticKind::Undeclared: return "undeclared";
    case SemanticKind::Redeclared: return "redeclared";
    case SemanticKind::MultiDriver: return "multi-driver";
    case SemanticKind::Undriven: return "undriven";
    case SemanticKind::CombCycle: return "comb-cycle";
    case SemanticKind::WidthMismatch: return "width-mismatch";
    case SemanticKind::IllegalTarget: return "illegal-target";
    case SemanticKind::BadInterface: return "bad-interface";
  }
  return "?";
}

class SemanticError : public std::runtime_error {
 public:
  SemanticError(SemanticKind kind, const std::string& detail)
      : std::runtime_error(std::string("semantic error (") + to_string(kind) + "): " + detail),
        kind_(kind) {}

  SemanticKind kind() const { return kind_; }

 private:
  SemanticKind kind_;
};

class InterfaceMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rtlgate::minirtl
