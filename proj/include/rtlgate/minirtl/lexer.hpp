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

#include <cctype>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtlgate/minirtl/errors.hpp"
#include "rtlgate/minirtl/vocab.hpp"

namespace rtlgate::minirtl {

/// Splits MiniRTL text into vocabulary ids. Whitespace is insignificant.
/// Any lexeme that is not a vocabulary terminal raises LexError.
inline std::vector<TokenId> tokenize(std::string_view text,
                                     const Vocab& vocab = Vocab::minirtl()) {
  std::vector<TokenId> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto is_word = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  };
  while (i < n) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    std::size_t len = 1;
    if (is_word(c)) {
      while (i + len < n && is_word(text[i + len])) ++len;
    } else if ((c == '<' || c == '=') && i + 1 < n && text[i + 1] == '=') {
      len = 2;
    }
    std::string_view lexeme = text.substr(i, len);
    auto id = vocab.lookup(lexeme);
    if (!id || vocab.is_reserved(*id)) throw LexError(i, std::string(lexeme));
    out.push_back(*id);
    i += len;
  }
  return out;
}

/// Canonical rendering: spellings joined by single spaces.
inline std::string detokenize(std::span<const TokenId> ids,
                              const Vocab& vocab = Vocab::minirtl()) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ' ';
    s += vocab.spelling(ids[i]);
  }
  return s;
}

}  // namespace rtlgate::minirtl
