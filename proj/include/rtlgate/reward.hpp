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

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "rtlgate/minirtl.hpp"
#include "rtlgate/taskgen.hpp"

namespace rtlgate::reward {

using minirtl::Interface;
using minirtl::TokenId;

enum class Stage { ParseFail, Interface, Functional };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::ParseFail: return "parse-fail";
    case Stage::Interface: return "interface";
    case Stage::Functional: return "functional";
  }
  return "?";
}

struct RewardBreakdown {
  bool syntax_ok = false;
  double interface_score = 0.0;
  double functional_fraction = 0.0;
  bool functional_pass = false;
  double reward = 0.0;
  Stage stage = Stage::ParseFail;
};

/// Piecewise reward levels:
///   parse fail          -> parse_fail
///   interface s < 1     -> interface_base + interface_span * s
///   s = 1, m < 1        -> near_miss_base + near_miss_span * m
///   m = 1               -> pass
struct RewardSchedule {
  double parse_fail = 0.0;
  double interface_base = 0.2;
  double interface_span = 0.3;
  double near_miss_base = 0.5;
  double near_miss_span = 0.4;
  double pass = 1.0;

  /// Throws std::invalid_argument unless the levels are ordered and
  /// near-misses stay strictly below a pass.
  void validate() const {
    const double v[] = {parse_fail, interface_base, interface_span, near_miss_base, near_miss_span, pass};
    for (double x : v)
      if (!std::isfinite(x) || x < 0.0 || x > 1.0) throw std::invalid_argument("reward levels must lie in [0,1]");
    if (!(parse_fail <= interface_base && interface_base + interface_span <= near_miss_base &&
          near_miss_base + near_miss_span < pass))
      throw std::invalid_argument("reward levels must be ordered with near-miss < pass");
  }
};

/// 0.25 for the module name plus 0.75 times the fraction of target ports
/// matched exactly on (name, direction, width).
inline double interface_score(const Interface& candidate, const Interface& target) {
  const double name = candidate.module_name == target.module_name ? 1.0 : 0.0;
  if (target.ports.empty()) return 0.25 * name + 0.75;
  std::size_t matched = 0;
  for (const auto& tp : target.ports)
    for (const auto& cp : candidate.ports)
      if (cp == tp) {
        ++matched;
        break;
      }
  return 0.25 * name + 0.75 * static_cast<double>(matched) / static_cast<double>(target.ports.size());
}

/// A trailing EOS is dropped before lexing; `truncated` marks a rollout that
/// hit the length limit, which scores as a parse failure.
inline RewardBreakdown score(std::span<const TokenId> candidate, const taskgen::Task& task, bool truncated = false,
                             const RewardSchedule& sched = {}) {
  RewardBreakdown rb;
  rb.reward = sched.parse_fail;
  if (truncated) return rb;
  if (!candidate.empty() && candidate.back() == minirtl::id_of(minirtl::Tk::Eos)) candidate = candidate.first(candidate.size() - 1);
  minirtl::ModuleAst ast;
  try {
    ast = minirtl::parse(candidate);
  } catch (const std::runtime_error&) {
    return rb;
  }
  rb.syntax_ok = true;
  rb.stage = Stage::Interface;
  rb.interface_score = interface_score(ast.interface, task.reference.interface);
  if (rb.interface_score < 1.0) {
    rb.reward = sched.interface_base + sched.interface_span * rb.interface_score;
    return rb;
  }
  rb.stage = Stage::Functional;
  try {
    rb.functional_fraction = minirtl::equivalence_fraction(ast, task.reference, task.vectors).fraction;
  } catch (const std::exception&) {
    // extra candidate ports make the stimulus inapplicable
    rb.functional_fraction = 0.0;
  }
  rb.functional_pass = rb.functional_fraction == 1.0;
  rb.reward = rb.functional_pass ? sched.pass : sched.near_miss_base + sched.near_miss_span * rb.functional_fraction;
  return rb;
}

inline RewardBreakdown score_text(std::string_view text, const taskgen::Task& task, const RewardSchedule& sched = {}) {
  std::vector<TokenId> toks;
  try {
    toks = minirtl::tokenize(text, minirtl::Vocab::minirtl());
  } catch (const minirtl::LexError&) {
    RewardBreakdown rb;
    rb.reward = sched.parse_fail;
    return rb;
  }
  return score(toks, task, false, sched);
}

inline bool is_pass(const RewardBreakdown& rb) { return rb.functional_pass; }

}  // namespace rtlgate::reward
