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

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtlgate/minirtl/ast.hpp"
#include "rtlgate/minirtl/errors.hpp"
#include "rtlgate/rng.hpp"

namespace rtlgate::minirtl {

/// One value per non-clock input port, per cycle, in a fixed port order.
/// Clock inputs are driven by the simulator and never appear here.
struct Stimulus {
  std::vector<std::string> inputs;
  std::vector<int> widths;
  std::vector<std::vector<std::uint32_t>> cycles;
  int reset_prefix = 0;
  bool exhaustive = false;  // set by the coverage-rule builder

  friend bool operator==(const Stimulus&, const Stimulus&) = default;
};

/// Two samples per cycle: phase 0 after inputs settle (clock low, before the
/// rising edge), phase 1 after the rising edge (clock high). Phase 0 is the
/// conventional per-cycle value; phase 1 makes posedge and negedge
/// registers observably different.
struct OutputTrace {
  std::vector<std::string> outputs;
  std::vector<int> widths;
  std::vector<std::vector<std::uint32_t>> samples;  // [cycle*2 + phase][output]

  std::size_t num_cycles() const { return samples.size() / 2; }
  std::uint32_t at(std::size_t cycle, std::size_t output, int phase = 0) const {
    return samples[cycle * 2 + static_cast<std::size_t>(phase)][output];
  }
  std::vector<std::uint32_t> column(const std::string& name, int phase = 0) const {
    std::vector<std::uint32_t> r;
    for (std::size_t o = 0; o < outputs.size(); ++o)
      if (outputs[o] == name)
        for (std::size_t c = 0; c < num_cycles(); ++c) r.push_back(at(c, o, phase));
    return r;
  }
};

inline constexpr std::uint32_t mask_of(int width) { return (1u << width) - 1u; }

/// Checks the Stimulus invariants against a design: every non-clock input
/// present with matching width, every cycle complete and in range.
inline bool stimulus_matches(const ModuleAst& ast, const Stimulus& stim, std::string* why = nullptr) {
  auto bad = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  if (stim.inputs.size() != stim.widths.size()) return bad("inputs/widths size differ");
  std::size_t needed = 0;
  for (const auto& s : ast.signals) {
    if (s.kind != SignalKind::Input || s.is_clock) continue;
    ++needed;
    bool found = false;
    for (std::size_t i = 0; i < stim.inputs.size(); ++i)
      if (stim.inputs[i] == s.name) {
        if (stim.widths[i] != s.width) return bad("width mismatch on " + s.name);
        found = true;
      }
    if (!found) return bad("missing input " + s.name);
  }
  if (needed != stim.inputs.size()) return bad("stimulus drives unknown inputs");
  for (const auto& cyc : stim.cycles) {
    if (cyc.size() != stim.inputs.size()) return bad("incomplete cycle");
    for (std::size_t i = 0; i < cyc.size(); ++i)
      if (cyc[i] > mask_of(stim.widths[i])) return bad("value out of range");
  }
  if (stim.reset_prefix < 0) return bad("negative reset prefix");
  return true;
}

namespace detail {

class Simulator {
 public:
  explicit Simulator(const ModuleAst& ast) : ast_(ast), values_(ast.signals.size(), 0) {}

  std::uint32_t eval(ExprId id) const {
    const Expr& e = ast_.exprs[static_cast<std::size_t>(id)];
    const std::uint32_t m = mask_of(e.width);
    switch (e.op) {
      case ExprOp::Const: return e.value;
      case ExprOp::Ref: return values_[static_cast<std::size_t>(e.signal)];
      case ExprOp::Index: return (values_[static_cast<std::size_t>(e.signal)] >> e.bit) & 1u;
      case ExprOp::Not: return ~eval(e.lhs) & m;
      case ExprOp::And: return eval(e.lhs) & eval(e.rhs);
      case ExprOp::Or: return eval(e.lhs) | eval(e.rhs);
      case ExprOp::Xor: return eval(e.lhs) ^ eval(e.rhs);
      case ExprOp::Eq: return eval(e.lhs) == eval(e.rhs) ? 1u : 0u;
      case ExprOp::Cond: return eval(e.lhs) ? eval(e.rhs) : eval(e.alt);
    }
    return 0;
  }

  void settle() {
    for (const auto& a : ast_.assigns) values_[static_cast<std::size_t>(a.target)] = eval(a.expr);
  }

  void exec(StmtId id, std::vector<std::pair<SignalId, std::uint32_t>>& updates) const {
    const Stmt& s = ast_.stmts[static_cast<std::size_t>(id)];
    switch (s.op) {
      case StmtOp::NbAssign: updates.emplace_back(s.target, eval(s.expr)); break;
      case StmtOp::If:
        if (eval(s.expr)) exec(s.then_branch, updates);
        else if (s.else_branch >= 0) exec(s.else_branch, updates);
        break;
      case StmtOp::Block:
        for (StmtId c : s.body) exec(c, updates);
        break;
    }
  }

  // Nonblocking semantics: all right-hand sides read pre-edge values.
  void clock_edge(Edge edge) {
    std::vector<std::pair<SignalId, std::uint32_t>> updates;
    for (const auto& blk : ast_.always_blocks)
      if (blk.edge == edge) exec(blk.body, updates);
    for (auto [sig, v] : updates) values_[static_cast<std::size_t>(sig)] = v;
    settle();
  }

  void reset_registers() {
    for (const auto& r : ast_.registers()) values_[static_cast<std::size_t>(r.target)] = 0;
    settle();
  }

  OutputTrace run(const Stimulus& stim) {
    std::vector<SignalId> in_ids;
    for (const auto& name : stim.inputs) in_ids.push_back(*ast_.find(name));
    OutputTrace trace;
    std::vector<SignalId> out_ids;
    for (const auto& p : ast_.interface.ports) {
      if (p.direction != Direction::Output) continue;
      trace.outputs.push_back(p.name);
      trace.widths.push_back(p.width);
      out_ids.push_back(*ast_.find(p.name));
    }
    auto sample = [&] {
      std::vector<std::uint32_t> row;
      row.reserve(out_ids.size());
      for (SignalId o : out_ids) row.push_back(values_[static_cast<std::size_t>(o)]);
      trace.samples.push_back(std::move(row));
    };
    std::fill(values_.begin(), values_.end(), 0u);
    for (std::size_t c = 0; c < stim.cycles.size(); ++c) {
      for (std::size_t i = 0; i < in_ids.size(); ++i)
        values_[static_cast<std::size_t>(in_ids[i])] = stim.cycles[c][i];
      settle();
      sample();
      clock_edge(Edge::Posedge);
      sample();
      clock_edge(Edge::Negedge);
      if (static_cast<int>(c) < stim.reset_prefix) reset_registers();
    }
    return trace;
  }

 private:
  const ModuleAst& ast_;
  std::vector<std::uint32_t> values_;
};

}  // namespace detail

/// Cycle-based two-valued simulation. Registers start at 0 and are held at 0
/// through the reset prefix. Pure: identical inputs give identical traces.
inline OutputTrace simulate(const ModuleAst& ast, const Stimulus& stim) {
  std::string why;
  if (!stimulus_matches(ast, stim, &why)) throw std::invalid_argument("malformed stimulus: " + why);
  return detail::Simulator(ast).run(stim);
}

inline constexpr int kMaxExhaustiveCombBits = 10;
inline constexpr int kMaxExhaustiveSeqBits = 6;
inline constexpr int kSeqRounds = 8;
inline constexpr int kRandomSeqCycles = 256;

/// Builds test vectors per the coverage rule:
///  - combinational, <= 10 input bits: all 2^bits vectors in counting order
///    (first input is most significant);
///  - sequential, <= 6 input bits: one reset cycle, then 8 rounds each
///    enumerating all 2^bits vectors in a seeded permuted order;
///  - otherwise 256 seeded pseudorandom cycles (not exhaustive).
inline Stimulus build_vectors(const ModuleAst& ast, std::uint64_t seed) {
  Stimulus st;
  for (const auto& s : ast.signals) {
    if (s.kind != SignalKind::Input || s.is_clock) continue;
    st.inputs.push_back(s.name);
    st.widths.push_back(s.width);
  }
  const int bits = ast.input_bits();
  auto split = [&](std::uint32_t packed) {
    std::vector<std::uint32_t> row(st.inputs.size());
    int shift = bits;
    for (std::size_t i = 0; i < st.inputs.size(); ++i) {
      shift -= st.widths[i];
      row[i] = (packed >> shift) & mask_of(st.widths[i]);
    }
    return row;
  };
  Rng rng(seed);
  if (!ast.is_sequential() && bits <= kMaxExhaustiveCombBits) {
    for (std::uint32_t v = 0; v < (1u << bits); ++v) st.cycles.push_back(split(v));
    st.exhaustive = true;
  } else if (ast.is_sequential() && bits <= kMaxExhaustiveSeqBits) {
    st.reset_prefix = 1;
    st.cycles.push_back(split(0));
    std::vector<std::uint32_t> order(1u << bits);
    for (std::uint32_t v = 0; v < order.size(); ++v) order[v] = v;
    for (int r = 0; r < kSeqRounds; ++r) {
      rng.shuffle(order);
      for (std::uint32_t v : order) st.cycles.push_back(split(v));
    }
    st.exhaustive = true;
  } else {
    if (ast.is_sequential()) {
      st.reset_prefix = 1;
      st.cycles.push_back(split(0));
    }
    for (int c = 0; c < kRandomSeqCycles; ++c) {
      std::uint32_t v = static_cast<std::uint32_t>(rng.next_u64() & ((bits >= 32) ? 0xFFFFFFFFu : ((1u << bits) - 1u)));
      st.cycles.push_back(split(v));
    }
  }
  return st;
}

struct Equivalence {
  double fraction = 0.0;
  bool is_equivalent = false;
};

/// Fraction of matching output bits over all samples. The candidate must
/// expose the same output port names and widths as the reference.
inline Equivalence equivalence_fraction(const ModuleAst& candidate, const ModuleAst& reference,
                                        const Stimulus& vectors) {
  const auto cand_out = candidate.interface.outputs();
  const auto ref_out = reference.interface.outputs();
  if (cand_out.size() != ref_out.size()) throw InterfaceMismatch("output port count differs");
  for (const auto& r : ref_out) {
    bool ok = false;
    for (const auto& c : cand_out) ok |= (c.name == r.name && c.width == r.width);
    if (!ok) throw InterfaceMismatch("output '" + r.name + "' missing or width differs");
  }
  const OutputTrace ref = simulate(reference, vectors);
  const OutputTrace cand = simulate(candidate, vectors);
  std::map<std::string, std::size_t> cand_col;
  for (std::size_t o = 0; o < cand.outputs.size(); ++o) cand_col[cand.outputs[o]] = o;
  std::uint64_t match = 0, total = 0;
  for (std::size_t s = 0; s < ref.samples.size(); ++s) {
    for (std::size_t o = 0; o < ref.outputs.size(); ++o) {
      const int w = ref.widths[o];
      const std::uint32_t diff = ref.samples[s][o] ^ cand.samples[s][cand_col[ref.outputs[o]]];
      total += static_cast<std::uint64_t>(w);
      match += static_cast<std::uint64_t>(w - __builtin_popcount(diff));
    }
  }
  Equivalence eq;
  eq.fraction = total ? static_cast<double>(match) / static_cast<double>(total) : 1.0;
  eq.is_equivalent = match == total && vectors.exhaustive;
  return eq;
}

}  // namespace rtlgate::minirtl
