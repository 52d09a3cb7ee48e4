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
#include <optional>
#include <string>
#include <vector>

namespace rtlgate::minirtl {

enum class Direction : std::uint8_t { Input, Output };

struct PortDecl {
  std::string name;
  Direction direction = Direction::Input;
  int width = 1;

  friend bool operator==(const PortDecl&, const PortDecl&) = default;
};

struct Interface {
  std::string module_name;
  std::vector<PortDecl> ports;

  friend bool operator==(const Interface&, const Interface&) = default;

  std::vector<PortDecl> inputs() const {
    std::vector<PortDecl> r;
    for (const auto& p : ports)
      if (p.direction == Direction::Input) r.push_back(p);
    return r;
  }
  std::vector<PortDecl> outputs() const {
    std::vector<PortDecl> r;
    for (const auto& p : ports)
      if (p.direction == Direction::Output) r.push_back(p);
    return r;
  }
};

enum class SignalKind : std::uint8_t { Input, Output, Wire };

struct Signal {
  std::string name;
  SignalKind kind = SignalKind::Wire;
  int width = 1;
  bool is_reg = false;
  bool is_clock = false;  // used in an always sensitivity list
};

using ExprId = std::int32_t;
using StmtId = std::int32_t;
using SignalId = std::int32_t;

enum class ExprOp : std::uint8_t { Const, Ref, Index, Not, And, Or, Xor, Eq, Cond };

/// Arena node. Operand ids point into ModuleAst::exprs.
struct Expr {
  ExprOp op = ExprOp::Const;
  int width = 1;
  std::uint32_t value = 0;  // Const
  SignalId signal = -1;     // Ref, Index
  int bit = 0;              // Index
  ExprId lhs = -1, rhs = -1, alt = -1;  // unary: lhs; binary: lhs,rhs; Cond: lhs ? rhs : alt
};

enum class Edge : std::uint8_t { Posedge, Negedge };

enum class StmtOp : std::uint8_t { NbAssign, If, Block };

struct Stmt {
  StmtOp op = StmtOp::Block;
  SignalId target = -1;  // NbAssign
  ExprId expr = -1;      // NbAssign value / If condition
  StmtId then_branch = -1, else_branch = -1;
  std::vector<StmtId> body;  // Block
};

struct ContinuousAssign {
  SignalId target;
  ExprId expr;
};

struct AlwaysBlock {
  Edge edge = Edge::Posedge;
  SignalId clock = -1;
  StmtId body = -1;
};

/// Register element view: one entry per reg, with its clocking block.
struct RegisterElement {
  SignalId target;
  Edge edge;
  std::size_t block;
};

/// A parsed, checked MiniRTL design. Instances returned by parse() satisfy:
/// every referenced signal is declared, each driven signal has exactly one
/// driver, and assigns are stored in a valid topological order.
struct ModuleAst {
  Interface interface;
  std::vector<Signal> signals;  // ports first, in declaration order
  std::vector<Expr> exprs;
  std::vector<Stmt> stmts;
  std::vector<ContinuousAssign> assigns;  // topologically sorted
  std::vector<AlwaysBlock> always_blocks;

  std::optional<SignalId> find(const std::string& name) const {
    for (std::size_t i = 0; i < signals.size(); ++i)
      if (signals[i].name == name) return static_cast<SignalId>(i);
    return std::nullopt;
  }

  std::vector<RegisterElement> registers() const {
    std::vector<RegisterElement> regs;
    for (std::size_t b = 0; b < always_blocks.size(); ++b) {
      std::vector<SignalId> targets;
      collect_targets(always_blocks[b].body, targets);
      for (SignalId t : targets) regs.push_back({t, always_blocks[b].edge, b});
    }
    return regs;
  }

  void collect_targets(StmtId id, std::vector<SignalId>& out) const {
    const Stmt& s = stmts[static_cast<std::size_t>(id)];
    switch (s.op) {
      case StmtOp::NbAssign:
        for (SignalId t : out)
          if (t == s.target) return;
        out.push_back(s.target);
        break;
      case StmtOp::If:
        collect_targets(s.then_branch, out);
        if (s.else_branch >= 0) collect_targets(s.else_branch, out);
        break;
      case StmtOp::Block:
        for (StmtId c : s.body) collect_targets(c, out);
        break;
    }
  }

  int input_bits(bool include_clocks = false) const {
    int bits = 0;
    for (const auto& s : signals)
      if (s.kind == SignalKind::Input && (include_clocks || !s.is_clock)) bits += s.width;
    return bits;
  }

  bool is_sequential() const { return !always_blocks.empty(); }
};

/// Pure projection of the parsed interface.
inline Interface extract_interface(const ModuleAst& ast) { return ast.interface; }

}  // namespace rtlgate::minirtl
