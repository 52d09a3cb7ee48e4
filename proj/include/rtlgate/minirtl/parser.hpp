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

#include <algorithm>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "rtlgate/minirtl/ast.hpp"
#include "rtlgate/minirtl/errors.hpp"
#include "rtlgate/minirtl/lexer.hpp"
#include "rtlgate/minirtl/vocab.hpp"

namespace rtlgate::minirtl {

namespace detail {

class Parser {
 public:
  Parser(std::span<const TokenId> toks, const Vocab& vocab) : toks_(toks), vocab_(vocab) {}

  ModuleAst run() {
    expect(Tk::Module);
    ast_.interface.module_name = vocab_.spelling(expect(Tk::ModName));
    expect(Tk::LParen);
    parse_port();
    while (accept(Tk::Comma)) parse_port();
    expect(Tk::RParen);
    expect(Tk::Semi);
    while (!at(Tk::Endmodule)) {
      switch (peek_kind()) {
        case Tk::Wire: parse_net_decl(false); break;
        case Tk::Reg: parse_net_decl(true); break;
        case Tk::Assign: parse_assign(); break;
        case Tk::Always: parse_always(); break;
        default: fail({Tk::Wire, Tk::Reg, Tk::Assign, Tk::Always, Tk::Endmodule});
      }
    }
    expect(Tk::Endmodule);
    if (pos_ != toks_.size()) throw SyntaxError(pos_, {"<end>"});
    check_interface();
    resolve_pending();
    check_drivers();
    order_assigns();
    return std::move(ast_);
  }

 private:
  struct PendingRef {
    std::string name;
    std::size_t token;
  };

  // ---- token helpers ----
  Tk peek_kind() const {
    if (pos_ >= toks_.size()) return Tk::Pad;  // Pad never appears in valid text
    return vocab_.kind(toks_[pos_]);
  }
  bool at(Tk t) const { return pos_ < toks_.size() && peek_kind() == t; }
  bool accept(Tk t) {
    if (!at(t)) return false;
    ++pos_;
    return true;
  }
  [[noreturn]] void fail(std::initializer_list<Tk> expected) const {
    std::vector<std::string> names;
    for (Tk t : expected) {
      if (t == Tk::Ident) names.emplace_back("<identifier>");
      else if (t == Tk::ModName) names.emplace_back("<module-name>");
      else names.emplace_back(kFixedSpellings[static_cast<std::size_t>(t)]);
    }
    throw SyntaxError(pos_, std::move(names));
  }
  TokenId expect(Tk t) {
    if (!at(t)) fail({t});
    return toks_[pos_++];
  }

  // ---- declarations ----
  int parse_range() {
    if (!accept(Tk::LBrack)) return 1;
    int msb = 0;
    switch (peek_kind()) {
      case Tk::L0: msb = 0; break;
      case Tk::L1: msb = 1; break;
      case Tk::L2: msb = 2; break;
      case Tk::L3: msb = 3; break;
      default: fail({Tk::L0, Tk::L1, Tk::L2, Tk::L3});
    }
    ++pos_;
    expect(Tk::Colon);
    expect(Tk::L0);
    expect(Tk::RBrack);
    return msb + 1;
  }

  SignalId declare(const std::string& name, SignalKind kind, int width, bool is_reg) {
    if (ast_.find(name))
      throw SemanticError(SemanticKind::Redeclared, "signal '" + name + "' declared twice");
    ast_.signals.push_back({name, kind, width, is_reg, false});
    return static_cast<SignalId>(ast_.signals.size() - 1);
  }

  void parse_port() {
    Direction dir;
    if (accept(Tk::Input)) dir = Direction::Input;
    else if (accept(Tk::Output)) dir = Direction::Output;
    else fail({Tk::Input, Tk::Output});
    bool is_reg = false;
    if (dir == Direction::Output && accept(Tk::Reg)) is_reg = true;
    int width = parse_range();
    std::string name = vocab_.spelling(expect(Tk::Ident));
    declare(name, dir == Direction::Input ? SignalKind::Input : SignalKind::Output, width, is_reg);
    ast_.interface.ports.push_back({name, dir, width});
  }

  void parse_net_decl(bool is_reg) {
    ++pos_;
    int width = parse_range();
    do {
      std::string name = vocab_.spelling(expect(Tk::Ident));
      declare(name, SignalKind::Wire, width, is_reg);
    } while (accept(Tk::Comma));
    expect(Tk::Semi);
  }

  // ---- expressions ----
  // Signal references may precede their declaration (implicit forward use is
  // not Verilog, but wires declared after use are common in generated text);
  // they are resolved after the module body is read.
  ExprId add(Expr e) {
    ast_.exprs.push_back(e);
    return static_cast<ExprId>(ast_.exprs.size() - 1);
  }

  ExprId parse_expr() {
    ExprId c = parse_or();
    if (!accept(Tk::Question)) return c;
    ExprId t = parse_expr();
    expect(Tk::Colon);
    ExprId f = parse_expr();
    Expr e;
    e.op = ExprOp::Cond;
    e.lhs = c;
    e.rhs = t;
    e.alt = f;
    return add(e);
  }

  template <typename Next>
  ExprId parse_binary(Tk tok, ExprOp op, Next next) {
    ExprId l = (this->*next)();
    while (accept(tok)) {
      ExprId r = (this->*next)();
      Expr e;
      e.op = op;
      e.lhs = l;
      e.rhs = r;
      l = add(e);
    }
    return l;
  }

  ExprId parse_or() { return parse_binary(Tk::Pipe, ExprOp::Or, &Parser::parse_xor); }
  ExprId parse_xor() { return parse_binary(Tk::Caret, ExprOp::Xor, &Parser::parse_and); }
  ExprId parse_and() { return parse_binary(Tk::Amp, ExprOp::And, &Parser::parse_eq); }
  ExprId parse_eq() { return parse_binary(Tk::EqEq, ExprOp::Eq, &Parser::parse_unary); }

  ExprId parse_unary() {
    if (accept(Tk::Tilde)) {
      Expr e;
      e.op = ExprOp::Not;
      e.lhs = parse_unary();
      return add(e);
    }
    return parse_primary();
  }

  ExprId parse_primary() {
    if (accept(Tk::LParen)) {
      ExprId inner = parse_expr();
      expect(Tk::RParen);
      return inner;
    }
    if (accept(Tk::L0) || accept(Tk::L1)) {
      Expr e;
      e.op = ExprOp::Const;
      e.value = vocab_.kind(toks_[pos_ - 1]) == Tk::L1 ? 1u : 0u;
      return add(e);
    }
    if (at(Tk::Ident)) {
      std::size_t tok = pos_;
      std::string name = vocab_.spelling(toks_[pos_++]);
      Expr e;
      e.op = ExprOp::Ref;
      if (accept(Tk::LBrack)) {
        e.op = ExprOp::Index;
        switch (peek_kind()) {
          case Tk::L0: e.bit = 0; break;
          case Tk::L1: e.bit = 1; break;
          case Tk::L2: e.bit = 2; break;
          case Tk::L3: e.bit = 3; break;
          default: fail({Tk::L0, Tk::L1, Tk::L2, Tk::L3});
        }
        ++pos_;
        expect(Tk::RBrack);
      }
      ExprId id = add(e);
      pending_.push_back({id, {name, tok}});
      return id;
    }
    fail({Tk::LParen, Tk::L0, Tk::L1, Tk::Ident, Tk::Tilde});
  }

  // ---- statements ----
  StmtId add(Stmt s) {
    ast_.stmts.push_back(std::move(s));
    return static_cast<StmtId>(ast_.stmts.size() - 1);
  }

  StmtId parse_stmt() {
    if (accept(Tk::Begin)) {
      Stmt s;
      s.op = StmtOp::Block;
      while (!accept(Tk::End)) {
        if (!at(Tk::If) && !at(Tk::Begin) && !at(Tk::Ident))
          fail({Tk::Ident, Tk::If, Tk::Begin, Tk::End});
        s.body.push_back(parse_stmt());
      }
      return add(std::move(s));
    }
    if (accept(Tk::If)) {
      expect(Tk::LParen);
      Stmt s;
      s.op = StmtOp::If;
      s.expr = parse_expr();
      expect(Tk::RParen);
      s.then_branch = parse_stmt();
      if (accept(Tk::Else)) s.else_branch = parse_stmt();
      return add(std::move(s));
    }
    if (at(Tk::Ident)) {
      std::size_t tok = pos_;
      std::string name = vocab_.spelling(toks_[pos_++]);
      expect(Tk::NbAssign);
      Stmt s;
      s.op = StmtOp::NbAssign;
      s.expr = parse_expr();
      expect(Tk::Semi);
      StmtId id = add(std::move(s));
      pending_targets_.push_back({id, {name, tok}});
      return id;
    }
    fail({Tk::Ident, Tk::If, Tk::Begin});
  }

  void parse_assign() {
    ++pos_;
    std::size_t tok = pos_;
    std::string name = vocab_.spelling(expect(Tk::Ident));
    expect(Tk::Eq);
    ExprId e = parse_expr();
    expect(Tk::Semi);
    pending_assigns_.push_back({e, {name, tok}});
  }

  void parse_always() {
    ++pos_;
    expect(Tk::At);
    expect(Tk::LParen);
    Edge edge;
    if (accept(Tk::Posedge)) edge = Edge::Posedge;
    else if (accept(Tk::Negedge)) edge = Edge::Negedge;
    else fail({Tk::Posedge, Tk::Negedge});
    std::size_t tok = pos_;
    std::string clk = vocab_.spelling(expect(Tk::Ident));
    expect(Tk::RParen);
    StmtId body = parse_stmt();
    pending_always_.push_back({edge, body, {clk, tok}});
  }

  // ---- semantic passes ----
  SignalId resolve(const PendingRef& r) const {
    auto id = ast_.find(r.name);
    if (!id) throw SemanticError(SemanticKind::Undeclared, "'" + r.name + "' at token " + std::to_string(r.token));
    return *id;
  }

  const Signal& sig(SignalId id) const { return ast_.signals[static_cast<std::size_t>(id)]; }

  void check_interface() const {
    bool has_in = false, has_out = false;
    for (const auto& p : ast_.interface.ports) {
      has_in |= p.direction == Direction::Input;
      has_out |= p.direction == Direction::Output;
    }
    if (!has_in || !has_out)
      throw SemanticError(SemanticKind::BadInterface, "module needs at least one input and one output");
  }

  void resolve_pending() {
    for (auto& [id, ref] : pending_) {
      Expr& e = ast_.exprs[static_cast<std::size_t>(id)];
      e.signal = resolve(ref);
    }
    for (auto& [edge, body, ref] : pending_always_) {
      SignalId clk = resolve(ref);
      Signal& s = ast_.signals[static_cast<std::size_t>(clk)];
      if (s.kind != SignalKind::Input || s.width != 1)
        throw SemanticError(SemanticKind::IllegalTarget, "clock '" + s.name + "' must be a 1-bit input");
      s.is_clock = true;
      ast_.always_blocks.push_back({edge, clk, body});
    }
    for (auto& [id, ref] : pending_targets_) {
      ast_.stmts[static_cast<std::size_t>(id)].target = resolve(ref);
    }
    for (auto& [expr, ref] : pending_assigns_) {
      ast_.assigns.push_back({resolve(ref), expr});
    }
    // Widths need resolved signals, so they are computed last.
    for (std::size_t i = 0; i < ast_.exprs.size(); ++i) infer_width(static_cast<ExprId>(i));
    for (const auto& s : ast_.stmts) {
      if (s.op == StmtOp::NbAssign) {
        const Signal& t = sig(s.target);
        if (!t.is_reg) throw SemanticError(SemanticKind::IllegalTarget, "'" + t.name + "' is not a reg");
        if (t.width != width(s.expr))
          throw SemanticError(SemanticKind::WidthMismatch, "assignment to '" + t.name + "'");
      } else if (s.op == StmtOp::If && width(s.expr) != 1) {
        throw SemanticError(SemanticKind::WidthMismatch, "if condition must be 1 bit");
      }
    }
    for (const auto& a : ast_.assigns) {
      const Signal& t = sig(a.target);
      if (t.kind == SignalKind::Input || t.is_reg)
        throw SemanticError(SemanticKind::IllegalTarget, "cannot assign '" + t.name + "'");
      if (t.width != width(a.expr))
        throw SemanticError(SemanticKind::WidthMismatch, "assign to '" + t.name + "'");
    }
    for (const auto& e : ast_.exprs) {
      if ((e.op == ExprOp::Ref || e.op == ExprOp::Index) && sig(e.signal).is_clock)
        throw SemanticError(SemanticKind::IllegalTarget, "clock '" + sig(e.signal).name + "' read as data");
    }
  }

  int width(ExprId id) const { return ast_.exprs[static_cast<std::size_t>(id)].width; }

  // Children always have smaller ids than parents, so one forward pass suffices.
  void infer_width(ExprId id) {
    Expr& e = ast_.exprs[static_cast<std::size_t>(id)];
    switch (e.op) {
      case ExprOp::Const: e.width = 1; break;
      case ExprOp::Ref: e.width = sig(e.signal).width; break;
      case ExprOp::Index:
        if (e.bit >= sig(e.signal).width)
          throw SemanticError(SemanticKind::WidthMismatch, "bit index out of range on '" + sig(e.signal).name + "'");
        e.width = 1;
        break;
      case ExprOp::Not: e.width = width(e.lhs); break;
      case ExprOp::And:
      case ExprOp::Or:
      case ExprOp::Xor:
        if (width(e.lhs) != width(e.rhs))
          throw SemanticError(SemanticKind::WidthMismatch, "bitwise operands differ in width");
        e.width = width(e.lhs);
        break;
      case ExprOp::Eq:
        if (width(e.lhs) != width(e.rhs))
          throw SemanticError(SemanticKind::WidthMismatch, "== operands differ in width");
        e.width = 1;
        break;
      case ExprOp::Cond:
        if (width(e.lhs) != 1) throw SemanticError(SemanticKind::WidthMismatch, "?: condition must be 1 bit");
        if (width(e.rhs) != width(e.alt))
          throw SemanticError(SemanticKind::WidthMismatch, "?: branches differ in width");
        e.width = width(e.rhs);
        break;
    }
  }

  void check_drivers() {
    std::vector<int> drivers(ast_.signals.size(), 0);
    for (const auto& a : ast_.assigns) ++drivers[static_cast<std::size_t>(a.target)];
    for (const auto& blk : ast_.always_blocks) {
      std::vector<SignalId> targets;
      ast_.collect_targets(blk.body, targets);
      for (SignalId t : targets) ++drivers[static_cast<std::size_t>(t)];
    }
    for (std::size_t i = 0; i < ast_.signals.size(); ++i) {
      const Signal& s = ast_.signals[i];
      if (s.kind == SignalKind::Input) continue;
      if (drivers[i] > 1) throw SemanticError(SemanticKind::MultiDriver, "'" + s.name + "' has multiple drivers");
      if (drivers[i] == 0) throw SemanticError(SemanticKind::Undriven, "'" + s.name + "' is never driven");
    }
  }

  void collect_reads(ExprId id, std::vector<SignalId>& out) const {
    const Expr& e = ast_.exprs[static_cast<std::size_t>(id)];
    if (e.op == ExprOp::Ref || e.op == ExprOp::Index) out.push_back(e.signal);
    for (ExprId c : {e.lhs, e.rhs, e.alt})
      if (c >= 0) collect_reads(c, out);
  }

  // Kahn's algorithm over assign -> assign dependencies; registers and inputs
  // are sources. Ties broken by original assign order.
  void order_assigns() {
    const std::size_t n = ast_.assigns.size();
    std::vector<int> assign_of(ast_.signals.size(), -1);
    for (std::size_t i = 0; i < n; ++i) assign_of[static_cast<std::size_t>(ast_.assigns[i].target)] = static_cast<int>(i);
    std::vector<std::vector<std::size_t>> users(n);
    std::vector<int> indeg(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<SignalId> reads;
      collect_reads(ast_.assigns[i].expr, reads);
      std::sort(reads.begin(), reads.end());
      reads.erase(std::unique(reads.begin(), reads.end()), reads.end());
      for (SignalId r : reads) {
        int src = assign_of[static_cast<std::size_t>(r)];
        if (src < 0) continue;
        users[static_cast<std::size_t>(src)].push_back(i);
        ++indeg[i];
      }
    }
    std::vector<ContinuousAssign> sorted;
    std::vector<bool> done(n, false);
    while (sorted.size() < n) {
      std::size_t pick = n;
      for (std::size_t i = 0; i < n; ++i)
        if (!done[i] && indeg[i] == 0) {
          pick = i;
          break;
        }
      if (pick == n) throw SemanticError(SemanticKind::CombCycle, "combinational loop through assigns");
      done[pick] = true;
      sorted.push_back(ast_.assigns[pick]);
      for (std::size_t u : users[pick]) --indeg[u];
    }
    ast_.assigns = std::move(sorted);
  }

  std::span<const TokenId> toks_;
  const Vocab& vocab_;
  std::size_t pos_ = 0;
  ModuleAst ast_;
  std::vector<std::pair<ExprId, PendingRef>> pending_;
  std::vector<std::pair<StmtId, PendingRef>> pending_targets_;
  std::vector<std::pair<ExprId, PendingRef>> pending_assigns_;
  struct PendingAlways {
    Edge edge;
    StmtId body;
    PendingRef clock;
  };
  std::vector<PendingAlways> pending_always_;
};

}  // namespace detail

/// Parses and checks one MiniRTL module. Throws SyntaxError (first offending
/// token index; index == size means unexpected end) or SemanticError.
inline ModuleAst parse(std::span<const TokenId> tokens, const Vocab& vocab = Vocab::minirtl()) {
  return detail::Parser(tokens, vocab).run();
}

inline ModuleAst parse_text(std::string_view text, const Vocab& vocab = Vocab::minirtl()) {
  auto toks = tokenize(text, vocab);
  return parse(toks, vocab);
}

}  // namespace rtlgate::minirtl
