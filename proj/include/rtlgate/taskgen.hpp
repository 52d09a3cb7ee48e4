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
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rtlgate/minirtl.hpp"
#include "rtlgate/rng.hpp"

namespace rtlgate::taskgen {

using minirtl::ModuleAst;
using minirtl::Stimulus;
using minirtl::Tk;
using minirtl::TokenId;
using minirtl::Vocab;

enum class Kind { Combinational, Register, Counter, Mux, FsmLite };
enum class Difficulty { Easy, Medium, Hard };
enum class Split { Train, Heldout };

inline constexpr Kind kAllKinds[] = {Kind::Combinational, Kind::Register, Kind::Counter,
                                     Kind::Mux, Kind::FsmLite};
inline constexpr Difficulty kAllDifficulties[] = {Difficulty::Easy, Difficulty::Medium,
                                                  Difficulty::Hard};

inline const char* to_string(Kind k) {
  switch (k) {
    case Kind::Combinational: return "combinational";
    case Kind::Register: return "register";
    case Kind::Counter: return "counter";
    case Kind::Mux: return "mux";
    case Kind::FsmLite: return "fsm-lite";
  }
  return "?";
}
inline const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Medium: return "medium";
    case Difficulty::Hard: return "hard";
  }
  return "?";
}
inline const char* to_string(Split s) { return s == Split::Train ? "train" : "eval-heldout"; }

inline Kind kind_from_string(const std::string& s) {
  for (Kind k : kAllKinds)
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown task kind: " + s);
}
inline Difficulty difficulty_from_string(const std::string& s) {
  for (Difficulty d : kAllDifficulties)
    if (s == to_string(d)) return d;
  throw std::invalid_argument("unknown difficulty: " + s);
}
inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "eval-heldout") return Split::Heldout;
  throw std::invalid_argument("unknown split: " + s);
}

/// Specification-code-testbench triple. `descriptor` holds the behavior
/// tokens of the prompt (truth-table digest or kind tag plus parameters).
struct Task {
  std::string id;
  Kind kind = Kind::Combinational;
  Difficulty difficulty = Difficulty::Easy;
  Split split = Split::Train;
  std::string reference_text;
  ModuleAst reference;
  Stimulus vectors;
  std::vector<TokenId> descriptor;
  std::vector<TokenId> prompt_tokens;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMaxPromptTokens = 48;
inline constexpr int kMaxRedraws = 100;
inline constexpr std::size_t kDigestRows = 16;

// ---------------------------------------------------------------------------
// Prompt encoding

/// BOS SPEC <name> IN <inputs> OUT <outputs> <descriptor> ENDSPEC, where a
/// port name is followed by its width literal when wider than one bit.
inline std::vector<TokenId> encode_prompt(const Task& task, const Vocab& vocab = Vocab::minirtl()) {
  using minirtl::id_of;
  std::vector<TokenId> p = {id_of(Tk::Bos), id_of(Tk::Spec)};
  const auto& itf = task.reference.interface;
  p.push_back(vocab.id(itf.module_name));
  auto emit_ports = [&](minirtl::Direction dir) {
    for (const auto& port : itf.ports) {
      if (port.direction != dir) continue;
      p.push_back(vocab.id(port.name));
      if (port.width > 1) p.push_back(vocab.id(std::to_string(port.width)));
    }
  };
  p.push_back(id_of(Tk::In));
  emit_ports(minirtl::Direction::Input);
  p.push_back(id_of(Tk::Out));
  emit_ports(minirtl::Direction::Output);
  p.insert(p.end(), task.descriptor.begin(), task.descriptor.end());
  p.push_back(id_of(Tk::EndSpec));
  return p;
}

/// Truth table of every output bit over all input bits (first input is the
/// most significant bit), one digit per row, at most kDigestRows rows.
inline std::vector<TokenId> truth_table_digest(const ModuleAst& ast, const Stimulus& exhaustive) {
  using minirtl::id_of;
  const auto trace = minirtl::simulate(ast, exhaustive);
  std::vector<TokenId> d = {id_of(Tk::Tt)};
  for (std::size_t o = 0; o < trace.outputs.size(); ++o)
    for (int bit = 0; bit < trace.widths[o]; ++bit)
      for (std::size_t r = 0; r < std::min(trace.num_cycles(), kDigestRows); ++r)
        d.push_back(id_of(((trace.at(r, o) >> bit) & 1u) ? Tk::L1 : Tk::L0));
  return d;
}

// ---------------------------------------------------------------------------
// Random expressions

namespace detail {

struct GExpr {
  char op = 'v';  // 'v' leaf, 'k' const, '~', '&', '|', '^'
  std::string name;
  std::vector<GExpr> kids;
};

inline bool is_binary(const GExpr& e) { return e.op == '&' || e.op == '|' || e.op == '^'; }

inline std::string render(const GExpr& e) {
  switch (e.op) {
    case 'v':
    case 'k': return e.name;
    case '~':
      return e.kids[0].op == 'v' ? "~ " + e.kids[0].name : "~ ( " + render(e.kids[0]) + " )";
    default: {
      auto side = [](const GExpr& k) { return is_binary(k) ? "( " + render(k) + " )" : render(k); };
      return side(e.kids[0]) + " " + std::string(1, e.op) + " " + side(e.kids[1]);
    }
  }
}

inline GExpr leaf(const std::string& n) { return GExpr{'v', n, {}}; }

inline GExpr random_expr(Rng& rng, const std::vector<std::string>& vars, int depth, bool top = true) {
  if (depth <= 0 || (!top && rng.coin(0.3))) return leaf(rng.pick(vars));
  if (rng.coin(0.2)) {
    GExpr inner = random_expr(rng, vars, depth - 1, false);
    if (inner.op == '~') return inner.kids[0];  // no double negation
    return GExpr{'~', "", {inner}};
  }
  static const char ops[] = {'&', '|', '^'};
  GExpr e{ops[rng.below(3)], "", {}};
  e.kids.push_back(random_expr(rng, vars, depth - 1, false));
  e.kids.push_back(random_expr(rng, vars, depth - 1, false));
  // x op x is either x or a constant; swap in a different leaf
  if (e.kids[0].op == 'v' && e.kids[1].op == 'v' && e.kids[0].name == e.kids[1].name && vars.size() > 1) {
    while (e.kids[1].name == e.kids[0].name) e.kids[1] = leaf(rng.pick(vars));
  }
  return e;
}

inline std::string port_list(const std::vector<std::string>& decls) {
  std::string s = "( ";
  for (std::size_t i = 0; i < decls.size(); ++i) s += (i ? " , " : "") + decls[i];
  return s + " )";
}

inline std::string range(int width) {
  return width > 1 ? "[ " + std::to_string(width - 1) + " : 0 ] " : "";
}

inline TokenId digit(bool b) { return minirtl::id_of(b ? Tk::L1 : Tk::L0); }

inline const char* edge_word(bool pos) { return pos ? "posedge" : "negedge"; }

/// Truth table over (inputs..., state) of a 1-bit expression, evaluated by
/// parsing a throwaway combinational module.
inline std::vector<bool> expr_table(const std::string& expr, const std::vector<std::string>& vars) {
  std::vector<std::string> decls;
  for (const auto& v : vars) decls.push_back("input " + v);
  decls.push_back("output y");
  const std::string text = "module m0 " + port_list(decls) + " ; assign y = " + expr + " ; endmodule";
  auto ast = minirtl::parse_text(text);
  auto vec = minirtl::build_vectors(ast, 0);
  auto tr = minirtl::simulate(ast, vec);
  std::vector<bool> t;
  for (std::size_t r = 0; r < tr.num_cycles(); ++r) t.push_back(tr.at(r, 0) != 0);
  return t;
}

inline bool is_constant(const std::vector<bool>& t) {
  return std::all_of(t.begin(), t.end(), [&](bool b) { return b == t.front(); });
}

/// True when the table depends on variable `var` (index into the var list).
inline bool depends_on(const std::vector<bool>& t, std::size_t nvars, std::size_t var) {
  const std::size_t bit = nvars - 1 - var;
  for (std::size_t r = 0; r < t.size(); ++r)
    if (t[r] != t[r ^ (std::size_t{1} << bit)]) return true;
  return false;
}

/// Shortest rendering of every function of n <= 3 variables, found by a
/// fixed-point search over truth tables. Cost is the token count of render();
/// ties go to the lexicographically smaller text.
struct CanonicalForm {
  int cost = 1 << 20;
  int depth = 0;
  std::string text;
  bool binary = false;
};

inline bool better(int cost, const std::string& text, const CanonicalForm& cur) {
  return cost < cur.cost || (cost == cur.cost && text < cur.text);
}

inline const std::vector<CanonicalForm>& canonical_forms(std::size_t nvars) {
  static std::vector<CanonicalForm> cache[4];
  auto& top = cache[nvars];
  if (!top.empty()) return top;
  const std::size_t rows = std::size_t{1} << nvars, nfun = std::size_t{1} << rows;
  top.assign(nfun, {});
  std::vector<CanonicalForm> operand(nfun);  // best form when wrapped as a binary operand
  static const char* names[] = {"a", "b", "c", "d"};
  for (std::size_t v = 0; v < nvars; ++v) {
    std::size_t mask = 0;
    for (std::size_t r = 0; r < rows; ++r)
      if ((r >> (nvars - 1 - v)) & 1) mask |= std::size_t{1} << r;
    top[mask] = operand[mask] = {1, 0, names[v], false};
  }
  for (bool changed = true; changed;) {
    changed = false;
    auto offer = [&](std::size_t f, int cost, int depth, std::string text, bool binary) {
      if (better(cost, text, top[f])) {
        top[f] = {cost, depth, text, binary};
        changed = true;
      }
      const int as_operand = cost + (binary ? 2 : 0);
      std::string wrapped = binary ? "( " + text + " )" : text;
      if (better(as_operand, wrapped, operand[f])) {
        operand[f] = {as_operand, depth, wrapped, binary};
        changed = true;
      }
    };
    const std::size_t all = nfun - 1;
    for (std::size_t g = 0; g < nfun; ++g) {
      if (top[g].text.empty()) continue;
      const auto& tg = top[g];
      if (tg.depth == 0) offer(~g & all, 2, 1, "~ " + tg.text, false);
      else if (tg.binary) offer(~g & all, tg.cost + 3, tg.depth + 1, "~ ( " + tg.text + " )", false);
      for (std::size_t h = 0; h < nfun; ++h) {
        if (operand[h].text.empty() || g == h) continue;
        const auto& og = operand[g];
        const auto& oh = operand[h];
        const int cost = og.cost + oh.cost + 1, depth = std::max(og.depth, oh.depth) + 1;
        offer(g & h, cost, depth, og.text + " & " + oh.text, true);
        offer(g | h, cost, depth, og.text + " | " + oh.text, true);
        offer(g ^ h, cost, depth, og.text + " ^ " + oh.text, true);
      }
    }
  }
  return top;
}

/// Canonical expression for a truth table (row 0 first, first variable as the
/// most significant row bit) over the variables a, b, c.
inline const CanonicalForm& canonical_expr(const std::vector<bool>& table) {
  std::size_t nvars = 0;
  while ((std::size_t{1} << nvars) < table.size()) ++nvars;
  std::size_t f = 0;
  for (std::size_t r = 0; r < table.size(); ++r)
    if (table[r]) f |= std::size_t{1} << r;
  return canonical_forms(nvars).at(f);
}

struct Draft {
  std::string text;
  std::vector<TokenId> descriptor;  // empty => truth-table digest computed later
};

inline Draft draft_combinational(Rng& rng, Difficulty diff, const std::string& name) {
  const int n_in = diff == Difficulty::Easy ? 2 : diff == Difficulty::Medium ? 3 : 4;
  const int depth = diff == Difficulty::Easy ? 2 : 4;
  static const std::vector<std::string> pool = {"a", "b", "c", "d"};
  std::vector<std::string> vars(pool.begin(), pool.begin() + n_in);
  std::vector<std::string> decls;
  for (const auto& v : vars) decls.push_back("input " + v);
  decls.push_back("output y");
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    std::string body;
    std::string expr;
    if (diff == Difficulty::Hard) {
      // two-level form through an intermediate wire
      std::string inner = render(random_expr(rng, vars, 2));
      std::vector<std::string> outer_vars = vars;
      outer_vars.push_back("t0");
      GExpr outer = random_expr(rng, outer_vars, 2);
      std::string outer_s = render(outer);
      if (outer_s.find("t0") == std::string::npos)
        outer_s = "t0 " + std::string(1, "&|^"[rng.below(3)]) + " " + (is_binary(outer) ? "( " + outer_s + " )" : outer_s);
      body = "wire t0 ; assign t0 = " + inner + " ; assign y = " + outer_s + " ;";
      // flatten for the constant check
      std::string flat = outer_s;
      for (std::size_t pos; (pos = flat.find("t0")) != std::string::npos;)
        flat.replace(pos, 2, "( " + inner + " )");
      expr = flat;
    } else {
      expr = render(random_expr(rng, vars, depth));
      const auto table = expr_table(expr, vars);
      if (is_constant(table)) continue;
      // one reference text per behavior
      const auto& canon = canonical_expr(table);
      if (canon.depth <= depth) expr = canon.text;
      body = "assign y = " + expr + " ;";
    }
    if (is_constant(expr_table(expr, vars))) continue;
    return {"module " + name + " " + port_list(decls) + " ; " + body + " endmodule", {}};
  }
  throw GenerationError("combinational generator kept drawing constants");
}

inline Draft draft_mux(Rng& rng, Difficulty diff, const std::string& name) {
  std::vector<std::string> data;
  if (diff == Difficulty::Easy) data = {"a"};
  else if (diff == Difficulty::Medium) data = {"a", "b"};
  else data = {"a", "b", "c"};
  std::vector<std::string> vars = {"sel"};
  vars.insert(vars.end(), data.begin(), data.end());
  std::vector<std::string> decls;
  for (const auto& v : vars) decls.push_back("input " + v);
  decls.push_back("output y");
  auto arm = [&](Rng& r) -> std::string {
    if (diff == Difficulty::Easy) {
      static const char* leaves[] = {"a", "~ a", "0", "1"};
      return leaves[r.below(4)];
    }
    if (diff == Difficulty::Medium) {
      std::string v = r.pick(data);
      return r.coin(0.3) ? "~ " + v : v;
    }
    GExpr e = random_expr(r, data, 1);
    return is_binary(e) ? "( " + render(e) + " )" : render(e);
  };
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    std::string x = arm(rng), y = arm(rng);
    if (x == y) continue;
    std::string expr = "sel ? " + x + " : " + y;
    auto t = expr_table(expr, vars);
    if (is_constant(t) || !depends_on(t, vars.size(), 0)) continue;
    return {"module " + name + " " + port_list(decls) + " ; assign y = " + expr + " ; endmodule", {}};
  }
  throw GenerationError("mux generator kept drawing degenerate arms");
}

inline Draft draft_register(Rng& rng, Difficulty diff, const std::string& name) {
  using minirtl::id_of;
  const bool pos = rng.coin(0.7);
  bool reset = false, enable = false, invert = false;
  int width = 1;
  if (diff == Difficulty::Medium) {
    reset = true;
    invert = rng.coin(0.3);
  } else if (diff == Difficulty::Hard) {
    if (rng.coin(0.5)) {
      reset = true;
      enable = true;
      invert = rng.coin(0.3);
    } else {
      width = rng.range(2, 4);
    }
  }
  std::vector<std::string> decls = {"input clk"};
  if (reset) decls.push_back("input rst");
  if (enable) decls.push_back("input e");
  decls.push_back("input " + range(width) + "d");
  decls.push_back("output reg " + range(width) + "q");
  std::string next = std::string(invert ? "~ d" : "d");
  std::string stmt = "q <= " + next + " ;";
  if (enable) stmt = "if ( e ) " + stmt;
  if (reset) stmt = "if ( rst ) q <= 0 ; else " + stmt;
  Draft d;
  d.text = "module " + name + " " + port_list(decls) + " ; always @ ( " + edge_word(pos) + " clk ) " + stmt + " endmodule";
  d.descriptor = {id_of(Tk::KReg), id_of(pos ? Tk::Posedge : Tk::Negedge), digit(reset), digit(enable), digit(invert)};
  return d;
}

inline Draft draft_counter(Rng& rng, Difficulty diff, const std::string& name) {
  using minirtl::id_of;
  const bool pos = rng.coin(0.7);
  const bool up = rng.coin(0.6);
  const bool reset = diff != Difficulty::Easy;
  const bool enable = diff == Difficulty::Hard;
  std::vector<std::string> decls = {"input clk"};
  if (reset) decls.push_back("input rst");
  if (enable) decls.push_back("input e");
  decls.push_back("output reg q0");
  decls.push_back("output reg q1");
  std::string count = std::string("begin q0 <= ~ q0 ; q1 <= ") + (up ? "q1 ^ q0" : "q1 ^ ~ q0") + " ; end";
  std::string body = count;
  if (enable) body = "if ( e ) " + body;
  if (reset) body = "if ( rst ) begin q0 <= 0 ; q1 <= 0 ; end else " + body;
  Draft d;
  d.text = "module " + name + " " + port_list(decls) + " ; always @ ( " + edge_word(pos) + " clk ) " + body + " endmodule";
  d.descriptor = {id_of(Tk::KCnt), id_of(pos ? Tk::Posedge : Tk::Negedge), digit(reset), digit(enable), digit(up)};
  return d;
}

/// One state bit t0; next state and output are random functions of the
/// data inputs and t0. Both tables go into the descriptor.
inline Draft draft_fsm(Rng& rng, Difficulty diff, const std::string& name) {
  using minirtl::id_of;
  const bool pos = rng.coin(0.7);
  const bool reset = diff != Difficulty::Easy;
  std::vector<std::string> data = {"a"};
  if (diff == Difficulty::Hard) data.push_back("b");
  std::vector<std::string> vars = data;
  vars.push_back("t0");
  std::vector<std::string> decls = {"input clk"};
  if (reset) decls.push_back("input rst");
  for (const auto& v : data) decls.push_back("input " + v);
  decls.push_back("output y");
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    std::string next = render(random_expr(rng, vars, 2));
    std::string out = render(random_expr(rng, vars, 2));
    auto tn = expr_table(next, vars);
    auto to = expr_table(out, vars);
    if (is_constant(tn) || is_constant(to)) continue;
    if (!depends_on(to, vars.size(), vars.size() - 1)) continue;
    bool driven_by_input = false;
    for (std::size_t v = 0; v + 1 < vars.size(); ++v) driven_by_input |= depends_on(tn, vars.size(), v);
    if (!driven_by_input) continue;
    std::string stmt = "t0 <= " + next + " ;";
    if (reset) stmt = "if ( rst ) t0 <= 0 ; else " + stmt;
    Draft d;
    d.text = "module " + name + " " + port_list(decls) + " ; reg t0 ; always @ ( " + edge_word(pos) +
             " clk ) " + stmt + " assign y = " + out + " ; endmodule";
    d.descriptor = {id_of(Tk::KFsm), id_of(pos ? Tk::Posedge : Tk::Negedge), digit(reset), id_of(Tk::Ns)};
    for (bool b : tn) d.descriptor.push_back(digit(b));
    d.descriptor.push_back(id_of(Tk::Tt));
    for (bool b : to) d.descriptor.push_back(digit(b));
    return d;
  }
  throw GenerationError("fsm generator kept drawing degenerate machines");
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Three-stage filter: the reference parses, its vectors are well formed and
/// simulate, and it is exactly self-equivalent. Also checks the prompt shape.
inline bool validate_task(const Task& task) {
  try {
    auto ast = minirtl::parse_text(task.reference_text);
    if (!minirtl::stimulus_matches(ast, task.vectors)) return false;
    if (task.vectors.cycles.empty()) return false;
    (void)minirtl::simulate(ast, task.vectors);
    auto eq = minirtl::equivalence_fraction(ast, ast, task.vectors);
    if (eq.fraction != 1.0) return false;
    const auto& p = task.prompt_tokens;
    if (p.size() < 2 || p.front() != minirtl::id_of(Tk::Bos) || p.back() != minirtl::id_of(Tk::EndSpec))
      return false;
    if (p.size() > kMaxPromptTokens) return false;
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

/// Draws one task. Degenerate (constant-output) draws are redrawn up to
/// kMaxRedraws times inside the kind templates.
inline Task generate_task(std::uint64_t seed, Kind kind, Difficulty difficulty) {
  Rng rng(seed);
  const auto& names = minirtl::module_name_pool();
  const std::string name = rng.pick(names);
  detail::Draft draft;
  switch (kind) {
    case Kind::Combinational: draft = detail::draft_combinational(rng, difficulty, name); break;
    case Kind::Mux: draft = detail::draft_mux(rng, difficulty, name); break;
    case Kind::Register: draft = detail::draft_register(rng, difficulty, name); break;
    case Kind::Counter: draft = detail::draft_counter(rng, difficulty, name); break;
    case Kind::FsmLite: draft = detail::draft_fsm(rng, difficulty, name); break;
  }
  Task t;
  t.kind = kind;
  t.difficulty = difficulty;
  t.reference_text = draft.text;
  t.reference = minirtl::parse_text(draft.text);
  t.vectors = minirtl::build_vectors(t.reference, mix_seed(seed, 0x7665637473ULL));
  t.descriptor = draft.descriptor.empty() ? truth_table_digest(t.reference, t.vectors) : draft.descriptor;
  t.prompt_tokens = encode_prompt(t);
  return t;
}

// ---------------------------------------------------------------------------
// Corpus

struct CorpusConfig {
  std::map<std::pair<Kind, Difficulty>, int> counts;
  double heldout_fraction = 0.2;
  std::uint64_t seed = 1;

  static CorpusConfig defaults() {
    CorpusConfig c;
    c.counts[{Kind::Combinational, Difficulty::Easy}] = 125;
    c.counts[{Kind::Combinational, Difficulty::Medium}] = 125;
    c.counts[{Kind::Combinational, Difficulty::Hard}] = 75;
    for (Kind k : {Kind::Mux, Kind::Register, Kind::Counter, Kind::FsmLite})
      for (Difficulty d : kAllDifficulties) c.counts[{k, d}] = 25;
    return c;
  }
};

struct Corpus {
  std::vector<Task> tasks;

  std::vector<const Task*> split(Split s) const {
    std::vector<const Task*> r;
    for (const auto& t : tasks)
      if (t.split == s) r.push_back(&t);
    return r;
  }
  const Task* find(const std::string& id) const {
    for (const auto& t : tasks)
      if (t.id == id) return &t;
    return nullptr;
  }
};

inline std::string task_id(Kind k, Difficulty d, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return std::string(to_string(k)) + "-" + to_string(d) + "-" + buf;
}

/// Cells are generated in (kind, difficulty) enum order; within a cell task i
/// uses seed mix_seed(seed, cell, i) and the last round(f * count) tasks are
/// held out.
inline Corpus build_corpus(const CorpusConfig& cfg) {
  if (cfg.counts.empty()) throw ConfigError("corpus config has no counts");
  for (const auto& [cell, n] : cfg.counts)
    if (n < 1)
      throw ConfigError(std::string("count for ") + to_string(cell.first) + "/" + to_string(cell.second) +
                        " must be >= 1");
  if (!(cfg.heldout_fraction >= 0.0 && cfg.heldout_fraction < 1.0))
    throw ConfigError("heldout_fraction must be in [0, 1)");
  Corpus corpus;
  for (const auto& [cell, n] : cfg.counts) {
    const auto cell_index = static_cast<std::uint64_t>(cell.first) * 3 + static_cast<std::uint64_t>(cell.second);
    const int heldout = static_cast<int>(std::lround(cfg.heldout_fraction * n));
    for (int i = 0; i < n; ++i) {
      Task t = generate_task(mix_seed(cfg.seed, cell_index, static_cast<std::uint64_t>(i)), cell.first, cell.second);
      t.id = task_id(cell.first, cell.second, i);
      t.split = i >= n - heldout ? Split::Heldout : Split::Train;
      if (!validate_task(t)) throw GenerationError("generated task failed validation: " + t.id);
      corpus.tasks.push_back(std::move(t));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// JSON persistence

inline nlohmann::json to_json(const Stimulus& s) {
  return {{"inputs", s.inputs},
          {"widths", s.widths},
          {"cycles", s.cycles},
          {"reset_prefix", s.reset_prefix},
          {"exhaustive", s.exhaustive}};
}

inline Stimulus stimulus_from_json(const nlohmann::json& j) {
  Stimulus s;
  s.inputs = j.at("inputs").get<std::vector<std::string>>();
  s.widths = j.at("widths").get<std::vector<int>>();
  s.cycles = j.at("cycles").get<std::vector<std::vector<std::uint32_t>>>();
  s.reset_prefix = j.at("reset_prefix").get<int>();
  s.exhaustive = j.at("exhaustive").get<bool>();
  return s;
}

inline nlohmann::json to_json(const Corpus& c) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : c.tasks) {
    arr.push_back({{"id", t.id},
                   {"prompt_tokens", t.prompt_tokens},
                   {"reference_text", t.reference_text},
                   {"vectors", to_json(t.vectors)},
                   {"kind", to_string(t.kind)},
                   {"difficulty", to_string(t.difficulty)},
                   {"split", to_string(t.split)}});
  }
  return arr;
}

/// Re-parses every reference; the descriptor is the prompt slice after the
/// output port list. Throws on any task that fails validation.
inline Corpus corpus_from_json(const nlohmann::json& arr) {
  Corpus c;
  std::set<std::string> ids;
  for (const auto& j : arr) {
    Task t;
    t.id = j.at("id").get<std::string>();
    if (!ids.insert(t.id).second) throw std::invalid_argument("duplicate task id " + t.id);
    t.prompt_tokens = j.at("prompt_tokens").get<std::vector<TokenId>>();
    t.reference_text = j.at("reference_text").get<std::string>();
    t.vectors = stimulus_from_json(j.at("vectors"));
    t.kind = kind_from_string(j.at("kind").get<std::string>());
    t.difficulty = difficulty_from_string(j.at("difficulty").get<std::string>());
    t.split = split_from_string(j.at("split").get<std::string>());
    t.reference = minirtl::parse_text(t.reference_text);
    const auto& vocab = Vocab::minirtl();
    std::size_t start = 0;
    for (std::size_t i = 0; i < t.prompt_tokens.size(); ++i) {
      const Tk k = vocab.kind(t.prompt_tokens[i]);
      if (k == Tk::Tt || k == Tk::KReg || k == Tk::KCnt || k == Tk::KFsm) {
        start = i;
        break;
      }
    }
    if (start == 0 || t.prompt_tokens.back() != minirtl::id_of(Tk::EndSpec))
      throw std::invalid_argument("malformed prompt for task " + t.id);
    t.descriptor.assign(t.prompt_tokens.begin() + static_cast<std::ptrdiff_t>(start), t.prompt_tokens.end() - 1);
    if (encode_prompt(t) != t.prompt_tokens) throw std::invalid_argument("prompt does not match reference for " + t.id);
    if (!validate_task(t)) throw std::invalid_argument("task failed validation: " + t.id);
    c.tasks.push_back(std::move(t));
  }
  return c;
}

inline void save_corpus(const Corpus& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << to_json(c).dump(1) << '\n';
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  return corpus_from_json(nlohmann::json::parse(f));
}

}  // namespace rtlgate::taskgen
