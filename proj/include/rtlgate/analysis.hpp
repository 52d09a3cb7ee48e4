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
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtlgate/minirtl.hpp"
#include "rtlgate/policy.hpp"
#include "rtlgate/reward.hpp"
#include "rtlgate/rlcore.hpp"
#include "rtlgate/taskgen.hpp"

namespace rtlgate::analysis {

using minirtl::Tk;
using minirtl::TokenId;
using minirtl::Vocab;
using policy::DomainError;
using policy::Rollout;

// ---------------------------------------------------------------------------
// Token classes

enum class TokenClass {
  ProcessSensitivity,
  ControlFlow,
  BindingConnection,
  ModuleHead,
  StructuralTerminator,
  Identifier,
  Literal,
  Other,
};
inline constexpr std::size_t kNumTokenClasses = 8;

inline const char* to_string(TokenClass c) {
  static const char* names[] = {"process-sensitivity", "control-flow", "binding-connection", "module-head",
                                "structural-terminator", "identifier", "literal", "other"};
  return names[static_cast<std::size_t>(c)];
}

class TokenClassMap {
 public:
  explicit TokenClassMap(std::vector<TokenClass> classes) : classes_(std::move(classes)) {}

  /// always @ posedge negedge -> process; if else ? : -> control;
  /// assign [ ] = <= -> binding; module -> head;
  /// begin end endmodule input output -> terminator.
  static TokenClassMap minirtl(const Vocab& vocab = Vocab::minirtl()) {
    std::vector<TokenClass> c(vocab.size(), TokenClass::Other);
    auto set = [&](std::initializer_list<Tk> ts, TokenClass k) {
      for (Tk t : ts) c[static_cast<std::size_t>(minirtl::id_of(t))] = k;
    };
    set({Tk::Always, Tk::At, Tk::Posedge, Tk::Negedge}, TokenClass::ProcessSensitivity);
    set({Tk::If, Tk::Else, Tk::Question, Tk::Colon}, TokenClass::ControlFlow);
    set({Tk::Assign, Tk::LBrack, Tk::RBrack, Tk::Eq, Tk::NbAssign}, TokenClass::BindingConnection);
    set({Tk::Module}, TokenClass::ModuleHead);
    set({Tk::Begin, Tk::End, Tk::Endmodule, Tk::Input, Tk::Output}, TokenClass::StructuralTerminator);
    set({Tk::L0, Tk::L1, Tk::L2, Tk::L3, Tk::L4}, TokenClass::Literal);
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      const Tk k = vocab.kind(static_cast<TokenId>(id));
      if (k == Tk::Ident || k == Tk::ModName) c[id] = TokenClass::Identifier;
    }
    return TokenClassMap(std::move(c));
  }

  TokenClass operator[](TokenId id) const { return classes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return classes_.size(); }

 private:
  std::vector<TokenClass> classes_;
};

// ---------------------------------------------------------------------------
// Entropy statistics

inline std::vector<double> all_entropies(std::span<const Rollout> rollouts) {
  std::vector<double> h;
  for (const auto& r : rollouts) h.insert(h.end(), r.entropies.begin(), r.entropies.end());
  return h;
}

/// Edges 0, w, 2w, ... closed off at ln V.
inline std::vector<double> default_edges(std::size_t vocab_size, double width = 0.05) {
  if (vocab_size < 2 || !(width > 0)) throw DomainError("bad histogram parameters");
  const double top = std::log(static_cast<double>(vocab_size));
  std::vector<double> e;
  for (int i = 0; static_cast<double>(i) * width < top; ++i) e.push_back(static_cast<double>(i) * width);
  e.push_back(top);
  return e;
}

/// Left-closed bins, last bin closed. Values outside [front, back] throw.
inline std::vector<std::size_t> entropy_histogram(std::span<const double> values, std::span<const double> edges) {
  if (edges.size() < 2) throw DomainError("histogram needs at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw DomainError("histogram edges must be strictly increasing");
  if (edges.front() > 0.0) throw DomainError("histogram edges must start at or below 0");
  std::vector<std::size_t> counts(edges.size() - 1, 0);
  for (double x : values) {
    if (x < edges.front() || x > edges.back() + 1e-12) throw DomainError("entropy outside histogram range");
    auto it = std::upper_bound(edges.begin(), edges.end(), x);
    auto bin = static_cast<std::size_t>(it - edges.begin());
    bin = bin == 0 ? 0 : std::min(bin - 1, counts.size() - 1);
    ++counts[bin];
  }
  return counts;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m));
  return 0.5 * (lo + hi);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct EntropySummary {
  std::size_t tokens = 0;
  double mean = 0.0;
  double median = 0.0;
  bool right_skewed = false;  // median < mean
  double fraction_below = 0.0;
  double threshold = 0.15;
};

inline EntropySummary summarize(std::span<const double> h, double threshold = 0.15) {
  EntropySummary s;
  s.tokens = h.size();
  s.threshold = threshold;
  if (h.empty()) return s;
  s.mean = analysis::mean(h);
  s.median = analysis::median({h.begin(), h.end()});
  s.right_skewed = s.median < s.mean;
  s.fraction_below =
      static_cast<double>(std::count_if(h.begin(), h.end(), [&](double x) { return x < threshold; })) /
      static_cast<double>(h.size());
  return s;
}

struct ClassStats {
  TokenClass cls = TokenClass::Other;
  std::size_t count = 0;
  std::optional<double> mean;
  std::optional<double> median;
};

inline std::vector<ClassStats> token_class_stats(std::span<const Rollout> rollouts, const TokenClassMap& map) {
  if (rollouts.empty()) throw std::invalid_argument("token_class_stats needs rollouts");
  std::array<std::vector<double>, kNumTokenClasses> by;
  for (const auto& r : rollouts)
    for (std::size_t t = 0; t < r.size(); ++t) by[static_cast<std::size_t>(map[r.response[t]])].push_back(r.entropies[t]);
  std::vector<ClassStats> out;
  for (std::size_t c = 0; c < kNumTokenClasses; ++c) {
    ClassStats s;
    s.cls = static_cast<TokenClass>(c);
    s.count = by[c].size();
    if (s.count) {
      s.mean = mean(by[c]);
      s.median = median(by[c]);
    }
    out.push_back(s);
  }
  return out;
}

/// Token-weighted mean entropy over a set of classes; nullopt with no tokens.
inline std::optional<double> class_group_mean(std::span<const Rollout> rollouts, const TokenClassMap& map,
                                              std::initializer_list<TokenClass> classes) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : rollouts)
    for (std::size_t t = 0; t < r.size(); ++t)
      if (std::find(classes.begin(), classes.end(), map[r.response[t]]) != classes.end()) {
        s += r.entropies[t];
        ++n;
      }
  if (!n) return std::nullopt;
  return s / static_cast<double>(n);
}

struct TokenEntropy {
  TokenId token = 0;
  double mean = 0.0;
  std::size_t count = 0;
};

struct TopTokens {
  std::vector<TokenEntropy> highest;
  std::vector<TokenEntropy> lowest;
};

inline TopTokens top_tokens_by_entropy(std::span<const Rollout> rollouts, std::size_t k, std::size_t min_freq = 10) {
  if (k < 1 || min_freq < 1) throw DomainError("top_tokens_by_entropy needs k >= 1 and f >= 1");
  std::map<TokenId, std::pair<double, std::size_t>> acc;
  for (const auto& r : rollouts)
    for (std::size_t t = 0; t < r.size(); ++t) {
      auto& a = acc[r.response[t]];
      a.first += r.entropies[t];
      ++a.second;
    }
  std::vector<TokenEntropy> rows;
  for (const auto& [tok, a] : acc)
    if (a.second >= min_freq) rows.push_back({tok, a.first / static_cast<double>(a.second), a.second});
  TopTokens out;
  out.highest = rows;
  std::stable_sort(out.highest.begin(), out.highest.end(), [](const auto& a, const auto& b) {
    return a.mean != b.mean ? a.mean > b.mean : a.token < b.token;
  });
  out.lowest = rows;
  std::stable_sort(out.lowest.begin(), out.lowest.end(), [](const auto& a, const auto& b) {
    return a.mean != b.mean ? a.mean < b.mean : a.token < b.token;
  });
  if (out.highest.size() > k) out.highest.resize(k);
  if (out.lowest.size() > k) out.lowest.resize(k);
  return out;
}

// ---------------------------------------------------------------------------
// Report writers

inline std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline void write_histogram_csv(std::ostream& os, std::span<const double> edges, std::span<const std::size_t> counts) {
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < counts.size(); ++i) os << fmt(edges[i]) << ',' << fmt(edges[i + 1]) << ',' << counts[i] << '\n';
}

inline void write_histogram_svg(std::ostream& os, std::span<const double> edges, std::span<const std::size_t> counts) {
  const double W = 640, H = 320, pad = 40;
  const std::size_t peak = counts.empty() ? 1 : std::max<std::size_t>(1, *std::max_element(counts.begin(), counts.end()));
  const double x0 = edges.front(), x1 = edges.back();
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double xa = pad + (edges[i] - x0) / (x1 - x0) * (W - 2 * pad);
    const double xb = pad + (edges[i + 1] - x0) / (x1 - x0) * (W - 2 * pad);
    const double h = static_cast<double>(counts[i]) / static_cast<double>(peak) * (H - 2 * pad);
    os << "<rect x=\"" << fmt(xa) << "\" y=\"" << fmt(H - pad - h) << "\" width=\"" << fmt(std::max(xb - xa - 1, 0.5))
       << "\" height=\"" << fmt(h) << "\" fill=\"steelblue\"><title>[" << fmt(edges[i]) << ", " << fmt(edges[i + 1])
       << "): " << counts[i] << "</title></rect>\n";
  }
  os << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad << "\" y2=\"" << H - pad
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << pad << "\" y=\"" << H - 10 << "\" font-size=\"12\">0</text>\n";
  os << "<text x=\"" << W - pad - 30 << "\" y=\"" << H - 10 << "\" font-size=\"12\">" << fmt(x1) << " nats</text>\n";
  os << "<text x=\"" << pad << "\" y=\"" << pad - 10 << "\" font-size=\"12\">token entropy, peak bin " << peak
     << "</text>\n</svg>\n";
}

inline void write_class_stats_csv(std::ostream& os, std::span<const ClassStats> stats) {
  os << "class,count,mean,median\n";
  for (const auto& s : stats)
    os << to_string(s.cls) << ',' << s.count << ',' << (s.mean ? fmt(*s.mean) : "") << ','
       << (s.median ? fmt(*s.median) : "") << '\n';
}

inline void write_top_tokens_csv(std::ostream& os, const TopTokens& t, const Vocab& vocab = Vocab::minirtl()) {
  os << "table,rank,token,mean_entropy,count\n";
  auto rows = [&](const char* name, const std::vector<TokenEntropy>& v) {
    for (std::size_t i = 0; i < v.size(); ++i)
      os << name << ',' << i + 1 << ',' << csv_field(vocab.spelling(v[i].token)) << ',' << fmt(v[i].mean) << ','
         << v[i].count << '\n';
  };
  rows("highest", t.highest);
  rows("lowest", t.lowest);
}

struct HeatmapRecord {
  std::size_t position = 0;
  std::string token;
  double entropy = 0.0;
};

inline std::vector<HeatmapRecord> heatmap_export(const Rollout& r, const Vocab& vocab = Vocab::minirtl()) {
  std::vector<HeatmapRecord> out;
  for (std::size_t t = 0; t < r.size(); ++t) out.push_back({t, vocab.spelling(r.response[t]), r.entropies[t]});
  return out;
}

inline void write_heatmap_csv(std::ostream& os, std::span<const HeatmapRecord> recs) {
  os << "position,token,entropy\n";
  for (const auto& r : recs) os << r.position << ',' << csv_field(r.token) << ',' << fmt(r.entropy) << '\n';
}

/// Linear white-to-red scale over [0, max_entropy].
inline std::string heat_color(double h, double max_entropy) {
  const double u = std::clamp(max_entropy > 0 ? h / max_entropy : 0.0, 0.0, 1.0);
  const int g = static_cast<int>(std::lround(255.0 * (1.0 - u)));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#ff%02x%02x", g, g);
  return buf;
}

inline void write_heatmap_svg(std::ostream& os, std::span<const HeatmapRecord> recs, double max_entropy) {
  const double cw = 9.0, lh = 22.0, wrap = 900.0;
  double x = 10, y = 10;
  std::string body;
  for (const auto& r : recs) {
    const double w = cw * static_cast<double>(r.token.size()) + 8;
    if (x + w > wrap) {
      x = 10;
      y += lh;
    }
    body += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(w) + "\" height=\"" + fmt(lh - 4) +
            "\" fill=\"" + heat_color(r.entropy, max_entropy) + "\"><title>" + fmt(r.entropy) + "</title></rect>";
    body += "<text x=\"" + fmt(x + 4) + "\" y=\"" + fmt(y + 13) + "\" font-family=\"monospace\" font-size=\"13\">" +
            xml_escape(r.token) + "</text>\n";
    x += w + 2;
  }
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << wrap + 20 << "\" height=\"" << fmt(y + lh + 10)
     << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << body << "</svg>\n";
}

// ---------------------------------------------------------------------------
// pass@k and evaluation

/// 1 - C(n-c, k) / C(n, k) as 1 - prod_{i=n-c+1}^{n} (1 - k/i).
inline double pass_at_k(int n, int c, int k) {
  if (n < 1 || c < 0 || c > n || k < 1 || k > n) throw DomainError("pass_at_k needs 0 <= c <= n and 1 <= k <= n");
  if (n - c < k) return 1.0;
  double prod = 1.0;
  for (int i = n - c + 1; i <= n; ++i) prod *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - prod;
}

struct EvalConfig {
  int n = 5;
  std::vector<int> ks{1, 5};
  double temperature = 1.0;
  int max_len = 256;
  bool greedy = false;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct TaskEval {
  std::string task_id;
  int n = 0;
  int passes = 0;
  int syntax_passes = 0;
  double mean_reward = 0.0;
  std::vector<double> pass_at;    // per k
  std::vector<double> syntax_at;  // per k
  std::vector<Rollout> rollouts;
};

struct EvalReport {
  std::vector<int> ks;
  std::vector<TaskEval> tasks;
  std::vector<double> pass_at;  // unweighted task means
  std::vector<double> syntax_at;
  double mean_reward = 0.0;

  double pass(int k) const { return pass_at.at(index(k)); }
  double syntax(int k) const { return syntax_at.at(index(k)); }
  std::vector<Rollout> all_rollouts() const {
    std::vector<Rollout> r;
    for (const auto& t : tasks) r.insert(r.end(), t.rollouts.begin(), t.rollouts.end());
    return r;
  }

 private:
  std::size_t index(int k) const {
    auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw std::out_of_range("k not evaluated: " + std::to_string(k));
    return static_cast<std::size_t>(it - ks.begin());
  }
};

/// Sample j of task i uses the stream mix_seed(seed, i, j).
inline EvalReport eval_suite(const policy::PolicyParams& p, std::span<const taskgen::Task* const> tasks,
                             const EvalConfig& cfg, const reward::RewardSchedule& sched = {}) {
  if (tasks.empty()) throw std::invalid_argument("eval_suite needs at least one task");
  if (cfg.ks.empty()) throw std::invalid_argument("eval_suite needs at least one k");
  for (int k : cfg.ks)
    if (k < 1 || k > cfg.n) throw DomainError("eval_suite needs 1 <= k <= n");
  EvalReport rep;
  rep.ks = cfg.ks;
  rep.tasks.resize(tasks.size());
  const auto n = static_cast<std::size_t>(cfg.n);
  std::vector<reward::RewardBreakdown> scores(tasks.size() * n);
  for (auto& t : rep.tasks) t.rollouts.resize(n);
  const TokenId eos = minirtl::id_of(Tk::Eos);
  rlcore::parallel_for(tasks.size() * n, cfg.workers, [&](std::size_t idx) {
    const std::size_t i = idx / n, j = idx % n;
    Rng rng(mix_seed(cfg.seed, i, j));
    auto r = policy::sample_rollout(p, tasks[i]->prompt_tokens, cfg.temperature, static_cast<std::size_t>(cfg.max_len),
                                    eos, rng, cfg.greedy);
    scores[idx] = reward::score(r.response, *tasks[i], r.truncated, sched);
    rep.tasks[i].rollouts[j] = std::move(r);
  });
  rep.pass_at.assign(cfg.ks.size(), 0.0);
  rep.syntax_at.assign(cfg.ks.size(), 0.0);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto& te = rep.tasks[i];
    te.task_id = tasks[i]->id;
    te.n = cfg.n;
    double rsum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& s = scores[i * n + j];
      te.passes += reward::is_pass(s);
      te.syntax_passes += s.syntax_ok;
      rsum += s.reward;
    }
    te.mean_reward = rsum / static_cast<double>(n);
    for (std::size_t q = 0; q < cfg.ks.size(); ++q) {
      te.pass_at.push_back(pass_at_k(cfg.n, te.passes, cfg.ks[q]));
      te.syntax_at.push_back(pass_at_k(cfg.n, te.syntax_passes, cfg.ks[q]));
      rep.pass_at[q] += te.pass_at.back();
      rep.syntax_at[q] += te.syntax_at.back();
    }
    rep.mean_reward += te.mean_reward;
  }
  const double m = static_cast<double>(tasks.size());
  for (auto& x : rep.pass_at) x /= m;
  for (auto& x : rep.syntax_at) x /= m;
  rep.mean_reward /= m;
  return rep;
}

inline void write_eval_csv(std::ostream& os, const EvalReport& rep) {
  os << "task_id,n,passes,syntax_passes,mean_reward";
  for (int k : rep.ks) os << ",pass@" << k;
  for (int k : rep.ks) os << ",syn@" << k;
  os << '\n';
  for (const auto& t : rep.tasks) {
    os << csv_field(t.task_id) << ',' << t.n << ',' << t.passes << ',' << t.syntax_passes << ',' << fmt(t.mean_reward);
    for (double x : t.pass_at) os << ',' << fmt(x);
    for (double x : t.syntax_at) os << ',' << fmt(x);
    os << '\n';
  }
  os << "mean,,,," << fmt(rep.mean_reward);
  for (double x : rep.pass_at) os << ',' << fmt(x);
  for (double x : rep.syntax_at) os << ',' << fmt(x);
  os << '\n';
}

// ---------------------------------------------------------------------------
// Threshold ablation

inline const std::vector<double>& default_rho_grid() {
  static const std::vector<double> g{0.0, 0.2, 0.4, 0.6, 0.8, 0.9};
  return g;
}

/// Outcome of one (rho, seed) train + evaluate run.
struct AblationCell {
  double pass1 = 0.0;
  double pass5 = 0.0;
  double syn5 = 0.0;
  double func5 = 0.0;
  double gated_fraction = 0.0;  // mean over training steps with retained groups
};

struct AblationRow {
  double rho = 0.0;
  int seeds_ok = 0;
  int seeds_failed = 0;
  AblationCell mean;  // over successful seeds
  std::vector<std::string> errors;
};

using AblationRunner = std::function<AblationCell(double rho, std::uint64_t seed)>;

/// Rows follow `rhos` order. A throwing cell is recorded and skipped.
inline std::vector<AblationRow> ablation_grid(std::span<const double> rhos, std::span<const std::uint64_t> seeds,
                                              const AblationRunner& run) {
  if (seeds.empty()) throw std::invalid_argument("ablation_grid needs at least one seed");
  std::vector<AblationRow> rows;
  for (double rho : rhos) {
    AblationRow row;
    row.rho = rho;
    for (auto seed : seeds) {
      try {
        auto c = run(rho, seed);
        row.mean.pass1 += c.pass1;
        row.mean.pass5 += c.pass5;
        row.mean.syn5 += c.syn5;
        row.mean.func5 += c.func5;
        row.mean.gated_fraction += c.gated_fraction;
        ++row.seeds_ok;
      } catch (const std::exception& e) {
        ++row.seeds_failed;
        row.errors.push_back(e.what());
      }
    }
    if (row.seeds_ok) {
      const double k = row.seeds_ok;
      row.mean.pass1 /= k;
      row.mean.pass5 /= k;
      row.mean.syn5 /= k;
      row.mean.func5 /= k;
      row.mean.gated_fraction /= k;
    }
    rows.push_back(row);
  }
  return rows;
}

inline constexpr const char* kAblationHeader = "rho,pass@1,pass@5,syn@5,func@5";

/// Cells with no successful seed are written as nan.
inline void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows) {
  os << kAblationHeader << '\n';
  for (const auto& r : rows) {
    auto v = [&](double x) { return r.seeds_ok ? fmt(x) : std::string("nan"); };
    os << fmt(r.rho) << ',' << v(r.mean.pass1) << ',' << v(r.mean.pass5) << ',' << v(r.mean.syn5) << ','
       << v(r.mean.func5) << '\n';
  }
}

}  // namespace rtlgate::analysis
