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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers as arguments to run a
// subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rtlgate/analysis.hpp"
#include "rtlgate/cli.hpp"
#include "rtlgate/minirtl.hpp"
#include "rtlgate/policy.hpp"
#include "rtlgate/reward.hpp"
#include "rtlgate/rlcore.hpp"
#include "rtlgate/taskgen.hpp"
#include "support/expr_oracle.hpp"

namespace {

using namespace rtlgate;
using policy::FeatureShape;
using policy::Gradient;
using policy::PolicyParams;
using policy::TokenId;
using rlcore::Group;
using rlcore::ObjectiveSpec;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("rtlgate_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args, std::string* err = nullptr) {
  std::ostringstream out, e;
  int code = cli::run_command(args, out, e);
  if (err) *err = e.str();
  return code;
}

// ---------------------------------------------------------------------------
// Random policies and batches for the objective checks

PolicyParams jitter(PolicyParams p, Rng& rng, double scale) {
  for (auto& w : p.W) w += rng.uniform(-scale, scale);
  for (auto& b : p.b) b += rng.uniform(-scale, scale);
  return p;
}

PolicyParams random_policy(FeatureShape s, Rng& rng, double scale) {
  return jitter(policy::init_params(s, 0, rng.next_u64()), rng, scale);
}

// Every group has exactly one passing rollout, so all groups are mixed.
std::vector<Group> random_batch(const PolicyParams& old, Rng& rng, int G, int ngroups, int max_len) {
  const int V = old.shape.vocab_size;
  std::vector<Group> gs;
  for (int gi = 0; gi < ngroups; ++gi) {
    Group g;
    std::vector<TokenId> prompt(1 + rng.below(4));
    for (auto& t : prompt) t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(V)));
    for (int i = 0; i < G; ++i) {
      g.rollouts.push_back(
          policy::sample_rollout(old, prompt, 1.0, 1 + rng.below(static_cast<std::uint64_t>(max_len)), 0, rng));
      g.rewards.push_back(rng.uniform());
      g.passes.push_back(i == 0);
    }
    g.advantages = rlcore::group_advantages(g.rewards);
    gs.push_back(std::move(g));
  }
  return gs;
}

Gradient assembled(std::span<const Group> gs, const PolicyParams& theta, const PolicyParams& ref,
                   const ObjectiveSpec& spec) {
  auto c = rlcore::per_token_coefficients(gs, rlcore::batch_logprobs(gs, theta, spec.temperature), spec);
  Gradient g(theta);
  rlcore::accumulate_objective_grad(gs, c, theta, ref, spec, g);
  return g;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240601);
  const double h = 1e-5;
  double worst = 0.0;
  int coords = 0, bad = 0;
  for (int inst = 0; inst < 60; ++inst) {
    const int V = 3 + static_cast<int>(rng.below(28));
    const int k = 1 + static_cast<int>(rng.below(3));
    auto old = random_policy(FeatureShape{V, k, 8, 2, inst % 2 ? 0 : 5}, rng, 1.0);
    auto theta = jitter(old, rng, 0.3);
    auto ref = jitter(old, rng, 0.5);
    auto gs = random_batch(old, rng, 2 + static_cast<int>(rng.below(2)), 1 + static_cast<int>(rng.below(2)), 12);
    ObjectiveSpec spec;
    spec.gate = rlcore::GateMode::Mask;
    spec.rho = rng.uniform(0.0, 0.95);
    spec.beta = rng.uniform(0.01, 0.5);
    spec.temperature = rng.uniform(0.7, 1.3);
    auto g = assembled(gs, theta, ref, spec);
    std::vector<std::size_t> rows;
    for (const auto& grp : gs)
      for (const auto& r : grp.rollouts)
        for (std::size_t t = 0; t < r.size(); ++t)
          for (std::size_t f : policy::features(theta.shape, {r.prompt, std::span<const TokenId>(r.response).first(t)}))
            rows.push_back(f);
    for (int n = 0; n < 25; ++n) {
      const std::size_t i = rng.coin(0.8) ? rows[rng.below(rows.size())] * theta.V() + rng.below(theta.V())
                                          : theta.W.size() + rng.below(theta.V());
      auto plus = theta, minus = theta;
      plus.param(i) += h;
      minus.param(i) -= h;
      const double fd =
          (rlcore::objective_value(gs, plus, ref, spec) - rlcore::objective_value(gs, minus, ref, spec)) / (2 * h);
      const double an = g.at(i);
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, rel);
      bad += rel > 1e-4;
      ++coords;
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 60,
          "60 instances, " + std::to_string(coords) + " coordinates, worst rel err " + fmt("%.2e", worst) + ", " +
              fmt("%.1f", secs) + "s"};
}

Outcome reduction_identities() {
  const auto t0 = std::chrono::steady_clock::now();
  // (a) step-for-step training equality on a small supervised fixture
  taskgen::CorpusConfig cc;
  cc.counts[{taskgen::Kind::Combinational, taskgen::Difficulty::Easy}] = 16;
  cc.seed = 3;
  auto corpus = taskgen::build_corpus(cc);
  auto train = corpus.split(taskgen::Split::Train);
  const auto& vocab = minirtl::Vocab::minirtl();
  auto data = cli::sft_examples(train);
  auto sft = policy::init_params(FeatureShape{static_cast<int>(vocab.size()), 4, 8, 48, 4096}, vocab.hash(), 0);
  policy::SftSchedule s;
  s.peak_lr = 2.0;
  s.total_steps = 150;
  s.batch_size = 4;
  policy::train_sft(sft, data, s);
  auto run = [&](rlcore::Variant v, PolicyParams& p) {
    rlcore::RlConfig c;
    c.variant = v;
    c.rho = 0.0;
    c.steps = 12;
    c.batch_size = 3;
    c.group_size = 4;
    c.lr = 2.0;
    c.max_len = 48;
    c.seed = 5;
    auto r = rlcore::train_rl(c, p, train);
    std::ostringstream os;
    rlcore::write_metrics_csv(os, r.metrics);
    int retained = 0;
    for (const auto& m : r.metrics) retained += m.retained_groups;
    return std::make_pair(os.str(), retained);
  };
  auto a = sft, b = sft;
  auto [ca, retained] = run(rlcore::Variant::Earl, a);
  auto [cb, unused] = run(rlcore::Variant::Dapo, b);
  (void)unused;
  const bool train_equal = ca == cb && a.W == b.W && a.b == b.b && retained > 0;
  // (b) GRPO objective equals symmetric ungated DAPO on all-mixed batches
  Rng rng(77);
  bool grpo_equal = true;
  for (int inst = 0; inst < 30; ++inst) {
    auto old = random_policy(FeatureShape{10, 2, 8, 3}, rng, 1.0);
    auto theta = jitter(old, rng, 0.3);
    auto ref = jitter(old, rng, 0.3);
    auto gs = random_batch(old, rng, 3, 2, 12);
    rlcore::RlConfig c;
    c.beta = 0.05;
    c.variant = rlcore::Variant::Dapo;
    c.gate = rlcore::GateMode::None;
    c.eps_high = c.eps_low;
    auto dapo = rlcore::objective_spec(c);
    c.variant = rlcore::Variant::Grpo;
    auto grpo = rlcore::objective_spec(c);
    grpo_equal &= rlcore::objective_value(gs, theta, ref, grpo) == rlcore::objective_value(gs, theta, ref, dapo);
    grpo_equal &= assembled(gs, theta, ref, grpo).W == assembled(gs, theta, ref, dapo).W;
  }
  const double secs = seconds_since(t0);
  return {train_equal && grpo_equal && secs < 60,
          std::string("rho=0 vs dapo metrics ") + (ca == cb ? "identical" : "DIFFER") + " over 12 steps (" +
              std::to_string(retained) + " groups), grpo vs symmetric dapo " + (grpo_equal ? "identical" : "DIFFER") +
              " on 30 batches, " + fmt("%.1f", secs) + "s"};
}

Outcome entropy_math() {
  bool ok = true;
  std::string why;
  auto fail = [&](const std::string& w) {
    if (ok) why = w;
    ok = false;
  };
  if (policy::token_entropy(std::vector<double>{0, 0, 1, 0}) != 0.0) fail("one-hot entropy");
  if (std::abs(policy::token_entropy(std::vector<double>(4, 0.25)) - std::log(4.0)) > 1e-12) fail("uniform entropy");
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t V = 2 + rng.below(40);
    std::vector<double> z(V);
    for (auto& x : z) x = rng.uniform(-8, 8);
    double prev = -1.0;
    for (double T : {0.1, 0.3, 0.5, 1.0, 1.5, 2.0, 4.0, 10.0}) {
      const double h = policy::token_entropy(policy::tempered_softmax(z, T));
      if (h < 0.0 || h > std::log(static_cast<double>(V)) + 1e-12) fail("entropy outside [0, ln V]");
      if (h < prev - 1e-12) fail("entropy decreased with temperature");
      prev = h;
    }
  }
  int trials = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = 1 + rng.below(300);
    std::vector<double> e(T);
    for (std::size_t t = 0; t < T; ++t) e[t] = static_cast<double>(t) * 0.01 + rng.uniform(0, 0.001);
    rng.shuffle(e);
    const double rho = rng.uniform(0.001, 0.999);
    auto m = rlcore::entropy_mask(e, rlcore::entropy_threshold(e, rho));
    const auto sel = static_cast<std::size_t>(std::accumulate(m.begin(), m.end(), 0.0));
    const auto want = T - static_cast<std::size_t>(std::ceil(rho * static_cast<double>(T) - 1e-9)) + 1;
    if (sel != want) fail("mask cardinality at T=" + std::to_string(T));
    ++trials;
  }
  return {ok, ok ? "bounds, one-hot, uniform, 1000 temperature sweeps, " + std::to_string(trials) + " mask cardinalities"
                 : why};
}

Outcome pass_at_k_check() {
  auto C = [](int a, int b) {
    if (b < 0 || a < b) return 0.0;
    double r = 1;
    for (int i = 1; i <= b; ++i) r = r * (a - b + i) / i;
    return r;
  };
  bool exact = std::abs(analysis::pass_at_k(5, 2, 1) - 0.4) < 1e-15 && analysis::pass_at_k(5, 2, 5) == 1.0;
  for (int c = 0; c <= 5; ++c)
    for (int k : {1, 5}) exact &= std::abs(analysis::pass_at_k(5, c, k) - (1.0 - C(5 - c, k) / C(5, k))) < 1e-12;
  Rng rng(5);
  double worst = 0.0;
  std::vector<int> items{0, 1, 2, 3, 4};
  for (int c = 0; c <= 5; ++c)
    for (int k : {1, 5}) {
      int hit = 0;
      for (int trial = 0; trial < 100000; ++trial) {
        rng.shuffle(items);
        bool any = false;
        for (int j = 0; j < k; ++j) any |= items[static_cast<std::size_t>(j)] < c;
        hit += any;
      }
      worst = std::max(worst, std::abs(hit / 100000.0 - analysis::pass_at_k(5, c, k)));
    }
  return {exact && worst <= 0.01, std::string("closed form ") + (exact ? "exact" : "MISMATCH") +
                                      ", Monte Carlo max deviation " + fmt("%.4f", worst) + " over 1e5 draws"};
}

Outcome reward_cascade() {
  auto corpus = taskgen::build_corpus(taskgen::CorpusConfig::defaults());
  auto train = corpus.split(taskgen::Split::Train);
  int self_ok = 0;
  for (std::size_t i = 0; i < 500 && i < train.size(); ++i)
    self_ok += reward::score_text(train[i]->reference_text, *train[i]).reward == 1.0;
  const auto& vocab = minirtl::Vocab::minirtl();
  Rng rng(99);
  int violations = 0, parse_fail = 0, near = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto& task = corpus.tasks[rng.below(corpus.tasks.size())];
    auto toks = minirtl::tokenize(task.reference_text, vocab);
    const int edits = static_cast<int>(rng.below(4));
    for (int e = 0; e < edits; ++e) {
      const auto pos = rng.below(toks.size());
      const auto tok = static_cast<TokenId>(minirtl::id_of(minirtl::Tk::KFsm) + 1 +
                                             static_cast<TokenId>(rng.below(vocab.size() - 12)));
      switch (rng.below(3)) {
        case 0: toks[pos] = tok; break;
        case 1: toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(pos), tok); break;
        default:
          if (toks.size() > 1) toks.erase(toks.begin() + static_cast<std::ptrdiff_t>(pos));
      }
    }
    auto rb = reward::score(toks, task);
    bool ok = rb.reward >= 0.0 && rb.reward <= 1.0 && (rb.reward == 1.0) == rb.functional_pass;
    if (!rb.syntax_ok) {
      ok &= rb.reward == 0.0;
      ++parse_fail;
    }
    if (rb.stage == reward::Stage::Functional) ok &= rb.syntax_ok && rb.interface_score == 1.0;
    if (rb.stage == reward::Stage::Functional && rb.functional_fraction < 1.0) {
      ok &= rb.reward < 1.0 && rb.reward >= 0.5;
      ++near;
    }
    if (rb.stage == reward::Stage::Interface) ok &= rb.reward < 0.5 && rb.reward >= 0.2;
    violations += !ok;
  }
  const bool pass = self_ok == 500 && violations == 0 && parse_fail > 0 && near > 0;
  return {pass, "self-score " + std::to_string(self_ok) + "/500, 10000 candidates (" + std::to_string(parse_fail) +
                    " parse-fail, " + std::to_string(near) + " near-miss), " + std::to_string(violations) +
                    " violations"};
}

Outcome equivalence_oracle() {
  using testing::OExpr;
  Rng rng(2718);
  const std::vector<std::string> names = {"a", "b", "c", "d", "e", "sel", "rst", "z"};
  int pairs_ok = 0, mut_ok = 0, noops = 0;
  for (int n = 0; n < 200; ++n) {
    const int nv = 1 + static_cast<int>(rng.below(8));
    std::vector<std::string> vars(names.begin(), names.begin() + nv);
    OExpr x = testing::random_oexpr(rng, nv, 4), y = testing::random_oexpr(rng, nv, 4);
    auto tx = testing::oexpr_table(x, nv), ty = testing::oexpr_table(y, nv);
    int same = 0;
    for (std::size_t r = 0; r < tx.size(); ++r) same += tx[r] == ty[r];
    auto ref = minirtl::parse_text(testing::oexpr_module(x, vars));
    auto eq = minirtl::equivalence_fraction(minirtl::parse_text(testing::oexpr_module(y, vars)), ref,
                                            minirtl::build_vectors(ref, 0));
    pairs_ok += eq.fraction == static_cast<double>(same) / static_cast<double>(tx.size());
    OExpr m = x;
    int leaf = static_cast<int>(rng.below(static_cast<std::uint64_t>(x.count_leaves())));
    m.mutate_leaf(leaf, rng, nv);
    const bool noop = testing::oexpr_table(m, nv) == tx;
    noops += noop;
    auto em = minirtl::equivalence_fraction(minirtl::parse_text(testing::oexpr_module(m, vars)), ref,
                                            minirtl::build_vectors(ref, 0));
    mut_ok += em.is_equivalent == noop;
  }
  return {pairs_ok == 200 && mut_ok == 200, std::to_string(pairs_ok) + "/200 fractions exact, " +
                                                std::to_string(mut_ok) + "/200 mutations classified (" +
                                                std::to_string(noops) + " semantic no-ops)"};
}

Outcome end_to_end_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = cli::load_config(RTLGATE_SOURCE_DIR "/configs/comb.json");
  auto corpus = cli::make_corpus(cfg);
  auto sft = cli::run_sft(cfg, corpus);
  const double base = cli::run_eval(cfg, sft, corpus).pass(1);
  std::string detail = "suite of " + std::to_string(cli::select(corpus, cfg.eval.tasks).size()) +
                       " tasks, sft pass@1 " + fmt("%.3f", base) + ", rl pass@1";
  double sum = 0.0;
  for (std::uint64_t rep = 1; rep <= 3; ++rep) {
    auto p = sft;
    cli::run_rl(cfg, p, corpus, rep);
    const double v = cli::run_eval(cfg, p, corpus).pass(1);
    detail += " " + fmt("%.3f", v);
    sum += v;
  }
  const double gain = sum / 3.0 - base;
  const double secs = seconds_since(t0);
  detail += ", mean gain " + fmt("%+.3f", gain) + " (need +0.150), " + fmt("%.0f", secs) + "s";
  return {gain >= 0.15 && secs <= 900, detail};
}

// Shared by the entropy-skew and ablation checks.
const fs::path& default_run() {
  static const fs::path dir = [] {
    auto d = scratch("default");
    std::string err;
    for (const char* cmd : {"gen-data", "sft"})
      if (cli({cmd, "--config", RTLGATE_SOURCE_DIR "/configs/default.json", "--out", d.string()}, &err) != 0)
        throw std::runtime_error(std::string(cmd) + " failed: " + err);
    return d;
  }();
  return dir;
}

Outcome entropy_skew() {
  const auto& dir = default_run();
  std::string err;
  if (cli({"analyze", "--config", RTLGATE_SOURCE_DIR "/configs/default.json", "--out", dir.string()}, &err) != 0)
    return {false, "analyze failed: " + err};
  auto j = nlohmann::json::parse(slurp(dir / "entropy_summary.json"));
  const double mean = j["mean"], median = j["median"];
  const bool classes = !j["control_process_mean"].is_null() && !j["terminator_mean"].is_null();
  const double fork = classes ? j["control_process_mean"].get<double>() : 0.0;
  const double term = classes ? j["terminator_mean"].get<double>() : 0.0;
  return {median < mean && classes && fork > term,
          std::to_string(j["tokens"].get<int>()) + " heldout tokens, median " + fmt("%.4f", median) + " vs mean " +
              fmt("%.4f", mean) + ", control+process " + fmt("%.4f", fork) + " vs terminator " + fmt("%.4f", term)};
}

Outcome ablation_grid() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& dir = default_run();
  auto cfg = nlohmann::json::parse(slurp(RTLGATE_SOURCE_DIR "/configs/default.json"));
  cfg["ablation"]["steps"] = 100;
  const auto cfg_path = dir / "ablate.json";
  std::ofstream(cfg_path) << cfg.dump(2);
  std::string err;
  if (cli({"ablate", "--config", cfg_path.string(), "--out", dir.string()}, &err) != 0)
    return {false, "ablate failed: " + err};
  std::istringstream csv(slurp(dir / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  bool ok = line == analysis::kAblationHeader;
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    ok &= std::count(line.begin(), line.end(), ',') == 4 && line.find("nan") == std::string::npos;
  }
  ok &= rows == 6;
  std::istringstream cells(slurp(dir / "ablation_cells.csv"));
  std::getline(cells, line);
  double worst = 0.0;
  std::string fractions;
  int gated_rows = 0;
  while (std::getline(cells, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    const double rho = std::stod(f[0]), gf = std::stod(f.back());
    fractions += " " + fmt("%.3f", gf);
    if (rho > 0) {
      worst = std::max(worst, std::abs(gf - (1.0 - rho)));
      ++gated_rows;
    }
  }
  ok &= gated_rows == 5 && worst <= 0.05;
  return {ok, std::to_string(rows) + " rows, gated fractions" + fractions + ", worst |f-(1-rho)| " +
                  fmt("%.3f", worst) + ", " + fmt("%.0f", seconds_since(t0)) + "s"};
}

Outcome determinism() {
  auto d = scratch("determinism");
  auto cfg = nlohmann::json::parse(slurp(RTLGATE_SOURCE_DIR "/configs/default.json"));
  cfg["sft"]["total_steps"] = 300;
  cfg["rl"]["steps"] = 30;
  std::ofstream(d / "c.json") << cfg.dump(2);
  std::string err;
  for (const char* run : {"a", "b"})
    for (const char* cmd : {"gen-data", "sft", "train", "eval"}) {
      std::vector<std::string> args{cmd, "--config", (d / "c.json").string(), "--out", (d / run).string()};
      if (std::string(run) == "b") args.insert(args.end(), {"--workers", "2"});
      if (cli(args, &err) != 0) return {false, std::string(cmd) + " failed: " + err};
    }
  std::string detail;
  bool ok = true;
  for (const char* f : {"corpus.json", "sft.ckpt", "rl.ckpt", "metrics.csv", "eval.csv"}) {
    const bool same = slurp(d / "a" / f) == slurp(d / "b" / f) && !slurp(d / "a" / f).empty();
    ok &= same;
    detail += std::string(detail.empty() ? "" : ", ") + f + (same ? " identical" : " DIFFER");
  }
  return {ok, detail + " (workers 1 vs 2)"};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {1, "gradient correctness", gradient_correctness},
      {2, "reduction identities", reduction_identities},
      {3, "entropy math", entropy_math},
      {4, "pass@k", pass_at_k_check},
      {5, "reward cascade", reward_cascade},
      {6, "equivalence oracle", equivalence_oracle},
      {7, "end-to-end learning", end_to_end_learning},
      {8, "entropy skew", entropy_skew},
      {9, "ablation grid", ablation_grid},
      {10, "determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2d  %-22s %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
