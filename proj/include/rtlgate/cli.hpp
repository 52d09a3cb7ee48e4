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
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rtlgate/analysis.hpp"
#include "rtlgate/policy.hpp"
#include "rtlgate/reward.hpp"
#include "rtlgate/rlcore.hpp"
#include "rtlgate/rng.hpp"
#include "rtlgate/taskgen.hpp"

namespace rtlgate::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using taskgen::Difficulty;
using taskgen::Kind;
using taskgen::Split;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kSchemaVersion = 1;

// Stage streams derived from the run seed with mix_seed(seed, stream[, i]).
enum Stream : std::uint64_t {
  kCorpusStream = 1,
  kInitStream = 2,
  kSftStream = 3,
  kRlStream = 4,
  kEvalStream = 5,
  kAnalysisStream = 6,
};

/// Empty kinds/difficulties mean "all". per_cell > 0 keeps the first
/// per_cell matching tasks of each (kind, difficulty) cell.
struct TaskFilter {
  Split split = Split::Train;
  std::vector<Kind> kinds;
  std::vector<Difficulty> difficulties;
  int per_cell = 0;

  bool matches(const taskgen::Task& t) const {
    if (t.split != split) return false;
    if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), t.kind) == kinds.end()) return false;
    return difficulties.empty() ||
           std::find(difficulties.begin(), difficulties.end(), t.difficulty) != difficulties.end();
  }
};

inline std::vector<const taskgen::Task*> select(const taskgen::Corpus& c, const TaskFilter& f) {
  std::vector<const taskgen::Task*> out;
  std::map<std::pair<Kind, Difficulty>, int> taken;
  for (const auto& t : c.tasks) {
    if (!f.matches(t)) continue;
    int& n = taken[{t.kind, t.difficulty}];
    if (f.per_cell > 0 && n >= f.per_cell) continue;
    ++n;
    out.push_back(&t);
  }
  return out;
}

struct EvalSettings {
  int n = 5;
  std::vector<int> ks{1, 5};
  double temperature = 1.0;
  int max_len = 96;
  bool greedy = false;
  TaskFilter tasks{Split::Heldout, {}, {}, 0};
};

struct AnalysisSettings {
  int n = 5;
  double temperature = 1.0;
  int max_len = 96;
  double bin_width = 0.05;
  double low_entropy_threshold = 0.15;
  int top_k = 20;
  int min_freq = 10;
  int heatmaps = 3;
  TaskFilter tasks{Split::Heldout, {}, {}, 0};
};

/// pass@1 / pass@5 come from eval.tasks; syn@5 / func@5 from secondary_tasks.
struct AblationSettings {
  std::vector<double> rhos = analysis::default_rho_grid();
  std::vector<std::uint64_t> seeds{1};
  int steps = 0;  // 0 => rl steps
  TaskFilter secondary_tasks{Split::Heldout, {Kind::Register, Kind::Counter, Kind::FsmLite}, {}, 0};
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  std::string out = "runs/default";
  int workers = 1;
  taskgen::CorpusConfig corpus = taskgen::CorpusConfig::defaults();
  policy::FeatureShape policy{static_cast<int>(minirtl::Vocab::minirtl().size()), 4, 8, 48, 16384};
  policy::SftSchedule sft{4.0, 15, 3000, 3, 16, 0};
  TaskFilter sft_tasks;
  rlcore::RlConfig rl = [] {
    rlcore::RlConfig c;
    c.lr = 20.0;
    c.max_len = 96;
    return c;
  }();
  TaskFilter rl_tasks;
  EvalSettings eval;
  reward::RewardSchedule reward;
  AnalysisSettings analysis;
  AblationSettings ablation;

  /// Throws ValidationError naming the offending field.
  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ValidationError(what);
    };
    need(schema_version == kSchemaVersion, "schema_version: expected " + std::to_string(kSchemaVersion));
    need(!out.empty(), "out: must not be empty");
    need(workers >= 1, "workers: must be >= 1");
    need(!corpus.counts.empty(), "corpus.counts: must not be empty");
    for (const auto& [cell, n] : corpus.counts) need(n >= 1, "corpus.counts: every count must be >= 1");
    need(corpus.heldout_fraction >= 0.0 && corpus.heldout_fraction < 1.0, "corpus.heldout_fraction: must be in [0, 1)");
    need(policy.vocab_size == static_cast<int>(minirtl::Vocab::minirtl().size()), "policy: vocab size mismatch");
    need(policy.context >= 1, "policy.context: must be >= 1");
    need(policy.position_buckets >= 1, "policy.position_buckets: must be >= 1");
    need(policy.prompt_window >= 0, "policy.prompt_window: must be >= 0");
    need(policy.cross_buckets >= 0, "policy.cross_buckets: must be >= 0");
    need(std::isfinite(sft.peak_lr) && sft.peak_lr > 0, "sft.peak_lr: must be > 0");
    need(sft.warmup_steps >= 0 && sft.total_steps >= 0, "sft: step counts must be >= 0");
    need(sft.epochs >= 1 && sft.batch_size >= 1, "sft: epochs and batch_size must be >= 1");
    try {
      rl.validate();
    } catch (const rlcore::ConfigError& e) {
      throw ValidationError(std::string("rl: ") + e.what());
    }
    need(eval.n >= 1, "eval.n: must be >= 1");
    need(!eval.ks.empty(), "eval.ks: must not be empty");
    for (int k : eval.ks) need(k >= 1 && k <= eval.n, "eval.ks: every k must satisfy 1 <= k <= n");
    need(eval.temperature > 0, "eval.temperature: must be > 0");
    need(eval.max_len >= 1, "eval.max_len: must be >= 1");
    try {
      reward.validate();
    } catch (const std::invalid_argument& e) {
      throw ValidationError(std::string("reward: ") + e.what());
    }
    need(analysis.n >= 1, "analysis.n: must be >= 1");
    need(analysis.temperature > 0, "analysis.temperature: must be > 0");
    need(analysis.max_len >= 1, "analysis.max_len: must be >= 1");
    need(analysis.bin_width > 0, "analysis.bin_width: must be > 0");
    need(analysis.top_k >= 1 && analysis.min_freq >= 1, "analysis: top_k and min_freq must be >= 1");
    need(analysis.heatmaps >= 0, "analysis.heatmaps: must be >= 0");
    need(!ablation.rhos.empty(), "ablation.rhos: must not be empty");
    for (double r : ablation.rhos) need(r >= 0.0 && r < 1.0, "ablation.rhos: every rho must be in [0, 1)");
    need(!ablation.seeds.empty(), "ablation.seeds: must not be empty");
    need(ablation.steps >= 0, "ablation.steps: must be >= 0");
    for (const auto* f : {&sft_tasks, &rl_tasks, &eval.tasks, &analysis.tasks, &ablation.secondary_tasks})
      need(f->per_cell >= 0, "tasks.per_cell: must be >= 0");
  }

  /// RL settings with the run seed and worker cap applied.
  rlcore::RlConfig rl_config(std::uint64_t replicate) const {
    auto c = rl;
    c.seed = mix_seed(seed, kRlStream, replicate);
    c.workers = workers;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Config JSON

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

/// Reads known keys from one JSON object; finish() rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  template <typename T>
  static T value(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ValidationError(where + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ValidationError(where + ": expected an integer");
      if (std::is_unsigned_v<T> && !v.is_number_unsigned())
        throw ValidationError(where + ": expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ValidationError(where + ": expected a number");
    } else {
      if (!v.is_string()) throw ValidationError(where + ": expected a string");
    }
    return v.get<T>();
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string where = join_path(path_, key);
    if constexpr (requires { typename T::value_type; } && !std::is_same_v<T, std::string>) {
      if (!it->is_array()) throw ValidationError(where + ": expected an array");
      T tmp;
      for (std::size_t i = 0; i < it->size(); ++i)
        tmp.push_back(value<typename T::value_type>((*it)[i], where + "[" + std::to_string(i) + "]"));
      out = std::move(tmp);
    } else {
      out = value<T>(*it, where);
    }
  }

  /// Enum-valued string field parsed by \p parse.
  template <typename T, typename Parse>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    bool present = j_.contains(key);
    read(key, s);
    if (!present) return;
    try {
      out = parse(s);
    } catch (const std::exception&) {
      throw ValidationError(join_path(path_, key) + ": unknown value '" + s + "'");
    }
  }

  template <typename T, typename Parse>
  void read_enum_list(const std::string& key, std::vector<T>& out, Parse parse) {
    std::vector<std::string> names;
    bool present = j_.contains(key);
    read(key, names);
    if (!present) return;
    out.clear();
    for (const auto& s : names) {
      try {
        out.push_back(parse(s));
      } catch (const std::exception&) {
        throw ValidationError(join_path(path_, key) + ": unknown value '" + s + "'");
      }
    }
  }

  std::optional<Section> child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Section(*it, join_path(path_, key));
  }

  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ValidationError("unknown key '" + join_path(path_, k) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_filter(Section& parent, const std::string& key, TaskFilter& f) {
  auto s = parent.child(key);
  if (!s) return;
  s->read_enum("split", f.split, taskgen::split_from_string);
  s->read_enum_list("kinds", f.kinds, taskgen::kind_from_string);
  s->read_enum_list("difficulties", f.difficulties, taskgen::difficulty_from_string);
  s->read("per_cell", f.per_cell);
  s->finish();
}

inline json filter_json(const TaskFilter& f) {
  json kinds = json::array(), diffs = json::array();
  for (auto k : f.kinds) kinds.push_back(taskgen::to_string(k));
  for (auto d : f.difficulties) diffs.push_back(taskgen::to_string(d));
  return {{"split", taskgen::to_string(f.split)}, {"kinds", kinds}, {"difficulties", diffs}, {"per_cell", f.per_cell}};
}

inline std::string cell_key(Kind k, Difficulty d) {
  return std::string(taskgen::to_string(k)) + "/" + taskgen::to_string(d);
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  detail::Section top(j, "");
  if (!j.contains("schema_version")) throw ValidationError("schema_version: missing");
  top.read("schema_version", c.schema_version);
  if (c.schema_version != kSchemaVersion)
    throw ValidationError("schema_version: unsupported version " + std::to_string(c.schema_version));
  top.read("seed", c.seed);
  top.read("out", c.out);
  top.read("workers", c.workers);
  if (auto s = top.child("corpus")) {
    s->read("heldout_fraction", c.corpus.heldout_fraction);
    if (auto counts = s->child("counts")) {
      c.corpus.counts.clear();
      for (const auto& [key, v] : counts->raw().items()) {
        const std::string where = detail::join_path(counts->path(), key);
        const auto slash = key.find('/');
        if (slash == std::string::npos) throw ValidationError(where + ": expected 'kind/difficulty'");
        Kind k;
        Difficulty d;
        try {
          k = taskgen::kind_from_string(key.substr(0, slash));
          d = taskgen::difficulty_from_string(key.substr(slash + 1));
        } catch (const std::exception&) {
          throw ValidationError("unknown key '" + where + "'");
        }
        if (!v.is_number_integer()) throw ValidationError(where + ": expected an integer");
        c.corpus.counts[{k, d}] = v.get<int>();
      }
    }
    s->finish();
  }
  if (auto s = top.child("policy")) {
    s->read("context", c.policy.context);
    s->read("position_buckets", c.policy.position_buckets);
    s->read("prompt_window", c.policy.prompt_window);
    s->read("cross_buckets", c.policy.cross_buckets);
    s->finish();
  }
  if (auto s = top.child("sft")) {
    s->read("peak_lr", c.sft.peak_lr);
    s->read("warmup_steps", c.sft.warmup_steps);
    s->read("total_steps", c.sft.total_steps);
    s->read("epochs", c.sft.epochs);
    s->read("batch_size", c.sft.batch_size);
    detail::read_filter(*s, "tasks", c.sft_tasks);
    s->finish();
  }
  if (auto s = top.child("rl")) {
    s->read_enum("variant", c.rl.variant, rlcore::variant_from_string);
    s->read("group_size", c.rl.group_size);
    s->read("eps_low", c.rl.eps_low);
    s->read("eps_high", c.rl.eps_high);
    s->read("beta", c.rl.beta);
    s->read("lr", c.rl.lr);
    s->read("temperature", c.rl.temperature);
    s->read("max_len", c.rl.max_len);
    s->read("batch_size", c.rl.batch_size);
    s->read("max_resample", c.rl.max_resample);
    s->read("steps", c.rl.steps);
    detail::read_filter(*s, "tasks", c.rl_tasks);
    s->finish();
  }
  if (auto s = top.child("gate")) {
    s->read_enum("mode", c.rl.gate, rlcore::gate_from_string);
    s->read("rho", c.rl.rho);
    s->read("kl_gated", c.rl.kl_gated);
    s->finish();
  }
  if (auto s = top.child("eval")) {
    s->read("n", c.eval.n);
    s->read("ks", c.eval.ks);
    s->read("temperature", c.eval.temperature);
    s->read("max_len", c.eval.max_len);
    s->read("greedy", c.eval.greedy);
    detail::read_filter(*s, "tasks", c.eval.tasks);
    s->finish();
  }
  if (auto s = top.child("reward")) {
    s->read("parse_fail", c.reward.parse_fail);
    s->read("interface_base", c.reward.interface_base);
    s->read("interface_span", c.reward.interface_span);
    s->read("near_miss_base", c.reward.near_miss_base);
    s->read("near_miss_span", c.reward.near_miss_span);
    s->read("pass", c.reward.pass);
    s->finish();
  }
  if (auto s = top.child("analysis")) {
    auto& a = c.analysis;
    s->read("n", a.n);
    s->read("temperature", a.temperature);
    s->read("max_len", a.max_len);
    s->read("bin_width", a.bin_width);
    s->read("low_entropy_threshold", a.low_entropy_threshold);
    s->read("top_k", a.top_k);
    s->read("min_freq", a.min_freq);
    s->read("heatmaps", a.heatmaps);
    detail::read_filter(*s, "tasks", a.tasks);
    s->finish();
  }
  if (auto s = top.child("ablation")) {
    s->read("rhos", c.ablation.rhos);
    s->read("seeds", c.ablation.seeds);
    s->read("steps", c.ablation.steps);
    detail::read_filter(*s, "secondary_tasks", c.ablation.secondary_tasks);
    s->finish();
  }
  top.finish();
  c.validate();
  return c;
}

inline json to_json(const RunConfig& c) {
  json counts = json::object();
  for (const auto& [cell, n] : c.corpus.counts) counts[detail::cell_key(cell.first, cell.second)] = n;
  return {
      {"schema_version", c.schema_version},
      {"seed", c.seed},
      {"out", c.out},
      {"workers", c.workers},
      {"corpus", {{"heldout_fraction", c.corpus.heldout_fraction}, {"counts", counts}}},
      {"policy",
       {{"context", c.policy.context},
        {"position_buckets", c.policy.position_buckets},
        {"prompt_window", c.policy.prompt_window},
        {"cross_buckets", c.policy.cross_buckets}}},
      {"sft",
       {{"peak_lr", c.sft.peak_lr},
        {"warmup_steps", c.sft.warmup_steps},
        {"total_steps", c.sft.total_steps},
        {"epochs", c.sft.epochs},
        {"batch_size", c.sft.batch_size},
        {"tasks", detail::filter_json(c.sft_tasks)}}},
      {"rl",
       {{"variant", rlcore::to_string(c.rl.variant)},
        {"group_size", c.rl.group_size},
        {"eps_low", c.rl.eps_low},
        {"eps_high", c.rl.eps_high},
        {"beta", c.rl.beta},
        {"lr", c.rl.lr},
        {"temperature", c.rl.temperature},
        {"max_len", c.rl.max_len},
        {"batch_size", c.rl.batch_size},
        {"max_resample", c.rl.max_resample},
        {"steps", c.rl.steps},
        {"tasks", detail::filter_json(c.rl_tasks)}}},
      {"gate", {{"mode", rlcore::to_string(c.rl.gate)}, {"rho", c.rl.rho}, {"kl_gated", c.rl.kl_gated}}},
      {"eval",
       {{"n", c.eval.n},
        {"ks", c.eval.ks},
        {"temperature", c.eval.temperature},
        {"max_len", c.eval.max_len},
        {"greedy", c.eval.greedy},
        {"tasks", detail::filter_json(c.eval.tasks)}}},
      {"reward",
       {{"parse_fail", c.reward.parse_fail},
        {"interface_base", c.reward.interface_base},
        {"interface_span", c.reward.interface_span},
        {"near_miss_base", c.reward.near_miss_base},
        {"near_miss_span", c.reward.near_miss_span},
        {"pass", c.reward.pass}}},
      {"analysis",
       {{"n", c.analysis.n},
        {"temperature", c.analysis.temperature},
        {"max_len", c.analysis.max_len},
        {"bin_width", c.analysis.bin_width},
        {"low_entropy_threshold", c.analysis.low_entropy_threshold},
        {"top_k", c.analysis.top_k},
        {"min_freq", c.analysis.min_freq},
        {"heatmaps", c.analysis.heatmaps},
        {"tasks", detail::filter_json(c.analysis.tasks)}}},
      {"ablation",
       {{"rhos", c.ablation.rhos},
        {"seeds", c.ablation.seeds},
        {"steps", c.ablation.steps},
        {"secondary_tasks", detail::filter_json(c.ablation.secondary_tasks)}}},
  };
}

/// Missing file is a usage error; malformed JSON or bad values are
/// validation errors naming the key path.
inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read config file " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const RunConfig& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << to_json(c).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Pipeline stages

inline taskgen::Corpus make_corpus(const RunConfig& c) {
  auto cc = c.corpus;
  cc.seed = mix_seed(c.seed, kCorpusStream);
  return taskgen::build_corpus(cc);
}

/// Non-empty selection or ValidationError.
inline std::vector<const taskgen::Task*> require_tasks(const taskgen::Corpus& corpus, const TaskFilter& f,
                                                       const std::string& what) {
  auto t = select(corpus, f);
  if (t.empty()) throw ValidationError(what + ": filter selects no tasks");
  return t;
}

inline std::vector<policy::SftExample> sft_examples(std::span<const taskgen::Task* const> tasks) {
  const auto& vocab = minirtl::Vocab::minirtl();
  std::vector<policy::SftExample> out;
  for (const auto* t : tasks) {
    policy::SftExample ex{t->prompt_tokens, minirtl::tokenize(t->reference_text, vocab)};
    ex.response.push_back(minirtl::id_of(minirtl::Tk::Eos));
    out.push_back(std::move(ex));
  }
  return out;
}

inline policy::PolicyParams run_sft(const RunConfig& c, const taskgen::Corpus& corpus,
                                    std::vector<policy::SftLogEntry>* log = nullptr) {
  auto tasks = require_tasks(corpus, c.sft_tasks, "sft.tasks");
  auto data = sft_examples(tasks);
  auto p = policy::init_params(c.policy, minirtl::Vocab::minirtl().hash(), mix_seed(c.seed, kInitStream));
  auto s = c.sft;
  s.seed = mix_seed(c.seed, kSftStream);
  auto l = policy::train_sft(p, data, s);
  if (log) *log = std::move(l);
  return p;
}

inline rlcore::RlResult run_rl(const RunConfig& c, policy::PolicyParams& p, const taskgen::Corpus& corpus,
                               std::uint64_t replicate = 0, const rlcore::StepObserver& observe = {}) {
  auto tasks = require_tasks(corpus, c.rl_tasks, "rl.tasks");
  return rlcore::train_rl(c.rl_config(replicate), p, tasks, c.reward, observe);
}

inline analysis::EvalReport run_eval(const RunConfig& c, const policy::PolicyParams& p,
                                     const taskgen::Corpus& corpus) {
  auto tasks = require_tasks(corpus, c.eval.tasks, "eval.tasks");
  analysis::EvalConfig e;
  e.n = c.eval.n;
  e.ks = c.eval.ks;
  e.temperature = c.eval.temperature;
  e.max_len = c.eval.max_len;
  e.greedy = c.eval.greedy;
  e.seed = mix_seed(c.seed, kEvalStream);
  e.workers = c.workers;
  return analysis::eval_suite(p, tasks, e, c.reward);
}

/// Mean gated fraction over steps that kept at least one group.
inline double mean_gated_fraction(std::span<const rlcore::StepMetrics> rows) {
  double s = 0.0;
  int n = 0;
  for (const auto& m : rows)
    if (m.retained_groups > 0) {
      s += m.gated_fraction;
      ++n;
    }
  if (!n) throw rlcore::NoTrainableGroups("no step retained any group");
  return s / n;
}

// ---------------------------------------------------------------------------
// Command implementations

namespace detail {

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  fn(f);
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

inline taskgen::Corpus load_run_corpus(const fs::path& dir) {
  const auto path = dir / "corpus.json";
  if (!fs::exists(path)) throw std::runtime_error("missing " + path.string() + " (run gen-data first)");
  return taskgen::load_corpus(path.string());
}

inline policy::PolicyParams load_run_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing checkpoint " + path.string());
  return policy::load_checkpoint(path.string(), minirtl::Vocab::minirtl().hash());
}

inline std::string rho_tag(double rho) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", rho);
  return buf;
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::string checkpoint;
  std::string task;
  std::string candidate;
};

inline int cmd_gen_data(const RunConfig& c, std::ostream& out) {
  const fs::path dir(c.out);
  fs::create_directories(dir);
  auto corpus = make_corpus(c);
  taskgen::save_corpus(corpus, (dir / "corpus.json").string());
  save_config(c, (dir / "config.json").string());
  const auto heldout = std::count_if(corpus.tasks.begin(), corpus.tasks.end(),
                                     [](const auto& t) { return t.split == Split::Heldout; });
  out << "corpus: " << corpus.tasks.size() << " tasks (" << heldout << " heldout) -> " << (dir / "corpus.json").string()
      << '\n';
  return 0;
}

inline int cmd_sft(const RunConfig& c, std::ostream& out) {
  const fs::path dir(c.out);
  auto corpus = load_run_corpus(dir);
  std::vector<policy::SftLogEntry> log;
  auto p = run_sft(c, corpus, &log);
  policy::save_checkpoint(p, (dir / "sft.ckpt").string());
  write_file(dir / "sft_log.csv", [&](std::ostream& os) {
    os << "step,lr,loss\n";
    for (const auto& e : log) os << e.step << ',' << analysis::fmt(e.lr) << ',' << analysis::fmt(e.loss) << '\n';
  });
  out << "sft: " << log.size() << " steps, final loss " << analysis::fmt(log.empty() ? 0.0 : log.back().loss)
      << " -> " << (dir / "sft.ckpt").string() << '\n';
  return 0;
}

inline int cmd_train(const RunConfig& c, const Options& o, std::ostream& out) {
  const fs::path dir(c.out);
  auto corpus = load_run_corpus(dir);
  auto p = load_run_checkpoint(o.checkpoint.empty() ? dir / "sft.ckpt" : fs::path(o.checkpoint));
  auto res = run_rl(c, p, corpus);
  policy::save_checkpoint(p, (dir / "rl.ckpt").string());
  write_file(dir / "metrics.csv", [&](std::ostream& os) { rlcore::write_metrics_csv(os, res.metrics); });
  out << "train: " << res.metrics.size() << " steps (" << res.skipped_steps << " skipped) -> "
      << (dir / "rl.ckpt").string() << '\n';
  return 0;
}

inline fs::path default_eval_checkpoint(const fs::path& dir) {
  return fs::exists(dir / "rl.ckpt") ? dir / "rl.ckpt" : dir / "sft.ckpt";
}

inline int cmd_eval(const RunConfig& c, const Options& o, std::ostream& out) {
  const fs::path dir(c.out);
  auto corpus = load_run_corpus(dir);
  const fs::path ck = o.checkpoint.empty() ? default_eval_checkpoint(dir) : fs::path(o.checkpoint);
  auto p = load_run_checkpoint(ck);
  auto rep = run_eval(c, p, corpus);
  write_file(dir / "eval.csv", [&](std::ostream& os) { analysis::write_eval_csv(os, rep); });
  out << "eval: " << rep.tasks.size() << " tasks from " << ck.filename().string();
  for (int k : rep.ks) out << "  pass@" << k << "=" << analysis::fmt(rep.pass(k));
  for (int k : rep.ks) out << "  syn@" << k << "=" << analysis::fmt(rep.syntax(k));
  out << '\n';
  return 0;
}

inline json breakdown_json(const reward::RewardBreakdown& rb) {
  return {{"syntax_ok", rb.syntax_ok},
          {"interface_score", rb.interface_score},
          {"functional_fraction", rb.functional_fraction},
          {"functional_pass", rb.functional_pass},
          {"reward", rb.reward},
          {"stage", reward::to_string(rb.stage)}};
}

inline int cmd_score(const RunConfig& c, const Options& o, std::ostream& out) {
  const fs::path dir(c.out);
  auto corpus = fs::exists(dir / "corpus.json") ? load_run_corpus(dir) : make_corpus(c);
  const auto* task = corpus.find(o.task);
  if (!task) throw ValidationError("unknown task id " + o.task);
  std::ifstream f(o.candidate, std::ios::binary);
  if (!f) throw UsageError("cannot read candidate file " + o.candidate);
  std::stringstream ss;
  ss << f.rdbuf();
  auto rb = reward::score_text(ss.str(), *task, c.reward);
  json j = breakdown_json(rb);
  j["task_id"] = task->id;
  out << j.dump() << '\n';
  return 0;
}

inline int cmd_analyze(const RunConfig& c, const Options& o, std::ostream& out) {
  const fs::path dir(c.out);
  auto corpus = load_run_corpus(dir);
  auto p = load_run_checkpoint(o.checkpoint.empty() ? dir / "sft.ckpt" : fs::path(o.checkpoint));
  auto tasks = require_tasks(corpus, c.analysis.tasks, "analysis.tasks");
  analysis::EvalConfig e;
  e.n = c.analysis.n;
  e.ks = {1};
  e.temperature = c.analysis.temperature;
  e.max_len = c.analysis.max_len;
  e.seed = mix_seed(c.seed, kAnalysisStream);
  e.workers = c.workers;
  auto rep = analysis::eval_suite(p, tasks, e, c.reward);
  const auto rollouts = rep.all_rollouts();
  const auto h = analysis::all_entropies(rollouts);
  const auto& vocab = minirtl::Vocab::minirtl();
  const auto edges = analysis::default_edges(vocab.size(), c.analysis.bin_width);
  const auto counts = analysis::entropy_histogram(h, edges);
  write_file(dir / "entropy_hist.csv", [&](std::ostream& os) { analysis::write_histogram_csv(os, edges, counts); });
  write_file(dir / "entropy_hist.svg", [&](std::ostream& os) { analysis::write_histogram_svg(os, edges, counts); });
  const auto map = analysis::TokenClassMap::minirtl();
  const auto stats = analysis::token_class_stats(rollouts, map);
  write_file(dir / "token_classes.csv", [&](std::ostream& os) { analysis::write_class_stats_csv(os, stats); });
  const auto top = analysis::top_tokens_by_entropy(rollouts, static_cast<std::size_t>(c.analysis.top_k),
                                                   static_cast<std::size_t>(c.analysis.min_freq));
  write_file(dir / "top_tokens.csv", [&](std::ostream& os) { analysis::write_top_tokens_csv(os, top); });
  const double hmax = std::log(static_cast<double>(vocab.size()));
  const auto nmaps = std::min<std::size_t>(static_cast<std::size_t>(c.analysis.heatmaps), rep.tasks.size());
  for (std::size_t i = 0; i < nmaps; ++i) {
    const auto recs = analysis::heatmap_export(rep.tasks[i].rollouts.front());
    const auto stem = "heatmap_" + rep.tasks[i].task_id;
    write_file(dir / (stem + ".csv"), [&](std::ostream& os) { analysis::write_heatmap_csv(os, recs); });
    write_file(dir / (stem + ".svg"), [&](std::ostream& os) { analysis::write_heatmap_svg(os, recs, hmax); });
  }
  using analysis::TokenClass;
  const auto sum = analysis::summarize(h, c.analysis.low_entropy_threshold);
  const auto fork = analysis::class_group_mean(rollouts, map, {TokenClass::ControlFlow, TokenClass::ProcessSensitivity});
  const auto term = analysis::class_group_mean(rollouts, map, {TokenClass::StructuralTerminator});
  json j = {{"tokens", sum.tokens},
            {"mean", sum.mean},
            {"median", sum.median},
            {"right_skewed", sum.right_skewed},
            {"low_entropy_threshold", sum.threshold},
            {"fraction_below_threshold", sum.fraction_below},
            {"control_process_mean", fork ? json(*fork) : json(nullptr)},
            {"terminator_mean", term ? json(*term) : json(nullptr)}};
  write_file(dir / "entropy_summary.json", [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  out << "analyze: " << sum.tokens << " tokens, mean " << analysis::fmt(sum.mean) << ", median "
      << analysis::fmt(sum.median) << '\n';
  return 0;
}

inline int cmd_ablate(const RunConfig& c, const Options& o, std::ostream& out) {
  const fs::path dir(c.out);
  auto corpus = load_run_corpus(dir);
  const auto base = load_run_checkpoint(o.checkpoint.empty() ? dir / "sft.ckpt" : fs::path(o.checkpoint));
  auto primary = require_tasks(corpus, c.eval.tasks, "eval.tasks");
  auto secondary = require_tasks(corpus, c.ablation.secondary_tasks, "ablation.secondary_tasks");
  if (c.eval.n < 5) throw ValidationError("eval.n: ablate needs n >= 5");
  analysis::EvalConfig e;
  e.n = c.eval.n;
  e.ks = {1, 5};
  e.temperature = c.eval.temperature;
  e.max_len = c.eval.max_len;
  e.seed = mix_seed(c.seed, kEvalStream);
  e.workers = c.workers;
  const fs::path cells_dir = dir / "ablation";
  fs::create_directories(cells_dir);
  struct CellLine {
    double rho;
    std::uint64_t seed;
    analysis::AblationCell cell;
  };
  std::vector<CellLine> lines;
  auto runner = [&](double rho, std::uint64_t seed) {
    RunConfig rc = c;
    rc.rl.variant = rlcore::Variant::Earl;
    rc.rl.rho = rho;
    if (c.ablation.steps > 0) rc.rl.steps = c.ablation.steps;
    auto p = base;
    auto res = run_rl(rc, p, corpus, seed);
    write_file(cells_dir / ("metrics_rho" + rho_tag(rho) + "_seed" + std::to_string(seed) + ".csv"),
               [&](std::ostream& os) { rlcore::write_metrics_csv(os, res.metrics); });
    analysis::AblationCell cell;
    cell.gated_fraction = mean_gated_fraction(res.metrics);
    auto a = analysis::eval_suite(p, primary, e, c.reward);
    auto b = analysis::eval_suite(p, secondary, e, c.reward);
    cell.pass1 = a.pass(1);
    cell.pass5 = a.pass(5);
    cell.syn5 = b.syntax(5);
    cell.func5 = b.pass(5);
    lines.push_back({rho, seed, cell});
    out << "ablate: rho=" << rho_tag(rho) << " seed=" << seed << " pass@1=" << analysis::fmt(cell.pass1)
        << " gated=" << analysis::fmt(cell.gated_fraction) << '\n';
    return cell;
  };
  auto rows = analysis::ablation_grid(c.ablation.rhos, c.ablation.seeds, runner);
  write_file(dir / "ablation.csv", [&](std::ostream& os) { analysis::write_ablation_csv(os, rows); });
  write_file(dir / "ablation_cells.csv", [&](std::ostream& os) {
    os << "rho,seed,pass@1,pass@5,syn@5,func@5,gated_fraction\n";
    for (const auto& l : lines)
      os << analysis::fmt(l.rho) << ',' << l.seed << ',' << analysis::fmt(l.cell.pass1) << ','
         << analysis::fmt(l.cell.pass5) << ',' << analysis::fmt(l.cell.syn5) << ',' << analysis::fmt(l.cell.func5)
         << ',' << analysis::fmt(l.cell.gated_fraction) << '\n';
  });
  int failed = 0;
  for (const auto& r : rows) {
    failed += r.seeds_failed;
    for (const auto& msg : r.errors) out << "ablate: rho=" << rho_tag(r.rho) << " failed: " << msg << '\n';
  }
  if (failed == static_cast<int>(rows.size() * c.ablation.seeds.size()))
    throw std::runtime_error("every ablation cell failed");
  return 0;
}

inline std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace detail

/// Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime. Errors go to \p err as
/// a single "error:<kind>:<message>" line.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"rtlgate: entropy-gated RL for a synthesizable RTL subset", "rtlgate"};
  app.require_subcommand(1);
  detail::Options o;
  struct Spec {
    const char* name;
    const char* help;
  };
  const Spec specs[] = {
      {"gen-data", "build the task corpus"},
      {"sft", "supervised initialization from the corpus"},
      {"train", "RL from the SFT checkpoint"},
      {"eval", "evaluate a checkpoint on the eval suite"},
      {"score", "score a candidate file against one task"},
      {"analyze", "token-entropy study of a checkpoint"},
      {"ablate", "entropy-threshold ablation grid"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& s : specs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", o.config, "run config JSON");
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { o.seed = v; }, "override seed");
    sub->add_option_function<std::string>("--out", [&](const std::string& v) { o.out = v; }, "override run dir");
    sub->add_option_function<int>("--workers", [&](const int& v) { o.workers = v; }, "cap on worker threads");
    subs[s.name] = sub;
  }
  for (const char* name : {"train", "eval", "analyze", "ablate"})
    subs[name]->add_option("--checkpoint", o.checkpoint, "checkpoint to start from");
  subs["score"]->add_option("--task", o.task, "task id")->required();
  subs["score"]->add_option("--candidate", o.candidate, "candidate source file")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
      app.parse(rev);
    } catch (const CLI::Success& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      throw UsageError(e.what());
    }
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (o.out) c.out = *o.out;
    if (o.workers) c.workers = *o.workers;
    c.validate();
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-data") return detail::cmd_gen_data(c, out);
    if (cmd == "sft") return detail::cmd_sft(c, out);
    if (cmd == "train") return detail::cmd_train(c, o, out);
    if (cmd == "eval") return detail::cmd_eval(c, o, out);
    if (cmd == "score") return detail::cmd_score(c, o, out);
    if (cmd == "analyze") return detail::cmd_analyze(c, o, out);
    if (cmd == "ablate") return detail::cmd_ablate(c, o, out);
    throw UsageError("unknown command " + cmd);
  } catch (const UsageError& e) {
    err << "error:usage:" << detail::one_line(e.what()) << '\n';
    return 1;
  } catch (const ValidationError& e) {
    err << "error:validation:" << detail::one_line(e.what()) << '\n';
    return 2;
  } catch (const policy::VocabMismatch& e) {
    err << "error:validation:" << detail::one_line(e.what()) << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    // taskgen / rlcore config errors and malformed inputs
    err << "error:validation:" << detail::one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error:runtime:" << detail::one_line(e.what()) << '\n';
    return 3;
  }
}

inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_command(args, out, err);
}

}  // namespace rtlgate::cli
