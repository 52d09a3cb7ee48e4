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
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rtlgate/policy.hpp"
#include "rtlgate/reward.hpp"
#include "rtlgate/rng.hpp"
#include "rtlgate/taskgen.hpp"

namespace rtlgate::rlcore {

using policy::Gradient;
using policy::PolicyParams;
using policy::Rollout;
using policy::TokenId;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateGroup : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoTrainableGroups : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class GateMode { None, Mask, Archer };
enum class Variant { Grpo, Dapo, Earl, PpoBaseline };

inline const char* to_string(GateMode g) {
  switch (g) {
    case GateMode::None: return "none";
    case GateMode::Mask: return "mask";
    case GateMode::Archer: return "archer";
  }
  return "?";
}
inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Grpo: return "grpo";
    case Variant::Dapo: return "dapo";
    case Variant::Earl: return "earl";
    case Variant::PpoBaseline: return "ppo-baseline";
  }
  return "?";
}
inline GateMode gate_from_string(const std::string& s) {
  for (auto g : {GateMode::None, GateMode::Mask, GateMode::Archer})
    if (s == to_string(g)) return g;
  throw ConfigError("unknown gate mode: " + s);
}
inline Variant variant_from_string(const std::string& s) {
  for (auto v : {Variant::Grpo, Variant::Dapo, Variant::Earl, Variant::PpoBaseline})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown objective variant: " + s);
}

struct RlConfig {
  int group_size = 6;  // G
  double rho = 0.8;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double beta = 0.01;
  double lr = 1e-6;
  double temperature = 1.0;
  int max_len = 256;
  int batch_size = 8;  // prompts per step
  int max_resample = 4;
  int steps = 500;
  Variant variant = Variant::Earl;
  GateMode gate = GateMode::None;  // used by dapo and ppo-baseline
  bool kl_gated = false;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    auto finite = [](double x) { return std::isfinite(x); };
    if (!(finite(rho) && finite(eps_low) && finite(eps_high) && finite(beta) && finite(lr) && finite(temperature)))
      throw ConfigError("rl config fields must be finite");
    if (group_size < 2) throw ConfigError("group_size must be >= 2");
    if (!(eps_low > 0 && eps_high > 0)) throw ConfigError("clip ranges must be > 0");
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
    if (beta < 0) throw ConfigError("beta must be >= 0");
    if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
    if (max_len < 1 || batch_size < 1 || max_resample < 0 || steps < 0 || workers < 1)
      throw ConfigError("rl config counts out of range");
  }
};

/// Objective settings after applying the variant's reductions.
struct ObjectiveSpec {
  GateMode gate = GateMode::Mask;
  double rho = 0.8;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double beta = 0.01;
  double temperature = 1.0;
  bool kl_gated = false;
  bool filter_mixed = true;   // dynamic sampling
  bool std_normalize = true;  // false => group-mean baseline only
};

/// grpo: no gate, symmetric clip (eps_low), no filtering.
/// dapo: configured gate, clip-higher, filtering.
/// earl: entropy mask at rho, clip-higher, filtering.
/// ppo-baseline: configured gate, symmetric clip, mean baseline, no filtering.
inline ObjectiveSpec objective_spec(const RlConfig& c) {
  ObjectiveSpec s;
  s.rho = c.rho;
  s.eps_low = c.eps_low;
  s.eps_high = c.eps_high;
  s.beta = c.beta;
  s.temperature = c.temperature;
  s.kl_gated = c.kl_gated;
  switch (c.variant) {
    case Variant::Grpo:
      s.gate = GateMode::None;
      s.eps_high = c.eps_low;
      s.filter_mixed = false;
      break;
    case Variant::Dapo: s.gate = c.gate; break;
    case Variant::Earl: s.gate = GateMode::Mask; break;
    case Variant::PpoBaseline:
      s.gate = c.gate;
      s.eps_high = c.eps_low;
      s.filter_mixed = false;
      s.std_normalize = false;
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Entropy gating

/// Nearest-rank quantile: the ceil(rho*T)-th smallest entropy; -inf at rho = 0.
/// A 1e-9 slack keeps products like 0.7*10 from rounding up a rank.
inline double entropy_threshold(std::span<const double> entropies, double rho) {
  if (entropies.empty()) throw std::invalid_argument("entropy_threshold needs T >= 1");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in [0, 1)");
  if (rho == 0.0) return -std::numeric_limits<double>::infinity();
  const auto T = static_cast<double>(entropies.size());
  auto rank = static_cast<std::size_t>(std::ceil(rho * T - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, entropies.size());
  std::vector<double> sorted(entropies.begin(), entropies.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
  return sorted[rank - 1];
}

inline std::vector<double> entropy_mask(std::span<const double> entropies, double tau) {
  std::vector<double> m(entropies.size());
  for (std::size_t t = 0; t < m.size(); ++t) m[t] = entropies[t] >= tau ? 1.0 : 0.0;
  return m;
}

/// w_t = H_t / max H; all ones when every entropy is zero.
inline std::vector<double> archer_weights(std::span<const double> entropies) {
  if (entropies.empty()) throw std::invalid_argument("archer_weights needs T >= 1");
  const double hmax = *std::max_element(entropies.begin(), entropies.end());
  std::vector<double> w(entropies.size(), 1.0);
  if (hmax > 0.0)
    for (std::size_t t = 0; t < w.size(); ++t) w[t] = entropies[t] / hmax;
  return w;
}

inline std::vector<double> token_gates(std::span<const double> entropies, GateMode mode, double rho) {
  switch (mode) {
    case GateMode::None: return std::vector<double>(entropies.size(), 1.0);
    case GateMode::Mask: return entropy_mask(entropies, entropy_threshold(entropies, rho));
    case GateMode::Archer: return archer_weights(entropies);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Groups and advantages

struct Group {
  const taskgen::Task* task = nullptr;
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
  std::vector<bool> passes;
  std::vector<double> advantages;

  int pass_count() const { return static_cast<int>(std::count(passes.begin(), passes.end(), true)); }
  std::size_t num_tokens() const {
    std::size_t n = 0;
    for (const auto& r : rollouts) n += r.size();
    return n;
  }
};

inline constexpr double kAdvantageDelta = 1e-8;

/// (R - mean) / (std + 1e-8) with population statistics.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages needs G >= 2");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  if (sd < 1e-12) throw DegenerateGroup("group rewards have zero spread");
  std::vector<double> a(rewards.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (rewards[i] - mean) / (sd + kAdvantageDelta);
  return a;
}

inline std::vector<double> baseline_advantages(std::span<const double> rewards) {
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
  std::vector<double> a(rewards.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rewards[i] - mean;
  return a;
}

/// Keeps groups with 0 < passes < G, in order.
inline std::vector<Group> filter_groups(std::vector<Group> groups) {
  std::vector<Group> kept;
  for (auto& g : groups) {
    const int c = g.pass_count();
    if (c > 0 && c < static_cast<int>(g.rollouts.size())) kept.push_back(std::move(g));
  }
  return kept;
}

/// Fills advantages per the objective. Unfiltered variants give degenerate
/// groups zero advantage instead of failing.
inline void assign_advantages(Group& g, const ObjectiveSpec& spec) {
  if (!spec.std_normalize) {
    g.advantages = baseline_advantages(g.rewards);
    return;
  }
  try {
    g.advantages = group_advantages(g.rewards);
  } catch (const DegenerateGroup&) {
    if (spec.filter_mixed) throw;
    g.advantages.assign(g.rewards.size(), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Surrogate objective

/// Per-token quantities for one rollout.
struct TokenTerms {
  std::vector<double> ratio;
  std::vector<double> gate;
  std::vector<double> surrogate;  // min(r A, clip(r) A)
  std::vector<double> coeff;      // gate * r * A / N when unclipped, else 0
  std::vector<bool> clipped;
};

struct Coefficients {
  std::vector<std::vector<TokenTerms>> terms;  // [group][rollout]
  std::size_t num_tokens = 0;                  // sum |o| over the batch
  double clip_rate = 0.0;
  double gated_fraction = 0.0;
};

/// Log-probabilities of every rollout under `p`, nested like the groups.
inline std::vector<std::vector<std::vector<double>>> batch_logprobs(std::span<const Group> groups,
                                                                    const PolicyParams& p, double temperature) {
  std::vector<std::vector<std::vector<double>>> out(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (const auto& r : groups[g].rollouts)
      out[g].push_back(policy::sequence_logprobs(p, r.prompt, r.response, temperature));
  return out;
}

/// `current` holds log pi_theta per token; the old policy's values are the
/// rollouts' stored logprobs.
inline Coefficients per_token_coefficients(std::span<const Group> groups,
                                           const std::vector<std::vector<std::vector<double>>>& current,
                                           const ObjectiveSpec& spec) {
  Coefficients c;
  for (const auto& g : groups) c.num_tokens += g.num_tokens();
  const double inv_n = c.num_tokens ? 1.0 / static_cast<double>(c.num_tokens) : 0.0;
  double clipped = 0.0, gated = 0.0;
  c.terms.resize(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      const auto& r = g.rollouts[i];
      const double A = g.advantages.at(i);
      TokenTerms tt;
      tt.gate = r.size() ? token_gates(r.entropies, spec.gate, spec.rho) : std::vector<double>{};
      for (std::size_t t = 0; t < r.size(); ++t) {
        const double ratio = std::exp(current[gi][i][t] - r.logprobs[t]);
        const double clip = std::clamp(ratio, 1.0 - spec.eps_low, 1.0 + spec.eps_high);
        const double un = ratio * A, cl = clip * A;
        const bool is_clipped = cl < un;
        tt.ratio.push_back(ratio);
        tt.surrogate.push_back(std::min(un, cl));
        tt.clipped.push_back(is_clipped);
        tt.coeff.push_back(is_clipped ? 0.0 : tt.gate[t] * un * inv_n);
        clipped += is_clipped;
        gated += tt.gate[t];
      }
      c.terms[gi].push_back(std::move(tt));
    }
  }
  if (c.num_tokens) {
    c.clip_rate = clipped / static_cast<double>(c.num_tokens);
    c.gated_fraction = gated / static_cast<double>(c.num_tokens);
  }
  return c;
}

/// J = (1/N) sum_tokens [ gate * min(r A, clip(r) A) - beta * k_t * KL_t ],
/// k_t = gate when KL is gated, else 1.
inline double objective_value(std::span<const Group> groups, const PolicyParams& theta, const PolicyParams& ref,
                              const ObjectiveSpec& spec) {
  auto cur = batch_logprobs(groups, theta, spec.temperature);
  auto c = per_token_coefficients(groups, cur, spec);
  if (!c.num_tokens) return 0.0;
  double sum = 0.0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (std::size_t i = 0; i < groups[gi].rollouts.size(); ++i) {
      const auto& r = groups[gi].rollouts[i];
      const auto& tt = c.terms[gi][i];
      for (std::size_t t = 0; t < r.size(); ++t) {
        sum += tt.gate[t] * tt.surrogate[t];
        if (spec.beta != 0.0) {
          policy::Context ctx{r.prompt, std::span<const TokenId>(r.response).first(t)};
          auto p = policy::next_token_distribution(theta, ctx, spec.temperature);
          auto q = policy::next_token_distribution(ref, ctx, spec.temperature);
          sum -= spec.beta * (spec.kl_gated ? tt.gate[t] : 1.0) * policy::kl_divergence(p, q);
        }
      }
    }
  return sum / static_cast<double>(c.num_tokens);
}

struct GradientStats {
  double mean_kl = 0.0;  // mean per-token KL to the reference
};

/// acc += grad_theta J, one fused softmax per token:
///   dJ/dz = coeff * (onehot - p) / T - (beta k_t / N) * p (ln p - ln q - KL) / T
inline GradientStats accumulate_objective_grad(std::span<const Group> groups, const Coefficients& c,
                                               const PolicyParams& theta, const PolicyParams& ref,
                                               const ObjectiveSpec& spec, Gradient& acc) {
  GradientStats st;
  if (!c.num_tokens) return st;
  const double inv_n = 1.0 / static_cast<double>(c.num_tokens);
  const double T = spec.temperature;
  double kl_sum = 0.0;
  std::vector<double> g;
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (std::size_t i = 0; i < groups[gi].rollouts.size(); ++i) {
      const auto& r = groups[gi].rollouts[i];
      const auto& tt = c.terms[gi][i];
      for (std::size_t t = 0; t < r.size(); ++t) {
        policy::Context ctx{r.prompt, std::span<const TokenId>(r.response).first(t)};
        auto feats = policy::features(theta.shape, ctx);
        auto p = policy::tempered_softmax(policy::logits(theta, feats), T);
        const double lp_coeff = tt.coeff[t];
        const double kl_coeff = spec.beta * (spec.kl_gated ? tt.gate[t] : 1.0) * inv_n;
        g.assign(p.size(), 0.0);
        if (lp_coeff != 0.0) {
          for (std::size_t v = 0; v < p.size(); ++v) g[v] = -lp_coeff * p[v] / T;
          g[static_cast<std::size_t>(r.response[t])] += lp_coeff / T;
        }
        {
          auto q = policy::next_token_distribution(ref, ctx, T);
          const double kl = policy::kl_divergence(p, q);
          kl_sum += kl;
          if (kl_coeff != 0.0)
            for (std::size_t v = 0; v < p.size(); ++v)
              if (p[v] > 0.0) g[v] -= kl_coeff * p[v] * (std::log(p[v]) - std::log(q[v]) - kl) / T;
        }
        if (lp_coeff != 0.0 || kl_coeff != 0.0) policy::detail::scatter(theta, feats, g, 1.0, acc);
      }
    }
  st.mean_kl = kl_sum * inv_n;
  return st;
}

// ---------------------------------------------------------------------------
// Training loop

struct StepMetrics {
  int step = 0;
  double mean_reward = 0.0;
  double pass_rate = 0.0;
  double clip_rate = 0.0;
  double gated_fraction = 0.0;
  double mean_kl = 0.0;
  double mean_entropy = 0.0;
  int retained_groups = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,mean_reward,pass_rate,clip_rate,gated_fraction,mean_kl,mean_entropy,retained_groups";

inline void write_metrics_csv(std::ostream& os, std::span<const StepMetrics> rows) {
  os << kMetricsHeader << '\n';
  char buf[256];
  for (const auto& m : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d\n", m.step, m.mean_reward, m.pass_rate,
                  m.clip_rate, m.gated_fraction, m.mean_kl, m.mean_entropy, m.retained_groups);
    os << buf;
  }
}

struct RlResult {
  std::vector<StepMetrics> metrics;
  int skipped_steps = 0;  // steps that raised NoTrainableGroups
};

/// Runs fn(i) for i in [0, n) across up to `workers` threads.
template <typename F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  const auto w = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t k = 0; k < w; ++k)
    pool.emplace_back([&, k] {
      try {
        for (std::size_t i = k; i < n; i += w) fn(i);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Samples and scores G rollouts for each task. Rollout j of draw d uses the
/// stream mix_seed(step_seed, d, j), so results do not depend on `workers`.
inline std::vector<Group> collect_groups(const PolicyParams& p, std::span<const taskgen::Task* const> tasks,
                                         std::size_t first_draw, std::uint64_t step_seed, const RlConfig& cfg,
                                         const reward::RewardSchedule& sched) {
  const auto G = static_cast<std::size_t>(cfg.group_size);
  std::vector<Group> groups(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    groups[i].task = tasks[i];
    groups[i].rollouts.resize(G);
    groups[i].rewards.resize(G);
    groups[i].passes.resize(G);
  }
  const TokenId eos = minirtl::id_of(minirtl::Tk::Eos);
  parallel_for(tasks.size() * G, cfg.workers, [&](std::size_t k) {
    const std::size_t gi = k / G, j = k % G;
    Rng rng(mix_seed(step_seed, first_draw + gi, j));
    auto& g = groups[gi];
    g.rollouts[j] = policy::sample_rollout(p, g.task->prompt_tokens, cfg.temperature,
                                           static_cast<std::size_t>(cfg.max_len), eos, rng);
    auto rb = reward::score(g.rollouts[j].response, *g.task, g.rollouts[j].truncated, sched);
    g.rewards[j] = rb.reward;
    g.passes[j] = reward::is_pass(rb);
  });
  return groups;
}

using StepObserver = std::function<void(const StepMetrics&, const PolicyParams&)>;

/// One optimizer step per rollout batch; pi_old is the params at collection,
/// so stored logprobs stand in for the current ones. \p observe runs after
/// every step.
inline RlResult train_rl(const RlConfig& cfg, PolicyParams& params, std::span<const taskgen::Task* const> train_tasks,
                         const reward::RewardSchedule& sched = {}, const StepObserver& observe = {}) {
  cfg.validate();
  sched.validate();
  if (train_tasks.empty()) throw ConfigError("no training tasks");
  const auto spec = objective_spec(cfg);
  const PolicyParams ref = params;
  Gradient grad(params);
  RlResult result;
  for (int step = 1; step <= cfg.steps; ++step) {
    const std::uint64_t step_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(step));
    Rng prompt_rng(mix_seed(step_seed, 0x70726f6d707473ULL));
    StepMetrics m;
    m.step = step;
    std::vector<Group> batch;
    std::size_t drawn = 0, sampled = 0, sampled_tokens = 0;
    double reward_sum = 0.0, pass_sum = 0.0, entropy_sum = 0.0;
    for (int attempt = 0; attempt <= cfg.max_resample; ++attempt) {
      const std::size_t need = static_cast<std::size_t>(cfg.batch_size) - batch.size();
      if (need == 0) break;
      std::vector<const taskgen::Task*> pick(need);
      for (auto& t : pick) t = train_tasks[prompt_rng.below(train_tasks.size())];
      auto groups = collect_groups(params, pick, drawn, step_seed, cfg, sched);
      drawn += need;
      for (const auto& g : groups)
        for (std::size_t j = 0; j < g.rollouts.size(); ++j) {
          reward_sum += g.rewards[j];
          pass_sum += g.passes[j];
          ++sampled;
          for (double h : g.rollouts[j].entropies) entropy_sum += h;
          sampled_tokens += g.rollouts[j].size();
        }
      if (spec.filter_mixed) groups = filter_groups(std::move(groups));
      for (auto& g : groups) {
        assign_advantages(g, spec);
        batch.push_back(std::move(g));
      }
      if (!spec.filter_mixed) break;
    }
    m.mean_reward = sampled ? reward_sum / static_cast<double>(sampled) : 0.0;
    m.pass_rate = sampled ? pass_sum / static_cast<double>(sampled) : 0.0;
    m.mean_entropy = sampled_tokens ? entropy_sum / static_cast<double>(sampled_tokens) : 0.0;
    m.retained_groups = static_cast<int>(batch.size());
    if (batch.empty()) {
      // NoTrainableGroups: logged with zero retained groups, no update
      ++result.skipped_steps;
      result.metrics.push_back(m);
      if (observe) observe(m, params);
      continue;
    }
    std::vector<std::vector<std::vector<double>>> current(batch.size());
    for (std::size_t g = 0; g < batch.size(); ++g)
      for (const auto& r : batch[g].rollouts) current[g].push_back(r.logprobs);
    auto coeffs = per_token_coefficients(batch, current, spec);
    grad.clear();
    auto st = accumulate_objective_grad(batch, coeffs, params, ref, spec, grad);
    policy::apply_gradient(params, grad, cfg.lr);
    if (!params.all_finite()) throw std::runtime_error("non-finite parameters after RL step " + std::to_string(step));
    m.clip_rate = coeffs.clip_rate;
    m.gated_fraction = coeffs.gated_fraction;
    m.mean_kl = st.mean_kl;
    result.metrics.push_back(m);
    if (observe) observe(m, params);
  }
  return result;
}

}  // namespace rtlgate::rlcore
