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
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtlgate/rng.hpp"

namespace rtlgate::policy {

using TokenId = std::int32_t;

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout of the binary context features:
///   [0, k*V)                 token at lag j (1..k) -> (j-1)*V + token
///   [k*V, k*V+P)             response-position bucket
///   [k*V+P, k*V+P+Lp*V)      prompt token at prompt position i -> i*V + token
///   [.., .. + C)             hashed (last token, prompt position, prompt token)
struct FeatureShape {
  int vocab_size = 0;        // V
  int context = 4;           // k
  int position_buckets = 8;  // P
  int prompt_window = 0;     // Lp
  int cross_buckets = 0;     // C, 0 disables the conjunction block

  std::size_t num_features() const {
    const auto v = static_cast<std::size_t>(vocab_size);
    return static_cast<std::size_t>(context) * v + static_cast<std::size_t>(position_buckets) +
           static_cast<std::size_t>(prompt_window) * v + static_cast<std::size_t>(cross_buckets);
  }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

/// Parameters of the linear-softmax policy. W is stored feature-major:
/// weight(v, f) lives at W[f * V + v], so one active feature touches a
/// contiguous row of V logits.
struct PolicyParams {
  FeatureShape shape;
  std::uint64_t vocab_hash = 0;
  std::uint64_t version = 0;
  std::vector<double> W;
  std::vector<double> b;

  std::size_t V() const { return static_cast<std::size_t>(shape.vocab_size); }
  std::size_t F() const { return shape.num_features(); }
  std::size_t num_params() const { return W.size() + b.size(); }

  double& param(std::size_t i) { return i < W.size() ? W[i] : b[i - W.size()]; }
  double param(std::size_t i) const { return i < W.size() ? W[i] : b[i - W.size()]; }

  bool all_finite() const {
    auto fin = [](double x) { return std::isfinite(x); };
    return std::all_of(W.begin(), W.end(), fin) && std::all_of(b.begin(), b.end(), fin);
  }
};

/// Gradient buffer with the same layout as PolicyParams.
struct Gradient {
  std::vector<double> W;
  std::vector<double> b;

  explicit Gradient(const PolicyParams& p) : W(p.W.size(), 0.0), b(p.b.size(), 0.0) {}

  void clear() {
    std::fill(W.begin(), W.end(), 0.0);
    std::fill(b.begin(), b.end(), 0.0);
  }
  double at(std::size_t i) const { return i < W.size() ? W[i] : b[i - W.size()]; }
  std::size_t size() const { return W.size() + b.size(); }
  bool is_zero() const {
    auto z = [](double x) { return x == 0.0; };
    return std::all_of(W.begin(), W.end(), z) && std::all_of(b.begin(), b.end(), z);
  }
};

/// Prompt plus the response emitted so far.
struct Context {
  std::span<const TokenId> prompt;
  std::span<const TokenId> response;
};

inline PolicyParams init_params(FeatureShape shape, std::uint64_t vocab_hash, std::uint64_t seed) {
  if (shape.vocab_size < 1) throw DomainError("vocab size must be >= 1");
  if (shape.context < 1) throw DomainError("context window k must be >= 1");
  if (shape.position_buckets < 1 || shape.prompt_window < 0 || shape.cross_buckets < 0) throw DomainError("bad feature shape");
  PolicyParams p;
  p.shape = shape;
  p.vocab_hash = vocab_hash;
  p.W.resize(shape.num_features() * p.V());
  p.b.resize(p.V());
  Rng rng(seed);
  for (auto& w : p.W) w = rng.uniform(-0.01, 0.01);
  for (auto& x : p.b) x = rng.uniform(-0.01, 0.01);
  return p;
}

/// Logarithmic buckets over the response position: 0, 1, 2-3, 4-7, ...
inline int position_bucket(std::size_t pos, int buckets) {
  int b = 0;
  for (std::size_t x = pos + 1; x > 1; x >>= 1) ++b;
  return std::min(b, buckets - 1);
}

inline std::vector<std::size_t> features(const FeatureShape& s, const Context& ctx) {
  const auto V = static_cast<std::size_t>(s.vocab_size);
  std::vector<std::size_t> f;
  f.reserve(static_cast<std::size_t>(s.context + 1 + s.prompt_window));
  const std::size_t np = ctx.prompt.size(), nr = ctx.response.size();
  for (std::size_t j = 1; j <= static_cast<std::size_t>(s.context) && j <= np + nr; ++j) {
    const std::size_t idx = np + nr - j;
    const TokenId tok = idx >= np ? ctx.response[idx - np] : ctx.prompt[idx];
    f.push_back((j - 1) * V + static_cast<std::size_t>(tok));
  }
  const std::size_t base = static_cast<std::size_t>(s.context) * V;
  f.push_back(base + static_cast<std::size_t>(position_bucket(nr, s.position_buckets)));
  const std::size_t pbase = base + static_cast<std::size_t>(s.position_buckets);
  for (std::size_t i = 0; i < np && i < static_cast<std::size_t>(s.prompt_window); ++i)
    f.push_back(pbase + i * V + static_cast<std::size_t>(ctx.prompt[i]));
  if (s.cross_buckets > 0 && np + nr > 0) {
    const std::size_t cbase = pbase + static_cast<std::size_t>(s.prompt_window) * V;
    const auto last = static_cast<std::uint64_t>(nr ? ctx.response[nr - 1] : ctx.prompt[np - 1]);
    const auto C = static_cast<std::uint64_t>(s.cross_buckets);
    const std::size_t start = f.size();
    for (std::size_t i = 0; i < np && i < static_cast<std::size_t>(s.prompt_window); ++i) {
      const std::uint64_t key = (last * 64 + i) * 1024 + static_cast<std::uint64_t>(ctx.prompt[i]);
      f.push_back(cbase + static_cast<std::size_t>(splitmix64(key) % C));
    }
    // colliding keys count once
    std::sort(f.begin() + static_cast<std::ptrdiff_t>(start), f.end());
    f.erase(std::unique(f.begin() + static_cast<std::ptrdiff_t>(start), f.end()), f.end());
  }
  return f;
}

inline std::vector<double> logits(const PolicyParams& p, std::span<const std::size_t> feats) {
  const std::size_t V = p.V();
  std::vector<double> z(p.b);
  for (std::size_t f : feats) {
    const double* row = p.W.data() + f * V;
    for (std::size_t v = 0; v < V; ++v) z[v] += row[v];
  }
  return z;
}

/// Softmax(z / T) with max subtraction.
inline std::vector<double> tempered_softmax(std::span<const double> z, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be > 0");
  std::vector<double> p(z.size());
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t v = 0; v < z.size(); ++v) {
    p[v] = std::exp((z[v] - zmax) / temperature);
    sum += p[v];
  }
  for (auto& x : p) x /= sum;
  return p;
}

inline std::vector<double> next_token_distribution(const PolicyParams& p, const Context& ctx,
                                                   double temperature = 1.0) {
  auto f = features(p.shape, ctx);
  return tempered_softmax(logits(p, f), temperature);
}

/// Shannon entropy in nats; 0 log 0 = 0.
inline double token_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double x : probs)
    if (x > 0.0) h -= x * std::log(x);
  return std::max(h, 0.0);
}

struct Rollout {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;
  std::vector<double> logprobs;
  std::vector<double> entropies;  // nats, at the sampling temperature
  double temperature = 1.0;
  bool truncated = false;

  std::size_t size() const { return response.size(); }
};

/// Inverse-CDF draw from a distribution with one uniform variate.
inline TokenId draw(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    acc += probs[v];
    if (u < acc) return static_cast<TokenId>(v);
  }
  // u landed in the rounding slack above the last partial sum
  for (std::size_t v = probs.size(); v-- > 0;)
    if (probs[v] > 0.0) return static_cast<TokenId>(v);
  return 0;
}

/// Samples until `eos` or `max_len` tokens. With greedy=true the argmax is
/// taken instead (ties to the lowest id); entropies are still recorded at
/// `temperature`.
inline Rollout sample_rollout(const PolicyParams& p, std::span<const TokenId> prompt, double temperature,
                              std::size_t max_len, TokenId eos, Rng& rng, bool greedy = false) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be > 0");
  if (max_len < 1) throw DomainError("max_len must be >= 1");
  Rollout r;
  r.prompt.assign(prompt.begin(), prompt.end());
  r.temperature = temperature;
  while (r.response.size() < max_len) {
    auto probs = next_token_distribution(p, {r.prompt, r.response}, temperature);
    TokenId tok;
    if (greedy) tok = static_cast<TokenId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    else tok = draw(probs, rng);
    r.response.push_back(tok);
    r.logprobs.push_back(std::log(probs[static_cast<std::size_t>(tok)]));
    r.entropies.push_back(token_entropy(probs));
    if (tok == eos) return r;
  }
  r.truncated = true;
  return r;
}

/// log pi(o_t | prompt, o_<t) for every response token, using the exact
/// contexts sample_rollout used.
inline std::vector<double> sequence_logprobs(const PolicyParams& p, std::span<const TokenId> prompt,
                                             std::span<const TokenId> response, double temperature = 1.0) {
  std::vector<double> lp;
  lp.reserve(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    auto probs = next_token_distribution(p, {prompt, response.first(t)}, temperature);
    lp.push_back(std::log(probs[static_cast<std::size_t>(response[t])]));
  }
  return lp;
}

namespace detail {

// acc += coeff * d(logits)/d(theta)^T g, for the sparse binary features.
inline void scatter(const PolicyParams& p, std::span<const std::size_t> feats, std::span<const double> g,
                    double coeff, Gradient& acc) {
  const std::size_t V = p.V();
  for (std::size_t f : feats) {
    double* row = acc.W.data() + f * V;
    for (std::size_t v = 0; v < V; ++v) row[v] += coeff * g[v];
  }
  for (std::size_t v = 0; v < V; ++v) acc.b[v] += coeff * g[v];
}

}  // namespace detail

/// acc += coeff * grad_theta log pi(token | ctx). With logits z and
/// p = softmax(z/T), d log p_token / dz_v = (1[v = token] - p_v) / T.
inline void accumulate_logprob_grad(const PolicyParams& p, const Context& ctx, TokenId token, double coeff,
                                    Gradient& acc, double temperature = 1.0) {
  if (coeff == 0.0) return;
  auto feats = features(p.shape, ctx);
  auto probs = tempered_softmax(logits(p, feats), temperature);
  std::vector<double> g(probs.size());
  for (std::size_t v = 0; v < g.size(); ++v)
    g[v] = ((static_cast<TokenId>(v) == token ? 1.0 : 0.0) - probs[v]) / temperature;
  detail::scatter(p, feats, g, coeff, acc);
}

/// KL(p || q) = sum p ln(p/q). q must be strictly positive where p is.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  double kl = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v)
    if (p[v] > 0.0) kl += p[v] * (std::log(p[v]) - std::log(q[v]));
  return kl;
}

/// acc += coeff * grad_theta KL(pi_theta(.|ctx) || ref). With p = softmax(z/T):
/// dKL/dz_v = p_v (ln p_v - ln q_v - KL) / T.
inline void accumulate_kl_grad(const PolicyParams& p, const Context& ctx, std::span<const double> ref_probs,
                               double coeff, Gradient& acc, double temperature = 1.0) {
  if (coeff == 0.0) return;
  auto feats = features(p.shape, ctx);
  auto probs = tempered_softmax(logits(p, feats), temperature);
  const double kl = kl_divergence(probs, ref_probs);
  std::vector<double> g(probs.size());
  for (std::size_t v = 0; v < g.size(); ++v)
    g[v] = probs[v] > 0.0 ? probs[v] * (std::log(probs[v]) - std::log(ref_probs[v]) - kl) / temperature : 0.0;
  detail::scatter(p, feats, g, coeff, acc);
}

/// theta += step * grad (ascent when step > 0).
inline void apply_gradient(PolicyParams& p, const Gradient& g, double step) {
  for (std::size_t i = 0; i < p.W.size(); ++i) p.W[i] += step * g.W[i];
  for (std::size_t i = 0; i < p.b.size(); ++i) p.b[i] += step * g.b[i];
  ++p.version;
}

// ---------------------------------------------------------------------------
// Supervised initialization

struct SftExample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;  // reference tokens followed by EOS
};

struct SftSchedule {
  double peak_lr = 5e-5;
  int warmup_steps = 15;
  int total_steps = 0;  // 0 => epochs * ceil(N / batch_size)
  int epochs = 3;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

struct SftLogEntry {
  int step;
  double lr;
  double loss;  // mean per-token NLL of the batch before the update
};

/// Linear warmup to the peak at step == warmup, then cosine decay reaching 0
/// at step == total. Steps are 1-based.
inline double sft_learning_rate(const SftSchedule& s, int step, int total) {
  if (s.warmup_steps > 0 && step < s.warmup_steps)
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  if (total <= s.warmup_steps) return s.peak_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(total - s.warmup_steps);
  return s.peak_lr * 0.5 * (1.0 + std::cos(M_PI * std::clamp(progress, 0.0, 1.0)));
}

inline int sft_total_steps(const SftSchedule& s, std::size_t n_examples) {
  if (s.total_steps > 0) return s.total_steps;
  const auto per_epoch = (n_examples + static_cast<std::size_t>(s.batch_size) - 1) / static_cast<std::size_t>(s.batch_size);
  return s.epochs * static_cast<int>(per_epoch);
}

/// Mean per-token NLL over the batch (gradient descent on it).
inline double batch_nll(const PolicyParams& p, std::span<const SftExample* const> batch) {
  double nll = 0.0;
  std::size_t n = 0;
  for (const auto* ex : batch) {
    for (double lp : sequence_logprobs(p, ex->prompt, ex->response)) nll -= lp;
    n += ex->response.size();
  }
  return n ? nll / static_cast<double>(n) : 0.0;
}

inline std::vector<SftLogEntry> train_sft(PolicyParams& p, std::span<const SftExample> data, const SftSchedule& s) {
  if (data.empty()) throw DomainError("SFT corpus is empty");
  if (s.batch_size < 1 || s.epochs < 1) throw DomainError("bad SFT schedule");
  const int total = sft_total_steps(s, data.size());
  Rng rng(s.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  Gradient grad(p);
  std::vector<SftLogEntry> log;
  log.reserve(static_cast<std::size_t>(total));
  for (int step = 1; step <= total; ++step) {
    std::vector<const SftExample*> batch;
    while (batch.size() < static_cast<std::size_t>(s.batch_size) && batch.size() < data.size()) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&data[order[cursor++]]);
    }
    std::size_t ntok = 0;
    for (const auto* ex : batch) ntok += ex->response.size();
    grad.clear();
    double nll = 0.0;
    for (const auto* ex : batch) {
      for (std::size_t t = 0; t < ex->response.size(); ++t) {
        Context ctx{ex->prompt, std::span<const TokenId>(ex->response).first(t)};
        auto feats = features(p.shape, ctx);
        auto probs = tempered_softmax(logits(p, feats), 1.0);
        const auto tok = static_cast<std::size_t>(ex->response[t]);
        nll -= std::log(probs[tok]);
        for (std::size_t v = 0; v < probs.size(); ++v) probs[v] = (v == tok ? 1.0 : 0.0) - probs[v];
        detail::scatter(p, feats, probs, 1.0 / static_cast<double>(ntok), grad);
      }
    }
    const double lr = sft_learning_rate(s, step, total);
    log.push_back({step, lr, nll / static_cast<double>(ntok)});
    apply_gradient(p, grad, lr);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary container.
//   magic "RTLGPOL\0" | u32 format version | i32 V, k, P, Lp, C | u64 vocab hash
//   | u64 params version | u64 |W| | f64 W[] | u64 |b| | f64 b[]

inline constexpr char kCheckpointMagic[8] = {'R', 'T', 'L', 'G', 'P', 'O', 'L', '\0'};
inline constexpr std::uint32_t kCheckpointFormat = 1;

namespace detail {
template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("truncated checkpoint");
  return v;
}
}  // namespace detail

inline void save_checkpoint(const PolicyParams& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write " + path);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put(os, kCheckpointFormat);
  detail::put(os, static_cast<std::int32_t>(p.shape.vocab_size));
  detail::put(os, static_cast<std::int32_t>(p.shape.context));
  detail::put(os, static_cast<std::int32_t>(p.shape.position_buckets));
  detail::put(os, static_cast<std::int32_t>(p.shape.prompt_window));
  detail::put(os, static_cast<std::int32_t>(p.shape.cross_buckets));
  detail::put(os, p.vocab_hash);
  detail::put(os, p.version);
  detail::put(os, static_cast<std::uint64_t>(p.W.size()));
  os.write(reinterpret_cast<const char*>(p.W.data()), static_cast<std::streamsize>(p.W.size() * sizeof(double)));
  detail::put(os, static_cast<std::uint64_t>(p.b.size()));
  os.write(reinterpret_cast<const char*>(p.b.data()), static_cast<std::streamsize>(p.b.size() * sizeof(double)));
  if (!os) throw CheckpointError("write failed: " + path);
}

/// Throws CheckpointError on a bad container and VocabMismatch when the
/// stored vocabulary hash differs from `expected_vocab_hash`.
class VocabMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline PolicyParams load_checkpoint(const std::string& path, std::uint64_t expected_vocab_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot read " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("not a policy checkpoint");
  if (detail::get<std::uint32_t>(is) != kCheckpointFormat) throw CheckpointError("unsupported checkpoint format");
  PolicyParams p;
  p.shape.vocab_size = detail::get<std::int32_t>(is);
  p.shape.context = detail::get<std::int32_t>(is);
  p.shape.position_buckets = detail::get<std::int32_t>(is);
  p.shape.prompt_window = detail::get<std::int32_t>(is);
  p.shape.cross_buckets = detail::get<std::int32_t>(is);
  if (p.shape.vocab_size < 1 || p.shape.context < 1 || p.shape.position_buckets < 1 || p.shape.prompt_window < 0 ||
      p.shape.cross_buckets < 0)
    throw CheckpointError("bad feature shape in checkpoint");
  p.vocab_hash = detail::get<std::uint64_t>(is);
  if (p.vocab_hash != expected_vocab_hash) throw VocabMismatch("checkpoint vocabulary hash mismatch");
  p.version = detail::get<std::uint64_t>(is);
  const auto nw = detail::get<std::uint64_t>(is);
  if (nw != p.shape.num_features() * p.V()) throw CheckpointError("weight matrix size mismatch");
  p.W.resize(nw);
  if (!is.read(reinterpret_cast<char*>(p.W.data()), static_cast<std::streamsize>(nw * sizeof(double))))
    throw CheckpointError("truncated checkpoint");
  const auto nb = detail::get<std::uint64_t>(is);
  if (nb != p.V()) throw CheckpointError("bias size mismatch");
  p.b.resize(nb);
  if (!is.read(reinterpret_cast<char*>(p.b.data()), static_cast<std::streamsize>(nb * sizeof(double))))
    throw CheckpointError("truncated checkpoint");
  if (!p.all_finite()) throw CheckpointError("non-finite parameters");
  return p;
}

}  // namespace rtlgate::policy
