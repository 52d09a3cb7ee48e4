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

#include <gtest/gtest.h>

#include <sstream>

#include "rtlgate/rlcore.hpp"

namespace {

using namespace rtlgate;
using namespace rtlgate::rlcore;
using policy::FeatureShape;

constexpr double kInf = std::numeric_limits<double>::infinity();

TEST(Threshold, NearestRank) {
  std::vector<double> h{0.0, 0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(entropy_threshold(h, 0.8), 0.3);
  EXPECT_EQ(entropy_threshold(h, 0.0), -kInf);
  std::vector<double> shuffled{0.3, 0.0, 0.4, 0.2, 0.1};
  EXPECT_EQ(entropy_threshold(shuffled, 0.8), 0.3);
  std::vector<double> same(7, 0.42);
  for (double rho : {0.1, 0.5, 0.9}) {
    EXPECT_EQ(entropy_threshold(same, rho), 0.42);
    for (double m : entropy_mask(same, entropy_threshold(same, rho))) EXPECT_EQ(m, 1.0);
  }
  EXPECT_THROW(entropy_threshold(std::vector<double>{}, 0.5), std::invalid_argument);
  EXPECT_THROW(entropy_threshold(h, 1.0), std::invalid_argument);
  // 0.7 * 10 rounds to 7.000000000000001 in binary
  std::vector<double> ten{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_EQ(entropy_threshold(ten, 0.7), 6.0);
}

TEST(Mask, DefinitionAndCardinality) {
  std::vector<double> h{0.0, 0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(entropy_mask(h, 0.3), (std::vector<double>{0, 0, 0, 1, 1}));
  for (double m : entropy_mask(h, -kInf)) EXPECT_EQ(m, 1.0);
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t T = 1 + rng.below(200);
    std::vector<double> e(T);
    for (std::size_t t = 0; t < T; ++t) e[t] = static_cast<double>(t) * 0.01 + rng.uniform(0, 0.001);
    rng.shuffle(e);
    const double rho = rng.uniform(0.0, 0.999);
    auto m = entropy_mask(e, entropy_threshold(e, rho));
    const auto sel = static_cast<std::size_t>(std::accumulate(m.begin(), m.end(), 0.0));
    ASSERT_EQ(sel, T - static_cast<std::size_t>(std::ceil(rho * static_cast<double>(T) - 1e-9)) + (rho > 0 ? 1 : 0))
        << "T=" << T << " rho=" << rho;
  }
  std::vector<double> hundred(100);
  std::iota(hundred.begin(), hundred.end(), 0.0);
  auto m = entropy_mask(hundred, entropy_threshold(hundred, 0.8));
  EXPECT_EQ(std::accumulate(m.begin(), m.end(), 0.0), 21.0);
}

TEST(Archer, Weights) {
  EXPECT_EQ(archer_weights(std::vector<double>{0.2, 0.4}), (std::vector<double>{0.5, 1.0}));
  EXPECT_EQ(archer_weights(std::vector<double>{0, 0, 0}), (std::vector<double>{1, 1, 1}));
  auto w = archer_weights(std::vector<double>{0.3, 1.7, 0.9});
  EXPECT_EQ(w[1], 1.0);
}

TEST(Advantages, HandValues) {
  auto a = group_advantages(std::vector<double>{1, 1, 0, 0, 0, 0});
  const double s = std::sqrt(2.0);
  std::vector<double> expect{s, s, -s / 2, -s / 2, -s / 2, -s / 2};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a[i], expect[i], 1e-7);
  auto b = group_advantages(std::vector<double>{1, 0});
  EXPECT_NEAR(b[0], 1.0, 1e-7);
  EXPECT_NEAR(b[1], -1.0, 1e-7);
  EXPECT_THROW(group_advantages(std::vector<double>{0.5, 0.5, 0.5}), DegenerateGroup);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> r(2 + rng.below(8));
    for (auto& x : r) x = rng.uniform();
    auto adv = group_advantages(r);
    const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
    EXPECT_NEAR(std::accumulate(adv.begin(), adv.end(), 0.0), 0.0, 1e-9);
    for (std::size_t j = 0; j < r.size(); ++j)
      if (r[j] != mean) {
        EXPECT_EQ(adv[j] > 0, r[j] > mean);
      }
  }
}

Group pass_group(std::vector<bool> passes) {
  Group g;
  g.rollouts.resize(passes.size());
  g.rewards.resize(passes.size());
  for (std::size_t i = 0; i < passes.size(); ++i) g.rewards[i] = passes[i] ? 1.0 : 0.0;
  g.passes = std::move(passes);
  return g;
}

TEST(Filter, MixedGroupsOnly) {
  std::vector<Group> gs;
  gs.push_back(pass_group({false, false, false, false, false, false}));
  gs.push_back(pass_group({true, true, true, true, true, true}));
  gs.push_back(pass_group({true, false, false, false, false, false}));
  gs.push_back(pass_group({true, true, false, false, false, true}));
  auto kept = filter_groups(gs);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].pass_count(), 1);
  EXPECT_EQ(kept[1].pass_count(), 3);
  for (const auto& g : kept) EXPECT_NO_THROW(group_advantages(g.rewards));
}

TEST(Kl, Values) {
  EXPECT_NEAR(policy::kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}), std::log(2.0), 1e-15);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> z1(6), z2(6);
    for (auto& x : z1) x = rng.uniform(-4, 4);
    for (auto& x : z2) x = rng.uniform(-4, 4);
    auto p = policy::tempered_softmax(z1, 1.0), q = policy::tempered_softmax(z2, 1.0);
    ASSERT_GE(policy::kl_divergence(p, q), -1e-12);
    ASSERT_NEAR(policy::kl_divergence(p, p), 0.0, 1e-15);
  }
}

// Random small batch sampled from `old`.
std::vector<Group> random_batch(const PolicyParams& old, Rng& rng, int G, int ngroups, int max_len) {
  const int V = old.shape.vocab_size;
  std::vector<Group> gs;
  for (int gi = 0; gi < ngroups; ++gi) {
    Group g;
    std::vector<TokenId> prompt(1 + rng.below(4));
    for (auto& t : prompt) t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(V)));
    for (int i = 0; i < G; ++i) {
      g.rollouts.push_back(policy::sample_rollout(old, prompt, 1.0, 1 + rng.below(static_cast<std::uint64_t>(max_len)), 0, rng));
      g.rewards.push_back(rng.uniform());
      g.passes.push_back(i == 0);
    }
    g.advantages = group_advantages(g.rewards);
    gs.push_back(std::move(g));
  }
  return gs;
}

PolicyParams jitter(PolicyParams p, Rng& rng, double scale) {
  for (auto& w : p.W) w += rng.uniform(-scale, scale);
  for (auto& b : p.b) b += rng.uniform(-scale, scale);
  return p;
}

PolicyParams random_policy(FeatureShape s, Rng& rng, double scale) {
  auto p = policy::init_params(s, 0, rng.next_u64());
  return jitter(p, rng, scale);
}

Gradient assembled(std::span<const Group> gs, const PolicyParams& theta, const PolicyParams& ref,
                   const ObjectiveSpec& spec) {
  auto c = per_token_coefficients(gs, batch_logprobs(gs, theta, spec.temperature), spec);
  Gradient g(theta);
  accumulate_objective_grad(gs, c, theta, ref, spec, g);
  return g;
}

TEST(Coefficients, RatioIdentityAndClipExample) {
  Rng rng(12);
  auto old = random_policy(FeatureShape{6, 2, 8, 2}, rng, 1.0);
  auto gs = random_batch(old, rng, 3, 2, 8);
  ObjectiveSpec spec;
  spec.gate = GateMode::Mask;
  spec.rho = 0.5;
  auto c = per_token_coefficients(gs, batch_logprobs(gs, old, 1.0), spec);
  EXPECT_EQ(c.clip_rate, 0.0);
  for (std::size_t g = 0; g < gs.size(); ++g)
    for (std::size_t i = 0; i < gs[g].rollouts.size(); ++i)
      for (std::size_t t = 0; t < gs[g].rollouts[i].size(); ++t) {
        EXPECT_EQ(c.terms[g][i].ratio[t], 1.0);
        EXPECT_DOUBLE_EQ(c.terms[g][i].coeff[t],
                         c.terms[g][i].gate[t] * gs[g].advantages[i] / static_cast<double>(c.num_tokens));
      }
  // r = 1.5 with A > 0: the clipped branch 1.28 A is the minimum
  Group one;
  policy::Rollout r;
  r.prompt = {1};
  r.response = {2};
  r.logprobs = {std::log(0.2)};
  r.entropies = {0.5};
  one.rollouts = {r};
  one.advantages = {1.0};
  std::vector<std::vector<std::vector<double>>> cur{{{std::log(0.3)}}};
  ObjectiveSpec none;
  none.gate = GateMode::None;
  auto cc = per_token_coefficients(std::span<const Group>(&one, 1), cur, none);
  EXPECT_NEAR(cc.terms[0][0].ratio[0], 1.5, 1e-12);
  EXPECT_TRUE(cc.terms[0][0].clipped[0]);
  EXPECT_EQ(cc.terms[0][0].coeff[0], 0.0);
  EXPECT_NEAR(cc.terms[0][0].surrogate[0], 1.28, 1e-12);
  EXPECT_EQ(cc.clip_rate, 1.0);
  // same ratio, negative advantage: unclipped branch is the minimum
  one.advantages = {-1.0};
  auto cn = per_token_coefficients(std::span<const Group>(&one, 1), cur, none);
  EXPECT_FALSE(cn.terms[0][0].clipped[0]);
  EXPECT_NEAR(cn.terms[0][0].coeff[0], -1.5, 1e-12);
}

TEST(Coefficients, SurrogateMatchesLiteralMin) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    auto old = random_policy(FeatureShape{7, 2, 8, 2}, rng, 1.0);
    auto theta = jitter(old, rng, 0.4);
    auto gs = random_batch(old, rng, 3, 2, 10);
    ObjectiveSpec spec;
    auto cur = batch_logprobs(gs, theta, 1.0);
    auto c = per_token_coefficients(gs, cur, spec);
    for (std::size_t g = 0; g < gs.size(); ++g)
      for (std::size_t i = 0; i < gs[g].rollouts.size(); ++i)
        for (std::size_t t = 0; t < gs[g].rollouts[i].size(); ++t) {
          const double r = std::exp(cur[g][i][t] - gs[g].rollouts[i].logprobs[t]);
          const double A = gs[g].advantages[i];
          const double lit = std::min(r * A, std::clamp(r, 0.8, 1.28) * A);
          ASSERT_NEAR(c.terms[g][i].surrogate[t], lit, 1e-12);
          if (A > 0) {
            ASSERT_LE(c.terms[g][i].surrogate[t], 1.28 * A + 1e-12);
          }
        }
  }
}

TEST(Objective, TrivialValues) {
  Rng rng(5);
  auto old = random_policy(FeatureShape{8, 2, 8, 2}, rng, 1.0);
  auto gs = random_batch(old, rng, 3, 3, 10);
  ObjectiveSpec spec;
  spec.beta = 0.0;
  auto c = per_token_coefficients(gs, batch_logprobs(gs, old, 1.0), spec);
  double expect = 0.0;
  for (std::size_t g = 0; g < gs.size(); ++g)
    for (std::size_t i = 0; i < gs[g].rollouts.size(); ++i)
      for (double gate : c.terms[g][i].gate) expect += gate * gs[g].advantages[i];
  EXPECT_NEAR(objective_value(gs, old, old, spec), expect / static_cast<double>(c.num_tokens), 1e-12);
  for (auto& g : gs) std::fill(g.advantages.begin(), g.advantages.end(), 0.0);
  auto theta = jitter(old, rng, 0.3);
  EXPECT_EQ(objective_value(gs, theta, old, spec), 0.0);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  // 50 random instances: V <= 30, k <= 3, |o| <= 12, G in {2, 3}
  Rng rng(2024);
  const double h = 1e-5;
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const int V = 3 + static_cast<int>(rng.below(28));
    const int k = 1 + static_cast<int>(rng.below(3));
    auto old = random_policy(FeatureShape{V, k, 8, 2}, rng, 1.0);
    auto theta = jitter(old, rng, 0.3);
    auto ref = jitter(old, rng, 0.5);
    auto gs = random_batch(old, rng, 2 + static_cast<int>(rng.below(2)), 1 + static_cast<int>(rng.below(2)), 12);
    ObjectiveSpec spec;
    spec.gate = inst % 3 == 0 ? GateMode::Archer : GateMode::Mask;
    spec.rho = rng.uniform(0.0, 0.95);
    spec.beta = rng.uniform(0.0, 0.5);
    spec.kl_gated = inst % 5 == 0;
    auto g = assembled(gs, theta, ref, spec);
    // coordinates on rows the batch touches, plus the bias
    std::vector<std::size_t> rows;
    for (const auto& grp : gs)
      for (const auto& r : grp.rollouts)
        for (std::size_t t = 0; t < r.size(); ++t)
          for (std::size_t f : policy::features(theta.shape, {r.prompt, std::span<const TokenId>(r.response).first(t)}))
            rows.push_back(f);
    for (int n = 0; n < 20; ++n) {
      const std::size_t i = rng.coin(0.8) ? rows[rng.below(rows.size())] * theta.V() + rng.below(theta.V())
                                          : theta.W.size() + rng.below(theta.V());
      auto plus = theta, minus = theta;
      plus.param(i) += h;
      minus.param(i) -= h;
      const double fd = (objective_value(gs, plus, ref, spec) - objective_value(gs, minus, ref, spec)) / (2 * h);
      const double an = g.at(i);
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, rel);
      ASSERT_LE(rel, 1e-4) << "instance " << inst << " coord " << i << " fd " << fd << " analytic " << an;
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Objective, GatedOutTokensContributeNothing) {
  Rng rng(8);
  auto old = random_policy(FeatureShape{9, 2, 8, 2}, rng, 1.0);
  auto gs = random_batch(old, rng, 3, 2, 10);
  ObjectiveSpec spec;
  spec.beta = 0.0;
  auto c = per_token_coefficients(gs, batch_logprobs(gs, old, 1.0), spec);
  for (std::size_t g = 0; g < gs.size(); ++g)
    for (std::size_t i = 0; i < gs[g].rollouts.size(); ++i)
      for (std::size_t t = 0; t < gs[g].rollouts[i].size(); ++t)
        if (c.terms[g][i].gate[t] != 0.0) c.terms[g][i].coeff[t] = 0.0;
  Gradient acc(old);
  accumulate_objective_grad(gs, c, old, old, spec, acc);
  EXPECT_TRUE(acc.is_zero());
}

TEST(Objective, EarlAtZeroEqualsDapoAndGrpoReduction) {
  Rng rng(77);
  for (int inst = 0; inst < 20; ++inst) {
    auto old = random_policy(FeatureShape{10, 2, 8, 3}, rng, 1.0);
    auto theta = jitter(old, rng, 0.3);
    auto ref = jitter(old, rng, 0.3);
    auto gs = random_batch(old, rng, 3, 2, 12);
    RlConfig c;
    c.beta = 0.05;
    c.rho = 0.0;
    c.variant = Variant::Earl;
    auto earl = objective_spec(c);
    c.variant = Variant::Dapo;
    auto dapo = objective_spec(c);
    EXPECT_EQ(objective_value(gs, theta, ref, earl), objective_value(gs, theta, ref, dapo));
    EXPECT_EQ(assembled(gs, theta, ref, earl).W, assembled(gs, theta, ref, dapo).W);
    c.eps_high = c.eps_low;
    auto dapo_sym = objective_spec(c);
    c.variant = Variant::Grpo;
    c.eps_high = 0.5;  // ignored by grpo
    auto grpo = objective_spec(c);
    EXPECT_EQ(grpo.eps_high, grpo.eps_low);
    EXPECT_EQ(grpo.gate, GateMode::None);
    EXPECT_EQ(objective_value(gs, theta, ref, grpo), objective_value(gs, theta, ref, dapo_sym));
    EXPECT_EQ(assembled(gs, theta, ref, grpo).W, assembled(gs, theta, ref, dapo_sym).W);
  }
}

TEST(Config, Validation) {
  RlConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = [](auto mutate) {
    RlConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](RlConfig& c) { c.group_size = 1; });
  bad([](RlConfig& c) { c.eps_low = 0; });
  bad([](RlConfig& c) { c.rho = 1.0; });
  bad([](RlConfig& c) { c.lr = std::nan(""); });
  bad([](RlConfig& c) { c.temperature = 0; });
  EXPECT_EQ(variant_from_string("ppo-baseline"), Variant::PpoBaseline);
  EXPECT_THROW(variant_from_string("reinforce"), ConfigError);
  EXPECT_EQ(gate_from_string("archer"), GateMode::Archer);
}

// Small end-to-end fixture: lightly supervised policy on easy combinational tasks.
struct Fixture {
  taskgen::Corpus corpus;
  std::vector<const taskgen::Task*> train;
  PolicyParams sft;

  Fixture() {
    taskgen::CorpusConfig cc;
    cc.counts[{taskgen::Kind::Combinational, taskgen::Difficulty::Easy}] = 12;
    cc.seed = 3;
    corpus = taskgen::build_corpus(cc);
    train = corpus.split(taskgen::Split::Train);
    const auto& vocab = minirtl::Vocab::minirtl();
    std::vector<policy::SftExample> data;
    for (const auto* t : train) {
      auto resp = minirtl::tokenize(t->reference_text, vocab);
      resp.push_back(minirtl::id_of(minirtl::Tk::Eos));
      data.push_back({t->prompt_tokens, resp});
    }
    sft = policy::init_params(FeatureShape{static_cast<int>(vocab.size()), 4, 8, 48, 4096}, vocab.hash(), 0);
    policy::SftSchedule s;
    s.peak_lr = 2.0;
    s.total_steps = 150;
    s.batch_size = 4;
    policy::train_sft(sft, data, s);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

RlConfig small_rl(Variant v, double rho) {
  RlConfig c;
  c.variant = v;
  c.rho = rho;
  c.steps = 6;
  c.batch_size = 3;
  c.group_size = 4;
  c.lr = 2.0;
  c.max_len = 48;
  c.max_resample = 2;
  c.seed = 11;
  return c;
}

std::string csv(const RlResult& r) {
  std::ostringstream os;
  write_metrics_csv(os, r.metrics);
  return os.str();
}

TEST(TrainRl, EarlAtZeroReproducesDapoStepForStep) {
  const auto& f = fixture();
  auto a = f.sft, b = f.sft;
  auto ra = train_rl(small_rl(Variant::Earl, 0.0), a, f.train);
  auto rb = train_rl(small_rl(Variant::Dapo, 0.0), b, f.train);
  EXPECT_EQ(csv(ra), csv(rb));
  EXPECT_EQ(a.W, b.W);
  int retained = 0;
  for (const auto& m : ra.metrics) retained += m.retained_groups;
  EXPECT_GT(retained, 0) << "fixture never produced a mixed group";
}

TEST(TrainRl, DeterministicAcrossWorkerCounts) {
  const auto& f = fixture();
  auto a = f.sft, b = f.sft;
  auto ca = small_rl(Variant::Earl, 0.8), cb = ca;
  cb.workers = 3;
  auto ra = train_rl(ca, a, f.train);
  auto rb = train_rl(cb, b, f.train);
  EXPECT_EQ(csv(ra), csv(rb));
  EXPECT_EQ(a.W, b.W);
  for (const auto& m : ra.metrics) {
    EXPECT_GE(m.mean_reward, 0.0);
    EXPECT_LE(m.pass_rate, 1.0);
    EXPECT_EQ(m.clip_rate, 0.0);
    EXPECT_GE(m.mean_kl, -1e-12);
    if (m.retained_groups > 0) {
      EXPECT_GT(m.gated_fraction, 0.0);
      EXPECT_LT(m.gated_fraction, 0.5);
    }
  }
  EXPECT_EQ(csv(ra).substr(0, csv(ra).find('\n')), kMetricsHeader);
}

TEST(TrainRl, UntrainablePolicySkipsSteps) {
  const auto& f = fixture();
  const auto& vocab = minirtl::Vocab::minirtl();
  auto p = policy::init_params(FeatureShape{static_cast<int>(vocab.size()), 4, 8, 48}, vocab.hash(), 0);
  auto c = small_rl(Variant::Earl, 0.8);
  c.steps = 2;
  c.max_len = 8;
  auto before = p.W;
  auto r = train_rl(c, p, f.train);
  EXPECT_EQ(r.skipped_steps, 2);
  for (const auto& m : r.metrics) EXPECT_EQ(m.retained_groups, 0);
  EXPECT_EQ(p.W, before);
}

}  // namespace
