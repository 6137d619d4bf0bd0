#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "acegfn/envs/dag.hpp"
#include "acegfn/envs/grid.hpp"
#include "acegfn/envs/sequence.hpp"
#include "acegfn/exact.hpp"
#include "acegfn/sampling.hpp"
#include "oracles.hpp"

using namespace acegfn;
namespace t = acegfn::testing;

namespace {

envs::DagEnv chain() { return envs::DagEnv({{1}, {2}, {}}, {0.0, 0.0, 0.0}); }
envs::DagEnv two_leaves() { return envs::DagEnv({{1, 2}, {}, {}}, {0.0, 0.0, 0.0}); }
envs::DagEnv diamond() { return envs::DagEnv({{1, 2}, {3}, {3}, {}}, {0.0, 0.0, 0.0, 0.0}); }
envs::DagEnv binary_tree() { return envs::DagEnv({{1, 2}, {3, 4}, {5, 6}, {}, {}, {}, {}}, std::vector<double>(7, 0.0)); }

// Upper chi-square quantile at p = 0.001 (Wilson-Hilferty).
double chi2_critical(int df) {
  const double z = 3.090232306;
  const double c = 2.0 / (9.0 * df);
  return df * std::pow(1.0 - c + z * std::sqrt(c), 3.0);
}

}  // namespace

TEST(SampleTrajectory, ChainHasUnitProbability) {
  const auto env = chain();
  Rng rng(1);
  MlpPolicy p = t::tabular_policy(env);
  for (double eps : {0.0, 0.4, 1.0}) {
    const auto tr = sample_trajectory(env, p, eps, rng);
    EXPECT_EQ(tr.actions, (std::vector<int>{1, 2}));
    EXPECT_EQ(tr.log_pf, 0.0);
    EXPECT_EQ(tr.log_pb, 0.0);
  }
}

TEST(SampleTrajectory, FullEpsilonIsUniform) {
  const auto env = two_leaves();
  MlpPolicy p = t::tabular_policy(env);
  t::tabular_logit(p, 0, 1) = 5.0;
  Rng rng(2);
  int first = 0;
  const int n = 10000;
  for (const auto& tr : sample_trajectories(env, p, 1.0, n, rng)) first += tr.terminal() == 1;
  EXPECT_NEAR(first / double(n), 0.5, 3.0 * std::sqrt(0.25 / n));
}

TEST(SampleTrajectory, SoftmaxFrequencies) {
  const auto env = two_leaves();
  MlpPolicy p = t::tabular_policy(env);
  t::tabular_logit(p, 0, 1) = std::log(3.0);
  Rng rng(3);
  int first = 0;
  const int n = 10000;
  for (const auto& tr : sample_trajectories(env, p, 0.0, n, rng)) {
    first += tr.terminal() == 1;
    EXPECT_NEAR(tr.log_pf, tr.terminal() == 1 ? std::log(0.75) : std::log(0.25), 1e-12);
  }
  EXPECT_NEAR(first / double(n), 0.75, 3.0 * std::sqrt(0.75 * 0.25 / n));
}

TEST(SampleTrajectory, ForwardLogProbabilityIsFinite) {
  Rng rng(4);
  const envs::GridWorldEnv env(5, 2);
  MlpPolicy p({env.feature_dim(), 16, env.action_count()}, Activation::kLeakyRelu);
  p.initialize(rng);
  for (const auto& tr : sample_trajectories(env, p, 0.0, 200, rng)) {
    const double lp = log_prob_forward(env, p, tr);
    EXPECT_TRUE(std::isfinite(lp));
    EXPECT_NEAR(lp, tr.log_pf, 1e-10);
    EXPECT_NEAR(tr.log_pb, uniform_log_pb(env, tr), 1e-15);
  }
}

TEST(SampleTrajectory, EpsilonMixtureLogProbMatchesReference) {
  Rng rng(5);
  const envs::GridWorldEnv env(3, 2);
  MlpPolicy p({env.feature_dim(), 8, env.action_count()}, Activation::kLeakyRelu);
  p.initialize(rng);
  for (const auto& tr : sample_trajectories(env, p, 0.3, 100, rng))
    EXPECT_NEAR(tr.log_pf, t::ref_log_pf(env, p, tr, 0.3), 1e-12);
}

TEST(SampleTrajectory, RejectsBadEpsilonAndShapes) {
  const auto env = two_leaves();
  Rng rng(6);
  MlpPolicy p = t::tabular_policy(env);
  EXPECT_THROW(sample_trajectory(env, p, 1.5, rng), ConfigError);
  MlpPolicy wrong({2, 3}, Activation::kRelu);
  EXPECT_THROW(sample_trajectory(env, wrong, 0.0, rng), ConfigError);
}

TEST(SampleTrajectory, NoAllowedActionIsMalformed) {
  // Grid with the stop action masked: the far corner is non-terminal with
  // nothing allowed.
  struct Stuck : envs::GridWorldEnv {
    using GridWorldEnv::GridWorldEnv;
    ActionMask allowed_actions(const State& s) const {
      ActionMask m = GridWorldEnv::allowed_actions(s);
      m[stop_action()] = 0;
      return m;
    }
  };
  const Stuck env(1, 1);
  Rng rng(7);
  MlpPolicy p({env.feature_dim(), env.action_count()}, Activation::kRelu);
  EXPECT_THROW(sample_trajectory(env, p, 0.0, rng), MalformedEnvironment);
}

TEST(SampleTrajectory, TerminalFrequenciesPassChiSquare) {
  Rng rng(8);
  const envs::GridWorldEnv env(3, 2);
  MlpPolicy p({env.feature_dim(), 16, env.action_count()}, Activation::kLeakyRelu);
  p.initialize(rng);
  const double eps = 0.1;
  const auto exact = exact_marginal(env, p, eps);
  ASSERT_LE(exact.size(), 50u);
  const int n = 100000;
  std::map<StateKey, int> counts;
  for (const auto& tr : sample_trajectories(env, p, eps, n, rng)) ++counts[env.key(tr.terminal())];
  double chi2 = 0.0;
  for (const auto& [k, q] : exact) {
    const double e = n * q;
    const double o = counts.count(k) ? counts[k] : 0;
    chi2 += (o - e) * (o - e) / e;
  }
  EXPECT_LT(chi2, chi2_critical(static_cast<int>(exact.size()) - 1));
}

TEST(SampleBackward, TreeHasUniqueParentChain) {
  const envs::BitSequenceEnv env(envs::BitSequenceReward(6, 1, 4));
  Rng rng(9);
  const std::vector<std::uint8_t> x{1, 0, 1, 1, 0, 0};
  const auto tr = sample_backward(env, nullptr, x, rng);
  EXPECT_EQ(tr.log_pb, 0.0);
  EXPECT_EQ(tr.actions, (std::vector<int>{1, 0, 1, 1, 0, 0}));
  EXPECT_EQ(tr.states.front().size(), 0u);
}

TEST(SampleBackward, TwoParentsEquallyLikely) {
  const auto env = diamond();
  Rng rng(10);
  const int n = 10000;
  int via1 = 0;
  for (int i = 0; i < n; ++i) {
    const auto tr = sample_backward(env, nullptr, 3, rng);
    EXPECT_NEAR(tr.log_pb, std::log(0.5), 1e-15);
    via1 += tr.states[1] == 1;
  }
  EXPECT_NEAR(via1 / double(n), 0.5, 3.0 * std::sqrt(0.25 / n));
}

TEST(SampleBackward, GridCornerHasTwoTrajectories) {
  const envs::GridWorldEnv env(4, 2);
  Rng rng(11);
  std::set<std::vector<int>> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto tr = sample_backward(env, nullptr, envs::GridWorldEnv::State{{1, 1}, true}, rng);
    EXPECT_NO_THROW(validate_trajectory(env, tr));
    seen.insert(tr.actions);
  }
  EXPECT_EQ(seen.size(), 2u);
}

TEST(SampleBackward, RejectsNonTerminalAndUnreachable) {
  const envs::GridWorldEnv env(4, 2);
  Rng rng(12);
  EXPECT_THROW(sample_backward(env, nullptr, envs::GridWorldEnv::State{{1, 1}, false}, rng), InvalidTrajectory);
  // Terminal 2 reports no parents although it is not the root.
  struct Orphan : envs::DagEnv {
    using DagEnv::DagEnv;
    std::vector<std::pair<State, int>> parent_actions(const State& s) const {
      if (s == 2) return {};
      return DagEnv::parent_actions(s);
    }
  };
  const Orphan orphan({{1, 2}, {}, {}}, {0.0, 0.0, 0.0});
  EXPECT_THROW(sample_backward(orphan, nullptr, 2, rng), UnreachableState);
}

TEST(LogProb, Examples) {
  const auto c = chain();
  Trajectory<int> tc;
  tc.states = {0, 1, 2};
  tc.actions = {1, 2};
  EXPECT_EQ(log_prob_forward(c, t::tabular_policy(c), tc), 0.0);

  const auto b = binary_tree();
  Trajectory<int> tb;
  tb.states = {0, 2, 5};
  tb.actions = {2, 5};
  EXPECT_NEAR(log_prob_forward(b, t::tabular_policy(b), tb), 2.0 * std::log(0.5), 1e-15);
}

TEST(LogProb, DisallowedActionIsInvalid) {
  const auto b = binary_tree();
  Trajectory<int> bad;
  bad.states = {0, 3};
  bad.actions = {3};
  EXPECT_THROW(log_prob_forward(b, t::tabular_policy(b), bad), InvalidTrajectory);
}

TEST(LogProb, LearnedBackwardMatchesReference) {
  Rng rng(13);
  const envs::GridWorldEnv env(3, 2);
  MlpPolicy f({env.feature_dim(), 8, env.action_count()}, Activation::kLeakyRelu);
  MlpPolicy bk({env.feature_dim(), 8, env.action_count()}, Activation::kLeakyRelu);
  f.initialize(rng);
  bk.initialize(rng);
  for (const auto& tr : sample_trajectories(env, f, 0.0, 50, rng)) {
    EXPECT_NEAR(log_prob_backward(env, &bk, tr), t::ref_log_pb(env, bk, tr), 1e-12);
    EXPECT_NEAR(log_prob_backward(env, nullptr, tr), tr.log_pb, 0.0);
  }
}

TEST(ExactMarginal, ChainAndFork) {
  const auto c = chain();
  const auto mc = exact_marginal(c, t::tabular_policy(c));
  ASSERT_EQ(mc.size(), 1u);
  EXPECT_NEAR(mc.begin()->second, 1.0, 1e-15);

  const auto f = two_leaves();
  MlpPolicy p = t::tabular_policy(f);
  t::tabular_logit(p, 0, 1) = std::log(0.3);
  t::tabular_logit(p, 0, 2) = std::log(0.7);
  const auto mf = exact_marginal(f, p);
  EXPECT_NEAR(mf.at(f.key(1)), 0.3, 1e-15);
  EXPECT_NEAR(mf.at(f.key(2)), 0.7, 1e-15);
}

TEST(ExactMarginal, IsADistributionAndMatchesBruteForce) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const auto env = t::random_dag(rng, 2 + static_cast<int>(rng.below(5)), 2 + static_cast<int>(rng.below(4)));
    MlpPolicy p = t::tabular_policy(env);
    for (double& w : p.params()) w = 2.0 * rng.normal();
    const double eps = trial % 2 ? 0.2 : 0.0;
    const auto m = exact_marginal(env, p, eps);
    const auto ref = t::brute_force_marginal(env, p, eps);
    double s = 0.0;
    for (const auto& [k, v] : m) {
      EXPECT_GE(v, 0.0);
      EXPECT_NEAR(v, ref.at(k), 1e-10);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  const envs::GridWorldEnv grid(4, 2);
  MlpPolicy g({grid.feature_dim(), 12, grid.action_count()}, Activation::kLeakyRelu);
  g.initialize(rng);
  const auto m = exact_marginal(grid, g);
  const auto ref = t::brute_force_marginal(grid, g);
  ASSERT_EQ(m.size(), 25u);
  for (const auto& [k, v] : m) EXPECT_NEAR(v, ref.at(k), 1e-10);
}

TEST(ExactMarginal, CapIsEnforced) {
  const envs::GridWorldEnv grid(8, 2);
  MlpPolicy g({grid.feature_dim(), grid.action_count()}, Activation::kRelu);
  EXPECT_THROW(exact_marginal(grid, g, 0.0, 10), EnumerationTooLarge);
}
