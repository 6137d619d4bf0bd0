#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "acegfn/envs/dag.hpp"
#include "acegfn/envs/grid.hpp"
#include "acegfn/trainer.hpp"
#include "oracles.hpp"

using namespace acegfn;
namespace t = acegfn::testing;

namespace {

const Method kAll[] = {Method::kAce, Method::kTb, Method::kAt, Method::kSa};

envs::DagEnv two_terminals() { return envs::DagEnv({{1, 2}, {}, {}}, {0.0, 0.0, std::log(3.0)}); }

// Two layers with shared children, so backward sampling has real choices.
envs::DagEnv small_dag() {
  return envs::DagEnv({{1, 2}, {3, 4}, {4, 5}, {}, {}, {}}, {0.0, 0.0, 0.0, std::log(2.0), 0.0, std::log(5.0)});
}

TrainConfig small_config(Method m, long iterations) {
  TrainConfig c = default_config("grid", m);
  c.iterations = iterations;
  c.batch_size = 8;
  c.eval_every = 5;
  c.hidden = {16};
  return c;
}

std::string csv_of(const MetricLog& log) {
  std::ostringstream os;
  write_csv(os, log);
  return os.str();
}

std::vector<double> all_params(const GFlowNetPair& p, Method m) {
  std::vector<double> v = p.canonical.forward.params();
  v.push_back(p.canonical.log_z.value);
  if (two_samplers(m)) {
    v.insert(v.end(), p.exploration.forward.params().begin(), p.exploration.forward.params().end());
    v.push_back(p.exploration.log_z.value);
  }
  return v;
}

}  // namespace

TEST(Trainer, ZeroIterationsLeaveParametersUntouched) {
  const auto env = small_dag();
  for (Method m : kAll) {
    Trainer<envs::DagEnv> fresh(env, small_config(m, 0));
    Trainer<envs::DagEnv> tr(env, small_config(m, 0));
    EXPECT_TRUE(tr.run().empty());
    EXPECT_EQ(tr.trajectories_consumed(), 0);
    EXPECT_EQ(all_params(tr.pair(), m), all_params(fresh.pair(), m));
  }
}

TEST(Trainer, EqualBudgetAcrossMethods) {
  const auto env = small_dag();
  for (Method m : kAll) {
    for (int batch : {7, 8}) {
      auto cfg = small_config(m, 20);
      cfg.batch_size = batch;
      cfg.eval_every = 3;
      Trainer<envs::DagEnv> tr(env, cfg);
      const auto& log = tr.run();
      EXPECT_EQ(tr.trajectories_consumed(), 20L * batch) << to_string(m);
      long last = 0;
      for (const auto& r : log) {
        EXPECT_EQ(r.trajectories_consumed, r.iteration * batch);
        EXPECT_GE(r.trajectories_consumed, last);
        last = r.trajectories_consumed;
      }
    }
  }
}

TEST(Trainer, RecordsAtEvalCadenceAndFinalIteration) {
  auto cfg = small_config(Method::kTb, 20);
  cfg.eval_every = 7;
  const auto log = train_tb(cfg, small_dag());
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[0].iteration, 7);
  EXPECT_EQ(log[1].iteration, 14);
  EXPECT_EQ(log[2].iteration, 20);
}

TEST(Trainer, MethodSpecificColumns) {
  const auto env = small_dag();
  for (Method m : kAll) {
    const auto log = train(env, small_config(m, 5));
    ASSERT_EQ(log.size(), 1u);
    const auto& r = log.back();
    EXPECT_EQ(r.w.has_value(), m == Method::kAce);
    EXPECT_EQ(r.log_z_div.has_value(), m == Method::kAce);
    EXPECT_EQ(r.mean_loss_exploration.has_value(), m != Method::kTb);
    EXPECT_TRUE(r.tv.has_value());
    EXPECT_GT(r.unique_terminals, 0);
    if (r.w) {
      EXPECT_NEAR(*r.w, 1.0 / (1.0 + std::exp(r.log_z_div.value() - r.log_z)), 1e-12);
    }
  }
}

TEST(Trainer, WrongEntryPointRejected) {
  const auto env = small_dag();
  EXPECT_THROW(train_tb(small_config(Method::kAce, 1), env), ConfigError);
  EXPECT_THROW(train_ace(small_config(Method::kSa, 1), env), ConfigError);
  EXPECT_THROW(train_at(small_config(Method::kTb, 1), env), ConfigError);
  EXPECT_THROW(train_sa(small_config(Method::kAt, 1), env), ConfigError);
  auto bad = small_config(Method::kAce, 1);
  bad.alpha = -1.0;
  EXPECT_THROW(Trainer<envs::DagEnv>(env, bad), ConfigError);
}

TEST(Trainer, SameSeedGivesIdenticalRuns) {
  const auto env = small_dag();
  for (Method m : kAll) {
    Trainer<envs::DagEnv> a(env, small_config(m, 25)), b(env, small_config(m, 25));
    EXPECT_EQ(csv_of(a.run()), csv_of(b.run())) << to_string(m);
    EXPECT_EQ(all_params(a.pair(), m), all_params(b.pair(), m));
    auto other = small_config(m, 25);
    other.seed = 43;
    Trainer<envs::DagEnv> c(env, other);
    c.run();
    EXPECT_NE(all_params(a.pair(), m), all_params(c.pair(), m));
  }
}

TEST(Trainer, ResumeFromCheckpointMatchesUninterruptedRun) {
  const auto env = small_dag();
  for (Method m : kAll) {
    const auto cfg = small_config(m, 30);
    Trainer<envs::DagEnv> straight(env, cfg);
    straight.run();

    Trainer<envs::DagEnv> first(env, cfg);
    for (int i = 0; i < 12; ++i) first.step();
    const std::string saved = first.checkpoint().dump();

    Trainer<envs::DagEnv> resumed(env, cfg);
    resumed.restore(nlohmann::json::parse(saved));
    EXPECT_EQ(resumed.iteration(), 12);
    resumed.run();
    EXPECT_EQ(csv_of(resumed.log()), csv_of(straight.log())) << to_string(m);
    EXPECT_EQ(all_params(resumed.pair(), m), all_params(straight.pair(), m));
    EXPECT_EQ(resumed.history().size(), straight.history().size());
  }
}

TEST(Trainer, RestoreRejectsForeignCheckpoints) {
  const auto env = small_dag();
  Trainer<envs::DagEnv> a(env, small_config(Method::kTb, 5));
  auto other = small_config(Method::kTb, 5);
  other.alpha = 0.9;
  Trainer<envs::DagEnv> b(env, other);
  EXPECT_THROW(b.restore(a.checkpoint()), ConfigError);
  EXPECT_THROW(b.restore(nlohmann::json{{"format", "other"}}), Error);
}

TEST(Trainer, TbOnTwoTerminalsReachesTarget) {
  const auto env = two_terminals();
  auto cfg = small_config(Method::kTb, 500);
  cfg.eval_every = 100;
  Trainer<envs::DagEnv> tr(env, cfg);
  tr.run();
  const auto p = t::brute_force_marginal(env, tr.pair().canonical.forward);
  const auto target = t::reward_target(env);
  const double tv = t::ref_tv(p, target);
  EXPECT_LT(tv, 0.05);
  EXPECT_NEAR(*tr.log().back().tv, tv, 1e-9);
  EXPECT_NEAR(tr.pair().canonical.log_z.value, std::log(4.0), 0.1);
}

TEST(Trainer, ZeroEpsilonIsAllowed) {
  auto cfg = small_config(Method::kTb, 10);
  cfg.epsilon = 0.0;
  EXPECT_NO_THROW(train_tb(cfg, small_dag()));
}

TEST(Trainer, NonFiniteValueAbortsWithSnapshot) {
  const auto env = small_dag();
  Trainer<envs::DagEnv> tr(env, small_config(Method::kTb, 10));
  tr.step();
  tr.pair().canonical.log_z.value = NAN;
  try {
    tr.step();
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.iteration(), 1);
    EXPECT_FALSE(e.primitive().empty());
    EXPECT_EQ(e.snapshot().at("iteration"), 1);
    EXPECT_TRUE(e.snapshot().contains("canonical"));
  }

  Trainer<envs::DagEnv> ace(env, small_config(Method::kAce, 10));
  ace.pair().exploration.log_z.value = INFINITY;
  EXPECT_THROW(ace.step(), TrainingAborted);
}

TEST(Trainer, TopKNeverDecreasesOverARun) {
  const envs::GridWorldEnv env(6, 2);
  auto cfg = small_config(Method::kAce, 60);
  cfg.eval_every = 1;
  cfg.topk = 5;
  const auto log = train(env, cfg);
  for (std::size_t i = 1; i < log.size(); ++i) {
    if (log[i - 1].unique_terminals < 5) continue;
    EXPECT_GE(*log[i].topk_mean_reward, *log[i - 1].topk_mean_reward - 1e-12);
  }
  EXPECT_TRUE(log.back().modes_found.has_value());
}
