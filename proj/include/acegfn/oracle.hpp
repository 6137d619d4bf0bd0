#pragma once

// Exact quantities on enumerable environments: partition functions, the
// reward-proportional target, allocation sets of a canonical sampler and
// both sides of the repulsive bound.

#include <cmath>
#include <map>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "acegfn/core/errors.hpp"
#include "acegfn/core/log_math.hpp"
#include "acegfn/exact.hpp"
#include "acegfn/losses.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn {

struct OracleSummary {
  double log_z_exact = 0.0;
  double log_z_tempered = 0.0;
  double beta = 1.0;
  std::size_t terminal_count = 0;
  std::map<StateKey, double> target;  // pi(x) proportional to R(x)
  std::map<StateKey, double> log_reward;
};

template <StateGraph Env>
OracleSummary exact_partition(const Env& env, double beta = 1.0, std::size_t cap = kDefaultStateCap) {
  const auto en = enumerate_states(env, cap);
  OracleSummary out;
  out.beta = beta;
  out.terminal_count = en.terminals.size();
  std::vector<double> lr, lr_beta;
  for (int t : en.terminals) {
    const double v = env.log_reward(en.states[t]);
    if (!std::isfinite(v)) throw MalformedEnvironment("non-finite log reward at a terminal");
    lr.push_back(v);
    lr_beta.push_back(beta * v);
    out.log_reward.emplace(en.keys[t], v);
  }
  out.log_z_exact = log_sum_exp(lr);
  out.log_z_tempered = log_sum_exp(lr_beta);
  for (const auto& [k, v] : out.log_reward) out.target.emplace(k, std::exp(v - out.log_z_exact));
  return out;
}

struct AllocationSets {
  std::set<StateKey> over;
  std::set<StateKey> under;
};

// Terminal partition by Z p_T(x) >= alpha R(x), with the exact marginal.
template <StateGraph Env>
AllocationSets exact_allocation_sets(const Env& env, const Sampler& canonical, double alpha,
                                     std::size_t cap = kDefaultStateCap) {
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  const auto en = enumerate_states(env, cap);
  const auto lm = exact_log_marginal(en, policy_log_probs(env, canonical.forward));
  AllocationSets out;
  for (int t : en.terminals) {
    const StateKey& k = en.keys[t];
    const double induced = canonical.log_z.value + lm.at(k);
    if (induced >= std::log(alpha) + env.log_reward(en.states[t])) out.over.insert(k);
    else out.under.insert(k);
  }
  return out;
}

// Trajectory-level description of a tabular exploration sampler.
struct TabularTrajectories {
  std::vector<double> log_pf;         // log p_F(tau)
  std::vector<double> log_pb_given;   // log p_B(tau | x)
  std::vector<int> terminal;          // terminal index of tau
  std::vector<double> log_target;     // log pi(x), per terminal index
  std::vector<std::uint8_t> over;     // tau in OA
};

struct BoundSides {
  double lhs = 0.0;
  double rhs = 0.0;
};

// E_mu[(log(p_F / p_B + 1))^2] and (log 2 + KL(mu||p_B) - KL(mu||p_M))^2
// with p_B(tau) = pi(x) p_B(tau|x) and p_M = (p_F + p_B) / 2.
inline BoundSides prop2_bound_check(const TabularTrajectories& t, std::span<const double> mu) {
  const std::size_t n = t.log_pf.size();
  if (mu.size() != n || t.log_pb_given.size() != n || t.terminal.size() != n || t.over.size() != n)
    throw InvalidMeasure("measure and trajectory table sizes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mu[i] < 0.0 || !std::isfinite(mu[i])) throw InvalidMeasure("negative or non-finite measure");
    if (mu[i] > 0.0 && !t.over[i]) throw InvalidMeasure("measure has mass outside the over-allocated set");
    total += mu[i];
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidMeasure("measure does not sum to one");

  double lhs = 0.0, kl_b = 0.0, kl_m = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mu[i] == 0.0) continue;
    const double log_pb = t.log_target[t.terminal[i]] + t.log_pb_given[i];
    const double term = softplus(t.log_pf[i] - log_pb);
    const double log_pm = log_add_exp(t.log_pf[i], log_pb) - std::log(2.0);
    const double log_mu = std::log(mu[i]);
    lhs += mu[i] * term * term;
    kl_b += mu[i] * (log_mu - log_pb);
    kl_m += mu[i] * (log_mu - log_pm);
  }
  const double r = std::log(2.0) + kl_b - kl_m;
  return {lhs, r * r};
}

}  // namespace acegfn
