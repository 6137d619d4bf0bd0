#pragma once

// Exact quantities for enumerable environments: state enumeration in
// topological order (Kahn) and the terminal marginal of a forward policy by
// dynamic programming in log space.

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <unordered_map>
#include <vector>

#include "acegfn/core/errors.hpp"
#include "acegfn/core/log_math.hpp"
#include "acegfn/policy.hpp"
#include "acegfn/sampling.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn {

inline constexpr std::size_t kDefaultStateCap = 5'000'000;

template <class State>
struct StateEnumeration {
  std::vector<State> states;                          // topological order, states[0] = initial
  std::vector<StateKey> keys;
  std::vector<std::vector<std::pair<int, int>>> children;  // (action, child index)
  std::vector<int> terminals;                         // indices of terminal states
};

template <StateGraph Env>
StateEnumeration<typename Env::State> enumerate_states(const Env& env, std::size_t cap = kDefaultStateCap) {
  using State = typename Env::State;
  if (!env.enumerable()) throw EnumerationTooLarge(std::string(env.name()) + " is not enumerable");
  std::vector<State> found;
  std::vector<StateKey> keys;
  std::unordered_map<StateKey, int> index;
  std::vector<std::vector<std::pair<int, int>>> children;

  found.push_back(env.initial_state());
  keys.push_back(env.key(found.back()));
  index.emplace(keys.back(), 0);
  children.emplace_back();
  for (std::size_t i = 0; i < found.size(); ++i) {
    if (env.is_terminal(found[i])) continue;
    const ActionMask mask = env.allowed_actions(found[i]);
    for (int a = 0; a < env.action_count(); ++a) {
      if (!mask[a]) continue;
      State child = env.step(found[i], a);
      StateKey k = env.key(child);
      auto [it, inserted] = index.emplace(k, static_cast<int>(found.size()));
      if (inserted) {
        if (found.size() >= cap) throw EnumerationTooLarge("state count exceeds cap of " + std::to_string(cap));
        found.push_back(std::move(child));
        keys.push_back(std::move(k));
        children.emplace_back();
      }
      children[i].emplace_back(a, it->second);
    }
  }

  // Kahn's algorithm over the discovered edges.
  const std::size_t n = found.size();
  std::vector<int> indegree(n, 0);
  for (const auto& ch : children)
    for (const auto& [a, c] : ch) ++indegree[c];
  std::deque<int> ready{0};
  std::vector<int> order;
  order.reserve(n);
  while (!ready.empty()) {
    const int v = ready.front();
    ready.pop_front();
    order.push_back(v);
    for (const auto& [a, c] : children[v])
      if (--indegree[c] == 0) ready.push_back(c);
  }
  if (order.size() != n) throw MalformedEnvironment("state graph has a cycle");

  std::vector<int> position(n);
  for (std::size_t i = 0; i < n; ++i) position[order[i]] = static_cast<int>(i);
  StateEnumeration<State> out;
  out.states.reserve(n);
  out.keys.reserve(n);
  out.children.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int old = order[i];
    out.states.push_back(std::move(found[old]));
    out.keys.push_back(std::move(keys[old]));
    for (const auto& [a, c] : children[old]) out.children[i].emplace_back(a, position[c]);
    if (env.is_terminal(out.states.back())) out.terminals.push_back(static_cast<int>(i));
  }
  return out;
}

// Log-probabilities for a batch of non-terminal states (rows) over actions.
template <class State>
using LogProbFn = std::function<ad::Matrix(const std::vector<const State*>&)>;

template <StateGraph Env>
LogProbFn<typename Env::State> policy_log_probs(const Env& env, const MlpPolicy& policy, double epsilon = 0.0) {
  using State = typename Env::State;
  return [&env, &policy, epsilon](const std::vector<const State*>& batch) {
    const int actions = env.action_count();
    std::vector<std::uint8_t> masks;
    masks.reserve(batch.size() * actions);
    for (const State* s : batch) {
      const ActionMask m = env.allowed_actions(*s);
      masks.insert(masks.end(), m.begin(), m.end());
    }
    ad::Matrix lp = masked_log_softmax(policy.logits(encode_states<Env>(env, batch)), masks);
    if (epsilon > 0.0) {
      for (Eigen::Index r = 0; r < lp.rows(); ++r) {
        int allowed = 0;
        for (int a = 0; a < actions; ++a) allowed += masks[r * actions + a];
        for (int a = 0; a < actions; ++a) {
          if (!masks[r * actions + a]) continue;
          lp(r, a) = std::log((1.0 - epsilon) * std::exp(lp(r, a)) + epsilon / allowed);
        }
      }
    }
    return lp;
  };
}

// log p_T(x) for every terminal of an enumeration, keyed by state key.
template <class State>
std::map<StateKey, double> exact_log_marginal(const StateEnumeration<State>& en, const LogProbFn<State>& log_probs,
                                              std::size_t chunk = 8192) {
  const std::size_t n = en.states.size();
  std::vector<double> log_flow(n, kNegInf);
  log_flow[0] = 0.0;
  std::vector<int> internal;
  for (std::size_t i = 0; i < n; ++i)
    if (!en.children[i].empty()) internal.push_back(static_cast<int>(i));
  // States are in topological order, so a chunk's flows are final once all
  // earlier chunks have propagated.
  for (std::size_t begin = 0; begin < internal.size(); begin += chunk) {
    const std::size_t end = std::min(internal.size(), begin + chunk);
    std::vector<const State*> batch;
    for (std::size_t j = begin; j < end; ++j) batch.push_back(&en.states[internal[j]]);
    const ad::Matrix lp = log_probs(batch);
    for (std::size_t j = begin; j < end; ++j) {
      const int v = internal[j];
      if (log_flow[v] == kNegInf) continue;
      for (const auto& [a, c] : en.children[v]) {
        const double contrib = log_flow[v] + lp(static_cast<Eigen::Index>(j - begin), a);
        log_flow[c] = log_add_exp(log_flow[c], contrib);
      }
    }
  }
  std::map<StateKey, double> out;
  for (int t : en.terminals) out.emplace(en.keys[t], log_flow[t]);
  return out;
}

template <StateGraph Env>
std::map<StateKey, double> exact_marginal(const Env& env, const MlpPolicy& policy, double epsilon = 0.0,
                                          std::size_t cap = kDefaultStateCap) {
  const auto en = enumerate_states(env, cap);
  auto lm = exact_log_marginal(en, policy_log_probs(env, policy, epsilon));
  for (auto& [k, v] : lm) v = std::exp(v);
  return lm;
}

}  // namespace acegfn
