#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "acegfn/autodiff.hpp"
#include "acegfn/core/errors.hpp"
#include "acegfn/core/rng.hpp"
#include "acegfn/policy.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn {

// Environments may provide cheaper versions of these queries; otherwise they
// are derived from parent_actions().
template <StateGraph Env>
int parent_count(const Env& env, const typename Env::State& s) {
  if constexpr (requires { { env.parent_count(s) } -> std::convertible_to<int>; }) {
    return env.parent_count(s);
  } else {
    return static_cast<int>(env.parent_actions(s).size());
  }
}

// Mask over forward actions that lead into `s` from some parent. Only valid
// when every parent reaches `s` through a distinct action.
template <StateGraph Env>
ActionMask parent_action_mask(const Env& env, const typename Env::State& s) {
  if constexpr (requires { { env.parent_action_mask(s) } -> std::same_as<ActionMask>; }) {
    return env.parent_action_mask(s);
  } else {
    ActionMask mask(env.action_count(), 0);
    for (const auto& [parent, a] : env.parent_actions(s)) {
      if (mask[a]) throw MalformedEnvironment("learned backward policy needs distinct parent actions");
      mask[a] = 1;
    }
    return mask;
  }
}

template <StateGraph Env>
ad::Matrix encode_states(const Env& env, std::span<const typename Env::State* const> states) {
  const int dim = env.feature_dim();
  ad::RowMajorMatrix x(static_cast<Eigen::Index>(states.size()), dim);
  for (std::size_t i = 0; i < states.size(); ++i) env.encode(*states[i], std::span<double>(x.row(i).data(), dim));
  return x;
}

// Uniform backward log-probability of a complete trajectory.
template <StateGraph Env>
double uniform_log_pb(const Env& env, const Trajectory<typename Env::State>& traj) {
  double lp = 0.0;
  for (std::size_t t = 1; t < traj.states.size(); ++t) lp -= std::log(static_cast<double>(parent_count(env, traj.states[t])));
  return lp;
}

// Draws `n` trajectories in lock-step. At each state the action follows
// (1 - epsilon) * softmax(masked logits) + epsilon * uniform(allowed).
// log_pf holds the mixture log-probability, log_pb the uniform backward one.
template <StateGraph Env>
std::vector<Trajectory<typename Env::State>> sample_trajectories(const Env& env, const MlpPolicy& policy,
                                                                 double epsilon, int n, Rng& rng) {
  using State = typename Env::State;
  if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("epsilon must lie in [0, 1]");
  if (policy.input_dim() != env.feature_dim() || policy.output_dim() != env.action_count())
    throw ConfigError("policy dimensions do not match the environment");
  const int actions = env.action_count();
  std::vector<Trajectory<State>> out(n);
  std::vector<int> active;
  for (int i = 0; i < n; ++i) {
    out[i].states.push_back(env.initial_state());
    if (!env.is_terminal(out[i].states.back())) active.push_back(i);
  }
  std::vector<const State*> batch;
  std::vector<std::uint8_t> masks;
  std::vector<double> probs(actions);
  while (!active.empty()) {
    batch.clear();
    masks.assign(active.size() * actions, 0);
    for (std::size_t j = 0; j < active.size(); ++j) {
      const State& s = out[active[j]].states.back();
      batch.push_back(&s);
      const ActionMask m = env.allowed_actions(s);
      bool any = false;
      for (int a = 0; a < actions; ++a) {
        masks[j * actions + a] = m[a];
        any = any || m[a];
      }
      if (!any) throw MalformedEnvironment("non-terminal state without allowed actions in " + std::string(env.name()));
    }
    const ad::Matrix logp = masked_log_softmax(policy.logits(encode_states<Env>(env, batch)), masks);
    std::vector<int> still_active;
    for (std::size_t j = 0; j < active.size(); ++j) {
      Trajectory<State>& tr = out[active[j]];
      int allowed = 0;
      for (int a = 0; a < actions; ++a) allowed += masks[j * actions + a];
      for (int a = 0; a < actions; ++a) {
        probs[a] = masks[j * actions + a]
                       ? (1.0 - epsilon) * std::exp(logp(j, a)) + epsilon / static_cast<double>(allowed)
                       : 0.0;
      }
      const int a = rng.categorical(probs);
      tr.log_pf += std::log(probs[a]);
      tr.actions.push_back(a);
      tr.states.push_back(env.step(tr.states.back(), a));
      if (static_cast<int>(tr.actions.size()) > env.max_trajectory_length())
        throw MalformedEnvironment("trajectory exceeded max_trajectory_length in " + std::string(env.name()));
      if (env.is_terminal(tr.states.back())) {
        tr.log_reward = env.log_reward(tr.states.back());
        tr.log_pb = uniform_log_pb(env, tr);
      } else {
        still_active.push_back(active[j]);
      }
    }
    active = std::move(still_active);
  }
  for (auto& tr : out)
    if (tr.actions.empty()) tr.log_reward = env.log_reward(tr.states.back());
  return out;
}

template <StateGraph Env>
Trajectory<typename Env::State> sample_trajectory(const Env& env, const MlpPolicy& policy, double epsilon, Rng& rng) {
  return std::move(sample_trajectories(env, policy, epsilon, 1, rng).front());
}

// Walks parent links from terminal `x` back to the initial state. With no
// backward policy the parent is chosen uniformly; otherwise from the learned
// policy's masked softmax over incoming actions.
template <StateGraph Env>
Trajectory<typename Env::State> sample_backward(const Env& env, const MlpPolicy* backward,
                                               const typename Env::State& x, Rng& rng) {
  using State = typename Env::State;
  if (!env.is_terminal(x)) throw InvalidTrajectory("sample_backward needs a terminal state");
  const StateKey root = env.key(env.initial_state());
  std::vector<State> rev{x};
  std::vector<int> rev_actions;
  double log_pb = 0.0;
  while (env.key(rev.back()) != root) {
    auto parents = env.parent_actions(rev.back());
    if (parents.empty()) throw UnreachableState("state has no parents and is not the initial state");
    if (static_cast<int>(rev_actions.size()) >= env.max_trajectory_length())
      throw UnreachableState("parent chain longer than max_trajectory_length");
    std::size_t pick = 0;
    if (backward == nullptr) {
      pick = rng.below(parents.size());
      log_pb -= std::log(static_cast<double>(parents.size()));
    } else {
      const int actions = env.action_count();
      const ActionMask mask = parent_action_mask(env, rev.back());
      std::vector<double> feat(env.feature_dim());
      env.encode(rev.back(), feat);
      const std::vector<double> logits = forward_logits(*backward, feat, mask);
      ad::Matrix z = Eigen::Map<const Eigen::RowVectorXd>(logits.data(), actions);
      const ad::Matrix lp = masked_log_softmax(z, mask);
      std::vector<double> probs(actions);
      for (int a = 0; a < actions; ++a) probs[a] = mask[a] ? std::exp(lp(0, a)) : 0.0;
      const int a = rng.categorical(probs);
      for (std::size_t i = 0; i < parents.size(); ++i)
        if (parents[i].second == a) pick = i;
      log_pb += lp(0, a);
    }
    rev_actions.push_back(parents[pick].second);
    rev.push_back(std::move(parents[pick].first));
  }
  Trajectory<State> tr;
  tr.states.assign(std::make_move_iterator(rev.rbegin()), std::make_move_iterator(rev.rend()));
  tr.actions.assign(rev_actions.rbegin(), rev_actions.rend());
  tr.log_pb = log_pb;
  tr.log_reward = env.log_reward(x);
  return tr;
}

template <StateGraph Env>
void validate_trajectory(const Env& env, const Trajectory<typename Env::State>& traj) {
  if (traj.states.size() != traj.actions.size() + 1) throw InvalidTrajectory("states/actions length mismatch");
  if (static_cast<int>(traj.actions.size()) > env.max_trajectory_length())
    throw InvalidTrajectory("trajectory longer than max_trajectory_length");
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    const int a = traj.actions[t];
    if (a < 0 || a >= env.action_count() || !env.allowed_actions(traj.states[t])[a])
      throw InvalidTrajectory("action disallowed by mask at step " + std::to_string(t));
    if (env.key(env.step(traj.states[t], a)) != env.key(traj.states[t + 1]))
      throw InvalidTrajectory("replaying actions does not reproduce the stored states");
  }
}

// Sum of masked log-softmax values of the pure policy along the trajectory.
template <StateGraph Env>
double log_prob_forward(const Env& env, const MlpPolicy& policy, const Trajectory<typename Env::State>& traj) {
  validate_trajectory(env, traj);
  if (traj.actions.empty()) return 0.0;
  std::vector<const typename Env::State*> batch;
  std::vector<std::uint8_t> masks;
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    batch.push_back(&traj.states[t]);
    const ActionMask m = env.allowed_actions(traj.states[t]);
    masks.insert(masks.end(), m.begin(), m.end());
  }
  const ad::Matrix lp = masked_log_softmax(policy.logits(encode_states<Env>(env, batch)), masks);
  double total = 0.0;
  for (std::size_t t = 0; t < traj.actions.size(); ++t) total += lp(t, traj.actions[t]);
  return total;
}

// Backward log-probability of the trajectory given its terminal; uniform
// over parents when `backward` is null.
template <StateGraph Env>
double log_prob_backward(const Env& env, const MlpPolicy* backward, const Trajectory<typename Env::State>& traj) {
  validate_trajectory(env, traj);
  if (backward == nullptr) return uniform_log_pb(env, traj);
  double total = 0.0;
  for (std::size_t t = 1; t < traj.states.size(); ++t) {
    const ActionMask mask = parent_action_mask(env, traj.states[t]);
    std::vector<double> feat(env.feature_dim());
    env.encode(traj.states[t], feat);
    ad::Matrix z = backward->logits(Eigen::Map<const Eigen::RowVectorXd>(feat.data(), feat.size()));
    total += masked_log_softmax(z, mask)(0, traj.actions[t - 1]);
  }
  return total;
}

// Flattened step data of a trajectory batch, ready for tape evaluation.
struct PackedBatch {
  int n_traj = 0;
  int action_count = 0;
  ad::Matrix features;               // one row per forward step (state s_t)
  std::vector<std::uint8_t> masks;   // allowed-action masks, row-major
  std::vector<int> actions;
  std::vector<int> segment;          // step -> trajectory index
  ad::Matrix back_features;          // one row per backward step (state s_{t+1})
  std::vector<std::uint8_t> back_masks;
  Eigen::VectorXd log_pb_uniform;
  Eigen::VectorXd log_reward;
};

template <StateGraph Env>
PackedBatch pack_batch(const Env& env, std::span<const Trajectory<typename Env::State>> trajs,
                       bool with_backward = false) {
  using State = typename Env::State;
  PackedBatch p;
  p.n_traj = static_cast<int>(trajs.size());
  p.action_count = env.action_count();
  p.log_pb_uniform.resize(p.n_traj);
  p.log_reward.resize(p.n_traj);
  std::vector<const State*> fwd, bwd;
  for (int i = 0; i < p.n_traj; ++i) {
    const auto& tr = trajs[i];
    for (std::size_t t = 0; t < tr.actions.size(); ++t) {
      fwd.push_back(&tr.states[t]);
      const ActionMask m = env.allowed_actions(tr.states[t]);
      p.masks.insert(p.masks.end(), m.begin(), m.end());
      p.actions.push_back(tr.actions[t]);
      p.segment.push_back(i);
      if (with_backward) {
        bwd.push_back(&tr.states[t + 1]);
        const ActionMask bm = parent_action_mask(env, tr.states[t + 1]);
        p.back_masks.insert(p.back_masks.end(), bm.begin(), bm.end());
      }
    }
    p.log_pb_uniform(i) = tr.log_pb;
    p.log_reward(i) = tr.log_reward;
  }
  p.features = encode_states<Env>(env, fwd);
  if (with_backward) p.back_features = encode_states<Env>(env, bwd);
  return p;
}

// Per-trajectory log p_F (n_traj x 1) on the tape.
inline ad::Var log_prob_forward(ad::Tape& tape, const MlpVars& forward, const PackedBatch& batch) {
  if (batch.actions.empty()) return tape.constant(ad::Matrix::Zero(batch.n_traj, 1));
  ad::Var x = tape.constant(batch.features);
  ad::Var logits = mlp_forward(tape, forward, x);
  ad::Var lp = ad::masked_log_softmax(tape, logits, batch.masks);
  ad::Var chosen = ad::pick(tape, lp, batch.actions);
  return ad::segment_sum(tape, chosen, batch.segment, batch.n_traj);
}

// Per-trajectory log p_B (n_traj x 1): learned when `backward` is set,
// otherwise the uniform constant cached in the batch.
inline ad::Var log_prob_backward(ad::Tape& tape, const MlpVars* backward, const PackedBatch& batch) {
  if (backward == nullptr || batch.actions.empty()) return tape.constant(batch.log_pb_uniform);
  if (batch.back_features.rows() != static_cast<Eigen::Index>(batch.actions.size()))
    throw Error("batch was packed without backward features");
  ad::Var x = tape.constant(batch.back_features);
  ad::Var logits = mlp_forward(tape, *backward, x);
  ad::Var lp = ad::masked_log_softmax(tape, logits, batch.back_masks);
  ad::Var chosen = ad::pick(tape, lp, batch.actions);
  return ad::segment_sum(tape, chosen, batch.segment, batch.n_traj);
}

}  // namespace acegfn
