#pragma once

#include <concepts>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace acegfn {

// Opaque, byte-encoded state identity used for hashing and deduplication.
using StateKey = std::string;

// mask[a] != 0 iff action a is allowed.
using ActionMask = std::vector<std::uint8_t>;

template <class T>
void append_key_bytes(StateKey& key, const T& value) {
  static_assert(std::is_trivially_copyable_v<T>);
  const auto* p = reinterpret_cast<const char*>(&value);
  key.append(p, sizeof(T));
}

template <class T>
StateKey key_from_range(std::span<const T> values, std::uint8_t tag = 0) {
  StateKey key;
  key.reserve(1 + values.size() * sizeof(T));
  key.push_back(static_cast<char>(tag));
  key.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
  return key;
}

// Environment contract. States are values; the environment is immutable
// after construction and safe to share across threads.
template <class E>
concept StateGraph = requires(const E& env, const typename E::State& s, int a, std::span<double> out) {
  typename E::State;
  { env.initial_state() } -> std::same_as<typename E::State>;
  { env.action_count() } -> std::convertible_to<int>;
  { env.allowed_actions(s) } -> std::same_as<ActionMask>;
  { env.step(s, a) } -> std::same_as<typename E::State>;
  { env.is_terminal(s) } -> std::same_as<bool>;
  { env.parent_actions(s) } -> std::same_as<std::vector<std::pair<typename E::State, int>>>;
  { env.log_reward(s) } -> std::convertible_to<double>;
  { env.feature_dim() } -> std::convertible_to<int>;
  env.encode(s, out);
  { env.max_trajectory_length() } -> std::convertible_to<int>;
  { env.enumerable() } -> std::same_as<bool>;
  { env.key(s) } -> std::same_as<StateKey>;
  { env.is_mode(s) } -> std::same_as<bool>;
  { env.name() } -> std::convertible_to<std::string>;
};

template <class State>
struct Trajectory {
  std::vector<State> states;  // states.front() = initial, states.back() = terminal
  std::vector<int> actions;
  double log_pf = 0.0;  // sampling log-probability (epsilon mixture when exploring)
  double log_pb = 0.0;  // backward log-probability given the terminal
  double log_reward = 0.0;

  const State& terminal() const { return states.back(); }
  std::size_t length() const { return actions.size(); }
};

struct TerminalEntry {
  double log_reward = 0.0;
  std::optional<double> log_marginal;
};

struct TerminalTable {
  std::map<StateKey, TerminalEntry> entries;
  double total_log_z = 0.0;
};

}  // namespace acegfn
