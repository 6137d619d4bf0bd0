#pragma once

// Append-only token sequences of fixed length K: bit sequences with a
// Levenshtein-to-modes reward and sequence design with a separable
// position x token utility.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acegfn/core/errors.hpp"
#include "acegfn/core/rng.hpp"
#include "acegfn/policy.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn::envs {

using Tokens = std::vector<std::uint8_t>;

inline int levenshtein(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] != b[j - 1]);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// 20 * (1 - min_m lev(x, m) / K).
inline double bitseq_log_reward(std::span<const std::uint8_t> x, const std::vector<Tokens>& modes, int k) {
  int best = std::numeric_limits<int>::max();
  for (const Tokens& m : modes) best = std::min(best, levenshtein(x, m));
  return 20.0 * (1.0 - static_cast<double>(best) / k);
}

class BitSequenceReward {
 public:
  BitSequenceReward(int length, std::uint64_t seed, int n_modes = 60) : length_(length) {
    if (length < 1 || length > 255) throw ConfigError("bit sequence length must be in [1, 255]");
    if (n_modes < 1) throw ConfigError("bit sequence needs at least one mode");
    if (length < 63 && static_cast<double>(n_modes) > std::ldexp(1.0, length))
      throw ConfigError("more modes requested than distinct sequences");
    Rng rng(derive_seed(seed, 0xb175));
    std::set<Tokens> seen;
    while (static_cast<int>(modes_.size()) < n_modes) {
      Tokens m(length);
      for (auto& b : m) b = static_cast<std::uint8_t>(rng.below(2));
      if (seen.insert(m).second) modes_.push_back(std::move(m));
    }
  }

  int length() const { return length_; }
  int vocab() const { return 2; }
  std::string name() const { return "bitseq"; }
  const std::vector<Tokens>& modes() const { return modes_; }

  double log_reward(const Tokens& x) const { return bitseq_log_reward(x, modes_, length_); }

  // Within edit distance floor(K / 10) of some mode.
  bool is_mode(const Tokens& x) const {
    const int radius = length_ / 10;
    for (const Tokens& m : modes_)
      if (levenshtein(x, m) <= radius) return true;
    return false;
  }

 private:
  int length_;
  std::vector<Tokens> modes_;
};

class SequenceDesignReward {
 public:
  SequenceDesignReward(int length, int vocab, std::uint64_t seed) : length_(length), vocab_(vocab) {
    if (length < 1) throw ConfigError("sequence length must be positive");
    if (vocab < 2 || vocab > 255) throw ConfigError("vocabulary size must be in [2, 255]");
    Rng rng(derive_seed(seed, 0x5e9d));
    u_.resize(length);
    v_.resize(vocab);
    for (auto& x : u_) x = rng.normal();
    for (auto& x : v_) x = rng.normal();
    for (int k = 0; k < length; ++k) {
      double hi = -std::numeric_limits<double>::infinity(), lo = -hi;
      for (double vt : v_) {
        hi = std::max(hi, u_[k] * vt);
        lo = std::min(lo, u_[k] * vt);
      }
      best_ += hi;
      worst_ += lo;
    }
  }

  int length() const { return length_; }
  int vocab() const { return vocab_; }
  std::string name() const { return "seqdesign"; }
  const std::vector<double>& position_utility() const { return u_; }
  const std::vector<double>& token_utility() const { return v_; }
  double best_log_reward() const { return best_; }
  double worst_log_reward() const { return worst_; }

  double log_reward(const Tokens& x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += u_[k] * v_[x[k]];
    return s;
  }

  // Top decile of the attainable log-reward range.
  bool is_mode(const Tokens& x) const { return log_reward(x) >= best_ - 0.1 * (best_ - worst_); }

 private:
  int length_;
  int vocab_;
  std::vector<double> u_;
  std::vector<double> v_;
  double best_ = 0.0;
  double worst_ = 0.0;
};

// Start at the empty sequence and append one of V tokens until length K.
template <class RewardModel>
class TokenSequenceEnv {
 public:
  using State = Tokens;

  explicit TokenSequenceEnv(RewardModel reward, WindowedTokenFeatures features = {})
      : reward_(std::move(reward)), features_(features) {
    features_.vocab = reward_.vocab();
  }

  const RewardModel& reward_model() const { return reward_; }
  int length() const { return reward_.length(); }
  std::string name() const { return reward_.name(); }

  State initial_state() const { return {}; }
  int action_count() const { return reward_.vocab(); }

  ActionMask allowed_actions(const State& s) const {
    return ActionMask(action_count(), static_cast<std::uint8_t>(!is_terminal(s)));
  }

  State step(const State& s, int a) const {
    State next = s;
    next.push_back(static_cast<std::uint8_t>(a));
    return next;
  }

  bool is_terminal(const State& s) const { return static_cast<int>(s.size()) >= length(); }

  std::vector<std::pair<State, int>> parent_actions(const State& s) const {
    if (s.empty()) return {};
    return {{State(s.begin(), s.end() - 1), static_cast<int>(s.back())}};
  }
  int parent_count(const State& s) const { return s.empty() ? 0 : 1; }

  double log_reward(const State& s) const { return reward_.log_reward(s); }
  bool is_mode(const State& s) const { return is_terminal(s) && reward_.is_mode(s); }

  int feature_dim() const { return features_.dim(); }
  void encode(const State& s, std::span<double> out) const { features_.encode(s, out); }

  int max_trajectory_length() const { return length(); }
  bool enumerable() const { return std::pow(static_cast<double>(action_count()), length()) <= 2e6; }

  StateKey key(const State& s) const { return key_from_range<std::uint8_t>(s); }

 private:
  RewardModel reward_;
  WindowedTokenFeatures features_;
};

using BitSequenceEnv = TokenSequenceEnv<BitSequenceReward>;
using SequenceDesignEnv = TokenSequenceEnv<SequenceDesignReward>;

}  // namespace acegfn::envs
