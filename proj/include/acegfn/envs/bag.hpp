#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acegfn/core/errors.hpp"
#include "acegfn/core/rng.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn::envs {

// u(e) = exp(g_e), g a stationary Gaussian AR(1) sequence over element
// indices with correlation exp(-|i - j| / length_scale).
inline std::vector<double> geometric_gp_utilities(int vocab, double length_scale, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xba9));
  const double rho = std::exp(-1.0 / length_scale);
  const double innov = std::sqrt(1.0 - rho * rho);
  std::vector<double> u(vocab);
  double g = rng.normal();
  for (int i = 0; i < vocab; ++i) {
    if (i > 0) g = rho * g + innov * rng.normal();
    u[i] = std::exp(g);
  }
  return u;
}

// Multisets of size S over K elements, built one element at a time. The
// state is the count vector, which is the canonical form of the multiset.
class BagEnv {
 public:
  using State = std::vector<std::uint8_t>;

  BagEnv(int vocab, int bag_size, std::uint64_t seed, double length_scale = 5.0)
      : vocab_(vocab), size_(bag_size), u_(geometric_gp_utilities(vocab, length_scale, seed)) {
    if (vocab < 1 || bag_size < 1 || bag_size > 255) throw ConfigError("bag needs K >= 1 and 1 <= S <= 255");
  }

  int vocab() const { return vocab_; }
  int bag_size() const { return size_; }
  const std::vector<double>& utilities() const { return u_; }
  std::string name() const { return "bag"; }

  State initial_state() const { return State(vocab_, 0); }
  int action_count() const { return vocab_; }

  static int count(const State& s) { return std::accumulate(s.begin(), s.end(), 0); }

  ActionMask allowed_actions(const State& s) const {
    return ActionMask(vocab_, static_cast<std::uint8_t>(!is_terminal(s)));
  }

  State step(const State& s, int a) const {
    State next = s;
    ++next[a];
    return next;
  }

  bool is_terminal(const State& s) const { return count(s) >= size_; }

  std::vector<std::pair<State, int>> parent_actions(const State& s) const {
    std::vector<std::pair<State, int>> out;
    for (int e = 0; e < vocab_; ++e) {
      if (s[e] == 0) continue;
      State p = s;
      --p[e];
      out.emplace_back(std::move(p), e);
    }
    return out;
  }

  int parent_count(const State& s) const {
    return static_cast<int>(std::count_if(s.begin(), s.end(), [](std::uint8_t c) { return c > 0; }));
  }

  ActionMask parent_action_mask(const State& s) const {
    ActionMask m(vocab_);
    for (int e = 0; e < vocab_; ++e) m[e] = s[e] > 0;
    return m;
  }

  double reward(const State& s) const {
    double r = 0.0;
    for (int e = 0; e < vocab_; ++e) r += s[e] * u_[e];
    return r;
  }
  double log_reward(const State& s) const { return std::log(reward(s)); }

  double max_reward() const { return size_ * *std::max_element(u_.begin(), u_.end()); }
  bool is_mode(const State& s) const { return is_terminal(s) && reward(s) >= 0.9 * max_reward(); }

  // Counts scaled by S, then the fill fraction.
  int feature_dim() const { return vocab_ + 1; }
  void encode(const State& s, std::span<double> out) const {
    for (int e = 0; e < vocab_; ++e) out[e] = static_cast<double>(s[e]) / size_;
    out[vocab_] = static_cast<double>(count(s)) / size_;
  }

  int max_trajectory_length() const { return size_; }

  // Number of multisets of size <= S is C(K + S, S).
  bool enumerable() const {
    double c = 1.0;
    for (int i = 1; i <= size_; ++i) c = c * (vocab_ + i) / i;
    return c <= 2e6;
  }

  StateKey key(const State& s) const { return key_from_range<std::uint8_t>(s); }

 private:
  int vocab_;
  int size_;
  std::vector<double> u_;
};

}  // namespace acegfn::envs
