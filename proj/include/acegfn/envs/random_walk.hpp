#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acegfn/core/errors.hpp"
#include "acegfn/policy.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn::envs {

enum class WalkTarget { kRings, kEightGaussians };

inline const char* to_string(WalkTarget t) { return t == WalkTarget::kRings ? "rings" : "eight_gaussians"; }

// Unnormalised target density with unit peak per component.
inline double walk_density(double x, double y, WalkTarget target, int half_width) {
  const double m = half_width;
  double rho = 0.0;
  if (target == WalkTarget::kEightGaussians) {
    const double radius = 0.8 * m;
    for (int k = 0; k < 8; ++k) {
      const double theta = 2.0 * std::numbers::pi * k / 8.0;
      const double dx = x - radius * std::cos(theta);
      const double dy = y - radius * std::sin(theta);
      rho += std::exp(-(dx * dx + dy * dy) / 2.0);
    }
  } else {
    const double r = std::hypot(x, y);
    constexpr double sigma = 1.0;
    for (double ri : {0.2 * m, 0.8 * m}) rho += std::exp(-(r - ri) * (r - ri) / (2.0 * sigma * sigma));
  }
  return rho;
}

// log(rho_target(pos) + lambda).
inline double walk_log_density(std::array<int, 2> pos, WalkTarget target, int half_width, double floor) {
  return std::log(walk_density(pos[0], pos[1], target, half_width) + floor);
}

// Lazy random walk on [-m, m]^2 with a time counter t in 1..T. Each move adds
// +-1 to one coordinate or stays; terminal iff t = T.
class LazyRandomWalkEnv {
 public:
  struct State {
    int x = 0;
    int y = 0;
    int t = 1;
  };

  static constexpr int kActions = 5;  // +x, -x, +y, -y, stay

  LazyRandomWalkEnv(int half_width = 18, WalkTarget target = WalkTarget::kRings, double floor = 1e-4,
                    int horizon = 0, FourierTimeFeatures time_features = {})
      : m_(half_width), horizon_(horizon > 0 ? horizon : 2 * half_width), target_(target), floor_(floor),
        fourier_(time_features) {
    if (half_width < 1 || horizon_ < 2) throw ConfigError("random walk needs m >= 1 and T >= 2");
    if (floor <= 0.0) throw ConfigError("random walk floor must be positive");
  }

  int half_width() const { return m_; }
  int horizon() const { return horizon_; }
  WalkTarget target() const { return target_; }
  double floor() const { return floor_; }
  std::string name() const { return to_string(target_); }

  State initial_state() const { return State{0, 0, 1}; }
  int action_count() const { return kActions; }

  static constexpr std::array<int, 2> delta(int a) {
    constexpr std::array<std::array<int, 2>, kActions> d{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {0, 0}}};
    return d[a];
  }

  ActionMask allowed_actions(const State& s) const {
    ActionMask mask(kActions, 0);
    if (is_terminal(s)) return mask;
    for (int a = 0; a < kActions; ++a) {
      const auto d = delta(a);
      mask[a] = std::abs(s.x + d[0]) <= m_ && std::abs(s.y + d[1]) <= m_;
    }
    return mask;
  }

  State step(const State& s, int a) const {
    const auto d = delta(a);
    return State{s.x + d[0], s.y + d[1], s.t + 1};
  }

  bool is_terminal(const State& s) const { return s.t >= horizon_; }

  // Parents are restricted to states reachable from the initial state.
  std::vector<std::pair<State, int>> parent_actions(const State& s) const {
    std::vector<std::pair<State, int>> out;
    if (s.t <= 1) return out;
    for (int a = 0; a < kActions; ++a) {
      const auto d = delta(a);
      State p{s.x - d[0], s.y - d[1], s.t - 1};
      if (reachable(p)) out.emplace_back(p, a);
    }
    return out;
  }

  int parent_count(const State& s) const {
    if (s.t <= 1) return 0;
    int n = 0;
    for (int a = 0; a < kActions; ++a) {
      const auto d = delta(a);
      n += reachable(State{s.x - d[0], s.y - d[1], s.t - 1});
    }
    return n;
  }

  ActionMask parent_action_mask(const State& s) const {
    ActionMask mask(kActions, 0);
    if (s.t <= 1) return mask;
    for (int a = 0; a < kActions; ++a) {
      const auto d = delta(a);
      mask[a] = reachable(State{s.x - d[0], s.y - d[1], s.t - 1});
    }
    return mask;
  }

  bool reachable(const State& s) const {
    return s.t >= 1 && std::abs(s.x) <= m_ && std::abs(s.y) <= m_ && std::abs(s.x) + std::abs(s.y) <= s.t - 1;
  }

  double log_reward(const State& s) const { return walk_log_density({s.x, s.y}, target_, m_, floor_); }

  // Terminal positions where the target density is at least half its peak.
  bool is_mode(const State& s) const { return is_terminal(s) && walk_density(s.x, s.y, target_, m_) >= 0.5; }

  // (x/m, y/m) followed by Fourier features of t/T.
  int feature_dim() const { return 2 + fourier_.dim(); }
  void encode(const State& s, std::span<double> out) const {
    out[0] = static_cast<double>(s.x) / m_;
    out[1] = static_cast<double>(s.y) / m_;
    fourier_.encode(static_cast<double>(s.t) / horizon_, out.subspan(2));
  }

  int max_trajectory_length() const { return horizon_ - 1; }
  bool enumerable() const { return true; }

  StateKey key(const State& s) const {
    const std::array<int, 3> v{s.x, s.y, s.t};
    return key_from_range<int>(v);
  }

 private:
  int m_;
  int horizon_;
  WalkTarget target_;
  double floor_;
  FourierTimeFeatures fourier_;
};

}  // namespace acegfn::envs
