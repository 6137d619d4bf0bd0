#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acegfn/core/errors.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn::envs {

// R(x) = 1e-3 + 3 * prod_i [6 < |5 x_i / H - 10| < 8].
inline double grid_reward(std::span<const int> coords, int side) {
  bool all_in_band = true;
  for (int c : coords) {
    const double y = std::abs(5.0 * c / side - 10.0);
    all_in_band = all_in_band && (y > 6.0 && y < 8.0);
  }
  return 1e-3 + (all_in_band ? 3.0 : 0.0);
}

// Coordinates in [0, H]^d. Actions 0..d-1 increment one coordinate, action
// d moves s to the terminal copy (s, done).
class GridWorldEnv {
 public:
  struct State {
    std::vector<int> coords;
    bool done = false;
  };

  explicit GridWorldEnv(int side = 16, int dims = 2) : side_(side), dims_(dims) {
    if (side < 1 || dims < 1) throw ConfigError("grid side and dimension must be positive");
  }

  int side() const { return side_; }
  int dims() const { return dims_; }
  std::string name() const { return "grid"; }

  State initial_state() const { return State{std::vector<int>(dims_, 0), false}; }
  int action_count() const { return dims_ + 1; }
  int stop_action() const { return dims_; }

  ActionMask allowed_actions(const State& s) const {
    ActionMask mask(action_count(), 0);
    if (s.done) return mask;
    for (int i = 0; i < dims_; ++i) mask[i] = s.coords[i] < side_;
    mask[dims_] = 1;
    return mask;
  }

  State step(const State& s, int a) const {
    State next = s;
    if (a == dims_) next.done = true;
    else ++next.coords[a];
    return next;
  }

  bool is_terminal(const State& s) const { return s.done; }

  std::vector<std::pair<State, int>> parent_actions(const State& s) const {
    std::vector<std::pair<State, int>> out;
    if (s.done) {
      out.emplace_back(State{s.coords, false}, dims_);
      return out;
    }
    for (int i = 0; i < dims_; ++i) {
      if (s.coords[i] == 0) continue;
      State p{s.coords, false};
      --p.coords[i];
      out.emplace_back(std::move(p), i);
    }
    return out;
  }

  int parent_count(const State& s) const {
    if (s.done) return 1;
    int n = 0;
    for (int c : s.coords) n += c > 0;
    return n;
  }

  double log_reward(const State& s) const { return std::log(grid_reward(s.coords, side_)); }

  bool is_mode(const State& s) const { return s.done && grid_reward(s.coords, side_) > 1.0; }

  // One-hot per coordinate followed by the normalised coordinates.
  int feature_dim() const { return dims_ * (side_ + 1) + dims_; }
  void encode(const State& s, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (int i = 0; i < dims_; ++i) {
      out[i * (side_ + 1) + s.coords[i]] = 1.0;
      out[dims_ * (side_ + 1) + i] = static_cast<double>(s.coords[i]) / side_;
    }
  }

  int max_trajectory_length() const { return dims_ * side_ + 1; }
  bool enumerable() const { return std::pow(side_ + 1.0, dims_) * 2.0 <= 5e6; }

  StateKey key(const State& s) const {
    return key_from_range<int>(s.coords, static_cast<std::uint8_t>(s.done));
  }

 private:
  int side_;
  int dims_;
};

}  // namespace acegfn::envs
