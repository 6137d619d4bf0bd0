#pragma once

// A finite DAG given by explicit adjacency. Node 0 is the root, sinks are
// terminal, and action a means "move to node a". Used for tabular checks.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acegfn/core/errors.hpp"
#include "acegfn/core/rng.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn::envs {

class DagEnv {
 public:
  using State = int;

  DagEnv(std::vector<std::vector<int>> children, std::vector<double> log_rewards)
      : children_(std::move(children)), log_rewards_(std::move(log_rewards)) {
    const int n = node_count();
    if (n < 2) throw ConfigError("dag needs at least two nodes");
    if (static_cast<int>(log_rewards_.size()) != n) throw ConfigError("one log reward per node");
    parents_.resize(n);
    depth_.assign(n, 0);
    for (int v = 0; v < n; ++v) {
      for (int c : children_[v]) {
        if (c <= v || c >= n) throw MalformedEnvironment("dag edges must go to higher node ids");
        parents_[c].push_back(v);
      }
      std::sort(children_[v].begin(), children_[v].end());
      if (std::adjacent_find(children_[v].begin(), children_[v].end()) != children_[v].end())
        throw MalformedEnvironment("duplicate dag edge");
    }
    for (int v = 1; v < n; ++v)
      if (parents_[v].empty()) throw MalformedEnvironment("dag node unreachable from the root");
    for (int v = 0; v < n; ++v)
      for (int c : children_[v]) depth_[c] = std::max(depth_[c], depth_[v] + 1);
    max_depth_ = *std::max_element(depth_.begin(), depth_.end());
  }

  int node_count() const { return static_cast<int>(children_.size()); }
  const std::vector<int>& children(int v) const { return children_[v]; }
  const std::vector<int>& parents(int v) const { return parents_[v]; }
  std::string name() const { return "dag"; }

  State initial_state() const { return 0; }
  int action_count() const { return node_count(); }

  ActionMask allowed_actions(const State& s) const {
    ActionMask m(node_count(), 0);
    for (int c : children_[s]) m[c] = 1;
    return m;
  }

  State step(const State&, int a) const { return a; }
  bool is_terminal(const State& s) const { return children_[s].empty(); }

  std::vector<std::pair<State, int>> parent_actions(const State& s) const {
    std::vector<std::pair<State, int>> out;
    for (int p : parents_[s]) out.emplace_back(p, s);
    return out;
  }
  int parent_count(const State& s) const { return static_cast<int>(parents_[s].size()); }

  double log_reward(const State& s) const { return log_rewards_[s]; }
  bool is_mode(const State&) const { return false; }

  int feature_dim() const { return node_count(); }
  void encode(const State& s, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    out[s] = 1.0;
  }

  int max_trajectory_length() const { return max_depth_; }
  bool enumerable() const { return true; }

  StateKey key(const State& s) const {
    StateKey k;
    append_key_bytes(k, s);
    return k;
  }

 private:
  std::vector<std::vector<int>> children_;
  std::vector<std::vector<int>> parents_;
  std::vector<double> log_rewards_;
  std::vector<int> depth_;
  int max_depth_ = 0;
};

// Layered random DAG: root, then `layers` layers of 1..max_width nodes. Each
// node links to a random non-empty subset of the next layer (and sometimes
// one layer further), and every node keeps at least one parent.
inline DagEnv random_layered_dag(Rng& rng, int layers, int max_width, double edge_prob = 0.5,
                                 double skip_prob = 0.2) {
  if (layers < 1 || max_width < 1) throw ConfigError("random dag needs layers >= 1 and width >= 1");
  std::vector<std::vector<int>> layer_nodes{{0}};
  int next = 1;
  for (int l = 0; l < layers; ++l) {
    const int width = 1 + static_cast<int>(rng.below(max_width));
    std::vector<int> nodes;
    for (int i = 0; i < width; ++i) nodes.push_back(next++);
    layer_nodes.push_back(std::move(nodes));
  }
  std::vector<std::vector<int>> children(next);
  std::vector<int> n_parents(next, 0);
  auto link = [&](int a, int b) {
    if (std::find(children[a].begin(), children[a].end(), b) != children[a].end()) return;
    children[a].push_back(b);
    ++n_parents[b];
  };
  for (int l = 0; l < layers; ++l) {
    const auto& here = layer_nodes[l];
    const auto& below = layer_nodes[l + 1];
    for (int v : here) {
      for (int c : below)
        if (rng.uniform() < edge_prob) link(v, c);
      if (children[v].empty()) link(v, below[rng.below(below.size())]);
      if (l + 2 <= layers && rng.uniform() < skip_prob) {
        const auto& far = layer_nodes[l + 2];
        link(v, far[rng.below(far.size())]);
      }
    }
    for (int c : below)
      if (n_parents[c] == 0) link(here[rng.below(here.size())], c);
  }
  std::vector<double> log_r(next);
  for (auto& x : log_r) x = rng.uniform(-2.0, 2.0);
  return DagEnv(std::move(children), std::move(log_r));
}

}  // namespace acegfn::envs
