#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acegfn/core/errors.hpp"
#include "acegfn/core/rng.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn::envs {

// <u, m> + m^T A m subject to <m, w> <= W. A is K x K row-major.
inline double knapsack_objective(std::span<const int> m, std::span<const double> u, std::span<const double> w,
                                 std::span<const double> a, double capacity) {
  const std::size_t k = m.size();
  if (u.size() != k || w.size() != k || a.size() != k * k) throw Error("knapsack_objective: size mismatch");
  double load = 0.0, lin = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    load += m[i] * w[i];
    lin += m[i] * u[i];
  }
  if (load > capacity + 1e-12) throw Infeasible("knapsack load exceeds capacity");
  for (std::size_t i = 0; i < k; ++i) {
    if (m[i] == 0) continue;
    for (std::size_t j = 0; j < k; ++j) quad += m[i] * a[i * k + j] * m[j];
  }
  return lin + quad;
}

struct KnapsackInstance {
  std::vector<double> utility;
  std::vector<double> weight;
  std::vector<double> interaction;  // symmetric, row-major
  double capacity = 60.0;
  int max_copies = 4;

  int items() const { return static_cast<int>(utility.size()); }

  // u ~ U(0.1, 1), w ~ U(0.5, 2), A = (B + B^T) / 2 with B ~ U(0, 0.05).
  static KnapsackInstance random(int items, std::uint64_t seed, double capacity = 60.0, int max_copies = 4) {
    if (items < 1) throw ConfigError("knapsack needs at least one item");
    if (max_copies < 1 || max_copies > 255) throw ConfigError("knapsack copy cap must be in [1, 255]");
    Rng rng(derive_seed(seed, 0x4a95));
    KnapsackInstance inst;
    inst.capacity = capacity;
    inst.max_copies = max_copies;
    inst.utility.resize(items);
    inst.weight.resize(items);
    for (auto& x : inst.utility) x = rng.uniform(0.1, 1.0);
    for (auto& x : inst.weight) x = rng.uniform(0.5, 2.0);
    std::vector<double> b(static_cast<std::size_t>(items) * items);
    for (auto& x : b) x = rng.uniform(0.0, 0.05);
    inst.interaction.resize(b.size());
    for (int i = 0; i < items; ++i)
      for (int j = 0; j < items; ++j) inst.interaction[i * items + j] = 0.5 * (b[i * items + j] + b[j * items + i]);
    return inst;
  }
};

// Add one copy of an item per step until no addition is feasible.
class KnapsackEnv {
 public:
  struct State {
    std::vector<std::uint8_t> copies;
    double load = 0.0;
  };

  explicit KnapsackEnv(KnapsackInstance inst) : inst_(std::move(inst)) {
    if (inst_.weight.size() != inst_.utility.size() ||
        inst_.interaction.size() != inst_.utility.size() * inst_.utility.size())
      throw ConfigError("knapsack instance has inconsistent sizes");
    for (double w : inst_.weight)
      if (!(w > 0.0)) throw ConfigError("knapsack weights must be positive");
    min_weight_ = *std::min_element(inst_.weight.begin(), inst_.weight.end());
  }

  const KnapsackInstance& instance() const { return inst_; }
  std::string name() const { return "knapsack"; }

  State initial_state() const { return State{std::vector<std::uint8_t>(inst_.items(), 0), 0.0}; }
  int action_count() const { return inst_.items(); }

  bool can_add(const State& s, int k) const {
    return s.copies[k] < inst_.max_copies && s.load + inst_.weight[k] <= inst_.capacity;
  }

  ActionMask allowed_actions(const State& s) const {
    ActionMask m(inst_.items());
    for (int k = 0; k < inst_.items(); ++k) m[k] = can_add(s, k);
    return m;
  }

  State step(const State& s, int a) const {
    State next = s;
    ++next.copies[a];
    next.load = recompute_load(next.copies);
    return next;
  }

  bool is_terminal(const State& s) const {
    if (s.load + min_weight_ > inst_.capacity) return true;
    for (int k = 0; k < inst_.items(); ++k)
      if (can_add(s, k)) return false;
    return true;
  }

  std::vector<std::pair<State, int>> parent_actions(const State& s) const {
    std::vector<std::pair<State, int>> out;
    for (int k = 0; k < inst_.items(); ++k) {
      if (s.copies[k] == 0) continue;
      State p = s;
      --p.copies[k];
      p.load = recompute_load(p.copies);
      out.emplace_back(std::move(p), k);
    }
    return out;
  }

  int parent_count(const State& s) const {
    return static_cast<int>(std::count_if(s.copies.begin(), s.copies.end(), [](std::uint8_t c) { return c > 0; }));
  }

  ActionMask parent_action_mask(const State& s) const {
    ActionMask m(inst_.items());
    for (int k = 0; k < inst_.items(); ++k) m[k] = s.copies[k] > 0;
    return m;
  }

  double objective(const State& s) const {
    std::vector<int> m(s.copies.begin(), s.copies.end());
    return knapsack_objective(m, inst_.utility, inst_.weight, inst_.interaction, inst_.capacity);
  }
  double log_reward(const State& s) const { return std::log(objective(s)); }

  bool is_mode(const State&) const { return false; }
  bool has_mode_predicate() const { return false; }

  // Multiplicities over L, then the used capacity fraction.
  int feature_dim() const { return inst_.items() + 1; }
  void encode(const State& s, std::span<double> out) const {
    for (int k = 0; k < inst_.items(); ++k) out[k] = static_cast<double>(s.copies[k]) / inst_.max_copies;
    out[inst_.items()] = s.load / inst_.capacity;
  }

  int max_trajectory_length() const {
    const double by_weight = std::floor(inst_.capacity / min_weight_);
    return static_cast<int>(std::min<double>(by_weight, static_cast<double>(inst_.items()) * inst_.max_copies));
  }
  bool enumerable() const { return false; }

  StateKey key(const State& s) const { return key_from_range<std::uint8_t>(s.copies); }

 private:
  // Summed in index order so a state's load does not depend on its history.
  double recompute_load(const std::vector<std::uint8_t>& copies) const {
    double load = 0.0;
    for (int k = 0; k < inst_.items(); ++k) load += copies[k] * inst_.weight[k];
    return load;
  }

  KnapsackInstance inst_;
  double min_weight_ = 1.0;
};

}  // namespace acegfn::envs
