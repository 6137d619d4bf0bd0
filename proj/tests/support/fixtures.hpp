#pragma once

// Constructed instances for the exact property checks: gradient checks of
// every loss path, the complementary-sampling fixture, the repulsive bound
// and the anti-collapse identity. Shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "acegfn/envs/dag.hpp"
#include "acegfn/envs/grid.hpp"
#include "acegfn/losses.hpp"
#include "acegfn/optim.hpp"
#include "acegfn/oracle.hpp"
#include "acegfn/sampling.hpp"
#include "oracles.hpp"

namespace acegfn::testing {

// ---------------------------------------------------------------------------
// Gradient checks.

enum class LossPath { kTb, kDtb, kCanonical, kAt, kSa };

inline const char* to_string(LossPath p) {
  switch (p) {
    case LossPath::kTb: return "tb";
    case LossPath::kDtb: return "dtb";
    case LossPath::kCanonical: return "canonical";
    case LossPath::kAt: return "at";
    case LossPath::kSa: return "sa";
  }
  return "?";
}

struct GradCheck {
  double rel_error = 0.0;
  double value_error = 0.0;  // |library loss - reference loss|
  int over = 0;
  int under = 0;
};

namespace detail {

inline Sampler random_sampler(int in, int out, Rng& rng, bool backward) {
  Sampler s{MlpPolicy({in, 12, 12, out}, Activation::kLeakyRelu), std::nullopt, LogZParam{rng.uniform(-1.0, 1.0)}};
  s.forward.initialize(rng);
  if (backward) {
    s.backward = MlpPolicy({in, 12, out}, Activation::kLeakyRelu);
    s.backward->initialize(rng);
  }
  return s;
}

inline std::vector<double> flatten(const Sampler& s) {
  std::vector<double> v = s.forward.params();
  if (s.backward) v.insert(v.end(), s.backward->params().begin(), s.backward->params().end());
  v.push_back(s.log_z.value);
  return v;
}

inline void unflatten(Sampler& s, std::span<const double> v) {
  std::size_t i = 0;
  for (double& p : s.forward.params()) p = v[i++];
  if (s.backward)
    for (double& p : s.backward->params()) p = v[i++];
  s.log_z.value = v[i++];
}

inline std::vector<double> flatten(const SamplerGrad& g) {
  std::vector<double> v = g.forward;
  v.insert(v.end(), g.backward.begin(), g.backward.end());
  v.push_back(g.log_z);
  return v;
}

template <class Env>
double ref_log_pb_any(const Env& env, const Sampler& s, const Trajectory<typename Env::State>& t) {
  return s.backward ? ref_log_pb(env, *s.backward, t) : t.log_pb;
}

template <class Env>
KinkProbe sampler_probe(const Env& env, const Sampler& shape, const std::vector<Trajectory<typename Env::State>>& trajs,
                        std::size_t offset) {
  std::vector<std::vector<double>> rows, back_rows;
  for (const auto& t : trajs)
    for (std::size_t i = 0; i < t.actions.size(); ++i) {
      rows.push_back(ref_features(env, t.states[i]));
      back_rows.push_back(ref_features(env, t.states[i + 1]));
    }
  KinkProbe f = mlp_kink_probe(shape.forward, rows, offset);
  if (!shape.backward) return f;
  KinkProbe b = mlp_kink_probe(*shape.backward, back_rows, offset + shape.forward.param_count());
  return [f, b](const std::vector<double>& theta) {
    auto s = f(theta);
    auto t = b(theta);
    s.insert(s.end(), t.begin(), t.end());
    return s;
  };
}

inline KinkProbe concat(KinkProbe a, KinkProbe b) {
  return [a, b](const std::vector<double>& theta) {
    auto s = a(theta);
    auto t = b(theta);
    s.insert(s.end(), t.begin(), t.end());
    return s;
  };
}

template <class Env>
std::vector<Trajectory<typename Env::State>> draw(const Env& env, const Sampler& s, int n, Rng& rng) {
  return sample_trajectories(env, s.forward, 0.3, n, rng);
}

}  // namespace detail

// One random instance of the given loss path: analytic gradient from the
// tape against central differences of the scalar reference loss.
template <class Env>
GradCheck check_loss_gradient(const Env& env, LossPath path, Rng& rng, bool allow_learned_pb, double h = 1e-4) {
  using State = typename Env::State;
  using namespace detail;
  const int in = env.feature_dim(), out = env.action_count();
  const bool learned_pb = rng.uniform() < 0.5 && allow_learned_pb;
  Sampler a = random_sampler(in, out, rng, learned_pb);
  Sampler b = random_sampler(in, out, rng, learned_pb);
  const auto ta = draw(env, a, 3 + static_cast<int>(rng.below(3)), rng);
  const auto tb = draw(env, b, 3 + static_cast<int>(rng.below(3)), rng);
  const PackedBatch pa = pack_batch(env, std::span<const Trajectory<State>>(ta), learned_pb);
  const PackedBatch pb = pack_batch(env, std::span<const Trajectory<State>>(tb), learned_pb);
  const double beta = rng.uniform(0.1, 1.0);
  const double w = rng.uniform(0.05, 0.95);
  AtParams at{rng.uniform(0.5, 1.5), rng.uniform(0.5, 2.0), 1e-8};
  SaParams sa{rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5)};

  GradCheck res;
  std::vector<AllocationVerdict> verdicts(tb.size());
  for (std::size_t i = 0; i < tb.size(); ++i) verdicts[i].flag = i % 2 ? Allocation::kOver : Allocation::kUnder;
  for (const auto& v : verdicts) (v.over() ? res.over : res.under)++;

  // SA: novelty of the sampled states under a random RND pair, fixed reward.
  Eigen::VectorXd sa_reward(tb.size());
  if (path == LossPath::kSa) {
    RndState rnd(in, rng, 8, 4);
    for (std::size_t i = 0; i < tb.size(); ++i) {
      std::vector<const State*> ptrs;
      for (const auto& s : tb[i].states) ptrs.push_back(&s);
      const double s = rnd.novelty(encode_states<Env>(env, ptrs)).sum();
      sa_reward(i) = sa_log_reward(tb[i].log_reward, s, sa);
    }
  }

  auto ref_tb_sq = [&](const Sampler& s, const Trajectory<State>& t, double log_reward) {
    const double r = s.log_z.value + ref_log_pf(env, s.forward, t) - ref_log_pb_any(env, s, t) - log_reward;
    return r * r;
  };
  auto ref_mean_tb = [&](const Sampler& s, const std::vector<Trajectory<State>>& ts, const Eigen::VectorXd* lr) {
    double acc = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) acc += ref_tb_sq(s, ts[i], lr ? (*lr)(i) : ts[i].log_reward);
    return acc / ts.size();
  };

  auto ref_teacher = [&](const Sampler& x) {
    Eigen::VectorXd out(tb.size());
    for (std::size_t i = 0; i < tb.size(); ++i) {
      const double delta =
          tb[i].log_reward + ref_log_pb_any(env, x, tb[i]) - ref_log_pf(env, x.forward, tb[i]) - x.log_z.value;
      const double coef = 1.0 + (delta > 0.0 ? at.c : 0.0);
      out(i) = std::log(at.eps_at + coef * delta * delta) + at.alpha_at * tb[i].log_reward;
    }
    return out;
  };
  const Eigen::VectorXd teacher_base = ref_teacher(a);

  // Parameter vector: the trained sampler, then the explorer for AT.
  const bool uses_a = path == LossPath::kCanonical || path == LossPath::kAt;
  const bool two = path == LossPath::kAt;
  std::vector<double> theta = flatten(uses_a ? a : b);
  const std::size_t na = theta.size();
  if (two) {
    const auto vb = flatten(b);
    theta.insert(theta.end(), vb.begin(), vb.end());
  }

  auto reference = [&](const std::vector<double>& th) {
    Sampler x = uses_a ? a : b, y = b;
    unflatten(x, std::span<const double>(th).subspan(0, na));
    if (two) unflatten(y, std::span<const double>(th).subspan(na));
    switch (path) {
      case LossPath::kTb: return ref_mean_tb(x, tb, nullptr);
      case LossPath::kSa: return ref_mean_tb(x, tb, &sa_reward);
      case LossPath::kDtb: {
        double acc = 0.0;
        for (std::size_t i = 0; i < tb.size(); ++i) {
          const double q = x.log_z.value + ref_log_pf(env, x.forward, tb[i]) - beta * tb[i].log_reward -
                           ref_log_pb_any(env, x, tb[i]);
          const double sp = std::log1p(std::exp(q));
          acc += verdicts[i].over() ? sp * sp : q * q;
        }
        return acc / tb.size();
      }
      case LossPath::kCanonical: return w * ref_mean_tb(x, ta, nullptr) + (1.0 - w) * ref_mean_tb(x, tb, nullptr);
      case LossPath::kAt: {
        // Summed teacher rewards under the canonical sampler x, plus the
        // explorer y's TB loss on the teacher reward at the base point.
        const Eigen::VectorXd teacher = ref_teacher(x);
        return teacher.sum() + ref_mean_tb(y, tb, &teacher_base);
      }
    }
    return 0.0;
  };

  // Analytic side.
  std::vector<double> grad(theta.size(), 0.0);
  double value = 0.0;
  {
    Sampler x = uses_a ? a : b;
    SamplerGrad gx(x), gy(b);
    ad::Tape tape;
    SamplerVars vx = bind_sampler(tape, x, gx);
    ad::Var loss;
    switch (path) {
      case LossPath::kTb: loss = tb_loss(tape, vx, pb); break;
      case LossPath::kSa: loss = tb_loss(tape, vx, pb, &sa_reward); break;
      case LossPath::kDtb: loss = dtb_loss(tape, vx, pb, beta, verdicts); break;
      case LossPath::kCanonical: loss = canonical_loss(tape, vx, pa, pb, w); break;
      case LossPath::kAt: {
        ad::Var lpf = log_prob_forward(tape, vx.forward, pb);
        ad::Var lpb = log_prob_backward(tape, vx.backward_vars(), pb);
        ad::Var delta = ad::add_const(tape, ad::sub(tape, lpb, lpf), pb.log_reward);
        delta = ad::sub(tape, delta, vx.log_z);
        ad::Var teacher = at_teacher_log_reward(tape, delta, pb.log_reward, at);
        const Eigen::VectorXd detached = tape.value(teacher);
        SamplerVars vy = bind_sampler(tape, b, gy);
        loss = ad::add(tape, ad::sum(tape, teacher), tb_loss(tape, vy, pb, &detached));
        break;
      }
    }
    value = tape.scalar(loss);
    tape.backward(loss);
    grad = flatten(gx);
    if (two) {
      const auto g2 = flatten(gy);
      grad.insert(grad.end(), g2.begin(), g2.end());
    }
  }
  res.value_error = std::abs(value - reference(theta));
  KinkProbe probe = sampler_probe(env, uses_a ? a : b, tb, 0);
  if (path == LossPath::kCanonical) probe = concat(probe, sampler_probe(env, a, ta, 0));
  if (two) probe = concat(probe, sampler_probe(env, b, tb, na));
  res.rel_error = relative_error(grad, central_diff(reference, theta, h, probe));
  return res;
}

// Gradient of the RND predictor loss mean_i ||psi(s_i) - psi_rand(s_i)||^2.
inline GradCheck check_rnd_gradient(Rng& rng, double h = 1e-4) {
  const int in = 3 + static_cast<int>(rng.below(5));
  RndState rnd(in, rng, 10, 4);
  const int n = 2 + static_cast<int>(rng.below(5));
  std::vector<std::vector<double>> rows(n, std::vector<double>(in));
  ad::Matrix x(n, in);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < in; ++j) x(i, j) = rows[i][j] = rng.normal();
  auto reference = [&](const std::vector<double>& th) {
    MlpPolicy p = rnd.predictor;
    p.params() = th;
    double acc = 0.0;
    for (const auto& r : rows) {
      const auto a = ref_logits(p, r), b = ref_logits(rnd.target, r);
      for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
    }
    return acc / n;
  };
  const ad::Matrix y = rnd.target.logits(x);
  const auto lg = ad::loss_and_grad(
      [&](ad::Tape& tape, std::span<const double>, std::span<double> grad) {
        MlpVars v = bind_params(tape, rnd.predictor, grad);
        ad::Var diff = ad::add_const(tape, mlp_forward(tape, v, tape.constant(x)), -y);
        return ad::scale(tape, ad::sum(tape, ad::square(tape, diff)), 1.0 / n);
      },
      rnd.predictor.params());
  GradCheck res;
  res.value_error = std::abs(lg.loss - reference(rnd.predictor.params()));
  res.rel_error = relative_error(lg.grad, central_diff(reference, rnd.predictor.params(), h,
                                                       mlp_kink_probe(rnd.predictor, rows)));
  // rnd_update reports the same pre-update loss.
  RndState copy = rnd;
  res.value_error = std::max(res.value_error, std::abs(rnd_update(copy, x, 1e-3) - lg.loss));
  return res;
}

// Alternates small grids and random DAGs.
inline GradCheck check_loss_gradient_instance(LossPath path, std::uint64_t seed) {
  Rng rng(seed);
  if (seed % 2 == 0) {
    envs::GridWorldEnv env(2 + static_cast<int>(rng.below(3)), 2);
    return check_loss_gradient(env, path, rng, true);
  }
  // DAG parents all share the action id, so only the uniform backward policy applies.
  envs::DagEnv env = random_dag(rng, 4, 3, 200);
  return check_loss_gradient(env, path, rng, false);
}

// ---------------------------------------------------------------------------
// Complementary sampling: canonical sampler fits R everywhere except on a
// mode region, where it puts a 1e-6 fraction of the mass.

struct ComplementaryOutcome {
  double loss = 0.0;
  long steps = 0;
  double tv = 1.0;
  int mode_terminals = 0;
  bool verdicts_match = false;  // UA exactly on the mode region
};

inline ComplementaryOutcome run_complementary(std::uint64_t seed, double beta = 0.25, double alpha = 0.5, long max_steps = 50'000) {
  Rng rng(seed);
  const envs::DagEnv env = random_dag(rng, 4, 4, 2000, 3);
  std::vector<int> sinks;
  for (int v = 0; v < env.node_count(); ++v)
    if (env.children(v).empty()) sinks.push_back(v);
  std::sort(sinks.begin(), sinks.end(), [&](int x, int y) { return env.log_reward(x) > env.log_reward(y); });
  const std::set<int> mode(sinks.begin(), sinks.begin() + 2);

  std::vector<double> log_rc(env.node_count());
  for (int v = 0; v < env.node_count(); ++v) log_rc[v] = env.log_reward(v) + (mode.count(v) ? std::log(1e-6) : 0.0);
  std::vector<std::vector<double>> lp;
  const double log_zc = tb_exact_flows(env, log_rc, lp);
  Sampler canonical{tabular_from_log_probs(env, lp), std::nullopt, LogZParam{log_zc}};

  const auto trajs = all_trajectories(env);
  const PackedBatch batch = pack_batch(env, std::span<const Trajectory<int>>(trajs));
  const auto verdicts = classify_allocation(canonical, batch, alpha);
  ComplementaryOutcome out;
  out.mode_terminals = static_cast<int>(mode.size());
  out.verdicts_match = true;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    out.verdicts_match = out.verdicts_match && (verdicts[i].over() != (mode.count(trajs[i].terminal()) > 0));

  Sampler explorer{tabular_policy(env), std::nullopt, LogZParam{0.0}};
  AdamWState opt(explorer.forward.param_count(), 0.05), opt_z(1, 0.05);
  for (out.steps = 0; out.steps < max_steps; ++out.steps) {
    SamplerGrad g(explorer);
    ad::Tape tape;
    const SamplerVars vars = bind_sampler(tape, explorer, g);
    const ad::Var loss = dtb_loss(tape, vars, batch, beta, verdicts);
    out.loss = tape.scalar(loss);
    if (out.loss < 1e-6) break;
    tape.backward(loss);
    const double decay = out.steps < 5000 ? 1.0 : 0.2;
    adamw_step(opt, explorer.forward.params(), g.forward, decay);
    adamw_step(opt_z, std::span<double>(&explorer.log_z.value, 1), std::span<const double>(&g.log_z, 1), decay);
  }

  std::map<StateKey, double> target;
  double z = 0.0;
  for (int x : mode) z += std::exp(beta * env.log_reward(x));
  for (int x : mode) target[env.key(x)] = std::exp(beta * env.log_reward(x)) / z;
  out.tv = ref_tv(brute_force_marginal(env, explorer.forward), target);
  return out;
}

// ---------------------------------------------------------------------------
// Repulsive bound on a random tabular instance.

struct RepulsiveOutcome {
  BoundSides lib;
  BoundSides ref;
  int over = 0;
};

inline RepulsiveOutcome run_repulsive(std::uint64_t seed) {
  Rng rng(seed);
  const envs::DagEnv env = random_dag(rng, 4, 4, 2000, 2);
  auto random_tabular = [&](double scale) {
    MlpPolicy p = tabular_policy(env);
    for (double& v : p.params()) v = scale * rng.normal();
    return p;
  };
  const MlpPolicy explorer = random_tabular(2.0);
  const MlpPolicy backward = random_tabular(1.5);
  Sampler canonical{random_tabular(1.0), std::nullopt, LogZParam{rng.uniform(-1.0, 4.0)}};
  const double alpha = rng.uniform(0.2, 1.5);

  const auto trajs = all_trajectories(env);
  const PackedBatch batch = pack_batch(env, std::span<const Trajectory<int>>(trajs));
  auto verdicts = classify_allocation(canonical, batch, alpha);
  bool any_over = false;
  for (const auto& v : verdicts) any_over = any_over || v.over();
  if (!any_over) verdicts = classify_allocation(canonical, batch, 1e-6);

  std::vector<int> sinks;
  std::map<int, int> sink_index;
  for (int v = 0; v < env.node_count(); ++v)
    if (env.children(v).empty()) {
      sink_index[v] = static_cast<int>(sinks.size());
      sinks.push_back(v);
    }
  double z = 0.0;
  for (int x : sinks) z += std::exp(env.log_reward(x));

  TabularTrajectories t;
  for (int x : sinks) t.log_target.push_back(env.log_reward(x) - std::log(z));
  std::vector<double> pf, pb;  // p_F(tau) and pi(x) p_B(tau|x), plain probabilities
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    t.log_pf.push_back(ref_log_pf(env, explorer, trajs[i]));
    t.log_pb_given.push_back(ref_log_pb(env, backward, trajs[i]));
    t.terminal.push_back(sink_index.at(trajs[i].terminal()));
    t.over.push_back(verdicts[i].over());
    pf.push_back(std::exp(t.log_pf.back()));
    pb.push_back(std::exp(t.log_pb_given.back()) * std::exp(trajs[i].log_reward) / z);
  }

  // Measures on OA: random weights, p_F restricted to OA, or a point mass.
  std::vector<double> mu(trajs.size(), 0.0);
  std::vector<std::size_t> oa;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    if (t.over[i]) oa.push_back(i);
  switch (seed % 3) {
    case 0:
      for (std::size_t i : oa) mu[i] = std::exp(3.0 * rng.normal());
      break;
    case 1:
      for (std::size_t i : oa) mu[i] = pf[i];
      break;
    default:
      mu[oa[rng.below(oa.size())]] = 1.0;
  }
  const double total = std::accumulate(mu.begin(), mu.end(), 0.0);
  for (double& m : mu) m /= total;

  RepulsiveOutcome out;
  out.over = static_cast<int>(oa.size());
  out.lib = prop2_bound_check(t, mu);
  // Reference: E_mu[log(1 + p_F/p_B)^2] and (E_mu[log(1 + p_F/p_B)])^2.
  double e1 = 0.0, e2 = 0.0;
  for (std::size_t i : oa) {
    const double l = std::log1p(pf[i] / pb[i]);
    e1 += mu[i] * l;
    e2 += mu[i] * l * l;
  }
  out.ref = {e2, e1 * e1};
  return out;
}

// ---------------------------------------------------------------------------
// Anti-collapse: the exploration sampler puts all mass on a terminal set C
// whose trajectories are over-allocated with q = 0. Policies are edge
// weights p(c | s) = phi_sc / sum_c' phi_sc', which can be exactly zero.

struct AntiCollapseOutcome {
  double rel_error = 1.0;
  double max_abs_q = 0.0;
  double grad_norm = 0.0;
  bool all_over = false;
  int collapsed = 0;  // |C^c|
};

inline AntiCollapseOutcome run_anti_collapse(std::uint64_t seed, double alpha, double beta) {
  Rng rng(seed);
  const envs::DagEnv env = random_dag(rng, 4, 4, 2000, 3);
  const int n = env.node_count();
  std::vector<int> sinks;
  for (int v = 0; v < n; ++v)
    if (env.children(v).empty()) sinks.push_back(v);
  std::vector<char> in_c(n, 0);
  int kept = 0;
  while (kept == 0 || kept == static_cast<int>(sinks.size())) {
    kept = 0;
    for (int x : sinks) kept += (in_c[x] = rng.uniform() < 0.5);
  }

  // Edge index and weights: TB flow of R^beta restricted to C.
  std::vector<std::vector<int>> edge(n);
  int n_edges = 0;
  for (int v = 0; v < n; ++v)
    for (std::size_t j = 0; j < env.children(v).size(); ++j) edge[v].push_back(n_edges++);
  std::vector<double> log_r(n, -INFINITY);
  for (int x : sinks)
    if (in_c[x]) log_r[x] = beta * env.log_reward(x);
  std::vector<double> log_f(n, -INFINITY);
  for (int v = n - 1; v >= 0; --v) {
    if (env.children(v).empty()) {
      log_f[v] = log_r[v];
      continue;
    }
    std::vector<double> in;
    for (int c : env.children(v)) in.push_back(log_f[c] - std::log(static_cast<double>(env.parents(c).size())));
    log_f[v] = ref_log_sum_exp(in);
  }
  std::vector<double> phi(n_edges);
  for (int v = 0; v < n; ++v)
    for (std::size_t j = 0; j < env.children(v).size(); ++j) {
      const int c = env.children(v)[j];
      phi[edge[v][j]] =
          log_f[v] == -INFINITY ? 1.0 : std::exp(log_f[c] - std::log(static_cast<double>(env.parents(c).size())));
    }
  const double log_z_div = log_f[0];

  auto path_prob = [&](const std::vector<double>& w, const Trajectory<int>& t) {
    double p = 1.0;
    for (std::size_t i = 0; i < t.actions.size(); ++i) {
      const int s = t.states[i];
      double tot = 0.0, num = 0.0;
      for (std::size_t j = 0; j < env.children(s).size(); ++j) {
        tot += w[edge[s][j]];
        if (env.children(s)[j] == t.actions[i]) num = w[edge[s][j]];
      }
      p *= num / tot;
    }
    return p;
  };

  // Canonical: the exact TB sampler for R, so every terminal is OA for alpha < 1.
  std::vector<double> log_r_true(n);
  for (int v = 0; v < n; ++v) log_r_true[v] = env.log_reward(v);
  std::vector<std::vector<double>> lp;
  const double log_zc = tb_exact_flows(env, log_r_true, lp);
  const Sampler canonical{tabular_from_log_probs(env, lp), std::nullopt, LogZParam{log_zc}};
  const auto trajs = all_trajectories(env);
  const PackedBatch batch = pack_batch(env, std::span<const Trajectory<int>>(trajs));
  const auto verdicts = classify_allocation(canonical, batch, alpha);

  AntiCollapseOutcome out;
  out.collapsed = static_cast<int>(sinks.size()) - kept;
  out.all_over = std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.over(); });

  // E_{tau ~ p_F}[d dtb(tau) / d phi], with dL/dq from the loss itself.
  std::vector<double> expected(n_edges, 0.0);
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    const auto& t = trajs[k];
    const double p = path_prob(phi, t);
    if (p == 0.0) continue;
    const double q = dtb_residual(log_z_div, std::log(p), t.log_pb, t.log_reward, beta);
    out.max_abs_q = std::max(out.max_abs_q, std::abs(q));
    const double dq = 1e-6;
    const double dl_dq = (dtb_loss(q + dq, verdicts[k]) - dtb_loss(q - dq, verdicts[k])) / (2 * dq);
    for (std::size_t i = 0; i < t.actions.size(); ++i) {
      const int s = t.states[i];
      double tot = 0.0;
      for (int e : edge[s]) tot += phi[e];
      for (std::size_t j = 0; j < env.children(s).size(); ++j) {
        const int e = edge[s][j];
        const double d = (env.children(s)[j] == t.actions[i] ? 1.0 / phi[e] : 0.0) - 1.0 / tot;
        expected[e] += p * dl_dq * d;
      }
    }
  }

  auto mass_off_c = [&](const std::vector<double>& w) {
    double m = 0.0;
    for (const auto& t : trajs)
      if (!in_c[t.terminal()]) m += path_prob(w, t);
    return m;
  };
  std::vector<double> rhs = central_diff(mass_off_c, phi, 1e-6);
  for (double& g : rhs) g *= -std::log(2.0);
  double norm = 0.0;
  for (double g : rhs) norm += g * g;
  out.grad_norm = std::sqrt(norm);
  out.rel_error = relative_error(expected, rhs);
  return out;
}

}  // namespace acegfn::testing
