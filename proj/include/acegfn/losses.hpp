#pragma once

// Training objectives: trajectory balance, the induced-reward OA/UA verdict,
// divergent trajectory balance, the ACE mixing weight and canonical loss, and
// the reward transforms of the AT and SA baselines.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "acegfn/autodiff.hpp"
#include "acegfn/core/errors.hpp"
#include "acegfn/core/log_math.hpp"
#include "acegfn/core/rng.hpp"
#include "acegfn/optim.hpp"
#include "acegfn/policy.hpp"
#include "acegfn/sampling.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn {

// Forward policy, optional learned backward policy and log Z.
struct Sampler {
  MlpPolicy forward;
  std::optional<MlpPolicy> backward;
  LogZParam log_z;

  const MlpPolicy* backward_policy() const { return backward ? &*backward : nullptr; }
};

struct GFlowNetPair {
  Sampler canonical;
  Sampler exploration;
  double alpha = 0.3;
  double beta = 0.25;

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
    if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  }
};

struct SamplerGrad {
  std::vector<double> forward;
  std::vector<double> backward;
  double log_z = 0.0;

  SamplerGrad() = default;
  explicit SamplerGrad(const Sampler& s)
      : forward(s.forward.param_count(), 0.0), backward(s.backward ? s.backward->param_count() : 0, 0.0) {}
};

struct SamplerVars {
  MlpVars forward;
  std::optional<MlpVars> backward;
  ad::Var log_z;

  const MlpVars* backward_vars() const { return backward ? &*backward : nullptr; }
};

inline SamplerVars bind_sampler(ad::Tape& tape, const Sampler& s, SamplerGrad& g) {
  SamplerVars v;
  v.forward = bind_params(tape, s.forward, g.forward);
  if (s.backward) v.backward = bind_params(tape, *s.backward, g.backward);
  v.log_z = tape.scalar_leaf(s.log_z.value, g.log_z);
  return v;
}

// ---------------------------------------------------------------------------
// Detached per-trajectory log-probabilities of a packed batch.

inline Eigen::VectorXd batch_log_pf(const MlpPolicy& policy, const PackedBatch& batch) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(batch.n_traj);
  if (batch.actions.empty()) return out;
  const ad::Matrix lp = masked_log_softmax(policy.logits(batch.features), batch.masks);
  for (std::size_t i = 0; i < batch.actions.size(); ++i) out(batch.segment[i]) += lp(i, batch.actions[i]);
  return out;
}

inline Eigen::VectorXd batch_log_pb(const MlpPolicy* backward, const PackedBatch& batch) {
  if (backward == nullptr || batch.actions.empty()) return batch.log_pb_uniform;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(batch.n_traj);
  const ad::Matrix lp = masked_log_softmax(backward->logits(batch.back_features), batch.back_masks);
  for (std::size_t i = 0; i < batch.actions.size(); ++i) out(batch.segment[i]) += lp(i, batch.actions[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory balance.

inline double tb_residual(double log_z, double log_pf, double log_pb, double log_reward) {
  return log_z + log_pf - log_pb - log_reward;
}

// Per-trajectory TB residuals (n x 1) on the tape.
inline ad::Var tb_residuals(ad::Tape& tape, const SamplerVars& s, const PackedBatch& batch,
                            const Eigen::VectorXd& log_reward) {
  ad::Var lpf = log_prob_forward(tape, s.forward, batch);
  ad::Var lpb = log_prob_backward(tape, s.backward_vars(), batch);
  ad::Var r = ad::sub(tape, lpf, lpb);
  r = ad::add_const(tape, r, -log_reward);
  return ad::add(tape, r, s.log_z);
}

// Mean TB loss over the batch; `log_reward_override` replaces log R.
inline ad::Var tb_loss(ad::Tape& tape, const SamplerVars& s, const PackedBatch& batch,
                       const Eigen::VectorXd* log_reward_override = nullptr) {
  if (batch.n_traj == 0) throw InvalidBatch("tb_loss on an empty batch");
  const Eigen::VectorXd& lr = log_reward_override ? *log_reward_override : batch.log_reward;
  if (!lr.allFinite()) throw NumericalFailure("tb_loss", "non-finite log reward");
  return ad::mean(tape, ad::square(tape, tb_residuals(tape, s, batch, lr)));
}

template <StateGraph Env>
double tb_loss(const Env& env, const Sampler& s, const Trajectory<typename Env::State>& traj,
               std::optional<double> log_reward_override = std::nullopt) {
  const double r = tb_residual(s.log_z.value, log_prob_forward(env, s.forward, traj),
                               log_prob_backward(env, s.backward_policy(), traj),
                               log_reward_override.value_or(traj.log_reward));
  return r * r;
}

// ---------------------------------------------------------------------------
// Induced reward and allocation verdicts.

enum class Allocation : std::uint8_t { kUnder = 0, kOver = 1 };

struct AllocationVerdict {
  Allocation flag = Allocation::kUnder;
  double log_induced_reward = 0.0;
  double log_threshold = 0.0;

  bool over() const { return flag == Allocation::kOver; }
};

// One-sample estimate of log(Z p_T(x)); detached.
template <StateGraph Env>
double induced_log_reward(const Env& env, const Sampler& canonical, const Trajectory<typename Env::State>& traj) {
  return canonical.log_z.value + log_prob_forward(env, canonical.forward, traj) -
         log_prob_backward(env, canonical.backward_policy(), traj);
}

inline Eigen::VectorXd induced_log_rewards(const Sampler& canonical, const PackedBatch& batch) {
  return (canonical.log_z.value + batch_log_pf(canonical.forward, batch).array() -
          batch_log_pb(canonical.backward_policy(), batch).array())
      .matrix();
}

// OA iff induced >= log(alpha) + log R(x); ties are over-allocated.
inline AllocationVerdict classify_allocation(double log_induced, double log_reward, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  AllocationVerdict v;
  v.log_induced_reward = log_induced;
  v.log_threshold = std::log(alpha) + log_reward;
  v.flag = log_induced >= v.log_threshold ? Allocation::kOver : Allocation::kUnder;
  return v;
}

template <StateGraph Env>
AllocationVerdict classify_allocation(const Env& env, const Sampler& canonical,
                                      const Trajectory<typename Env::State>& traj, double alpha) {
  return classify_allocation(induced_log_reward(env, canonical, traj), traj.log_reward, alpha);
}

inline std::vector<AllocationVerdict> classify_allocation(const Sampler& canonical, const PackedBatch& batch,
                                                          double alpha) {
  const Eigen::VectorXd induced = induced_log_rewards(canonical, batch);
  std::vector<AllocationVerdict> out;
  out.reserve(batch.n_traj);
  for (int i = 0; i < batch.n_traj; ++i) out.push_back(classify_allocation(induced(i), batch.log_reward(i), alpha));
  return out;
}

// ---------------------------------------------------------------------------
// Divergent trajectory balance.

inline double dtb_residual(double log_z_div, double log_pf, double log_pb, double log_reward, double beta) {
  return log_z_div + log_pf - beta * log_reward - log_pb;
}

// UA: q^2. OA: softplus(q)^2.
inline double dtb_loss(double q, const AllocationVerdict& verdict) {
  if (verdict.over()) {
    const double sp = softplus(q);
    return sp * sp;
  }
  return q * q;
}

// Mean DTB loss of the exploration sampler over the batch.
inline ad::Var dtb_loss(ad::Tape& tape, const SamplerVars& explorer, const PackedBatch& batch, double beta,
                        std::span<const AllocationVerdict> verdicts) {
  if (batch.n_traj == 0) throw InvalidBatch("dtb_loss on an empty batch");
  if (verdicts.size() != static_cast<std::size_t>(batch.n_traj)) throw InvalidBatch("one verdict per trajectory");
  ad::Var q = tb_residuals(tape, explorer, batch, (beta * batch.log_reward.array()).matrix());
  std::vector<std::uint8_t> over(verdicts.size());
  bool any_over = false, any_under = false;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    over[i] = verdicts[i].over();
    any_over = any_over || over[i];
    any_under = any_under || !over[i];
  }
  ad::Var per;
  if (!any_over) per = ad::square(tape, q);
  else if (!any_under) per = ad::square(tape, ad::softplus(tape, q));
  else per = ad::where(tape, over, ad::square(tape, ad::softplus(tape, q)), ad::square(tape, q));
  return ad::mean(tape, per);
}

// ---------------------------------------------------------------------------
// Mixing weight and canonical loss.

// w = Z / (Z + Z_div), treated as a constant by callers.
inline double mixing_weight(double log_z, double log_z_div) {
  if (!std::isfinite(log_z) || !std::isfinite(log_z_div)) throw NumericalFailure("mixing_weight", "non-finite log Z");
  return sigmoid(log_z - log_z_div);
}

// w * mean TB(on-policy) + (1 - w) * mean TB(exploration), true reward.
inline ad::Var canonical_loss(ad::Tape& tape, const SamplerVars& canonical, const PackedBatch& on_policy,
                              const PackedBatch& exploration, double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("mixing weight outside [0, 1]");
  if (w > 0.0 && on_policy.n_traj == 0) throw InvalidBatch("empty on-policy batch with nonzero weight");
  if (w < 1.0 && exploration.n_traj == 0) throw InvalidBatch("empty exploration batch with nonzero weight");
  if (w == 1.0) return tb_loss(tape, canonical, on_policy);
  if (w == 0.0) return tb_loss(tape, canonical, exploration);
  ad::Var a = ad::scale(tape, tb_loss(tape, canonical, on_policy), w);
  ad::Var b = ad::scale(tape, tb_loss(tape, canonical, exploration), 1.0 - w);
  return ad::add(tape, a, b);
}

// ---------------------------------------------------------------------------
// Adaptive teacher.

struct AtParams {
  double alpha_at = 1.0;
  double c = 1.0;
  double eps_at = 1e-8;
};

// delta = log R + log p_B - log p_F - log Z.
inline double at_base_residual(double log_reward, double log_pb, double log_pf, double log_z) {
  return log_reward + log_pb - log_pf - log_z;
}

inline double at_teacher_log_reward(double delta, double log_reward, const AtParams& p) {
  const double coef = 1.0 + (delta > 0.0 ? p.c : 0.0);
  return std::log(p.eps_at + coef * delta * delta) + p.alpha_at * log_reward;
}

// Tape form over a column of residuals, for gradient checks of the transform.
inline ad::Var at_teacher_log_reward(ad::Tape& tape, ad::Var delta, const Eigen::VectorXd& log_reward,
                                     const AtParams& p) {
  const ad::Matrix& d = tape.value(delta);
  ad::Matrix coef(d.rows(), 1);
  for (Eigen::Index i = 0; i < d.rows(); ++i) coef(i, 0) = 1.0 + (d(i, 0) > 0.0 ? p.c : 0.0);
  ad::Var t = ad::mul_const(tape, ad::square(tape, delta), coef);
  t = ad::log(tape, ad::add_const(tape, t, ad::Matrix::Constant(d.rows(), 1, p.eps_at)));
  return ad::add_const(tape, t, p.alpha_at * log_reward);
}

// Teacher log rewards for terminals of `batch` using one backward sample per
// terminal, evaluated under the canonical sampler.
inline Eigen::VectorXd at_teacher_log_rewards(const Sampler& canonical, const PackedBatch& backward_batch,
                                              const AtParams& p) {
  const Eigen::VectorXd lpf = batch_log_pf(canonical.forward, backward_batch);
  const Eigen::VectorXd lpb = batch_log_pb(canonical.backward_policy(), backward_batch);
  Eigen::VectorXd out(backward_batch.n_traj);
  for (int i = 0; i < backward_batch.n_traj; ++i) {
    const double lr = backward_batch.log_reward(i);
    out(i) = at_teacher_log_reward(at_base_residual(lr, lpb(i), lpf(i), canonical.log_z.value), lr, p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sibling augmentation with random network distillation.

struct SaParams {
  double beta1 = 1.0;
  double beta2 = 1.0;
  double beta3 = 1.0;
};

// beta3 * log(R^beta1 + S^beta2) with S the summed novelty along the trajectory.
inline double sa_log_reward(double log_reward, double intrinsic_sum, const SaParams& p) {
  if (!(p.beta1 > 0.0 && p.beta2 > 0.0 && p.beta3 > 0.0)) throw ConfigError("SA betas must be > 0");
  const double log_s = intrinsic_sum > 0.0 ? std::log(intrinsic_sum) : kNegInf;
  return p.beta3 * log_add_exp(p.beta1 * log_reward, p.beta2 * log_s);
}

struct RndState {
  MlpPolicy predictor;
  MlpPolicy target;  // frozen
  AdamWState opt;

  RndState() = default;
  RndState(int input_dim, Rng& rng, int hidden = 128, int output_dim = 32, double lr = 1e-3)
      : predictor({input_dim, hidden, output_dim}, Activation::kLeakyRelu),
        target({input_dim, hidden, output_dim}, Activation::kLeakyRelu) {
    target.initialize(rng);
    predictor.initialize(rng);
    opt = AdamWState(predictor.param_count(), lr, 0.0);
  }

  int output_dim() const { return predictor.output_dim(); }

  // ||psi(s) - psi_random(s)||^2 per feature row.
  Eigen::VectorXd novelty(const ad::Matrix& features) const {
    return (predictor.logits(features) - target.logits(features)).rowwise().squaredNorm();
  }
};

// One optimizer step of psi toward psi_random on the batch. Returns the
// mean novelty before the update.
inline double rnd_update(RndState& rnd, const ad::Matrix& features, double lr) {
  if (features.rows() == 0) throw InvalidBatch("rnd_update on an empty batch");
  const ad::Matrix y = rnd.target.logits(features);
  const auto result = ad::loss_and_grad(
      [&](ad::Tape& tape, std::span<const double>, std::span<double> grad) {
        MlpVars v = bind_params(tape, rnd.predictor, grad);
        ad::Var out = mlp_forward(tape, v, tape.constant(features));
        ad::Var diff = ad::add_const(tape, out, -y);
        return ad::scale(tape, ad::sum(tape, ad::square(tape, diff)), 1.0 / static_cast<double>(features.rows()));
      },
      rnd.predictor.params());
  rnd.opt.lr = lr;
  adamw_step(rnd.opt, rnd.predictor.params(), result.grad);
  return result.loss;
}

}  // namespace acegfn
