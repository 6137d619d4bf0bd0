#pragma once

// Training loops: ACE (canonical + DTB-trained exploration sampler), the
// epsilon-greedy TB baseline, and the AT and SA two-sampler baselines.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "acegfn/checkpoint.hpp"
#include "acegfn/config.hpp"
#include "acegfn/core/errors.hpp"
#include "acegfn/core/rng.hpp"
#include "acegfn/exact.hpp"
#include "acegfn/losses.hpp"
#include "acegfn/metrics.hpp"
#include "acegfn/optim.hpp"
#include "acegfn/oracle.hpp"
#include "acegfn/sampling.hpp"

namespace acegfn {

// A non-finite value stopped training. Carries the iteration and a
// checkpoint of the state at the time of failure.
class TrainingAborted : public Error {
 public:
  TrainingAborted(long iteration, std::string primitive, nlohmann::json snapshot)
      : Error("training aborted at iteration " + std::to_string(iteration) + ": non-finite value in '" + primitive +
              "'"),
        iteration_(iteration),
        primitive_(std::move(primitive)),
        snapshot_(std::move(snapshot)) {}

  long iteration() const noexcept { return iteration_; }
  const std::string& primitive() const noexcept { return primitive_; }
  const nlohmann::json& snapshot() const noexcept { return snapshot_; }

 private:
  long iteration_;
  std::string primitive_;
  nlohmann::json snapshot_;
};

struct SamplerOptimizers {
  AdamWState forward;
  AdamWState backward;
  AdamWState log_z;
};

inline nlohmann::json to_json(const SamplerOptimizers& o) {
  return {{"forward", to_json(o.forward)}, {"backward", to_json(o.backward)}, {"log_z", to_json(o.log_z)}};
}

inline SamplerOptimizers optimizers_from_json(const nlohmann::json& j) {
  return {adamw_from_json(j.at("forward")), adamw_from_json(j.at("backward")), adamw_from_json(j.at("log_z"))};
}

inline nlohmann::json to_json(const MetricRecord& r) {
  auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"iteration", r.iteration},
          {"trajectories_consumed", r.trajectories_consumed},
          {"tv", opt(r.tv)},
          {"log_z", r.log_z},
          {"log_z_div", opt(r.log_z_div)},
          {"w", opt(r.w)},
          {"mean_loss_canonical", r.mean_loss_canonical},
          {"mean_loss_exploration", opt(r.mean_loss_exploration)},
          {"topk_mean_reward", opt(r.topk_mean_reward)},
          {"modes_found", opt(r.modes_found)},
          {"unique_terminals", r.unique_terminals}};
}

inline MetricRecord record_from_json(const nlohmann::json& j) {
  auto optd = [&](const char* k) -> std::optional<double> {
    return j.at(k).is_null() ? std::nullopt : std::optional<double>(j.at(k).get<double>());
  };
  MetricRecord r;
  r.iteration = j.at("iteration");
  r.trajectories_consumed = j.at("trajectories_consumed");
  r.tv = optd("tv");
  r.log_z = j.at("log_z");
  r.log_z_div = optd("log_z_div");
  r.w = optd("w");
  r.mean_loss_canonical = j.at("mean_loss_canonical");
  r.mean_loss_exploration = optd("mean_loss_exploration");
  r.topk_mean_reward = optd("topk_mean_reward");
  if (!j.at("modes_found").is_null()) r.modes_found = j.at("modes_found").get<long>();
  r.unique_terminals = j.at("unique_terminals");
  return r;
}

template <StateGraph Env>
bool has_mode_predicate(const Env& env) {
  if constexpr (requires { { env.has_mode_predicate() } -> std::convertible_to<bool>; }) {
    return env.has_mode_predicate();
  } else {
    return true;
  }
}

// Exact target and enumeration reused by every evaluation of a run.
template <class State>
struct ExactReference {
  StateEnumeration<State> states;
  std::map<StateKey, double> target;
  double log_z = 0.0;
  double log_z_tempered = 0.0;
};

template <StateGraph Env>
std::shared_ptr<const ExactReference<typename Env::State>> make_exact_reference(const Env& env, double beta) {
  auto ref = std::make_shared<ExactReference<typename Env::State>>();
  ref->states = enumerate_states(env);
  std::vector<double> lr, lrb;
  std::map<StateKey, double> log_r;
  for (int t : ref->states.terminals) {
    const double v = env.log_reward(ref->states.states[t]);
    lr.push_back(v);
    lrb.push_back(beta * v);
    log_r.emplace(ref->states.keys[t], v);
  }
  ref->log_z = log_sum_exp(lr);
  ref->log_z_tempered = log_sum_exp(lrb);
  for (const auto& [k, v] : log_r) ref->target.emplace(k, std::exp(v - ref->log_z));
  return ref;
}

template <StateGraph Env>
class Trainer {
 public:
  using State = typename Env::State;
  using Batch = std::vector<Trajectory<State>>;

  Trainer(const Env& env, TrainConfig cfg) : env_(env), cfg_(std::move(cfg)), rng_(derive_seed(cfg_.seed, 2)) {
    cfg_.validate();
    Rng init(derive_seed(cfg_.seed, 1));
    pair_.alpha = cfg_.alpha;
    pair_.beta = cfg_.beta;
    pair_.canonical = make_sampler(init);
    opt_c_ = make_optimizers(pair_.canonical);
    if (two_samplers(cfg_.method)) {
      pair_.exploration = make_sampler(init);
      opt_e_ = make_optimizers(pair_.exploration);
    }
    if (cfg_.method == Method::kSa) rnd_ = RndState(env_.feature_dim(), init, cfg_.rnd_hidden, cfg_.rnd_output, cfg_.rnd_lr);
    if (cfg_.exact_eval && env_.enumerable()) exact_ = make_exact_reference(env_, cfg_.beta);
  }

  const TrainConfig& config() const { return cfg_; }
  const Env& env() const { return env_; }
  long iteration() const { return iteration_; }
  long trajectories_consumed() const { return consumed_; }
  GFlowNetPair& pair() { return pair_; }
  const GFlowNetPair& pair() const { return pair_; }
  const TerminalHistory& history() const { return history_; }
  const MetricLog& log() const { return log_; }
  const std::optional<RndState>& rnd() const { return rnd_; }
  bool done() const { return iteration_ >= cfg_.iterations; }
  const ExactReference<State>* exact_reference() const { return exact_.get(); }

  // One training iteration, plus a metric record at checkpoints.
  void step() {
    if (done()) return;
    const double factor = cfg_.lr_schedule().factor(iteration_);
    try {
      switch (cfg_.method) {
        case Method::kAce: step_ace(factor); break;
        case Method::kTb: step_tb(factor); break;
        case Method::kAt: step_at(factor); break;
        case Method::kSa: step_sa(factor); break;
      }
    } catch (const NumericalFailure& e) {
      throw TrainingAborted(iteration_, e.primitive(), checkpoint());
    }
    ++iteration_;
    if (iteration_ % cfg_.eval_every == 0 || iteration_ == cfg_.iterations) {
      log_.push_back(evaluate());
      loss_c_ = loss_e_ = 0.0;
      loss_n_ = 0;
    }
  }

  const MetricLog& run(const std::function<void(const MetricRecord&)>& on_record = {}) {
    while (!done()) {
      const std::size_t before = log_.size();
      step();
      if (on_record && log_.size() > before) on_record(log_.back());
    }
    return log_;
  }

  std::optional<double> exact_tv() const {
    if (!exact_) return std::nullopt;
    auto lm = exact_log_marginal(exact_->states, policy_log_probs(env_, pair_.canonical.forward));
    for (auto& [k, v] : lm) v = std::exp(v);
    return tv_distance(lm, exact_->target);
  }

  MetricRecord evaluate() const {
    MetricRecord r;
    r.iteration = iteration_;
    r.trajectories_consumed = consumed_;
    r.tv = exact_tv();
    r.log_z = pair_.canonical.log_z.value;
    if (cfg_.method == Method::kAce) {
      r.log_z_div = pair_.exploration.log_z.value;
      r.w = mixing_weight(pair_.canonical.log_z.value, pair_.exploration.log_z.value);
    }
    const double n = loss_n_ > 0 ? static_cast<double>(loss_n_) : 1.0;
    r.mean_loss_canonical = loss_c_ / n;
    if (two_samplers(cfg_.method)) r.mean_loss_exploration = loss_e_ / n;
    r.topk_mean_reward = topk_unique_mean(history_, static_cast<std::size_t>(cfg_.topk));
    if (has_mode_predicate(env_)) r.modes_found = history_.modes_found();
    r.unique_terminals = static_cast<long>(history_.size());
    return r;
  }

  nlohmann::json checkpoint() const {
    nlohmann::json j;
    j["format"] = "acegfn-checkpoint";
    j["version"] = 1;
    j["config"] = to_json(cfg_);
    j["iteration"] = iteration_;
    j["trajectories_consumed"] = consumed_;
    j["rng"] = rng_.serialize();
    j["canonical"] = to_json(pair_.canonical);
    j["opt_canonical"] = to_json(opt_c_);
    if (two_samplers(cfg_.method)) {
      j["exploration"] = to_json(pair_.exploration);
      j["opt_exploration"] = to_json(opt_e_);
    }
    if (rnd_) {
      j["rnd"] = {{"predictor", to_json(rnd_->predictor)},
                  {"target", to_json(rnd_->target)},
                  {"opt", to_json(rnd_->opt)}};
    }
    j["history"] = to_json(history_);
    j["loss_acc"] = {loss_c_, loss_e_, loss_n_};
    j["log"] = nlohmann::json::array();
    for (const auto& r : log_) j["log"].push_back(to_json(r));
    return j;
  }

  void restore(const nlohmann::json& j) {
    if (j.value("format", "") != "acegfn-checkpoint") throw Error("not an acegfn checkpoint");
    if (!(config_from_json(j.at("config")) == cfg_)) throw ConfigError("checkpoint config differs from trainer config");
    iteration_ = j.at("iteration");
    consumed_ = j.at("trajectories_consumed");
    rng_.deserialize(j.at("rng"));
    pair_.canonical = sampler_from_json(j.at("canonical"));
    opt_c_ = optimizers_from_json(j.at("opt_canonical"));
    if (two_samplers(cfg_.method)) {
      pair_.exploration = sampler_from_json(j.at("exploration"));
      opt_e_ = optimizers_from_json(j.at("opt_exploration"));
    }
    if (rnd_) {
      rnd_->predictor = policy_from_json(j.at("rnd").at("predictor"));
      rnd_->target = policy_from_json(j.at("rnd").at("target"));
      rnd_->opt = adamw_from_json(j.at("rnd").at("opt"));
    }
    history_ = history_from_json(j.at("history"));
    loss_c_ = j.at("loss_acc").at(0);
    loss_e_ = j.at("loss_acc").at(1);
    loss_n_ = j.at("loss_acc").at(2);
    log_.clear();
    for (const auto& r : j.at("log")) log_.push_back(record_from_json(r));
  }

 private:
  Sampler make_sampler(Rng& init) const {
    std::vector<int> dims{env_.feature_dim()};
    dims.insert(dims.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    dims.push_back(env_.action_count());
    Sampler s{MlpPolicy(dims, cfg_.activation), std::nullopt, {}};
    s.forward.initialize(init);
    if (cfg_.learned_backward) {
      s.backward = MlpPolicy(dims, cfg_.activation);
      s.backward->initialize(init);
    }
    return s;
  }

  SamplerOptimizers make_optimizers(const Sampler& s) const {
    SamplerOptimizers o;
    o.forward = AdamWState(s.forward.param_count(), cfg_.lr_policy, cfg_.weight_decay);
    o.backward = AdamWState(s.backward ? s.backward->param_count() : 0, cfg_.lr_policy, cfg_.weight_decay);
    o.log_z = AdamWState(1, cfg_.lr_logz, 0.0);
    return o;
  }

  static void apply(Sampler& s, SamplerOptimizers& o, const SamplerGrad& g, double factor) {
    adamw_step(o.forward, s.forward.params(), g.forward, factor);
    if (s.backward) adamw_step(o.backward, s.backward->params(), g.backward, factor);
    adamw_step(o.log_z, std::span<double>(&s.log_z.value, 1), std::span<const double>(&g.log_z, 1), factor);
  }

  Batch sample(const Sampler& s, double epsilon, int n) { return sample_trajectories(env_, s.forward, epsilon, n, rng_); }

  PackedBatch pack(const Batch& b) const {
    return pack_batch(env_, std::span<const Trajectory<State>>(b), cfg_.learned_backward);
  }

  void observe(const Batch& b) {
    for (const auto& tr : b) {
      const State& x = tr.terminal();
      history_.observe(env_.key(x), tr.log_reward, iteration_, env_.is_mode(x));
    }
    consumed_ += static_cast<long>(b.size());
  }

  template <class LossFn>
  double update(Sampler& s, SamplerOptimizers& o, double factor, LossFn&& fn) {
    SamplerGrad g(s);
    ad::Tape tape;
    const SamplerVars v = bind_sampler(tape, s, g);
    const ad::Var loss = fn(tape, v);
    tape.backward(loss);
    apply(s, o, g, factor);
    return tape.scalar(loss);
  }

  int on_policy_count() const { return cfg_.batch_size - cfg_.batch_size / 2; }
  int exploration_count() const { return cfg_.batch_size / 2; }

  void step_tb(double factor) {
    const Batch b = sample(pair_.canonical, cfg_.epsilon, cfg_.batch_size);
    const PackedBatch pb = pack(b);
    loss_c_ += update(pair_.canonical, opt_c_, factor, [&](ad::Tape& t, const SamplerVars& v) { return tb_loss(t, v, pb); });
    ++loss_n_;
    observe(b);
  }

  void step_ace(double factor) {
    const Batch on = sample(pair_.canonical, 0.0, on_policy_count());
    const Batch ex = sample(pair_.exploration, cfg_.epsilon, exploration_count());
    const PackedBatch p_on = pack(on), p_ex = pack(ex);
    // Verdicts and w come from the canonical sampler before its update.
    const auto verdicts = classify_allocation(pair_.canonical, p_ex, cfg_.alpha);
    const double w = mixing_weight(pair_.canonical.log_z.value, pair_.exploration.log_z.value);
    loss_c_ += update(pair_.canonical, opt_c_, factor,
                      [&](ad::Tape& t, const SamplerVars& v) { return canonical_loss(t, v, p_on, p_ex, w); });
    loss_e_ += update(pair_.exploration, opt_e_, factor, [&](ad::Tape& t, const SamplerVars& v) {
      return dtb_loss(t, v, p_ex, cfg_.beta, verdicts);
    });
    ++loss_n_;
    observe(on);
    observe(ex);
  }

  void step_at(double factor) {
    const Batch on = sample(pair_.canonical, 0.0, on_policy_count());
    const Batch ex = sample(pair_.exploration, cfg_.epsilon, exploration_count());
    const PackedBatch p_on = pack(on), p_ex = pack(ex);
    Batch back;
    back.reserve(ex.size());
    for (const auto& tr : ex) back.push_back(sample_backward(env_, pair_.canonical.backward_policy(), tr.terminal(), rng_));
    const Eigen::VectorXd teacher = at_teacher_log_rewards(pair_.canonical, pack(back), cfg_.at);
    loss_c_ += update(pair_.canonical, opt_c_, factor,
                      [&](ad::Tape& t, const SamplerVars& v) { return canonical_loss(t, v, p_on, p_ex, 0.5); });
    loss_e_ += update(pair_.exploration, opt_e_, factor,
                      [&](ad::Tape& t, const SamplerVars& v) { return tb_loss(t, v, p_ex, &teacher); });
    ++loss_n_;
    observe(on);
    observe(ex);
  }

  void step_sa(double factor) {
    const Batch on = sample(pair_.canonical, 0.0, on_policy_count());
    const Batch ex = sample(pair_.exploration, cfg_.epsilon, exploration_count());
    const PackedBatch p_on = pack(on), p_ex = pack(ex);
    std::vector<const State*> visited;
    std::vector<int> owner;
    for (std::size_t i = 0; i < ex.size(); ++i)
      for (const State& s : ex[i].states) {
        visited.push_back(&s);
        owner.push_back(static_cast<int>(i));
      }
    const ad::Matrix feats = encode_states<Env>(env_, visited);
    const Eigen::VectorXd novelty = rnd_->novelty(feats);
    std::vector<double> intrinsic(ex.size(), 0.0);
    for (std::size_t k = 0; k < owner.size(); ++k) intrinsic[owner[k]] += novelty(static_cast<Eigen::Index>(k));
    Eigen::VectorXd reward(static_cast<Eigen::Index>(ex.size()));
    for (std::size_t i = 0; i < ex.size(); ++i) reward(i) = sa_log_reward(ex[i].log_reward, intrinsic[i], cfg_.sa);
    loss_c_ += update(pair_.canonical, opt_c_, factor,
                      [&](ad::Tape& t, const SamplerVars& v) { return canonical_loss(t, v, p_on, p_ex, 0.5); });
    loss_e_ += update(pair_.exploration, opt_e_, factor,
                      [&](ad::Tape& t, const SamplerVars& v) { return tb_loss(t, v, p_ex, &reward); });
    rnd_update(*rnd_, feats, cfg_.rnd_lr);
    ++loss_n_;
    observe(on);
    observe(ex);
  }

  const Env& env_;
  TrainConfig cfg_;
  Rng rng_;
  GFlowNetPair pair_;
  SamplerOptimizers opt_c_;
  SamplerOptimizers opt_e_;
  std::optional<RndState> rnd_;
  std::shared_ptr<const ExactReference<State>> exact_;
  TerminalHistory history_;
  MetricLog log_;
  long iteration_ = 0;
  long consumed_ = 0;
  double loss_c_ = 0.0;
  double loss_e_ = 0.0;
  long loss_n_ = 0;
};

template <StateGraph Env>
MetricLog train(const Env& env, const TrainConfig& cfg) {
  Trainer<Env> t(env, cfg);
  return t.run();
}

template <StateGraph Env>
MetricLog train_ace(const TrainConfig& cfg, const Env& env) {
  if (cfg.method != Method::kAce) throw ConfigError("method: train_ace needs method = ace");
  return train(env, cfg);
}

template <StateGraph Env>
MetricLog train_tb(const TrainConfig& cfg, const Env& env) {
  if (cfg.method != Method::kTb) throw ConfigError("method: train_tb needs method = tb");
  return train(env, cfg);
}

template <StateGraph Env>
MetricLog train_at(const TrainConfig& cfg, const Env& env) {
  if (cfg.method != Method::kAt) throw ConfigError("method: train_at needs method = at");
  return train(env, cfg);
}

template <StateGraph Env>
MetricLog train_sa(const TrainConfig& cfg, const Env& env) {
  if (cfg.method != Method::kSa) throw ConfigError("method: train_sa needs method = sa");
  return train(env, cfg);
}

}  // namespace acegfn
