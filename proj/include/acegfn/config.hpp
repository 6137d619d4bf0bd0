#pragma once

// Run configuration: TrainConfig with its environment section, per-env
// defaults, JSON round-trip and dotted-path overrides.

#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "acegfn/core/errors.hpp"
#include "acegfn/losses.hpp"
#include "acegfn/optim.hpp"
#include "acegfn/policy.hpp"

namespace acegfn {

enum class Method { kAce, kTb, kAt, kSa };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kAce: return "ace";
    case Method::kTb: return "tb";
    case Method::kAt: return "at";
    case Method::kSa: return "sa";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "ace") return Method::kAce;
  if (s == "tb") return Method::kTb;
  if (s == "at") return Method::kAt;
  if (s == "sa") return Method::kSa;
  throw ConfigError("method: unknown value '" + s + "' (expected ace, tb, at or sa)");
}

inline bool two_samplers(Method m) { return m != Method::kTb; }

struct EnvSpec {
  std::string name = "grid";
  std::optional<std::uint64_t> seed;  // reward tables; defaults to the run seed

  int grid_side = 16;
  int grid_dims = 2;

  int walk_half_width = 18;
  int walk_horizon = 0;  // 0 = 2m
  double walk_floor = 1e-4;
  int walk_fourier_freqs = 4;

  int bitseq_length = 32;
  int bitseq_modes = 60;

  int seq_length = 24;
  int seq_vocab = 6;

  int bag_vocab = 20;
  int bag_size = 10;
  double bag_length_scale = 5.0;

  int knapsack_items = 128;
  double knapsack_capacity = 60.0;
  int knapsack_copies = 4;

  bool operator==(const EnvSpec&) const = default;
};

inline const std::vector<std::string>& env_names() {
  static const std::vector<std::string> names{"grid", "rings", "eight_gaussians", "bitseq", "seqdesign", "bag", "knapsack"};
  return names;
}

struct TrainConfig {
  Method method = Method::kAce;
  long iterations = 1000;
  int batch_size = 16;
  double epsilon = 0.05;
  double alpha = 0.3;
  double beta = 0.25;
  double lr_policy = 1e-2;
  double lr_logz = 1e-1;
  double weight_decay = 0.01;
  double lr_end_factor = 0.01;  // linear decay from 1 to this over `iterations`
  int eval_every = 50;
  std::uint64_t seed = 42;

  std::vector<int> hidden{128, 128};
  Activation activation = Activation::kLeakyRelu;
  bool learned_backward = false;
  bool exact_eval = true;  // TV against the exact marginal when enumerable
  int topk = 200;

  AtParams at;
  SaParams sa;
  int rnd_hidden = 128;
  int rnd_output = 32;
  double rnd_lr = 1e-3;

  EnvSpec env;

  LinearLrSchedule lr_schedule() const { return {1.0, lr_end_factor, iterations}; }
  std::uint64_t env_seed() const { return env.seed.value_or(seed); }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (iterations < 0) fail("iterations: must be >= 0");
    if (batch_size < 1) fail("batch_size: must be >= 1");
    if (two_samplers(method) && batch_size < 2) fail("batch_size: two-sampler methods need at least 2");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) fail("epsilon: must lie in [0, 1]");
    if (!(alpha > 0.0)) fail("alpha: must be > 0");
    if (!(beta > 0.0)) fail("beta: must be > 0");
    if (!(lr_policy > 0.0)) fail("lr_policy: must be > 0");
    if (!(lr_logz > 0.0)) fail("lr_logz: must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay: must be >= 0");
    if (!(lr_end_factor > 0.0)) fail("lr_end_factor: must be > 0");
    if (eval_every < 1) fail("eval_every: must be >= 1");
    if (topk < 1) fail("topk: must be >= 1");
    for (int h : hidden)
      if (h < 1) fail("hidden: layer widths must be >= 1");
    if (!(at.eps_at >= 0.0)) fail("at.eps_at: must be >= 0");
    if (!(sa.beta1 > 0.0 && sa.beta2 > 0.0 && sa.beta3 > 0.0)) fail("sa: beta1, beta2, beta3 must be > 0");
    if (rnd_hidden < 1 || rnd_output < 1) fail("rnd: dimensions must be >= 1");
    if (!(rnd_lr > 0.0)) fail("rnd.lr: must be > 0");
    bool known = false;
    for (const auto& n : env_names()) known = known || n == env.name;
    if (!known) fail("env.name: unknown environment '" + env.name + "'");
  }
};

inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return a.method == b.method && a.iterations == b.iterations && a.batch_size == b.batch_size &&
         a.epsilon == b.epsilon && a.alpha == b.alpha && a.beta == b.beta && a.lr_policy == b.lr_policy &&
         a.lr_logz == b.lr_logz && a.weight_decay == b.weight_decay && a.lr_end_factor == b.lr_end_factor &&
         a.eval_every == b.eval_every && a.seed == b.seed && a.hidden == b.hidden && a.activation == b.activation &&
         a.learned_backward == b.learned_backward && a.exact_eval == b.exact_eval && a.topk == b.topk &&
         a.at.alpha_at == b.at.alpha_at && a.at.c == b.at.c && a.at.eps_at == b.at.eps_at &&
         a.sa.beta1 == b.sa.beta1 && a.sa.beta2 == b.sa.beta2 && a.sa.beta3 == b.sa.beta3 &&
         a.rnd_hidden == b.rnd_hidden && a.rnd_output == b.rnd_output && a.rnd_lr == b.rnd_lr && a.env == b.env;
}

// Default budgets and hyperparameters per environment.
inline TrainConfig default_config(const std::string& env_name, Method method = Method::kAce) {
  TrainConfig c;
  c.method = method;
  c.env.name = env_name;
  if (env_name == "rings" || env_name == "eight_gaussians") {
    c.iterations = 4000;
    c.epsilon = 0.1;
    c.alpha = 0.2;
    c.lr_policy = 5e-3;
    c.lr_logz = 5e-2;
    c.lr_end_factor = 0.1;
    c.hidden = {64, 64};
    c.activation = Activation::kRelu;
    c.seed = 42;
    return c;
  }
  if (env_name == "grid") c.iterations = 30000;
  else if (env_name == "bitseq") c.iterations = 3000;
  else if (env_name == "seqdesign") c.iterations = 5000;
  else if (env_name == "bag") c.iterations = 1500;
  else if (env_name == "knapsack") c.iterations = 256;
  else throw ConfigError("env.name: unknown environment '" + env_name + "'");
  return c;
}

inline std::vector<std::uint64_t> default_seeds(const std::string& env_name) {
  if (env_name == "rings" || env_name == "eight_gaussians") return {42, 43, 44, 45, 46};
  return {42, 126, 210};
}

// ---------------------------------------------------------------------------
// JSON.

inline nlohmann::json to_json(const EnvSpec& e) {
  nlohmann::json j;
  j["name"] = e.name;
  j["seed"] = e.seed ? nlohmann::json(*e.seed) : nlohmann::json(nullptr);
  j["grid"] = {{"side", e.grid_side}, {"dims", e.grid_dims}};
  j["walk"] = {{"half_width", e.walk_half_width},
               {"horizon", e.walk_horizon},
               {"floor", e.walk_floor},
               {"fourier_freqs", e.walk_fourier_freqs}};
  j["bitseq"] = {{"length", e.bitseq_length}, {"modes", e.bitseq_modes}};
  j["seqdesign"] = {{"length", e.seq_length}, {"vocab", e.seq_vocab}};
  j["bag"] = {{"vocab", e.bag_vocab}, {"size", e.bag_size}, {"length_scale", e.bag_length_scale}};
  j["knapsack"] = {{"items", e.knapsack_items}, {"capacity", e.knapsack_capacity}, {"copies", e.knapsack_copies}};
  return j;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["method"] = to_string(c.method);
  j["iterations"] = c.iterations;
  j["batch_size"] = c.batch_size;
  j["epsilon"] = c.epsilon;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["lr_policy"] = c.lr_policy;
  j["lr_logz"] = c.lr_logz;
  j["weight_decay"] = c.weight_decay;
  j["lr_end_factor"] = c.lr_end_factor;
  j["eval_every"] = c.eval_every;
  j["seed"] = c.seed;
  j["hidden"] = c.hidden;
  j["activation"] = to_string(c.activation);
  j["learned_backward"] = c.learned_backward;
  j["exact_eval"] = c.exact_eval;
  j["topk"] = c.topk;
  j["at"] = {{"alpha_at", c.at.alpha_at}, {"c", c.at.c}, {"eps_at", c.at.eps_at}};
  j["sa"] = {{"beta1", c.sa.beta1}, {"beta2", c.sa.beta2}, {"beta3", c.sa.beta3}};
  j["rnd"] = {{"hidden", c.rnd_hidden}, {"output", c.rnd_output}, {"lr", c.rnd_lr}};
  j["env"] = to_json(c.env);
  return j;
}

namespace detail {

// Reads `key` from `j` into `out` when present, reporting the dotted path on
// type errors and unknown keys.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + ": expected an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    try {
      if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer() && !it->is_number_unsigned())
          throw ConfigError(where(key) + ": expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(where(key) + ": expected a number");
      }
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  Reader sub(const std::string& key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return Reader(empty, where(key));
    return Reader(*it, where(key));
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const nlohmann::json& raw(const std::string& key) const { return j_.at(key); }
  void mark(const std::string& key) { seen_.insert(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown field");
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key;
    return key.empty() ? path_ : path_ + "." + key;
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline EnvSpec env_from_json(const nlohmann::json& j, EnvSpec e = {}) {
  detail::Reader r(j, "env");
  r.get("name", e.name);
  if (r.has("seed")) {
    std::uint64_t s = 0;
    r.get("seed", s);
    e.seed = s;
  } else {
    r.mark("seed");
  }
  auto g = r.sub("grid");
  g.get("side", e.grid_side);
  g.get("dims", e.grid_dims);
  g.finish();
  auto w = r.sub("walk");
  w.get("half_width", e.walk_half_width);
  w.get("horizon", e.walk_horizon);
  w.get("floor", e.walk_floor);
  w.get("fourier_freqs", e.walk_fourier_freqs);
  w.finish();
  auto b = r.sub("bitseq");
  b.get("length", e.bitseq_length);
  b.get("modes", e.bitseq_modes);
  b.finish();
  auto s = r.sub("seqdesign");
  s.get("length", e.seq_length);
  s.get("vocab", e.seq_vocab);
  s.finish();
  auto bag = r.sub("bag");
  bag.get("vocab", e.bag_vocab);
  bag.get("size", e.bag_size);
  bag.get("length_scale", e.bag_length_scale);
  bag.finish();
  auto k = r.sub("knapsack");
  k.get("items", e.knapsack_items);
  k.get("capacity", e.knapsack_capacity);
  k.get("copies", e.knapsack_copies);
  k.finish();
  r.finish();
  return e;
}

// Fields absent from `j` keep the per-environment defaults.
inline TrainConfig config_from_json(const nlohmann::json& j) {
  detail::Reader r(j, "");
  std::string env_name = "grid";
  std::string method = "ace";
  if (r.has("env")) {
    const auto& e = r.raw("env");
    if (e.is_object() && e.contains("name")) {
      if (!e["name"].is_string()) throw ConfigError("env.name: expected a string");
      env_name = e["name"].get<std::string>();
    }
  }
  r.get("method", method);
  TrainConfig c = default_config(env_name, method_from_string(method));
  r.get("iterations", c.iterations);
  r.get("batch_size", c.batch_size);
  r.get("epsilon", c.epsilon);
  r.get("alpha", c.alpha);
  r.get("beta", c.beta);
  r.get("lr_policy", c.lr_policy);
  r.get("lr_logz", c.lr_logz);
  r.get("weight_decay", c.weight_decay);
  r.get("lr_end_factor", c.lr_end_factor);
  r.get("eval_every", c.eval_every);
  r.get("seed", c.seed);
  r.get("hidden", c.hidden);
  std::string act = to_string(c.activation);
  r.get("activation", act);
  try {
    c.activation = activation_from_string(act);
  } catch (const Error&) {
    throw ConfigError("activation: unknown value '" + act + "'");
  }
  r.get("learned_backward", c.learned_backward);
  r.get("exact_eval", c.exact_eval);
  r.get("topk", c.topk);
  auto at = r.sub("at");
  at.get("alpha_at", c.at.alpha_at);
  at.get("c", c.at.c);
  at.get("eps_at", c.at.eps_at);
  at.finish();
  auto sa = r.sub("sa");
  sa.get("beta1", c.sa.beta1);
  sa.get("beta2", c.sa.beta2);
  sa.get("beta3", c.sa.beta3);
  sa.finish();
  auto rnd = r.sub("rnd");
  rnd.get("hidden", c.rnd_hidden);
  rnd.get("output", c.rnd_output);
  rnd.get("lr", c.rnd_lr);
  rnd.finish();
  if (r.has("env")) c.env = env_from_json(r.raw("env"), c.env);
  r.mark("env");
  r.finish();
  c.validate();
  return c;
}

// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
// possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + path + "': '" + parts[i] + "' is not an object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = nlohmann::json::object();
  }
  if (!node->is_object()) throw ConfigError("override '" + path + "': parent is not an object");
  (*node)[parts.back()] = value;
}

}  // namespace acegfn
