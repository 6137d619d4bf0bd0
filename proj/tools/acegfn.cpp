// acegfn command-line front end: run | compare | sweep | eval-checkpoint.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "acegfn/experiment.hpp"

namespace {

using namespace acegfn;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRunFailed = 3;

// Flags shared by run, compare and sweep. Unset flags leave the config file
// or the per-environment defaults alone.
struct CommonFlags {
  std::string config_path;
  std::optional<std::string> env;
  std::optional<std::string> method;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> epsilon;
  std::optional<long> iterations;
  std::optional<int> batch_size;
  std::optional<int> eval_every;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
  int jobs = 1;

  void attach(CLI::App* app, bool with_method, bool with_seed) {
    app->add_option("-c,--config", config_path, "JSON config file");
    app->add_option("--env", env, "environment: grid, rings, eight_gaussians, bitseq, seqdesign, bag, knapsack");
    if (with_method) app->add_option("--method", method, "ace, tb, at or sa");
    if (with_seed) app->add_option("--seed", seed, "run seed");
    app->add_option("--alpha", alpha, "allocation threshold");
    app->add_option("--beta", beta, "tempering exponent");
    app->add_option("--epsilon", epsilon, "exploration epsilon");
    app->add_option("--iterations", iterations, "training iterations");
    app->add_option("--batch-size", batch_size, "trajectories per iteration");
    app->add_option("--eval-every", eval_every, "iterations between metric records");
    app->add_option("--out", out, "output directory (default: $ACE_GFN_OUT or ./runs)");
    app->add_option("--set", overrides, "dotted-path override, e.g. env.grid.side=8")->take_all();
    app->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);
  }

  nlohmann::json document() const {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
      try {
        j = read_json_file(config_path);
      } catch (const Error& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
      if (!j.is_object()) throw ConfigError("config: top level must be an object");
    }
    auto set = [&](const std::string& path, const nlohmann::json& v) {
      apply_override(j, path + "=" + v.dump());
    };
    if (env) set("env.name", *env);
    if (method) set("method", *method);
    if (seed) set("seed", *seed);
    if (alpha) set("alpha", *alpha);
    if (beta) set("beta", *beta);
    if (epsilon) set("epsilon", *epsilon);
    if (iterations) set("iterations", *iterations);
    if (batch_size) set("batch_size", *batch_size);
    if (eval_every) set("eval_every", *eval_every);
    for (const auto& o : overrides) apply_override(j, o);
    return j;
  }

  // Also builds the environment once, so bad env parameters are config errors.
  TrainConfig config() const {
    TrainConfig cfg = config_from_json(document());
    try {
      make_env(cfg);
    } catch (const ConfigError& e) {
      throw ConfigError("env." + cfg.env.name + ": " + e.what());
    }
    return cfg;
  }
};

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw ConfigError(std::string(what) + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string(what) + ": list is empty");
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void report(const RunPlan& plan, const RunOutcome& o) {
  std::cerr << '[' << to_string(o.status) << "] " << plan.id;
  if (o.final_record) {
    if (o.final_record->tv) std::cerr << " tv=" << format_double(*o.final_record->tv);
    if (o.final_record->topk_mean_reward) std::cerr << " topk=" << format_double(*o.final_record->topk_mean_reward);
  }
  std::cerr << " (" << o.wall_seconds << " s)";
  if (!o.error.empty()) std::cerr << " error: " << o.error;
  if (!o.snapshot.empty()) std::cerr << " snapshot: " << o.snapshot.string();
  std::cerr << '\n';
}

std::map<std::string, std::vector<MetricLog>> collect(const std::vector<RunPlan>& plans,
                                                      const std::vector<RunOutcome>& outcomes,
                                                      const std::function<std::string(const RunPlan&)>& group_of) {
  std::map<std::string, std::vector<MetricLog>> groups;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    auto& g = groups[group_of(plans[i])];
    if (outcomes[i].status != RunStatus::kDone) continue;
    g.push_back(read_metrics(outcomes[i].metrics));
  }
  return groups;
}

void write_text(const fs::path& path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  fn(os);
}

int finish(const std::vector<RunOutcome>& outcomes) {
  for (const auto& o : outcomes)
    if (o.status != RunStatus::kDone) return kExitRunFailed;
  return kExitOk;
}

int cmd_run(const CommonFlags& f, bool export_rewards) {
  const TrainConfig cfg = f.config();
  const fs::path dir = f.out ? fs::path(*f.out)
                             : output_root(std::nullopt) / ("run_" + cfg.env.name + "_" + to_string(cfg.method) +
                                                            "_s" + std::to_string(cfg.seed));
  fs::create_directories(dir);
  if (export_rewards) {
    std::visit(
        [&](const auto& env) {
          if (!env.enumerable()) throw ConfigError("export-rewards: " + cfg.env.name + " is not enumerable at this size");
          write_text(dir / "rewards.csv", [&](std::ostream& os) { write_reward_table_csv(os, env); });
        },
        make_env(cfg));
  }
  std::vector<RunPlan> plans{{std::string(to_string(cfg.method)) + "/seed_" + std::to_string(cfg.seed), cfg, dir}};
  Manifest manifest(dir / "manifest.json", "run", cfg, {cfg.seed}, plans);
  const auto outcomes = execute_plans(plans, manifest, 1, report);
  std::cout << dir.string() << '\n';
  return finish(outcomes);
}

int cmd_compare(const CommonFlags& f, const std::string& methods_text, const std::string& seeds_text) {
  const TrainConfig base = f.config();
  std::vector<Method> methods;
  for (const auto& m : split_names(methods_text)) methods.push_back(method_from_string(m));
  if (methods.empty()) throw ConfigError("methods: list is empty");
  const auto seeds =
      seeds_text.empty() ? default_seeds(base.env.name) : parse_list<std::uint64_t>(seeds_text, "seeds");
  const fs::path dir = f.out ? fs::path(*f.out) : output_root(std::nullopt) / ("compare_" + base.env.name);
  fs::create_directories(dir);
  std::vector<RunPlan> plans;
  for (Method m : methods) {
    for (auto s : seeds) {
      nlohmann::json doc = f.document();
      doc["method"] = to_string(m);
      doc["seed"] = s;
      const TrainConfig cfg = config_from_json(doc);
      const std::string id = std::string(to_string(m)) + "/seed_" + std::to_string(s);
      plans.push_back({id, cfg, dir / to_string(m) / ("seed_" + std::to_string(s))});
    }
  }
  Manifest manifest(dir / "manifest.json", "compare", base, seeds, plans);
  const auto outcomes = execute_plans(plans, manifest, f.jobs, report);
  const auto groups = collect(plans, outcomes, [](const RunPlan& p) { return std::string(to_string(p.config.method)); });
  write_text(dir / "aggregate.csv", [&](std::ostream& os) { write_aggregate_csv(os, groups); });
  write_text(dir / "ranking.csv", [&](std::ostream& os) { write_ranking_csv(os, rank_groups(groups)); });
  std::cout << dir.string() << '\n';
  return finish(outcomes);
}

int cmd_sweep(const CommonFlags& f, const std::string& alphas_text, const std::string& betas_text,
              const std::string& seeds_text) {
  const TrainConfig base = f.config();
  const auto alphas = alphas_text.empty() ? default_alpha_grid() : parse_list<double>(alphas_text, "alphas");
  const auto betas = betas_text.empty() ? default_beta_grid() : parse_list<double>(betas_text, "betas");
  const auto seeds =
      seeds_text.empty() ? default_seeds(base.env.name) : parse_list<std::uint64_t>(seeds_text, "seeds");
  const fs::path dir = f.out ? fs::path(*f.out) : output_root(std::nullopt) / ("sweep_" + base.env.name);
  fs::create_directories(dir);
  std::vector<RunPlan> plans;
  for (double b : betas) {
    for (double a : alphas) {
      for (auto s : seeds) {
        nlohmann::json doc = f.document();
        doc["alpha"] = a;
        doc["beta"] = b;
        doc["seed"] = s;
        const TrainConfig cfg = config_from_json(doc);
        const std::string cell = "a" + value_label(a) + "_b" + value_label(b);
        plans.push_back({cell + "/seed_" + std::to_string(s), cfg, dir / cell / ("seed_" + std::to_string(s))});
      }
    }
  }
  Manifest manifest(dir / "manifest.json", "sweep", base, seeds, plans);
  const auto outcomes = execute_plans(plans, manifest, f.jobs, report);
  auto cell_of = [](const RunPlan& p) {
    return "a" + value_label(p.config.alpha) + "_b" + value_label(p.config.beta);
  };
  const auto groups = collect(plans, outcomes, cell_of);
  std::vector<SweepCell> cells;
  for (double b : betas) {
    for (double a : alphas) {
      SweepCell c{a, b, 0, std::nullopt};
      const auto it = groups.find("a" + value_label(a) + "_b" + value_label(b));
      std::vector<double> tv;
      if (it != groups.end()) {
        for (const auto& log : it->second) {
          if (log.empty()) continue;
          ++c.runs;
          if (log.back().tv) tv.push_back(*log.back().tv);
        }
      }
      c.tv = describe(tv);
      cells.push_back(c);
    }
  }
  write_text(dir / "sweep_matrix.csv", [&](std::ostream& os) { write_sweep_csv(os, cells); });
  write_text(dir / "aggregate.csv", [&](std::ostream& os) { write_aggregate_csv(os, groups); });
  std::cout << dir.string() << '\n';
  return finish(outcomes);
}

int cmd_eval_checkpoint(const std::string& path, const std::optional<std::string>& out) {
  nlohmann::json ck;
  try {
    ck = read_json_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  if (!ck.is_object() || !ck.contains("config")) throw ConfigError("checkpoint: missing config section");
  const TrainConfig cfg = config_from_json(ck.at("config"));
  nlohmann::json result;
  std::visit(
      [&](const auto& env) {
        using Env = std::decay_t<decltype(env)>;
        Trainer<Env> trainer(env, cfg);
        trainer.restore(ck);
        const MetricRecord r = trainer.evaluate();
        result = to_json(r);
        result["env"] = cfg.env.name;
        result["method"] = to_string(cfg.method);
        result["seed"] = cfg.seed;
        if (const auto* ref = trainer.exact_reference()) {
          result["log_z_exact"] = ref->log_z;
          result["log_z_error"] = std::abs(r.log_z - ref->log_z);
        }
      },
      make_env(cfg));
  if (out) write_json_file(*out, result);
  std::cout << result.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acegfn: GFlowNet training with divergent trajectory balance and baselines"};
  app.require_subcommand(1);

  CommonFlags run_flags, cmp_flags, sweep_flags;
  auto* run = app.add_subcommand("run", "train one configuration");
  run_flags.attach(run, true, true);
  bool export_rewards = false;
  run->add_flag("--export-rewards", export_rewards, "also write rewards.csv (key, log_reward) for enumerable envs");

  auto* cmp = app.add_subcommand("compare", "train several methods over several seeds");
  cmp_flags.attach(cmp, false, false);
  std::string methods = "ace,tb,at,sa", cmp_seeds;
  cmp->add_option("--methods", methods, "comma-separated methods");
  cmp->add_option("--seeds", cmp_seeds, "comma-separated seeds (default: per environment)");

  auto* sweep = app.add_subcommand("sweep", "alpha x beta grid for one method");
  sweep_flags.attach(sweep, true, false);
  std::string alphas, betas, sweep_seeds;
  sweep->add_option("--alphas", alphas, "comma-separated alpha grid (default 0.1,0.2,0.4,0.7)");
  sweep->add_option("--betas", betas, "comma-separated beta grid (default 0.25,0.5,1)");
  sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds (default: per environment)");

  auto* eval = app.add_subcommand("eval-checkpoint", "evaluate a saved checkpoint");
  std::string ck_path;
  std::optional<std::string> eval_out;
  eval->add_option("checkpoint", ck_path, "checkpoint.json")->required();
  eval->add_option("--out", eval_out, "write the evaluation JSON here too");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_flags, export_rewards);
    if (*cmp) return cmd_compare(cmp_flags, methods, cmp_seeds);
    if (*sweep) return cmd_sweep(sweep_flags, alphas, betas, sweep_seeds);
    if (*eval) return cmd_eval_checkpoint(ck_path, eval_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRunFailed;
  }
  return kExitConfig;
}
