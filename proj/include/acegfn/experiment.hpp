#pragma once

// Experiment orchestration: environment construction from a config, single
// runs with on-disk artifacts, the run manifest, and aggregation of child
// metric CSVs into comparison, ranking and sweep tables.

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "acegfn/checkpoint.hpp"
#include "acegfn/config.hpp"
#include "acegfn/envs/bag.hpp"
#include "acegfn/envs/grid.hpp"
#include "acegfn/envs/knapsack.hpp"
#include "acegfn/envs/random_walk.hpp"
#include "acegfn/envs/sequence.hpp"
#include "acegfn/metrics.hpp"
#include "acegfn/trainer.hpp"

namespace acegfn {

namespace fs = std::filesystem;

using AnyEnv = std::variant<envs::GridWorldEnv, envs::LazyRandomWalkEnv, envs::BitSequenceEnv, envs::SequenceDesignEnv,
                            envs::BagEnv, envs::KnapsackEnv>;

inline AnyEnv make_env(const TrainConfig& cfg) {
  const EnvSpec& e = cfg.env;
  const std::uint64_t seed = cfg.env_seed();
  if (e.name == "grid") return envs::GridWorldEnv(e.grid_side, e.grid_dims);
  if (e.name == "rings" || e.name == "eight_gaussians") {
    const auto target = e.name == "rings" ? envs::WalkTarget::kRings : envs::WalkTarget::kEightGaussians;
    FourierTimeFeatures tf;
    tf.n_freq = e.walk_fourier_freqs;
    return envs::LazyRandomWalkEnv(e.walk_half_width, target, e.walk_floor, e.walk_horizon, tf);
  }
  if (e.name == "bitseq") return envs::BitSequenceEnv(envs::BitSequenceReward(e.bitseq_length, seed, e.bitseq_modes));
  if (e.name == "seqdesign") return envs::SequenceDesignEnv(envs::SequenceDesignReward(e.seq_length, e.seq_vocab, seed));
  if (e.name == "bag") return envs::BagEnv(e.bag_vocab, e.bag_size, seed, e.bag_length_scale);
  if (e.name == "knapsack")
    return envs::KnapsackEnv(
        envs::KnapsackInstance::random(e.knapsack_items, seed, e.knapsack_capacity, e.knapsack_copies));
  throw ConfigError("env.name: unknown environment '" + e.name + "'");
}

// Output root: explicit flag, then ACE_GFN_OUT, then ./runs.
inline fs::path output_root(const std::optional<std::string>& flag) {
  if (flag && !flag->empty()) return *flag;
  if (const char* env = std::getenv("ACE_GFN_OUT"); env && *env) return env;
  return "runs";
}

enum class RunStatus { kPending, kRunning, kDone, kFailed };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::kPending: return "pending";
    case RunStatus::kRunning: return "running";
    case RunStatus::kDone: return "done";
    case RunStatus::kFailed: return "failed";
  }
  return "?";
}

struct RunPlan {
  std::string id;
  TrainConfig config;
  fs::path dir;
};

struct RunOutcome {
  RunStatus status = RunStatus::kPending;
  std::string error;
  fs::path metrics;
  fs::path checkpoint;
  fs::path summary;
  fs::path snapshot;  // set when training aborted
  std::optional<MetricRecord> final_record;
  double wall_seconds = 0.0;
};

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

// Trains one config and writes metrics.csv, checkpoint.json and
// summary.json into `dir`. Never throws for training failures; those come
// back as a failed outcome.
inline RunOutcome execute_run(const TrainConfig& cfg, const fs::path& dir) {
  RunOutcome out;
  fs::create_directories(dir);
  out.metrics = dir / "metrics.csv";
  out.checkpoint = dir / "checkpoint.json";
  out.summary = dir / "summary.json";
  const auto t0 = std::chrono::steady_clock::now();
  nlohmann::json summary;
  summary["env"] = cfg.env.name;
  summary["method"] = to_string(cfg.method);
  summary["seed"] = cfg.seed;
  summary["alpha"] = cfg.alpha;
  summary["beta"] = cfg.beta;
  try {
    const AnyEnv any = make_env(cfg);
    std::visit(
        [&](const auto& env) {
          using Env = std::decay_t<decltype(env)>;
          Trainer<Env> trainer(env, cfg);
          std::ofstream csv(out.metrics, std::ios::binary);
          if (!csv) throw Error("cannot write '" + out.metrics.string() + "'");
          write_csv_header(csv);
          try {
            trainer.run([&](const MetricRecord& r) {
              write_csv_row(csv, r);
              csv.flush();
            });
          } catch (const TrainingAborted& e) {
            out.snapshot = dir / "abort_snapshot.json";
            write_json_file(out.snapshot.string(), e.snapshot());
            throw;
          }
          write_json_file(out.checkpoint.string(), trainer.checkpoint());
          if (!trainer.log().empty()) out.final_record = trainer.log().back();
          const MetricRecord r = trainer.evaluate();
          summary["iterations"] = trainer.iteration();
          summary["trajectories_consumed"] = trainer.trajectories_consumed();
          summary["final_tv"] = optional_json(r.tv);
          summary["log_z"] = r.log_z;
          if (const auto* ref = trainer.exact_reference()) {
            summary["log_z_exact"] = ref->log_z;
            summary["log_z_error"] = std::abs(r.log_z - ref->log_z);
          } else {
            summary["log_z_exact"] = nullptr;
            summary["log_z_error"] = nullptr;
          }
          summary["w"] = optional_json(r.w);
          summary["topk_mean_reward"] = optional_json(r.topk_mean_reward);
          summary["modes_found"] = r.modes_found ? nlohmann::json(*r.modes_found) : nlohmann::json(nullptr);
          summary["unique_terminals"] = r.unique_terminals;
        },
        any);
    out.status = RunStatus::kDone;
  } catch (const std::exception& e) {
    out.status = RunStatus::kFailed;
    out.error = e.what();
    summary["error"] = out.error;
    if (!out.snapshot.empty()) summary["snapshot"] = out.snapshot.string();
  }
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  summary["status"] = to_string(out.status);
  summary["wall_seconds"] = out.wall_seconds;
  try {
    write_json_file(out.summary.string(), summary);
  } catch (const std::exception& e) {
    if (out.status == RunStatus::kDone) {
      out.status = RunStatus::kFailed;
      out.error = e.what();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest. Written before any run starts; each status change rewrites it
// through a temporary file under an exclusive flock on a sibling lock file.

class Manifest {
 public:
  Manifest(fs::path path, const std::string& command, const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
           const std::vector<RunPlan>& plans)
      : path_(std::move(path)) {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = to_json(base);
    j["seeds"] = seeds;
    j["output_dir"] = path_.parent_path().string();
    j["runs"] = nlohmann::json::array();
    for (const auto& p : plans) {
      j["runs"].push_back({{"id", p.id},
                           {"config", to_json(p.config)},
                           {"dir", p.dir.string()},
                           {"status", to_string(RunStatus::kPending)},
                           {"artifacts",
                            {{"metrics", (p.dir / "metrics.csv").string()},
                             {"checkpoint", (p.dir / "checkpoint.json").string()},
                             {"summary", (p.dir / "summary.json").string()}}}});
    }
    locked([&] { write_atomic(j); });
  }

  const fs::path& path() const { return path_; }

  void update(const std::string& id, RunStatus status, const RunOutcome* outcome = nullptr) {
    std::lock_guard<std::mutex> guard(mutex_);
    locked([&] {
      nlohmann::json j = read_json_file(path_.string());
      for (auto& r : j.at("runs")) {
        if (r.at("id") != id) continue;
        r["status"] = to_string(status);
        if (outcome) {
          if (!outcome->error.empty()) r["error"] = outcome->error;
          if (!outcome->snapshot.empty()) r["artifacts"]["snapshot"] = outcome->snapshot.string();
          r["wall_seconds"] = outcome->wall_seconds;
        }
      }
      write_atomic(j);
    });
  }

  static nlohmann::json read(const fs::path& path) { return read_json_file(path.string()); }

 private:
  template <class Fn>
  void locked(Fn&& fn) {
    const std::string lock_path = path_.string() + ".lock";
    const int fd = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd < 0) throw Error("cannot open lock file '" + lock_path + "'");
    if (::flock(fd, LOCK_EX) != 0) {
      ::close(fd);
      throw Error("cannot lock '" + lock_path + "'");
    }
    try {
      fn();
    } catch (...) {
      ::flock(fd, LOCK_UN);
      ::close(fd);
      throw;
    }
    ::flock(fd, LOCK_UN);
    ::close(fd);
  }

  void write_atomic(const nlohmann::json& j) {
    const fs::path tmp = path_.string() + ".tmp";
    {
      std::ofstream os(tmp);
      if (!os) throw Error("cannot write '" + tmp.string() + "'");
      os << j.dump(2) << '\n';
    }
    fs::rename(tmp, path_);
  }

  fs::path path_;
  std::mutex mutex_;
};

// Runs every plan with at most `jobs` concurrent workers.
inline std::vector<RunOutcome> execute_plans(const std::vector<RunPlan>& plans, Manifest& manifest, int jobs,
                                             const std::function<void(const RunPlan&, const RunOutcome&)>& on_done = {}) {
  std::vector<RunOutcome> outcomes(plans.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (std::size_t i = next++; i < plans.size(); i = next++) {
      manifest.update(plans[i].id, RunStatus::kRunning);
      outcomes[i] = execute_run(plans[i].config, plans[i].dir);
      manifest.update(plans[i].id, outcomes[i].status, &outcomes[i]);
      if (on_done) {
        std::lock_guard<std::mutex> g(report);
        on_done(plans[i], outcomes[i]);
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(plans.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return outcomes;
}

inline MetricLog read_metrics(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path.string() + "'");
  return read_csv(is);
}

// ---------------------------------------------------------------------------
// Aggregation over child CSVs.

struct Stat {
  long n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 when n < 2
  double median = 0.0;
};

inline std::optional<Stat> describe(std::vector<double> xs) {
  if (xs.empty()) return std::nullopt;
  Stat s;
  s.n = static_cast<long>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  std::sort(xs.begin(), xs.end());
  const std::size_t h = xs.size() / 2;
  s.median = xs.size() % 2 ? xs[h] : 0.5 * (xs[h - 1] + xs[h]);
  return s;
}

inline std::optional<double> median_of(std::vector<double> xs) {
  auto s = describe(std::move(xs));
  return s ? std::optional<double>(s->median) : std::nullopt;
}

// Numeric value of a named metric column, if present.
inline std::optional<double> metric_value(const MetricRecord& r, const std::string& col) {
  if (col == "iteration") return static_cast<double>(r.iteration);
  if (col == "trajectories_consumed") return static_cast<double>(r.trajectories_consumed);
  if (col == "tv") return r.tv;
  if (col == "log_z") return r.log_z;
  if (col == "log_z_div") return r.log_z_div;
  if (col == "w") return r.w;
  if (col == "mean_loss_canonical") return r.mean_loss_canonical;
  if (col == "mean_loss_exploration") return r.mean_loss_exploration;
  if (col == "topk_mean_reward") return r.topk_mean_reward;
  if (col == "modes_found") return r.modes_found ? std::optional<double>(static_cast<double>(*r.modes_found)) : std::nullopt;
  if (col == "unique_terminals") return static_cast<double>(r.unique_terminals);
  throw Error("unknown metric column '" + col + "'");
}

inline const std::vector<std::string>& aggregated_metrics() {
  static const std::vector<std::string> cols{"tv",    "log_z",  "log_z_div",       "w", "mean_loss_canonical",
                                             "mean_loss_exploration", "topk_mean_reward", "modes_found",
                                             "unique_terminals"};
  return cols;
}

// Tidy aggregate: one row per (group, iteration, metric) with mean and std
// over the group's runs.
inline void write_aggregate_csv(std::ostream& os, const std::map<std::string, std::vector<MetricLog>>& groups) {
  os << "group,iteration,trajectories_consumed,metric,n,mean,std\n";
  for (const auto& [group, logs] : groups) {
    std::map<long, std::vector<const MetricRecord*>> by_iter;
    for (const auto& log : logs)
      for (const auto& r : log) by_iter[r.iteration].push_back(&r);
    for (const auto& [iter, recs] : by_iter) {
      for (const auto& col : aggregated_metrics()) {
        std::vector<double> xs;
        for (const auto* r : recs)
          if (auto v = metric_value(*r, col)) xs.push_back(*v);
        auto s = describe(xs);
        if (!s) continue;
        os << group << ',' << iter << ',' << recs.front()->trajectories_consumed << ',' << col << ',' << s->n << ','
           << format_double(s->mean) << ',' << format_double(s->std) << '\n';
      }
    }
  }
}

struct RankingRow {
  std::string group;
  long runs = 0;
  std::optional<Stat> tv;
  std::optional<Stat> topk;
  std::optional<Stat> modes;
};

// Final-checkpoint comparison. Groups are ranked by median TV (lower is
// better) when every group has it, otherwise by median top-K reward.
inline std::vector<RankingRow> rank_groups(const std::map<std::string, std::vector<MetricLog>>& groups) {
  std::vector<RankingRow> rows;
  for (const auto& [group, logs] : groups) {
    RankingRow row;
    row.group = group;
    std::vector<double> tv, topk, modes;
    for (const auto& log : logs) {
      if (log.empty()) continue;
      ++row.runs;
      const auto& r = log.back();
      if (r.tv) tv.push_back(*r.tv);
      if (r.topk_mean_reward) topk.push_back(*r.topk_mean_reward);
      if (r.modes_found) modes.push_back(static_cast<double>(*r.modes_found));
    }
    row.tv = describe(tv);
    row.topk = describe(topk);
    row.modes = describe(modes);
    rows.push_back(row);
  }
  const bool by_tv = std::all_of(rows.begin(), rows.end(), [](const RankingRow& r) { return r.tv.has_value(); });
  std::stable_sort(rows.begin(), rows.end(), [&](const RankingRow& a, const RankingRow& b) {
    if (by_tv) return a.tv->median < b.tv->median;
    const double x = a.topk ? a.topk->median : -HUGE_VAL;
    const double y = b.topk ? b.topk->median : -HUGE_VAL;
    return x > y;
  });
  return rows;
}

inline void write_ranking_csv(std::ostream& os, const std::vector<RankingRow>& rows) {
  os << "rank,group,runs,final_tv_median,final_tv_mean,final_tv_std,topk_median,topk_mean,topk_std,modes_median\n";
  auto cell = [](const std::optional<Stat>& s, double Stat::*f) { return s ? format_double((*s).*f) : std::string(); };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << i + 1 << ',' << r.group << ',' << r.runs << ',' << cell(r.tv, &Stat::median) << ',' << cell(r.tv, &Stat::mean)
       << ',' << cell(r.tv, &Stat::std) << ',' << cell(r.topk, &Stat::median) << ',' << cell(r.topk, &Stat::mean) << ','
       << cell(r.topk, &Stat::std) << ',' << cell(r.modes, &Stat::median) << '\n';
  }
}

struct SweepCell {
  double alpha = 0.0;
  double beta = 0.0;
  long runs = 0;
  std::optional<Stat> tv;
};

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepCell>& cells) {
  os << "alpha,beta,runs,final_tv_mean,final_tv_std,final_tv_median\n";
  for (const auto& c : cells) {
    os << format_double(c.alpha) << ',' << format_double(c.beta) << ',' << c.runs << ',';
    if (c.tv) os << format_double(c.tv->mean) << ',' << format_double(c.tv->std) << ',' << format_double(c.tv->median);
    else os << ",,";
    os << '\n';
  }
}

inline const std::vector<double>& default_alpha_grid() {
  static const std::vector<double> g{0.1, 0.2, 0.4, 0.7};
  return g;
}

inline const std::vector<double>& default_beta_grid() {
  static const std::vector<double> g{0.25, 0.5, 1.0};
  return g;
}

// key (hex of the state key), log_reward for every terminal of an
// enumerable environment, in enumeration order.
template <StateGraph Env>
void write_reward_table_csv(std::ostream& os, const Env& env, std::size_t cap = kDefaultStateCap) {
  const auto en = enumerate_states(env, cap);
  os << "key,log_reward\n";
  for (int t : en.terminals) os << hex_encode(en.keys[t]) << ',' << format_double(env.log_reward(en.states[t])) << '\n';
}

// Short stable label for a grid value, used in directory names.
inline std::string value_label(double v) {
  std::string s = format_double(v);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

}  // namespace acegfn
