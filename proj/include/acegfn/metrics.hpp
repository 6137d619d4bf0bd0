#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "acegfn/core/errors.hpp"
#include "acegfn/state_graph.hpp"

namespace acegfn {

struct MetricRecord {
  long iteration = 0;
  long trajectories_consumed = 0;
  std::optional<double> tv;
  double log_z = 0.0;
  std::optional<double> log_z_div;
  std::optional<double> w;
  double mean_loss_canonical = 0.0;
  std::optional<double> mean_loss_exploration;
  std::optional<double> topk_mean_reward;
  std::optional<long> modes_found;
  long unique_terminals = 0;
};

using MetricLog = std::vector<MetricRecord>;

inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols{
      "iteration",         "trajectories_consumed", "tv",
      "log_z",             "log_z_div",             "w",
      "mean_loss_canonical", "mean_loss_exploration", "topk_mean_reward",
      "modes_found",       "unique_terminals"};
  return cols;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

namespace detail {
inline std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }
inline std::string opt_str(const std::optional<long>& v) { return v ? std::to_string(*v) : std::string(); }
inline std::string opt_json(const std::optional<double>& v) { return v ? format_double(*v) : std::string("null"); }
inline std::string opt_json(const std::optional<long>& v) { return v ? std::to_string(*v) : std::string("null"); }
}  // namespace detail

inline void write_csv_header(std::ostream& os) {
  const auto& cols = metric_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
}

inline void write_csv_row(std::ostream& os, const MetricRecord& r) {
  using detail::opt_str;
  os << r.iteration << ',' << r.trajectories_consumed << ',' << opt_str(r.tv) << ',' << format_double(r.log_z) << ','
     << opt_str(r.log_z_div) << ',' << opt_str(r.w) << ',' << format_double(r.mean_loss_canonical) << ','
     << opt_str(r.mean_loss_exploration) << ',' << opt_str(r.topk_mean_reward) << ',' << opt_str(r.modes_found) << ','
     << r.unique_terminals << '\n';
}

inline void write_csv(std::ostream& os, const MetricLog& log) {
  write_csv_header(os);
  for (const auto& r : log) write_csv_row(os, r);
}

inline void write_jsonl(std::ostream& os, const MetricLog& log) {
  using detail::opt_json;
  for (const auto& r : log) {
    os << "{\"iteration\":" << r.iteration << ",\"trajectories_consumed\":" << r.trajectories_consumed
       << ",\"tv\":" << opt_json(r.tv) << ",\"log_z\":" << format_double(r.log_z)
       << ",\"log_z_div\":" << opt_json(r.log_z_div) << ",\"w\":" << opt_json(r.w)
       << ",\"mean_loss_canonical\":" << format_double(r.mean_loss_canonical)
       << ",\"mean_loss_exploration\":" << opt_json(r.mean_loss_exploration)
       << ",\"topk_mean_reward\":" << opt_json(r.topk_mean_reward) << ",\"modes_found\":" << opt_json(r.modes_found)
       << ",\"unique_terminals\":" << r.unique_terminals << "}\n";
  }
}

// Inverse of write_csv. The header must list exactly metric_columns().
inline MetricLog read_csv(std::istream& is) {
  auto split = [](const std::string& line) {
    std::vector<std::string> out(1);
    for (char c : line) {
      if (c == ',') out.emplace_back();
      else if (c != '\r') out.back().push_back(c);
    }
    return out;
  };
  std::string line;
  if (!std::getline(is, line) || split(line) != metric_columns()) throw Error("metrics CSV has an unexpected header");
  MetricLog log;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != metric_columns().size()) throw Error("metrics CSV row has the wrong number of fields");
    auto num = [](const std::string& s) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || *end != '\0') throw Error("metrics CSV field '" + s + "' is not a number");
      return v;
    };
    auto opt = [&](const std::string& s) { return s.empty() ? std::nullopt : std::optional<double>(num(s)); };
    MetricRecord r;
    r.iteration = static_cast<long>(num(f[0]));
    r.trajectories_consumed = static_cast<long>(num(f[1]));
    r.tv = opt(f[2]);
    r.log_z = num(f[3]);
    r.log_z_div = opt(f[4]);
    r.w = opt(f[5]);
    r.mean_loss_canonical = num(f[6]);
    r.mean_loss_exploration = opt(f[7]);
    r.topk_mean_reward = opt(f[8]);
    if (!f[9].empty()) r.modes_found = static_cast<long>(num(f[9]));
    r.unique_terminals = static_cast<long>(num(f[10]));
    log.push_back(r);
  }
  return log;
}

// 1/2 sum |p - q|; keys missing from one side count as 0.
inline double tv_distance(const std::map<StateKey, double>& p, const std::map<StateKey, double>& q) {
  for (const auto* d : {&p, &q})
    for (const auto& [k, v] : *d)
      if (v < 0.0 || !std::isfinite(v)) throw InvalidDistribution("negative or non-finite mass");
  double acc = 0.0;
  auto ip = p.begin();
  auto iq = q.begin();
  while (ip != p.end() || iq != q.end()) {
    if (iq == q.end() || (ip != p.end() && ip->first < iq->first)) {
      acc += ip->second;
      ++ip;
    } else if (ip == p.end() || iq->first < ip->first) {
      acc += iq->second;
      ++iq;
    } else {
      acc += std::abs(ip->second - iq->second);
      ++ip;
      ++iq;
    }
  }
  return 0.5 * acc;
}

struct TerminalRecord {
  double log_reward = 0.0;
  long first_seen = 0;
  bool mode = false;
};

// Append-only record of every distinct terminal seen during training.
class TerminalHistory {
 public:
  // Returns true when `key` is new.
  bool observe(const StateKey& key, double log_reward, long iteration, bool mode) {
    auto [it, inserted] = entries_.try_emplace(key, TerminalRecord{log_reward, iteration, mode});
    if (inserted && mode) ++modes_;
    return inserted;
  }

  std::size_t size() const { return entries_.size(); }
  long modes_found() const { return modes_; }
  bool empty() const { return entries_.empty(); }
  const std::map<StateKey, TerminalRecord>& entries() const { return entries_; }

 private:
  std::map<StateKey, TerminalRecord> entries_;
  long modes_ = 0;
};

// Mean reward of the K highest-reward unique terminals, or of all of them
// when fewer than K are known. Empty history has no value.
inline std::optional<double> topk_unique_mean(const TerminalHistory& history, std::size_t k = 200) {
  if (history.empty() || k == 0) return std::nullopt;
  std::vector<double> r;
  r.reserve(history.size());
  for (const auto& [key, rec] : history.entries()) r.push_back(std::exp(rec.log_reward));
  const std::size_t n = std::min(k, r.size());
  std::partial_sort(r.begin(), r.begin() + n, r.end(), std::greater<>());
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += r[i];
  return s / static_cast<double>(n);
}

}  // namespace acegfn
