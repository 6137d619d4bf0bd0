#pragma once

// JSON checkpoints. Doubles are written in shortest round-trip form, so a
// save/load cycle reproduces every parameter, moment and RNG word exactly.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "acegfn/core/errors.hpp"
#include "acegfn/core/rng.hpp"
#include "acegfn/losses.hpp"
#include "acegfn/metrics.hpp"
#include "acegfn/optim.hpp"
#include "acegfn/policy.hpp"

namespace acegfn {

inline std::string hex_encode(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 15]);
  }
  return out;
}

inline std::string hex_decode(const std::string& hex) {
  if (hex.size() % 2) throw Error("hex string of odd length");
  auto val = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw Error("invalid hex digit");
  };
  std::string out(hex.size() / 2, '\0');
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<char>(val(hex[2 * i]) * 16 + val(hex[2 * i + 1]));
  return out;
}

inline nlohmann::json to_json(const MlpPolicy& p) {
  nlohmann::json j;
  j["layer_dims"] = p.layer_dims();
  j["activation"] = to_string(p.activation());
  j["layout"] = nlohmann::json::array();
  for (const auto& lay : p.layout())
    j["layout"].push_back({{"weight", {lay.weight.offset, lay.weight.rows, lay.weight.cols}},
                           {"bias", {lay.bias.offset, lay.bias.rows, lay.bias.cols}}});
  j["params"] = p.params();
  return j;
}

inline MlpPolicy policy_from_json(const nlohmann::json& j) {
  MlpPolicy p(j.at("layer_dims").get<std::vector<int>>(), activation_from_string(j.at("activation")));
  auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != p.param_count()) throw Error("checkpoint parameter count does not match layer_dims");
  p.params() = std::move(params);
  return p;
}

inline nlohmann::json to_json(const AdamWState& s) {
  return {{"step", s.step}, {"m", s.m},         {"v", s.v},         {"lr", s.lr},
          {"weight_decay", s.weight_decay},     {"beta1", s.beta1}, {"beta2", s.beta2}, {"eps", s.eps}};
}

inline AdamWState adamw_from_json(const nlohmann::json& j) {
  AdamWState s;
  s.step = j.at("step");
  s.m = j.at("m").get<std::vector<double>>();
  s.v = j.at("v").get<std::vector<double>>();
  s.lr = j.at("lr");
  s.weight_decay = j.at("weight_decay");
  s.beta1 = j.at("beta1");
  s.beta2 = j.at("beta2");
  s.eps = j.at("eps");
  if (s.m.size() != s.v.size()) throw Error("checkpoint optimizer moments differ in size");
  return s;
}

inline nlohmann::json to_json(const Sampler& s) {
  nlohmann::json j;
  j["forward"] = to_json(s.forward);
  j["backward"] = s.backward ? to_json(*s.backward) : nlohmann::json(nullptr);
  j["log_z"] = s.log_z.value;
  return j;
}

inline Sampler sampler_from_json(const nlohmann::json& j) {
  Sampler s{policy_from_json(j.at("forward")), std::nullopt, {}};
  if (!j.at("backward").is_null()) s.backward = policy_from_json(j.at("backward"));
  s.log_z.value = j.at("log_z");
  return s;
}

inline nlohmann::json to_json(const TerminalHistory& h) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [k, r] : h.entries()) arr.push_back({hex_encode(k), r.log_reward, r.first_seen, r.mode});
  return arr;
}

inline TerminalHistory history_from_json(const nlohmann::json& j) {
  TerminalHistory h;
  for (const auto& e : j) h.observe(hex_decode(e.at(0)), e.at(1), e.at(2), e.at(3));
  return h;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << j.dump() << '\n';
  if (!os) throw Error("failed writing '" + path + "'");
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace acegfn
