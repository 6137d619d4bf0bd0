#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "acegfn/autodiff.hpp"
#include "acegfn/core/errors.hpp"
#include "acegfn/core/log_math.hpp"
#include "acegfn/core/rng.hpp"

namespace acegfn {

enum class Activation { kLeakyRelu, kRelu };

inline const char* to_string(Activation a) { return a == Activation::kRelu ? "relu" : "leaky_relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "leaky_relu" || s == "leaky-relu") return Activation::kLeakyRelu;
  throw ConfigError("unknown activation '" + s + "'");
}

inline constexpr double kLeakySlope = 0.01;

struct ParamSlice {
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

struct LayerLayout {
  ParamSlice weight;  // out x in, row-major
  ParamSlice bias;    // 1 x out
};

// Fully connected network producing one logit per action. A policy with
// layer_dims {features, actions} and one-hot inputs is a tabular policy.
class MlpPolicy {
 public:
  MlpPolicy() = default;

  MlpPolicy(std::vector<int> layer_dims, Activation activation)
      : layer_dims_(std::move(layer_dims)), activation_(activation) {
    if (layer_dims_.size() < 2) throw ConfigError("MlpPolicy needs at least input and output dims");
    for (int d : layer_dims_)
      if (d <= 0) throw ConfigError("MlpPolicy layer dims must be positive");
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < layer_dims_.size(); ++l) {
      LayerLayout lay;
      lay.weight = {offset, layer_dims_[l + 1], layer_dims_[l]};
      offset += lay.weight.size();
      lay.bias = {offset, 1, layer_dims_[l + 1]};
      offset += lay.bias.size();
      layout_.push_back(lay);
    }
    params_.assign(offset, 0.0);
  }

  // Kaiming-uniform fan-in scaling for weights and biases.
  void initialize(Rng& rng) {
    for (const LayerLayout& lay : layout_) {
      const double fan_in = lay.weight.cols;
      const double gain = activation_ == Activation::kRelu ? std::sqrt(2.0)
                                                            : std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
      const double bound_w = gain * std::sqrt(3.0 / fan_in);
      const double bound_b = 1.0 / std::sqrt(fan_in);
      for (std::size_t i = 0; i < lay.weight.size(); ++i) params_[lay.weight.offset + i] = rng.uniform(-bound_w, bound_w);
      for (std::size_t i = 0; i < lay.bias.size(); ++i) params_[lay.bias.offset + i] = rng.uniform(-bound_b, bound_b);
    }
  }

  int input_dim() const { return layer_dims_.front(); }
  int output_dim() const { return layer_dims_.back(); }
  const std::vector<int>& layer_dims() const { return layer_dims_; }
  Activation activation() const { return activation_; }
  const std::vector<LayerLayout>& layout() const { return layout_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  // Raw logits for a batch of feature rows (N x input_dim).
  ad::Matrix logits(const ad::Matrix& features) const {
    if (features.cols() != input_dim()) throw ConfigError("feature dimension does not match policy input");
    ad::Matrix h = features;
    for (std::size_t l = 0; l < layout_.size(); ++l) {
      const LayerLayout& lay = layout_[l];
      Eigen::Map<const ad::RowMajorMatrix> w(params_.data() + lay.weight.offset, lay.weight.rows, lay.weight.cols);
      Eigen::Map<const Eigen::RowVectorXd> b(params_.data() + lay.bias.offset, lay.bias.cols);
      ad::Matrix next = h * w.transpose();
      next.rowwise() += b;
      if (l + 1 < layout_.size()) apply_activation(next);
      h = std::move(next);
    }
    return h;
  }

  double activation_slope() const { return activation_ == Activation::kRelu ? 0.0 : kLeakySlope; }

 private:
  void apply_activation(ad::Matrix& m) const {
    const double slope = activation_slope();
    m = m.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  }

  std::vector<int> layer_dims_;
  Activation activation_ = Activation::kLeakyRelu;
  std::vector<LayerLayout> layout_;
  std::vector<double> params_;
};

// Row-wise masked log-softmax without a tape. Masked entries get the
// kMaskedLogit sentinel before normalisation, so exp() of them is 0.
inline ad::Matrix masked_log_softmax(const ad::Matrix& logits, std::span<const std::uint8_t> mask) {
  ad::Matrix out(logits.rows(), logits.cols());
  const Eigen::Index cols = logits.cols();
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double hi = kNegInf;
    for (Eigen::Index c = 0; c < cols; ++c)
      if (mask[r * cols + c]) hi = std::max(hi, logits(r, c));
    if (hi == kNegInf) throw EmptyActionSet("no allowed action in mask");
    double acc = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c)
      if (mask[r * cols + c]) acc += std::exp(logits(r, c) - hi);
    const double lse = hi + std::log(acc);
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = (mask[r * cols + c] ? logits(r, c) : kMaskedLogit) - lse;
  }
  return out;
}

// Single-state logits with masked entries forced to the sentinel.
inline std::vector<double> forward_logits(const MlpPolicy& policy, std::span<const double> features,
                                          std::span<const std::uint8_t> mask) {
  bool any = false;
  for (auto m : mask) any = any || m;
  if (!any) throw EmptyActionSet("forward_logits: all actions masked");
  ad::Matrix x = Eigen::Map<const Eigen::RowVectorXd>(features.data(), static_cast<Eigen::Index>(features.size()));
  ad::Matrix z = policy.logits(x);
  std::vector<double> out(z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) out[c] = mask[c] ? z(0, c) : kMaskedLogit;
  return out;
}

// Tape handles for an MlpPolicy's parameters.
struct MlpVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  double slope = 0.0;
};

inline MlpVars bind_params(ad::Tape& tape, const MlpPolicy& policy, std::span<double> grad) {
  if (grad.size() != policy.param_count()) throw Error("gradient buffer size mismatch");
  MlpVars vars;
  vars.slope = policy.activation_slope();
  const auto& p = policy.params();
  for (const LayerLayout& lay : policy.layout()) {
    vars.weights.push_back(tape.leaf(std::span<const double>(p).subspan(lay.weight.offset, lay.weight.size()),
                                     lay.weight.rows, lay.weight.cols, grad.subspan(lay.weight.offset, lay.weight.size())));
    vars.biases.push_back(tape.leaf(std::span<const double>(p).subspan(lay.bias.offset, lay.bias.size()), 1,
                                    lay.bias.cols, grad.subspan(lay.bias.offset, lay.bias.size())));
  }
  return vars;
}

inline ad::Var mlp_forward(ad::Tape& tape, const MlpVars& vars, ad::Var x) {
  ad::Var h = x;
  for (std::size_t l = 0; l < vars.weights.size(); ++l) {
    h = ad::affine(tape, h, vars.weights[l], vars.biases[l]);
    if (l + 1 < vars.weights.size()) h = ad::leaky_relu(tape, h, vars.slope);
  }
  return h;
}

// [tau?, sin(2 pi tau 2^k), cos(2 pi tau 2^k)] for k < n_freq, tau clipped to [0, 1].
struct FourierTimeFeatures {
  int n_freq = 4;
  bool include_tau = true;

  int dim() const { return (include_tau ? 1 : 0) + 2 * n_freq; }

  void encode(double tau, std::span<double> out) const {
    tau = std::clamp(tau, 0.0, 1.0);
    std::size_t i = 0;
    if (include_tau) out[i++] = tau;
    for (int k = 0; k < n_freq; ++k) out[i++] = std::sin(2.0 * std::numbers::pi * tau * std::ldexp(1.0, k));
    for (int k = 0; k < n_freq; ++k) out[i++] = std::cos(2.0 * std::numbers::pi * tau * std::ldexp(1.0, k));
  }
};

// One-hot of the last `window` tokens (slot 0 = padding) followed by a
// sinusoidal encoding of the current length.
struct WindowedTokenFeatures {
  int window = 6;
  int vocab = 2;
  int pos_dim = 16;

  int dim() const { return window * (vocab + 1) + pos_dim; }

  template <class Tokens>
  void encode(const Tokens& tokens, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const int len = static_cast<int>(tokens.size());
    for (int w = 0; w < window; ++w) {
      const int pos = len - window + w;
      const int slot = pos >= 0 ? static_cast<int>(tokens[pos]) + 1 : 0;
      out[w * (vocab + 1) + slot] = 1.0;
    }
    const std::size_t base = static_cast<std::size_t>(window) * (vocab + 1);
    for (int i = 0; i < pos_dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / pos_dim);
      out[base + 2 * i] = std::sin(len * freq);
      out[base + 2 * i + 1] = std::cos(len * freq);
    }
  }
};

// Learned log-partition scalar.
struct LogZParam {
  double value = 0.0;
};

}  // namespace acegfn
