#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rpo_lab/error.hpp"
#include "rpo_lab/rng.hpp"

namespace rpo {

enum class Activation { Tanh, Relu };

inline std::string to_string(Activation act) { return act == Activation::Tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw LabError(ErrorKind::Parse, "activation", "unknown nonlinearity '" + name + "'");
}

/// One-hot state input, optional hidden layers, linear output layer.
/// An empty hidden list gives a tabular (per-state logit) model.
struct Architecture {
  std::size_t n_inputs = 0;
  std::vector<std::size_t> hidden;
  std::size_t n_outputs = 0;
  Activation activation = Activation::Tanh;

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{n_inputs};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(n_outputs);
    return w;
  }

  std::size_t parameter_count() const {
    const auto w = widths();
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) total += w[l + 1] * w[l] + w[l + 1];
    return total;
  }

  bool operator==(const Architecture&) const = default;
};

struct GradientBuffer {
  std::vector<double> grad;

  bool all_finite() const {
    return std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); });
  }
};

/// Dense network with parameters in one flat vector: per layer, a row-major
/// (out x in) weight block followed by the bias.
class Mlp {
 public:
  Mlp() = default;

  /// Hidden weights ~ N(0, 1/fan_in) (N(0, 1) on the one-hot layer), output
  /// weights scaled by `output_scale`, zero biases.
  Mlp(Architecture arch, std::uint64_t seed, double output_scale) : arch_(std::move(arch)) {
    require(arch_.n_inputs > 0 && arch_.n_outputs > 0, ErrorKind::DimensionMismatch, "architecture",
            "inputs and outputs must be positive");
    theta_.assign(arch_.parameter_count(), 0.0);
    Rng rng(seed);
    const auto w = arch_.widths();
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      const bool last = l + 2 == w.size();
      double scale = l == 0 ? 1.0 : 1.0 / std::sqrt(static_cast<double>(w[l]));
      if (last) scale *= output_scale;
      for (std::size_t i = 0; i < w[l + 1] * w[l]; ++i) theta_[offset + i] = scale * rng.normal();
      offset += w[l + 1] * w[l] + w[l + 1];
    }
  }

  const Architecture& architecture() const { return arch_; }
  std::span<double> parameters() { return theta_; }
  std::span<const double> parameters() const { return theta_; }
  std::size_t size() const { return theta_.size(); }

  /// Offset of the final layer's weight block.
  std::size_t output_layer_offset() const {
    const auto w = arch_.widths();
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 2 < w.size(); ++l) offset += w[l + 1] * w[l] + w[l + 1];
    return offset;
  }

  struct Trace {
    std::vector<std::vector<double>> act;  // post-activation per hidden layer
    std::vector<double> out;
  };

  Trace forward(std::size_t input) const {
    if (input >= arch_.n_inputs)
      throw LabError(ErrorKind::OutOfRange, "state", "state " + std::to_string(input) + " outside encoding range");
    const auto w = arch_.widths();
    Trace trace;
    std::vector<double> current;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      const std::size_t in = w[l], out = w[l + 1];
      const double* weights = theta_.data() + offset;
      const double* bias = weights + out * in;
      std::vector<double> pre(out);
      for (std::size_t o = 0; o < out; ++o) {
        double acc = bias[o];
        if (l == 0) {
          acc += weights[o * in + input];
        } else {
          for (std::size_t i = 0; i < in; ++i) acc += weights[o * in + i] * current[i];
        }
        if (!std::isfinite(acc))
          throw LabError(ErrorKind::NonFinite, "parameters", "non-finite pre-activation in layer " + std::to_string(l));
        pre[o] = acc;
      }
      offset += out * in + out;
      if (l + 2 == w.size()) {
        trace.out = std::move(pre);
      } else {
        for (auto& x : pre) x = arch_.activation == Activation::Tanh ? std::tanh(x) : std::max(0.0, x);
        current = pre;
        trace.act.push_back(std::move(pre));
      }
    }
    return trace;
  }

  /// grad += d(sum_o dout[o] * out[o]) / d theta for the traced input.
  void backward(std::size_t input, const Trace& trace, std::span<const double> dout,
                std::span<double> grad) const {
    const auto w = arch_.widths();
    const std::size_t n_layers = w.size() - 1;
    std::vector<std::size_t> offsets(n_layers);
    std::size_t offset = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      offsets[l] = offset;
      offset += w[l + 1] * w[l] + w[l + 1];
    }
    std::vector<double> delta(dout.begin(), dout.end());
    for (std::size_t l = n_layers; l-- > 0;) {
      const std::size_t in = w[l], out = w[l + 1];
      double* gw = grad.data() + offsets[l];
      double* gb = gw + out * in;
      const double* weights = theta_.data() + offsets[l];
      for (std::size_t o = 0; o < out; ++o) gb[o] += delta[o];
      if (l == 0) {
        for (std::size_t o = 0; o < out; ++o) gw[o * in + input] += delta[o];
        break;
      }
      const auto& h = trace.act[l - 1];
      std::vector<double> prev(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        for (std::size_t i = 0; i < in; ++i) {
          gw[o * in + i] += d * h[i];
          prev[i] += d * weights[o * in + i];
        }
      }
      for (std::size_t i = 0; i < in; ++i)
        prev[i] *= arch_.activation == Activation::Tanh ? 1.0 - h[i] * h[i] : (h[i] > 0.0 ? 1.0 : 0.0);
      delta = std::move(prev);
    }
  }

 private:
  Architecture arch_;
  std::vector<double> theta_;
};

inline void softmax_inplace(std::vector<double>& logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (auto& x : logits) {
    x = std::exp(x - peak);
    total += x;
  }
  for (auto& x : logits) x /= total;
}

/// Categorical policy pi_theta(a | s) = softmax(logits(s)).
class PolicyNetwork {
 public:
  PolicyNetwork() = default;
  PolicyNetwork(std::size_t n_states, std::size_t n_actions, std::vector<std::size_t> hidden,
                Activation activation, std::uint64_t seed)
      : mlp_(Architecture{n_states, std::move(hidden), n_actions, activation}, seed, 0.01), seed_(seed) {}
  explicit PolicyNetwork(Mlp mlp, std::uint64_t seed = 0) : mlp_(std::move(mlp)), seed_(seed) {}

  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t n_actions() const { return mlp_.architecture().n_outputs; }
  std::size_t n_states() const { return mlp_.architecture().n_inputs; }

  std::vector<double> forward(std::size_t state) const {
    auto probs = mlp_.forward(state).out;
    softmax_inplace(probs);
    return probs;
  }

  double log_prob(std::size_t state, std::size_t action) const {
    return log_softmax_at(mlp_.forward(state).out, action);
  }

  /// Adds coeff * grad_theta log pi(action | state) into `grad`; returns log pi.
  double accumulate_log_prob_grad(std::size_t state, std::size_t action, double coeff,
                                  std::span<double> grad) const {
    require(action < n_actions(), ErrorKind::InvalidAction, "action", "action index out of range");
    const auto trace = mlp_.forward(state);
    const double logp = log_softmax_at(trace.out, action);
    if (coeff != 0.0) {
      std::vector<double> probs = trace.out;
      softmax_inplace(probs);
      std::vector<double> dout(probs.size());
      for (std::size_t a = 0; a < probs.size(); ++a) dout[a] = coeff * ((a == action ? 1.0 : 0.0) - probs[a]);
      mlp_.backward(state, trace, dout, grad);
    }
    return logp;
  }

  std::pair<double, GradientBuffer> log_prob_and_grad(std::size_t state, std::size_t action) const {
    GradientBuffer g{std::vector<double>(mlp_.size(), 0.0)};
    const double logp = accumulate_log_prob_grad(state, action, 1.0, g.grad);
    return {logp, std::move(g)};
  }

 private:
  static double log_softmax_at(const std::vector<double>& logits, std::size_t action) {
    require(action < logits.size(), ErrorKind::InvalidAction, "action", "action index out of range");
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double x : logits) total += std::exp(x - peak);
    return logits[action] - peak - std::log(total);
  }

  Mlp mlp_;
  std::uint64_t seed_ = 0;
};

class ValueNetwork {
 public:
  ValueNetwork() = default;
  ValueNetwork(std::size_t n_states, std::vector<std::size_t> hidden, Activation activation, std::uint64_t seed)
      : mlp_(Architecture{n_states, std::move(hidden), 1, activation}, seed, 1.0) {}

  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }

  double value(std::size_t state) const { return mlp_.forward(state).out[0]; }

  /// grad += coeff * dV(state)/dtheta; returns V(state).
  double accumulate_grad(std::size_t state, double coeff, std::span<double> grad) const {
    const auto trace = mlp_.forward(state);
    const double d[1] = {coeff};
    mlp_.backward(state, trace, d, grad);
    return trace.out[0];
  }

 private:
  Mlp mlp_;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Ascent step: params += lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(std::span<double> params, std::span<const double> grad, double lr, AdamState& state) {
  require(grad.size() == params.size(), ErrorKind::DimensionMismatch, "grad",
          "gradient length differs from parameter count");
  for (double g : grad) require(std::isfinite(g), ErrorKind::NonFinite, "grad", "non-finite gradient entry");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    params[i] += lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + state.eps);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, u32 header length, JSON architecture header,
// u64 parameter count, little-endian IEEE-754 doubles.

inline constexpr char kCheckpointMagic[8] = {'R', 'P', 'O', 'L', 'A', 'B', 'C', '1'};

inline nlohmann::json architecture_to_json(const Architecture& arch) {
  return {{"n_inputs", arch.n_inputs},
          {"hidden", arch.hidden},
          {"n_outputs", arch.n_outputs},
          {"activation", to_string(arch.activation)}};
}

inline Architecture architecture_from_json(const nlohmann::json& doc) {
  try {
    return {doc.at("n_inputs").get<std::size_t>(), doc.at("hidden").get<std::vector<std::size_t>>(),
            doc.at("n_outputs").get<std::size_t>(), activation_from_string(doc.at("activation").get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    throw LabError(ErrorKind::Parse, "architecture", e.what());
  }
}

namespace detail {

inline void put_le(std::string& out, std::uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const std::string& in, std::size_t& pos, int bytes) {
  require(pos + static_cast<std::size_t>(bytes) <= in.size(), ErrorKind::Parse, "checkpoint", "truncated file");
  std::uint64_t value = 0;
  for (int i = 0; i < bytes; ++i)
    value |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return value;
}

}  // namespace detail

inline std::string encode_checkpoint(const Mlp& mlp) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string header = architecture_to_json(mlp.architecture()).dump();
  detail::put_le(out, header.size(), 4);
  out += header;
  detail::put_le(out, mlp.size(), 8);
  for (double p : mlp.parameters()) detail::put_le(out, std::bit_cast<std::uint64_t>(p), 8);
  return out;
}

inline Mlp decode_checkpoint(const std::string& bytes) {
  require(bytes.size() >= sizeof(kCheckpointMagic) &&
              std::equal(kCheckpointMagic, kCheckpointMagic + sizeof(kCheckpointMagic), bytes.begin()),
          ErrorKind::Parse, "checkpoint", "bad magic");
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto header_len = static_cast<std::size_t>(detail::get_le(bytes, pos, 4));
  require(pos + header_len <= bytes.size(), ErrorKind::Parse, "checkpoint", "truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw LabError(ErrorKind::Parse, "checkpoint", e.what());
  }
  pos += header_len;
  const auto arch = architecture_from_json(header);
  const auto count = detail::get_le(bytes, pos, 8);
  require(count == arch.parameter_count(), ErrorKind::DimensionMismatch, "checkpoint",
          "parameter count does not match the architecture");
  Mlp mlp(arch, 0, 1.0);
  for (auto& p : mlp.parameters()) p = std::bit_cast<double>(detail::get_le(bytes, pos, 8));
  return mlp;
}

inline void save_checkpoint(const Mlp& mlp, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, path, "cannot open for writing");
  const auto bytes = encode_checkpoint(mlp);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Mlp load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, path, "cannot open for reading");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace rpo
