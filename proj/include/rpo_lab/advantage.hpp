#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rpo_lab/csv.hpp"
#include "rpo_lab/error.hpp"
#include "rpo_lab/policy_model.hpp"
#include "rpo_lab/rng.hpp"

namespace rpo {

struct Step {
  std::size_t state = 0;
  std::size_t action = 0;
  double reward = 0.0;
  double behavior_logp = 0.0;
  bool done = false;  // terminated (absorbing); never set for time-limit cuts
};

/// Contiguous rollout segment. When the last step is not done the segment
/// was cut (time limit or batch boundary) and `bootstrap_value` estimates
/// the value of the state that followed it.
struct Trajectory {
  std::vector<Step> steps;
  double bootstrap_value = 0.0;
};

/// Consecutive (s, a, s', a') inside one episode. `index` is the position
/// of the first step in the flattened batch.
struct TransitionPair {
  std::size_t index = 0;
  std::size_t s = 0, a = 0, s_next = 0, a_next = 0;
  double adv = 0.0;
  double adv_next = 0.0;
  double behavior_logp = 0.0;
  double behavior_logp_next = 0.0;
};

/// GAE(lambda) over TD residuals delta_t = R_t + gamma V(s_{t+1}) - V(s_t);
/// a done flag zeroes both the bootstrap and the carried sum.
inline std::vector<double> compute_gae(const Trajectory& traj, std::span<const double> values, double gamma,
                                       double lambda) {
  require(values.size() == traj.steps.size(), ErrorKind::DimensionMismatch, "values",
          "expected one value per step (" + std::to_string(traj.steps.size()) + "), got " +
              std::to_string(values.size()));
  const std::size_t n = traj.steps.size();
  std::vector<double> adv(n, 0.0);
  double carry = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const auto& step = traj.steps[t];
    const double next_value = step.done ? 0.0 : (t + 1 < n ? values[t + 1] : traj.bootstrap_value);
    const double delta = step.reward + gamma * next_value - values[t];
    carry = step.done ? delta : delta + gamma * lambda * carry;
    adv[t] = carry;
  }
  return adv;
}

/// Pairs of consecutive steps that do not cross a done flag. `offset` is the
/// batch index of traj.steps[0].
inline std::vector<TransitionPair> extract_pairs(const Trajectory& traj, std::span<const double> advantages,
                                                 std::size_t offset = 0) {
  require(advantages.size() == traj.steps.size(), ErrorKind::DimensionMismatch, "advantages",
          "expected one advantage per step");
  std::vector<TransitionPair> pairs;
  for (std::size_t t = 0; t + 1 < traj.steps.size(); ++t) {
    const auto& cur = traj.steps[t];
    if (cur.done) continue;
    const auto& nxt = traj.steps[t + 1];
    pairs.push_back({offset + t, cur.state, cur.action, nxt.state, nxt.action, advantages[t], advantages[t + 1],
                     cur.behavior_logp, nxt.behavior_logp});
  }
  return pairs;
}

/// Batch indices of the first step of every consecutive triple inside one
/// episode.
inline std::vector<std::size_t> extract_triples(const Trajectory& traj, std::size_t offset = 0) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t + 2 < traj.steps.size(); ++t)
    if (!traj.steps[t].done && !traj.steps[t + 1].done) out.push_back(offset + t);
  return out;
}

struct NormalizationConstants {
  double mean = 0.0;
  double std = 1.0;
};

/// In-place standardization (population std).
inline NormalizationConstants normalize_advantages(std::span<double> adv) {
  NormalizationConstants c;
  if (adv.empty()) return c;
  const double n = static_cast<double>(adv.size());
  c.mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double x : adv) var += (x - c.mean) * (x - c.mean);
  c.std = std::max(std::sqrt(var / n), 1e-12);
  for (auto& x : adv) x = (x - c.mean) / c.std;
  return c;
}

// ---------------------------------------------------------------------------
// Value function fitting

struct ValueNetworkFit {
  ValueNetwork net;
  AdamState adam;
  std::size_t minibatches = 4;
  Rng rng{0};
  std::vector<double> loss_history;  // mean squared error per epoch

  ValueNetworkFit() = default;
  ValueNetworkFit(ValueNetwork network, std::size_t n_minibatches, std::uint64_t seed)
      : net(std::move(network)), minibatches(n_minibatches), rng(seed) {}
};

/// Minibatch Adam descent on mean (V(s) - target)^2. Returns the loss of
/// the final epoch (averaged over its minibatches).
inline double fit_value_targets(ValueNetworkFit& fit, std::span<const std::size_t> states,
                                std::span<const double> targets, std::size_t epochs, double lr) {
  require(!states.empty(), ErrorKind::OutOfRange, "batch", "value fit needs a non-empty batch");
  require(states.size() == targets.size(), ErrorKind::DimensionMismatch, "targets",
          "one target per state required");
  const std::size_t n = states.size();
  const std::size_t mb = std::max<std::size_t>(1, std::min(fit.minibatches, n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(fit.net.mlp().size());
  double last = 0.0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    fit.rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t m = 0; m < mb; ++m) {
      const std::size_t lo = m * n / mb, hi = (m + 1) * n / mb;
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t j = lo; j < hi; ++j) {
        const std::size_t i = order[j];
        const double v = fit.net.value(states[i]);
        const double err = v - targets[i];
        loss += err * err * inv;
        // Negated so the ascent step of adam_step descends the loss.
        fit.net.accumulate_grad(states[i], -2.0 * err * inv, grad);
      }
      require(std::isfinite(loss), ErrorKind::NonFinite, "value_loss", "value loss diverged");
      adam_step(fit.net.mlp().parameters(), grad, lr, fit.adam);
      epoch_loss += loss / static_cast<double>(mb);
    }
    fit.loss_history.push_back(epoch_loss);
    last = epoch_loss;
  }
  return last;
}

/// Fits V to GAE targets (advantage + V_old) computed from `batch`.
inline double fit_value(ValueNetworkFit& fit, const std::vector<Trajectory>& batch, double gamma, double lambda,
                        std::size_t epochs, double lr) {
  require(!batch.empty(), ErrorKind::OutOfRange, "batch", "value fit needs a non-empty batch");
  std::vector<std::size_t> states;
  std::vector<double> targets;
  for (const auto& traj : batch) {
    std::vector<double> values;
    for (const auto& step : traj.steps) values.push_back(fit.net.value(step.state));
    const auto adv = compute_gae(traj, values, gamma, lambda);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      states.push_back(traj.steps[t].state);
      targets.push_back(adv[t] + values[t]);
    }
  }
  return fit_value_targets(fit, states, targets, epochs, lr);
}

// ---------------------------------------------------------------------------
// Columnar trajectory records

inline std::string trajectories_to_csv(const std::vector<Trajectory>& batch) {
  csv::Table table;
  table.header = {"trajectory", "step", "state", "action", "reward", "behavior_logp", "done", "bootstrap_value"};
  for (std::size_t k = 0; k < batch.size(); ++k)
    for (std::size_t t = 0; t < batch[k].steps.size(); ++t) {
      const auto& s = batch[k].steps[t];
      table.rows.push_back({std::to_string(k), std::to_string(t), std::to_string(s.state), std::to_string(s.action),
                            csv::format_double(s.reward), csv::format_double(s.behavior_logp), s.done ? "1" : "0",
                            csv::format_double(batch[k].bootstrap_value)});
    }
  return csv::to_string(table);
}

inline std::vector<Trajectory> trajectories_from_csv(const std::string& text) {
  const auto table = csv::parse(text);
  const auto c_traj = table.column("trajectory"), c_state = table.column("state"),
             c_action = table.column("action"), c_reward = table.column("reward"),
             c_logp = table.column("behavior_logp"), c_done = table.column("done"),
             c_boot = table.column("bootstrap_value");
  std::vector<Trajectory> batch;
  for (const auto& row : table.rows) {
    const auto k = csv::parse_uint(row[c_traj]);
    if (batch.size() <= k) batch.resize(k + 1);
    batch[k].steps.push_back({csv::parse_uint(row[c_state]), csv::parse_uint(row[c_action]),
                              csv::parse_double(row[c_reward]), csv::parse_double(row[c_logp]), row[c_done] == "1"});
    batch[k].bootstrap_value = csv::parse_double(row[c_boot]);
  }
  return batch;
}

}  // namespace rpo
