#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "rpo_lab/advantage.hpp"
#include "rpo_lab/csv.hpp"
#include "rpo_lab/environments.hpp"
#include "rpo_lab/error.hpp"
#include "rpo_lab/objective.hpp"
#include "rpo_lab/policy_model.hpp"
#include "rpo_lab/rng.hpp"

#ifndef RPO_LAB_REVISION
#define RPO_LAB_REVISION "0.1.0"
#endif

namespace rpo {

struct TrainConfig {
  EnvSpec env = GridSpec{};
  ClipConfig clip = ClipConfig::for_variant(Variant::Rpo);
  double gamma = 0.99;
  double gae_lambda = 0.95;
  std::size_t batch_size = 256;
  std::size_t epochs_per_update = 4;
  std::size_t minibatches_per_epoch = 4;
  double learning_rate = 2.5e-4;
  double value_learning_rate = 2.5e-4;
  std::size_t total_timesteps = 100000;
  std::uint64_t seed = 0;
  std::size_t eval_episodes = 10;
  std::vector<std::size_t> hidden{64};
  Activation activation = Activation::Tanh;
  bool normalize_advantages = true;

  void validate() const {
    clip.validate();
    require(gamma >= 0.0 && gamma < 1.0, ErrorKind::OutOfRange, "gamma", "must lie in [0, 1)");
    require(gae_lambda >= 0.0 && gae_lambda <= 1.0, ErrorKind::OutOfRange, "gae_lambda", "must lie in [0, 1]");
    require(batch_size >= 1, ErrorKind::OutOfRange, "batch_size", "must be positive");
    require(minibatches_per_epoch >= 1 && batch_size % minibatches_per_epoch == 0, ErrorKind::OutOfRange,
            "minibatches_per_epoch", "batch_size must be divisible by the minibatch count");
    require(total_timesteps >= batch_size, ErrorKind::OutOfRange, "total_timesteps", "must be at least batch_size");
    require(learning_rate > 0.0 && value_learning_rate > 0.0, ErrorKind::OutOfRange, "learning_rate",
            "must be positive");
  }

  std::size_t n_updates() const { return total_timesteps / batch_size; }
};

struct UpdateRecord {
  std::size_t update = 0;
  std::size_t timesteps = 0;
  double mean_return = 0.0;
  double mean_ep_len = 0.0;
  std::size_t cliff_falls_cum = 0;
  double loss_clip0 = 0.0;
  double loss_clip1 = 0.0;
  double clipfrac0 = 0.0;
  double clipfrac1 = 0.0;
  double value_loss = 0.0;
};

struct RunMetrics {
  std::vector<UpdateRecord> records;
  std::uint64_t seed = 0;
  std::string variant;
  std::string config_digest;
  std::string revision = RPO_LAB_REVISION;
  std::size_t degraded_updates = 0;        // updates that fell back to the single-ratio objective
  double max_first_step_ratio_dev = 0.0;   // snapshot consistency at each update's first step
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Config serialization

inline nlohmann::json env_to_json(const EnvSpec& env) {
  if (const auto* grid = std::get_if<GridSpec>(&env)) {
    auto doc = grid_to_json(*grid);
    doc["kind"] = "cliffwalking";
    return doc;
  }
  const auto& spec = std::get<MdpEnvSpec>(env);
  return {{"kind", "mdp"}, {"mdp", mdp_to_json(spec.mdp)}, {"max_episode_steps", spec.max_episode_steps}};
}

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
  return {{"env", env_to_json(cfg.env)},
          {"variant", to_string(cfg.clip.variant)},
          {"epsilon", cfg.clip.epsilon},
          {"epsilon1", cfg.clip.epsilon1},
          {"beta", cfg.clip.beta},
          {"k", cfg.clip.k},
          {"gamma", cfg.gamma},
          {"gae_lambda", cfg.gae_lambda},
          {"batch_size", cfg.batch_size},
          {"epochs_per_update", cfg.epochs_per_update},
          {"minibatches_per_epoch", cfg.minibatches_per_epoch},
          {"learning_rate", cfg.learning_rate},
          {"value_learning_rate", cfg.value_learning_rate},
          {"total_timesteps", cfg.total_timesteps},
          {"seed", cfg.seed},
          {"eval_episodes", cfg.eval_episodes},
          {"hidden", cfg.hidden},
          {"activation", to_string(cfg.activation)},
          {"normalize_advantages", cfg.normalize_advantages}};
}

/// FNV-1a over the canonical config dump, excluding the seed.
inline std::string config_digest(const TrainConfig& cfg) {
  auto doc = config_to_json(cfg);
  doc.erase("seed");
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double mean_return = 0.0;
  double mean_length = 0.0;
  std::size_t cliff_falls = 0;
};

/// Rolls out `episodes` episodes choosing actions with policy(state, rng).
template <typename Policy>
EvalResult evaluate_policy(Policy&& policy, Environment& env, std::size_t episodes, std::uint64_t seed) {
  require(episodes >= 1, ErrorKind::OutOfRange, "episodes", "need at least one episode");
  Rng rng(mix_seed(seed, 0));
  EvalResult out;
  std::size_t state = env.reset(mix_seed(seed, 1));
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    if (ep > 0) state = env.reset();
    double ret = 0.0;
    std::size_t len = 0;
    for (;;) {
      const auto res = env.step(policy(state, rng));
      ret += res.reward;
      ++len;
      if (res.info_cliff_fall) ++out.cliff_falls;
      state = res.next_state;
      if (res.terminated || res.truncated) break;
    }
    out.mean_return += ret / static_cast<double>(episodes);
    out.mean_length += static_cast<double>(len) / static_cast<double>(episodes);
  }
  return out;
}

/// Samples actions from pi_theta, as during training.
inline EvalResult evaluate(const PolicyNetwork& net, Environment& env, std::size_t episodes, std::uint64_t seed) {
  return evaluate_policy(
      [&](std::size_t s, Rng& rng) {
        const auto probs = net.forward(s);
        return rng.categorical(probs);
      },
      env, episodes, seed);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainedAgent {
  PolicyNetwork policy;
  ValueNetwork value;
  RunMetrics metrics;
};

namespace detail {

struct Collector {
  std::unique_ptr<Environment> env;
  std::size_t state = 0;
  std::size_t ep_len = 0;
  double ep_return = 0.0;
  std::size_t cliff_falls = 0;
};

struct Collected {
  std::vector<Trajectory> trajs;
  std::vector<double> episode_returns;
  std::vector<double> episode_lengths;
};

inline Collected collect(Collector& col, const PolicyNetwork& pi, const ValueNetwork& vf, Rng& rng, std::size_t n) {
  Collected out;
  Trajectory seg;
  for (std::size_t t = 0; t < n; ++t) {
    const auto probs = pi.forward(col.state);
    const std::size_t action = rng.categorical(probs);
    const auto res = col.env->step(action);
    seg.steps.push_back({col.state, action, res.reward, std::log(probs[action]), res.terminated});
    col.ep_return += res.reward;
    ++col.ep_len;
    if (res.info_cliff_fall) ++col.cliff_falls;
    col.state = res.next_state;
    if (res.terminated || res.truncated) {
      seg.bootstrap_value = res.terminated ? 0.0 : vf.value(res.next_state);
      out.trajs.push_back(std::move(seg));
      seg = Trajectory{};
      out.episode_returns.push_back(col.ep_return);
      out.episode_lengths.push_back(static_cast<double>(col.ep_len));
      col.ep_return = 0.0;
      col.ep_len = 0;
      col.state = col.env->reset();
    }
  }
  if (!seg.steps.empty()) {
    seg.bootstrap_value = vf.value(col.state);
    out.trajs.push_back(std::move(seg));
  }
  return out;
}

inline double mean_or_nan(const std::vector<double>& xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace detail

/// Collect, estimate, update. Deterministic given cfg.seed.
inline TrainedAgent train_agent(const TrainConfig& cfg) {
  cfg.validate();
  detail::Collector col;
  col.env = make_environment(cfg.env);
  const std::size_t S = col.env->n_states(), A = col.env->n_actions();

  TrainedAgent agent;
  agent.policy = PolicyNetwork(S, A, cfg.hidden, cfg.activation, mix_seed(cfg.seed, 1));
  ValueNetworkFit vfit(ValueNetwork(S, cfg.hidden, cfg.activation, mix_seed(cfg.seed, 2)), cfg.minibatches_per_epoch,
                       mix_seed(cfg.seed, 3));
  AdamState adam;
  Rng action_rng(mix_seed(cfg.seed, 4));
  Rng shuffle_rng(mix_seed(cfg.seed, 5));
  col.state = col.env->reset(mix_seed(cfg.seed, 6));

  auto& metrics = agent.metrics;
  metrics.seed = cfg.seed;
  metrics.variant = to_string(cfg.clip.variant);
  metrics.config_digest = config_digest(cfg);

  const std::size_t n = cfg.batch_size, n_mb = cfg.minibatches_per_epoch;
  for (std::size_t update = 0; update < cfg.n_updates(); ++update) {
    try {
      auto data = detail::collect(col, agent.policy, vfit.net, action_rng, n);

      std::vector<std::vector<double>> advs;
      std::vector<std::size_t> v_states;
      std::vector<double> v_targets;
      for (const auto& traj : data.trajs) {
        std::vector<double> values;
        values.reserve(traj.steps.size());
        for (const auto& step : traj.steps) values.push_back(vfit.net.value(step.state));
        auto adv = compute_gae(traj, values, cfg.gamma, cfg.gae_lambda);
        for (std::size_t t = 0; t < adv.size(); ++t) {
          v_states.push_back(traj.steps[t].state);
          v_targets.push_back(adv[t] + values[t]);
        }
        advs.push_back(std::move(adv));
      }
      const auto batch = build_rollout_batch(data.trajs, advs, cfg.normalize_advantages);

      UpdateRecord rec;
      rec.update = update;
      rec.timesteps = (update + 1) * n;
      rec.mean_return = detail::mean_or_nan(data.episode_returns);
      rec.mean_ep_len = detail::mean_or_nan(data.episode_lengths);

      std::vector<std::size_t> order(n), position(n);
      std::iota(order.begin(), order.end(), 0);
      std::size_t evaluations = 0;
      bool degraded = false;
      for (std::size_t epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t j = 0; j < n; ++j) position[order[j]] = j * n_mb / n;
        std::vector<std::vector<std::size_t>> mb_pairs(n_mb), mb_triples(n_mb);
        for (auto p : batch.pairs) mb_pairs[position[p]].push_back(p);
        for (auto p : batch.triples) mb_triples[position[p]].push_back(p);
        for (std::size_t m = 0; m < n_mb; ++m) {
          const std::span<const std::size_t> steps(order.data() + m * n / n_mb, n / n_mb);
          auto res = evaluate_objective(batch, steps, mb_pairs[m], mb_triples[m], agent.policy, cfg.clip);
          require(std::isfinite(res.value), ErrorKind::NonFinite, "objective", "non-finite loss");
          if (epoch == 0 && m == 0)
            metrics.max_first_step_ratio_dev = std::max(metrics.max_first_step_ratio_dev, res.max_ratio_deviation);
          degraded = degraded || res.degraded;
          rec.loss_clip0 += res.loss_clip0;
          rec.loss_clip1 += res.loss_clip1;
          rec.clipfrac0 += res.clipfrac0;
          rec.clipfrac1 += res.clipfrac1;
          ++evaluations;
          adam_step(agent.policy.mlp().parameters(), res.grad.grad, cfg.learning_rate, adam);
        }
      }
      const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(evaluations, 1));
      rec.loss_clip0 *= inv;
      rec.loss_clip1 *= inv;
      rec.clipfrac0 *= inv;
      rec.clipfrac1 *= inv;
      rec.value_loss =
          fit_value_targets(vfit, v_states, v_targets, cfg.epochs_per_update, cfg.value_learning_rate);
      rec.cliff_falls_cum = col.cliff_falls;
      if (degraded) {
        ++metrics.degraded_updates;
        metrics.warnings.push_back("update " + std::to_string(update) +
                                   ": no transition pairs in a minibatch, fell back to the single-ratio term");
      }
      metrics.records.push_back(rec);
    } catch (const LabError& e) {
      if (e.kind() != ErrorKind::NonFinite) throw;
      throw LabError(ErrorKind::NonFinite, "update " + std::to_string(update),
                     std::string("training diverged: ") + e.what());
    }
  }
  agent.value = std::move(vfit.net);
  return agent;
}

inline RunMetrics train(const TrainConfig& cfg) { return train_agent(cfg).metrics; }

// ---------------------------------------------------------------------------
// Metric files

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{"update",     "timesteps",  "mean_return", "mean_ep_len",
                                             "cliff_falls_cum", "loss_clip0", "loss_clip1", "clipfrac0",
                                             "clipfrac1",  "value_loss"};
  return cols;
}

inline std::string metrics_to_csv(const RunMetrics& m) {
  csv::Table table;
  table.header = metrics_columns();
  for (const auto& r : m.records)
    table.rows.push_back({std::to_string(r.update), std::to_string(r.timesteps), csv::format_double(r.mean_return),
                          csv::format_double(r.mean_ep_len), std::to_string(r.cliff_falls_cum),
                          csv::format_double(r.loss_clip0), csv::format_double(r.loss_clip1),
                          csv::format_double(r.clipfrac0), csv::format_double(r.clipfrac1),
                          csv::format_double(r.value_loss)});
  return csv::to_string(table);
}

inline std::vector<UpdateRecord> metrics_from_csv(const std::string& text) {
  const auto table = csv::parse(text);
  require(table.header == metrics_columns(), ErrorKind::Parse, "metrics", "unexpected metrics header");
  std::vector<UpdateRecord> out;
  for (const auto& row : table.rows) {
    UpdateRecord r;
    r.update = csv::parse_uint(row[0]);
    r.timesteps = csv::parse_uint(row[1]);
    r.mean_return = csv::parse_double(row[2]);
    r.mean_ep_len = csv::parse_double(row[3]);
    r.cliff_falls_cum = csv::parse_uint(row[4]);
    r.loss_clip0 = csv::parse_double(row[5]);
    r.loss_clip1 = csv::parse_double(row[6]);
    r.clipfrac0 = csv::parse_double(row[7]);
    r.clipfrac1 = csv::parse_double(row[8]);
    r.value_loss = csv::parse_double(row[9]);
    out.push_back(r);
  }
  return out;
}

inline nlohmann::json metrics_manifest(const RunMetrics& m, const TrainConfig& cfg) {
  return {{"seed", m.seed},
          {"variant", m.variant},
          {"config_digest", m.config_digest},
          {"revision", m.revision},
          {"config", config_to_json(cfg)},
          {"updates", m.records.size()},
          {"degraded_updates", m.degraded_updates},
          {"max_first_step_ratio_dev", m.max_first_step_ratio_dev}};
}

struct FinalWindow {
  double final_return = 0.0;
  double final_len = 0.0;
  std::size_t cliff_falls = 0;
};

/// Means over the last `fraction` of updates (at least one); NaN entries are
/// skipped. cliff_falls is the cumulative count at the end of training.
inline FinalWindow final_window(const std::vector<UpdateRecord>& records, double fraction = 0.2) {
  FinalWindow out;
  if (records.empty()) return out;
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(records.size()) - 1e-9)));
  std::vector<double> rets, lens;
  for (std::size_t i = records.size() - std::min(count, records.size()); i < records.size(); ++i) {
    if (std::isfinite(records[i].mean_return)) rets.push_back(records[i].mean_return);
    if (std::isfinite(records[i].mean_ep_len)) lens.push_back(records[i].mean_ep_len);
  }
  out.final_return = detail::mean_or_nan(rets);
  out.final_len = detail::mean_or_nan(lens);
  out.cliff_falls = records.back().cliff_falls_cum;
  return out;
}

}  // namespace rpo
