#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <variant>

#include "json.hpp"
#include "rpo_lab/error.hpp"
#include "rpo_lab/mdp.hpp"
#include "rpo_lab/rng.hpp"

namespace rpo {

enum GridAction : std::size_t { kUp = 0, kRight = 1, kDown = 2, kLeft = 3 };

struct GridSpec {
  std::size_t height = 4;
  std::size_t width = 12;
  std::size_t start = 36;
  std::size_t goal = 47;
  std::set<std::size_t> cliff_cells{37, 38, 39, 40, 41, 42, 43, 44, 45, 46};
  double step_reward = -1.0;
  double cliff_reward = -100.0;
  double goal_reward = 0.0;
  std::size_t max_episode_steps = 200;

  std::size_t n_cells() const { return height * width; }

  void validate() const {
    require(height > 0 && width > 0, ErrorKind::DimensionMismatch, "grid", "empty grid");
    require(start < n_cells(), ErrorKind::OutOfRange, "start", "outside the grid");
    require(goal < n_cells(), ErrorKind::OutOfRange, "goal", "outside the grid");
    for (auto c : cliff_cells) require(c < n_cells(), ErrorKind::OutOfRange, "cliff_cells", "outside the grid");
    require(!cliff_cells.contains(start), ErrorKind::OutOfRange, "start", "start is a cliff cell");
    require(!cliff_cells.contains(goal), ErrorKind::OutOfRange, "goal", "goal is a cliff cell");
    require(max_episode_steps >= 1, ErrorKind::OutOfRange, "max_episode_steps", "must be at least 1");
  }

  /// Deterministic successor with wall clipping.
  std::size_t move(std::size_t cell, std::size_t action) const {
    const std::size_t row = cell / width, col = cell % width;
    switch (action) {
      case kUp: return row > 0 ? cell - width : cell;
      case kRight: return col + 1 < width ? cell + 1 : cell;
      case kDown: return row + 1 < height ? cell + width : cell;
      case kLeft: return col > 0 ? cell - 1 : cell;
      default: break;
    }
    throw LabError(ErrorKind::InvalidAction, "action", "grid action " + std::to_string(action) + " not in [0, 4)");
  }
};

struct StepResult {
  std::size_t next_state = 0;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
  bool info_cliff_fall = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::size_t n_states() const = 0;
  virtual std::size_t n_actions() const = 0;
  /// Reseeds the environment stream and starts a new episode.
  virtual std::size_t reset(std::uint64_t seed) = 0;
  /// Starts a new episode continuing the current stream.
  virtual std::size_t reset() = 0;
  virtual StepResult step(std::size_t action) = 0;
};

class CliffWalking final : public Environment {
 public:
  explicit CliffWalking(GridSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  std::size_t n_states() const override { return spec_.n_cells(); }
  std::size_t n_actions() const override { return 4; }
  const GridSpec& spec() const { return spec_; }
  std::size_t position() const { return cell_; }

  std::size_t reset(std::uint64_t) override { return reset(); }
  std::size_t reset() override {
    cell_ = spec_.start;
    elapsed_ = 0;
    return cell_;
  }

  StepResult step(std::size_t action) override {
    require(action < 4, ErrorKind::InvalidAction, "action", "grid action " + std::to_string(action) + " not in [0, 4)");
    StepResult out;
    cell_ = spec_.move(cell_, action);
    ++elapsed_;
    out.next_state = cell_;
    if (spec_.cliff_cells.contains(cell_)) {
      out.reward = spec_.cliff_reward;
      out.terminated = true;
      out.info_cliff_fall = true;
    } else if (cell_ == spec_.goal) {
      out.reward = spec_.goal_reward;
      out.terminated = true;
    } else {
      out.reward = spec_.step_reward;
    }
    out.truncated = !out.terminated && elapsed_ >= spec_.max_episode_steps;
    return out;
  }

 private:
  GridSpec spec_;
  std::size_t cell_ = 0;
  std::size_t elapsed_ = 0;
};

/// Episodic sampler over a tabular MDP; episodes end only by truncation.
class TabularMdpEnv final : public Environment {
 public:
  TabularMdpEnv(TabularMdp mdp, std::size_t max_episode_steps)
      : mdp_(std::move(mdp)), max_steps_(max_episode_steps), rng_(0) {
    mdp_.validate();
    require(max_steps_ >= 1, ErrorKind::OutOfRange, "max_episode_steps", "must be at least 1");
  }

  std::size_t n_states() const override { return mdp_.n_states; }
  std::size_t n_actions() const override { return mdp_.n_actions; }

  std::size_t reset(std::uint64_t seed) override {
    rng_ = Rng(seed);
    return reset();
  }
  std::size_t reset() override {
    state_ = rng_.categorical({mdp_.initial_dist.data(), static_cast<std::size_t>(mdp_.initial_dist.size())});
    elapsed_ = 0;
    return state_;
  }

  StepResult step(std::size_t action) override {
    require(action < mdp_.n_actions, ErrorKind::InvalidAction, "action",
            "action " + std::to_string(action) + " out of range");
    StepResult out;
    out.reward = mdp_.reward(static_cast<Eigen::Index>(state_), static_cast<Eigen::Index>(action));
    const Eigen::RowVectorXd next = mdp_.successor(state_, action);
    state_ = rng_.categorical({next.data(), static_cast<std::size_t>(next.size())});
    ++elapsed_;
    out.next_state = state_;
    out.truncated = elapsed_ >= max_steps_;
    return out;
  }

 private:
  TabularMdp mdp_;
  std::size_t max_steps_;
  Rng rng_;
  std::size_t state_ = 0;
  std::size_t elapsed_ = 0;
};

struct MdpEnvSpec {
  TabularMdp mdp;
  std::size_t max_episode_steps = 200;
};

using EnvSpec = std::variant<GridSpec, MdpEnvSpec>;

inline std::unique_ptr<Environment> make_environment(const EnvSpec& spec) {
  if (const auto* grid = std::get_if<GridSpec>(&spec)) return std::make_unique<CliffWalking>(*grid);
  const auto& mdp_spec = std::get<MdpEnvSpec>(spec);
  return std::make_unique<TabularMdpEnv>(mdp_spec.mdp, mdp_spec.max_episode_steps);
}

/// Exact tabular encoding of the grid. Goal and cliff cells are absorbing
/// with zero reward; the reward of (s, a) is the reward of the move.
inline TabularMdp cliffwalking_as_mdp(const GridSpec& spec, double gamma) {
  spec.validate();
  const std::size_t S = spec.n_cells(), A = 4;
  TabularMdp mdp;
  mdp.n_states = S;
  mdp.n_actions = A;
  mdp.gamma = gamma;
  mdp.transition = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S * A), static_cast<Eigen::Index>(S));
  mdp.reward = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A));
  mdp.initial_dist = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(S));
  mdp.initial_dist(static_cast<Eigen::Index>(spec.start)) = 1.0;
  for (std::size_t s = 0; s < S; ++s) {
    const bool absorbing = s == spec.goal || spec.cliff_cells.contains(s);
    for (std::size_t a = 0; a < A; ++a) {
      const auto row = mdp.pair_index(s, a);
      if (absorbing) {
        mdp.transition(row, static_cast<Eigen::Index>(s)) = 1.0;
        continue;
      }
      const std::size_t next = spec.move(s, a);
      mdp.transition(row, static_cast<Eigen::Index>(next)) = 1.0;
      double r = spec.step_reward;
      if (spec.cliff_cells.contains(next)) r = spec.cliff_reward;
      else if (next == spec.goal) r = spec.goal_reward;
      mdp.reward(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = r;
    }
  }
  mdp.validate();
  return mdp;
}

/// Random instance: Dirichlet(1,...,1) transition rows drawn in (s, a)
/// order, then rewards uniform on [-1, 1], then a Dirichlet initial
/// distribution.
inline TabularMdp random_mdp(std::uint64_t seed, std::size_t n_states, std::size_t n_actions, double gamma) {
  Rng rng(seed);
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  const auto S = static_cast<Eigen::Index>(n_states);
  const auto A = static_cast<Eigen::Index>(n_actions);
  mdp.transition.resize(S * A, S);
  for (Eigen::Index row = 0; row < S * A; ++row) {
    const auto probs = rng.dirichlet_flat(n_states);
    for (Eigen::Index c = 0; c < S; ++c) mdp.transition(row, c) = probs[static_cast<std::size_t>(c)];
  }
  mdp.reward.resize(S, A);
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index a = 0; a < A; ++a) mdp.reward(s, a) = rng.uniform(-1.0, 1.0);
  const auto init = rng.dirichlet_flat(n_states);
  mdp.initial_dist = Eigen::Map<const Eigen::VectorXd>(init.data(), S);
  mdp.validate();
  return mdp;
}

/// The 2-state, 2-action reference instance: generator seed 42, gamma 0.9,
/// with the start distribution pinned to state 0.
inline TabularMdp canonical_m2() {
  auto mdp = random_mdp(42, 2, 2, 0.9);
  mdp.initial_dist = Eigen::Vector2d(1.0, 0.0);
  mdp.validate();
  return mdp;
}

inline GridSpec grid_from_json(const nlohmann::json& doc) {
  GridSpec spec;
  try {
    spec.height = doc.value("height", spec.height);
    spec.width = doc.value("width", spec.width);
    spec.start = doc.value("start", spec.start);
    spec.goal = doc.value("goal", spec.goal);
    if (doc.contains("cliff_cells")) spec.cliff_cells = doc.at("cliff_cells").get<std::set<std::size_t>>();
    spec.step_reward = doc.value("step_reward", spec.step_reward);
    spec.cliff_reward = doc.value("cliff_reward", spec.cliff_reward);
    spec.goal_reward = doc.value("goal_reward", spec.goal_reward);
    spec.max_episode_steps = doc.value("max_episode_steps", spec.max_episode_steps);
  } catch (const nlohmann::json::exception& e) {
    throw LabError(ErrorKind::Parse, "grid", e.what());
  }
  spec.validate();
  return spec;
}

inline nlohmann::json grid_to_json(const GridSpec& spec) {
  return {{"height", spec.height},           {"width", spec.width},
          {"start", spec.start},             {"goal", spec.goal},
          {"cliff_cells", spec.cliff_cells}, {"step_reward", spec.step_reward},
          {"cliff_reward", spec.cliff_reward}, {"goal_reward", spec.goal_reward},
          {"max_episode_steps", spec.max_episode_steps}};
}

}  // namespace rpo
