#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "rpo_lab/error.hpp"

namespace rpo {

inline constexpr double kConstructionTol = 1e-12;
inline constexpr double kDerivedTol = 1e-9;

namespace detail {

inline void check_distribution(const Eigen::Ref<const Eigen::VectorXd>& row,
                               const std::string& where) {
  for (Eigen::Index i = 0; i < row.size(); ++i) {
    require(std::isfinite(row[i]), ErrorKind::NonFinite, where, "entry is not finite");
    require(row[i] >= 0.0, ErrorKind::InvalidDistribution, where,
            "negative probability " + std::to_string(row[i]));
  }
  const double total = row.sum();
  require(std::abs(total - 1.0) <= kConstructionTol, ErrorKind::InvalidDistribution, where,
          "probabilities sum to " + std::to_string(total));
}

}  // namespace detail

/// Finite discounted MDP. Transitions are stored as an (S*A) x S matrix whose
/// row s*A + a is P(. | s, a).
struct TabularMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  Eigen::MatrixXd transition;
  Eigen::MatrixXd reward;  // S x A
  double gamma = 0.0;
  Eigen::VectorXd initial_dist;

  Eigen::Index pair_index(std::size_t s, std::size_t a) const {
    return static_cast<Eigen::Index>(s * n_actions + a);
  }

  auto successor(std::size_t s, std::size_t a) const { return transition.row(pair_index(s, a)); }

  double r_max() const { return reward.cwiseAbs().maxCoeff(); }

  void validate() const {
    require(n_states > 0, ErrorKind::DimensionMismatch, "n_states", "must be positive");
    require(n_actions > 0, ErrorKind::DimensionMismatch, "n_actions", "must be positive");
    const auto sa = static_cast<Eigen::Index>(n_states * n_actions);
    const auto s = static_cast<Eigen::Index>(n_states);
    require(transition.rows() == sa && transition.cols() == s, ErrorKind::DimensionMismatch,
            "transition", "expected (n_states*n_actions) x n_states");
    require(reward.rows() == s && reward.cols() == static_cast<Eigen::Index>(n_actions),
            ErrorKind::DimensionMismatch, "reward", "expected n_states x n_actions");
    require(initial_dist.size() == s, ErrorKind::DimensionMismatch, "initial_dist",
            "expected n_states entries");
    require(gamma >= 0.0 && gamma < 1.0, ErrorKind::OutOfRange, "gamma", "must lie in [0, 1)");
    require(reward.allFinite(), ErrorKind::NonFinite, "reward", "entries must be finite");
    for (Eigen::Index row = 0; row < sa; ++row)
      detail::check_distribution(transition.row(row).transpose(),
                                 "transition[" + std::to_string(row / static_cast<Eigen::Index>(n_actions)) +
                                     "][" + std::to_string(row % static_cast<Eigen::Index>(n_actions)) + "]");
    detail::check_distribution(initial_dist, "initial_dist");
  }
};

/// Stochastic policy table pi(a | s), one row per state.
struct TabularPolicy {
  Eigen::MatrixXd probs;

  std::size_t n_states() const { return static_cast<std::size_t>(probs.rows()); }
  std::size_t n_actions() const { return static_cast<std::size_t>(probs.cols()); }
  double operator()(std::size_t s, std::size_t a) const {
    return probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  }

  static TabularPolicy uniform(std::size_t n_states, std::size_t n_actions) {
    return {Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_states),
                                      static_cast<Eigen::Index>(n_actions),
                                      1.0 / static_cast<double>(n_actions))};
  }

  static TabularPolicy deterministic(const std::vector<std::size_t>& actions, std::size_t n_actions) {
    TabularPolicy pi{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(actions.size()),
                                           static_cast<Eigen::Index>(n_actions))};
    for (std::size_t s = 0; s < actions.size(); ++s)
      pi.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(actions[s])) = 1.0;
    return pi;
  }

  void validate() const {
    require(probs.rows() > 0 && probs.cols() > 0, ErrorKind::DimensionMismatch, "policy",
            "empty probability table");
    for (Eigen::Index s = 0; s < probs.rows(); ++s)
      detail::check_distribution(probs.row(s).transpose(), "policy[" + std::to_string(s) + "]");
  }
};

struct ValueBundle {
  Eigen::VectorXd v;    // V^pi
  Eigen::MatrixXd q;    // Q^pi, S x A
  Eigen::MatrixXd adv;  // A^pi = Q^pi - V^pi
};

/// Discounted visitation of a policy. Conditional distributions
/// rho(. | s, a) are built on demand from the stored occupancy kernel.
struct VisitationBundle {
  Eigen::VectorXd state_dist;         // rho(s)
  Eigen::MatrixXd state_action_dist;  // rho(s, a)
  // Row s0 is the normalized discounted visitation started at s0:
  // (1 - gamma) (I - gamma P_pi)^-1.
  Eigen::MatrixXd occupancy_kernel;
  Eigen::MatrixXd transition;
  Eigen::MatrixXd policy;

  /// rho(s' | s, a): visitation started from the successor distribution of (s, a).
  Eigen::RowVectorXd conditional_states(std::size_t s, std::size_t a) const {
    const auto n_actions = policy.cols();
    return transition.row(static_cast<Eigen::Index>(s) * n_actions + static_cast<Eigen::Index>(a)) *
           occupancy_kernel;
  }

  /// rho(s', a' | s, a) = rho(s' | s, a) pi(a' | s'), as an S x A table.
  Eigen::MatrixXd conditional(std::size_t s, std::size_t a) const {
    const Eigen::RowVectorXd states = conditional_states(s, a);
    return states.transpose().asDiagonal() * policy;
  }
};

namespace detail {

inline void check_compatible(const TabularMdp& mdp, const TabularPolicy& policy,
                             const std::string& name) {
  require(policy.n_states() == mdp.n_states, ErrorKind::DimensionMismatch, name + ".states",
          "policy has " + std::to_string(policy.n_states()) + " states, mdp has " +
              std::to_string(mdp.n_states));
  require(policy.n_actions() == mdp.n_actions, ErrorKind::DimensionMismatch, name + ".actions",
          "policy has " + std::to_string(policy.n_actions()) + " actions, mdp has " +
              std::to_string(mdp.n_actions));
}

}  // namespace detail

/// State-to-state transition matrix under a policy.
inline Eigen::MatrixXd policy_transition(const TabularMdp& mdp, const Eigen::MatrixXd& probs) {
  const auto S = static_cast<Eigen::Index>(mdp.n_states);
  const auto A = static_cast<Eigen::Index>(mdp.n_actions);
  Eigen::MatrixXd p_pi = Eigen::MatrixXd::Zero(S, S);
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index a = 0; a < A; ++a) p_pi.row(s) += probs(s, a) * mdp.transition.row(s * A + a);
  return p_pi;
}

inline Eigen::VectorXd policy_reward(const TabularMdp& mdp, const Eigen::MatrixXd& probs) {
  return mdp.reward.cwiseProduct(probs).rowwise().sum();
}

/// Exact policy evaluation by one LU solve of V = R_pi + gamma P_pi V.
inline ValueBundle solve_values(const TabularMdp& mdp, const TabularPolicy& policy) {
  detail::check_compatible(mdp, policy, "policy");
  const auto S = static_cast<Eigen::Index>(mdp.n_states);
  const auto A = static_cast<Eigen::Index>(mdp.n_actions);
  const Eigen::MatrixXd system =
      Eigen::MatrixXd::Identity(S, S) - mdp.gamma * policy_transition(mdp, policy.probs);
  ValueBundle out;
  out.v = system.partialPivLu().solve(policy_reward(mdp, policy.probs));
  out.q.resize(S, A);
  const Eigen::VectorXd next = mdp.transition * out.v;
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index a = 0; a < A; ++a) out.q(s, a) = mdp.reward(s, a) + mdp.gamma * next(s * A + a);
  out.adv = out.q.colwise() - out.v;
  return out;
}

/// Expected discounted return from the initial distribution.
inline double eta(const TabularMdp& mdp, const TabularPolicy& policy) {
  return mdp.initial_dist.dot(solve_values(mdp, policy).v);
}

inline VisitationBundle visitations(const TabularMdp& mdp, const TabularPolicy& policy) {
  detail::check_compatible(mdp, policy, "policy");
  const auto S = static_cast<Eigen::Index>(mdp.n_states);
  const Eigen::MatrixXd p_pi = policy_transition(mdp, policy.probs);
  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S) - mdp.gamma * p_pi;
  const auto lu = system.partialPivLu();

  VisitationBundle out;
  out.occupancy_kernel = (1.0 - mdp.gamma) * lu.inverse();
  const Eigen::MatrixXd system_t = system.transpose();
  out.state_dist = (1.0 - mdp.gamma) * system_t.partialPivLu().solve(mdp.initial_dist);
  out.state_action_dist = out.state_dist.asDiagonal() * policy.probs;
  out.transition = mdp.transition;
  out.policy = policy.probs;
  return out;
}

/// Dual form of eta: (1 / (1 - gamma)) sum_{s,a} rho(s, a) R(s, a).
inline double eta_dual(const TabularMdp& mdp, const TabularPolicy& policy) {
  const auto vis = visitations(mdp, policy);
  return vis.state_action_dist.cwiseProduct(mdp.reward).sum() / (1.0 - mdp.gamma);
}

inline double bellman_residual(const TabularMdp& mdp, const TabularPolicy& policy,
                               const ValueBundle& values) {
  const Eigen::VectorXd rhs =
      policy_reward(mdp, policy.probs) + mdp.gamma * policy_transition(mdp, policy.probs) * values.v;
  return (rhs - values.v).cwiseAbs().maxCoeff();
}

struct IdentitySides {
  double lhs = 0.0;
  double rhs = 0.0;
  double gap() const { return std::abs(lhs - rhs); }
};

/// eta(pi) - eta(pi_hat) against (1 / (1 - gamma)) E_{rho^pi}[A^pi_hat].
inline IdentitySides performance_difference_check(const TabularMdp& mdp, const TabularPolicy& pi,
                                                  const TabularPolicy& pi_hat) {
  detail::check_compatible(mdp, pi, "pi");
  detail::check_compatible(mdp, pi_hat, "pi_hat");
  const auto vis = visitations(mdp, pi);
  const auto values_hat = solve_values(mdp, pi_hat);
  return {eta(mdp, pi) - eta(mdp, pi_hat),
          vis.state_action_dist.cwiseProduct(values_hat.adv).sum() / (1.0 - mdp.gamma)};
}

/// Howard policy iteration with exact evaluation. Ties in the greedy step
/// keep the current action, then prefer the lowest index.
inline TabularPolicy policy_iteration(const TabularMdp& mdp, std::size_t max_iterations = 1000) {
  std::vector<std::size_t> actions(mdp.n_states, 0);
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    const auto pi = TabularPolicy::deterministic(actions, mdp.n_actions);
    const auto values = solve_values(mdp, pi);
    bool changed = false;
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
      const auto row = static_cast<Eigen::Index>(s);
      std::size_t best = actions[s];
      double best_q = values.q(row, static_cast<Eigen::Index>(best));
      for (std::size_t a = 0; a < mdp.n_actions; ++a) {
        const double q = values.q(row, static_cast<Eigen::Index>(a));
        if (q > best_q + 1e-12) {
          best = a;
          best_q = q;
        }
      }
      if (best != actions[s]) {
        actions[s] = best;
        changed = true;
      }
    }
    if (!changed) return pi;
  }
  throw LabError(ErrorKind::OutOfRange, "policy_iteration", "did not converge");
}

// ---------------------------------------------------------------------------
// Config documents

namespace detail {

inline std::vector<double> read_list(const nlohmann::json& doc, const char* key, std::size_t expected) {
  require(doc.contains(key), ErrorKind::Parse, key, "missing key");
  require(doc.at(key).is_array(), ErrorKind::Parse, key, "expected a flat list");
  std::vector<double> out;
  for (const auto& item : doc.at(key)) {
    require(item.is_number(), ErrorKind::Parse, key, "non-numeric entry");
    out.push_back(item.get<double>());
  }
  require(out.size() == expected, ErrorKind::DimensionMismatch, key,
          "expected " + std::to_string(expected) + " entries, got " + std::to_string(out.size()));
  return out;
}

}  // namespace detail

inline TabularMdp mdp_from_json(const nlohmann::json& doc) {
  TabularMdp mdp;
  try {
    mdp.n_states = doc.at("n_states").get<std::size_t>();
    mdp.n_actions = doc.at("n_actions").get<std::size_t>();
    mdp.gamma = doc.at("gamma").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw LabError(ErrorKind::Parse, "mdp", e.what());
  }
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  const auto init = detail::read_list(doc, "initial_dist", S);
  const auto trans = detail::read_list(doc, "transition", S * A * S);
  const auto rew = detail::read_list(doc, "reward", S * A);
  mdp.initial_dist = Eigen::Map<const Eigen::VectorXd>(init.data(), static_cast<Eigen::Index>(S));
  mdp.transition = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      trans.data(), static_cast<Eigen::Index>(S * A), static_cast<Eigen::Index>(S));
  mdp.reward = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      rew.data(), static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A));
  mdp.validate();
  return mdp;
}

inline nlohmann::json mdp_to_json(const TabularMdp& mdp) {
  nlohmann::json doc;
  doc["n_states"] = mdp.n_states;
  doc["n_actions"] = mdp.n_actions;
  doc["gamma"] = mdp.gamma;
  doc["initial_dist"] = std::vector<double>(mdp.initial_dist.data(),
                                            mdp.initial_dist.data() + mdp.initial_dist.size());
  std::vector<double> trans, rew;
  for (Eigen::Index r = 0; r < mdp.transition.rows(); ++r)
    for (Eigen::Index c = 0; c < mdp.transition.cols(); ++c) trans.push_back(mdp.transition(r, c));
  for (Eigen::Index r = 0; r < mdp.reward.rows(); ++r)
    for (Eigen::Index c = 0; c < mdp.reward.cols(); ++c) rew.push_back(mdp.reward(r, c));
  doc["transition"] = trans;
  doc["reward"] = rew;
  return doc;
}

}  // namespace rpo
