#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rpo_lab/error.hpp"
#include "rpo_lab/mdp.hpp"

// Exact evaluation of the generalized surrogate terms, penalties and bounds
// for a policy pair (pi, pi_hat) on a tabular MDP. Every nested expectation
// is a chain of discounted conditional visitations over state-action pairs,
// evaluated by exact summation.

namespace rpo {

inline constexpr std::size_t kMaxHorizon = 4;

/// Total-variation style policy distance: max_s sum_a |pi(a|s) - pi_hat(a|s)|.
inline double tv_distance(const TabularPolicy& pi, const TabularPolicy& pi_hat) {
  require(pi.n_states() == pi_hat.n_states(), ErrorKind::DimensionMismatch, "pi_hat.states",
          "policies disagree on the number of states");
  require(pi.n_actions() == pi_hat.n_actions(), ErrorKind::DimensionMismatch, "pi_hat.actions",
          "policies disagree on the number of actions");
  return (pi.probs - pi_hat.probs).cwiseAbs().rowwise().sum().maxCoeff();
}

inline double alpha_coefficient(double gamma, std::size_t i) {
  return std::pow(gamma, static_cast<double>(i)) / std::pow(1.0 - gamma, static_cast<double>(i + 1));
}

// beta_k shares the closed form of alpha_k.
inline double beta_coefficient(double gamma, std::size_t k) { return alpha_coefficient(gamma, k); }

/// Penalty of the lower bound on eta(pi) - eta(pi_hat); the sum over
/// alpha_1..alpha_{k-1} is empty for k = 1.
inline double penalty_c_hat(double gamma, std::size_t k, double eps, double r_max) {
  double alpha_sum = 0.0;
  for (std::size_t i = 1; i + 1 <= k; ++i) alpha_sum += alpha_coefficient(gamma, i);
  return gamma * r_max * eps / (1.0 - gamma) * alpha_sum +
         std::pow(gamma, static_cast<double>(k)) * r_max /
             std::pow(1.0 - gamma, static_cast<double>(k + 2)) * eps * eps;
}

struct SurrogateReport {
  std::size_t k = 0;
  double gamma = 0.0;
  std::vector<double> L;      // L_i, i < k
  std::vector<double> L_hat;  // L-hat_i, i < k
  double G_k = 0.0;
  // H_hat[i] holds H-hat_i for 1 <= i < k; H_hat[0] is unused and kept at 0.
  std::vector<double> H_hat;
  double G_hat = 0.0;
  std::vector<double> alpha;
  double beta_k = 0.0;
  double C_hat_k = 0.0;
  double tv_eps = 0.0;
  double r_max = 0.0;
};

/// Precomputed pieces shared by every surrogate term of one policy pair.
/// Distributions over state-action pairs are row vectors indexed s*A + a.
class SurrogateChain {
 public:
  SurrogateChain(const TabularMdp& mdp, const TabularPolicy& pi, const TabularPolicy& pi_hat) {
    detail::check_compatible(mdp, pi, "pi");
    detail::check_compatible(mdp, pi_hat, "pi_hat");
    for (Eigen::Index s = 0; s < pi_hat.probs.rows(); ++s)
      for (Eigen::Index a = 0; a < pi_hat.probs.cols(); ++a)
        require(pi_hat.probs(s, a) > 0.0, ErrorKind::ZeroProbabilityRatio,
                "pi_hat[" + std::to_string(s) + "][" + std::to_string(a) + "]",
                "ratio pi/pi_hat is undefined where pi_hat is zero");

    const auto A = static_cast<Eigen::Index>(mdp.n_actions);
    const auto SA = static_cast<Eigen::Index>(mdp.n_states * mdp.n_actions);
    const auto values_hat = solve_values(mdp, pi_hat);
    const auto vis_hat = visitations(mdp, pi_hat);
    const auto vis_pi = visitations(mdp, pi);

    ratio_.resize(SA);
    adv_.resize(SA);
    start_.resize(SA);
    for (Eigen::Index s = 0; s < pi.probs.rows(); ++s)
      for (Eigen::Index a = 0; a < A; ++a) {
        ratio_(s * A + a) = pi.probs(s, a) / pi_hat.probs(s, a);
        adv_(s * A + a) = values_hat.adv(s, a);
        start_(s * A + a) = vis_hat.state_action_dist(s, a);
      }
    next_hat_ = pair_kernel(mdp, vis_hat, pi_hat.probs);
    next_pi_ = pair_kernel(mdp, vis_pi, pi.probs);
  }

  const Eigen::RowVectorXd& ratio() const { return ratio_; }
  const Eigen::RowVectorXd& advantage() const { return adv_; }
  const Eigen::RowVectorXd& start() const { return start_; }
  /// Row (s,a) is rho^{pi_hat}(., . | s, a).
  const Eigen::MatrixXd& next_under_pi_hat() const { return next_hat_; }
  /// Row (s,a) is rho^{pi}(., . | s, a).
  const Eigen::MatrixXd& next_under_pi() const { return next_pi_; }

  /// L_i: chain under pi_hat with weights (r_t - 1) for t < i, last link
  /// drawn with actions from pi.
  double L(std::size_t i) const {
    Eigen::RowVectorXd w = start_;
    for (std::size_t t = 0; t < i; ++t) w = minus_one(w) * next_hat_;
    return (w.array() * ratio_.array() * adv_.array()).sum();
  }

  /// L-hat_i: product of all i+1 ratios along a pi_hat chain.
  double L_hat(std::size_t i) const {
    Eigen::RowVectorXd w = start_.cwiseProduct(ratio_);
    for (std::size_t t = 0; t < i; ++t) w = (w * next_hat_).cwiseProduct(ratio_);
    return w.dot(adv_);
  }

  /// G_k: weights (r_t - 1) for t < k, final link under rho^pi.
  double G(std::size_t k) const {
    Eigen::RowVectorXd w = start_;
    for (std::size_t t = 0; t + 1 < k; ++t) w = minus_one(w) * next_hat_;
    w = minus_one(w) * next_pi_;
    return w.dot(adv_);
  }

  /// H-hat_i (i >= 1): weights r_t for t <= i-2, no weight on link i-1,
  /// final link under rho^pi.
  double H_hat(std::size_t i) const {
    Eigen::RowVectorXd w = start_;
    for (std::size_t t = 0; t + 2 <= i; ++t) w = w.cwiseProduct(ratio_) * next_hat_;
    w = w * next_pi_;
    return w.dot(adv_);
  }

  /// G-hat_k: weights r_t for t <= k-2, (r_{k-1} - 1), final link under rho^pi.
  double G_hat(std::size_t k) const {
    Eigen::RowVectorXd w = start_;
    for (std::size_t t = 0; t + 2 <= k; ++t) w = w.cwiseProduct(ratio_) * next_hat_;
    w = minus_one(w) * next_pi_;
    return w.dot(adv_);
  }

 private:
  Eigen::RowVectorXd minus_one(const Eigen::RowVectorXd& w) const {
    return w.cwiseProduct((ratio_.array() - 1.0).matrix());
  }

  static Eigen::MatrixXd pair_kernel(const TabularMdp& mdp, const VisitationBundle& vis,
                                     const Eigen::MatrixXd& probs) {
    const auto S = static_cast<Eigen::Index>(mdp.n_states);
    const auto A = static_cast<Eigen::Index>(mdp.n_actions);
    const Eigen::MatrixXd next_states = mdp.transition * vis.occupancy_kernel;  // SA x S
    Eigen::MatrixXd out(S * A, S * A);
    for (Eigen::Index row = 0; row < S * A; ++row)
      for (Eigen::Index s = 0; s < S; ++s)
        for (Eigen::Index a = 0; a < A; ++a) out(row, s * A + a) = next_states(row, s) * probs(s, a);
    return out;
  }

  Eigen::RowVectorXd ratio_;
  Eigen::RowVectorXd adv_;
  Eigen::RowVectorXd start_;
  Eigen::MatrixXd next_hat_;
  Eigen::MatrixXd next_pi_;
};

inline void check_horizon(std::size_t k, std::size_t lo = 1) {
  require(k >= lo && k <= kMaxHorizon, ErrorKind::OutOfRange, "k",
          "horizon " + std::to_string(k) + " outside [" + std::to_string(lo) + ", " +
              std::to_string(kMaxHorizon) + "]");
}

inline SurrogateReport surrogate_report(const TabularMdp& mdp, const TabularPolicy& pi,
                                        const TabularPolicy& pi_hat, std::size_t k) {
  check_horizon(k);
  const SurrogateChain chain(mdp, pi, pi_hat);
  SurrogateReport rep;
  rep.k = k;
  rep.gamma = mdp.gamma;
  rep.tv_eps = tv_distance(pi, pi_hat);
  rep.r_max = mdp.r_max();
  rep.H_hat.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    rep.L.push_back(chain.L(i));
    rep.L_hat.push_back(chain.L_hat(i));
    rep.alpha.push_back(alpha_coefficient(mdp.gamma, i));
    if (i >= 1) rep.H_hat[i] = chain.H_hat(i);
  }
  rep.G_k = chain.G(k);
  rep.G_hat = chain.G_hat(k);
  rep.beta_k = beta_coefficient(mdp.gamma, k);
  rep.C_hat_k = penalty_c_hat(mdp.gamma, k, rep.tv_eps, rep.r_max);
  return rep;
}

/// E_{rho^pi}[A^pi_hat] - E_{s~rho^pi_hat, a~pi}[A^pi_hat] against the
/// one-step reflective correction term.
inline IdentitySides lemma1_gap(const TabularMdp& mdp, const TabularPolicy& pi,
                                const TabularPolicy& pi_hat) {
  const SurrogateChain chain(mdp, pi, pi_hat);
  const auto vis_pi = visitations(mdp, pi);
  const auto A = static_cast<Eigen::Index>(mdp.n_actions);
  double on_pi = 0.0;
  for (Eigen::Index s = 0; s < vis_pi.state_action_dist.rows(); ++s)
    for (Eigen::Index a = 0; a < A; ++a) on_pi += vis_pi.state_action_dist(s, a) * chain.advantage()(s * A + a);
  const double replaced = (chain.start().array() * chain.ratio().array() * chain.advantage().array()).sum();

  const Eigen::VectorXd inner = chain.next_under_pi() * chain.advantage().transpose();
  double rhs = 0.0;
  for (Eigen::Index j = 0; j < inner.size(); ++j)
    rhs += chain.start()(j) * (chain.ratio()(j) - 1.0) * inner(j);
  return {on_pi - replaced, mdp.gamma / (1.0 - mdp.gamma) * rhs};
}

/// eta(pi) - eta(pi_hat) against sum_i alpha_i L_i + beta_k G_k.
inline IdentitySides theorem1_identity(const TabularMdp& mdp, const TabularPolicy& pi,
                                       const TabularPolicy& pi_hat, std::size_t k) {
  const auto rep = surrogate_report(mdp, pi, pi_hat, k);
  double rhs = rep.beta_k * rep.G_k;
  for (std::size_t i = 0; i < k; ++i) rhs += rep.alpha[i] * rep.L[i];
  return {eta(mdp, pi) - eta(mdp, pi_hat), rhs};
}

struct BoundCheck {
  double lhs = 0.0;
  double bound = 0.0;
};

/// |beta_k G_k| against gamma^k / (1-gamma)^{k+2} eps^{k+1} R_max.
inline BoundCheck corollary1_bound(const SurrogateReport& report, double gamma) {
  const auto k = static_cast<double>(report.k);
  return {std::abs(report.beta_k * report.G_k),
          std::pow(gamma, k) / std::pow(1.0 - gamma, k + 2.0) * std::pow(report.tv_eps, k + 1.0) *
              report.r_max};
}

struct LowerBound {
  double gap = 0.0;    // eta(pi) - eta(pi_hat)
  double bound = 0.0;  // sum alpha_i L-hat_i - C-hat_k
};

inline double lower_bound_value(const SurrogateReport& rep) {
  double bound = -rep.C_hat_k;
  for (std::size_t i = 0; i < rep.k; ++i) bound += rep.alpha[i] * rep.L_hat[i];
  return bound;
}

inline LowerBound theorem2_lower_bound(const TabularMdp& mdp, const TabularPolicy& pi,
                                       const TabularPolicy& pi_hat, std::size_t k) {
  const auto rep = surrogate_report(mdp, pi, pi_hat, k);
  return {eta(mdp, pi) - eta(mdp, pi_hat), lower_bound_value(rep)};
}

struct Decomposition {
  double lhs = 0.0;
  double rhs = 0.0;
  std::vector<double> H_hat;  // index i in [1, k); index 0 unused
  double H_bound = 0.0;       // R_max eps / (1 - gamma)
  double G_hat = 0.0;
  double G_bound = 0.0;       // R_max eps^2 / (1 - gamma)
};

/// Exact decomposition eta(pi) - eta(pi_hat) =
///   sum_{i<k} alpha_i L-hat_i - sum_{1<=i<k} alpha_i H-hat_i + beta_k G-hat_k.
inline Decomposition appendix_decomposition(const TabularMdp& mdp, const TabularPolicy& pi,
                                            const TabularPolicy& pi_hat, std::size_t k) {
  const auto rep = surrogate_report(mdp, pi, pi_hat, k);
  Decomposition out;
  out.lhs = eta(mdp, pi) - eta(mdp, pi_hat);
  out.rhs = rep.beta_k * rep.G_hat;
  for (std::size_t i = 0; i < k; ++i) out.rhs += rep.alpha[i] * rep.L_hat[i];
  for (std::size_t i = 1; i < k; ++i) out.rhs -= rep.alpha[i] * rep.H_hat[i];
  out.H_hat = rep.H_hat;
  out.G_hat = rep.G_hat;
  out.H_bound = rep.r_max * rep.tv_eps / (1.0 - mdp.gamma);
  out.G_bound = rep.r_max * rep.tv_eps * rep.tv_eps / (1.0 - mdp.gamma);
  return out;
}

struct PsiMembership {
  bool in_psi1 = false;
  bool in_psi2 = false;
  double psi1_value = 0.0;  // alpha_0 L-hat_0 - C-hat_1
  double psi2_value = 0.0;  // alpha_0 L-hat_0 + alpha_1 L-hat_1 - C-hat_2
  double tv_eps = 0.0;
};

// Membership tolerance for the nonnegativity conditions; mu == pi_hat gives
// values that are zero only up to rounding.
inline constexpr double kMembershipTol = 1e-12;

inline PsiMembership psi_membership(const TabularMdp& mdp, const TabularPolicy& mu,
                                    const TabularPolicy& pi_hat) {
  const SurrogateChain chain(mdp, mu, pi_hat);
  PsiMembership out;
  out.tv_eps = tv_distance(mu, pi_hat);
  const double r_max = mdp.r_max();
  const double l0 = alpha_coefficient(mdp.gamma, 0) * chain.L_hat(0);
  const double l1 = alpha_coefficient(mdp.gamma, 1) * chain.L_hat(1);
  out.psi1_value = l0 - penalty_c_hat(mdp.gamma, 1, out.tv_eps, r_max);
  out.psi2_value = l0 + l1 - penalty_c_hat(mdp.gamma, 2, out.tv_eps, r_max);
  const bool close = out.tv_eps <= 0.5;
  out.in_psi1 = close && out.psi1_value >= -kMembershipTol;
  out.in_psi2 = close && out.psi2_value >= -kMembershipTol;
  return out;
}

struct TaypoComparison {
  double rpo_bound = 0.0;
  double taypo_bound = 0.0;
};

/// Closed-form remainder bounds of the two expansions at equal horizon.
/// The TayPO bound is finite only when 1 - gamma - gamma * eps > 0.
inline TaypoComparison taypo_bound_compare(double gamma, double eps, std::size_t k, double r_max) {
  require(1.0 - gamma - gamma * eps > 0.0, ErrorKind::RegimeViolation, "1-gamma-gamma*eps",
          "TayPO bound diverges for gamma=" + std::to_string(gamma) + ", eps=" + std::to_string(eps));
  const auto kk = static_cast<double>(k);
  const double x = gamma * eps / (1.0 - gamma);
  return {std::pow(gamma, kk) / std::pow(1.0 - gamma, kk + 2.0) * std::pow(eps, kk + 1.0) * r_max,
          1.0 / (gamma * (1.0 - gamma)) / (1.0 - x) * std::pow(x, kk + 1.0) * r_max};
}

inline TaypoComparison taypo_bound_compare(const SurrogateReport& report, double gamma, std::size_t k) {
  return taypo_bound_compare(gamma, report.tv_eps, k, report.r_max);
}

/// Mixtures (1 - w) pi_hat + w d over every deterministic policy d and each
/// weight in `weights`. pi_hat itself is always the first candidate.
inline std::vector<TabularPolicy> mixture_candidates(const TabularPolicy& pi_hat,
                                                     const std::vector<double>& weights) {
  std::vector<TabularPolicy> out{pi_hat};
  const std::size_t S = pi_hat.n_states(), A = pi_hat.n_actions();
  std::size_t total = 1;
  for (std::size_t s = 0; s < S; ++s) total *= A;
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<std::size_t> actions(S);
    std::size_t rest = code;
    for (std::size_t s = 0; s < S; ++s) {
      actions[s] = rest % A;
      rest /= A;
    }
    const auto det = TabularPolicy::deterministic(actions, A);
    for (double w : weights) out.push_back({(1.0 - w) * pi_hat.probs + w * det.probs});
  }
  return out;
}

/// One step of exact lower-bound maximization over a finite candidate set.
inline TabularPolicy maximize_lower_bound(const TabularMdp& mdp, const TabularPolicy& pi_hat,
                                          const std::vector<TabularPolicy>& candidates, std::size_t k) {
  TabularPolicy best = pi_hat;
  double best_value = lower_bound_value(surrogate_report(mdp, pi_hat, pi_hat, k));
  for (const auto& cand : candidates) {
    const double value = lower_bound_value(surrogate_report(mdp, cand, pi_hat, k));
    if (value > best_value) {
      best_value = value;
      best = cand;
    }
  }
  return best;
}

}  // namespace rpo
