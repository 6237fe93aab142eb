#include <gtest/gtest.h>

#include <cmath>

#include "rpo_lab/environments.hpp"
#include "rpo_lab/mdp.hpp"
#include "support.hpp"

using namespace rpo;
using rpo::testing::load_m2;
using rpo::testing::random_pi;
using rpo::testing::single_state;

namespace {

// Plain value iteration on V, iterated until successive sweeps differ by < tol.
Eigen::VectorXd value_iteration(const TabularMdp& mdp, const TabularPolicy& pi, double tol) {
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(S));
  for (int iter = 0; iter < 100000; ++iter) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(v.size());
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) {
        double q = mdp.reward(s, a);
        for (std::size_t s2 = 0; s2 < S; ++s2) q += mdp.gamma * mdp.transition(s * A + a, s2) * v(s2);
        next(s) += pi(s, a) * q;
      }
    const double diff = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (diff < tol) break;
  }
  return v;
}

}  // namespace

TEST(SolveValues, SingleStateGeometricSeries) {
  const auto mdp = single_state(1.0, 0.5);
  const auto vals = solve_values(mdp, TabularPolicy::uniform(1, 1));
  EXPECT_DOUBLE_EQ(vals.v(0), 2.0);
  EXPECT_DOUBLE_EQ(vals.q(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(vals.adv(0, 0), 0.0);
}

TEST(SolveValues, AdvantageAveragesToZeroUnderPolicy) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto mdp = random_mdp(seed, 5, 3, 0.9);
    for (const auto& pi : {TabularPolicy::uniform(5, 3), random_pi(seed + 100, 5, 3)}) {
      const auto vals = solve_values(mdp, pi);
      for (std::size_t s = 0; s < 5; ++s) {
        double avg = 0.0, v = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
          avg += pi(s, a) * vals.adv(s, a);
          v += pi(s, a) * vals.q(s, a);
          EXPECT_EQ(vals.adv(s, a), vals.q(s, a) - vals.v(s));
        }
        EXPECT_NEAR(avg, 0.0, 1e-9);
        EXPECT_NEAR(v, vals.v(s), 1e-9);
      }
    }
  }
}

TEST(SolveValues, MatchesValueIterationOnFixture) {
  const auto mdp = load_m2();
  for (const auto& pi : {TabularPolicy::uniform(2, 2), random_pi(3, 2, 2)}) {
    const auto oracle = value_iteration(mdp, pi, 1e-13);
    const auto vals = solve_values(mdp, pi);
    EXPECT_LE((oracle - vals.v).cwiseAbs().maxCoeff(), 1e-11);
  }
}

TEST(SolveValues, BellmanResidualIsTiny) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto mdp = random_mdp(seed, 6, 4, 0.95);
    const auto pi = random_pi(seed, 6, 4);
    EXPECT_LE(bellman_residual(mdp, pi, solve_values(mdp, pi)), 1e-10);
  }
}

TEST(SolveValues, DimensionMismatchNamesAxis) {
  const auto mdp = load_m2();
  try {
    solve_values(mdp, TabularPolicy::uniform(3, 2));
    FAIL() << "expected a dimension error";
  } catch (const LabError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
    EXPECT_EQ(e.where(), "policy.states");
  }
  try {
    solve_values(mdp, TabularPolicy::uniform(2, 3));
    FAIL() << "expected a dimension error";
  } catch (const LabError& e) {
    EXPECT_EQ(e.where(), "policy.actions");
  }
}

TEST(Eta, ClosedForms) {
  EXPECT_NEAR(eta(single_state(1.0, 0.9), TabularPolicy::uniform(1, 1)), 10.0, 1e-12);
  EXPECT_EQ(eta(single_state(0.0, 0.9), TabularPolicy::uniform(1, 1)), 0.0);
}

TEST(Eta, MatchesMonteCarloOnFixture) {
  const auto mdp = load_m2();
  const auto pi = TabularPolicy::uniform(2, 2);
  // 5000 episodes x 200 steps = 1e6 steps; gamma^200 ~ 7e-10 truncation bias.
  Rng rng(2024);
  const int episodes = 5000, horizon = 200;
  double sum = 0.0, sum_sq = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    std::size_t s = rng.categorical({mdp.initial_dist.data(), 2});
    double ret = 0.0, disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const std::size_t a = rng.uniform_index(2);
      ret += disc * mdp.reward(s, a);
      disc *= mdp.gamma;
      const Eigen::RowVectorXd next = mdp.transition.row(static_cast<Eigen::Index>(s * 2 + a));
      s = rng.categorical({next.data(), 2});
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  const double mean = sum / episodes;
  const double se = std::sqrt((sum_sq / episodes - mean * mean) / episodes);
  EXPECT_LE(std::abs(mean - eta(mdp, pi)), 3.0 * se);
}

TEST(Eta, DualFormulationAgrees) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto mdp = random_mdp(seed, 4, 3, 0.8);
    const auto pi = random_pi(seed + 7, 4, 3);
    EXPECT_NEAR(eta(mdp, pi), eta_dual(mdp, pi), 1e-9);
  }
}

TEST(Visitations, SingleState) {
  const auto vis = visitations(single_state(1.0, 0.5), TabularPolicy::uniform(1, 1));
  EXPECT_NEAR(vis.state_dist(0), 1.0, 1e-15);
}

TEST(Visitations, MatchesTruncatedSeriesOnFixture) {
  const auto mdp = load_m2();
  const auto pi = random_pi(11, 2, 2);
  const auto vis = visitations(mdp, pi);
  // (1 - gamma) sum_t gamma^t P(s_t = s), T with gamma^T < 1e-12.
  const Eigen::MatrixXd p_pi = policy_transition(mdp, pi.probs);
  Eigen::RowVectorXd dist = mdp.initial_dist.transpose();
  Eigen::RowVectorXd series = Eigen::RowVectorXd::Zero(2);
  double disc = 1.0;
  while (disc >= 1e-13) {
    series += (1.0 - mdp.gamma) * disc * dist;
    dist = dist * p_pi;
    disc *= mdp.gamma;
  }
  EXPECT_LE((series.transpose() - vis.state_dist).cwiseAbs().maxCoeff(), 1e-11);
}

TEST(Visitations, Invariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto mdp = random_mdp(seed, 5, 3, 0.9);
    const auto pi = random_pi(seed, 5, 3);
    const auto vis = visitations(mdp, pi);
    EXPECT_NEAR(vis.state_dist.sum(), 1.0, 1e-9);
    for (std::size_t s = 0; s < 5; ++s)
      for (std::size_t a = 0; a < 3; ++a) {
        EXPECT_NEAR(vis.state_action_dist(s, a), vis.state_dist(s) * pi(s, a), 1e-12);
        EXPECT_NEAR(vis.conditional(s, a).sum(), 1.0, 1e-9);
      }
  }
}

TEST(Visitations, ConditionalSatisfiesQDifferenceRecursion) {
  // Q^pi(s0,a0) - Q^pi_hat(s0,a0) = gamma/(1-gamma) E_{rho^pi(.|s0,a0)} A^pi_hat.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto mdp = random_mdp(seed, 4, 3, 0.85);
    const auto pi = random_pi(seed + 1, 4, 3);
    const auto pi_hat = random_pi(seed + 2, 4, 3);
    const auto vis = visitations(mdp, pi);
    const auto q_pi = solve_values(mdp, pi).q;
    const auto hat = solve_values(mdp, pi_hat);
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t a = 0; a < 3; ++a) {
        const double rhs = mdp.gamma / (1.0 - mdp.gamma) * vis.conditional(s, a).cwiseProduct(hat.adv).sum();
        EXPECT_NEAR(q_pi(s, a) - hat.q(s, a), rhs, 1e-9);
      }
  }
}

TEST(PerformanceDifference, IdenticalPoliciesGiveZero) {
  const auto mdp = load_m2();
  const auto pi = random_pi(5, 2, 2);
  const auto sides = performance_difference_check(mdp, pi, pi);
  EXPECT_NEAR(sides.lhs, 0.0, 1e-15);
  EXPECT_NEAR(sides.rhs, 0.0, 1e-12);
}

TEST(PerformanceDifference, FixturePair) {
  const auto sides = performance_difference_check(load_m2(), random_pi(1, 2, 2), random_pi(2, 2, 2));
  EXPECT_LE(sides.gap(), 1e-9);
}

TEST(PerformanceDifference, RandomizedSweep) {
  Rng rng(99);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t S = 2 + rng.uniform_index(5), A = 2 + rng.uniform_index(3);
    const auto mdp = random_mdp(rng.next_u64(), S, A, rng.uniform(0.5, 0.95));
    const auto pi = random_policy(rng, S, A);
    const auto pi_hat = random_policy(rng, S, A);
    worst = std::max(worst, performance_difference_check(mdp, pi, pi_hat).gap());
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(TabularMdp, ValidationRejectsBadInputs) {
  auto mdp = load_m2();
  mdp.transition(0, 0) += 1e-9;
  EXPECT_THROW(mdp.validate(), LabError);
  mdp = load_m2();
  mdp.gamma = 1.0;
  EXPECT_THROW(mdp.validate(), LabError);
  mdp = load_m2();
  mdp.initial_dist(0) = 0.5;
  EXPECT_THROW(mdp.validate(), LabError);
  TabularPolicy bad{Eigen::MatrixXd::Constant(2, 2, 0.6)};
  EXPECT_THROW(bad.validate(), LabError);
}

TEST(TabularMdp, JsonRoundTripIsExact) {
  const auto mdp = random_mdp(17, 4, 3, 0.93);
  const auto back = mdp_from_json(nlohmann::json::parse(mdp_to_json(mdp).dump()));
  EXPECT_EQ(back.n_states, mdp.n_states);
  EXPECT_EQ(back.gamma, mdp.gamma);
  EXPECT_TRUE(back.transition == mdp.transition);
  EXPECT_TRUE(back.reward == mdp.reward);
  EXPECT_TRUE(back.initial_dist == mdp.initial_dist);
}

TEST(TabularMdp, JsonErrorsAreStructured) {
  auto doc = mdp_to_json(load_m2());
  doc["transition"].erase(0);
  try {
    mdp_from_json(doc);
    FAIL();
  } catch (const LabError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
    EXPECT_EQ(e.where(), "transition");
  }
  doc.erase("gamma");
  EXPECT_THROW(mdp_from_json(doc), LabError);
}
