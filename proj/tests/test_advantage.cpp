#include <gtest/gtest.h>

#include <cmath>

#include "rpo_lab/advantage.hpp"
#include "rpo_lab/rng.hpp"

using namespace rpo;

namespace {

Trajectory make_traj(std::vector<double> rewards, bool terminal, double bootstrap = 0.0) {
  Trajectory traj;
  for (std::size_t t = 0; t < rewards.size(); ++t)
    traj.steps.push_back({t % 3, t % 2, rewards[t], -0.5, terminal && t + 1 == rewards.size()});
  traj.bootstrap_value = bootstrap;
  return traj;
}

// GAE from its definition as a lambda-weighted sum of TD residuals.
std::vector<double> gae_double_loop(const Trajectory& traj, const std::vector<double>& v, double gamma,
                                    double lambda) {
  const std::size_t n = traj.steps.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double next = traj.steps[t].done ? 0.0 : (t + 1 < n ? v[t + 1] : traj.bootstrap_value);
    delta[t] = traj.steps[t].reward + gamma * next - v[t];
  }
  std::vector<double> adv(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double w = 1.0;
    for (std::size_t l = t; l < n; ++l) {
      adv[t] += w * delta[l];
      w *= gamma * lambda;
    }
  }
  return adv;
}

}  // namespace

TEST(Gae, LambdaZeroIsTdResidual) {
  const auto traj = make_traj({1.0, -2.0, 0.5}, false, 4.0);
  const std::vector<double> v{0.3, -0.1, 0.7};
  const auto adv = compute_gae(traj, v, 0.9, 0.0);
  EXPECT_NEAR(adv[0], 1.0 + 0.9 * -0.1 - 0.3, 1e-15);
  EXPECT_NEAR(adv[1], -2.0 + 0.9 * 0.7 + 0.1, 1e-15);
  EXPECT_NEAR(adv[2], 0.5 + 0.9 * 4.0 - 0.7, 1e-15);
}

TEST(Gae, LambdaOneWithZeroValuesIsDiscountedReturn) {
  const auto traj = make_traj({1.0, 2.0, 3.0}, true);
  const std::vector<double> v(3, 0.0);
  const auto adv = compute_gae(traj, v, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(adv[2], 3.0);
  EXPECT_DOUBLE_EQ(adv[1], 2.0 + 0.5 * 3.0);
  EXPECT_DOUBLE_EQ(adv[0], 1.0 + 0.5 * 2.0 + 0.25 * 3.0);
}

TEST(Gae, MatchesDoubleLoopOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(30);
    std::vector<double> rewards(n), v(n);
    for (auto& r : rewards) r = rng.uniform(-1.0, 1.0);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    const auto traj = make_traj(rewards, trial % 2 == 0, rng.uniform(-1.0, 1.0));
    const double gamma = rng.uniform(0.5, 0.999), lambda = rng.uniform(0.0, 1.0);
    const auto fast = compute_gae(traj, v, gamma, lambda);
    const auto slow = gae_double_loop(traj, v, gamma, lambda);
    for (std::size_t t = 0; t < n; ++t) EXPECT_NEAR(fast[t], slow[t], 1e-12);
  }
}

TEST(Gae, DoneFlagStopsBootstrap) {
  // A done step mid-segment must not see the next step's value.
  Trajectory traj = make_traj({1.0, 1.0}, false, 9.0);
  traj.steps[0].done = true;
  const auto adv = compute_gae(traj, std::vector<double>{0.0, 5.0}, 0.9, 0.95);
  EXPECT_DOUBLE_EQ(adv[0], 1.0);
  EXPECT_DOUBLE_EQ(adv[1], 1.0 + 0.9 * 9.0 - 5.0);
}

TEST(Gae, RejectsMismatchedValues) {
  const auto traj = make_traj({1.0, 2.0}, true);
  try {
    compute_gae(traj, std::vector<double>{0.0}, 0.9, 0.9);
    FAIL();
  } catch (const LabError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
  }
}

TEST(Pairs, CountsFollowEpisodeLength) {
  const std::vector<double> a1{0.0}, a5(5, 0.0);
  EXPECT_EQ(extract_pairs(make_traj({1.0}, true), a1).size(), 0u);
  EXPECT_EQ(extract_pairs(make_traj(std::vector<double>(5, 1.0), true), a5).size(), 4u);
  // Two episodes of lengths 3 and 2: pairs never cross the boundary.
  std::vector<Trajectory> batch{make_traj({1, 1, 1}, true), make_traj({1, 1}, true)};
  std::size_t total = 0, offset = 0;
  for (const auto& t : batch) {
    const std::vector<double> adv(t.steps.size(), 0.0);
    for (const auto& p : extract_pairs(t, adv, offset)) {
      EXPECT_LT(p.index + 1, offset + t.steps.size());
      ++total;
    }
    offset += t.steps.size();
  }
  EXPECT_EQ(total, 3u);
}

TEST(Pairs, CarryNextStepFields) {
  auto traj = make_traj({1, 2, 3}, true);
  const std::vector<double> adv{0.1, 0.2, 0.3};
  const auto pairs = extract_pairs(traj, adv, 10);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[1].index, 11u);
  EXPECT_EQ(pairs[1].s, traj.steps[1].state);
  EXPECT_EQ(pairs[1].a_next, traj.steps[2].action);
  EXPECT_EQ(pairs[1].adv_next, 0.3);
}

TEST(Triples, CountsFollowEpisodeLength) {
  EXPECT_EQ(extract_triples(make_traj({1, 1}, true)).size(), 0u);
  EXPECT_EQ(extract_triples(make_traj({1, 1, 1}, true)).size(), 1u);
  const auto five = extract_triples(make_traj({1, 1, 1, 1, 1}, true), 4);
  ASSERT_EQ(five.size(), 3u);
  EXPECT_EQ(five.front(), 4u);
}

TEST(Normalization, ZeroMeanUnitStd) {
  std::vector<double> adv{1.0, 2.0, 3.0, 10.0};
  const auto c = normalize_advantages(adv);
  EXPECT_NEAR(c.mean, 4.0, 1e-15);
  double mean = 0.0, var = 0.0;
  for (double x : adv) mean += x / 4.0;
  for (double x : adv) var += (x - mean) * (x - mean) / 4.0;
  EXPECT_NEAR(mean, 0.0, 1e-15);
  EXPECT_NEAR(var, 1.0, 1e-12);
  std::vector<double> flat{2.0, 2.0};
  normalize_advantages(flat);
  EXPECT_EQ(flat[0], 0.0);
}

TEST(ValueFit, ConvergesToGeometricValue) {
  // One state, reward 1 forever: V = 1 / (1 - gamma).
  const double gamma = 0.9, target = 1.0 / (1.0 - gamma);
  ValueNetworkFit fit(ValueNetwork(1, {8}, Activation::Tanh, 1), 1, 2);
  std::vector<std::size_t> states(32, 0);
  std::vector<double> targets(32, target);
  fit_value_targets(fit, states, targets, 3000, 0.05);
  EXPECT_NEAR(fit.net.value(0), target, 1e-3);
}

TEST(ValueFit, LossIsNonIncreasingOnFixedTargets) {
  ValueNetworkFit fit(ValueNetwork(4, {16}, Activation::Tanh, 3), 1, 4);
  const std::vector<std::size_t> states{0, 1, 2, 3};
  const std::vector<double> targets{1.0, -1.0, 0.5, 2.0};
  fit_value_targets(fit, states, targets, 200, 1e-3);
  for (std::size_t e = 1; e < fit.loss_history.size(); ++e)
    EXPECT_LE(fit.loss_history[e], fit.loss_history[e - 1] + 1e-12) << "epoch " << e;
  EXPECT_LT(fit.loss_history.back(), 0.5 * fit.loss_history.front());
}

TEST(ValueFit, SameSeedSameResult) {
  auto run = [] {
    ValueNetworkFit fit(ValueNetwork(4, {16}, Activation::Tanh, 3), 2, 4);
    std::vector<Trajectory> batch{make_traj({1, 0, 1, 0}, true), make_traj({0, 1}, false, 0.5)};
    fit_value(fit, batch, 0.9, 0.95, 10, 1e-3);
    return std::vector<double>(fit.net.mlp().parameters().begin(), fit.net.mlp().parameters().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(TrajectoryCsv, RoundTripIsExact) {
  std::vector<Trajectory> batch{make_traj({1.0 / 3.0, -2.5}, true), make_traj({0.1, 0.2, 0.3}, false, -7.25)};
  batch[1].steps[0].behavior_logp = std::log(0.37);
  const auto back = trajectories_from_csv(trajectories_to_csv(batch));
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    ASSERT_EQ(back[k].steps.size(), batch[k].steps.size());
    EXPECT_EQ(back[k].bootstrap_value, batch[k].bootstrap_value);
    for (std::size_t t = 0; t < batch[k].steps.size(); ++t) {
      EXPECT_EQ(back[k].steps[t].state, batch[k].steps[t].state);
      EXPECT_EQ(back[k].steps[t].action, batch[k].steps[t].action);
      EXPECT_EQ(back[k].steps[t].reward, batch[k].steps[t].reward);
      EXPECT_EQ(back[k].steps[t].behavior_logp, batch[k].steps[t].behavior_logp);
      EXPECT_EQ(back[k].steps[t].done, batch[k].steps[t].done);
    }
  }
}
