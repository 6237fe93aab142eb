#pragma once

#include <string>

#include "rpo_lab/csv.hpp"
#include "rpo_lab/mdp.hpp"
#include "rpo_lab/rng.hpp"
#include "rpo_lab/verify.hpp"

namespace rpo::testing {

inline std::string data_path(const std::string& name) { return std::string(RPO_LAB_TEST_DATA) + "/" + name; }

inline TabularMdp load_m2() { return mdp_from_json(nlohmann::json::parse(csv::read_file(data_path("m2_fixture.json")))); }

/// One state, one action, constant reward.
inline TabularMdp single_state(double reward, double gamma) {
  TabularMdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 1;
  mdp.gamma = gamma;
  mdp.transition = Eigen::MatrixXd::Ones(1, 1);
  mdp.reward = Eigen::MatrixXd::Constant(1, 1, reward);
  mdp.initial_dist = Eigen::VectorXd::Ones(1);
  return mdp;
}

inline TabularPolicy random_pi(std::uint64_t seed, std::size_t S, std::size_t A) {
  Rng rng(seed);
  return random_policy(rng, S, A);
}

}  // namespace rpo::testing
