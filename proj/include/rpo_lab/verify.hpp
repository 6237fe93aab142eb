#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rpo_lab/csv.hpp"
#include "rpo_lab/environments.hpp"
#include "rpo_lab/mdp.hpp"
#include "rpo_lab/parallel.hpp"
#include "rpo_lab/rng.hpp"
#include "rpo_lab/theory.hpp"

namespace rpo {

// Pinned tolerances of the check battery.
inline constexpr double kIdentityTol = 1e-8;
inline constexpr double kBoundSlack = 1e-12;

struct VerifyConfig {
  std::size_t instances = 200;
  std::uint64_t seed = 7;
  std::size_t max_states = 6;
  std::size_t max_actions = 4;
  std::vector<std::size_t> k_list{1, 2, 3};
  std::size_t psi_samples = 0;  // per instance; 0 picks enough for 10^4 in total (at least 50)
  std::optional<TabularMdp> fixed_mdp;  // when set, every instance reuses this MDP
  std::size_t workers = 1;

  void validate() const {
    require(instances >= 1, ErrorKind::OutOfRange, "instances", "need at least one instance");
    require(max_states >= 2 && max_actions >= 2, ErrorKind::OutOfRange, "max-states",
            "sweeps need at least 2 states and 2 actions");
    require(!k_list.empty(), ErrorKind::OutOfRange, "k-list", "empty horizon list");
    for (auto k : k_list) check_horizon(k);
    if (fixed_mdp) fixed_mdp->validate();
  }

  std::size_t psi_samples_per_instance() const {
    if (psi_samples > 0) return psi_samples;
    return std::max<std::size_t>(50, (10000 + instances - 1) / instances);
  }
};

struct VerifyRow {
  std::uint64_t instance_seed = 0;
  std::string check_name;
  double lhs = 0.0;
  double rhs_or_bound = 0.0;
  double gap = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<VerifyRow> rows;
  std::size_t psi_samples = 0;
  std::size_t psi_witnesses = 0;  // mu in Psi_1 but not Psi_2

  std::vector<const VerifyRow*> violations() const {
    std::vector<const VerifyRow*> out;
    for (const auto& r : rows)
      if (!r.pass) out.push_back(&r);
    return out;
  }
};

/// Random instance for the sweep, all draws from one seeded stream.
struct SweepInstance {
  std::uint64_t seed = 0;
  TabularMdp mdp;
  TabularPolicy pi;
  TabularPolicy pi_hat;
};

inline TabularPolicy random_policy(Rng& rng, std::size_t S, std::size_t A) {
  TabularPolicy pi{Eigen::MatrixXd(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A))};
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<double> row;
    do row = rng.dirichlet_flat(A);
    while (*std::min_element(row.begin(), row.end()) <= 0.0);
    for (std::size_t a = 0; a < A; ++a) pi.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = row[a];
  }
  return pi;
}

/// pi_hat is a strictly positive Dirichlet policy; pi is Dirichlet, mixed
/// toward pi_hat with a log-uniform weight half of the time to reach small
/// distances.
inline SweepInstance make_sweep_instance(std::uint64_t seed, const VerifyConfig& cfg) {
  Rng rng(seed);
  SweepInstance inst;
  inst.seed = seed;
  if (cfg.fixed_mdp) {
    inst.mdp = *cfg.fixed_mdp;
  } else {
    const std::size_t S = 2 + rng.uniform_index(cfg.max_states - 1);
    const std::size_t A = 2 + rng.uniform_index(cfg.max_actions - 1);
    const double gamma = rng.uniform(0.5, 0.95);
    inst.mdp = random_mdp(rng.next_u64(), S, A, gamma);
  }
  const std::size_t S = inst.mdp.n_states, A = inst.mdp.n_actions;
  inst.pi_hat = random_policy(rng, S, A);
  inst.pi = random_policy(rng, S, A);
  if (rng.uniform() < 0.5) {
    const double w = std::exp(rng.uniform(std::log(1e-3), 0.0));
    inst.pi.probs = (1.0 - w) * inst.pi_hat.probs + w * inst.pi.probs;
  }
  return inst;
}

namespace detail {

inline VerifyRow identity_row(std::uint64_t seed, std::string name, double lhs, double rhs) {
  const double gap = std::abs(lhs - rhs);
  return {seed, std::move(name), lhs, rhs, gap, gap <= kIdentityTol};
}

/// lhs <= bound (+ slack). gap = lhs - bound, so violations are positive.
inline VerifyRow upper_row(std::uint64_t seed, std::string name, double lhs, double bound) {
  return {seed, std::move(name), lhs, bound, lhs - bound, lhs <= bound + kBoundSlack};
}

/// lhs >= bound (- slack). gap = lhs - bound, so violations are negative.
inline VerifyRow lower_row(std::uint64_t seed, std::string name, double lhs, double bound) {
  return {seed, std::move(name), lhs, bound, lhs - bound, lhs >= bound - kBoundSlack};
}

struct InstanceResult {
  std::vector<VerifyRow> rows;
  std::size_t witnesses = 0;
  std::size_t samples = 0;
};

inline InstanceResult check_instance(const SweepInstance& inst, const VerifyConfig& cfg) {
  InstanceResult out;
  auto& rows = out.rows;
  const auto seed = inst.seed;
  const auto& mdp = inst.mdp;
  const double gamma = mdp.gamma;

  const auto pd = performance_difference_check(mdp, inst.pi, inst.pi_hat);
  rows.push_back(identity_row(seed, "performance_difference", pd.lhs, pd.rhs));
  const auto l1 = lemma1_gap(mdp, inst.pi, inst.pi_hat);
  rows.push_back(identity_row(seed, "lemma1", l1.lhs, l1.rhs));

  for (auto k : cfg.k_list) {
    const auto tag = "_k" + std::to_string(k);
    const auto rep = surrogate_report(mdp, inst.pi, inst.pi_hat, k);
    const double gap_eta = eta(mdp, inst.pi) - eta(mdp, inst.pi_hat);

    double rhs = rep.beta_k * rep.G_k;
    for (std::size_t i = 0; i < k; ++i) rhs += rep.alpha[i] * rep.L[i];
    rows.push_back(identity_row(seed, "theorem1" + tag, gap_eta, rhs));

    const auto c1 = corollary1_bound(rep, gamma);
    rows.push_back(upper_row(seed, "corollary1" + tag, c1.lhs, c1.bound));

    rows.push_back(lower_row(seed, "theorem2" + tag, gap_eta, lower_bound_value(rep)));

    if (k >= 2) {
      double dec = rep.beta_k * rep.G_hat;
      for (std::size_t i = 0; i < k; ++i) dec += rep.alpha[i] * rep.L_hat[i];
      for (std::size_t i = 1; i < k; ++i) dec -= rep.alpha[i] * rep.H_hat[i];
      rows.push_back(identity_row(seed, "appendix_identity" + tag, gap_eta, dec));
      const double h_bound = rep.r_max * rep.tv_eps / (1.0 - gamma);
      const double g_bound = h_bound * rep.tv_eps;
      for (std::size_t i = 1; i < k; ++i)
        rows.push_back(upper_row(seed, "appendix_H" + std::to_string(i) + tag, std::abs(rep.H_hat[i]), h_bound));
      rows.push_back(upper_row(seed, "appendix_G" + tag, std::abs(rep.G_hat), g_bound));
    }

    if (1.0 - gamma - gamma * rep.tv_eps > 0.0) {
      const auto cmp = taypo_bound_compare(rep, gamma, k);
      rows.push_back(upper_row(seed, "taypo" + tag, cmp.rpo_bound, cmp.taypo_bound));
    }
  }

  // Psi_2 subset of Psi_1 over mixtures around pi_hat.
  Rng rng(mix_seed(seed, 0x951));
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  std::size_t counterexamples = 0;
  const std::size_t samples = cfg.psi_samples_per_instance();
  for (std::size_t j = 0; j < samples; ++j) {
    TabularPolicy nu;
    if (rng.uniform() < 0.5) {
      nu = random_policy(rng, S, A);
    } else {
      std::vector<std::size_t> actions(S);
      for (auto& a : actions) a = rng.uniform_index(A);
      nu = TabularPolicy::deterministic(actions, A);
    }
    const double reach = tv_distance(nu, inst.pi_hat);
    double w = std::exp(rng.uniform(std::log(1e-4), 0.0));
    if (reach > 0.5) w *= 0.5 / reach;
    const TabularPolicy mu{(1.0 - w) * inst.pi_hat.probs + w * nu.probs};
    const auto m = psi_membership(mdp, mu, inst.pi_hat);
    if (m.in_psi2 && !m.in_psi1) ++counterexamples;
    if (m.in_psi1 && !m.in_psi2) ++out.witnesses;
  }
  out.samples = samples;
  rows.push_back({seed, "psi_inclusion", static_cast<double>(counterexamples), 0.0,
                  static_cast<double>(counterexamples), counterexamples == 0});
  return out;
}

}  // namespace detail

/// Comparison of the two remainder bounds on a fixed grid;
/// grid points outside 1 - gamma - gamma eps > 0 are skipped.
inline std::vector<VerifyRow> taypo_grid_rows(std::uint64_t seed) {
  std::vector<VerifyRow> rows;
  for (double gamma : {0.5, 0.9, 0.99})
    for (double eps : {0.01, 0.05})
      for (std::size_t k : {1, 2, 3}) {
        if (1.0 - gamma - gamma * eps <= 0.0) continue;
        const auto cmp = taypo_bound_compare(gamma, eps, k, 1.0);
        auto name = "taypo_grid_g" + csv::format_double(gamma) + "_e" + csv::format_double(eps) + "_k" +
                    std::to_string(k);
        // Strict: equality is only allowed at eps = 0.
        rows.push_back({seed, std::move(name), cmp.rpo_bound, cmp.taypo_bound, cmp.rpo_bound - cmp.taypo_bound,
                        cmp.rpo_bound < cmp.taypo_bound});
      }
  return rows;
}

/// The full check battery. Instances run on cfg.workers threads; rows are
/// merged in instance order.
inline VerifyReport run_verification(const VerifyConfig& cfg) {
  cfg.validate();
  std::vector<detail::InstanceResult> results(cfg.instances);
  parallel_for(cfg.instances, cfg.workers, [&](std::size_t i) {
    results[i] = detail::check_instance(make_sweep_instance(mix_seed(cfg.seed, i), cfg), cfg);
  });
  VerifyReport report;
  for (auto& r : results) {
    report.psi_samples += r.samples;
    report.psi_witnesses += r.witnesses;
    for (auto& row : r.rows) report.rows.push_back(std::move(row));
  }
  report.rows.push_back({cfg.seed, "psi_witness", static_cast<double>(report.psi_witnesses), 1.0,
                         static_cast<double>(report.psi_witnesses) - 1.0, report.psi_witnesses >= 1});
  for (auto& row : taypo_grid_rows(cfg.seed)) report.rows.push_back(std::move(row));
  return report;
}

inline const std::vector<std::string>& verify_columns() {
  static const std::vector<std::string> cols{"instance_seed", "check_name", "lhs", "rhs_or_bound", "gap", "pass"};
  return cols;
}

inline std::string verify_to_csv(const std::vector<VerifyRow>& rows) {
  csv::Table table;
  table.header = verify_columns();
  for (const auto& r : rows)
    table.rows.push_back({std::to_string(r.instance_seed), r.check_name, csv::format_double(r.lhs),
                          csv::format_double(r.rhs_or_bound), csv::format_double(r.gap), r.pass ? "1" : "0"});
  return csv::to_string(table);
}

inline std::vector<VerifyRow> verify_from_csv(const std::string& text) {
  const auto table = csv::parse(text);
  require(table.header == verify_columns(), ErrorKind::Parse, "verify", "unexpected verify header");
  std::vector<VerifyRow> rows;
  for (const auto& row : table.rows)
    rows.push_back({csv::parse_uint(row[0]), row[1], csv::parse_double(row[2]), csv::parse_double(row[3]),
                    csv::parse_double(row[4]), row[5] == "1"});
  return rows;
}

}  // namespace rpo
