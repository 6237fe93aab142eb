#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rpo_lab/advantage.hpp"
#include "rpo_lab/error.hpp"
#include "rpo_lab/policy_model.hpp"

namespace rpo {

enum class Variant { Ppo, Rpo, Rpo3, RpoJointClip };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Ppo: return "ppo";
    case Variant::Rpo: return "rpo";
    case Variant::Rpo3: return "rpo3";
    case Variant::RpoJointClip: return "rpo-jointclip";
  }
  return "unknown";
}

inline Variant variant_from_string(const std::string& tag) {
  if (tag == "ppo") return Variant::Ppo;
  if (tag == "rpo") return Variant::Rpo;
  if (tag == "rpo3") return Variant::Rpo3;
  if (tag == "rpo-jointclip" || tag == "rpo_jointclip") return Variant::RpoJointClip;
  throw LabError(ErrorKind::Parse, "variant", "unknown algorithm tag '" + tag + "'");
}

struct ClipConfig {
  double epsilon = 0.1;
  double epsilon1 = 0.1;
  double beta = 3.0;
  std::size_t k = 2;
  Variant variant = Variant::Rpo;

  static ClipConfig for_variant(Variant v, double epsilon = 0.1, double epsilon1 = 0.1, double beta = 3.0) {
    return {epsilon, epsilon1, beta, v == Variant::Rpo3 ? std::size_t{3} : std::size_t{2}, v};
  }

  // beta = 0 reduces rpo to the single-ratio objective; negative is rejected.
  void validate() const {
    require(epsilon > 0.0 && epsilon < 1.0, ErrorKind::OutOfRange, "epsilon", "must lie in (0, 1)");
    if (variant == Variant::Ppo) return;
    require(epsilon1 > 0.0 && epsilon1 < 1.0, ErrorKind::OutOfRange, "epsilon1", "must lie in (0, 1)");
    require(beta >= 0.0, ErrorKind::OutOfRange, "beta", "must be non-negative");
    require(k == (variant == Variant::Rpo3 ? 3u : 2u), ErrorKind::OutOfRange, "k",
            "horizon does not match the variant");
  }
};

inline double clip(double x, double eps) { return std::clamp(x, 1.0 - eps, 1.0 + eps); }

inline bool inside_clip(double x, double eps) { return x > 1.0 - eps && x < 1.0 + eps; }

/// Term value with partial derivatives with respect to each ratio.
template <std::size_t N>
struct TermGrad {
  double value = 0.0;
  double d_ratio[N] = {};
  bool clipped_branch = false;
};

namespace detail {

inline void check_term_inputs(std::initializer_list<double> ratios, double adv) {
  require(std::isfinite(adv), ErrorKind::NonFinite, "advantage", "non-finite advantage");
  for (double r : ratios) {
    require(std::isfinite(r), ErrorKind::NonFinite, "ratio", "non-finite probability ratio");
    require(r > 0.0, ErrorKind::OutOfRange, "ratio", "probability ratio must be positive");
  }
}

}  // namespace detail

// Ties between the two branches of the min take the unclipped branch.

inline TermGrad<1> ppo_term_grad(double ratio, double adv, double epsilon) {
  detail::check_term_inputs({ratio}, adv);
  TermGrad<1> out;
  const double unclipped = ratio * adv;
  const double clipped = clip(ratio, epsilon) * adv;
  if (unclipped <= clipped) {
    out.value = unclipped;
    out.d_ratio[0] = adv;
  } else {
    out.value = clipped;
    out.clipped_branch = true;
    out.d_ratio[0] = inside_clip(ratio, epsilon) ? adv : 0.0;
  }
  return out;
}

inline TermGrad<2> rpo_pair_term_grad(double ratio, double ratio_next, double adv_next, double epsilon,
                                      double epsilon1) {
  detail::check_term_inputs({ratio, ratio_next}, adv_next);
  TermGrad<2> out;
  const double c0 = clip(ratio, epsilon), c1 = clip(ratio_next, epsilon1);
  const double unclipped = ratio * ratio_next * adv_next;
  const double clipped = c0 * c1 * adv_next;
  if (unclipped <= clipped) {
    out.value = unclipped;
    out.d_ratio[0] = ratio_next * adv_next;
    out.d_ratio[1] = ratio * adv_next;
  } else {
    out.value = clipped;
    out.clipped_branch = true;
    out.d_ratio[0] = inside_clip(ratio, epsilon) ? c1 * adv_next : 0.0;
    out.d_ratio[1] = inside_clip(ratio_next, epsilon1) ? c0 * adv_next : 0.0;
  }
  return out;
}

inline TermGrad<2> jointclip_pair_term_grad(double ratio, double ratio_next, double adv_next, double epsilon) {
  detail::check_term_inputs({ratio, ratio_next}, adv_next);
  TermGrad<2> out;
  const double product = ratio * ratio_next;
  const double unclipped = product * adv_next;
  const double clipped = clip(product, epsilon) * adv_next;
  const bool flows = unclipped <= clipped || inside_clip(product, epsilon);
  out.clipped_branch = unclipped > clipped;
  out.value = out.clipped_branch ? clipped : unclipped;
  out.d_ratio[0] = flows ? ratio_next * adv_next : 0.0;
  out.d_ratio[1] = flows ? ratio * adv_next : 0.0;
  return out;
}

inline TermGrad<3> rpo3_term_grad(double r0, double r1, double r2, double adv2, double epsilon, double epsilon1) {
  detail::check_term_inputs({r0, r1, r2}, adv2);
  TermGrad<3> out;
  const double c0 = clip(r0, epsilon), c1 = clip(r1, epsilon1), c2 = clip(r2, epsilon1);
  const double unclipped = r0 * r1 * r2 * adv2;
  const double clipped = c0 * c1 * c2 * adv2;
  if (unclipped <= clipped) {
    out.value = unclipped;
    out.d_ratio[0] = r1 * r2 * adv2;
    out.d_ratio[1] = r0 * r2 * adv2;
    out.d_ratio[2] = r0 * r1 * adv2;
  } else {
    out.value = clipped;
    out.clipped_branch = true;
    out.d_ratio[0] = inside_clip(r0, epsilon) ? c1 * c2 * adv2 : 0.0;
    out.d_ratio[1] = inside_clip(r1, epsilon1) ? c0 * c2 * adv2 : 0.0;
    out.d_ratio[2] = inside_clip(r2, epsilon1) ? c0 * c1 * adv2 : 0.0;
  }
  return out;
}

inline double ppo_term(double ratio, double adv, double epsilon) { return ppo_term_grad(ratio, adv, epsilon).value; }

inline double rpo_pair_term(double ratio, double ratio_next, double adv_next, double epsilon, double epsilon1) {
  return rpo_pair_term_grad(ratio, ratio_next, adv_next, epsilon, epsilon1).value;
}

inline double jointclip_pair_term(double ratio, double ratio_next, double adv_next, double epsilon) {
  return jointclip_pair_term_grad(ratio, ratio_next, adv_next, epsilon).value;
}

inline double rpo3_term(double r0, double r1, double r2, double adv2, double epsilon, double epsilon1) {
  return rpo3_term_grad(r0, r1, r2, adv2, epsilon, epsilon1).value;
}

// ---------------------------------------------------------------------------

/// Flattened on-policy batch. Pair entries hold the batch index of their
/// first step (the second is index + 1); triples likewise.
struct RolloutBatch {
  std::vector<std::size_t> states;
  std::vector<std::size_t> actions;
  std::vector<double> behavior_logp;
  std::vector<double> adv;
  std::vector<std::size_t> pairs;
  std::vector<std::size_t> triples;

  std::size_t size() const { return states.size(); }
};

/// Flattens trajectories with their (already estimated) advantages. When
/// `normalize` is set, one set of batch constants standardizes every
/// advantage, so adv and adv_next share normalization.
inline RolloutBatch build_rollout_batch(const std::vector<Trajectory>& trajs,
                                        const std::vector<std::vector<double>>& advantages, bool normalize) {
  require(trajs.size() == advantages.size(), ErrorKind::DimensionMismatch, "advantages",
          "one advantage list per trajectory");
  RolloutBatch b;
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    const auto& traj = trajs[k];
    const std::size_t offset = b.size();
    for (const auto& pair : extract_pairs(traj, advantages[k], offset)) b.pairs.push_back(pair.index);
    for (auto idx : extract_triples(traj, offset)) b.triples.push_back(idx);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      b.states.push_back(traj.steps[t].state);
      b.actions.push_back(traj.steps[t].action);
      b.behavior_logp.push_back(traj.steps[t].behavior_logp);
      b.adv.push_back(advantages[k][t]);
    }
  }
  if (normalize) normalize_advantages(b.adv);
  return b;
}

struct ObjectiveResult {
  double value = 0.0;
  GradientBuffer grad;       // ascent direction
  double loss_clip0 = 0.0;   // mean clipped single-ratio term
  double loss_clip1 = 0.0;   // mean reflective term (diagnostic under ppo)
  double clipfrac0 = 0.0;
  double clipfrac1 = 0.0;
  double max_ratio_deviation = 0.0;  // max |r - 1| over the referenced steps
  bool degraded = false;             // reflective term requested but no pairs available
};

/// Clipped objective over a minibatch given by step, pair and triple subsets.
/// value = mean(clipped single-ratio terms) + beta * mean(reflective terms);
/// the gradient sums exact subgradients through r = exp(logp - behavior_logp).
/// Under ppo the pair term is still evaluated as a diagnostic
/// (loss_clip1, clipfrac1) but contributes nothing to value or gradient.
inline ObjectiveResult evaluate_objective(const RolloutBatch& batch, std::span<const std::size_t> step_ids,
                                          std::span<const std::size_t> pair_ids,
                                          std::span<const std::size_t> triple_ids, const PolicyNetwork& net,
                                          const ClipConfig& cfg, bool want_grad = true) {
  cfg.validate();
  require(!step_ids.empty(), ErrorKind::OutOfRange, "batch", "objective needs at least one step");
  const std::size_t n = batch.size();
  std::vector<double> ratio(n, 0.0);
  std::vector<char> known(n, 0);
  ObjectiveResult out;
  auto ratio_at = [&](std::size_t i) {
    if (!known[i]) {
      const double logp = net.log_prob(batch.states[i], batch.actions[i]);
      ratio[i] = std::exp(logp - batch.behavior_logp[i]);
      out.max_ratio_deviation = std::max(out.max_ratio_deviation, std::abs(ratio[i] - 1.0));
      known[i] = 1;
    }
    return ratio[i];
  };

  std::vector<double> coeff(n, 0.0);
  const double step_weight = 1.0 / static_cast<double>(step_ids.size());
  double clipped0 = 0.0;
  for (auto i : step_ids) {
    const auto term = ppo_term_grad(ratio_at(i), batch.adv[i], cfg.epsilon);
    out.loss_clip0 += term.value * step_weight;
    coeff[i] += step_weight * term.d_ratio[0] * ratio[i];
    if (!inside_clip(ratio[i], cfg.epsilon)) clipped0 += 1.0;
  }
  out.clipfrac0 = clipped0 * step_weight;
  out.value = out.loss_clip0;

  const bool uses_triples = cfg.variant == Variant::Rpo3;
  const std::size_t n_reflective = uses_triples ? triple_ids.size() : pair_ids.size();
  if (n_reflective == 0) {
    out.degraded = cfg.variant != Variant::Ppo;
  } else {
    const double w = 1.0 / static_cast<double>(n_reflective);
    const double beta = cfg.variant == Variant::Ppo ? 0.0 : cfg.beta;
    double clipped1 = 0.0;
    if (uses_triples) {
      for (auto i : triple_ids) {
        const double r0 = ratio_at(i), r1 = ratio_at(i + 1), r2 = ratio_at(i + 2);
        const auto term = rpo3_term_grad(r0, r1, r2, batch.adv[i + 2], cfg.epsilon, cfg.epsilon1);
        out.loss_clip1 += term.value * w;
        coeff[i] += beta * w * term.d_ratio[0] * r0;
        coeff[i + 1] += beta * w * term.d_ratio[1] * r1;
        coeff[i + 2] += beta * w * term.d_ratio[2] * r2;
        if (!inside_clip(r0, cfg.epsilon) || !inside_clip(r1, cfg.epsilon1) || !inside_clip(r2, cfg.epsilon1))
          clipped1 += 1.0;
      }
    } else {
      for (auto i : pair_ids) {
        const double r0 = ratio_at(i), r1 = ratio_at(i + 1);
        const double adv_next = batch.adv[i + 1];
        TermGrad<2> term;
        bool clipped = false;
        if (cfg.variant == Variant::RpoJointClip) {
          term = jointclip_pair_term_grad(r0, r1, adv_next, cfg.epsilon);
          clipped = !inside_clip(r0 * r1, cfg.epsilon);
        } else {
          term = rpo_pair_term_grad(r0, r1, adv_next, cfg.epsilon, cfg.epsilon1);
          clipped = !inside_clip(r0, cfg.epsilon) || !inside_clip(r1, cfg.epsilon1);
        }
        out.loss_clip1 += term.value * w;
        if (beta != 0.0) {
          coeff[i] += beta * w * term.d_ratio[0] * r0;
          coeff[i + 1] += beta * w * term.d_ratio[1] * r1;
        }
        if (clipped) clipped1 += 1.0;
      }
    }
    out.clipfrac1 = clipped1 * w;
    out.value += beta * out.loss_clip1;
  }

  if (want_grad) {
    out.grad.grad.assign(net.mlp().size(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      if (coeff[i] != 0.0) net.accumulate_log_prob_grad(batch.states[i], batch.actions[i], coeff[i], out.grad.grad);
  }
  return out;
}

/// Full-batch objective: every step, pair and triple.
inline ObjectiveResult full_objective(const RolloutBatch& batch, const PolicyNetwork& net, const ClipConfig& cfg,
                                      bool want_grad = true) {
  std::vector<std::size_t> steps(batch.size());
  std::iota(steps.begin(), steps.end(), 0);
  return evaluate_objective(batch, steps, batch.pairs, batch.triples, net, cfg, want_grad);
}

}  // namespace rpo
