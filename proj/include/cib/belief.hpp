#pragma once

#include <vector>

#include "cib/game_spec.hpp"

namespace cib {

// Product-form belief over the joint local state at one time: one probability
// vector per agent. The represented joint belief is the product across agents.
struct BeliefVector {
  int time = 1;
  std::vector<std::vector<double>> marginals;  // [n][x]

  static BeliefVector prior_of(const GameSpec& spec);
  bool valid(double tol = 1e-12) const;
  double joint(const GameSpec& spec, int xj) const;  // product probability of a joint state
  // Max over agents of total-variation distance to `other`.
  double tv_distance(const BeliefVector& other) const;
  bool operator==(const BeliefVector&) const = default;
};

// Common-information state b_t = (c_t, pi_t, pihat_t).
struct CIBState {
  int time = 1;
  int pub = 0;
  BeliefVector pi;      // strategic CIB belief
  BeliefVector pihat;   // signaling-free CIB belief
};

// One stage's CIB strategy at a fixed b_t: per agent, per local state, a
// distribution over that agent's full action alphabet (zero outside the
// admissible set).
struct StrategySlice {
  int time = 1;
  std::vector<std::vector<std::vector<double>>> probs;  // [n][x][a]

  static StrategySlice uniform(const GameSpec& spec, int t);
  bool valid(const GameSpec& spec, double tol = 1e-12) const;
  // True when every agent's distribution is the same for all local states
  // (exact comparison).
  bool pooled() const;
  double max_abs_diff(const StrategySlice& other) const;
};

// One stage's belief-update rule at a fixed b_t: for each agent, own
// observation and joint action, the next per-agent belief.
struct UpdateSlice {
  int time = 1;
  // next[n][y][aj] -> distribution over X^n_{t+1}
  std::vector<std::vector<std::vector<std::vector<double>>>> next;

  double max_abs_diff(const UpdateSlice& other) const;
  bool operator==(const UpdateSlice&) const = default;
};

// Signaling-free (open-loop) one-step update of a single agent's belief,
// conditioning on the observation, the action profile and action
// admissibility only. Throws Error{Validation} at an impossible observation
// when `strict` (the operation-level contract); with strict=false falls back
// to the admissibility-filtered pushforward of pihat_n under p (and to the
// uniform distribution if even that has no mass), which is what update-rule
// tables use for entries that no strategy can reach.
std::vector<double> signaling_free_step_agent(const GameSpec& spec, int t, int n,
                                              const std::vector<double>& pihat_n, int y_n,
                                              int aj, bool strict = true);

// All agents at once; y and a are per-agent index profiles.
BeliefVector signaling_free_step(const GameSpec& spec, const BeliefVector& pihat,
                                 const std::vector<int>& y, const std::vector<int>& a);

// Strategy-consistent one-step update (Bayes with the strategy and observation
// kernel in the weight; falls back per agent to the signaling-free update when
// the denominator vanishes). Never throws on zero denominators.
BeliefVector consistent_update(const GameSpec& spec, const StrategySlice& lambda,
                               const CIBState& b, const std::vector<int>& y,
                               const std::vector<int>& a);

// Full update-rule tables at b (every (n, y^n, aj) entry).
UpdateSlice build_update_slice(const GameSpec& spec, const StrategySlice& lambda, const CIBState& b);
UpdateSlice build_signaling_free_slice(const GameSpec& spec, const BeliefVector& pihat);

// Certificate: how far psi is from being consistent with lambda at b. For
// entries with positive denominator this is the max deviation from the Bayes
// ratio; for zero-denominator entries it is the probability mass psi places
// outside the signaling-free support.
double consistency_residual(const GameSpec& spec, const StrategySlice& lambda,
                            const UpdateSlice& psi, const CIBState& b);

}  // namespace cib
