#pragma once

#include <vector>

#include "cib/game_spec.hpp"

namespace cib {

// Open-loop conditioning query: actions and observations for steps 1..t-1
// (per-agent index profiles), and optionally one agent's own local-state
// trajectory x^n_{1:t} to condition on.
struct OracleQuery {
  int t = 1;
  std::vector<std::vector<int>> actions;       // [tau][n], tau = 1..t-1
  std::vector<std::vector<int>> observations;  // [tau][n]
  int agent = -1;                              // -1: no own-trajectory conditioning
  std::vector<int> own_trajectory;             // x^agent_{1..t} when agent >= 0
};

// Exact distribution over joint local-state trajectories x_{1:t}, computed by
// exhaustive enumeration. Trajectory index is mixed-radix over (tau, n) with
// tau slowest, then agent, matching trajectory_of/index_of below.
struct TrajectoryDist {
  int t = 1;
  int num_agents = 0;
  std::vector<std::vector<int>> dims;  // [tau][n] = |X^n_tau|
  std::vector<double> prob;            // flat over trajectories

  long long size() const { return static_cast<long long>(prob.size()); }
  std::vector<std::vector<int>> trajectory_of(long long idx) const;  // [tau][n]
  long long index_of(const std::vector<std::vector<int>>& traj) const;

  // Marginal of X^n_tau.
  std::vector<double> marginal(int tau, int n) const;
  // Marginal over one agent's full trajectory (flat, tau slowest).
  std::vector<double> agent_trajectory_marginal(int n) const;
};

// The signaling-free belief over histories of states: the conditional law of
// X_{1:t} given the observations (and, optionally, one agent's own
// trajectory) when the actions are applied open-loop. Action admissibility
// contributes an indicator factor: an observed action rules out local states
// where it is inadmissible under every strategy.
//
// Throws Error{Budget} when the trajectory count exceeds `budget`, and
// Error{Validation} when the conditioning event has probability zero.
TrajectoryDist joint_bayes_oracle(const GameSpec& spec, const OracleQuery& query,
                                  long long budget = 10'000'000LL);

}  // namespace cib
