#pragma once

#include "cib/belief.hpp"
#include "cib/game_spec.hpp"

namespace cib {

// Two-agent multiple access broadcast game over a collision channel. Queue
// length X^n in {0,1}, Bernoulli(p) arrivals, transmit decision A^n in {0,1}
// admissible only when the queue is full, unit reward for a lone successful
// transmission, expected dropping cost c*p while the buffer stays full. No
// public state and no observations (actions are commonly observed).
struct MacParams {
  double arrival_p = 0.5;  // P(one packet arrives)
  double drop_cost = 2.0;  // c
  int horizon = 2;

  // Mixing threshold of the last-stage equilibrium.
  double c_star() const { return (1.0 + drop_cost * arrival_p) / (2.0 + drop_cost * arrival_p); }
  void validate() const;
};

// The game primitive. The initial prior is P(X^n_1 = 1) = p per agent (one
// arrival epoch into an empty buffer); the solver sweeps the whole belief
// square anyway.
GameSpec mac_spec(const MacParams& params);

// Last-stage equilibrium transmit probabilities (beta^1, beta^2) as a
// function of the stage prior (pi^1, pi^2): (1,1) when both are below the
// threshold, the lone full-belief agent transmits when exactly one is above,
// and (c*/pi^1, c*/pi^2) when both are above.
std::pair<double, double> mac_beta2_closed_form(double pi1, double pi2, const MacParams& params);

// Last-stage value of agent n (0-based) at queue length x given the stage
// prior.
double mac_value2_closed_form(int n, int x, double pi1, double pi2, const MacParams& params);

// First-stage consistent belief update pi^n_2 as a function of (pi^n_1,
// beta^n_1) and the observed action profile (a^n, a^{-n}): 1 on a collision,
// p after a lone transmission, the Bayes silence expression otherwise (with
// the signaling-free fallback when the silence event has probability zero).
double mac_belief_update_closed_form(double pi_n, double beta_n, int a_n, int a_other,
                                     const MacParams& params);

}  // namespace cib
