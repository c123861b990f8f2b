#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cib/belief.hpp"
#include "cib/belief_grid.hpp"
#include "cib/game_spec.hpp"
#include "cib/stage_game.hpp"

namespace cib {

struct SolverConfig {
  double bne_tol = 1e-6;
  double consistency_tol = 1e-9;
  int max_iters = 10000;
  int restarts = 16;
  double damping = 0.5;
  bool symmetric_mode = false;
  bool grid_fallback = true;
  bool enumerate_all = false;
  std::uint64_t seed = 0;
};

// Joint fixed point at one (t, b): lambda is a BNE of the stage game whose
// continuation beliefs evolve by psi, and psi is consistent with lambda.
// Certificates are recomputed from scratch on the returned pair.
struct StageSolution {
  StrategySlice lambda;
  UpdateSlice psi;
  double gap = 0.0;            // bne_gap of lambda in the stage built from psi
  double consistency = 0.0;    // update-rule consistency residual of (lambda, psi)
  bool ok = false;
  std::string method;          // which pipeline stage produced the result
  int evaluations = 0;
  std::vector<StrategySlice> all_equilibria;  // populated in enumerate mode
};

// Pipeline: uniform pre-check, pooled reduced-game solve (own-type-separable
// stages), symmetric indifference search (symmetric games at symmetric b),
// support-class indifference search (every type <= 2 admissible actions),
// damped iterated best response with seeded restarts, hierarchical hypercube
// scan. First certified candidate under a fixed deterministic order wins; on
// failure the best candidate is returned with ok = false and its honest
// certificates.
StageSolution solve_bne_consistent(const GameSpec& spec, const ValueSource& vnext,
                                   const CIBState& b, const SolverConfig& config);

// Equilibrium of a two-player normal-form game by support enumeration
// (uniform pre-check first, then support pairs by increasing size). Payoff
// matrices indexed [row][col] for player 1 / player 2.
struct BimatrixNash {
  std::vector<double> row;
  std::vector<double> col;
  bool ok = false;
  double gap = 0.0;
};
BimatrixNash bimatrix_nash(const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b, double tol = 1e-9);

// Pooled equilibria of stages whose conditional payoffs separate into an
// action part independent of the own type and a type part independent of the
// action (uncontrolled-dynamics / no-private-values structure). When the
// separability residual is below `sep_tol` the stage reduces to a
// complete-information game over pooled mixtures; a pooled equilibrium of the
// reduction is a BNE of the stage game.
struct PooledReduced {
  bool applicable = false;   // admissible sets state-independent & separable
  bool solved = false;
  StrategySlice lambda;      // pooled slice when solved
  double separability = 0.0; // max own-type/action coupling in the tensor
  std::string path;          // "support-enumeration" or "iterated-br"
};
PooledReduced solve_pooled_reduced(const GameSpec& spec, const StageGame& stage, const CIBState& b,
                                   double sep_tol, std::uint64_t seed);

}  // namespace cib
