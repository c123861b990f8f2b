#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cib/dp_solver.hpp"
#include "cib/game_spec.hpp"

namespace cib {

// Structural annotations of the uncontrolled-dynamics / no-private-values
// subclass: local states frozen and unobserved between evolution epochs,
// action-independent kernels, public state accumulating the action history
// between epochs, utilities independent of the agent's own local state,
// state-independent admissible sets.
struct GameMStructure {
  bool valid = false;
  std::vector<int> epochs;  // 1-based times at which the dynamics evolve
  std::vector<std::string> diagnostics;
};

GameMStructure detect_game_m(const GameSpec& spec);

struct GameMSizes {
  int num_agents = 2;
  int horizon = 3;
  int num_local = 2;
  int num_actions = 2;
  int num_obs = 2;
  std::vector<int> epochs;   // empty: every num_agents-th step
  bool zero_utilities = false;
};

// Seeded random instance: movers rotate one per step (non-movers hold a
// single wait action), dynamics and observation channels fire only at the
// epochs, the public state appends the action profile between epochs and is
// redrawn from a seeded stochastic table at them.
GameSpec game_m_generate(std::uint64_t seed, const GameMSizes& sizes);

struct GameMReport {
  bool pooled = true;               // every stage slice independent of own type
  bool psi_equals_sf = true;        // stored update rule coincides with the signaling-free one (bitwise)
  double decomposition_residual = 0.0;  // own-type/action separability of conditional stage payoffs
  double worst_gap = 0.0;
  double worst_consistency = 0.0;
  long long nodes = 0;
  std::string solver_path;          // "support-enumeration" or "iterated-br"
};

// Exact reachable-tree backward induction for Game M: beliefs evolve
// strategy-independently, so the belief tree is enumerated exactly and no
// grid or interpolation is involved. Every stage slice is pooled and solves
// the reduced complete-information game in expectation over opponents' types.
// Throws Error{Internal} if a reduced stage game cannot be solved (existence
// is guaranteed; a failure is a bug) and Error{Validation} if the spec lacks
// the structure.
EquilibriumBundle game_m_solve(const GameSpec& spec, GameMReport* report = nullptr,
                               long long node_budget = 200000);

}  // namespace cib
