#pragma once

#include <vector>

#include "cib/belief.hpp"
#include "cib/belief_grid.hpp"
#include "cib/game_spec.hpp"

namespace cib {

// One-shot Bayesian game at (t, b): types drawn from b.pi, payoff of a joint
// (type, action) pair = instantaneous utility plus the expected continuation
// value at the updated common-information state.
struct StageGame {
  int time = 1;
  CIBState b;
  const GameSpec* spec = nullptr;
  // payoff[n][xj * AJ + aj]; NaN at profiles inadmissible at xj (never read
  // through the expectation helpers, whose strategy weights vanish there).
  std::vector<std::vector<double>> payoff;

  double at(int n, int xj, int aj) const {
    return payoff[n][static_cast<size_t>(xj) * static_cast<size_t>(spec->njoint_actions(time)) + aj];
  }
};

// Payoff row of a single agent (used by the stage builder and by the
// verifier's deviation MDP, which evaluates different continuations per
// agent). vnext is V_{t+1}; psi gives the strategic belief update, sf the
// signaling-free one.
std::vector<double> build_agent_payoffs(const GameSpec& spec, int n, const ValueSource& vnext,
                                        const UpdateSlice& psi, const UpdateSlice& sf,
                                        const CIBState& b);

StageGame build_stage_game(const GameSpec& spec, const ValueSource& vnext, const UpdateSlice& psi,
                           const UpdateSlice& sf, const CIBState& b);
// Convenience: computes the signaling-free slice internally.
StageGame build_stage_game(const GameSpec& spec, const ValueSource& vnext, const UpdateSlice& psi,
                           const CIBState& b);

// E over opponents' types (independent draws from b.pi marginals) and their
// mixed actions of the payoff to agent n of playing a at type x.
double expected_payoff(const StageGame& stage, int n, int x, int a, const StrategySlice& others);

struct BestResponseResult {
  std::vector<std::vector<int>> argmax;  // per type: actions within tie tolerance of the max
  std::vector<double> value;             // per type: max expected payoff
  std::vector<std::vector<double>> q;    // per type: expected payoff per action (NaN inadmissible)
};

BestResponseResult best_response(const StageGame& stage, int n, const StrategySlice& others);

// Max over (agent, type) of best-response value minus the value of the
// agent's own mixture; 0 iff lambda is an exact BNE up to floating point.
double bne_gap(const StageGame& stage, const StrategySlice& lambda);

}  // namespace cib
