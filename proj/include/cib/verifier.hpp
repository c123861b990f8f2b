#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "cib/bayes_oracle.hpp"
#include "cib/dp_solver.hpp"
#include "cib/game_spec.hpp"

namespace cib {

// A CIB strategy profile together with an update rule, viewed as functions of
// (t, b). The verifier treats these as the object under test and recomputes
// everything else from the game primitive.
class CibPolicy {
 public:
  virtual ~CibPolicy() = default;
  virtual StrategySlice lambda_at(int t, const CIBState& b) const = 0;
  virtual UpdateSlice psi_at(int t, const CIBState& b) const = 0;
};

// Bundle-backed policy: the stored slices at the cell containing b (nearest
// grid cell, exact tree node). Snapping the pair jointly preserves
// per-cell consistency, so the snapped policy is itself a valid
// (strategy, consistent-update) pair.
class BundlePolicy : public CibPolicy {
 public:
  BundlePolicy(const GameSpec& spec, const EquilibriumBundle& bundle) : spec_(&spec), bundle_(&bundle) {}
  StrategySlice lambda_at(int t, const CIBState& b) const override;
  UpdateSlice psi_at(int t, const CIBState& b) const override;

 private:
  const GameSpec* spec_;
  const EquilibriumBundle* bundle_;
};

// b-independent strategy (one slice per t) with the consistent update derived
// on demand; the brute-force checks use these.
class ConstantPolicy : public CibPolicy {
 public:
  ConstantPolicy(const GameSpec& spec, std::vector<StrategySlice> slices)
      : spec_(&spec), slices_(std::move(slices)) {}
  StrategySlice lambda_at(int t, const CIBState&) const override { return slices_[t - 1]; }
  UpdateSlice psi_at(int t, const CIBState& b) const override {
    return build_update_slice(*spec_, slices_[t - 1], b);
  }

 private:
  const GameSpec* spec_;
  std::vector<StrategySlice> slices_;
};

struct CommonHistory {
  std::vector<int> pub;                   // c_1..c_t
  std::vector<std::vector<int>> actions;  // a_1..a_{t-1} (per-agent ids)
  std::vector<std::vector<int>> obs;      // y_1..y_{t-1}
  int t() const { return static_cast<int>(pub.size()); }
};

// CIB states b_1..b_t along a common history: strategic beliefs by the
// policy's update rule, signaling-free beliefs by the open-loop recursion.
std::vector<CIBState> cib_states_along(const GameSpec& spec, const CibPolicy& policy,
                                       const CommonHistory& hc);

// The belief system generated by (lambda, psi): per agent, a distribution
// over that agent's local-state trajectories given the common history.
// Agent n's belief over joint trajectories is the own-trajectory indicator
// times the product over other agents. sf_traj is the signaling-free
// counterpart (open-loop weights), used for the zero-probability branch and
// the support checks.
struct FullBelief {
  int t = 1;
  std::vector<std::vector<double>> traj;     // [k][own-trajectory index]
  std::vector<std::vector<double>> sf_traj;  // [k][own-trajectory index]

  long long traj_count(const GameSpec& spec, int k) const;
  static long long traj_index(const GameSpec& spec, int k, const std::vector<int>& own);
};

FullBelief construct_full_belief(const GameSpec& spec, const CibPolicy& policy,
                                 const CommonHistory& hc, long long budget = 10'000'000LL);

// One agent's behavioral strategy as a function of (t, own trajectory so far,
// common history); used to express unilateral deviations.
using BehavioralStrategy =
    std::function<std::vector<double>(int t, const std::vector<int>& own_traj, const CommonHistory& hc)>;

struct CheckReport {
  double max_residual = 0.0;
  long long histories_checked = 0;
  long long trajectories_processed = 0;
  bool budget_exhausted = false;
  std::vector<std::string> notes;
};

// Brute-force consistency certification: enumerates every positive-probability
// common history, checks the marginal identity of the constructed
// belief, compares agent posteriors against exact joint-trajectory Bayes, and
// checks the signaling-free support condition via the oracle.
CheckReport check_consistency(const GameSpec& spec, const CibPolicy& policy,
                              long long budget = 1'000'000LL);

// Conditional-independence certification: for each sampled unilateral
// deviation of `agent`, the exact posterior over joint trajectories at every
// positive-probability private history must factorize as the own-trajectory
// indicator times the deviation-independent product belief.
CheckReport check_conditional_independence(const GameSpec& spec, const CibPolicy& policy, int agent,
                                           const std::vector<BehavioralStrategy>& deviations,
                                           long long budget = 1'000'000LL);

// Seeded random behavioral strategy (interior, admissibility-respecting).
BehavioralStrategy random_behavioral_strategy(const GameSpec& spec, int agent, std::uint64_t seed);

// Finite-horizon MDP faced by one deviating agent when everyone else follows
// the bundle: state (x^n, stored cell), transitions induced by the others'
// slices and the stored update rule, continuation values interpolated in the
// bundle's own mode. dev = optimal deviation values, lam = the agent's value
// under the bundle strategy recomputed by the same recursion.
struct DeviationResult {
  std::vector<std::vector<std::vector<double>>> dev;  // [t-1][cell][x]
  std::vector<std::vector<std::vector<double>>> lam;  // [t-1][cell][x]
};
DeviationResult deviation_mdp_best_response(const GameSpec& spec, const EquilibriumBundle& bundle,
                                            int agent);

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;
};
// Monte-Carlo rollout of the bundle policy from (x^n = x, b = the stored cell
// state), sampling the exact kernels; beliefs evolve by the stored slices.
McEstimate rollout_value(const GameSpec& spec, const EquilibriumBundle& bundle, int agent, int x,
                         long long cell, long long samples, std::uint64_t seed);

struct VerifyTolerances {
  double eps = 1e-4;              // deviation gap at on-path cells; recomputed BNE gap everywhere
  double consistency_tol = 1e-9;  // recomputed update-rule consistency residual
  long long mc_samples = 100000;  // 0 disables the rollout check
  std::uint64_t seed = 1;
};

struct VerifyReport {
  bool pass = false;
  double max_consistency = 0.0;
  double max_bne_gap = 0.0;
  double max_dev_gap_onpath = 0.0;
  double max_dev_gap_all = 0.0;
  double max_value_recompute_err = 0.0;
  double max_mc_z = 0.0;
  bool mc_gated = false;
  long long cells_checked = 0;
  long long onpath_cells = 0;
  std::vector<std::string> failures;

  struct CellRow {
    int t = 0;
    long long cell = 0;
    double consistency = 0.0;
    double bne_gap = 0.0;
    double dev_gap = 0.0;
    bool onpath = false;
    bool failed_cell = false;
  };
  std::vector<CellRow> rows;

  struct McRow {
    int t = 0;
    long long cell = 0;
    int agent = 0;
    int x = 0;
    double value = 0.0, mean = 0.0, se = 0.0, z = 0.0;
  };
  std::vector<McRow> mc;

  std::string to_text() const;
  void write_gap_csv(const std::string& path) const;
};

// Aggregate certification against the dynamic-program conditions: recomputed
// per-cell consistency residuals and BNE gaps (all cells), per-agent
// deviation-MDP gaps (epsilon-gated on the on-path set), value recomputation,
// and rollout agreement (gated for exact/nearest bundles, reported
// otherwise). The verifier reads only (spec, stored slices, stored values).
VerifyReport verify_cib_pbe(const GameSpec& spec, const EquilibriumBundle& bundle,
                            const VerifyTolerances& tol);

}  // namespace cib
