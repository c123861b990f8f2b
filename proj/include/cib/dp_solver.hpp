#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cib/belief.hpp"
#include "cib/belief_grid.hpp"
#include "cib/game_spec.hpp"
#include "cib/stage_solver.hpp"

namespace cib {

enum class DpMode { Grid, Tree };

struct DpConfig {
  SolverConfig stage;
  int grid_m = 20;
  DpMode mode = DpMode::Grid;
  PiHatMode interior_mode = PiHatMode::Crossed;  // layout for 1 < t < T
  bool interp_nearest = false;                   // value_eval mode tag
  long long grid_budget = 2'000'000LL;
  int threads = 0;  // 0 = hardware concurrency
};

struct CellRecord {
  CIBState state;
  StrategySlice lambda;
  UpdateSlice psi;
  std::vector<std::vector<double>> value;  // [n][x]
  double gap = 0.0;
  double consistency = 0.0;
  bool failed = false;
  std::string method;
  std::vector<StrategySlice> all_equilibria;  // enumerate mode only
};

struct StageTable {
  int time = 1;
  DpMode mode = DpMode::Grid;
  GridLayout layout;               // grid mode only
  std::vector<CellRecord> cells;   // grid: layout order; tree: node list

  // Cell containing / matching a query state: grid snaps to the nearest
  // cell, tree requires an exact node match (throws otherwise).
  long long locate(const CIBState& b) const;
};

struct EquilibriumBundle {
  std::uint64_t spec_fingerprint = 0;
  DpConfig config;
  std::vector<StageTable> stages;  // [t-1]
  bool complete = true;
  double worst_gap = 0.0;
  double worst_consistency = 0.0;

  const CellRecord& at(int t, long long cell) const { return stages[t - 1].cells[cell]; }
};

// V_t tables of one bundle stage as a continuation source for stage t-1.
// Grid tables interpolate (barycentric, or nearest when the bundle says so);
// tree tables look nodes up exactly.
class TableValueSource : public ValueSource {
 public:
  TableValueSource(const StageTable& table, bool nearest) : table_(&table), nearest_(nearest) {}
  double eval(int n, int x, const CIBState& b) const override;

 private:
  const StageTable* table_;
  bool nearest_;
};

// Exact expectation of the stage payoff tensor under lambda, conditioned on
// own type: the value-update map.
std::vector<std::vector<double>> value_update(const GameSpec& spec, const ValueSource& vnext,
                                              const StrategySlice& lambda, const UpdateSlice& psi,
                                              const CIBState& b);

// Algorithm: backward over t = T..1, solving every grid cell. The last
// stage's tables are pihat-invariant (layout Dropped), t = 1 is aliased, and
// interior stages follow config.interior_mode. In symmetric mode (two
// symmetric agents) only canonical cells are solved and mirrors are filled by
// agent relabeling, which makes the sweep exactly relabel-equivariant.
// Failed cells are recorded and the sweep continues.
EquilibriumBundle backward_induct(const GameSpec& spec, const DpConfig& config);

void save_bundle(const EquilibriumBundle& bundle, const GameSpec& spec, const std::string& dir);
EquilibriumBundle load_bundle(const std::string& dir, const GameSpec& spec);

// Forward reachability from the initial condition under the stored slices
// (snapped to cells): the exact belief points reached with positive
// probability and, per stage, the grid cells their interpolation stencils
// touch. This is the certified "on-path" set.
struct ReachSet {
  std::vector<std::vector<CIBState>> points;      // per t
  std::vector<std::vector<long long>> cells;      // per t, sorted unique
};
ReachSet reachable_on_path(const GameSpec& spec, const EquilibriumBundle& bundle,
                           long long max_points = 200000);

}  // namespace cib
