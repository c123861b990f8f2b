#pragma once

#include <utility>
#include <vector>

#include "cib/belief.hpp"
#include "cib/game_spec.hpp"

namespace cib {

// All distributions over a k-point alphabet with coordinates in
// {0, 1/m, ..., 1}; point count is C(m+k-1, k-1). Points are ordered
// lexicographically by composition (first coordinate ascending).
struct SimplexGrid {
  int dim = 1;
  int resolution = 1;

  static SimplexGrid make(int dim, int resolution);
  long long size() const;
  std::vector<int> composition_of(long long idx) const;   // ints summing to resolution
  long long rank(const std::vector<int>& comp) const;
  std::vector<double> point(long long idx) const;

  // Barycentric weights on the Kuhn triangulation of the lattice; exact for
  // affine functions and a single unit weight at lattice points.
  std::vector<std::pair<long long, double>> barycentric(const std::vector<double>& w) const;
  long long nearest(const std::vector<double>& w) const;
};

// How the pihat block of the grid is laid out at one time step.
//   Crossed: (pi, pihat) fully crossed — the general case.
//   Aliased: pihat == pi on the whole domain (t = 1 always; every t for
//            Game-M style dynamics where psi* = psihat propagates).
//   Dropped: tables do not depend on pihat (the last stage; V_{T+1} = 0 makes
//            it fall out) — stored states carry pihat := pi.
enum class PiHatMode { Crossed, Aliased, Dropped };

const char* to_string(PiHatMode m);
PiHatMode pihat_mode_from_string(const std::string& s);

struct GridLayout {
  int time = 1;
  int num_pub = 1;
  int resolution = 1;
  PiHatMode mode = PiHatMode::Crossed;
  std::vector<SimplexGrid> agent_grids;  // per agent (shared by pi and pihat blocks)

  long long cells() const;
  CIBState state_of(const GameSpec& spec, long long cell) const;
  // Interpolation stencil for a query state (weights sum to 1); `nearest`
  // collapses it to one cell. Dropped/Aliased layouts ignore the query's
  // pihat coordinates.
  std::vector<std::pair<long long, double>> stencil(const CIBState& b, bool nearest) const;
  long long nearest_cell(const CIBState& b) const;
  // Cell with agents 0 and 1 swapped (N == 2 symmetric sweeps).
  long long mirror_cell(long long cell) const;
};

// Grid for time t at resolution m. Throws Error{Budget} with the computed
// count when it exceeds the budget.
GridLayout make_belief_grid(const GameSpec& spec, int t, int m, PiHatMode mode,
                            long long budget = 2'000'000LL);

// Continuation-value interface used by the stage-game builder: V_{t+1}
// evaluated at (agent, next local state, next common-information state).
class ValueSource {
 public:
  virtual ~ValueSource() = default;
  virtual double eval(int n, int x, const CIBState& b) const = 0;
  virtual bool is_zero() const { return false; }
};

class ZeroValueSource : public ValueSource {
 public:
  double eval(int, int, const CIBState&) const override { return 0.0; }
  bool is_zero() const override { return true; }
};

}  // namespace cib
