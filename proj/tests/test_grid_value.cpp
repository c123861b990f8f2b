#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "cib/belief_grid.hpp"
#include "cib/dp_solver.hpp"
#include "cib/rng.hpp"
#include "doctest.h"
#include "support/random_instances.hpp"

using namespace cib;

TEST_CASE("simplex grid point counts follow stars and bars") {
  CHECK(SimplexGrid::make(2, 2).size() == 3);   // {0, .5, 1}
  CHECK(SimplexGrid::make(3, 2).size() == 6);   // C(4,2)
  CHECK(SimplexGrid::make(2, 1).size() == 2);   // corners only
  CHECK(SimplexGrid::make(4, 3).size() == 20);  // C(6,3)
  CHECK(SimplexGrid::make(2, 100).size() == 101);
}

TEST_CASE("composition rank/unrank round trip") {
  for (int dim : {2, 3, 4})
    for (int m : {1, 2, 5}) {
      SimplexGrid g = SimplexGrid::make(dim, m);
      for (long long i = 0; i < g.size(); ++i) {
        auto comp = g.composition_of(i);
        int total = 0;
        for (int c : comp) total += c;
        CHECK(total == m);
        CHECK(g.rank(comp) == i);
      }
    }
}

TEST_CASE("barycentric weights at a grid point are a single unit weight") {
  for (int dim : {2, 3}) {
    SimplexGrid g = SimplexGrid::make(dim, 4);
    for (long long i = 0; i < g.size(); ++i) {
      auto st = g.barycentric(g.point(i));
      REQUIRE(st.size() == 1);
      CHECK(st[0].first == i);
      CHECK(st[0].second == 1.0);
    }
  }
}

TEST_CASE("barycentric interpolation reproduces linear functions") {
  Rng rng(5);
  for (int dim : {2, 3, 4}) {
    SimplexGrid g = SimplexGrid::make(dim, 5);
    // linear function f(w) = <coef, w>
    std::vector<double> coef(dim);
    for (auto& c : coef) c = rng.uniform(-2, 2);
    std::vector<double> table(g.size());
    for (long long i = 0; i < g.size(); ++i) {
      auto w = g.point(i);
      double v = 0;
      for (int k = 0; k < dim; ++k) v += coef[k] * w[k];
      table[i] = v;
    }
    for (int trial = 0; trial < 200; ++trial) {
      auto w = rng.simplex_point(dim);
      auto st = g.barycentric(w);
      double wsum = 0, interp = 0;
      for (auto [idx, wt] : st) {
        CHECK(wt >= 0.0);
        wsum += wt;
        interp += wt * table[idx];
      }
      CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
      double want = 0;
      for (int k = 0; k < dim; ++k) want += coef[k] * w[k];
      CHECK(interp == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("binary-state midpoint query averages the two cell corners") {
  SimplexGrid g = SimplexGrid::make(2, 10);
  std::vector<double> w = {1.0 - 0.45, 0.45};  // midpoint of [0.4, 0.5]
  auto st = g.barycentric(w);
  REQUIRE(st.size() == 2);
  double w0 = 0, w1 = 0;
  for (auto [idx, wt] : st) {
    auto comp = g.composition_of(idx);
    if (comp[1] == 4) w0 = wt;
    if (comp[1] == 5) w1 = wt;
  }
  CHECK(w0 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w1 == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("nearest-neighbor snaps to the closest lattice point") {
  SimplexGrid g = SimplexGrid::make(2, 10);
  // 0.04 away from the corner 0.0 (in units of 1/m: 0.4 of a cell)
  std::vector<double> w = {0.96, 0.04};
  long long idx = g.nearest(w);
  CHECK(g.composition_of(idx)[1] == 0);
  std::vector<double> w2 = {0.34, 0.66};
  CHECK(g.composition_of(g.nearest(w2))[1] == 7);
}

TEST_CASE("grid layouts enumerate cells and respect budgets") {
  GameSpec spec = cib::testing::random_spec(3);
  GridLayout crossed = make_belief_grid(spec, 2, 2, PiHatMode::Crossed);
  CHECK(crossed.cells() == 1LL * 3 * 3 * 3 * 3);
  GridLayout aliased = make_belief_grid(spec, 1, 2, PiHatMode::Aliased);
  CHECK(aliased.cells() == 9);
  CHECK_THROWS_AS(make_belief_grid(spec, 2, 100, PiHatMode::Crossed, /*budget=*/1000), Error);
  // decoded states carry pihat == pi outside the crossed mode
  CIBState b = aliased.state_of(spec, 5);
  CHECK(b.pi.marginals == b.pihat.marginals);
}

TEST_CASE("mirror_cell swaps the two agents' coordinates") {
  GameSpec spec = cib::testing::random_spec(4);
  GridLayout layout = make_belief_grid(spec, 1, 3, PiHatMode::Crossed);
  for (long long cell : {0LL, 7LL, 23LL, layout.cells() - 1}) {
    long long m = layout.mirror_cell(cell);
    CHECK(layout.mirror_cell(m) == cell);
    CIBState a = layout.state_of(spec, cell);
    CIBState b = layout.state_of(spec, m);
    CHECK(a.pi.marginals[0] == b.pi.marginals[1]);
    CHECK(a.pi.marginals[1] == b.pi.marginals[0]);
    CHECK(a.pihat.marginals[0] == b.pihat.marginals[1]);
  }
}

TEST_CASE("table value source: exact at cells, linear off the lattice, nearest mode") {
  GameSpec spec = cib::testing::random_spec(6);
  StageTable table;
  table.time = 1;
  table.mode = DpMode::Grid;
  table.layout = make_belief_grid(spec, 1, 4, PiHatMode::Aliased);
  table.cells.resize(table.layout.cells());
  // value linear in the two pi coordinates
  for (long long cell = 0; cell < table.layout.cells(); ++cell) {
    CIBState b = table.layout.state_of(spec, cell);
    table.cells[cell].state = b;
    table.cells[cell].value = {{0.0, 0.0}, {0.0, 0.0}};
    for (int n = 0; n < 2; ++n)
      for (int x = 0; x < 2; ++x)
        table.cells[cell].value[n][x] =
            (n + 1) * b.pi.marginals[0][1] - 0.5 * (x + 1) * b.pi.marginals[1][1] + 0.25;
  }
  TableValueSource lin(table, /*nearest=*/false);
  // exact at a stored cell (bitwise)
  CIBState q = table.layout.state_of(spec, 7);
  CHECK(lin.eval(1, 0, q) == table.cells[7].value[1][0]);
  // linear reproduction off-grid
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    CIBState b;
    b.time = 1;
    b.pub = 0;
    b.pi.time = 1;
    b.pi.marginals = {rng.simplex_point(2), rng.simplex_point(2)};
    b.pihat = b.pi;
    double want = 2.0 * b.pi.marginals[0][1] - 0.5 * 1.0 * b.pi.marginals[1][1] + 0.25;
    CHECK(lin.eval(1, 0, b) == doctest::Approx(want).epsilon(1e-12));
  }
  // nearest mode returns the snapped cell's value
  TableValueSource nn(table, /*nearest=*/true);
  CIBState b;
  b.time = 1;
  b.pub = 0;
  b.pi.time = 1;
  b.pi.marginals = {{1.0 - 0.26, 0.26}, {1.0 - 0.01, 0.01}};  // snaps to (0.25, 0.0)
  b.pihat = b.pi;
  long long snapped = table.layout.nearest_cell(b);
  CHECK(nn.eval(0, 1, b) == table.cells[snapped].value[0][1]);
  CIBState s = table.layout.state_of(spec, snapped);
  CHECK(s.pi.marginals[0][1] == doctest::Approx(0.25));
  CHECK(s.pi.marginals[1][1] == doctest::Approx(0.0));
}
