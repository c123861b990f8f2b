#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "cib/game_m.hpp"
#include "cib/mac.hpp"
#include "cib/verifier.hpp"
#include "doctest.h"
#include "support/random_instances.hpp"

using namespace cib;

namespace {

DpConfig mac_config(int m) {
  DpConfig cfg;
  cfg.grid_m = m;
  cfg.stage.symmetric_mode = true;
  cfg.stage.seed = 3;
  cfg.threads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("constructed belief at the first step is the product prior") {
  GameSpec spec = cib::testing::random_spec(1);
  ConstantPolicy policy(spec, cib::testing::random_cib_strategy(spec, 2));
  CommonHistory hc;
  hc.pub = {0};
  FullBelief fb = construct_full_belief(spec, policy, hc);
  for (int k = 0; k < 2; ++k)
    for (int x = 0; x < 2; ++x) CHECK(fb.traj[k][x] == doctest::Approx(spec.initial_local[k][x]));
}

TEST_CASE("on-path full belief matches the bundle's stored stage beliefs") {
  MacParams params{0.5, 2.0, 2};
  GameSpec spec = mac_spec(params);
  EquilibriumBundle bundle = backward_induct(spec, mac_config(10));
  BundlePolicy policy(spec, bundle);
  // follow the lone-transmission history a_1 = (1, 0)
  CommonHistory hc;
  hc.pub = {0, 0};
  hc.actions = {{1, 0}};
  hc.obs = {{0, 0}};
  FullBelief fb = construct_full_belief(spec, policy, hc);
  std::vector<CIBState> states = cib_states_along(spec, policy, hc);
  for (int k = 0; k < 2; ++k) {
    std::vector<double> marg(2, 0.0);
    for (size_t p = 0; p < fb.traj[k].size(); ++p) marg[p % 2] += fb.traj[k][p];
    for (int x = 0; x < 2; ++x)
      CHECK(marg[x] == doctest::Approx(states.back().pi.marginals[k][x]).epsilon(1e-12));
  }
  // agent 1's belief that agent 2 is full equals the closed-form silence update
  double beta = bundle.stages[0].cells[bundle.stages[0].locate(states[0])].lambda.probs[1][1][1];
  double want = mac_belief_update_closed_form(0.5, beta, 0, 1, params);
  std::vector<double> marg2(2, 0.0);
  for (size_t p = 0; p < fb.traj[1].size(); ++p) marg2[p % 2] += fb.traj[1][p];
  CHECK(marg2[1] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("off-path histories spread the update value uniformly over the open-loop support") {
  GameSpec spec = cib::testing::random_spec(44);
  // agent 0 never plays action 1 anywhere
  auto slices = cib::testing::random_cib_strategy(spec, 7);
  for (auto& slice : slices)
    for (int x = 0; x < 2; ++x) {
      slice.probs[0][x][0] = 1.0;
      slice.probs[0][x][1] = 0.0;
    }
  ConstantPolicy policy(spec, slices);
  CommonHistory hc;
  hc.pub = {0, 0};
  hc.actions = {{1, 0}};  // observing a_0 = 1 is off-path
  hc.obs = {{0, 0}};
  FullBelief fb = construct_full_belief(spec, policy, hc);
  std::vector<CIBState> states = cib_states_along(spec, policy, hc);
  // agent 0's trajectory belief: gamma(x') spread uniformly over sf-supported
  // predecessors at each x'
  for (int xp = 0; xp < 2; ++xp) {
    double gamma = states.back().pi.marginals[0][xp];
    long long supp = 0;
    for (int x0 = 0; x0 < 2; ++x0)
      if (fb.sf_traj[0][x0 * 2 + xp] != 0.0) ++supp;
    for (int x0 = 0; x0 < 2; ++x0) {
      double mu = fb.traj[0][x0 * 2 + xp];
      if (fb.sf_traj[0][x0 * 2 + xp] == 0.0)
        CHECK(mu == 0.0);
      else
        CHECK(mu == doctest::Approx(gamma / supp).epsilon(1e-12));
    }
  }
}

TEST_CASE("consistency check passes on random policies and the mac bundle") {
  for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
    GameSpec spec = cib::testing::random_spec(seed);
    ConstantPolicy policy(spec, cib::testing::random_cib_strategy(spec, seed + 70));
    CheckReport rep = check_consistency(spec, policy);
    CHECK(rep.max_residual <= 1e-10);
    CHECK(rep.histories_checked > 0);
  }
  MacParams params{0.5, 2.0, 2};
  GameSpec spec = mac_spec(params);
  EquilibriumBundle bundle = backward_induct(spec, mac_config(10));
  BundlePolicy policy(spec, bundle);
  CheckReport rep = check_consistency(spec, policy);
  CHECK(rep.max_residual <= 1e-9);
}

TEST_CASE("pooled tree bundles reduce consistency to signaling-free propagation") {
  GameMSizes sizes;
  sizes.horizon = 3;
  GameSpec spec = game_m_generate(77, sizes);
  EquilibriumBundle bundle = game_m_solve(spec);
  BundlePolicy policy(spec, bundle);
  CheckReport rep = check_consistency(spec, policy, 4'000'000LL);
  CHECK(rep.max_residual <= 1e-12);
  CHECK(rep.histories_checked > 0);
}

TEST_CASE("a corrupted update rule is flagged and localized") {
  GameSpec spec = cib::testing::random_spec(21);
  auto slices = cib::testing::random_cib_strategy(spec, 5);
  ConstantPolicy clean(spec, slices);

  // corrupt psi at (t=1, y=0, a=(0,0)) for agent 0
  struct Corrupted : CibPolicy {
    const GameSpec* spec;
    const ConstantPolicy* base;
    StrategySlice lambda_at(int t, const CIBState& b) const override { return base->lambda_at(t, b); }
    UpdateSlice psi_at(int t, const CIBState& b) const override {
      UpdateSlice u = base->psi_at(t, b);
      if (t == 1) {
        u.next[0][0][0] = {0.99, 0.01};
      }
      return u;
    }
  } corrupted;
  corrupted.spec = &spec;
  corrupted.base = &clean;

  CheckReport clean_rep = check_consistency(spec, clean);
  CheckReport bad_rep = check_consistency(spec, corrupted);
  CHECK(clean_rep.max_residual <= 1e-10);
  CHECK(bad_rep.max_residual > 1e-3);

  // localization: histories that avoid the corrupted cell are unaffected
  CommonHistory other;
  other.pub = {0, 0};
  other.actions = {{1, 1}};
  other.obs = {{0, 0}};
  FullBelief fb_clean = construct_full_belief(spec, clean, other);
  FullBelief fb_bad = construct_full_belief(spec, corrupted, other);
  for (int k = 0; k < 2; ++k)
    for (size_t i = 0; i < fb_clean.traj[k].size(); ++i)
      CHECK(fb_clean.traj[k][i] == doctest::Approx(fb_bad.traj[k][i]).epsilon(1e-14));
}

TEST_CASE("conditional independence holds under unilateral deviations") {
  // no deviation (the policy itself)
  GameSpec spec = cib::testing::random_spec(31);
  auto slices = cib::testing::random_cib_strategy(spec, 8);
  ConstantPolicy policy(spec, slices);
  {
    std::vector<BehavioralStrategy> devs;
    devs.push_back([&slices, &spec](int t, const std::vector<int>& own, const CommonHistory&) {
      std::vector<double> d(spec.na(t, 0));
      for (int a = 0; a < spec.na(t, 0); ++a) d[a] = slices[t - 1].probs[0][own.back()][a];
      return d;
    });
    CheckReport rep = check_conditional_independence(spec, policy, 0, devs);
    CHECK(rep.max_residual <= 1e-10);
  }
  // a fixed pure open-loop deviation on the mac game
  {
    MacParams params{0.5, 2.0, 2};
    GameSpec mac = mac_spec(params);
    EquilibriumBundle bundle = backward_induct(mac, mac_config(10));
    BundlePolicy bpolicy(mac, bundle);
    std::vector<BehavioralStrategy> devs;
    devs.push_back([&mac](int t, const std::vector<int>& own, const CommonHistory&) {
      std::vector<double> d(2, 0.0);
      d[mac.is_admissible(t, 0, own.back(), 1) ? 1 : 0] = 1.0;  // transmit whenever possible
      return d;
    });
    CheckReport rep = check_conditional_independence(mac, bpolicy, 0, devs);
    CHECK(rep.max_residual <= 1e-10);
  }
  // random behavioral deviations on a random instance
  {
    std::vector<BehavioralStrategy> devs;
    for (std::uint64_t s = 1; s <= 5; ++s) devs.push_back(random_behavioral_strategy(spec, 1, s));
    CheckReport rep = check_conditional_independence(spec, policy, 1, devs);
    CHECK(rep.max_residual <= 1e-10);
  }
}

TEST_CASE("horizon-one deviation values equal the stage best response") {
  MacParams params{0.5, 2.0, 1};
  GameSpec spec = mac_spec(params);
  EquilibriumBundle bundle = backward_induct(spec, mac_config(6));
  for (int n = 0; n < 2; ++n) {
    DeviationResult dev = deviation_mdp_best_response(spec, bundle, n);
    for (long long cell = 0; cell < static_cast<long long>(bundle.stages[0].cells.size()); ++cell) {
      const CellRecord& rec = bundle.stages[0].cells[cell];
      ZeroValueSource zero;
      UpdateSlice sf = build_signaling_free_slice(spec, rec.state.pihat);
      StageGame g = build_stage_game(spec, zero, rec.psi, sf, rec.state);
      auto br = best_response(g, n, rec.lambda);
      for (int x = 0; x < 2; ++x) {
        CHECK(dev.dev[0][cell][x] == doctest::Approx(br.value[x]).epsilon(1e-12));
        CHECK(dev.dev[0][cell][x] - dev.lam[0][cell][x] >= -1e-12);
      }
    }
  }
}

TEST_CASE("single-agent deviation values match exhaustive policy search on a revealing chain") {
  // one agent, deterministic permutation dynamics, state revealed after each
  // step: beliefs stay on simplex corners, so the gridded MDP is exact.
  cib::testing::RandomSpecOptions opt;
  opt.num_agents = 1;
  opt.horizon = 2;
  opt.num_obs = 2;
  GameSpec spec = cib::testing::random_spec(81, opt);
  const long long AJ = spec.njoint_actions(1);
  for (int t = 1; t <= 2; ++t)
    for (int x = 0; x < 2; ++x)
      for (int aj = 0; aj < AJ; ++aj) {
        // action 0 keeps the state, action 1 flips it; y reveals the state
        int target = (aj == 0) ? x : 1 - x;
        for (int xp = 0; xp < 2; ++xp)
          spec.local_kernel[t - 1][0][(x * AJ + aj) * 2 + xp] = (xp == target) ? 1.0 : 0.0;
        for (int y = 0; y < 2; ++y)
          spec.obs_kernel[t - 1][0][(x * AJ + aj) * 2 + y] = (y == x) ? 1.0 : 0.0;
      }
  spec.initial_local = {{0.25, 0.75}};
  validate_spec_or_throw(spec);

  DpConfig cfg;
  cfg.grid_m = 2;
  EquilibriumBundle bundle = backward_induct(spec, cfg);
  REQUIRE(bundle.complete);
  DeviationResult dev = deviation_mdp_best_response(spec, bundle, 0);

  // exhaustive search over pure Markov policies f(t, x) -> a
  ReachSet reach = reachable_on_path(spec, bundle);
  long long start = bundle.stages[0].locate(reach.points[0][0]);
  for (int x1 = 0; x1 < 2; ++x1) {
    double best = -1e300;
    for (int f11 = 0; f11 < 2; ++f11)
      for (int f20 = 0; f20 < 2; ++f20)
        for (int f21 = 0; f21 < 2; ++f21) {
          double total = spec.phi(1, 0, 0, x1, f11);
          int x2 = (f11 == 0) ? x1 : 1 - x1;
          total += spec.phi(2, 0, 0, x2, x2 == 0 ? f20 : f21);
          best = std::max(best, total);
        }
    CHECK(dev.dev[0][start][x1] == doctest::Approx(best).epsilon(1e-9));
    // the solver itself is the lone optimizer, so its value matches too
    CHECK(bundle.stages[0].cells[start].value[0][x1] == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("verify passes on a sound mac bundle and fails after fault injection") {
  MacParams params{0.5, 2.0, 2};
  GameSpec spec = mac_spec(params);
  EquilibriumBundle bundle = backward_induct(spec, mac_config(10));
  VerifyTolerances tol;
  tol.eps = 1e-4;
  tol.mc_samples = 0;
  VerifyReport good = verify_cib_pbe(spec, bundle, tol);
  CHECK(good.pass);
  CHECK(good.max_dev_gap_onpath <= 1e-4);

  // corrupt the strict last-stage equilibrium at pi = (0, 0) with uniform
  // mixing; values stay consistent with the corrupted slice so only the
  // equilibrium condition breaks
  StageTable& t2 = bundle.stages[1];
  CIBState corner;
  corner.time = 2;
  corner.pub = 0;
  corner.pi.time = 2;
  corner.pi.marginals = {{1.0, 0.0}, {1.0, 0.0}};
  corner.pihat = corner.pi;
  long long cell = t2.locate(corner);
  CellRecord& rec = t2.cells[cell];
  rec.lambda.probs[0][1] = {0.5, 0.5};
  rec.lambda.probs[1][1] = {0.5, 0.5};
  rec.psi = build_update_slice(spec, rec.lambda, rec.state);
  ZeroValueSource zero;
  rec.value = value_update(spec, zero, rec.lambda, rec.psi, rec.state);

  VerifyReport bad = verify_cib_pbe(spec, bundle, tol);
  CHECK(!bad.pass);
  // the positive gap is localized at the corrupted cell
  double worst = 0;
  int worst_t = 0;
  long long worst_cell = -1;
  for (const auto& row : bad.rows)
    if (row.bne_gap > worst) {
      worst = row.bne_gap;
      worst_t = row.t;
      worst_cell = row.cell;
    }
  CHECK(worst > 1e-3);
  CHECK(worst_t == 2);
  CHECK(worst_cell == cell);
}

TEST_CASE("verify reports budget-style failures for incomplete bundles on the path") {
  MacParams params{0.5, 2.0, 2};
  GameSpec spec = mac_spec(params);
  EquilibriumBundle bundle = backward_induct(spec, mac_config(6));
  ReachSet reach = reachable_on_path(spec, bundle);
  bundle.stages[0].cells[reach.cells[0][0]].failed = true;
  VerifyTolerances tol;
  tol.mc_samples = 0;
  VerifyReport rep = verify_cib_pbe(spec, bundle, tol);
  CHECK(!rep.pass);
  bool mentioned = false;
  for (const auto& f : rep.failures)
    if (f.find("reachable") != std::string::npos) mentioned = true;
  CHECK(mentioned);
}
