#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "cib/bayes_oracle.hpp"
#include "doctest.h"
#include "support/random_instances.hpp"

using namespace cib;
using cib::testing::random_spec;

TEST_CASE("no conditioning at t=1 returns the product prior") {
  GameSpec spec = random_spec(1);
  OracleQuery q;
  q.t = 1;
  TrajectoryDist d = joint_bayes_oracle(spec, q);
  for (long long i = 0; i < d.size(); ++i) {
    auto traj = d.trajectory_of(i);
    double want = spec.initial_local[0][traj[0][0]] * spec.initial_local[1][traj[0][1]];
    CHECK(d.prob[i] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("deterministic dynamics with perfect observations give a point mass") {
  GameSpec spec = random_spec(2);
  const long long AJ = spec.njoint_actions(1);
  for (int t = 1; t <= spec.horizon; ++t)
    for (int n = 0; n < 2; ++n)
      for (int x = 0; x < 2; ++x)
        for (int aj = 0; aj < AJ; ++aj) {
          // x' = x xor 1 deterministically, y reveals x
          for (int xp = 0; xp < 2; ++xp)
            spec.local_kernel[t - 1][n][(x * AJ + aj) * 2 + xp] = (xp == (x ^ 1)) ? 1.0 : 0.0;
          for (int y = 0; y < 2; ++y) spec.obs_kernel[t - 1][n][(x * AJ + aj) * 2 + y] = (y == x) ? 1.0 : 0.0;
        }
  spec.initial_local = {{0.5, 0.5}, {0.5, 0.5}};

  OracleQuery q;
  q.t = 3;
  q.actions = {{0, 0}, {0, 0}};
  q.observations = {{1, 0}, {0, 1}};  // x_1 = (1,0) revealed, then flipped
  TrajectoryDist d = joint_bayes_oracle(spec, q);
  long long support = 0;
  for (long long i = 0; i < d.size(); ++i)
    if (d.prob[i] > 0) ++support;
  CHECK(support == 1);
  auto traj = d.trajectory_of(
      std::distance(d.prob.begin(), std::max_element(d.prob.begin(), d.prob.end())));
  CHECK(traj[0] == std::vector<int>{1, 0});
  CHECK(traj[1] == std::vector<int>{0, 1});
  CHECK(traj[2] == std::vector<int>{1, 0});
}

TEST_CASE("per-agent per-time marginals factorize as a product") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    GameSpec spec = random_spec(seed);
    auto hist = cib::testing::sample_open_loop_history(spec, spec.horizon, seed + 77);
    OracleQuery q;
    q.t = spec.horizon;
    q.actions = hist.actions;
    q.observations = hist.observations;
    TrajectoryDist d = joint_bayes_oracle(spec, q);
    // joint probability of each trajectory equals the product of per-agent
    // trajectory marginals
    for (long long i = 0; i < d.size(); ++i) {
      auto traj = d.trajectory_of(i);
      double prod = 1.0;
      for (int n = 0; n < spec.num_agents; ++n) {
        auto am = d.agent_trajectory_marginal(n);
        long long k = 0;
        for (int tau = 0; tau < d.t; ++tau) k = k * spec.nx(tau + 1, n) + traj[tau][n];
        prod *= am[k];
      }
      CHECK(std::abs(d.prob[i] - prod) <= 1e-12);
    }
  }
}

TEST_CASE("own-trajectory conditioning pins the own coordinates") {
  GameSpec spec = random_spec(9);
  auto hist = cib::testing::sample_open_loop_history(spec, 3, 123);
  OracleQuery q;
  q.t = 3;
  q.actions = hist.actions;
  q.observations = hist.observations;
  q.agent = 0;
  q.own_trajectory = {1, 0, 1};
  TrajectoryDist d = joint_bayes_oracle(spec, q);
  for (long long i = 0; i < d.size(); ++i) {
    if (d.prob[i] == 0) continue;
    auto traj = d.trajectory_of(i);
    CHECK(traj[0][0] == 1);
    CHECK(traj[1][0] == 0);
    CHECK(traj[2][0] == 1);
  }
}

TEST_CASE("enumeration budget and impossible conditioning raise") {
  GameSpec spec = random_spec(4);
  OracleQuery q;
  q.t = 3;
  q.actions = {{0, 0}, {0, 0}};
  q.observations = {{0, 0}, {0, 0}};
  CHECK_THROWS_AS(joint_bayes_oracle(spec, q, /*budget=*/8), Error);

  // impossible: observation 0 never emitted
  const long long AJ = spec.njoint_actions(1);
  for (int x = 0; x < 2; ++x)
    for (int aj = 0; aj < AJ; ++aj) {
      spec.obs_kernel[0][0][(x * AJ + aj) * 2 + 0] = 0.0;
      spec.obs_kernel[0][0][(x * AJ + aj) * 2 + 1] = 1.0;
    }
  OracleQuery q2;
  q2.t = 2;
  q2.actions = {{0, 0}};
  q2.observations = {{0, 0}};
  CHECK_THROWS_WITH_AS(joint_bayes_oracle(spec, q2), doctest::Contains("probability zero"), Error);
}
