#include "cib/bayes_oracle.hpp"

#include <numeric>

namespace cib {

std::vector<std::vector<int>> TrajectoryDist::trajectory_of(long long idx) const {
  std::vector<std::vector<int>> traj(t, std::vector<int>(num_agents));
  for (int tau = t - 1; tau >= 0; --tau)
    for (int n = num_agents - 1; n >= 0; --n) {
      traj[tau][n] = static_cast<int>(idx % dims[tau][n]);
      idx /= dims[tau][n];
    }
  return traj;
}

long long TrajectoryDist::index_of(const std::vector<std::vector<int>>& traj) const {
  long long idx = 0;
  for (int tau = 0; tau < t; ++tau)
    for (int n = 0; n < num_agents; ++n) idx = idx * dims[tau][n] + traj[tau][n];
  return idx;
}

std::vector<double> TrajectoryDist::marginal(int tau, int n) const {
  std::vector<double> out(dims[tau - 1][n], 0.0);
  for (long long i = 0; i < size(); ++i) {
    if (prob[i] == 0.0) continue;
    out[trajectory_of(i)[tau - 1][n]] += prob[i];
  }
  return out;
}

std::vector<double> TrajectoryDist::agent_trajectory_marginal(int n) const {
  long long len = 1;
  for (int tau = 0; tau < t; ++tau) len *= dims[tau][n];
  std::vector<double> out(len, 0.0);
  for (long long i = 0; i < size(); ++i) {
    if (prob[i] == 0.0) continue;
    auto traj = trajectory_of(i);
    long long k = 0;
    for (int tau = 0; tau < t; ++tau) k = k * dims[tau][n] + traj[tau][n];
    out[k] += prob[i];
  }
  return out;
}

TrajectoryDist joint_bayes_oracle(const GameSpec& spec, const OracleQuery& query, long long budget) {
  const int t = query.t;
  const int N = spec.num_agents;
  if (t < 1 || t > spec.horizon)
    throw Error(Error::Kind::Validation, "oracle: time out of range");
  if (static_cast<int>(query.actions.size()) != t - 1 || static_cast<int>(query.observations.size()) != t - 1)
    throw Error(Error::Kind::Validation, "oracle: need exactly t-1 action and observation profiles");

  TrajectoryDist d;
  d.t = t;
  d.num_agents = N;
  d.dims.resize(t);
  long long total = 1;
  for (int tau = 1; tau <= t; ++tau) {
    d.dims[tau - 1].resize(N);
    for (int n = 0; n < N; ++n) {
      d.dims[tau - 1][n] = spec.nx(tau, n);
      total *= spec.nx(tau, n);
      if (total > budget)
        throw Error(Error::Kind::Budget,
                    "oracle: trajectory count exceeds budget " + std::to_string(budget));
    }
  }
  d.prob.assign(total, 0.0);

  std::vector<int> aj(t - 1);
  for (int tau = 1; tau < t; ++tau) aj[tau - 1] = spec.encode_actions(tau, query.actions[tau - 1]);

  double mass = 0.0;
  for (long long i = 0; i < total; ++i) {
    auto traj = d.trajectory_of(i);
    if (query.agent >= 0) {
      bool match = true;
      for (int tau = 0; tau < t; ++tau)
        if (traj[tau][query.agent] != query.own_trajectory[tau]) {
          match = false;
          break;
        }
      if (!match) continue;
    }
    double w = 1.0;
    for (int n = 0; n < N && w > 0; ++n) {
      w *= spec.initial_local[n][traj[0][n]];
      for (int tau = 1; tau < t && w > 0; ++tau) {
        int x = traj[tau - 1][n];
        if (!spec.is_admissible(tau, n, x, query.actions[tau - 1][n])) {
          w = 0.0;
          break;
        }
        w *= spec.q(tau, n, x, aj[tau - 1], query.observations[tau - 1][n]);
        w *= spec.p(tau, n, x, aj[tau - 1], traj[tau][n]);
      }
    }
    d.prob[i] = w;
    mass += w;
  }
  if (mass <= 0.0)
    throw Error(Error::Kind::Validation, "oracle: conditioning event has probability zero");
  for (double& v : d.prob) v /= mass;
  return d;
}

}  // namespace cib
