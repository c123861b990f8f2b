#include "cib/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "cib/rng.hpp"
#include "cib/stage_game.hpp"

namespace cib {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int sample_index(const std::vector<double>& dist, Rng& rng) {
  double u = rng.next_double();
  double acc = 0.0;
  for (size_t i = 0; i < dist.size(); ++i) {
    acc += dist[i];
    if (u < acc) return static_cast<int>(i);
  }
  for (int i = static_cast<int>(dist.size()) - 1; i >= 0; --i)
    if (dist[i] > 0) return i;
  return 0;
}

}  // namespace

StrategySlice BundlePolicy::lambda_at(int t, const CIBState& b) const {
  const StageTable& table = bundle_->stages[t - 1];
  return table.cells[table.locate(b)].lambda;
}

UpdateSlice BundlePolicy::psi_at(int t, const CIBState& b) const {
  const StageTable& table = bundle_->stages[t - 1];
  return table.cells[table.locate(b)].psi;
}

std::vector<CIBState> cib_states_along(const GameSpec& spec, const CibPolicy& policy,
                                       const CommonHistory& hc) {
  std::vector<CIBState> out;
  CIBState b;
  b.time = 1;
  b.pub = hc.pub[0];
  b.pi = BeliefVector::prior_of(spec);
  b.pihat = b.pi;
  out.push_back(b);
  for (int tau = 1; tau < hc.t(); ++tau) {
    const CIBState& cur = out.back();
    UpdateSlice psi = policy.psi_at(tau, cur);
    const int aj = spec.encode_actions(tau, hc.actions[tau - 1]);
    CIBState next;
    next.time = tau + 1;
    next.pub = hc.pub[tau];
    next.pi.time = tau + 1;
    next.pihat.time = tau + 1;
    next.pi.marginals.resize(spec.num_agents);
    next.pihat.marginals.resize(spec.num_agents);
    for (int n = 0; n < spec.num_agents; ++n) {
      next.pi.marginals[n] = psi.next[n][hc.obs[tau - 1][n]][aj];
      next.pihat.marginals[n] = signaling_free_step_agent(spec, tau, n, cur.pihat.marginals[n],
                                                          hc.obs[tau - 1][n], aj, /*strict=*/false);
    }
    out.push_back(std::move(next));
  }
  return out;
}

long long FullBelief::traj_count(const GameSpec& spec, int k) const {
  long long c = 1;
  for (int tau = 1; tau <= t; ++tau) c *= spec.nx(tau, k);
  return c;
}

long long FullBelief::traj_index(const GameSpec& spec, int k, const std::vector<int>& own) {
  long long idx = 0;
  for (size_t tau = 0; tau < own.size(); ++tau) idx = idx * spec.nx(static_cast<int>(tau) + 1, k) + own[tau];
  return idx;
}

FullBelief construct_full_belief(const GameSpec& spec, const CibPolicy& policy,
                                 const CommonHistory& hc, long long budget) {
  const int t = hc.t();
  const int N = spec.num_agents;
  FullBelief fb;
  fb.t = t;
  fb.traj.resize(N);
  fb.sf_traj.resize(N);
  {
    long long total = 0;
    for (int k = 0; k < N; ++k) {
      long long c = 1;
      for (int tau = 1; tau <= t; ++tau) c *= spec.nx(tau, k);
      total += c;
      if (total > budget) throw Error(Error::Kind::Budget, "construct_full_belief: trajectory budget exceeded");
    }
  }
  for (int k = 0; k < N; ++k) {
    fb.traj[k] = spec.initial_local[k];
    fb.sf_traj[k] = spec.initial_local[k];
  }

  std::vector<CIBState> states = cib_states_along(spec, policy, hc);

  for (int tau = 1; tau < t; ++tau) {
    const CIBState& b = states[tau - 1];
    StrategySlice lambda = policy.lambda_at(tau, b);
    UpdateSlice psi = policy.psi_at(tau, b);
    const int aj = spec.encode_actions(tau, hc.actions[tau - 1]);
    for (int k = 0; k < N; ++k) {
      const int X = spec.nx(tau, k);
      const int XP = spec.nx_next(tau, k);
      const int yk = hc.obs[tau - 1][k];
      const int ak = hc.actions[tau - 1][k];
      const long long plen = static_cast<long long>(fb.traj[k].size());

      // signaling-free extension first (its support defines the fallback)
      std::vector<double> sf_next(plen * XP, 0.0);
      {
        double den = 0.0;
        std::vector<double> eta(X, 0.0);
        for (int x = 0; x < X; ++x) {
          if (!spec.is_admissible(tau, k, x, ak)) continue;
          eta[x] = spec.q(tau, k, x, aj, yk);
        }
        std::vector<double> marg(X, 0.0);
        for (long long p = 0; p < plen; ++p) marg[p % X] += fb.sf_traj[k][p];
        for (int x = 0; x < X; ++x) den += eta[x] * marg[x];
        if (den > 0.0) {
          for (long long p = 0; p < plen; ++p) {
            int x = static_cast<int>(p % X);
            double w = eta[x] * fb.sf_traj[k][p];
            if (w == 0.0) continue;
            for (int xp = 0; xp < XP; ++xp) sf_next[p * XP + xp] = spec.p(tau, k, x, aj, xp) * w / den;
          }
        } else {
          // open-loop-impossible continuation: admissibility-filtered pushforward
          double mass = 0.0;
          for (long long p = 0; p < plen; ++p) {
            int x = static_cast<int>(p % X);
            if (!spec.is_admissible(tau, k, x, ak) || fb.sf_traj[k][p] == 0.0) continue;
            mass += fb.sf_traj[k][p];
            for (int xp = 0; xp < XP; ++xp) sf_next[p * XP + xp] = spec.p(tau, k, x, aj, xp) * fb.sf_traj[k][p];
          }
          if (mass > 0.0)
            for (double& v : sf_next) v /= mass;
          else
            for (double& v : sf_next) v = 1.0 / static_cast<double>(sf_next.size());
        }
      }

      // strategy-consistent extension
      std::vector<double> next(plen * XP, 0.0);
      {
        std::vector<double> eta(X, 0.0);
        for (int x = 0; x < X; ++x) eta[x] = spec.q(tau, k, x, aj, yk) * lambda.probs[k][x][ak];
        std::vector<double> marg(X, 0.0);
        for (long long p = 0; p < plen; ++p) marg[p % X] += fb.traj[k][p];
        double den = 0.0;
        for (int x = 0; x < X; ++x) den += eta[x] * marg[x];
        if (den > 0.0) {
          for (long long p = 0; p < plen; ++p) {
            int x = static_cast<int>(p % X);
            double w = eta[x] * fb.traj[k][p];
            if (w == 0.0) continue;
            for (int xp = 0; xp < XP; ++xp) next[p * XP + xp] = spec.p(tau, k, x, aj, xp) * w / den;
          }
        } else {
          // spread the CIB update value uniformly over the signaling-free
          // support at each next local state
          const std::vector<double>& gamma = psi.next[k][yk][aj];
          for (int xp = 0; xp < XP; ++xp) {
            long long supp = 0;
            for (long long p = 0; p < plen; ++p)
              if (sf_next[p * XP + xp] != 0.0) ++supp;
            if (supp == 0) continue;
            for (long long p = 0; p < plen; ++p)
              if (sf_next[p * XP + xp] != 0.0) next[p * XP + xp] = gamma[xp] / static_cast<double>(supp);
          }
        }
      }
      fb.traj[k] = std::move(next);
      fb.sf_traj[k] = std::move(sf_next);
    }
  }
  return fb;
}

// ---------------------------------------------------------------------------
// Brute-force checks

namespace {

// Exact posterior over joint local-state trajectories given a common history,
// by raw enumeration (no product-form shortcuts). act_prob(k, tau, prefix, a)
// gives agent k's action probability at time tau after own trajectory
// `prefix` (1..tau).
using ActProb = std::function<double(int k, int tau, const std::vector<int>& prefix, int a)>;

TrajectoryDist joint_strategy_posterior(const GameSpec& spec, const CommonHistory& hc,
                                        const ActProb& act_prob, double* total_mass,
                                        long long* processed) {
  const int t = hc.t();
  const int N = spec.num_agents;
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
    }
  }
  d.prob.assign(total, 0.0);
  if (processed) *processed += total;

  std::vector<int> aj(t - 1);
  for (int tau = 1; tau < t; ++tau) aj[tau - 1] = spec.encode_actions(tau, hc.actions[tau - 1]);

  double mass = 0.0;
  std::vector<int> prefix;
  for (long long i = 0; i < total; ++i) {
    auto traj = d.trajectory_of(i);
    double w = 1.0;
    for (int n = 0; n < N && w > 0; ++n) {
      w *= spec.initial_local[n][traj[0][n]];
      prefix.clear();
      prefix.push_back(traj[0][n]);
      for (int tau = 1; tau < t && w > 0; ++tau) {
        int x = traj[tau - 1][n];
        int a = hc.actions[tau - 1][n];
        if (!spec.is_admissible(tau, n, x, a)) {
          w = 0.0;
          break;
        }
        w *= act_prob(n, tau, prefix, a);
        w *= spec.q(tau, n, x, aj[tau - 1], hc.obs[tau - 1][n]);
        w *= spec.p(tau, n, x, aj[tau - 1], traj[tau][n]);
        prefix.push_back(traj[tau][n]);
      }
    }
    d.prob[i] = w;
    mass += w;
  }
  if (total_mass) *total_mass = mass;
  if (mass > 0)
    for (double& v : d.prob) v /= mass;
  return d;
}

// act_prob bound to a concrete common history: b states precomputed once.
ActProb bind_policy_to_history(const GameSpec& spec, const CibPolicy& policy,
                               const CommonHistory& hc, std::vector<StrategySlice>& slices_out) {
  std::vector<CIBState> states = cib_states_along(spec, policy, hc);
  slices_out.clear();
  for (int tau = 1; tau <= hc.t(); ++tau) slices_out.push_back(policy.lambda_at(tau, states[tau - 1]));
  auto* slices = &slices_out;
  return [slices](int k, int tau, const std::vector<int>& prefix, int a) -> double {
    return (*slices)[tau - 1].probs[k][prefix[tau - 1]][a];
  };
}

}  // namespace

CheckReport check_consistency(const GameSpec& spec, const CibPolicy& policy, long long budget) {
  CheckReport rep;
  long long processed = 0;

  std::function<void(const CommonHistory&)> visit = [&](const CommonHistory& hc) {
    const int t = hc.t();
    std::vector<StrategySlice> slices;
    ActProb bound = bind_policy_to_history(spec, policy, hc, slices);

    double mass = 0.0;
    TrajectoryDist joint = joint_strategy_posterior(spec, hc, bound, &mass, &processed);
    if (mass <= 0.0) return;
    ++rep.histories_checked;

    FullBelief fb = construct_full_belief(spec, policy, hc);
    std::vector<CIBState> states = cib_states_along(spec, policy, hc);
    const CIBState& bt = states.back();

    // marginal identity: trajectory marginals of the constructed belief
    // must match the compressed stage belief
    for (int k = 0; k < spec.num_agents; ++k) {
      std::vector<double> marg(spec.nx(t, k), 0.0);
      const int X = spec.nx(t, k);
      for (size_t p = 0; p < fb.traj[k].size(); ++p) marg[p % X] += fb.traj[k][p];
      for (int x = 0; x < X; ++x)
        rep.max_residual = std::max(rep.max_residual, std::abs(marg[x] - bt.pi.marginals[k][x]));
    }

    // Exact-posterior factorization + signaling-free support condition.
    for (int n = 0; n < spec.num_agents; ++n) {
      const long long own_count = fb.traj_count(spec, n);
      for (long long o = 0; o < own_count; ++o) {
        // decode own trajectory o
        std::vector<int> own(t);
        long long rem = o;
        for (int tau = t; tau >= 1; --tau) {
          own[tau - 1] = static_cast<int>(rem % spec.nx(tau, n));
          rem /= spec.nx(tau, n);
        }
        // conditional mass of this private history
        double mass_o = 0.0;
        for (long long i = 0; i < joint.size(); ++i) {
          if (joint.prob[i] == 0.0) continue;
          auto traj = joint.trajectory_of(i);
          bool match = true;
          for (int tau = 0; tau < t; ++tau)
            if (traj[tau][n] != own[tau]) {
              match = false;
              break;
            }
          if (match) mass_o += joint.prob[i];
        }

        if (mass_o > 1e-15) {
          for (long long i = 0; i < joint.size(); ++i) {
            auto traj = joint.trajectory_of(i);
            bool match = true;
            for (int tau = 0; tau < t; ++tau)
              if (traj[tau][n] != own[tau]) {
                match = false;
                break;
              }
            if (!match) continue;
            double target = 1.0;
            for (int k = 0; k < spec.num_agents; ++k) {
              if (k == n) continue;
              std::vector<int> other(t);
              for (int tau = 0; tau < t; ++tau) other[tau] = traj[tau][k];
              target *= fb.traj[k][FullBelief::traj_index(spec, k, other)];
            }
            rep.max_residual = std::max(rep.max_residual, std::abs(joint.prob[i] / mass_o - target));
          }
        }

        // support condition: wherever the signaling-free belief vanishes, the
        // constructed belief must vanish too
        if (fb.sf_traj[n][o] > 0.0 && t > 1) {
          OracleQuery q;
          q.t = t;
          q.actions = hc.actions;
          q.observations = hc.obs;
          q.agent = n;
          q.own_trajectory = own;
          TrajectoryDist sf = joint_bayes_oracle(spec, q);
          processed += sf.size();
          for (long long i = 0; i < sf.size(); ++i) {
            if (sf.prob[i] != 0.0) continue;
            auto traj = sf.trajectory_of(i);
            bool match = true;
            for (int tau = 0; tau < t; ++tau)
              if (traj[tau][n] != own[tau]) {
                match = false;
                break;
              }
            if (!match) continue;
            double mu = 1.0;
            for (int k = 0; k < spec.num_agents; ++k) {
              if (k == n) continue;
              std::vector<int> other(t);
              for (int tau = 0; tau < t; ++tau) other[tau] = traj[tau][k];
              mu *= fb.traj[k][FullBelief::traj_index(spec, k, other)];
            }
            rep.max_residual = std::max(rep.max_residual, mu);
          }
        }
      }
    }
  };

  // Depth-first over histories positive under the policy measure; each
  // candidate extension binds the policy's slices to that history first.
  {
    const int T = spec.horizon;
    std::function<void(const CommonHistory&)> recurse = [&](const CommonHistory& hc) {
      if (processed > budget) {
        rep.budget_exhausted = true;
        return;
      }
      visit(hc);
      const int tau = hc.t();
      if (tau >= T) return;
      const long long AJ = spec.njoint_actions(tau);
      int YJ = 1;
      for (int n = 0; n < spec.num_agents; ++n) YJ *= spec.ny(tau, n);
      for (int aj = 0; aj < AJ && !rep.budget_exhausted; ++aj) {
        auto a = spec.decode_actions(tau, aj);
        for (int yj = 0; yj < YJ && !rep.budget_exhausted; ++yj) {
          std::vector<int> y(spec.num_agents);
          int rem = yj;
          for (int n = spec.num_agents - 1; n >= 0; --n) {
            y[n] = rem % spec.ny(tau, n);
            rem /= spec.ny(tau, n);
          }
          for (int cp = 0; cp < spec.nc_next(tau) && !rep.budget_exhausted; ++cp) {
            if (spec.pc(tau, hc.pub.back(), aj, cp) <= 0.0) continue;
            CommonHistory child = hc;
            child.pub.push_back(cp);
            child.actions.push_back(a);
            child.obs.push_back(y);
            std::vector<StrategySlice> slices;
            ActProb bound = bind_policy_to_history(spec, policy, child, slices);
            double mass = 0.0;
            joint_strategy_posterior(spec, child, bound, &mass, &processed);
            if (mass > 0.0) recurse(child);
          }
        }
      }
    };
    for (int c = 0; c < spec.nc(1); ++c) {
      if (spec.initial_public[c] <= 0.0) continue;
      CommonHistory root;
      root.pub = {c};
      recurse(root);
    }
  }
  rep.trajectories_processed = processed;
  if (rep.budget_exhausted)
    rep.notes.push_back("budget exhausted: coverage limited to the histories visited first");
  return rep;
}

CheckReport check_conditional_independence(const GameSpec& spec, const CibPolicy& policy, int agent,
                                           const std::vector<BehavioralStrategy>& deviations,
                                           long long budget) {
  CheckReport rep;
  long long processed = 0;
  const int T = spec.horizon;

  for (const auto& dev : deviations) {
    // act_prob under (g'^agent, lambda^{-agent}) bound per history
    auto bind_dev = [&](const CommonHistory& hc, std::vector<StrategySlice>& slices) {
      ActProb base = bind_policy_to_history(spec, policy, hc, slices);
      return ActProb([&spec, &dev, base, &hc, agent](int k, int tau, const std::vector<int>& prefix,
                                                     int a) -> double {
        if (k != agent) return base(k, tau, prefix, a);
        CommonHistory prefix_hc;
        prefix_hc.pub.assign(hc.pub.begin(), hc.pub.begin() + tau);
        prefix_hc.actions.assign(hc.actions.begin(), hc.actions.begin() + (tau - 1));
        prefix_hc.obs.assign(hc.obs.begin(), hc.obs.begin() + (tau - 1));
        std::vector<double> dist = dev(tau, prefix, prefix_hc);
        if (!spec.is_admissible(tau, k, prefix[tau - 1], a)) return 0.0;
        return dist[a];
      });
    };

    std::function<void(const CommonHistory&)> recurse = [&](const CommonHistory& hc) {
      if (processed > budget) {
        rep.budget_exhausted = true;
        return;
      }
      const int t = hc.t();
      std::vector<StrategySlice> slices;
      ActProb bound = bind_dev(hc, slices);
      double mass = 0.0;
      TrajectoryDist joint = joint_strategy_posterior(spec, hc, bound, &mass, &processed);
      if (mass <= 0.0) return;
      ++rep.histories_checked;

      FullBelief fb = construct_full_belief(spec, policy, hc);
      const long long own_count = fb.traj_count(spec, agent);
      for (long long o = 0; o < own_count; ++o) {
        std::vector<int> own(t);
        long long rem = o;
        for (int tau = t; tau >= 1; --tau) {
          own[tau - 1] = static_cast<int>(rem % spec.nx(tau, agent));
          rem /= spec.nx(tau, agent);
        }
        double mass_o = 0.0;
        for (long long i = 0; i < joint.size(); ++i) {
          if (joint.prob[i] == 0.0) continue;
          auto traj = joint.trajectory_of(i);
          bool match = true;
          for (int tau = 0; tau < t; ++tau)
            if (traj[tau][agent] != own[tau]) {
              match = false;
              break;
            }
          if (match) mass_o += joint.prob[i];
        }
        if (mass_o <= 1e-15) continue;
        for (long long i = 0; i < joint.size(); ++i) {
          auto traj = joint.trajectory_of(i);
          bool match = true;
          for (int tau = 0; tau < t; ++tau)
            if (traj[tau][agent] != own[tau]) {
              match = false;
              break;
            }
          if (!match) continue;
          double target = 1.0;
          for (int k = 0; k < spec.num_agents; ++k) {
            if (k == agent) continue;
            std::vector<int> other(t);
            for (int tau = 0; tau < t; ++tau) other[tau] = traj[tau][k];
            target *= fb.traj[k][FullBelief::traj_index(spec, k, other)];
          }
          rep.max_residual = std::max(rep.max_residual, std::abs(joint.prob[i] / mass_o - target));
        }
      }

      if (t >= T) return;
      const long long AJ = spec.njoint_actions(t);
      int YJ = 1;
      for (int n = 0; n < spec.num_agents; ++n) YJ *= spec.ny(t, n);
      for (int aj = 0; aj < AJ && !rep.budget_exhausted; ++aj) {
        auto a = spec.decode_actions(t, aj);
        for (int yj = 0; yj < YJ && !rep.budget_exhausted; ++yj) {
          std::vector<int> y(spec.num_agents);
          int rem = yj;
          for (int n = spec.num_agents - 1; n >= 0; --n) {
            y[n] = rem % spec.ny(t, n);
            rem /= spec.ny(t, n);
          }
          for (int cp = 0; cp < spec.nc_next(t) && !rep.budget_exhausted; ++cp) {
            if (spec.pc(t, hc.pub.back(), aj, cp) <= 0.0) continue;
            CommonHistory child = hc;
            child.pub.push_back(cp);
            child.actions.push_back(a);
            child.obs.push_back(y);
            std::vector<StrategySlice> cs;
            ActProb cb = bind_dev(child, cs);
            double cmass = 0.0;
            joint_strategy_posterior(spec, child, cb, &cmass, &processed);
            if (cmass > 0.0) recurse(child);
          }
        }
      }
    };

    for (int c = 0; c < spec.nc(1); ++c) {
      if (spec.initial_public[c] <= 0.0) continue;
      CommonHistory root;
      root.pub = {c};
      recurse(root);
    }
  }
  rep.trajectories_processed = processed;
  if (rep.budget_exhausted)
    rep.notes.push_back("budget exhausted: coverage limited to the histories visited first");
  return rep;
}

BehavioralStrategy random_behavioral_strategy(const GameSpec& spec, int agent, std::uint64_t seed) {
  return [&spec, agent, seed](int t, const std::vector<int>& own, const CommonHistory& hc) {
    std::uint64_t h = seed;
    auto mix = [&h](std::uint64_t v) { h = Rng::derive(h, v, 0x9e37ULL); };
    mix(static_cast<std::uint64_t>(t));
    for (int x : own) mix(static_cast<std::uint64_t>(x) + 17);
    for (int c : hc.pub) mix(static_cast<std::uint64_t>(c) + 101);
    for (const auto& av : hc.actions)
      for (int a : av) mix(static_cast<std::uint64_t>(a) + 211);
    for (const auto& yv : hc.obs)
      for (int y : yv) mix(static_cast<std::uint64_t>(y) + 307);
    Rng rng(h);
    const auto& adm = spec.admissible_at(t, agent, own.back());
    std::vector<double> dist(spec.na(t, agent), 0.0);
    auto w = rng.simplex_point(static_cast<int>(adm.size()), 0.05);
    for (size_t i = 0; i < adm.size(); ++i) dist[adm[i]] = w[i];
    return dist;
  };
}

// ---------------------------------------------------------------------------
// Deviation MDP

namespace {

// Continuation source over one agent's per-cell value rows.
class AgentValueSource : public ValueSource {
 public:
  AgentValueSource(const StageTable& table, const std::vector<std::vector<double>>& values, bool nearest)
      : table_(&table), values_(&values), nearest_(nearest) {}
  double eval(int, int x, const CIBState& b) const override {
    if (table_->mode == DpMode::Tree) return (*values_)[table_->locate(b)][x];
    auto stencil = table_->layout.stencil(b, nearest_);
    if (stencil.size() == 1) return (*values_)[stencil[0].first][x];
    double acc = 0.0;
    for (const auto& [cell, w] : stencil) acc += w * (*values_)[cell][x];
    return acc;
  }

 private:
  const StageTable* table_;
  const std::vector<std::vector<double>>* values_;
  bool nearest_;
};

StageGame payoff_row_game(const GameSpec& spec, const CIBState& b, int n, std::vector<double> row) {
  StageGame g;
  g.time = b.time;
  g.b = b;
  g.spec = &spec;
  g.payoff.resize(spec.num_agents);
  g.payoff[n] = std::move(row);
  return g;
}

}  // namespace

DeviationResult deviation_mdp_best_response(const GameSpec& spec, const EquilibriumBundle& bundle,
                                            int agent) {
  const int T = spec.horizon;

  // reachable failed cells are a hard error
  {
    ReachSet reach = reachable_on_path(spec, bundle);
    for (int t = 1; t <= T; ++t)
      for (long long cell : reach.cells[t - 1])
        if (bundle.at(t, cell).failed)
          throw Error(Error::Kind::Certification,
                      "deviation MDP: reachable cell t=" + std::to_string(t) + " cell=" +
                          std::to_string(cell) + " has no certified stage solution");
  }

  DeviationResult out;
  out.dev.resize(T);
  out.lam.resize(T);
  ZeroValueSource zero;
  for (int t = T; t >= 1; --t) {
    const StageTable& table = bundle.stages[t - 1];
    const long long count = static_cast<long long>(table.cells.size());
    out.dev[t - 1].resize(count);
    out.lam[t - 1].resize(count);
    std::unique_ptr<AgentValueSource> dev_src, lam_src;
    const ValueSource* dv = &zero;
    const ValueSource* lv = &zero;
    if (t < T) {
      dev_src = std::make_unique<AgentValueSource>(bundle.stages[t], out.dev[t], bundle.config.interp_nearest);
      lam_src = std::make_unique<AgentValueSource>(bundle.stages[t], out.lam[t], bundle.config.interp_nearest);
      dv = dev_src.get();
      lv = lam_src.get();
    }
    for (long long cell = 0; cell < count; ++cell) {
      const CellRecord& rec = table.cells[cell];
      const CIBState& b = rec.state;
      UpdateSlice sf = build_signaling_free_slice(spec, b.pihat);
      StageGame dev_game =
          payoff_row_game(spec, b, agent, build_agent_payoffs(spec, agent, *dv, rec.psi, sf, b));
      StageGame lam_game =
          payoff_row_game(spec, b, agent, build_agent_payoffs(spec, agent, *lv, rec.psi, sf, b));
      const int X = spec.nx(t, agent);
      out.dev[t - 1][cell].resize(X);
      out.lam[t - 1][cell].resize(X);
      for (int x = 0; x < X; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        double own = 0.0;
        for (int a : spec.admissible_at(t, agent, x)) {
          best = std::max(best, expected_payoff(dev_game, agent, x, a, rec.lambda));
          double w = rec.lambda.probs[agent][x][a];
          if (w > 0.0) own += w * expected_payoff(lam_game, agent, x, a, rec.lambda);
        }
        out.dev[t - 1][cell][x] = best;
        out.lam[t - 1][cell][x] = own;
      }
    }
  }
  return out;
}

McEstimate rollout_value(const GameSpec& spec, const EquilibriumBundle& bundle, int agent, int x,
                         long long cell, long long samples, std::uint64_t seed) {
  const int T = spec.horizon;
  const CellRecord& start = bundle.stages[0].cells[cell];
  Rng rng(Rng::derive(seed, 0x6d63ULL, static_cast<std::uint64_t>(cell)));

  double sum = 0.0, sumsq = 0.0;
  for (long long s = 0; s < samples; ++s) {
    // sample types: own fixed, others from the cell's strategic belief
    std::vector<int> xs(spec.num_agents);
    for (int n = 0; n < spec.num_agents; ++n)
      xs[n] = (n == agent) ? x : sample_index(start.state.pi.marginals[n], rng);
    CIBState b = start.state;
    int c = b.pub;
    double total = 0.0;
    for (int t = 1; t <= T; ++t) {
      const StageTable& table = bundle.stages[t - 1];
      long long cur = (t == 1) ? cell : table.locate(b);
      const CellRecord& rec = table.cells[cur];
      std::vector<int> a(spec.num_agents);
      for (int n = 0; n < spec.num_agents; ++n) a[n] = sample_index(rec.lambda.probs[n][xs[n]], rng);
      int aj = spec.encode_actions(t, a);
      total += spec.phi(t, agent, c, spec.encode_local(t, xs), aj);
      if (t == T) break;
      std::vector<int> y(spec.num_agents);
      for (int n = 0; n < spec.num_agents; ++n) {
        std::vector<double> qdist(spec.ny(t, n));
        for (int yy = 0; yy < spec.ny(t, n); ++yy) qdist[yy] = spec.q(t, n, xs[n], aj, yy);
        y[n] = sample_index(qdist, rng);
      }
      std::vector<double> cdist(spec.nc_next(t));
      for (int cp = 0; cp < spec.nc_next(t); ++cp) cdist[cp] = spec.pc(t, c, aj, cp);
      int cnext = sample_index(cdist, rng);
      std::vector<int> xnext(spec.num_agents);
      for (int n = 0; n < spec.num_agents; ++n) {
        std::vector<double> pdist(spec.nx_next(t, n));
        for (int xp = 0; xp < spec.nx_next(t, n); ++xp) pdist[xp] = spec.p(t, n, xs[n], aj, xp);
        xnext[n] = sample_index(pdist, rng);
      }
      // beliefs evolve by the stored slices
      UpdateSlice sf = build_signaling_free_slice(spec, b.pihat);
      CIBState next;
      next.time = t + 1;
      next.pub = cnext;
      next.pi.time = t + 1;
      next.pihat.time = t + 1;
      next.pi.marginals.resize(spec.num_agents);
      next.pihat.marginals.resize(spec.num_agents);
      for (int n = 0; n < spec.num_agents; ++n) {
        next.pi.marginals[n] = rec.psi.next[n][y[n]][aj];
        next.pihat.marginals[n] = sf.next[n][y[n]][aj];
      }
      b = std::move(next);
      c = cnext;
      xs = std::move(xnext);
    }
    sum += total;
    sumsq += total * total;
  }
  McEstimate est;
  est.mean = sum / static_cast<double>(samples);
  double var = std::max(0.0, sumsq / static_cast<double>(samples) - est.mean * est.mean);
  est.se = std::sqrt(var / static_cast<double>(samples));
  return est;
}

// ---------------------------------------------------------------------------
// Aggregate verification

VerifyReport verify_cib_pbe(const GameSpec& spec, const EquilibriumBundle& bundle,
                            const VerifyTolerances& tol) {
  const int T = spec.horizon;
  VerifyReport rep;

  ReachSet reach;
  bool reach_ok = true;
  try {
    reach = reachable_on_path(spec, bundle);
  } catch (const Error& e) {
    reach_ok = false;
    rep.failures.push_back(std::string("reachability failed: ") + e.what());
  }

  bool reachable_failed_cell = false;
  if (reach_ok) {
    for (int t = 1; t <= T; ++t)
      for (long long cell : reach.cells[t - 1])
        if (bundle.at(t, cell).failed) {
          reachable_failed_cell = true;
          rep.failures.push_back("reachable stage cell without certified solution: t=" + std::to_string(t) +
                                 " cell=" + std::to_string(cell));
        }
  }

  // per-cell recomputation
  ZeroValueSource zero;
  for (int t = T; t >= 1; --t) {
    const StageTable& table = bundle.stages[t - 1];
    std::unique_ptr<TableValueSource> next;
    const ValueSource* vnext = &zero;
    if (t < T) {
      next = std::make_unique<TableValueSource>(bundle.stages[t], bundle.config.interp_nearest);
      vnext = next.get();
    }
    for (long long cell = 0; cell < static_cast<long long>(table.cells.size()); ++cell) {
      const CellRecord& rec = table.cells[cell];
      VerifyReport::CellRow row;
      row.t = t;
      row.cell = cell;
      row.failed_cell = rec.failed;
      StageGame stage = build_stage_game(spec, *vnext, rec.psi, rec.state);
      row.bne_gap = bne_gap(stage, rec.lambda);
      row.consistency = consistency_residual(spec, rec.lambda, rec.psi, rec.state);
      auto value_re = value_update(spec, *vnext, rec.lambda, rec.psi, rec.state);
      for (int n = 0; n < spec.num_agents; ++n)
        for (int x = 0; x < spec.nx(t, n); ++x)
          rep.max_value_recompute_err =
              std::max(rep.max_value_recompute_err, std::abs(value_re[n][x] - rec.value[n][x]));
      if (!rec.failed) {
        rep.max_consistency = std::max(rep.max_consistency, row.consistency);
        rep.max_bne_gap = std::max(rep.max_bne_gap, row.bne_gap);
      }
      rep.rows.push_back(row);
      ++rep.cells_checked;
    }
  }

  // deviation MDP per agent
  if (reach_ok && !reachable_failed_cell) {
    std::vector<DeviationResult> devs;
    for (int n = 0; n < spec.num_agents; ++n) devs.push_back(deviation_mdp_best_response(spec, bundle, n));
    size_t row_idx = 0;
    for (int t = T; t >= 1; --t) {
      const StageTable& table = bundle.stages[t - 1];
      std::vector<bool> onpath(table.cells.size(), false);
      for (long long cell : reach.cells[t - 1]) onpath[cell] = true;
      for (long long cell = 0; cell < static_cast<long long>(table.cells.size()); ++cell, ++row_idx) {
        double g = 0.0;
        for (int n = 0; n < spec.num_agents; ++n)
          for (size_t x = 0; x < devs[n].dev[t - 1][cell].size(); ++x)
            g = std::max(g, devs[n].dev[t - 1][cell][x] - devs[n].lam[t - 1][cell][x]);
        rep.rows[row_idx].dev_gap = g;
        rep.rows[row_idx].onpath = onpath[cell];
        rep.max_dev_gap_all = std::max(rep.max_dev_gap_all, g);
        if (onpath[cell]) {
          rep.max_dev_gap_onpath = std::max(rep.max_dev_gap_onpath, g);
          ++rep.onpath_cells;
        }
      }
    }
  }

  // Monte-Carlo value agreement at the initial cells
  rep.mc_gated = bundle.config.mode == DpMode::Tree || bundle.config.interp_nearest;
  if (tol.mc_samples > 0 && reach_ok) {
    int emitted = 0;
    for (const CIBState& b0 : reach.points[0]) {
      long long cell = bundle.stages[0].locate(b0);
      const CellRecord& rec = bundle.stages[0].cells[cell];
      for (int n = 0; n < spec.num_agents && emitted < 8; ++n)
        for (int x = 0; x < spec.nx(1, n) && emitted < 8; ++x) {
          McEstimate est = rollout_value(spec, bundle, n, x, cell, tol.mc_samples, tol.seed);
          VerifyReport::McRow row;
          row.t = 1;
          row.cell = cell;
          row.agent = n;
          row.x = x;
          row.value = rec.value[n][x];
          row.mean = est.mean;
          row.se = est.se;
          row.z = est.se > 0 ? std::abs(est.mean - row.value) / est.se
                             : (std::abs(est.mean - row.value) > 1e-9 ? 1e99 : 0.0);
          rep.max_mc_z = std::max(rep.max_mc_z, row.z);
          rep.mc.push_back(row);
          ++emitted;
        }
    }
  }

  // verdict
  bool pass = reach_ok && !reachable_failed_cell;
  if (rep.max_consistency > tol.consistency_tol) {
    pass = false;
    rep.failures.push_back("recomputed consistency residual " + fmt(rep.max_consistency) + " > " +
                           fmt(tol.consistency_tol));
  }
  if (rep.max_bne_gap > tol.eps) {
    pass = false;
    rep.failures.push_back("recomputed stage BNE gap " + fmt(rep.max_bne_gap) + " > " + fmt(tol.eps));
  }
  if (rep.max_dev_gap_onpath > tol.eps) {
    pass = false;
    rep.failures.push_back("on-path deviation gap " + fmt(rep.max_dev_gap_onpath) + " > " + fmt(tol.eps));
  }
  if (rep.max_value_recompute_err > 1e-9) {
    pass = false;
    rep.failures.push_back("stored values do not reproduce under recomputation: " +
                           fmt(rep.max_value_recompute_err));
  }
  if (rep.mc_gated && rep.max_mc_z > 3.0) {
    pass = false;
    rep.failures.push_back("rollout disagrees with stored values: max |z| = " + fmt(rep.max_mc_z));
  }
  rep.pass = pass;
  return rep;
}

std::string VerifyReport::to_text() const {
  std::ostringstream os;
  os << "verification " << (pass ? "PASSED" : "FAILED") << "\n";
  os << "  cells checked:              " << cells_checked << "\n";
  os << "  on-path cells:              " << onpath_cells << "\n";
  os << "  max consistency residual:   " << fmt(max_consistency) << "\n";
  os << "  max recomputed BNE gap:     " << fmt(max_bne_gap) << "\n";
  os << "  max deviation gap on-path:  " << fmt(max_dev_gap_onpath) << "\n";
  os << "  max deviation gap anywhere: " << fmt(max_dev_gap_all) << "\n";
  os << "  max value recompute error:  " << fmt(max_value_recompute_err) << "\n";
  if (!mc.empty()) {
    os << "  rollout agreement (" << (mc_gated ? "gated" : "reported only") << "): max |z| = "
       << fmt(max_mc_z) << "\n";
    for (const auto& r : mc)
      os << "    t=" << r.t << " cell=" << r.cell << " agent=" << (r.agent + 1) << " x=" << r.x
         << " value=" << fmt(r.value) << " mc=" << fmt(r.mean) << " se=" << fmt(r.se) << " z=" << fmt(r.z)
         << "\n";
  }
  for (const auto& f : failures) os << "  FAIL: " << f << "\n";
  return os.str();
}

void VerifyReport::write_gap_csv(const std::string& path) const {
  std::ofstream out(path);
  out << "t,cell,onpath,failed,consistency_residual,bne_gap,deviation_gap\n";
  for (const auto& r : rows)
    out << r.t << "," << r.cell << "," << (r.onpath ? 1 : 0) << "," << (r.failed_cell ? 1 : 0) << ","
        << fmt(r.consistency) << "," << fmt(r.bne_gap) << "," << fmt(r.dev_gap) << "\n";
}

}  // namespace cib
