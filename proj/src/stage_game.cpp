#include "cib/stage_game.hpp"

#include <cmath>
#include <limits>

namespace cib {

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

// Per-call decode tables so the hot loops never allocate.
struct JointTables {
  int N = 0;
  long long XJ = 1, AJ = 1;
  std::vector<int> xdec;  // [xj * N + n]
  std::vector<int> adec;  // [aj * N + n]

  JointTables(const GameSpec& spec, int t) {
    N = spec.num_agents;
    XJ = spec.njoint_local(t);
    AJ = spec.njoint_actions(t);
    xdec.resize(XJ * N);
    adec.resize(AJ * N);
    for (long long xj = 0; xj < XJ; ++xj) {
      auto x = spec.decode_local(t, static_cast<int>(xj));
      for (int n = 0; n < N; ++n) xdec[xj * N + n] = x[n];
    }
    for (long long aj = 0; aj < AJ; ++aj) {
      auto a = spec.decode_actions(t, static_cast<int>(aj));
      for (int n = 0; n < N; ++n) adec[aj * N + n] = a[n];
    }
  }
};

}  // namespace

std::vector<double> build_agent_payoffs(const GameSpec& spec, int n, const ValueSource& vnext,
                                        const UpdateSlice& psi, const UpdateSlice& sf,
                                        const CIBState& b) {
  const int t = b.time;
  const int N = spec.num_agents;
  const JointTables jt(spec, t);
  const long long XJ = jt.XJ, AJ = jt.AJ;
  const int CP = spec.nc_next(t);
  const int XP = spec.nx_next(t, n);
  std::vector<double> out(XJ * AJ, kNaN);

  const bool zero = vnext.is_zero();
  int YJ = 1;
  for (int k = 0; k < N; ++k) YJ *= spec.ny(t, k);

  // continuation values per (aj, yj, cp) for this agent, flattened
  std::vector<double> cont;
  std::vector<int> ydec;  // [yj * N + k]
  if (!zero) {
    ydec.resize(static_cast<size_t>(YJ) * N);
    for (int yj = 0; yj < YJ; ++yj) {
      int rem = yj;
      for (int k = N - 1; k >= 0; --k) {
        ydec[static_cast<size_t>(yj) * N + k] = rem % spec.ny(t, k);
        rem /= spec.ny(t, k);
      }
    }
    cont.resize(static_cast<size_t>(AJ) * YJ * CP * XP);
    CIBState next;
    next.time = t + 1;
    next.pi.time = t + 1;
    next.pihat.time = t + 1;
    next.pi.marginals.resize(N);
    next.pihat.marginals.resize(N);
    for (long long aj = 0; aj < AJ; ++aj)
      for (int yj = 0; yj < YJ; ++yj) {
        for (int k = 0; k < N; ++k) {
          next.pi.marginals[k] = psi.next[k][ydec[static_cast<size_t>(yj) * N + k]][aj];
          next.pihat.marginals[k] = sf.next[k][ydec[static_cast<size_t>(yj) * N + k]][aj];
        }
        for (int cp = 0; cp < CP; ++cp) {
          next.pub = cp;
          double* slot = &cont[((static_cast<size_t>(aj) * YJ + yj) * CP + cp) * XP];
          for (int xp = 0; xp < XP; ++xp) slot[xp] = vnext.eval(n, xp, next);
        }
      }
  }

  for (long long xj = 0; xj < XJ; ++xj) {
    const int* x = &jt.xdec[xj * N];
    for (long long aj = 0; aj < AJ; ++aj) {
      const int* a = &jt.adec[aj * N];
      bool adm = true;
      for (int k = 0; k < N; ++k)
        if (!spec.is_admissible(t, k, x[k], a[k])) {
          adm = false;
          break;
        }
      if (!adm) continue;
      double total = spec.phi(t, n, b.pub, static_cast<int>(xj), static_cast<int>(aj));
      if (!zero) {
        double acc = 0.0;
        for (int yj = 0; yj < YJ; ++yj) {
          double qy = 1.0;
          for (int k = 0; k < N; ++k) {
            qy *= spec.q(t, k, x[k], static_cast<int>(aj), ydec[static_cast<size_t>(yj) * N + k]);
            if (qy == 0.0) break;
          }
          if (qy == 0.0) continue;
          for (int cp = 0; cp < CP; ++cp) {
            double pcp = spec.pc(t, b.pub, static_cast<int>(aj), cp);
            if (pcp == 0.0) continue;
            const double* vals = &cont[((static_cast<size_t>(aj) * YJ + yj) * CP + cp) * XP];
            double inner = 0.0;
            for (int xp = 0; xp < XP; ++xp) {
              double pn = spec.p(t, n, x[n], static_cast<int>(aj), xp);
              if (pn != 0.0) inner += pn * vals[xp];
            }
            acc += qy * pcp * inner;
          }
        }
        total += acc;
      }
      out[xj * AJ + aj] = total;
    }
  }
  return out;
}

StageGame build_stage_game(const GameSpec& spec, const ValueSource& vnext, const UpdateSlice& psi,
                           const UpdateSlice& sf, const CIBState& b) {
  StageGame g;
  g.time = b.time;
  g.b = b;
  g.spec = &spec;
  g.payoff.resize(spec.num_agents);
  for (int n = 0; n < spec.num_agents; ++n) g.payoff[n] = build_agent_payoffs(spec, n, vnext, psi, sf, b);
  return g;
}

StageGame build_stage_game(const GameSpec& spec, const ValueSource& vnext, const UpdateSlice& psi,
                           const CIBState& b) {
  UpdateSlice sf = build_signaling_free_slice(spec, b.pihat);
  return build_stage_game(spec, vnext, psi, sf, b);
}

namespace {

// Core of the opponent expectation, shared by expected_payoff and
// best_response: accumulates type/action weights without re-decoding.
double fiber_expectation(const StageGame& stage, const JointTables& jt, int n, int x, int a,
                         const StrategySlice& others) {
  const int N = jt.N;
  const long long XJ = jt.XJ, AJ = jt.AJ;
  const std::vector<double>& row = stage.payoff[n];
  double total = 0.0;
  for (long long xj = 0; xj < XJ; ++xj) {
    const int* xs = &jt.xdec[xj * N];
    if (xs[n] != x) continue;
    double wx = 1.0;
    for (int k = 0; k < N; ++k)
      if (k != n) wx *= stage.b.pi.marginals[k][xs[k]];
    if (wx == 0.0) continue;
    for (long long aj = 0; aj < AJ; ++aj) {
      const int* as = &jt.adec[aj * N];
      if (as[n] != a) continue;
      double wa = wx;
      for (int k = 0; k < N; ++k) {
        if (k == n) continue;
        wa *= others.probs[k][xs[k]][as[k]];
        if (wa == 0.0) break;
      }
      if (wa == 0.0) continue;
      total += wa * row[xj * AJ + aj];
    }
  }
  return total;
}

}  // namespace

double expected_payoff(const StageGame& stage, int n, int x, int a, const StrategySlice& others) {
  const GameSpec& spec = *stage.spec;
  if (!spec.is_admissible(stage.time, n, x, a))
    throw Error(Error::Kind::Validation, "expected_payoff: inadmissible action for the given type");
  const JointTables jt(spec, stage.time);
  return fiber_expectation(stage, jt, n, x, a, others);
}

BestResponseResult best_response(const StageGame& stage, int n, const StrategySlice& others) {
  const GameSpec& spec = *stage.spec;
  const int t = stage.time;
  const int X = spec.nx(t, n);
  const JointTables jt(spec, t);
  BestResponseResult r;
  r.argmax.resize(X);
  r.value.resize(X);
  r.q.assign(X, std::vector<double>(spec.na(t, n), kNaN));
  for (int x = 0; x < X; ++x) {
    const auto& adm = spec.admissible_at(t, n, x);
    double best = -std::numeric_limits<double>::infinity();
    for (int a : adm) {
      double v = fiber_expectation(stage, jt, n, x, a, others);
      r.q[x][a] = v;
      if (v > best) best = v;
    }
    r.value[x] = best;
    double tol = 1e-12 * std::max(1.0, std::abs(best));
    for (int a : adm)
      if (best - r.q[x][a] <= tol) r.argmax[x].push_back(a);
  }
  return r;
}

double bne_gap(const StageGame& stage, const StrategySlice& lambda) {
  const GameSpec& spec = *stage.spec;
  const int t = stage.time;
  double worst = 0.0;
  for (int n = 0; n < spec.num_agents; ++n) {
    auto br = best_response(stage, n, lambda);
    for (int x = 0; x < spec.nx(t, n); ++x) {
      double own = 0.0;
      for (int a : spec.admissible_at(t, n, x)) {
        double w = lambda.probs[n][x][a];
        if (w > 0.0) own += w * br.q[x][a];
      }
      worst = std::max(worst, br.value[x] - own);
    }
  }
  return worst;
}

}  // namespace cib
