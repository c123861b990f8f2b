#include "cib/stage_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "cib/rng.hpp"

namespace cib {

namespace {

constexpr double kConverge = 1e-9;   // strategy-change stopping threshold
constexpr double kRootTol = 1e-13;   // bisection width

struct FreeCoord {
  int n = 0, x = 0, lo = 0, hi = 0;
};

struct Candidate {
  StrategySlice lambda;
  UpdateSlice psi;
  double gap = std::numeric_limits<double>::infinity();
  double consistency = std::numeric_limits<double>::infinity();
};

class StageCtx {
 public:
  StageCtx(const GameSpec& spec, const ValueSource& vnext, const CIBState& b, const SolverConfig& cfg)
      : spec_(spec), vnext_(vnext), b_(b), cfg_(cfg), sf_(build_signaling_free_slice(spec, b.pihat)) {}

  struct Eval {
    UpdateSlice psi;
    StageGame stage;
  };

  Eval evaluate(const StrategySlice& lambda) {
    ++evaluations;
    Eval e;
    e.psi = build_update_slice(spec_, lambda, b_);
    e.stage = build_stage_game(spec_, vnext_, e.psi, sf_, b_);
    return e;
  }

  // Payoff row of a single agent only (enough for one indifference value).
  StageGame evaluate_agent(const StrategySlice& lambda, int n) {
    ++evaluations;
    UpdateSlice psi = build_update_slice(spec_, lambda, b_);
    StageGame g;
    g.time = b_.time;
    g.b = b_;
    g.spec = &spec_;
    g.payoff.resize(spec_.num_agents);
    g.payoff[n] = build_agent_payoffs(spec_, n, vnext_, psi, sf_, b_);
    return g;
  }

  Candidate certify(const StrategySlice& lambda) {
    Eval e = evaluate(lambda);
    Candidate c;
    c.lambda = lambda;
    c.psi = std::move(e.psi);
    c.gap = bne_gap(e.stage, lambda);
    c.consistency = consistency_residual(spec_, lambda, c.psi, b_);
    return c;
  }

  bool accepted(const Candidate& c) const {
    return c.gap <= cfg_.bne_tol && c.consistency <= cfg_.consistency_tol;
  }

  // max_iters is the per-cell evaluation budget shared by every pipeline
  // stage; the final polish pass gets a bounded overdraft.
  bool exhausted(int reserve = 0) const { return evaluations >= cfg_.max_iters + reserve; }

  const GameSpec& spec() const { return spec_; }
  const CIBState& b() const { return b_; }
  const SolverConfig& cfg() const { return cfg_; }
  int evaluations = 0;

 private:
  const GameSpec& spec_;
  const ValueSource& vnext_;
  const CIBState& b_;
  const SolverConfig& cfg_;
  UpdateSlice sf_;
};

std::vector<FreeCoord> find_free_coords(const GameSpec& spec, int t) {
  std::vector<FreeCoord> out;
  for (int n = 0; n < spec.num_agents; ++n)
    for (int x = 0; x < spec.nx(t, n); ++x) {
      const auto& adm = spec.admissible_at(t, n, x);
      if (adm.size() == 2) out.push_back({n, x, adm[0], adm[1]});
    }
  return out;
}

bool two_action_stage(const GameSpec& spec, int t) {
  for (int n = 0; n < spec.num_agents; ++n)
    for (int x = 0; x < spec.nx(t, n); ++x)
      if (spec.admissible_at(t, n, x).size() > 2) return false;
  return true;
}

// Support-class search over stages where every type has at most two
// admissible actions; the per-type strategy is one scalar (probability of the
// higher action). `groups` lists the free coordinates driven by each scalar
// (more than one entry ties coordinates together, used by the symmetric
// search).
class ScalarSearch {
 public:
  // Groups whose type has zero prior mass influence neither the update rule
  // nor anyone's payoffs; they are excluded from the root system and pinned
  // to a best response afterwards (finalize_null).
  ScalarSearch(StageCtx& ctx, std::vector<std::vector<FreeCoord>> groups)
      : ctx_(ctx) {
    for (auto& g : groups) {
      bool null_mass = true;
      for (const auto& fc : g)
        if (ctx_.b().pi.marginals[fc.n][fc.x] != 0.0) null_mass = false;
      if (null_mass)
        null_groups_.push_back(std::move(g));
      else
        groups_.push_back(std::move(g));
    }
  }

  size_t active_count() const { return groups_.size(); }

  StrategySlice from_beta(const std::vector<double>& beta) const {
    const GameSpec& spec = ctx_.spec();
    const int t = ctx_.b().time;
    StrategySlice s;
    s.time = t;
    s.probs.resize(spec.num_agents);
    for (int n = 0; n < spec.num_agents; ++n) {
      s.probs[n].resize(spec.nx(t, n));
      for (int x = 0; x < spec.nx(t, n); ++x) {
        s.probs[n][x].assign(spec.na(t, n), 0.0);
        const auto& adm = spec.admissible_at(t, n, x);
        if (adm.size() == 1) s.probs[n][x][adm[0]] = 1.0;
      }
    }
    for (size_t i = 0; i < groups_.size(); ++i)
      for (const auto& fc : groups_[i]) {
        s.probs[fc.n][fc.x][fc.hi] = beta[i];
        s.probs[fc.n][fc.x][fc.lo] = 1.0 - beta[i];
      }
    for (const auto& g : null_groups_)
      for (const auto& fc : g) s.probs[fc.n][fc.x][fc.lo] = 1.0;
    return s;
  }

  // Pin zero-mass types to a pure best response; this never changes the
  // stage game (their mass is zero) but closes their own gap terms.
  StrategySlice finalize_null(StrategySlice lambda) {
    if (null_groups_.empty()) return lambda;
    auto e = ctx_.evaluate(lambda);
    for (const auto& g : null_groups_)
      for (const auto& fc : g) {
        auto br = best_response(e.stage, fc.n, lambda);
        std::fill(lambda.probs[fc.n][fc.x].begin(), lambda.probs[fc.n][fc.x].end(), 0.0);
        lambda.probs[fc.n][fc.x][br.argmax[fc.x].front()] = 1.0;
      }
    return lambda;
  }

  // Advantage of the high action for the agent/type behind scalar `eq`
  // (tied coordinates agree by symmetry of the tables). Evaluated on a
  // single-agent payoff row; the full tensor is only built by certify().
  double delta_at(std::vector<double>& beta, int eq) {
    const FreeCoord& fc = groups_[eq][0];
    StrategySlice lambda = from_beta(beta);
    StageGame row = ctx_.evaluate_agent(lambda, fc.n);
    double hi = expected_payoff(row, fc.n, fc.x, fc.hi, lambda);
    double lo = expected_payoff(row, fc.n, fc.x, fc.lo, lambda);
    return hi - lo;
  }

  double delta_at(std::vector<double>& beta, int eq, int coord, double v) {
    beta[coord] = v;
    return delta_at(beta, eq);
  }

  // Ascending roots of the eq-th indifference condition along coordinate
  // `coord`, other scalars fixed.
  std::vector<double> roots(std::vector<double> beta, int eq, int coord, int scan_points) {
    std::vector<double> out;
    if (ctx_.exhausted(budget_reserve_)) return out;
    double prev_v = 0.0;
    double prev_f = delta_at(beta, eq, coord, 0.0);
    if (prev_f == 0.0) out.push_back(0.0);
    for (int k = 1; k <= scan_points; ++k) {
      double v = static_cast<double>(k) / scan_points;
      double f = delta_at(beta, eq, coord, v);
      if (f == 0.0) {
        out.push_back(v);
      } else if (prev_f != 0.0 && ((prev_f < 0) != (f < 0))) {
        double a = prev_v, fa = prev_f, c = v;
        for (int it = 0; it < 100 && c - a > kRootTol; ++it) {
          double mid = 0.5 * (a + c);
          double fm = delta_at(beta, eq, coord, mid);
          if (fm == 0.0) {
            a = c = mid;
            break;
          }
          if ((fa < 0) != (fm < 0))
            c = mid;
          else {
            a = mid;
            fa = fm;
          }
        }
        out.push_back(0.5 * (a + c));
      }
      prev_v = v;
      prev_f = f;
    }
    return out;
  }

  // Which free coordinate each mixed indifference equation should pin: a
  // greedy assignment by numerical sensitivity at `beta` (an agent's
  // advantage often depends only on the opponents' scalars, so solving each
  // equation along its own coordinate would find nothing).
  std::vector<int> match_equations(std::vector<double> beta, const std::vector<int>& mixed) {
    const int d = static_cast<int>(mixed.size());
    std::vector<double> base(d);
    for (int e = 0; e < d; ++e) base[e] = delta_at(beta, mixed[e]);
    std::vector<std::vector<double>> sens(d, std::vector<double>(d, 0.0));
    const double h = 1.0 / 64.0;
    for (int j = 0; j < d; ++j) {
      double save = beta[mixed[j]];
      double v = save <= 1.0 - h ? save + h : save - h;
      beta[mixed[j]] = v;
      for (int e = 0; e < d; ++e) sens[e][j] = std::abs(delta_at(beta, mixed[e]) - base[e]);
      beta[mixed[j]] = save;
    }
    std::vector<int> match(d, -1);
    std::vector<bool> eq_done(d, false), coord_done(d, false);
    for (int pick = 0; pick < d; ++pick) {
      int be = -1, bj = -1;
      double best = -1.0;
      for (int e = 0; e < d; ++e) {
        if (eq_done[e]) continue;
        for (int j = 0; j < d; ++j) {
          if (coord_done[j]) continue;
          if (sens[e][j] > best) {
            best = sens[e][j];
            be = e;
            bj = j;
          }
        }
      }
      match[be] = bj;
      eq_done[be] = true;
      coord_done[bj] = true;
    }
    return match;
  }

  // Indifference sweep from a given starting point: digits derived from the
  // start's support pattern, Gauss-Seidel seeded exactly there. Used to
  // polish near-miss candidates from the other pipeline stages.
  void set_budget_reserve(int reserve) { budget_reserve_ = reserve; }

  void polish(const std::vector<double>& beta0, std::vector<std::vector<double>>& out) {
    const int F = static_cast<int>(groups_.size());
    std::vector<int> mixed;
    std::vector<double> cur = beta0;
    for (int i = 0; i < F; ++i) {
      if (beta0[i] < 1e-7)
        cur[i] = 0.0;
      else if (beta0[i] > 1.0 - 1e-7)
        cur[i] = 1.0;
      else
        mixed.push_back(i);
    }
    if (mixed.empty()) {
      out.push_back(cur);
      return;
    }
    std::vector<int> match = match_equations(cur, mixed);
    const int d = static_cast<int>(mixed.size());
    for (int sweep = 0; sweep < 60; ++sweep) {
      double change = 0.0;
      for (int e = 0; e < d; ++e) {
        const int coord = mixed[match[e]];
        auto rs = roots(cur, mixed[e], coord, 32);
        if (rs.empty()) continue;
        double next = rs[0];
        for (double r : rs)
          if (std::abs(r - cur[coord]) < std::abs(next - cur[coord])) next = r;
        change = std::max(change, std::abs(next - cur[coord]));
        cur[coord] = next;
      }
      if (change < 1e-13) break;
    }
    out.push_back(cur);
  }

  std::vector<double> beta_of(const StrategySlice& lambda) const {
    std::vector<double> beta(groups_.size());
    for (size_t i = 0; i < groups_.size(); ++i) {
      const FreeCoord& fc = groups_[i][0];
      beta[i] = lambda.probs[fc.n][fc.x][fc.hi];
    }
    return beta;
  }

  // Solve one support class. digits[i]: 0 -> beta=0, 1 -> beta=1, 2 -> mixed.
  void solve_class(const std::vector<int>& digits, std::vector<std::vector<double>>& out,
                   Rng& rng) {
    const int F = static_cast<int>(groups_.size());
    std::vector<int> mixed;
    std::vector<double> beta(F);
    for (int i = 0; i < F; ++i) {
      if (digits[i] == 2)
        mixed.push_back(i);
      else
        beta[i] = digits[i];
    }
    const int d = static_cast<int>(mixed.size());
    if (d == 0) {
      out.push_back(beta);
      return;
    }
    if (d == 1) {
      for (double r : roots(beta, mixed[0], mixed[0], 64)) {
        auto cand = beta;
        cand[mixed[0]] = r;
        out.push_back(cand);
      }
      return;
    }
    // Gauss-Seidel on the indifference system from a deterministic seed list,
    // each equation solved along its sensitivity-matched coordinate.
    std::vector<std::vector<double>> seeds;
    seeds.push_back(std::vector<double>(d, 0.5));
    seeds.push_back(std::vector<double>(d, 0.25));
    seeds.push_back(std::vector<double>(d, 0.75));
    for (int s = 0; s < 2; ++s) {
      std::vector<double> v(d);
      for (int i = 0; i < d; ++i) v[i] = 0.05 + 0.9 * rng.next_double();
      seeds.push_back(v);
    }
    for (const auto& seed : seeds) {
      if (ctx_.exhausted(budget_reserve_)) return;
      auto cur = beta;
      for (int i = 0; i < d; ++i) cur[mixed[i]] = seed[i];
      std::vector<int> match = match_equations(cur, mixed);
      bool converged = false;
      for (int sweep = 0; sweep < 12 && !converged; ++sweep) {
        double change = 0.0;
        for (int e = 0; e < d; ++e) {
          const int coord = mixed[match[e]];
          auto rs = roots(cur, mixed[e], coord, 32);
          double next;
          if (rs.empty()) {
            double at0 = std::abs(delta_at(cur, mixed[e], coord, 0.0));
            double at1 = std::abs(delta_at(cur, mixed[e], coord, 1.0));
            next = at0 <= at1 ? 0.0 : 1.0;
          } else {
            next = rs[0];
            for (double r : rs)
              if (std::abs(r - cur[coord]) < std::abs(next - cur[coord])) next = r;
          }
          change = std::max(change, std::abs(next - cur[coord]));
          cur[coord] = next;
        }
        if (change < 1e-12) converged = true;
      }
      if (converged) out.push_back(cur);
    }
  }

  // Classes ordered most-mixed-first, then by ascending digit code; the first
  // certified candidate is the selection.
  std::optional<Candidate> run(std::vector<StrategySlice>* enumerate_out, Rng& rng) {
    const int F = static_cast<int>(groups_.size());
    std::vector<std::vector<int>> classes;
    std::vector<int> digits(F, 0);
    while (true) {
      classes.push_back(digits);
      int i = F - 1;
      while (i >= 0 && digits[i] == 2) digits[i--] = 0;
      if (i < 0) break;
      ++digits[i];
    }
    std::stable_sort(classes.begin(), classes.end(), [](const auto& a, const auto& b) {
      int ma = static_cast<int>(std::count(a.begin(), a.end(), 2));
      int mb = static_cast<int>(std::count(b.begin(), b.end(), 2));
      if (ma != mb) return ma > mb;
      return a < b;
    });

    std::optional<Candidate> first;
    for (const auto& cls : classes) {
      if (ctx_.exhausted(budget_reserve_)) break;
      std::vector<std::vector<double>> candidates;
      solve_class(cls, candidates, rng);
      for (const auto& beta : candidates) {
        Candidate c = ctx_.certify(finalize_null(from_beta(beta)));
        if (!ctx_.accepted(c)) continue;
        if (!first) first = c;
        if (enumerate_out) {
          bool dup = false;
          for (const auto& seen : *enumerate_out)
            if (seen.max_abs_diff(c.lambda) < 1e-6) dup = true;
          if (!dup) enumerate_out->push_back(c.lambda);
        } else {
          return first;
        }
      }
    }
    return first;
  }

 private:
  StageCtx& ctx_;
  std::vector<std::vector<FreeCoord>> groups_;
  std::vector<std::vector<FreeCoord>> null_groups_;
  int budget_reserve_ = 0;
};

double bimatrix_gap(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                    const std::vector<double>& s1, const std::vector<double>& s2) {
  const int R = static_cast<int>(a.size()), C = static_cast<int>(a[0].size());
  double v1 = 0, v2 = 0, best1 = -1e300, best2 = -1e300;
  for (int i = 0; i < R; ++i) {
    double u = 0;
    for (int j = 0; j < C; ++j) u += a[i][j] * s2[j];
    best1 = std::max(best1, u);
    v1 += s1[i] * u;
  }
  for (int j = 0; j < C; ++j) {
    double u = 0;
    for (int i = 0; i < R; ++i) u += b[i][j] * s1[i];
    best2 = std::max(best2, u);
    v2 += s2[j] * u;
  }
  return std::max(best1 - v1, best2 - v2);
}

// Square linear solve by Gaussian elimination; false when singular.
bool solve_linear(std::vector<std::vector<double>> m, std::vector<double> rhs, std::vector<double>& out) {
  const int k = static_cast<int>(rhs.size());
  for (int col = 0; col < k; ++col) {
    int piv = col;
    for (int r = col + 1; r < k; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    if (std::abs(m[piv][col]) < 1e-12) return false;
    std::swap(m[piv], m[col]);
    std::swap(rhs[piv], rhs[col]);
    for (int r = 0; r < k; ++r) {
      if (r == col) continue;
      double f = m[r][col] / m[col][col];
      for (int c2 = col; c2 < k; ++c2) m[r][c2] -= f * m[col][c2];
      rhs[r] -= f * rhs[col];
    }
  }
  out.resize(k);
  for (int i = 0; i < k; ++i) out[i] = rhs[i] / m[i][i];
  return true;
}

// Mixture over support S equalizing the opponent's payoff rows in T:
// sum_{j in S} M[T[e]][j] w_j equal over e, sum w = 1.
bool support_mixture(const std::vector<std::vector<double>>& M, const std::vector<int>& T,
                     const std::vector<int>& S, std::vector<double>& out, int full_dim) {
  const int k = static_cast<int>(S.size());
  std::vector<std::vector<double>> sys(k, std::vector<double>(k, 0.0));
  std::vector<double> rhs(k, 0.0);
  for (int e = 0; e + 1 < k; ++e)
    for (int j = 0; j < k; ++j) sys[e][j] = M[T[e]][S[j]] - M[T[e + 1]][S[j]];
  for (int j = 0; j < k; ++j) sys[k - 1][j] = 1.0;
  rhs[k - 1] = 1.0;
  std::vector<double> w;
  if (!solve_linear(sys, rhs, w)) return false;
  out.assign(full_dim, 0.0);
  for (int j = 0; j < k; ++j) {
    if (w[j] < -1e-9) return false;
    out[S[j]] = std::max(0.0, w[j]);
  }
  double sum = 0;
  for (double v : out) sum += v;
  if (sum <= 0) return false;
  for (double& v : out) v /= sum;
  return true;
}

StrategySlice random_interior_slice(const GameSpec& spec, int t, Rng& rng) {
  StrategySlice s;
  s.time = t;
  s.probs.resize(spec.num_agents);
  for (int n = 0; n < spec.num_agents; ++n) {
    s.probs[n].resize(spec.nx(t, n));
    for (int x = 0; x < spec.nx(t, n); ++x) {
      s.probs[n][x].assign(spec.na(t, n), 0.0);
      const auto& adm = spec.admissible_at(t, n, x);
      auto w = rng.simplex_point(static_cast<int>(adm.size()), 0.1);
      for (size_t i = 0; i < adm.size(); ++i) s.probs[n][x][adm[i]] = w[i];
    }
  }
  return s;
}

bool symmetric_state(const CIBState& b) {
  return b.pi.marginals.size() == 2 && b.pi.marginals[0] == b.pi.marginals[1] &&
         b.pihat.marginals[0] == b.pihat.marginals[1];
}

// Damped best-response dynamics over pooled mixtures of the reduced
// normal-form game (N > 2 path).
bool reduced_iterated_br(const GameSpec& spec, int t, const std::vector<std::vector<double>>& payoff,
                         std::vector<std::vector<double>>& sigma, double tol, Rng& rng) {
  const int N = spec.num_agents;
  const long long AJ = spec.njoint_actions(t);
  std::vector<std::vector<int>> adec(AJ);
  for (int aj = 0; aj < AJ; ++aj) adec[aj] = spec.decode_actions(t, aj);
  auto payoff_of = [&](const std::vector<std::vector<double>>& sg, int n, int an) {
    double u = 0;
    for (int aj = 0; aj < AJ; ++aj) {
      if (adec[aj][n] != an) continue;
      double w = 1;
      for (int k = 0; k < N; ++k)
        if (k != n) w *= sg[k][adec[aj][k]];
      u += w * payoff[n][aj];
    }
    return u;
  };
  auto gap_of = [&](const std::vector<std::vector<double>>& sg) {
    double worst = 0;
    for (int n = 0; n < N; ++n) {
      double own = 0, best = -1e300;
      for (int an : spec.admissible_at(t, n, 0)) {
        double u = payoff_of(sg, n, an);
        best = std::max(best, u);
        own += sg[n][an] * u;
      }
      worst = std::max(worst, best - own);
    }
    return worst;
  };

  for (int attempt = 0; attempt < 24; ++attempt) {
    std::vector<std::vector<double>> cur(N);
    for (int n = 0; n < N; ++n) {
      const auto& adm = spec.admissible_at(t, n, 0);
      cur[n].assign(spec.na(t, n), 0.0);
      auto w = attempt == 0 ? std::vector<double>(adm.size(), 1.0 / adm.size())
                            : rng.simplex_point(static_cast<int>(adm.size()), 0.05);
      for (size_t i = 0; i < adm.size(); ++i) cur[n][adm[i]] = w[i];
    }
    for (int it = 0; it < 4000; ++it) {
      if (gap_of(cur) <= tol) {
        sigma = cur;
        return true;
      }
      for (int n = 0; n < N; ++n) {
        int best_a = spec.admissible_at(t, n, 0)[0];
        double best_u = -1e300;
        for (int an : spec.admissible_at(t, n, 0)) {
          double u = payoff_of(cur, n, an);
          if (u > best_u) {
            best_u = u;
            best_a = an;
          }
        }
        for (int a2 = 0; a2 < spec.na(t, n); ++a2)
          cur[n][a2] = 0.5 * cur[n][a2] + 0.5 * (a2 == best_a ? 1.0 : 0.0);
      }
    }
  }
  return false;
}

}  // namespace

BimatrixNash bimatrix_nash(const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b, double tol) {
  const int R = static_cast<int>(a.size()), C = static_cast<int>(a[0].size());
  BimatrixNash out;

  auto try_accept = [&](const std::vector<double>& s1, const std::vector<double>& s2) {
    double g = bimatrix_gap(a, b, s1, s2);
    if (g <= tol) {
      out.row = s1;
      out.col = s2;
      out.gap = g;
      out.ok = true;
      return true;
    }
    return false;
  };

  {
    std::vector<double> u1(R, 1.0 / R), u2(C, 1.0 / C);
    if (try_accept(u1, u2)) return out;
  }

  std::vector<std::vector<int>> rsupp, csupp;
  for (int mask = 1; mask < (1 << R); ++mask) {
    std::vector<int> s;
    for (int i = 0; i < R; ++i)
      if (mask & (1 << i)) s.push_back(i);
    rsupp.push_back(s);
  }
  for (int mask = 1; mask < (1 << C); ++mask) {
    std::vector<int> s;
    for (int j = 0; j < C; ++j)
      if (mask & (1 << j)) s.push_back(j);
    csupp.push_back(s);
  }
  auto by_size = [](const std::vector<int>& x, const std::vector<int>& y) {
    if (x.size() != y.size()) return x.size() < y.size();
    return x < y;
  };
  std::sort(rsupp.begin(), rsupp.end(), by_size);
  std::sort(csupp.begin(), csupp.end(), by_size);

  std::vector<std::vector<double>> bt(C, std::vector<double>(R));
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) bt[j][i] = b[i][j];

  for (const auto& S1 : rsupp)
    for (const auto& S2 : csupp) {
      if (S1.size() != S2.size()) continue;
      std::vector<double> s2, s1;
      if (!support_mixture(a, S1, S2, s2, C)) continue;
      if (!support_mixture(bt, S2, S1, s1, R)) continue;
      if (try_accept(s1, s2)) return out;
    }
  return out;
}

PooledReduced solve_pooled_reduced(const GameSpec& spec, const StageGame& stage, const CIBState& b,
                                   double sep_tol, std::uint64_t seed) {
  PooledReduced out;
  const int t = b.time;
  const int N = spec.num_agents;
  for (int n = 0; n < N; ++n)
    for (int x = 1; x < spec.nx(t, n); ++x)
      if (spec.admissible[t - 1][n][x] != spec.admissible[t - 1][n][0]) return out;

  const long long AJ = spec.njoint_actions(t);
  const long long XJ = spec.njoint_local(t);
  std::vector<std::vector<double>> reduced(N, std::vector<double>(AJ, 0.0));
  double resid = 0.0;
  for (int n = 0; n < N; ++n) {
    std::vector<std::vector<double>> cond(spec.nx(t, n), std::vector<double>(AJ, 0.0));
    for (long long xj = 0; xj < XJ; ++xj) {
      auto x = spec.decode_local(t, static_cast<int>(xj));
      double w_others = 1.0;
      for (int k = 0; k < N; ++k)
        if (k != n) w_others *= b.pi.marginals[k][x[k]];
      if (w_others == 0.0) continue;
      for (int aj = 0; aj < AJ; ++aj) cond[x[n]][aj] += w_others * stage.at(n, static_cast<int>(xj), aj);
    }
    for (int aj = 0; aj < AJ; ++aj) {
      double r = 0;
      for (int x = 0; x < spec.nx(t, n); ++x) r += b.pi.marginals[n][x] * cond[x][aj];
      reduced[n][aj] = r;
    }
    // own-type differences of conditional payoffs must not depend on actions
    for (int x = 0; x < spec.nx(t, n); ++x) {
      double lo = 1e300, hi = -1e300;
      for (int aj = 0; aj < AJ; ++aj) {
        double dv = cond[x][aj] - reduced[n][aj];
        lo = std::min(lo, dv);
        hi = std::max(hi, dv);
      }
      resid = std::max(resid, hi - lo);
    }
  }
  out.separability = resid;
  if (resid > sep_tol) return out;
  out.applicable = true;

  std::vector<std::vector<double>> sigma(N);
  bool solved = false;
  if (N == 2) {
    const auto& adm0 = spec.admissible_at(t, 0, 0);
    const auto& adm1 = spec.admissible_at(t, 1, 0);
    std::vector<std::vector<double>> A(adm0.size(), std::vector<double>(adm1.size()));
    std::vector<std::vector<double>> B = A;
    for (size_t i = 0; i < adm0.size(); ++i)
      for (size_t j = 0; j < adm1.size(); ++j) {
        int aj = spec.encode_actions(t, {adm0[i], adm1[j]});
        A[i][j] = reduced[0][aj];
        B[i][j] = reduced[1][aj];
      }
    BimatrixNash nash = bimatrix_nash(A, B, 1e-11);
    if (nash.ok) {
      sigma[0].assign(spec.na(t, 0), 0.0);
      sigma[1].assign(spec.na(t, 1), 0.0);
      for (size_t i = 0; i < adm0.size(); ++i) sigma[0][adm0[i]] = nash.row[i];
      for (size_t j = 0; j < adm1.size(); ++j) sigma[1][adm1[j]] = nash.col[j];
      solved = true;
      out.path = "support-enumeration";
    }
  }
  if (!solved) {
    Rng rng(Rng::derive(seed, 0x72627273ULL));
    solved = reduced_iterated_br(spec, t, reduced, sigma, 1e-11, rng);
    if (solved) out.path = "iterated-br";
  }
  if (!solved) return out;

  out.lambda.time = t;
  out.lambda.probs.resize(N);
  for (int n = 0; n < N; ++n) out.lambda.probs[n].assign(spec.nx(t, n), sigma[n]);
  out.solved = true;
  return out;
}

StageSolution solve_bne_consistent(const GameSpec& spec, const ValueSource& vnext,
                                   const CIBState& b, const SolverConfig& config) {
  const int t = b.time;
  StageCtx ctx(spec, vnext, b, config);
  Rng rng(Rng::derive(config.seed, 0x5747a6eULL, static_cast<std::uint64_t>(t)));

  StageSolution out;
  Candidate best;
  auto finish = [&](Candidate c, const char* method) {
    out.lambda = std::move(c.lambda);
    out.psi = std::move(c.psi);
    out.gap = c.gap;
    out.consistency = c.consistency;
    out.ok = ctx.accepted(c);
    out.method = method;
    out.evaluations = ctx.evaluations;
    return out;
  };
  auto track = [&](const Candidate& c) {
    if (c.gap < best.gap) best = c;
  };

  // 1) Uniform pre-check: in degenerate stages every strategy is a BNE and
  //    the uniform slice is the canonical answer.
  {
    Candidate c = ctx.certify(StrategySlice::uniform(spec, t));
    track(c);
    if (ctx.accepted(c) && !config.enumerate_all) return finish(std::move(c), "uniform");
    if (ctx.accepted(c) && config.enumerate_all) {
      out.all_equilibria.push_back(c.lambda);
      return finish(std::move(c), "uniform");
    }
  }

  // 2) Own-type-separable stages (uncontrolled dynamics, no private values):
  //    pooled equilibrium of the reduced complete-information game. Pooled
  //    strategies share one update rule (the factor cancels), so the tensor
  //    built for the uniform slice is valid for every pooled candidate.
  if (spec.num_agents >= 2) {
    auto ev = ctx.evaluate(StrategySlice::uniform(spec, t));
    PooledReduced pr = solve_pooled_reduced(spec, ev.stage, b, 1e-10, config.seed);
    if (pr.solved) {
      Candidate c = ctx.certify(pr.lambda);
      track(c);
      if (ctx.accepted(c)) {
        if (config.enumerate_all) out.all_equilibria.push_back(c.lambda);
        return finish(std::move(c), "pooled-reduced");
      }
    }
  }

  // 3) Single agent: plain argmax per type.
  if (spec.num_agents == 1) {
    StrategySlice lambda = StrategySlice::uniform(spec, t);
    for (int pass = 0; pass < 2; ++pass) {
      auto e = ctx.evaluate(lambda);
      auto br = best_response(e.stage, 0, lambda);
      StrategySlice pure = lambda;
      for (int x = 0; x < spec.nx(t, 0); ++x) {
        std::fill(pure.probs[0][x].begin(), pure.probs[0][x].end(), 0.0);
        pure.probs[0][x][br.argmax[x].front()] = 1.0;
      }
      lambda = pure;  // second pass re-derives the argmax under its own psi
    }
    Candidate c = ctx.certify(lambda);
    track(c);
    if (ctx.accepted(c)) return finish(std::move(c), "argmax");
  }

  const bool scalar_ok = two_action_stage(spec, t);
  std::vector<FreeCoord> coords = scalar_ok ? find_free_coords(spec, t) : std::vector<FreeCoord>{};

  // 4) Symmetric indifference search at symmetric states of symmetric games:
  //    guarantees lambda^1 = lambda^2 whenever such an equilibrium is found.
  if (config.symmetric_mode && spec.num_agents == 2 && scalar_ok && coords.size() <= 12 &&
      symmetric_state(b) && spec.agent_symmetric()) {
    std::vector<std::vector<FreeCoord>> groups;
    for (const auto& fc : coords) {
      if (fc.n != 0) continue;
      std::vector<FreeCoord> g = {fc};
      for (const auto& other : coords)
        if (other.n == 1 && other.x == fc.x) g.push_back(other);
      groups.push_back(std::move(g));
    }
    if (!groups.empty()) {
      ScalarSearch search(ctx, groups);
      if (search.active_count() <= 6) {
        auto found = search.run(config.enumerate_all ? &out.all_equilibria : nullptr, rng);
        if (found) {
          track(*found);
          if (ctx.accepted(*found)) return finish(std::move(*found), "sym-class");
        }
      }
    }
  }

  // 5) General support-class search for two-action stages.
  if (scalar_ok && !coords.empty()) {
    std::vector<std::vector<FreeCoord>> groups;
    for (const auto& fc : coords) groups.push_back({fc});
    ScalarSearch search(ctx, groups);
    if (search.active_count() <= 6) {
      auto found = search.run(config.enumerate_all ? &out.all_equilibria : nullptr, rng);
      if (found) {
        track(*found);
        if (ctx.accepted(*found)) return finish(std::move(*found), "class");
      }
    }
  }

  // 6) Damped iterated best response with seeded restarts.
  {
    for (int attempt = 0; attempt <= config.restarts && !ctx.exhausted(); ++attempt) {
      StrategySlice lambda =
          attempt == 0 ? StrategySlice::uniform(spec, t) : random_interior_slice(spec, t, rng);
      StrategySlice prev = lambda;
      while (!ctx.exhausted()) {
        Candidate c = ctx.certify(lambda);
        track(c);
        if (ctx.accepted(c)) return finish(std::move(c), "br");
        auto e = ctx.evaluate(lambda);
        StrategySlice br = lambda;
        for (int n = 0; n < spec.num_agents; ++n) {
          auto r = best_response(e.stage, n, lambda);
          for (int x = 0; x < spec.nx(t, n); ++x) {
            std::fill(br.probs[n][x].begin(), br.probs[n][x].end(), 0.0);
            br.probs[n][x][r.argmax[x].front()] = 1.0;
          }
        }
        StrategySlice next = lambda;
        for (int n = 0; n < spec.num_agents; ++n)
          for (int x = 0; x < spec.nx(t, n); ++x)
            for (int a = 0; a < spec.na(t, n); ++a)
              next.probs[n][x][a] =
                  (1.0 - config.damping) * lambda.probs[n][x][a] + config.damping * br.probs[n][x][a];
        if (next.max_abs_diff(lambda) < kConverge) break;
        lambda = std::move(next);
      }
    }
  }

  // 7) Hierarchical hypercube scan on the free scalars.
  if (config.grid_fallback && scalar_ok && !coords.empty()) {
    std::vector<std::vector<FreeCoord>> groups;
    for (const auto& fc : coords) groups.push_back({fc});
    ScalarSearch search(ctx, groups);
    const int F = static_cast<int>(search.active_count());
    if (F >= 1 && F <= 4) {
    std::vector<double> center(F, 0.5);
    double radius = 0.5;
    const int per_axis = F <= 2 ? 9 : 5;
    for (int level = 0; level < 16 && !ctx.exhausted(); ++level) {
      std::vector<double> best_beta = center;
      double best_gap = std::numeric_limits<double>::infinity();
      std::vector<int> idx(F, 0);
      while (true) {
        std::vector<double> beta(F);
        for (int i = 0; i < F; ++i) {
          double lo = std::max(0.0, center[i] - radius), hi = std::min(1.0, center[i] + radius);
          beta[i] = per_axis == 1 ? center[i] : lo + (hi - lo) * idx[i] / (per_axis - 1);
        }
        Candidate c = ctx.certify(search.finalize_null(search.from_beta(beta)));
        track(c);
        if (c.gap < best_gap) {
          best_gap = c.gap;
          best_beta = beta;
        }
        if (ctx.accepted(c)) return finish(std::move(c), "scan");
        int i = F - 1;
        while (i >= 0 && idx[i] == per_axis - 1) idx[i--] = 0;
        if (i < 0) break;
        ++idx[i];
      }
      center = best_beta;
      radius *= 0.4;
    }
    }
  }

  // 8) Polish the best near-miss with the indifference sweep started at it.
  if (scalar_ok && !coords.empty() && best.gap < std::numeric_limits<double>::infinity()) {
    std::vector<std::vector<FreeCoord>> groups;
    for (const auto& fc : coords) groups.push_back({fc});
    ScalarSearch search(ctx, groups);
    search.set_budget_reserve(50000);
    std::vector<std::vector<double>> candidates;
    search.polish(search.beta_of(best.lambda), candidates);
    for (const auto& beta : candidates) {
      Candidate c = ctx.certify(search.finalize_null(search.from_beta(beta)));
      track(c);
      if (ctx.accepted(c)) return finish(std::move(c), "polish");
    }
  }

  return finish(std::move(best), "failed");
}

}  // namespace cib
