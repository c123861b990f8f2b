#include "cib/belief.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace cib {

namespace {

void normalize_in_place(std::vector<double>& v) {
  double total = 0;
  for (double x : v) total += x;
  if (total > 0)
    for (double& x : v) x /= total;
}

// Open-loop Bayes core for one agent: weights q(y|x,a) * 1{a^n admissible at x}
// on the given belief. Empty when the denominator is zero.
std::optional<std::vector<double>> sf_core(const GameSpec& spec, int t, int n,
                                           const std::vector<double>& belief, int y_n, int aj) {
  const int X = spec.nx(t, n);
  const int XP = spec.nx_next(t, n);
  const int an = spec.decode_actions(t, aj)[n];
  std::vector<double> num(XP, 0.0);
  double den = 0.0;
  for (int x = 0; x < X; ++x) {
    if (!spec.is_admissible(t, n, x, an)) continue;  // observed action rules the state out
    double w = spec.q(t, n, x, aj, y_n) * belief[x];
    if (w == 0.0) continue;
    den += w;
    for (int xp = 0; xp < XP; ++xp) num[xp] += spec.p(t, n, x, aj, xp) * w;
  }
  if (den <= 0.0) return std::nullopt;
  for (double& v : num) v /= den;
  normalize_in_place(num);
  return num;
}

// Deterministic filler for entries that are unreachable even open-loop:
// the admissibility-filtered pushforward of the belief, else uniform.
std::vector<double> pushforward_fallback(const GameSpec& spec, int t, int n,
                                         const std::vector<double>& belief, int aj) {
  const int X = spec.nx(t, n);
  const int XP = spec.nx_next(t, n);
  const int an = spec.decode_actions(t, aj)[n];
  std::vector<double> out(XP, 0.0);
  double mass = 0.0;
  for (int x = 0; x < X; ++x) {
    if (!spec.is_admissible(t, n, x, an)) continue;
    if (belief[x] == 0.0) continue;
    mass += belief[x];
    for (int xp = 0; xp < XP; ++xp) out[xp] += spec.p(t, n, x, aj, xp) * belief[x];
  }
  if (mass > 0.0) {
    normalize_in_place(out);
    return out;
  }
  std::fill(out.begin(), out.end(), 1.0 / XP);
  return out;
}

}  // namespace

BeliefVector BeliefVector::prior_of(const GameSpec& spec) {
  BeliefVector b;
  b.time = 1;
  b.marginals = spec.initial_local;
  return b;
}

bool BeliefVector::valid(double tol) const {
  for (const auto& m : marginals) {
    double sum = 0;
    for (double v : m) {
      if (!(v >= 0)) return false;
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) return false;
  }
  return true;
}

double BeliefVector::joint(const GameSpec& spec, int xj) const {
  auto x = spec.decode_local(time, xj);
  double prod = 1;
  for (size_t n = 0; n < marginals.size(); ++n) prod *= marginals[n][x[n]];
  return prod;
}

double BeliefVector::tv_distance(const BeliefVector& other) const {
  double worst = 0;
  for (size_t n = 0; n < marginals.size(); ++n) {
    double tv = 0;
    for (size_t x = 0; x < marginals[n].size(); ++x) tv += std::abs(marginals[n][x] - other.marginals[n][x]);
    worst = std::max(worst, 0.5 * tv);
  }
  return worst;
}

StrategySlice StrategySlice::uniform(const GameSpec& spec, int t) {
  StrategySlice s;
  s.time = t;
  s.probs.resize(spec.num_agents);
  for (int n = 0; n < spec.num_agents; ++n) {
    s.probs[n].resize(spec.nx(t, n));
    for (int x = 0; x < spec.nx(t, n); ++x) {
      s.probs[n][x].assign(spec.na(t, n), 0.0);
      const auto& adm = spec.admissible_at(t, n, x);
      for (int a : adm) s.probs[n][x][a] = 1.0 / static_cast<double>(adm.size());
    }
  }
  return s;
}

bool StrategySlice::valid(const GameSpec& spec, double tol) const {
  if (static_cast<int>(probs.size()) != spec.num_agents) return false;
  for (int n = 0; n < spec.num_agents; ++n) {
    if (static_cast<int>(probs[n].size()) != spec.nx(time, n)) return false;
    for (int x = 0; x < spec.nx(time, n); ++x) {
      double sum = 0;
      for (int a = 0; a < spec.na(time, n); ++a) {
        double v = probs[n][x][a];
        if (!(v >= 0)) return false;
        if (v > 0 && !spec.is_admissible(time, n, x, a)) return false;
        sum += v;
      }
      if (std::abs(sum - 1.0) > tol) return false;
    }
  }
  return true;
}

bool StrategySlice::pooled() const {
  for (const auto& agent : probs)
    for (size_t x = 1; x < agent.size(); ++x)
      if (agent[x] != agent[0]) return false;
  return true;
}

double StrategySlice::max_abs_diff(const StrategySlice& other) const {
  double worst = 0;
  for (size_t n = 0; n < probs.size(); ++n)
    for (size_t x = 0; x < probs[n].size(); ++x)
      for (size_t a = 0; a < probs[n][x].size(); ++a)
        worst = std::max(worst, std::abs(probs[n][x][a] - other.probs[n][x][a]));
  return worst;
}

double UpdateSlice::max_abs_diff(const UpdateSlice& other) const {
  double worst = 0;
  for (size_t n = 0; n < next.size(); ++n)
    for (size_t y = 0; y < next[n].size(); ++y)
      for (size_t aj = 0; aj < next[n][y].size(); ++aj)
        for (size_t xp = 0; xp < next[n][y][aj].size(); ++xp)
          worst = std::max(worst, std::abs(next[n][y][aj][xp] - other.next[n][y][aj][xp]));
  return worst;
}

std::vector<double> signaling_free_step_agent(const GameSpec& spec, int t, int n,
                                              const std::vector<double>& pihat_n, int y_n,
                                              int aj, bool strict) {
  if (auto r = sf_core(spec, t, n, pihat_n, y_n, aj)) return *r;
  if (strict) {
    throw Error(Error::Kind::Validation,
                "impossible observation for agent " + std::to_string(n) + " at t=" + std::to_string(t) +
                    ": observation '" + spec.observations[t - 1][n].symbols[y_n] +
                    "' has probability 0 under the signaling-free belief and the given action profile");
  }
  return pushforward_fallback(spec, t, n, pihat_n, aj);
}

BeliefVector signaling_free_step(const GameSpec& spec, const BeliefVector& pihat,
                                 const std::vector<int>& y, const std::vector<int>& a) {
  const int t = pihat.time;
  const int aj = spec.encode_actions(t, a);
  BeliefVector out;
  out.time = t + 1;
  out.marginals.resize(spec.num_agents);
  for (int n = 0; n < spec.num_agents; ++n)
    out.marginals[n] = signaling_free_step_agent(spec, t, n, pihat.marginals[n], y[n], aj, /*strict=*/true);
  return out;
}

namespace {

// Strategy-consistent one-agent update at b. Positive denominator: Bayes
// with the strategy in the weight, base measure pi. Zero denominator: the
// signaling-free update of pihat. A strategy factor that is
// constant over local states cancels algebraically; dropping it keeps the
// pooled case on the same code path as the signaling-free update, which makes
// the Game-M identity psi* = psihat bitwise rather than up to rounding.
std::vector<double> consistent_step_agent(const GameSpec& spec, const StrategySlice& lambda,
                                          const CIBState& b, int n, int y_n, int aj) {
  const int t = b.time;
  const int X = spec.nx(t, n);
  const int XP = spec.nx_next(t, n);
  const int an = spec.decode_actions(t, aj)[n];

  bool constant_factor = true;
  const double first = lambda.probs[n][0][an];
  for (int x = 1; x < X; ++x)
    if (lambda.probs[n][x][an] != first) {
      constant_factor = false;
      break;
    }
  if (constant_factor && first > 0.0) {
    if (auto r = sf_core(spec, t, n, b.pi.marginals[n], y_n, aj)) return *r;
  } else if (!constant_factor || first != 0.0) {
    std::vector<double> num(XP, 0.0);
    double den = 0.0;
    for (int x = 0; x < X; ++x) {
      double eta = spec.q(t, n, x, aj, y_n) * lambda.probs[n][x][an];
      double w = eta * b.pi.marginals[n][x];
      if (w == 0.0) continue;
      den += w;
      for (int xp = 0; xp < XP; ++xp) num[xp] += spec.p(t, n, x, aj, xp) * w;
    }
    if (den > 0.0) {
      for (double& v : num) v /= den;
      normalize_in_place(num);
      return num;
    }
  }
  return signaling_free_step_agent(spec, t, n, b.pihat.marginals[n], y_n, aj, /*strict=*/false);
}

}  // namespace

BeliefVector consistent_update(const GameSpec& spec, const StrategySlice& lambda,
                               const CIBState& b, const std::vector<int>& y,
                               const std::vector<int>& a) {
  const int t = b.time;
  const int aj = spec.encode_actions(t, a);
  BeliefVector out;
  out.time = t + 1;
  out.marginals.resize(spec.num_agents);
  for (int n = 0; n < spec.num_agents; ++n) out.marginals[n] = consistent_step_agent(spec, lambda, b, n, y[n], aj);
  return out;
}

UpdateSlice build_update_slice(const GameSpec& spec, const StrategySlice& lambda, const CIBState& b) {
  const int t = b.time;
  UpdateSlice s;
  s.time = t;
  s.next.resize(spec.num_agents);
  for (int n = 0; n < spec.num_agents; ++n) {
    s.next[n].resize(spec.ny(t, n));
    for (int y = 0; y < spec.ny(t, n); ++y) {
      s.next[n][y].resize(spec.njoint_actions(t));
      for (int aj = 0; aj < spec.njoint_actions(t); ++aj)
        s.next[n][y][aj] = consistent_step_agent(spec, lambda, b, n, y, aj);
    }
  }
  return s;
}

UpdateSlice build_signaling_free_slice(const GameSpec& spec, const BeliefVector& pihat) {
  const int t = pihat.time;
  UpdateSlice s;
  s.time = t;
  s.next.resize(spec.num_agents);
  for (int n = 0; n < spec.num_agents; ++n) {
    s.next[n].resize(spec.ny(t, n));
    for (int y = 0; y < spec.ny(t, n); ++y) {
      s.next[n][y].resize(spec.njoint_actions(t));
      for (int aj = 0; aj < spec.njoint_actions(t); ++aj)
        s.next[n][y][aj] = signaling_free_step_agent(spec, t, n, pihat.marginals[n], y, aj, /*strict=*/false);
    }
  }
  return s;
}

double consistency_residual(const GameSpec& spec, const StrategySlice& lambda,
                            const UpdateSlice& psi, const CIBState& b) {
  const int t = b.time;
  double worst = 0.0;
  for (int n = 0; n < spec.num_agents; ++n) {
    const int X = spec.nx(t, n);
    const int XP = spec.nx_next(t, n);
    for (int y = 0; y < spec.ny(t, n); ++y)
      for (int aj = 0; aj < spec.njoint_actions(t); ++aj) {
        const int an = spec.decode_actions(t, aj)[n];
        std::vector<double> num(XP, 0.0);
        double den = 0.0;
        for (int x = 0; x < X; ++x) {
          double eta = spec.q(t, n, x, aj, y) * lambda.probs[n][x][an];
          double w = eta * b.pi.marginals[n][x];
          if (w == 0.0) continue;
          den += w;
          for (int xp = 0; xp < XP; ++xp) num[xp] += spec.p(t, n, x, aj, xp) * w;
        }
        const auto& entry = psi.next[n][y][aj];
        if (den > 0.0) {
          for (int xp = 0; xp < XP; ++xp) worst = std::max(worst, std::abs(entry[xp] - num[xp] / den));
        } else {
          // Support condition against the signaling-free update.
          std::vector<double> sf =
              signaling_free_step_agent(spec, t, n, b.pihat.marginals[n], y, aj, /*strict=*/false);
          double bad_mass = 0.0;
          for (int xp = 0; xp < XP; ++xp)
            if (sf[xp] == 0.0) bad_mass += entry[xp];
          worst = std::max(worst, bad_mass);
        }
      }
  }
  return worst;
}

}  // namespace cib
