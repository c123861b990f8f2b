#include "cib/mac.hpp"

#include <cmath>

namespace cib {

void MacParams::validate() const {
  if (!(arrival_p > 0.0 && arrival_p < 1.0))
    throw Error(Error::Kind::Validation, "mac: arrival probability must lie in (0,1)");
  if (!(drop_cost >= 0.0)) throw Error(Error::Kind::Validation, "mac: dropping cost must be >= 0");
  if (horizon < 1) throw Error(Error::Kind::Validation, "mac: horizon must be >= 1");
  double cs = c_star();
  if (!(cs > 0.0 && cs < 1.0)) throw Error(Error::Kind::Validation, "mac: threshold c* outside (0,1)");
}

GameSpec mac_spec(const MacParams& params) {
  params.validate();
  const double p = params.arrival_p;
  const double c = params.drop_cost;
  const int T = params.horizon;

  GameSpec s;
  s.num_agents = 2;
  s.horizon = T;

  Alphabet pub{{"-"}};
  Alphabet bin{{"0", "1"}};
  Alphabet noobs{{"-"}};

  for (int t = 1; t <= T; ++t) {
    s.public_states.push_back(pub);
    s.local_states.push_back({bin, bin});
    s.actions.push_back({bin, bin});
    s.observations.push_back({noobs, noobs});
    // Transmission requires a packet: A^n <= X^n.
    s.admissible.push_back({{{0}, {0, 1}}, {{0}, {0, 1}}});
  }

  // Queue left after the transmission outcome: empties only on a lone
  // successful transmission.
  auto residual = [](int x, int a_own, int a_other) { return x - a_own * (1 - a_other); };

  s.local_kernel.resize(T);
  s.obs_kernel.resize(T);
  s.public_kernel.resize(T);
  s.utility.resize(T);
  for (int t = 1; t <= T; ++t) {
    const int AJ = static_cast<int>(s.njoint_actions(t));  // 4
    for (int n = 0; n < 2; ++n) {
      std::vector<double> local(2 * AJ * 2, 0.0);
      std::vector<double> obs(2 * AJ * 1, 1.0);
      for (int x = 0; x < 2; ++x)
        for (int aj = 0; aj < AJ; ++aj) {
          auto a = s.decode_actions(t, aj);
          int res = residual(x, a[n], a[1 - n]);
          // next state = min(res + W, 1), W ~ Bernoulli(p); res<0 never
          // happens at admissible profiles.
          double p1 = (res >= 1) ? 1.0 : p;
          local[(x * AJ + aj) * 2 + 0] = 1.0 - p1;
          local[(x * AJ + aj) * 2 + 1] = p1;
        }
      s.local_kernel[t - 1].push_back(std::move(local));
      s.obs_kernel[t - 1].push_back(std::move(obs));

      std::vector<double> util(1 * 4 * AJ, 0.0);
      for (int xj = 0; xj < 4; ++xj) {
        auto x = s.decode_local(t, xj);
        for (int aj = 0; aj < AJ; ++aj) {
          auto a = s.decode_actions(t, aj);
          double reward = static_cast<double>(a[0] ^ a[1]);
          double drop = (residual(x[n], a[n], a[1 - n]) == 1) ? c * p : 0.0;
          util[xj * AJ + aj] = reward - drop;
        }
      }
      s.utility[t - 1].push_back(std::move(util));
    }
    s.public_kernel[t - 1].assign(1 * AJ * 1, 1.0);
  }

  s.initial_public = {1.0};
  s.initial_local = {{1.0 - p, p}, {1.0 - p, p}};

  validate_spec_or_throw(s);
  return s;
}

std::pair<double, double> mac_beta2_closed_form(double pi1, double pi2, const MacParams& params) {
  const double cs = params.c_star();
  if (pi1 < cs && pi2 < cs) return {1.0, 1.0};
  if (pi1 < cs && pi2 >= cs) return {0.0, 1.0};
  if (pi1 >= cs && pi2 < cs) return {1.0, 0.0};
  return {cs / pi1, cs / pi2};
}

double mac_value2_closed_form(int n, int x, double pi1, double pi2, const MacParams& params) {
  const double cs = params.c_star();
  const double cp = params.drop_cost * params.arrival_p;
  const double own = (n == 0) ? pi1 : pi2;
  const double other = (n == 0) ? pi2 : pi1;
  if (x == 1) {
    if (own < cs && other < cs) return 1.0 - other * (1.0 + cp);
    if (own < cs && other >= cs) return other - cp;
    if (own >= cs && other < cs) return 1.0;
    return cs - cp;
  }
  if (own < cs && other < cs) return other;
  if (own < cs && other >= cs) return other;
  if (own >= cs && other < cs) return 0.0;
  return cs;
}

double mac_belief_update_closed_form(double pi_n, double beta_n, int a_n, int a_other,
                                     const MacParams& params) {
  const double p = params.arrival_p;
  if (a_n == 1 && a_other == 1) return 1.0;
  if (a_n == 1 && a_other == 0) return p;
  double den = 1.0 - pi_n * beta_n;
  if (den <= 0.0) {
    // Silence has probability zero; signaling-free fallback.
    return p + pi_n * (1.0 - p);
  }
  return (p + pi_n * (1.0 - p - beta_n)) / den;
}

}  // namespace cib
