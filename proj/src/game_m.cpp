#include "cib/game_m.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>

#include "cib/rng.hpp"
#include "cib/stage_game.hpp"

namespace cib {

namespace {

bool rows_action_independent(const GameSpec& s, int t, int n, bool local) {
  const long long AJ = s.njoint_actions(t);
  const int X = s.nx(t, n);
  const int W = local ? s.nx_next(t, n) : s.ny(t, n);
  for (int x = 0; x < X; ++x)
    for (int aj = 1; aj < AJ; ++aj)
      for (int w = 0; w < W; ++w) {
        double a0 = local ? s.p(t, n, x, 0, w) : s.q(t, n, x, 0, w);
        double aw = local ? s.p(t, n, x, aj, w) : s.q(t, n, x, aj, w);
        if (a0 != aw) return false;
      }
  return true;
}

bool local_kernel_identity(const GameSpec& s, int t, int n) {
  if (s.nx(t, n) != s.nx_next(t, n)) return false;
  const long long AJ = s.njoint_actions(t);
  for (int x = 0; x < s.nx(t, n); ++x)
    for (int aj = 0; aj < AJ; ++aj)
      for (int xp = 0; xp < s.nx_next(t, n); ++xp)
        if (s.p(t, n, x, aj, xp) != (x == xp ? 1.0 : 0.0)) return false;
  return true;
}

}  // namespace

GameMStructure detect_game_m(const GameSpec& spec) {
  GameMStructure st;
  const int T = spec.horizon;
  const int N = spec.num_agents;
  auto bad = [&](const std::string& m) { st.diagnostics.push_back(m); };

  for (int t = 1; t <= T; ++t) {
    bool evolves = false;
    for (int n = 0; n < N; ++n) {
      if (!local_kernel_identity(spec, t, n)) evolves = true;
      if (spec.ny(t, n) > 1) evolves = true;
    }
    if (evolves) st.epochs.push_back(t);

    for (int n = 0; n < N; ++n) {
      if (!rows_action_independent(spec, t, n, /*local=*/true))
        bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + ": local kernel depends on actions");
      if (!rows_action_independent(spec, t, n, /*local=*/false))
        bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + ": observation kernel depends on actions");
      if (!evolves && !local_kernel_identity(spec, t, n))
        bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + ": off-epoch local kernel is not the identity");
      // admissible sets must not depend on the local state (pooled strategies
      // must be playable at every type)
      for (int x = 1; x < spec.nx(t, n); ++x)
        if (spec.admissible[t - 1][n][x] != spec.admissible[t - 1][n][0]) {
          bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + ": state-dependent admissible actions");
          break;
        }
      // utilities constant in own local state
      for (int c = 0; c < spec.nc(t); ++c)
        for (long long xj = 0; xj < spec.njoint_local(t); ++xj) {
          auto x = spec.decode_local(t, static_cast<int>(xj));
          if (x[n] != 0) continue;
          for (int xo = 1; xo < spec.nx(t, n); ++xo) {
            auto x2 = x;
            x2[n] = xo;
            int xj2 = spec.encode_local(t, x2);
            for (int aj = 0; aj < spec.njoint_actions(t); ++aj) {
              double u1 = spec.phi(t, n, c, static_cast<int>(xj), aj);
              double u2 = spec.phi(t, n, c, xj2, aj);
              bool nan1 = std::isnan(u1), nan2 = std::isnan(u2);
              if (nan1 != nan2 || (!nan1 && u1 != u2)) {
                bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) +
                    ": utility depends on own local state");
                xo = spec.nx(t, n);
                xj = spec.njoint_local(t) - 1;
                c = spec.nc(t);
                break;
              }
            }
          }
        }
    }

    // Public-state structure (last step's kernel is never consumed).
    if (t < T) {
      bool epoch = std::find(st.epochs.begin(), st.epochs.end(), t) != st.epochs.end();
      if (epoch) {
        // action-independent redraw
        for (int c = 0; c < spec.nc(t); ++c)
          for (int aj = 1; aj < spec.njoint_actions(t); ++aj)
            for (int cp = 0; cp < spec.nc_next(t); ++cp)
              if (spec.pc(t, c, 0, cp) != spec.pc(t, c, aj, cp)) {
                bad("t=" + std::to_string(t) + ": epoch public transition depends on actions");
                c = spec.nc(t);
                break;
              }
      } else {
        // deterministic injective append of (c, a)
        if (spec.nc_next(t) != spec.nc(t) * spec.njoint_actions(t)) {
          bad("t=" + std::to_string(t) + ": off-epoch public alphabet does not append the action profile");
        } else {
          for (int c = 0; c < spec.nc(t); ++c)
            for (int aj = 0; aj < spec.njoint_actions(t); ++aj)
              for (int cp = 0; cp < spec.nc_next(t); ++cp) {
                double want = (cp == c * spec.njoint_actions(t) + aj) ? 1.0 : 0.0;
                if (spec.pc(t, c, aj, cp) != want) {
                  bad("t=" + std::to_string(t) + ": off-epoch public transition is not the action append");
                  c = spec.nc(t);
                  aj = static_cast<int>(spec.njoint_actions(t));
                  break;
                }
              }
        }
      }
    }
  }

  st.valid = st.diagnostics.empty();
  return st;
}

GameSpec game_m_generate(std::uint64_t seed, const GameMSizes& sizes) {
  const int N = sizes.num_agents, T = sizes.horizon;
  if (N < 1 || T < 1) throw Error(Error::Kind::Validation, "game-m: bad sizes");
  std::vector<int> epochs = sizes.epochs;
  if (epochs.empty())
    for (int t = N; t <= T; t += N) epochs.push_back(t);
  auto is_epoch = [&](int t) { return std::find(epochs.begin(), epochs.end(), t) != epochs.end(); };

  Rng rng(Rng::derive(seed, 0x6d67656eULL));

  GameSpec s;
  s.num_agents = N;
  s.horizon = T;

  Alphabet locals;
  for (int i = 0; i < sizes.num_local; ++i) locals.symbols.push_back("x" + std::to_string(i));
  Alphabet obs_epoch;
  for (int i = 0; i < sizes.num_obs; ++i) obs_epoch.symbols.push_back("o" + std::to_string(i));
  Alphabet obs_none{{"-"}};
  Alphabet acts_full;
  for (int i = 0; i < sizes.num_actions; ++i) acts_full.symbols.push_back("a" + std::to_string(i));
  Alphabet act_wait{{"w"}};
  Alphabet pub_epoch{{"e0", "e1"}};

  // epoch public redraw distribution, shared across rows
  std::vector<double> redraw = rng.simplex_point(2, 0.25);

  // public alphabets: start singleton, append between epochs, reset at epochs
  std::vector<Alphabet> pubs(T);
  pubs[0] = Alphabet{{"r"}};
  for (int t = 1; t < T; ++t) {
    if (is_epoch(t)) {  // C_{t+1} redrawn
      pubs[t] = pub_epoch;
    } else {
      // append the joint action profile: only the mover has more than one
      // action, so the joint alphabet is the mover's
      Alphabet next;
      for (const auto& c : pubs[t - 1].symbols)
        for (const auto& a : acts_full.symbols) next.symbols.push_back(c + "|" + a);
      pubs[t] = next;
    }
  }

  for (int t = 1; t <= T; ++t) {
    int mover = (t - 1) % N;
    s.public_states.push_back(pubs[t - 1]);
    s.local_states.push_back(std::vector<Alphabet>(N, locals));
    std::vector<Alphabet> acts(N, act_wait);
    acts[mover] = acts_full;
    s.actions.push_back(acts);
    std::vector<Alphabet> obs(N, is_epoch(t) ? obs_epoch : obs_none);
    s.observations.push_back(obs);
    std::vector<std::vector<std::vector<int>>> adm(N);
    for (int n = 0; n < N; ++n) {
      adm[n].resize(sizes.num_local);
      for (int x = 0; x < sizes.num_local; ++x) {
        adm[n][x].resize(s.actions[t - 1][n].size());
        std::iota(adm[n][x].begin(), adm[n][x].end(), 0);
      }
    }
    s.admissible.push_back(adm);
  }

  s.local_kernel.resize(T);
  s.obs_kernel.resize(T);
  s.public_kernel.resize(T);
  s.utility.resize(T);
  for (int t = 1; t <= T; ++t) {
    const long long AJ = s.njoint_actions(t);
    const int X = sizes.num_local;
    const bool epoch = is_epoch(t);
    for (int n = 0; n < N; ++n) {
      const int XP = s.nx_next(t, n);
      const int Y = s.ny(t, n);
      std::vector<double> local(X * AJ * XP, 0.0);
      std::vector<double> obs(X * AJ * Y, 0.0);
      for (int x = 0; x < X; ++x) {
        std::vector<double> prow(XP, 0.0);
        if (epoch)
          prow = rng.simplex_point(XP, 0.15);
        else
          prow[x] = 1.0;
        std::vector<double> qrow(Y, 0.0);
        if (epoch)
          qrow = rng.simplex_point(Y, 0.15);
        else
          qrow[0] = 1.0;
        for (int aj = 0; aj < AJ; ++aj) {  // copied rows: action independence is bitwise
          for (int xp = 0; xp < XP; ++xp) local[(x * AJ + aj) * XP + xp] = prow[xp];
          for (int y = 0; y < Y; ++y) obs[(x * AJ + aj) * Y + y] = qrow[y];
        }
      }
      s.local_kernel[t - 1].push_back(std::move(local));
      s.obs_kernel[t - 1].push_back(std::move(obs));
    }

    // public kernel
    {
      const int C = s.nc(t), CP = s.nc_next(t);
      std::vector<double> pub(C * AJ * CP, 0.0);
      if (t == T) {
        for (int c = 0; c < C; ++c)
          for (int aj = 0; aj < AJ; ++aj) pub[(c * AJ + aj) * CP + std::min(c, CP - 1)] = 1.0;
      } else if (epoch) {
        for (int c = 0; c < C; ++c)
          for (int aj = 0; aj < AJ; ++aj)
            for (int cp = 0; cp < CP; ++cp) pub[(c * AJ + aj) * CP + cp] = redraw[cp];
      } else {
        for (int c = 0; c < C; ++c)
          for (int aj = 0; aj < AJ; ++aj) pub[(c * AJ + aj) * CP + (c * AJ + aj)] = 1.0;
      }
      s.public_kernel[t - 1] = std::move(pub);
    }

    // utilities: phi^n(c, x^{-n}, a), broadcast over own state
    {
      const int C = s.nc(t);
      const long long XJ = s.njoint_local(t);
      for (int n = 0; n < N; ++n) {
        std::vector<double> util(C * XJ * AJ, 0.0);
        // base table over (c, x^{-n}, aj)
        long long XO = 1;
        for (int k = 0; k < N; ++k)
          if (k != n) XO *= X;
        std::vector<double> base(C * XO * AJ);
        for (auto& v : base) v = sizes.zero_utilities ? 0.0 : rng.uniform(-1.0, 1.0);
        for (int c = 0; c < C; ++c)
          for (long long xj = 0; xj < XJ; ++xj) {
            auto x = s.decode_local(t, static_cast<int>(xj));
            long long xo = 0;
            for (int k = 0; k < N; ++k)
              if (k != n) xo = xo * X + x[k];
            for (int aj = 0; aj < AJ; ++aj)
              util[(c * XJ + xj) * AJ + aj] = base[(c * XO + xo) * AJ + aj];
          }
        s.utility[t - 1].push_back(std::move(util));
      }
    }
  }

  s.initial_public = {1.0};
  for (int n = 0; n < N; ++n) s.initial_local.push_back(rng.simplex_point(sizes.num_local, 0.2));

  validate_spec_or_throw(s);
  return s;
}

// ---------------------------------------------------------------------------
// Tree solve

namespace {

std::string node_key(const CIBState& b) {
  std::string key;
  key.append(reinterpret_cast<const char*>(&b.pub), sizeof(b.pub));
  for (const auto& m : b.pihat.marginals)
    key.append(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(double));
  return key;
}

}  // namespace

EquilibriumBundle game_m_solve(const GameSpec& spec, GameMReport* report, long long node_budget) {
  validate_spec_or_throw(spec);
  GameMStructure st = detect_game_m(spec);
  if (!st.valid) {
    std::string msg = "game_m_solve: spec lacks the required structure:";
    for (const auto& d : st.diagnostics) msg += "\n  - " + d;
    throw Error(Error::Kind::Validation, msg);
  }

  const int T = spec.horizon;
  const int N = spec.num_agents;
  GameMReport rep;

  EquilibriumBundle bundle;
  bundle.spec_fingerprint = fingerprint(spec);
  bundle.config.mode = DpMode::Tree;
  bundle.stages.resize(T);
  for (int t = 1; t <= T; ++t) {
    bundle.stages[t - 1].time = t;
    bundle.stages[t - 1].mode = DpMode::Tree;
  }

  // Forward pass: beliefs evolve by the signaling-free update regardless of
  // strategies and actions, so the reachable set is exact.
  long long total_nodes = 0;
  {
    std::map<std::string, long long> seen;
    for (int c = 0; c < spec.nc(1); ++c) {
      if (spec.initial_public[c] <= 0.0) continue;
      CIBState b;
      b.time = 1;
      b.pub = c;
      b.pi = BeliefVector::prior_of(spec);
      b.pihat = b.pi;
      CellRecord rec;
      rec.state = b;
      bundle.stages[0].cells.push_back(std::move(rec));
      ++total_nodes;
    }
    for (int t = 1; t < T; ++t) {
      std::map<std::string, long long> next_seen;
      for (const CellRecord& rec : bundle.stages[t - 1].cells) {
        const CIBState& b = rec.state;
        UpdateSlice sf = build_signaling_free_slice(spec, b.pihat);
        const long long AJ = spec.njoint_actions(t);
        for (int aj = 0; aj < AJ; ++aj) {
          // observation support under pihat (action-independent kernels; all
          // actions enumerated because continuation values are needed at
          // off-equilibrium profiles too)
          std::vector<std::vector<int>> ysupp(N);
          for (int n = 0; n < N; ++n)
            for (int y = 0; y < spec.ny(t, n); ++y) {
              double py = 0;
              for (int x = 0; x < spec.nx(t, n); ++x)
                py += spec.q(t, n, x, aj, y) * b.pihat.marginals[n][x];
              if (py > 0) ysupp[n].push_back(y);
            }
          std::vector<size_t> yi(N, 0);
          bool done = false;
          while (!done) {
            for (int cp = 0; cp < spec.nc_next(t); ++cp) {
              if (spec.pc(t, b.pub, aj, cp) <= 0.0) continue;
              CIBState child;
              child.time = t + 1;
              child.pub = cp;
              child.pi.time = t + 1;
              child.pihat.time = t + 1;
              child.pihat.marginals.resize(N);
              for (int n = 0; n < N; ++n) child.pihat.marginals[n] = sf.next[n][ysupp[n][yi[n]]][aj];
              child.pi = child.pihat;
              std::string key = node_key(child);
              if (next_seen.emplace(key, static_cast<long long>(bundle.stages[t].cells.size())).second) {
                CellRecord crec;
                crec.state = std::move(child);
                bundle.stages[t].cells.push_back(std::move(crec));
                if (++total_nodes > node_budget)
                  throw Error(Error::Kind::Budget, "game_m_solve: reachable tree exceeds node budget");
              }
            }
            int n = N - 1;
            while (n >= 0 && ++yi[n] == ysupp[n].size()) yi[n--] = 0;
            if (n < 0) done = true;
          }
        }
      }
    }
  }
  rep.nodes = total_nodes;
  rep.solver_path = (N == 2) ? "support-enumeration" : "iterated-br";

  // Backward pass.
  ZeroValueSource zero;
  for (int t = T; t >= 1; --t) {
    StageTable& table = bundle.stages[t - 1];
    std::unique_ptr<TableValueSource> next;
    const ValueSource* vnext = &zero;
    if (t < T) {
      next = std::make_unique<TableValueSource>(bundle.stages[t], /*nearest=*/false);
      vnext = next.get();
    }
    for (CellRecord& rec : table.cells) {
      const CIBState& b = rec.state;
      UpdateSlice sf = build_signaling_free_slice(spec, b.pihat);
      StageGame stage = build_stage_game(spec, *vnext, sf, sf, b);

      PooledReduced pr =
          solve_pooled_reduced(spec, stage, b, /*sep_tol=*/1e-9, Rng::derive(0x676d74ULL, fingerprint(spec), t));
      rep.decomposition_residual = std::max(rep.decomposition_residual, pr.separability);
      if (!pr.solved)
        throw Error(Error::Kind::Internal,
                    "game_m_solve: reduced stage game has no computed equilibrium at t=" +
                        std::to_string(t) + " (this should be impossible; please report)");
      if (pr.path != "support-enumeration" && N == 2) rep.solver_path = "support-enumeration+iterated-br";
      rec.lambda = pr.lambda;

      // consistency: pooled strategies cancel, so the consistent update must
      // coincide with the signaling-free one (bitwise)
      rec.psi = build_update_slice(spec, rec.lambda, b);
      if (!(rec.psi == sf)) rep.psi_equals_sf = false;
      if (!rec.lambda.pooled()) rep.pooled = false;

      rec.gap = bne_gap(stage, rec.lambda);
      rec.consistency = consistency_residual(spec, rec.lambda, rec.psi, b);
      rec.failed = false;
      rec.method = "pooled-" + pr.path;
      rec.value = value_update(spec, *vnext, rec.lambda, rec.psi, b);

      bundle.worst_gap = std::max(bundle.worst_gap, rec.gap);
      bundle.worst_consistency = std::max(bundle.worst_consistency, rec.consistency);
    }
  }
  rep.worst_gap = bundle.worst_gap;
  rep.worst_consistency = bundle.worst_consistency;
  if (report) *report = rep;
  return bundle;
}

}  // namespace cib
