#include "cib/game_spec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace cib {

using nlohmann::json;

namespace {

constexpr double kRowTol = 1e-12;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void parse_fail(const std::string& where, const std::string& what) {
  throw Error(Error::Kind::Parse, "model file: " + where + ": " + what);
}

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    parse_fail(where, std::string("missing required field '") + key + "'");
  return j.at(key);
}

// A section that is either {"all_t": V} or {"per_t": {"1": V, ...}}.
// Returns the value for 1-based time t.
const json& timed(const json& j, int t, int horizon, const std::string& where) {
  if (j.contains("all_t")) return j.at("all_t");
  if (j.contains("per_t")) {
    const json& m = j.at("per_t");
    std::string key = std::to_string(t);
    if (!m.contains(key))
      parse_fail(where, "per_t is missing time '" + key + "' (horizon " + std::to_string(horizon) + ")");
    return m.at(key);
  }
  parse_fail(where, "expected an object with 'all_t' or 'per_t'");
}

Alphabet read_alphabet(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) parse_fail(where, "alphabet must be a non-empty array of strings");
  Alphabet a;
  for (const auto& s : j) {
    if (!s.is_string()) parse_fail(where, "alphabet elements must be strings");
    a.symbols.push_back(s.get<std::string>());
  }
  for (size_t i = 0; i < a.symbols.size(); ++i)
    for (size_t k = i + 1; k < a.symbols.size(); ++k)
      if (a.symbols[i] == a.symbols[k]) parse_fail(where, "duplicate symbol '" + a.symbols[i] + "'");
  return a;
}

double read_number(const json& j, const std::string& where) {
  if (!j.is_number()) parse_fail(where, "expected a number");
  return j.get<double>();
}

std::vector<double> read_dist(const json& j, int len, const std::string& where) {
  if (!j.is_array() || static_cast<int>(j.size()) != len)
    parse_fail(where, "expected an array of length " + std::to_string(len));
  std::vector<double> v(len);
  for (int i = 0; i < len; ++i) v[i] = read_number(j[i], where + "[" + std::to_string(i) + "]");
  return v;
}

}  // namespace

int Alphabet::index_of(const std::string& s) const {
  for (int i = 0; i < size(); ++i)
    if (symbols[i] == s) return i;
  return -1;
}

long long GameSpec::njoint_actions(int t) const {
  long long r = 1;
  for (int n = 0; n < num_agents; ++n) r *= na(t, n);
  return r;
}

long long GameSpec::njoint_local(int t) const {
  long long r = 1;
  for (int n = 0; n < num_agents; ++n) r *= nx(t, n);
  return r;
}

int GameSpec::encode_actions(int t, const std::vector<int>& a) const {
  int aj = 0;
  for (int n = 0; n < num_agents; ++n) aj = aj * na(t, n) + a[n];
  return aj;
}

std::vector<int> GameSpec::decode_actions(int t, int aj) const {
  std::vector<int> a(num_agents);
  for (int n = num_agents - 1; n >= 0; --n) {
    a[n] = aj % na(t, n);
    aj /= na(t, n);
  }
  return a;
}

int GameSpec::encode_local(int t, const std::vector<int>& x) const {
  int xj = 0;
  for (int n = 0; n < num_agents; ++n) xj = xj * nx(t, n) + x[n];
  return xj;
}

std::vector<int> GameSpec::decode_local(int t, int xj) const {
  std::vector<int> x(num_agents);
  for (int n = num_agents - 1; n >= 0; --n) {
    x[n] = xj % nx(t, n);
    xj /= nx(t, n);
  }
  return x;
}

bool GameSpec::is_admissible(int t, int n, int x, int a) const {
  const auto& adm = admissible[t - 1][n][x];
  return std::binary_search(adm.begin(), adm.end(), a);
}

std::vector<int> GameSpec::admissible_somewhere(int t, int n) const {
  std::vector<char> seen(na(t, n), 0);
  for (int x = 0; x < nx(t, n); ++x)
    for (int a : admissible[t - 1][n][x]) seen[a] = 1;
  std::vector<int> out;
  for (int a = 0; a < na(t, n); ++a)
    if (seen[a]) out.push_back(a);
  return out;
}

bool GameSpec::agent_symmetric() const {
  if (num_agents != 2) return false;
  for (int t = 1; t <= horizon; ++t) {
    if (!(local_states[t - 1][0] == local_states[t - 1][1])) return false;
    if (!(actions[t - 1][0] == actions[t - 1][1])) return false;
    if (!(observations[t - 1][0] == observations[t - 1][1])) return false;
    if (admissible[t - 1][0] != admissible[t - 1][1]) return false;
    const int X = nx(t, 0), A = na(t, 0), Y = ny(t, 0), C = nc(t);
    auto swap_aj = [&](int aj) {
      int a0 = aj / A, a1 = aj % A;
      return a1 * A + a0;
    };
    const long long AJ = njoint_actions(t);
    // kernels: p^0(x'|x, (a0,a1)) must equal p^1(x'|x, (a1,a0)), same for q.
    for (int x = 0; x < X; ++x)
      for (int aj = 0; aj < AJ; ++aj) {
        if (!is_admissible(t, 0, x, decode_actions(t, aj)[0]) ||
            !is_admissible(t, 1, x, decode_actions(t, swap_aj(aj))[1]))
          continue;
        for (int xp = 0; xp < nx_next(t, 0); ++xp)
          if (p(t, 0, x, aj, xp) != p(t, 1, x, swap_aj(aj), xp)) return false;
        for (int y = 0; y < Y; ++y)
          if (q(t, 0, x, aj, y) != q(t, 1, x, swap_aj(aj), y)) return false;
      }
    // utilities: phi^0(c, (x0,x1), (a0,a1)) == phi^1(c, (x1,x0), (a1,a0))
    for (int c = 0; c < C; ++c)
      for (int xj = 0; xj < njoint_local(t); ++xj) {
        auto x = decode_local(t, xj);
        int xs = x[1] * X + x[0];
        for (int aj = 0; aj < AJ; ++aj) {
          auto a = decode_actions(t, aj);
          if (!is_admissible(t, 0, x[0], a[0]) || !is_admissible(t, 1, x[1], a[1])) continue;
          double u0 = phi(t, 0, c, xj, aj);
          double u1 = phi(t, 1, c, xs, swap_aj(aj));
          if (u0 != u1) return false;
        }
        // public kernel symmetric in the action swap
        for (int aj = 0; aj < AJ; ++aj)
          for (int cp = 0; cp < nc_next(t); ++cp) {
            if (xj != 0) continue;  // c-loop only once
            if (pc(t, c, aj, cp) != pc(t, c, swap_aj(aj), cp)) return false;
          }
      }
  }
  if (initial_local[0] != initial_local[1]) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Validation

std::vector<std::string> validate_spec(const GameSpec& s) {
  std::vector<std::string> out;
  auto bad = [&](const std::string& m) { out.push_back(m); };

  if (s.horizon < 1) bad("horizon must be >= 1");
  if (s.num_agents < 1) bad("num_agents must be >= 1");
  if (!out.empty()) return out;

  auto check_sizes = [&](size_t got, size_t want, const std::string& what) {
    if (got != want) bad(what + ": expected " + std::to_string(want) + " entries, got " + std::to_string(got));
  };
  check_sizes(s.public_states.size(), s.horizon, "public_states");
  check_sizes(s.local_states.size(), s.horizon, "local_states");
  check_sizes(s.actions.size(), s.horizon, "actions");
  check_sizes(s.observations.size(), s.horizon, "observations");
  check_sizes(s.admissible.size(), s.horizon, "admissible");
  check_sizes(s.local_kernel.size(), s.horizon, "local_kernel");
  check_sizes(s.obs_kernel.size(), s.horizon, "obs_kernel");
  check_sizes(s.public_kernel.size(), s.horizon, "public_kernel");
  check_sizes(s.utility.size(), s.horizon, "utility");
  if (!out.empty()) return out;

  const int N = s.num_agents;
  for (int t = 1; t <= s.horizon; ++t) {
    if (static_cast<int>(s.local_states[t - 1].size()) != N || static_cast<int>(s.actions[t - 1].size()) != N ||
        static_cast<int>(s.observations[t - 1].size()) != N || static_cast<int>(s.admissible[t - 1].size()) != N ||
        static_cast<int>(s.local_kernel[t - 1].size()) != N || static_cast<int>(s.obs_kernel[t - 1].size()) != N ||
        static_cast<int>(s.utility[t - 1].size()) != N) {
      bad("t=" + std::to_string(t) + ": per-agent sections must have num_agents entries");
      return out;
    }
  }

  auto row_sum_check = [&](double sum, bool has_neg, bool has_nan, const std::string& what) {
    if (has_nan) {
      bad(what + ": undefined (NaN) entry in an admissible row");
      return;
    }
    if (has_neg) bad(what + ": negative probability entry");
    if (std::abs(sum - 1.0) > kRowTol) {
      std::ostringstream os;
      os << what << ": row sums to " << sum << " (|sum-1| > 1e-12)";
      bad(os.str());
    }
  };

  for (int t = 1; t <= s.horizon; ++t) {
    const long long AJ = s.njoint_actions(t);
    // admissible sets well-formed and nonempty
    for (int n = 0; n < N; ++n) {
      if (static_cast<int>(s.admissible[t - 1][n].size()) != s.nx(t, n)) {
        bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + ": admissible must list every local state");
        continue;
      }
      for (int x = 0; x < s.nx(t, n); ++x) {
        const auto& adm = s.admissible[t - 1][n][x];
        if (adm.empty())
          bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + " x=" +
              s.local_states[t - 1][n].symbols[x] + ": empty admissible action set");
        for (int a : adm)
          if (a < 0 || a >= s.na(t, n))
            bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + ": admissible action id out of range");
      }
    }

    // which joint actions need defined rows: every coordinate admissible somewhere
    std::vector<std::vector<char>> coord_ok(N);
    for (int n = 0; n < N; ++n) {
      coord_ok[n].assign(s.na(t, n), 0);
      for (int a : s.admissible_somewhere(t, n)) coord_ok[n][a] = 1;
    }
    auto profile_possible = [&](const std::vector<int>& a) {
      for (int n = 0; n < N; ++n)
        if (!coord_ok[n][a[n]]) return false;
      return true;
    };

    for (int n = 0; n < N; ++n) {
      const int X = s.nx(t, n), XP = s.nx_next(t, n), Y = s.ny(t, n);
      if (static_cast<long long>(s.local_kernel[t - 1][n].size()) != static_cast<long long>(X) * AJ * XP)
        bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + ": local kernel table has wrong size");
      if (static_cast<long long>(s.obs_kernel[t - 1][n].size()) != static_cast<long long>(X) * AJ * Y)
        bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + ": observation kernel table has wrong size");
      if (!out.empty() && (out.back().find("wrong size") != std::string::npos)) continue;

      for (int x = 0; x < X; ++x)
        for (int aj = 0; aj < AJ; ++aj) {
          auto a = s.decode_actions(t, aj);
          if (!s.is_admissible(t, n, x, a[n]) || !profile_possible(a)) continue;
          double ps = 0, qs = 0;
          bool pneg = false, qneg = false, pnan = false, qnan = false;
          for (int xp = 0; xp < XP; ++xp) {
            double v = s.p(t, n, x, aj, xp);
            if (std::isnan(v)) pnan = true;
            if (v < 0) pneg = true;
            ps += v;
          }
          for (int y = 0; y < Y; ++y) {
            double v = s.q(t, n, x, aj, y);
            if (std::isnan(v)) qnan = true;
            if (v < 0) qneg = true;
            qs += v;
          }
          std::string where = "t=" + std::to_string(t) + " agent=" + std::to_string(n) + " x=" +
                              s.local_states[t - 1][n].symbols[x] + " a=(";
          for (int k = 0; k < N; ++k) where += (k ? "," : "") + s.actions[t - 1][k].symbols[a[k]];
          where += ")";
          row_sum_check(ps, pneg, pnan, "local kernel " + where);
          row_sum_check(qs, qneg, qnan, "observation kernel " + where);
        }

      // utilities finite on admissible rows
      const long long XJ = s.njoint_local(t);
      if (static_cast<long long>(s.utility[t - 1][n].size()) != static_cast<long long>(s.nc(t)) * XJ * AJ) {
        bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + ": utility table has wrong size");
        continue;
      }
      for (int c = 0; c < s.nc(t); ++c)
        for (long long xj = 0; xj < XJ; ++xj) {
          auto x = s.decode_local(t, static_cast<int>(xj));
          for (int aj = 0; aj < AJ; ++aj) {
            auto a = s.decode_actions(t, aj);
            bool adm = true;
            for (int k = 0; k < N; ++k)
              if (!s.is_admissible(t, k, x[k], a[k])) adm = false;
            if (!adm) continue;
            double v = s.phi(t, n, c, static_cast<int>(xj), aj);
            if (!std::isfinite(v))
              bad("t=" + std::to_string(t) + " agent=" + std::to_string(n) + ": non-finite utility at an admissible (c,x,a)");
          }
        }
    }

    // public kernel rows
    if (static_cast<long long>(s.public_kernel[t - 1].size()) !=
        static_cast<long long>(s.nc(t)) * AJ * s.nc_next(t)) {
      bad("t=" + std::to_string(t) + ": public kernel table has wrong size");
    } else {
      for (int c = 0; c < s.nc(t); ++c)
        for (int aj = 0; aj < AJ; ++aj) {
          auto a = s.decode_actions(t, aj);
          if (!profile_possible(a)) continue;
          double sum = 0;
          bool neg = false, nan = false;
          for (int cp = 0; cp < s.nc_next(t); ++cp) {
            double v = s.pc(t, c, aj, cp);
            if (std::isnan(v)) nan = true;
            if (v < 0) neg = true;
            sum += v;
          }
          row_sum_check(sum, neg, nan,
                        "public kernel t=" + std::to_string(t) + " c=" + s.public_states[t - 1].symbols[c]);
        }
    }
  }

  // priors
  if (static_cast<int>(s.initial_local.size()) != N) {
    bad("initial.local must have one distribution per agent");
  } else {
    for (int n = 0; n < N; ++n) {
      if (static_cast<int>(s.initial_local[n].size()) != s.nx(1, n)) {
        bad("agent " + std::to_string(n) + ": initial local prior has wrong length");
        continue;
      }
      double sum = 0;
      bool neg = false;
      for (double v : s.initial_local[n]) {
        if (v < 0) neg = true;
        sum += v;
      }
      if (neg) bad("agent " + std::to_string(n) + ": negative initial prior entry");
      if (std::abs(sum - 1.0) > kRowTol) bad("agent " + std::to_string(n) + ": initial prior does not sum to 1");
    }
  }
  {
    double sum = 0;
    bool neg = false;
    if (static_cast<int>(s.initial_public.size()) != s.nc(1)) {
      bad("initial.public has wrong length");
    } else {
      for (double v : s.initial_public) {
        if (v < 0) neg = true;
        sum += v;
      }
      if (neg) bad("negative initial public prior entry");
      if (std::abs(sum - 1.0) > kRowTol) bad("initial public prior does not sum to 1");
    }
  }

  return out;
}

void validate_spec_or_throw(const GameSpec& spec) {
  auto diags = validate_spec(spec);
  if (diags.empty()) return;
  std::string msg = "spec validation failed:";
  for (const auto& d : diags) msg += "\n  - " + d;
  throw Error(Error::Kind::Validation, msg);
}

// ---------------------------------------------------------------------------
// Load / save

namespace {

std::vector<Alphabet> read_agent_alphabets(const json& j, int num_agents, const std::string& where) {
  if (!j.is_array() || static_cast<int>(j.size()) != num_agents)
    parse_fail(where, "expected one alphabet per agent");
  std::vector<Alphabet> out;
  for (int n = 0; n < num_agents; ++n) out.push_back(read_alphabet(j[n], where + "[" + std::to_string(n) + "]"));
  return out;
}

// rows: nested [r0][r1][col] table; null rows -> NaN fill.
std::vector<double> read_table3(const json& j, long long d0, long long d1, long long d2, const std::string& where) {
  if (!j.is_array() || static_cast<long long>(j.size()) != d0)
    parse_fail(where, "expected outer array of length " + std::to_string(d0));
  std::vector<double> out(static_cast<size_t>(d0 * d1 * d2), kNaN);
  for (long long i = 0; i < d0; ++i) {
    const json& ji = j[i];
    if (ji.is_null()) continue;
    if (!ji.is_array() || static_cast<long long>(ji.size()) != d1)
      parse_fail(where + "[" + std::to_string(i) + "]", "expected array of length " + std::to_string(d1));
    for (long long k = 0; k < d1; ++k) {
      const json& jk = ji[k];
      if (jk.is_null()) continue;
      std::string w = where + "[" + std::to_string(i) + "][" + std::to_string(k) + "]";
      if (!jk.is_array() || static_cast<long long>(jk.size()) != d2)
        parse_fail(w, "expected array of length " + std::to_string(d2));
      for (long long c = 0; c < d2; ++c) {
        const json& v = jk[c];
        if (v.is_null()) continue;
        out[(i * d1 + k) * d2 + c] = read_number(v, w + "[" + std::to_string(c) + "]");
      }
    }
  }
  return out;
}

json dump_table3(const std::vector<double>& flat, long long d0, long long d1, long long d2) {
  json out = json::array();
  for (long long i = 0; i < d0; ++i) {
    json ji = json::array();
    for (long long k = 0; k < d1; ++k) {
      json jk = json::array();
      for (long long c = 0; c < d2; ++c) {
        double v = flat[(i * d1 + k) * d2 + c];
        if (std::isnan(v))
          jk.push_back(nullptr);
        else
          jk.push_back(v);
      }
      ji.push_back(jk);
    }
    out.push_back(ji);
  }
  return out;
}

}  // namespace

GameSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Error::Kind::Parse, "cannot open model file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Error::Kind::Parse, "model file " + path + ": " + e.what());
  }

  GameSpec s;
  const json& meta = require(j, "meta", "");
  s.num_agents = static_cast<int>(read_number(require(meta, "num_agents", "meta"), "meta.num_agents"));
  s.horizon = static_cast<int>(read_number(require(meta, "horizon", "meta"), "meta.horizon"));
  if (s.num_agents < 1 || s.horizon < 1)
    parse_fail("meta", "num_agents and horizon must be positive integers");
  const int N = s.num_agents, T = s.horizon;

  const json& alpha = require(j, "alphabets", "");
  for (int t = 1; t <= T; ++t) {
    std::string wt = "alphabets@t=" + std::to_string(t);
    s.public_states.push_back(read_alphabet(timed(require(alpha, "public", "alphabets"), t, T, wt), wt + ".public"));
    s.local_states.push_back(read_agent_alphabets(timed(require(alpha, "local", "alphabets"), t, T, wt), N, wt + ".local"));
    s.actions.push_back(read_agent_alphabets(timed(require(alpha, "actions", "alphabets"), t, T, wt), N, wt + ".actions"));
    s.observations.push_back(
        read_agent_alphabets(timed(require(alpha, "observations", "alphabets"), t, T, wt), N, wt + ".observations"));
  }

  // admissible actions; if the section is absent every action is admissible
  s.admissible.resize(T);
  for (int t = 1; t <= T; ++t) {
    s.admissible[t - 1].resize(N);
    for (int n = 0; n < N; ++n) {
      std::vector<std::vector<int>> adm(s.nx(t, n));
      for (int x = 0; x < s.nx(t, n); ++x) {
        adm[x].resize(s.na(t, n));
        for (int a = 0; a < s.na(t, n); ++a) adm[x][a] = a;
      }
      s.admissible[t - 1][n] = std::move(adm);
    }
  }
  if (j.contains("admissible_actions")) {
    for (int t = 1; t <= T; ++t) {
      std::string wt = "admissible_actions@t=" + std::to_string(t);
      const json& per_agent = timed(j.at("admissible_actions"), t, T, wt);
      if (!per_agent.is_array() || static_cast<int>(per_agent.size()) != N)
        parse_fail(wt, "expected one map per agent");
      for (int n = 0; n < N; ++n) {
        const json& m = per_agent[n];
        if (!m.is_object()) parse_fail(wt, "expected an object mapping local-state symbol to action list");
        for (int x = 0; x < s.nx(t, n); ++x) {
          const std::string& xs = s.local_states[t - 1][n].symbols[x];
          if (!m.contains(xs)) parse_fail(wt, "agent " + std::to_string(n) + ": missing local state '" + xs + "'");
          std::vector<int> ids;
          for (const auto& as : m.at(xs)) {
            int a = s.actions[t - 1][n].index_of(as.get<std::string>());
            if (a < 0) parse_fail(wt, "unknown action symbol '" + as.get<std::string>() + "'");
            ids.push_back(a);
          }
          std::sort(ids.begin(), ids.end());
          ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
          s.admissible[t - 1][n][x] = std::move(ids);
        }
      }
    }
  }

  const json& kernels = require(j, "kernels", "");
  s.local_kernel.resize(T);
  s.obs_kernel.resize(T);
  s.public_kernel.resize(T);
  s.utility.resize(T);
  for (int t = 1; t <= T; ++t) {
    const long long AJ = s.njoint_actions(t);
    {
      std::string wt = "kernels.local@t=" + std::to_string(t);
      const json& per_agent = timed(require(kernels, "local", "kernels"), t, T, wt);
      if (!per_agent.is_array() || static_cast<int>(per_agent.size()) != N) parse_fail(wt, "expected one table per agent");
      for (int n = 0; n < N; ++n)
        s.local_kernel[t - 1].push_back(
            read_table3(per_agent[n], s.nx(t, n), AJ, s.nx_next(t, n), wt + "[" + std::to_string(n) + "]"));
    }
    {
      std::string wt = "kernels.obs@t=" + std::to_string(t);
      const json& per_agent = timed(require(kernels, "obs", "kernels"), t, T, wt);
      if (!per_agent.is_array() || static_cast<int>(per_agent.size()) != N) parse_fail(wt, "expected one table per agent");
      for (int n = 0; n < N; ++n)
        s.obs_kernel[t - 1].push_back(
            read_table3(per_agent[n], s.nx(t, n), AJ, s.ny(t, n), wt + "[" + std::to_string(n) + "]"));
    }
    {
      std::string wt = "kernels.public@t=" + std::to_string(t);
      s.public_kernel[t - 1] =
          read_table3(timed(require(kernels, "public", "kernels"), t, T, wt), s.nc(t), AJ, s.nc_next(t), wt);
    }
    {
      std::string wt = "utilities@t=" + std::to_string(t);
      const json& per_agent = timed(require(j, "utilities", ""), t, T, wt);
      if (!per_agent.is_array() || static_cast<int>(per_agent.size()) != N) parse_fail(wt, "expected one table per agent");
      for (int n = 0; n < N; ++n)
        s.utility[t - 1].push_back(
            read_table3(per_agent[n], s.nc(t), s.njoint_local(t), AJ, wt + "[" + std::to_string(n) + "]"));
    }
  }

  const json& init = require(j, "initial", "");
  s.initial_public = read_dist(require(init, "public", "initial"), s.nc(1), "initial.public");
  if (init.contains("local_joint")) {
    // Joint prior table: accepted only when it factorizes (the model assumes
    // mutually independent primitive random variables).
    long long XJ = s.njoint_local(1);
    std::vector<double> joint = read_dist(init.at("local_joint"), static_cast<int>(XJ), "initial.local_joint");
    std::vector<std::vector<double>> marg(N);
    for (int n = 0; n < N; ++n) marg[n].assign(s.nx(1, n), 0.0);
    for (long long xj = 0; xj < XJ; ++xj) {
      auto x = s.decode_local(1, static_cast<int>(xj));
      for (int n = 0; n < N; ++n) marg[n][x[n]] += joint[xj];
    }
    for (long long xj = 0; xj < XJ; ++xj) {
      auto x = s.decode_local(1, static_cast<int>(xj));
      double prod = 1;
      for (int n = 0; n < N; ++n) prod *= marg[n][x[n]];
      if (std::abs(prod - joint[xj]) > 1e-9)
        throw Error(Error::Kind::Validation,
                    "initial.local_joint is not product-form: the model requires the primitive random "
                    "variables C_1, X^1_1, ..., X^N_1 to be mutually independent");
    }
    s.initial_local = std::move(marg);
  } else {
    const json& loc = require(init, "local", "initial");
    if (!loc.is_array() || static_cast<int>(loc.size()) != N) parse_fail("initial.local", "expected one prior per agent");
    for (int n = 0; n < N; ++n)
      s.initial_local.push_back(read_dist(loc[n], s.nx(1, n), "initial.local[" + std::to_string(n) + "]"));
  }

  validate_spec_or_throw(s);
  return s;
}

namespace {

json alphabet_json(const Alphabet& a) {
  json out = json::array();
  for (const auto& sym : a.symbols) out.push_back(sym);
  return out;
}

json spec_to_json(const GameSpec& s) {
  const int N = s.num_agents, T = s.horizon;
  json j;
  j["meta"] = {{"num_agents", N}, {"horizon", T}};

  auto per_t = [&](auto&& fn) {
    json m;
    for (int t = 1; t <= T; ++t) m[std::to_string(t)] = fn(t);
    return json{{"per_t", m}};
  };

  j["alphabets"]["public"] = per_t([&](int t) { return alphabet_json(s.public_states[t - 1]); });
  j["alphabets"]["local"] = per_t([&](int t) {
    json a = json::array();
    for (int n = 0; n < N; ++n) a.push_back(alphabet_json(s.local_states[t - 1][n]));
    return a;
  });
  j["alphabets"]["actions"] = per_t([&](int t) {
    json a = json::array();
    for (int n = 0; n < N; ++n) a.push_back(alphabet_json(s.actions[t - 1][n]));
    return a;
  });
  j["alphabets"]["observations"] = per_t([&](int t) {
    json a = json::array();
    for (int n = 0; n < N; ++n) a.push_back(alphabet_json(s.observations[t - 1][n]));
    return a;
  });

  j["admissible_actions"] = per_t([&](int t) {
    json a = json::array();
    for (int n = 0; n < N; ++n) {
      json m;
      for (int x = 0; x < s.nx(t, n); ++x) {
        json lst = json::array();
        for (int id : s.admissible[t - 1][n][x]) lst.push_back(s.actions[t - 1][n].symbols[id]);
        m[s.local_states[t - 1][n].symbols[x]] = lst;
      }
      a.push_back(m);
    }
    return a;
  });

  j["kernels"]["local"] = per_t([&](int t) {
    json a = json::array();
    for (int n = 0; n < N; ++n)
      a.push_back(dump_table3(s.local_kernel[t - 1][n], s.nx(t, n), s.njoint_actions(t), s.nx_next(t, n)));
    return a;
  });
  j["kernels"]["obs"] = per_t([&](int t) {
    json a = json::array();
    for (int n = 0; n < N; ++n)
      a.push_back(dump_table3(s.obs_kernel[t - 1][n], s.nx(t, n), s.njoint_actions(t), s.ny(t, n)));
    return a;
  });
  j["kernels"]["public"] = per_t([&](int t) {
    return dump_table3(s.public_kernel[t - 1], s.nc(t), s.njoint_actions(t), s.nc_next(t));
  });
  j["utilities"] = per_t([&](int t) {
    json a = json::array();
    for (int n = 0; n < N; ++n)
      a.push_back(dump_table3(s.utility[t - 1][n], s.nc(t), s.njoint_local(t), s.njoint_actions(t)));
    return a;
  });

  j["initial"]["public"] = s.initial_public;
  json loc = json::array();
  for (int n = 0; n < N; ++n) loc.push_back(s.initial_local[n]);
  j["initial"]["local"] = loc;
  return j;
}

}  // namespace

void save_spec(const GameSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Error::Kind::Parse, "cannot write model file: " + path);
  out << spec_to_json(spec).dump(1) << "\n";
}

std::uint64_t fingerprint(const GameSpec& spec) {
  std::string blob = spec_to_json(spec).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : blob) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cib
