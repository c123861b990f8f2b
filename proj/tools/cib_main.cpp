#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cib/dp_solver.hpp"
#include "cib/game_m.hpp"
#include "cib/game_spec.hpp"
#include "cib/mac.hpp"
#include "cib/verifier.hpp"

namespace {

using namespace cib;

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case Error::Kind::Parse:
    case Error::Kind::Validation:
      return 1;
    case Error::Kind::Certification:
    case Error::Kind::Internal:
      return 2;
    case Error::Kind::Budget:
      return 3;
  }
  return 2;
}

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty() || !s.empty()) out.push_back(cur);
  return out;
}

// "a,b;c,d" -> per time step, per agent symbol ids
std::vector<std::vector<int>> parse_profiles(const GameSpec& spec, const std::string& text,
                                             bool actions, int first_t) {
  std::vector<std::vector<int>> out;
  if (text.empty()) return out;
  int t = first_t;
  for (const auto& step : split(text, ';')) {
    auto syms = split(step, ',');
    if (static_cast<int>(syms.size()) != spec.num_agents)
      throw Error(Error::Kind::Parse, "history step '" + step + "' must list one symbol per agent");
    std::vector<int> ids(spec.num_agents);
    for (int n = 0; n < spec.num_agents; ++n) {
      const Alphabet& alpha = actions ? spec.actions[t - 1][n] : spec.observations[t - 1][n];
      ids[n] = alpha.index_of(syms[n]);
      if (ids[n] < 0)
        throw Error(Error::Kind::Parse, "unknown symbol '" + syms[n] + "' at t=" + std::to_string(t));
    }
    out.push_back(ids);
    ++t;
  }
  return out;
}

int cmd_solve(const std::string& spec_path, const std::string& out_dir, int grid_m, double bne_tol,
              double cons_tol, int max_iters, int restarts, double damping, bool no_grid_fallback,
              bool symmetric, bool nearest, const std::string& pihat, std::uint64_t seed, int threads,
              long long budget, bool enumerate) {
  GameSpec spec = load_spec(spec_path);
  DpConfig cfg;
  cfg.grid_m = grid_m;
  cfg.stage.bne_tol = bne_tol;
  cfg.stage.consistency_tol = cons_tol;
  cfg.stage.max_iters = max_iters;
  cfg.stage.restarts = restarts;
  cfg.stage.damping = damping;
  cfg.stage.grid_fallback = !no_grid_fallback;
  cfg.stage.symmetric_mode = symmetric;
  cfg.stage.seed = seed;
  cfg.stage.enumerate_all = enumerate;
  cfg.interp_nearest = nearest;
  cfg.threads = threads;
  cfg.grid_budget = budget;
  if (pihat == "aliased")
    cfg.interior_mode = PiHatMode::Aliased;
  else if (pihat == "crossed")
    cfg.interior_mode = PiHatMode::Crossed;
  else if (pihat == "auto")
    cfg.interior_mode = detect_game_m(spec).valid ? PiHatMode::Aliased : PiHatMode::Crossed;
  else
    throw Error(Error::Kind::Parse, "--pihat must be crossed, aliased or auto");

  EquilibriumBundle bundle = backward_induct(spec, cfg);
  save_bundle(bundle, spec, out_dir);

  if (enumerate) {
    for (int t = 1; t <= spec.horizon; ++t) {
      std::ofstream out(std::filesystem::path(out_dir) / ("equilibria_t" + std::to_string(t) + ".csv"));
      out << "cell,equilibrium,agent,x,action,probability\n";
      const StageTable& table = bundle.stages[t - 1];
      for (long long cell = 0; cell < static_cast<long long>(table.cells.size()); ++cell) {
        const auto& eqs = table.cells[cell].all_equilibria;
        for (size_t e = 0; e < eqs.size(); ++e)
          for (int n = 0; n < spec.num_agents; ++n)
            for (int x = 0; x < spec.nx(t, n); ++x)
              for (int a : spec.admissible_at(t, n, x)) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.17g", eqs[e].probs[n][x][a]);
                out << cell << "," << e << "," << (n + 1) << "," << spec.local_states[t - 1][n].symbols[x]
                    << "," << spec.actions[t - 1][n].symbols[a] << "," << buf << "\n";
              }
      }
    }
  }

  std::cout << "solved " << spec_path << " on grid m=" << grid_m << "\n"
            << "  worst BNE gap:             " << bundle.worst_gap << "\n"
            << "  worst consistency residual " << bundle.worst_consistency << "\n"
            << "  complete:                  " << (bundle.complete ? "yes" : "NO (failed cells)") << "\n"
            << "  bundle written to " << out_dir << "\n";
  return bundle.complete ? 0 : 2;
}

int cmd_verify(const std::string& spec_path, const std::string& bundle_dir, double eps,
               long long mc_samples, const std::string& report_path) {
  GameSpec spec = load_spec(spec_path);
  EquilibriumBundle bundle = load_bundle(bundle_dir, spec);
  VerifyTolerances tol;
  tol.eps = eps;
  tol.mc_samples = mc_samples;
  VerifyReport rep = verify_cib_pbe(spec, bundle, tol);
  std::string text = rep.to_text();
  std::cout << text;
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << text;
    rep.write_gap_csv(report_path + ".gaps.csv");
  }
  return rep.pass ? 0 : 2;
}

int cmd_mac(double p, double c, int T, int grid_m, std::uint64_t seed, int threads,
            const std::string& out_dir, const std::string& emit_spec) {
  MacParams params{p, c, T};
  GameSpec spec = mac_spec(params);
  if (!emit_spec.empty()) {
    save_spec(spec, emit_spec);
    if (out_dir.empty()) {
      std::cout << "model written to " << emit_spec << "\n";
      return 0;
    }
  }
  std::filesystem::create_directories(out_dir);
  save_spec(spec, (std::filesystem::path(out_dir) / "model.json").string());

  DpConfig cfg;
  cfg.grid_m = grid_m;
  cfg.stage.symmetric_mode = true;
  cfg.stage.seed = seed;
  cfg.threads = threads;
  EquilibriumBundle bundle = backward_induct(spec, cfg);
  save_bundle(bundle, spec, out_dir);

  // closed-form comparison at the last stage, away from the threshold band
  const double cs = params.c_star();
  const int t2 = T;
  const StageTable& table = bundle.stages[t2 - 1];
  double beta_err = 0.0, value_err = 0.0;
  long long compared = 0;
  {
    std::ofstream bcsv(std::filesystem::path(out_dir) / "beta2_compare.csv");
    bcsv << "pi1,pi2,beta1_solved,beta2_solved,beta1_closed,beta2_closed,err\n";
    std::ofstream vcsv(std::filesystem::path(out_dir) / "value2_compare.csv");
    vcsv << "pi1,pi2,agent,x,value_solved,value_closed,err\n";
    for (long long cell = 0; cell < static_cast<long long>(table.cells.size()); ++cell) {
      const CellRecord& rec = table.cells[cell];
      double pi1 = rec.state.pi.marginals[0][1];
      double pi2 = rec.state.pi.marginals[1][1];
      if (std::abs(pi1 - cs) <= 1e-3 || std::abs(pi2 - cs) <= 1e-3) continue;
      ++compared;
      auto [b1, b2] = mac_beta2_closed_form(pi1, pi2, params);
      double s1 = rec.lambda.probs[0][1][1];
      double s2 = rec.lambda.probs[1][1][1];
      double err = std::max(std::abs(s1 - b1), std::abs(s2 - b2));
      beta_err = std::max(beta_err, err);
      bcsv << pi1 << "," << pi2 << "," << s1 << "," << s2 << "," << b1 << "," << b2 << "," << err << "\n";
      for (int n = 0; n < 2; ++n)
        for (int x = 0; x < 2; ++x) {
          double closed = mac_value2_closed_form(n, x, pi1, pi2, params);
          double err_v = std::abs(rec.value[n][x] - closed);
          value_err = std::max(value_err, err_v);
          vcsv << pi1 << "," << pi2 << "," << (n + 1) << "," << x << "," << rec.value[n][x] << "," << closed
               << "," << err_v << "\n";
        }
    }
  }

  std::cout << "mac: p=" << p << " c=" << c << " T=" << T << " grid m=" << grid_m << "\n"
            << "  threshold c* = " << cs << "\n"
            << "  worst BNE gap:              " << bundle.worst_gap << "\n"
            << "  worst consistency residual: " << bundle.worst_consistency << "\n"
            << "  last-stage closed-form comparison over " << compared << " cells (band excluded):\n"
            << "    max |beta - closed form|  = " << beta_err << "\n"
            << "    max |value - closed form| = " << value_err << "\n"
            << "  bundle written to " << out_dir << "\n";
  bool ok = bundle.complete && beta_err <= 1e-6 && value_err <= 1e-9;
  if (!ok) std::cout << "  CLOSED-FORM CHECK FAILED\n";
  return ok ? 0 : 2;
}

int cmd_gen_game_m(std::uint64_t seed, int agents, int horizon, int local, int actions, int obs,
                   const std::string& epochs, bool zero_util, const std::string& out_path) {
  GameMSizes sizes;
  sizes.num_agents = agents;
  sizes.horizon = horizon;
  sizes.num_local = local;
  sizes.num_actions = actions;
  sizes.num_obs = obs;
  sizes.zero_utilities = zero_util;
  if (!epochs.empty())
    for (const auto& s : split(epochs, ','))
      sizes.epochs.push_back(std::stoi(s));
  GameSpec spec = game_m_generate(seed, sizes);
  save_spec(spec, out_path);
  std::cout << "game-m instance (seed " << seed << ") written to " << out_path << "\n";
  return 0;
}

int cmd_solve_game_m(const std::string& spec_path, const std::string& out_dir,
                     const std::string& report_path) {
  GameSpec spec = load_spec(spec_path);
  GameMReport rep;
  EquilibriumBundle bundle = game_m_solve(spec, &rep);
  save_bundle(bundle, spec, out_dir);
  std::ostringstream os;
  os << "game-m solve (exact reachable tree)\n"
     << "  nodes:                      " << rep.nodes << "\n"
     << "  solver path:                " << rep.solver_path << "\n"
     << "  pooled slices:              " << (rep.pooled ? "yes" : "NO") << "\n"
     << "  psi* == signaling-free:     " << (rep.psi_equals_sf ? "yes (bitwise)" : "NO") << "\n"
     << "  decomposition residual:     " << rep.decomposition_residual << "\n"
     << "  worst BNE gap:              " << rep.worst_gap << "\n"
     << "  worst consistency residual: " << rep.worst_consistency << "\n";
  std::cout << os.str();
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << os.str();
  }
  std::cout << "  bundle written to " << out_dir << "\n";
  return 0;
}

int cmd_oracle(const std::string& spec_path, int t, const std::string& pub, const std::string& actions,
               const std::string& obs, int agent, const std::string& own, const std::string& bundle_dir,
               bool full_belief) {
  GameSpec spec = load_spec(spec_path);

  auto acts = parse_profiles(spec, actions, /*actions=*/true, 1);
  auto ys = parse_profiles(spec, obs, /*actions=*/false, 1);
  if (ys.empty() && t > 1) {
    // all observation alphabets singleton: fill implicitly
    for (int tau = 1; tau < t; ++tau) {
      for (int n = 0; n < spec.num_agents; ++n)
        if (spec.ny(tau, n) != 1)
          throw Error(Error::Kind::Parse, "--obs required: observation alphabets are not singletons");
      ys.push_back(std::vector<int>(spec.num_agents, 0));
    }
  }
  if (static_cast<int>(acts.size()) != t - 1 || static_cast<int>(ys.size()) != t - 1)
    throw Error(Error::Kind::Parse, "need t-1 action and observation steps for t=" + std::to_string(t));

  if (full_belief) {
    if (bundle_dir.empty()) throw Error(Error::Kind::Parse, "--full-belief requires --bundle");
    CommonHistory hc;
    if (pub.empty()) {
      for (int tau = 1; tau <= t; ++tau) {
        if (spec.nc(tau) != 1) throw Error(Error::Kind::Parse, "--pub required: public alphabet is not a singleton");
        hc.pub.push_back(0);
      }
    } else {
      auto syms = split(pub, ';');
      if (static_cast<int>(syms.size()) != t) throw Error(Error::Kind::Parse, "--pub must list t symbols");
      for (int tau = 1; tau <= t; ++tau) {
        int c = spec.public_states[tau - 1].index_of(syms[tau - 1]);
        if (c < 0) throw Error(Error::Kind::Parse, "unknown public symbol '" + syms[tau - 1] + "'");
        hc.pub.push_back(c);
      }
    }
    hc.actions = acts;
    hc.obs = ys;
    EquilibriumBundle bundle = load_bundle(bundle_dir, spec);
    BundlePolicy policy(spec, bundle);
    FullBelief fb = construct_full_belief(spec, policy, hc);
    for (int k = 0; k < spec.num_agents; ++k) {
      std::cout << "mu^c over agent-" << (k + 1) << " trajectories (x_1..x_" << t << " : prob | signaling-free):\n";
      for (long long i = 0; i < static_cast<long long>(fb.traj[k].size()); ++i) {
        // decode
        std::vector<int> ow(t);
        long long rem = i;
        for (int tau = t; tau >= 1; --tau) {
          ow[tau - 1] = static_cast<int>(rem % spec.nx(tau, k));
          rem /= spec.nx(tau, k);
        }
        std::cout << "  ";
        for (int tau = 1; tau <= t; ++tau) std::cout << spec.local_states[tau - 1][k].symbols[ow[tau - 1]];
        std::cout << " : " << fb.traj[k][i] << " | " << fb.sf_traj[k][i] << "\n";
      }
    }
    return 0;
  }

  OracleQuery query;
  query.t = t;
  query.actions = acts;
  query.observations = ys;
  if (agent > 0) {
    query.agent = agent - 1;
    auto syms = split(own, ';');
    if (static_cast<int>(syms.size()) != t)
      throw Error(Error::Kind::Parse, "--own must list t local-state symbols");
    for (int tau = 1; tau <= t; ++tau) {
      int x = spec.local_states[tau - 1][query.agent].index_of(syms[tau - 1]);
      if (x < 0) throw Error(Error::Kind::Parse, "unknown local symbol '" + syms[tau - 1] + "'");
      query.own_trajectory.push_back(x);
    }
  }
  TrajectoryDist dist = joint_bayes_oracle(spec, query);
  std::cout << "signaling-free conditional over histories of states (t=" << t << ")\n";
  for (int tau = 1; tau <= t; ++tau)
    for (int n = 0; n < spec.num_agents; ++n) {
      auto m = dist.marginal(tau, n);
      std::cout << "  X^" << (n + 1) << "_" << tau << ":";
      for (int x = 0; x < spec.nx(tau, n); ++x)
        std::cout << " " << spec.local_states[tau - 1][n].symbols[x] << "=" << m[x];
      std::cout << "\n";
    }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Common-information based perfect Bayesian equilibria for finite dynamic games"};
  app.require_subcommand(1);

  // solve
  std::string spec_path, out_dir, pihat = "auto";
  int grid_m = 20, threads = 0;
  double bne_tol = 1e-6, cons_tol = 1e-9, eps = 1e-4, damping = 0.5;
  int max_iters = 10000, restarts = 16;
  bool no_grid_fallback = false;
  std::uint64_t seed = 1;
  long long budget = 2'000'000, mc_samples = 0;
  bool symmetric = false, nearest = false, enumerate = false;
  auto* solve = app.add_subcommand("solve", "backward induction over a belief grid");
  solve->add_option("--spec", spec_path, "model file")->required();
  solve->add_option("--grid", grid_m, "belief grid resolution m");
  solve->add_option("--tol", bne_tol, "stage BNE tolerance");
  solve->add_option("--consistency-tol", cons_tol, "update-rule consistency tolerance");
  solve->add_option("--max-iters", max_iters, "best-response iteration budget per cell");
  solve->add_option("--restarts", restarts, "random restarts per cell");
  solve->add_option("--damping", damping, "best-response damping factor");
  solve->add_flag("--no-grid-fallback", no_grid_fallback, "disable the hypercube scan fallback");
  solve->add_flag("--symmetric", symmetric, "exploit two-agent symmetry");
  solve->add_flag("--nearest", nearest, "nearest-neighbor value interpolation");
  solve->add_flag("--enumerate", enumerate, "record all stage equilibria found");
  solve->add_option("--pihat", pihat, "interior pihat layout: crossed|aliased|auto");
  solve->add_option("--seed", seed, "solver seed");
  solve->add_option("--threads", threads, "worker threads (0 = hardware)");
  solve->add_option("--grid-budget", budget, "max grid cells per stage");
  solve->add_option("--out", out_dir, "bundle output directory")->required();

  // verify
  std::string bundle_dir, report_path;
  auto* verify = app.add_subcommand("verify", "independently certify a bundle");
  verify->add_option("--spec", spec_path, "model file")->required();
  verify->add_option("--bundle", bundle_dir, "bundle directory")->required();
  verify->add_option("--eps", eps, "total deviation tolerance");
  verify->add_option("--mc-samples", mc_samples, "rollout samples per checked cell (0 = off)");
  verify->add_option("--out", report_path, "report file (also writes <out>.gaps.csv)");

  // mac
  double mac_p = 0.5, mac_c = 2.0;
  int mac_T = 2;
  std::string emit_spec;
  auto* mac = app.add_subcommand("mac", "multiple access broadcast example");
  mac->add_option("--p", mac_p, "arrival probability");
  mac->add_option("--c", mac_c, "dropping cost");
  mac->add_option("--T", mac_T, "horizon");
  mac->add_option("--grid", grid_m, "belief grid resolution m");
  mac->add_option("--seed", seed, "solver seed");
  mac->add_option("--threads", threads, "worker threads");
  mac->add_option("--out", out_dir, "bundle output directory");
  mac->add_option("--emit-spec", emit_spec, "also write the model file here");

  // gen-game-m
  int gm_agents = 2, gm_T = 3, gm_local = 2, gm_actions = 2, gm_obs = 2;
  std::string gm_epochs, gm_out;
  bool gm_zero = false;
  std::uint64_t gm_seed = 1;
  auto* gen = app.add_subcommand("gen-game-m", "generate an uncontrolled-dynamics instance");
  gen->add_option("--seed", gm_seed, "generator seed");
  gen->add_option("--agents", gm_agents, "number of agents");
  gen->add_option("--horizon", gm_T, "horizon");
  gen->add_option("--local", gm_local, "local-state alphabet size");
  gen->add_option("--actions", gm_actions, "mover action alphabet size");
  gen->add_option("--obs", gm_obs, "epoch observation alphabet size");
  gen->add_option("--epochs", gm_epochs, "comma list of evolution epochs (default: every N-th step)");
  gen->add_flag("--zero-utilities", gm_zero, "all utilities zero");
  gen->add_option("--out", gm_out, "model file to write")->required();

  // solve-game-m
  auto* sgm = app.add_subcommand("solve-game-m", "exact reachable-tree solve for Game M structure");
  sgm->add_option("--spec", spec_path, "model file")->required();
  sgm->add_option("--out", out_dir, "bundle output directory")->required();
  sgm->add_option("--report", report_path, "report file");

  // oracle
  int or_t = 1, or_agent = 0;
  std::string or_pub, or_actions, or_obs, or_own;
  bool or_full = false;
  auto* oracle = app.add_subcommand("oracle", "signaling-free joint Bayes / full-belief debugging");
  oracle->add_option("--spec", spec_path, "model file")->required();
  oracle->add_option("--t", or_t, "time of the queried belief")->required();
  oracle->add_option("--pub", or_pub, "public symbols c_1..c_t, ';'-separated");
  oracle->add_option("--actions", or_actions, "action profiles a_1..a_{t-1}: per step 'a1,a2', steps ';'-separated");
  oracle->add_option("--obs", or_obs, "observation profiles, same format");
  oracle->add_option("--agent", or_agent, "condition on this agent's own trajectory (1-based)");
  oracle->add_option("--own", or_own, "own local-state symbols x_1..x_t, ';'-separated");
  oracle->add_option("--bundle", bundle_dir, "bundle for --full-belief");
  oracle->add_flag("--full-belief", or_full, "construct the (lambda,psi) belief system instead");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed())
      return cmd_solve(spec_path, out_dir, grid_m, bne_tol, cons_tol, max_iters, restarts, damping,
                       no_grid_fallback, symmetric, nearest, pihat, seed, threads, budget, enumerate);
    if (verify->parsed()) return cmd_verify(spec_path, bundle_dir, eps, mc_samples, report_path);
    if (mac->parsed()) {
      if (out_dir.empty() && emit_spec.empty())
        throw Error(Error::Kind::Parse, "mac: need --out and/or --emit-spec");
      return cmd_mac(mac_p, mac_c, mac_T, grid_m, seed, threads, out_dir, emit_spec);
    }
    if (gen->parsed())
      return cmd_gen_game_m(gm_seed, gm_agents, gm_T, gm_local, gm_actions, gm_obs, gm_epochs, gm_zero, gm_out);
    if (sgm->parsed()) return cmd_solve_game_m(spec_path, out_dir, report_path);
    if (oracle->parsed())
      return cmd_oracle(spec_path, or_t, or_pub, or_actions, or_obs, or_agent, or_own, bundle_dir, or_full);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
