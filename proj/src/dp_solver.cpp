#include "cib/dp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include "cib/rng.hpp"
#include "cib/stage_game.hpp"
#include "json.hpp"

namespace cib {

namespace {

std::string state_key(const CIBState& b) {
  std::string key;
  key.reserve(8 + 16 * 2 * b.pi.marginals.size());
  key.append(reinterpret_cast<const char*>(&b.pub), sizeof(b.pub));
  auto push = [&](const std::vector<double>& v) {
    key.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  };
  for (const auto& m : b.pi.marginals) push(m);
  for (const auto& m : b.pihat.marginals) push(m);
  return key;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

long long StageTable::locate(const CIBState& b) const {
  if (mode == DpMode::Grid) return layout.nearest_cell(b);
  // exact node match
  for (long long i = 0; i < static_cast<long long>(cells.size()); ++i) {
    const CIBState& s = cells[i].state;
    if (s.pub != b.pub) continue;
    if (s.pi.marginals == b.pi.marginals && s.pihat.marginals == b.pihat.marginals) return i;
  }
  throw Error(Error::Kind::Internal, "tree bundle: no node matches the queried state at t=" +
                                         std::to_string(time));
}

double TableValueSource::eval(int n, int x, const CIBState& b) const {
  if (table_->mode == DpMode::Tree) {
    long long cell = table_->locate(b);
    return table_->cells[cell].value[n][x];
  }
  auto stencil = table_->layout.stencil(b, nearest_);
  if (stencil.size() == 1) return table_->cells[stencil[0].first].value[n][x];
  double acc = 0.0;
  for (const auto& [cell, w] : stencil) acc += w * table_->cells[cell].value[n][x];
  return acc;
}

std::vector<std::vector<double>> value_update(const GameSpec& spec, const ValueSource& vnext,
                                              const StrategySlice& lambda, const UpdateSlice& psi,
                                              const CIBState& b) {
  const int t = b.time;
  StageGame stage = build_stage_game(spec, vnext, psi, b);
  std::vector<std::vector<double>> out(spec.num_agents);
  for (int n = 0; n < spec.num_agents; ++n) {
    out[n].resize(spec.nx(t, n));
    for (int x = 0; x < spec.nx(t, n); ++x) {
      double v = 0.0;
      for (int a : spec.admissible_at(t, n, x)) {
        double w = lambda.probs[n][x][a];
        if (w > 0.0) v += w * expected_payoff(stage, n, x, a, lambda);
      }
      out[n][x] = v;
    }
  }
  return out;
}

namespace {

// Swap the two agents' roles in a record (symmetric-mode mirroring).
CellRecord mirror_record(const GameSpec& spec, const CellRecord& src, const CIBState& state) {
  const int t = state.time;
  const int A = spec.na(t, 0);
  auto swap_aj = [&](int aj) { return (aj % A) * A + aj / A; };
  CellRecord out;
  out.state = state;
  out.gap = src.gap;
  out.consistency = src.consistency;
  out.failed = src.failed;
  out.method = src.method;
  out.lambda.time = t;
  out.lambda.probs = {src.lambda.probs[1], src.lambda.probs[0]};
  out.psi.time = t;
  out.psi.next.resize(2);
  for (int n = 0; n < 2; ++n) {
    out.psi.next[n].resize(src.psi.next[1 - n].size());
    for (size_t y = 0; y < out.psi.next[n].size(); ++y) {
      out.psi.next[n][y].resize(src.psi.next[1 - n][y].size());
      for (size_t aj = 0; aj < out.psi.next[n][y].size(); ++aj)
        out.psi.next[n][y][aj] = src.psi.next[1 - n][y][swap_aj(static_cast<int>(aj))];
    }
  }
  out.value = {src.value[1], src.value[0]};
  for (const auto& eq : src.all_equilibria) {
    StrategySlice s;
    s.time = t;
    s.probs = {eq.probs[1], eq.probs[0]};
    out.all_equilibria.push_back(std::move(s));
  }
  return out;
}

void parallel_for(long long count, int threads, const std::function<void(long long)>& body) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = static_cast<int>(std::max<long long>(1, std::min<long long>(threads, count == 0 ? 1 : count)));
  if (threads == 1 || count < 2) {
    for (long long i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::future<void>> futs;
  const long long chunk = (count + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    long long lo = w * chunk, hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    futs.push_back(std::async(std::launch::async, [lo, hi, &body] {
      for (long long i = lo; i < hi; ++i) body(i);
    }));
  }
  for (auto& f : futs) f.get();
}

}  // namespace

EquilibriumBundle backward_induct(const GameSpec& spec, const DpConfig& config) {
  validate_spec_or_throw(spec);
  const int T = spec.horizon;
  EquilibriumBundle bundle;
  bundle.spec_fingerprint = fingerprint(spec);
  bundle.config = config;
  bundle.stages.resize(T);

  const bool mirror_sweep =
      config.stage.symmetric_mode && spec.num_agents == 2 && spec.agent_symmetric();

  ZeroValueSource zero;
  std::unique_ptr<TableValueSource> next_source;

  for (int t = T; t >= 1; --t) {
    StageTable& table = bundle.stages[t - 1];
    table.time = t;
    table.mode = DpMode::Grid;
    PiHatMode mode = (t == T) ? PiHatMode::Dropped
                              : (t == 1 ? PiHatMode::Aliased : config.interior_mode);
    table.layout = make_belief_grid(spec, t, config.grid_m, mode, config.grid_budget);
    const long long count = table.layout.cells();
    table.cells.resize(count);

    const ValueSource& vnext = (t == T) ? static_cast<const ValueSource&>(zero)
                                        : static_cast<const ValueSource&>(*next_source);

    parallel_for(count, config.threads, [&](long long cell) {
      if (mirror_sweep && table.layout.mirror_cell(cell) < cell) return;  // filled by mirroring
      CIBState b = table.layout.state_of(spec, cell);
      SolverConfig cfg = config.stage;
      cfg.seed = Rng::derive(config.stage.seed, static_cast<std::uint64_t>(t),
                             static_cast<std::uint64_t>(cell));
      StageSolution sol = solve_bne_consistent(spec, vnext, b, cfg);
      CellRecord& rec = table.cells[cell];
      rec.state = std::move(b);
      rec.lambda = std::move(sol.lambda);
      rec.psi = std::move(sol.psi);
      rec.gap = sol.gap;
      rec.consistency = sol.consistency;
      rec.failed = !sol.ok;
      rec.method = sol.method;
      rec.all_equilibria = std::move(sol.all_equilibria);
      rec.value = value_update(spec, vnext, rec.lambda, rec.psi, rec.state);
    });

    if (mirror_sweep) {
      for (long long cell = 0; cell < count; ++cell) {
        long long m = table.layout.mirror_cell(cell);
        if (m < cell) table.cells[cell] = mirror_record(spec, table.cells[m], table.layout.state_of(spec, cell));
      }
    }

    for (const auto& rec : table.cells) {
      bundle.worst_gap = std::max(bundle.worst_gap, rec.gap);
      bundle.worst_consistency = std::max(bundle.worst_consistency, rec.consistency);
      if (rec.failed) bundle.complete = false;
    }

    next_source = std::make_unique<TableValueSource>(table, config.interp_nearest);
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void write_state_columns_header(std::ostream& os, const GameSpec& spec, int t) {
  os << "cell,c";
  for (int n = 0; n < spec.num_agents; ++n)
    for (int x = 0; x < spec.nx(t, n); ++x)
      os << ",pi" << (n + 1) << "_" << spec.local_states[t - 1][n].symbols[x];
  for (int n = 0; n < spec.num_agents; ++n)
    for (int x = 0; x < spec.nx(t, n); ++x)
      os << ",pihat" << (n + 1) << "_" << spec.local_states[t - 1][n].symbols[x];
}

void write_state_columns(std::ostream& os, const GameSpec& spec, int t, long long cell,
                         const CIBState& b) {
  os << cell << "," << spec.public_states[t - 1].symbols[b.pub];
  for (int n = 0; n < spec.num_agents; ++n)
    for (double v : b.pi.marginals[n]) os << "," << fmt(v);
  for (int n = 0; n < spec.num_agents; ++n)
    for (double v : b.pihat.marginals[n]) os << "," << fmt(v);
}

}  // namespace

void save_bundle(const EquilibriumBundle& bundle, const GameSpec& spec, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int T = spec.horizon;

  nlohmann::json manifest;
  manifest["format_version"] = 1;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(bundle.spec_fingerprint));
    manifest["spec_fingerprint"] = buf;
  }
  manifest["mode"] = bundle.stages.empty() || bundle.stages[0].mode == DpMode::Grid ? "grid" : "tree";
  manifest["grid_m"] = bundle.config.grid_m;
  manifest["interp"] = bundle.config.interp_nearest ? "nearest" : "multilinear";
  manifest["complete"] = bundle.complete;
  manifest["worst_gap"] = bundle.worst_gap;
  manifest["worst_consistency"] = bundle.worst_consistency;
  manifest["config"] = {{"bne_tol", bundle.config.stage.bne_tol},
                        {"consistency_tol", bundle.config.stage.consistency_tol},
                        {"max_iters", bundle.config.stage.max_iters},
                        {"restarts", bundle.config.stage.restarts},
                        {"damping", bundle.config.stage.damping},
                        {"symmetric_mode", bundle.config.stage.symmetric_mode},
                        {"grid_fallback", bundle.config.stage.grid_fallback},
                        {"seed", bundle.config.stage.seed}};
  nlohmann::json stage_meta = nlohmann::json::array();
  for (int t = 1; t <= T; ++t) {
    const StageTable& table = bundle.stages[t - 1];
    nlohmann::json sm;
    sm["t"] = t;
    sm["mode"] = table.mode == DpMode::Grid ? "grid" : "tree";
    sm["cells"] = static_cast<long long>(table.cells.size());
    if (table.mode == DpMode::Grid) sm["pihat_mode"] = to_string(table.layout.mode);
    nlohmann::json failed = nlohmann::json::array();
    for (long long i = 0; i < static_cast<long long>(table.cells.size()); ++i)
      if (table.cells[i].failed) failed.push_back(i);
    sm["failed_cells"] = failed;
    stage_meta.push_back(sm);
  }
  manifest["stages"] = stage_meta;
  {
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(1) << "\n";
  }

  for (int t = 1; t <= T; ++t) {
    const StageTable& table = bundle.stages[t - 1];
    for (int n = 0; n < spec.num_agents; ++n) {
      std::ofstream values(fs::path(dir) / ("values_t" + std::to_string(t) + "_agent" + std::to_string(n + 1) + ".csv"));
      write_state_columns_header(values, spec, t);
      values << ",x,value\n";
      std::ofstream strat(fs::path(dir) / ("strategy_t" + std::to_string(t) + "_agent" + std::to_string(n + 1) + ".csv"));
      write_state_columns_header(strat, spec, t);
      strat << ",x,action,probability\n";
      std::ofstream upd(fs::path(dir) / ("updates_t" + std::to_string(t) + "_agent" + std::to_string(n + 1) + ".csv"));
      write_state_columns_header(upd, spec, t);
      upd << ",y";
      for (int k = 0; k < spec.num_agents; ++k) upd << ",a" << (k + 1);
      upd << ",xnext,probability\n";

      for (long long cell = 0; cell < static_cast<long long>(table.cells.size()); ++cell) {
        const CellRecord& rec = table.cells[cell];
        for (int x = 0; x < spec.nx(t, n); ++x) {
          write_state_columns(values, spec, t, cell, rec.state);
          values << "," << spec.local_states[t - 1][n].symbols[x] << "," << fmt(rec.value[n][x]) << "\n";
          for (int a : spec.admissible_at(t, n, x)) {
            write_state_columns(strat, spec, t, cell, rec.state);
            strat << "," << spec.local_states[t - 1][n].symbols[x] << "," << spec.actions[t - 1][n].symbols[a]
                  << "," << fmt(rec.lambda.probs[n][x][a]) << "\n";
          }
        }
        for (int y = 0; y < spec.ny(t, n); ++y)
          for (int aj = 0; aj < spec.njoint_actions(t); ++aj) {
            auto a = spec.decode_actions(t, aj);
            const auto& dist = rec.psi.next[n][y][aj];
            for (size_t xp = 0; xp < dist.size(); ++xp) {
              write_state_columns(upd, spec, t, cell, rec.state);
              upd << "," << spec.observations[t - 1][n].symbols[y];
              for (int k = 0; k < spec.num_agents; ++k) upd << "," << spec.actions[t - 1][k].symbols[a[k]];
              int tn = t < spec.horizon ? t + 1 : spec.horizon;
              upd << "," << spec.local_states[tn - 1][n].symbols[xp] << "," << fmt(dist[xp]) << "\n";
            }
          }
      }
    }
    // per-cell certificates
    std::ofstream certs(fs::path(dir) / ("certificates_t" + std::to_string(t) + ".csv"));
    write_state_columns_header(certs, spec, t);
    certs << ",bne_gap,consistency_residual,failed,method\n";
    for (long long cell = 0; cell < static_cast<long long>(table.cells.size()); ++cell) {
      const CellRecord& rec = table.cells[cell];
      write_state_columns(certs, spec, t, cell, rec.state);
      certs << "," << fmt(rec.gap) << "," << fmt(rec.consistency) << "," << (rec.failed ? 1 : 0) << ","
            << rec.method << "\n";
    }
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

EquilibriumBundle load_bundle(const std::string& dir, const GameSpec& spec) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw Error(Error::Kind::Parse, "bundle: cannot open " + dir + "/manifest.json");
  nlohmann::json manifest = nlohmann::json::parse(mf);

  EquilibriumBundle bundle;
  {
    std::string fp = manifest.at("spec_fingerprint").get<std::string>();
    bundle.spec_fingerprint = std::strtoull(fp.c_str(), nullptr, 16);
    if (bundle.spec_fingerprint != fingerprint(spec))
      throw Error(Error::Kind::Validation, "bundle: spec fingerprint mismatch (bundle was solved for a different model)");
  }
  bundle.config.grid_m = manifest.value("grid_m", 0);
  bundle.config.interp_nearest = manifest.value("interp", "multilinear") == std::string("nearest");
  bundle.complete = manifest.value("complete", true);
  bundle.worst_gap = manifest.value("worst_gap", 0.0);
  bundle.worst_consistency = manifest.value("worst_consistency", 0.0);
  if (manifest.contains("config")) {
    const auto& c = manifest["config"];
    bundle.config.stage.bne_tol = c.value("bne_tol", 1e-6);
    bundle.config.stage.consistency_tol = c.value("consistency_tol", 1e-9);
    bundle.config.stage.symmetric_mode = c.value("symmetric_mode", false);
    bundle.config.stage.seed = c.value("seed", 0ULL);
  }
  const bool tree = manifest.value("mode", "grid") == std::string("tree");
  bundle.config.mode = tree ? DpMode::Tree : DpMode::Grid;

  const int T = spec.horizon;
  bundle.stages.resize(T);
  for (const auto& sm : manifest.at("stages")) {
    int t = sm.at("t").get<int>();
    StageTable& table = bundle.stages[t - 1];
    table.time = t;
    table.mode = tree ? DpMode::Tree : DpMode::Grid;
    long long count = sm.at("cells").get<long long>();
    if (!tree) {
      table.layout = make_belief_grid(spec, t, bundle.config.grid_m,
                                      pihat_mode_from_string(sm.at("pihat_mode").get<std::string>()),
                                      std::max<long long>(count, 1));
      if (table.layout.cells() != count)
        throw Error(Error::Kind::Parse, "bundle: cell count mismatch at t=" + std::to_string(t));
    }
    table.cells.resize(count);
    for (long long i = 0; i < count; ++i) {
      CellRecord& rec = table.cells[i];
      rec.state.time = t;
      rec.state.pi.time = t;
      rec.state.pihat.time = t;
      rec.state.pi.marginals.resize(spec.num_agents);
      rec.state.pihat.marginals.resize(spec.num_agents);
      for (int n = 0; n < spec.num_agents; ++n) {
        rec.state.pi.marginals[n].assign(spec.nx(t, n), 0.0);
        rec.state.pihat.marginals[n].assign(spec.nx(t, n), 0.0);
      }
      rec.lambda.time = t;
      rec.lambda.probs.resize(spec.num_agents);
      rec.psi.time = t;
      rec.psi.next.resize(spec.num_agents);
      rec.value.resize(spec.num_agents);
      for (int n = 0; n < spec.num_agents; ++n) {
        rec.lambda.probs[n].assign(spec.nx(t, n), std::vector<double>(spec.na(t, n), 0.0));
        rec.psi.next[n].assign(spec.ny(t, n),
                               std::vector<std::vector<double>>(
                                   spec.njoint_actions(t), std::vector<double>(spec.nx_next(t, n), 0.0)));
        rec.value[n].assign(spec.nx(t, n), 0.0);
      }
    }
    for (long long i : sm.value("failed_cells", std::vector<long long>{})) table.cells[i].failed = true;
  }

  auto parse_state = [&](const std::vector<std::string>& cols, int t, CellRecord& rec) {
    int k = 1;
    rec.state.pub = spec.public_states[t - 1].index_of(cols[k++]);
    for (int n = 0; n < spec.num_agents; ++n)
      for (int x = 0; x < spec.nx(t, n); ++x) rec.state.pi.marginals[n][x] = std::stod(cols[k++]);
    for (int n = 0; n < spec.num_agents; ++n)
      for (int x = 0; x < spec.nx(t, n); ++x) rec.state.pihat.marginals[n][x] = std::stod(cols[k++]);
    return k;
  };
  const int state_cols = [&] {
    int k = 2;
    for (int n = 0; n < spec.num_agents; ++n) k += 2 * spec.nx(1, n);
    return k;
  }();
  (void)state_cols;

  for (int t = 1; t <= T; ++t) {
    StageTable& table = bundle.stages[t - 1];
    for (int n = 0; n < spec.num_agents; ++n) {
      {
        std::ifstream in(fs::path(dir) / ("values_t" + std::to_string(t) + "_agent" + std::to_string(n + 1) + ".csv"));
        if (!in) throw Error(Error::Kind::Parse, "bundle: missing values CSV at t=" + std::to_string(t));
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          auto cols = split_csv(line);
          long long cell = std::stoll(cols[0]);
          CellRecord& rec = table.cells[cell];
          int k = parse_state(cols, t, rec);
          int x = spec.local_states[t - 1][n].index_of(cols[k++]);
          rec.value[n][x] = std::stod(cols[k]);
        }
      }
      {
        std::ifstream in(fs::path(dir) / ("strategy_t" + std::to_string(t) + "_agent" + std::to_string(n + 1) + ".csv"));
        if (!in) throw Error(Error::Kind::Parse, "bundle: missing strategy CSV at t=" + std::to_string(t));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          auto cols = split_csv(line);
          long long cell = std::stoll(cols[0]);
          CellRecord& rec = table.cells[cell];
          int k = parse_state(cols, t, rec);
          int x = spec.local_states[t - 1][n].index_of(cols[k++]);
          int a = spec.actions[t - 1][n].index_of(cols[k++]);
          rec.lambda.probs[n][x][a] = std::stod(cols[k]);
        }
      }
      {
        std::ifstream in(fs::path(dir) / ("updates_t" + std::to_string(t) + "_agent" + std::to_string(n + 1) + ".csv"));
        if (in) {
          std::string line;
          std::getline(in, line);
          while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto cols = split_csv(line);
            long long cell = std::stoll(cols[0]);
            CellRecord& rec = table.cells[cell];
            int k = parse_state(cols, t, rec);
            int y = spec.observations[t - 1][n].index_of(cols[k++]);
            std::vector<int> a(spec.num_agents);
            for (int j = 0; j < spec.num_agents; ++j) a[j] = spec.actions[t - 1][j].index_of(cols[k++]);
            int tn = t < spec.horizon ? t + 1 : spec.horizon;
            int xp = spec.local_states[tn - 1][n].index_of(cols[k++]);
            rec.psi.next[n][y][spec.encode_actions(t, a)][xp] = std::stod(cols[k]);
          }
        } else {
          // reconstruct from lambda (consistency equation + the fixed fallback)
          for (auto& rec : table.cells) rec.psi = build_update_slice(spec, rec.lambda, rec.state);
        }
      }
    }
    {
      std::ifstream in(fs::path(dir) / ("certificates_t" + std::to_string(t) + ".csv"));
      if (in) {
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          auto cols = split_csv(line);
          long long cell = std::stoll(cols[0]);
          CellRecord& rec = table.cells[cell];
          int k = parse_state(cols, t, rec);
          rec.gap = std::stod(cols[k++]);
          rec.consistency = std::stod(cols[k++]);
          rec.failed = cols[k++] == "1";
          rec.method = cols[k];
        }
      }
    }
  }
  return bundle;
}

ReachSet reachable_on_path(const GameSpec& spec, const EquilibriumBundle& bundle, long long max_points) {
  const int T = spec.horizon;
  ReachSet reach;
  reach.points.resize(T);
  reach.cells.resize(T);

  std::set<std::string> seen;
  // initial states: every c1 in the support of the public prior
  for (int c = 0; c < spec.nc(1); ++c) {
    if (spec.initial_public[c] <= 0.0) continue;
    CIBState b;
    b.time = 1;
    b.pub = c;
    b.pi = BeliefVector::prior_of(spec);
    b.pihat = b.pi;
    if (seen.insert(state_key(b)).second) reach.points[0].push_back(b);
  }

  long long total = static_cast<long long>(reach.points[0].size());
  for (int t = 1; t < T; ++t) {
    for (const CIBState& b : reach.points[t - 1]) {
      const StageTable& table = bundle.stages[t - 1];
      long long cell = table.locate(b);
      const CellRecord& rec = table.cells[cell];
      const long long AJ = spec.njoint_actions(t);
      UpdateSlice sf = build_signaling_free_slice(spec, b.pihat);
      for (int aj = 0; aj < AJ; ++aj) {
        auto a = spec.decode_actions(t, aj);
        // probability that this profile occurs under (pi, lambda)
        double pa = 1.0;
        for (int n = 0; n < spec.num_agents && pa > 0; ++n) {
          double pn = 0.0;
          for (int x = 0; x < spec.nx(t, n); ++x)
            pn += b.pi.marginals[n][x] * rec.lambda.probs[n][x][a[n]];
          pa *= pn;
        }
        if (pa <= 1e-12) continue;
        // joint observation supports, per agent under pi
        std::vector<std::vector<int>> ysupp(spec.num_agents);
        for (int n = 0; n < spec.num_agents; ++n)
          for (int y = 0; y < spec.ny(t, n); ++y) {
            double py = 0.0;
            for (int x = 0; x < spec.nx(t, n); ++x)
              py += spec.q(t, n, x, aj, y) * b.pi.marginals[n][x] * rec.lambda.probs[n][x][a[n]];
            if (py > 1e-15) ysupp[n].push_back(y);
          }
        std::vector<int> y(spec.num_agents, 0);
        std::vector<size_t> yi(spec.num_agents, 0);
        bool done = false;
        while (!done) {
          for (int n = 0; n < spec.num_agents; ++n) y[n] = ysupp[n][yi[n]];
          for (int cp = 0; cp < spec.nc_next(t); ++cp) {
            if (spec.pc(t, b.pub, aj, cp) <= 0.0) continue;
            CIBState next;
            next.time = t + 1;
            next.pub = cp;
            next.pi.time = t + 1;
            next.pihat.time = t + 1;
            next.pi.marginals.resize(spec.num_agents);
            next.pihat.marginals.resize(spec.num_agents);
            for (int n = 0; n < spec.num_agents; ++n) {
              next.pi.marginals[n] = rec.psi.next[n][y[n]][aj];
              next.pihat.marginals[n] = sf.next[n][y[n]][aj];
            }
            if (seen.insert(state_key(next)).second) {
              reach.points[t].push_back(next);
              if (++total > max_points)
                throw Error(Error::Kind::Budget, "reachability: too many on-path belief points");
            }
          }
          int n = spec.num_agents - 1;
          while (n >= 0 && ++yi[n] == ysupp[n].size()) yi[n--] = 0;
          if (n < 0) done = true;
        }
      }
    }
  }

  for (int t = 1; t <= T; ++t) {
    std::set<long long> cells;
    const StageTable& table = bundle.stages[t - 1];
    for (const CIBState& b : reach.points[t - 1]) {
      if (table.mode == DpMode::Tree) {
        cells.insert(table.locate(b));
      } else {
        for (const auto& [cell, w] : table.layout.stencil(b, bundle.config.interp_nearest))
          if (w > 1e-15) cells.insert(cell);
        cells.insert(table.layout.nearest_cell(b));
      }
    }
    reach.cells[t - 1].assign(cells.begin(), cells.end());
  }
  return reach;
}

}  // namespace cib
