#include "cib/belief_grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cib {

namespace {

long long binom(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  long long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Number of compositions of total into parts nonnegative integers.
long long comp_count(int total, int parts) { return binom(total + parts - 1, parts - 1); }

constexpr double kSnap = 1e-9;

}  // namespace

SimplexGrid SimplexGrid::make(int dim, int resolution) {
  SimplexGrid g;
  g.dim = dim;
  g.resolution = resolution;
  return g;
}

long long SimplexGrid::size() const { return comp_count(resolution, dim); }

std::vector<int> SimplexGrid::composition_of(long long idx) const {
  std::vector<int> comp(dim);
  int rem = resolution;
  for (int i = 0; i < dim - 1; ++i) {
    int v = 0;
    while (true) {
      long long block = comp_count(rem - v, dim - 1 - i);
      if (idx < block) break;
      idx -= block;
      ++v;
    }
    comp[i] = v;
    rem -= v;
  }
  comp[dim - 1] = rem;
  return comp;
}

long long SimplexGrid::rank(const std::vector<int>& comp) const {
  long long idx = 0;
  int rem = resolution;
  for (int i = 0; i < dim - 1; ++i) {
    for (int v = 0; v < comp[i]; ++v) idx += comp_count(rem - v, dim - 1 - i);
    rem -= comp[i];
  }
  return idx;
}

std::vector<double> SimplexGrid::point(long long idx) const {
  auto comp = composition_of(idx);
  std::vector<double> w(dim);
  for (int i = 0; i < dim; ++i) w[i] = static_cast<double>(comp[i]) / resolution;
  return w;
}

std::vector<std::pair<long long, double>> SimplexGrid::barycentric(const std::vector<double>& w) const {
  const int k = dim;
  const int m = resolution;
  if (k == 1) return {{0, 1.0}};
  if (k == 2) {
    // 1-D linear interpolation along the second coordinate; the rank of the
    // composition (m - v, v) is m - v.
    double y = std::clamp(w[1], 0.0, 1.0) * m;
    double rounded = std::round(y);
    if (std::abs(y - rounded) < kSnap) return {{m - static_cast<long long>(rounded), 1.0}};
    long long f = static_cast<long long>(std::floor(y));
    double r = y - static_cast<double>(f);
    return {{m - f, 1.0 - r}, {m - f - 1, r}};
  }

  // Cumulative coordinates map the simplex onto the order region
  // 0 <= y_0 <= ... <= y_{k-2} <= m of the cube lattice.
  const int d = k - 1;
  std::vector<double> y(d);
  {
    double acc = 0;
    for (int j = 0; j < d; ++j) {
      acc += w[j];
      y[j] = std::clamp(acc * m, 0.0, static_cast<double>(m));
    }
  }
  std::vector<int> f(d);
  std::vector<double> r(d);
  for (int j = 0; j < d; ++j) {
    double rounded = std::round(y[j]);
    if (std::abs(y[j] - rounded) < kSnap) {
      f[j] = static_cast<int>(rounded);
      r[j] = 0.0;
    } else {
      f[j] = static_cast<int>(std::floor(y[j]));
      r[j] = y[j] - f[j];
    }
    if (f[j] >= m) {
      f[j] = m;
      r[j] = 0.0;
    }
  }

  // Kuhn cell walk: descend by fractional part; ties increment the later
  // coordinate first so every vertex stays in the order region.
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (r[a] != r[b]) return r[a] > r[b];
    return a > b;
  });

  std::vector<double> lam(d + 1);
  lam[0] = 1.0 - r[order[0]];
  for (int i = 1; i < d; ++i) lam[i] = r[order[i - 1]] - r[order[i]];
  lam[d] = r[order[d - 1]];

  std::vector<std::pair<long long, double>> out;
  std::vector<int> v = f;
  for (int i = 0; i <= d; ++i) {
    if (i > 0) v[order[i - 1]] += 1;
    if (lam[i] > 1e-15) {
      // back to a composition
      std::vector<int> comp(k);
      comp[0] = v[0];
      for (int j = 1; j < d; ++j) comp[j] = v[j] - v[j - 1];
      comp[k - 1] = m - v[d - 1];
      for (int j = 0; j < k; ++j)
        if (comp[j] < 0)
          throw Error(Error::Kind::Internal, "simplex interpolation produced an invalid vertex");
      out.emplace_back(rank(comp), lam[i]);
    }
  }
  if (out.size() == 1) out[0].second = 1.0;
  return out;
}

long long SimplexGrid::nearest(const std::vector<double>& w) const {
  const int k = dim;
  const int m = resolution;
  std::vector<int> f(k);
  std::vector<double> r(k);
  int sum = 0;
  for (int i = 0; i < k; ++i) {
    double u = std::clamp(w[i], 0.0, 1.0) * m;
    f[i] = static_cast<int>(std::floor(u + kSnap));
    if (f[i] > m) f[i] = m;
    r[i] = u - f[i];
    sum += f[i];
  }
  int rem = m - sum;
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return r[a] > r[b]; });
  for (int i = 0; rem > 0; i = (i + 1) % k, --rem) f[order[i]] += 1;
  // rem < 0 can only come from rounding pile-up; trim from the smallest
  // fractional parts.
  for (int i = k - 1; sum > m && i >= 0; --i) {
    int take = std::min(f[order[i]], sum - m);
    f[order[i]] -= take;
    sum -= take;
  }
  return rank(f);
}

const char* to_string(PiHatMode m) {
  switch (m) {
    case PiHatMode::Crossed: return "crossed";
    case PiHatMode::Aliased: return "aliased";
    case PiHatMode::Dropped: return "dropped";
  }
  return "?";
}

PiHatMode pihat_mode_from_string(const std::string& s) {
  if (s == "crossed") return PiHatMode::Crossed;
  if (s == "aliased") return PiHatMode::Aliased;
  if (s == "dropped") return PiHatMode::Dropped;
  throw Error(Error::Kind::Parse, "unknown pihat mode: " + s);
}

long long GridLayout::cells() const {
  long long n = num_pub;
  for (const auto& g : agent_grids) n *= g.size();
  if (mode == PiHatMode::Crossed)
    for (const auto& g : agent_grids) n *= g.size();
  return n;
}

CIBState GridLayout::state_of(const GameSpec& spec, long long cell) const {
  const int N = static_cast<int>(agent_grids.size());
  std::vector<long long> pihat_idx(N), pi_idx(N);
  if (mode == PiHatMode::Crossed) {
    for (int n = N - 1; n >= 0; --n) {
      pihat_idx[n] = cell % agent_grids[n].size();
      cell /= agent_grids[n].size();
    }
  }
  for (int n = N - 1; n >= 0; --n) {
    pi_idx[n] = cell % agent_grids[n].size();
    cell /= agent_grids[n].size();
  }
  CIBState b;
  b.time = time;
  b.pub = static_cast<int>(cell);
  b.pi.time = time;
  b.pihat.time = time;
  b.pi.marginals.resize(N);
  b.pihat.marginals.resize(N);
  for (int n = 0; n < N; ++n) {
    b.pi.marginals[n] = agent_grids[n].point(pi_idx[n]);
    b.pihat.marginals[n] =
        (mode == PiHatMode::Crossed) ? agent_grids[n].point(pihat_idx[n]) : b.pi.marginals[n];
  }
  (void)spec;
  return b;
}

std::vector<std::pair<long long, double>> GridLayout::stencil(const CIBState& b, bool nearest) const {
  const int N = static_cast<int>(agent_grids.size());
  std::vector<std::pair<long long, double>> acc = {{b.pub, 1.0}};
  auto extend = [&](const SimplexGrid& g, const std::vector<double>& w) {
    std::vector<std::pair<long long, double>> block =
        nearest ? std::vector<std::pair<long long, double>>{{g.nearest(w), 1.0}} : g.barycentric(w);
    std::vector<std::pair<long long, double>> next;
    next.reserve(acc.size() * block.size());
    for (const auto& [idx, wt] : acc)
      for (const auto& [bidx, bwt] : block) next.emplace_back(idx * g.size() + bidx, wt * bwt);
    acc = std::move(next);
  };
  for (int n = 0; n < N; ++n) extend(agent_grids[n], b.pi.marginals[n]);
  if (mode == PiHatMode::Crossed)
    for (int n = 0; n < N; ++n) extend(agent_grids[n], b.pihat.marginals[n]);
  return acc;
}

long long GridLayout::nearest_cell(const CIBState& b) const {
  auto st = stencil(b, /*nearest=*/true);
  return st[0].first;
}

long long GridLayout::mirror_cell(long long cell) const {
  const int N = static_cast<int>(agent_grids.size());
  if (N != 2) return cell;
  const long long s0 = agent_grids[0].size(), s1 = agent_grids[1].size();
  long long pihat0 = 0, pihat1 = 0;
  if (mode == PiHatMode::Crossed) {
    pihat1 = cell % s1;
    cell /= s1;
    pihat0 = cell % s0;
    cell /= s0;
  }
  long long pi1 = cell % s1;
  cell /= s1;
  long long pi0 = cell % s0;
  cell /= s0;
  long long pub = cell;
  long long out = pub;
  out = out * s0 + pi1;  // agent grids are identical in symmetric sweeps
  out = out * s1 + pi0;
  if (mode == PiHatMode::Crossed) {
    out = out * s0 + pihat1;
    out = out * s1 + pihat0;
  }
  return out;
}

GridLayout make_belief_grid(const GameSpec& spec, int t, int m, PiHatMode mode, long long budget) {
  if (m < 1) throw Error(Error::Kind::Validation, "grid resolution must be >= 1");
  GridLayout layout;
  layout.time = t;
  layout.num_pub = spec.nc(t);
  layout.resolution = m;
  layout.mode = mode;
  for (int n = 0; n < spec.num_agents; ++n) layout.agent_grids.push_back(SimplexGrid::make(spec.nx(t, n), m));
  long long count = layout.cells();
  if (count > budget)
    throw Error(Error::Kind::Budget, "belief grid at t=" + std::to_string(t) + " has " + std::to_string(count) +
                                         " cells, exceeding the budget of " + std::to_string(budget));
  return layout;
}

}  // namespace cib
