#include "wagemix/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "wagemix/error.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/parallel.hpp"

namespace wagemix::graph {

int MobilityGraph::index_of(const FirmId& id) const {
  const auto it = std::lower_bound(firms.begin(), firms.end(), id);
  if (it == firms.end() || !(*it == id)) return -1;
  return static_cast<int>(it - firms.begin());
}

MobilityGraph mover_graph(const panel::BiennialPanel& panel) {
  MobilityGraph g;
  std::set<FirmId> ids;
  for (const auto& r : panel.rows) {
    ids.insert(r.first.firm_id);
    ids.insert(r.second.firm_id);
  }
  g.firms.assign(ids.begin(), ids.end());
  for (const auto& r : panel.rows) {
    if (r.first.firm_id == r.second.firm_id) continue;
    int a = g.index_of(r.first.firm_id);
    int b = g.index_of(r.second.firm_id);
    if (a > b) std::swap(a, b);
    g.edges[{a, b}]++;
    g.gender_edges[wagemix::index_of(r.first.gender)][{a, b}]++;
  }
  return g;
}

namespace {

struct UnionFind {
  std::vector<int> parent, rank;
  explicit UnionFind(int n) : parent(n), rank(n, 0) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank[a] < rank[b]) std::swap(a, b);
    parent[b] = a;
    if (rank[a] == rank[b]) ++rank[a];
  }
};

template <class Edges>
std::vector<Edge> edge_list(const Edges& m) {
  std::vector<Edge> out;
  out.reserve(m.size());
  for (const auto& [e, c] : m) out.push_back(e);
  return out;
}

}  // namespace

Partition connected_sets(int n, const std::vector<Edge>& edges) {
  UnionFind uf(n);
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) throw DataError("edge endpoint out of range");
    uf.unite(a, b);
  }
  std::unordered_map<int, std::vector<int>> by_root;
  for (int i = 0; i < n; ++i) by_root[uf.find(i)].push_back(i);
  Partition p;
  for (auto& [root, members] : by_root) p.components.push_back(std::move(members));
  std::sort(p.components.begin(), p.components.end(), [](const auto& x, const auto& y) {
    if (x.size() != y.size()) return x.size() > y.size();
    return x.front() < y.front();
  });
  p.label.assign(n, -1);
  for (std::size_t c = 0; c < p.components.size(); ++c) {
    for (int i : p.components[c]) p.label[i] = static_cast<int>(c);
  }
  return p;
}

Partition connected_sets(const MobilityGraph& g) { return connected_sets(g.n(), edge_list(g.edges)); }

Partition connected_sets(const MobilityGraph& g, Gender gender) {
  return connected_sets(g.n(), edge_list(g.gender_edges[wagemix::index_of(gender)]));
}

DualConnectedSet largest_dual_connected(const MobilityGraph& g) {
  DualConnectedSet out;
  std::vector<bool> alive(g.n(), true);
  std::size_t n_alive = g.firms.size();
  for (;;) {
    ++out.iterations;
    std::vector<bool> keep(g.n(), true);
    for (int s = 0; s < kGenders; ++s) {
      std::vector<Edge> edges;
      for (const auto& [e, c] : g.gender_edges[s]) {
        if (alive[e.first] && alive[e.second]) edges.push_back(e);
      }
      // Dead nodes become isolated, so remove them before picking the largest.
      Partition p = connected_sets(g.n(), edges);
      int best = -1;
      std::size_t best_size = 0;
      for (std::size_t c = 0; c < p.components.size(); ++c) {
        std::size_t size = 0;
        for (int i : p.components[c]) size += alive[i] ? 1 : 0;
        if (size > best_size) {
          best_size = size;
          best = static_cast<int>(c);
        }
      }
      for (int i = 0; i < g.n(); ++i) {
        if (best < 0 || p.label[i] != best) keep[i] = false;
      }
    }
    std::size_t next = 0;
    for (int i = 0; i < g.n(); ++i) {
      alive[i] = alive[i] && keep[i];
      next += alive[i] ? 1 : 0;
    }
    if (next == n_alive) break;
    n_alive = next;
    if (n_alive == 0) break;
  }
  for (int i = 0; i < g.n(); ++i) {
    if (alive[i]) out.firms.push_back(g.firms[i]);
  }
  if (out.firms.empty()) {
    out.diagnostic = "largest connected sets of the two gender subgraphs do not intersect";
  } else {
    out.diagnostic = std::to_string(out.firms.size()) + " of " + std::to_string(g.firms.size()) +
                     " firms after " + std::to_string(out.iterations) + " passes";
  }
  return out;
}

DualConnectedSet largest_dual_connected(const panel::BiennialPanel& panel) {
  return largest_dual_connected(mover_graph(panel));
}

BiasMatrices bias_matrices(const BiasDesign& d) {
  if (d.n_workers <= 0 || d.n_firms <= 0) throw ConfigError("bias design needs workers and firms");
  if (d.reference_firm < 0 || d.reference_firm >= d.n_firms) {
    throw ConfigError("reference firm out of range");
  }
  const int cols = d.n_workers + d.n_firms - 1;
  if (cols > kMaxBiasColumns) {
    throw ConfigError("bias design has " + std::to_string(cols) + " columns; the exact oracle is " +
                      "limited to " + std::to_string(kMaxBiasColumns));
  }
  const int n = static_cast<int>(d.spells.size());
  auto firm_col = [&](int j) {
    if (j == d.reference_firm) return -1;
    return d.n_workers + (j < d.reference_firm ? j : j - 1);
  };
  BiasMatrices m;
  m.A = Eigen::MatrixXd::Zero(n, cols);
  // F: obs x firms (all firms), D: obs x workers.
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(n, cols);
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, cols);
  for (int r = 0; r < n; ++r) {
    const auto& s = d.spells[r];
    if (s.worker < 0 || s.worker >= d.n_workers || s.firm < 0 || s.firm >= d.n_firms) {
      throw DataError("spell index out of range");
    }
    m.A(r, s.worker) = 1.0;
    D(r, s.worker) = 1.0;
    const int c = firm_col(s.firm);
    if (c >= 0) {
      m.A(r, c) = 1.0;
      F(r, c) = 1.0;
    }
  }
  // Demeaning across worker-years.
  const Eigen::MatrixXd Fc = F.rowwise() - F.colwise().mean();
  const Eigen::MatrixXd Dc = D.rowwise() - D.colwise().mean();
  if (d.form == BiasForm::FirmVariance) {
    m.Q = Fc.transpose() * Fc / static_cast<double>(n);
  } else {
    const Eigen::MatrixXd C = Dc.transpose() * Fc / static_cast<double>(n);
    m.Q = 0.5 * (C + C.transpose());
  }
  return m;
}

BiasResult exact_lmb_bias(const BiasDesign& d) {
  const BiasMatrices m = bias_matrices(d);
  const Eigen::MatrixXd AtA = m.A.transpose() * m.A;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(AtA);
  qr.setThreshold(1e-10);
  if (qr.rank() < AtA.cols()) {
    throw NumericalError("A'A is singular (rank " + std::to_string(qr.rank()) + " of " +
                         std::to_string(AtA.cols()) +
                         "); restrict the design to one connected set (graph components)");
  }
  const Eigen::MatrixXd inv = qr.inverse();
  // trace(A (A'A)^-1 Q (A'A)^-1 A' s2 I) = s2 trace(Q (A'A)^-1).
  BiasResult r;
  r.columns = static_cast<int>(AtA.cols());
  r.trace = (m.Q * inv).trace();
  r.xi = d.sigma2 == 0.0 ? 0.0 : d.sigma2 * r.trace;
  return r;
}

BiasDesign bias_design(const panel::BiennialPanel& panel, double sigma2, BiasForm form) {
  const MobilityGraph g = mover_graph(panel);
  const Partition p = connected_sets(g);
  BiasDesign d;
  d.sigma2 = sigma2;
  d.form = form;
  if (p.components.empty()) throw DataError("bias_design: empty panel");
  std::unordered_map<int, int> firm_index;
  for (int i : p.components[0]) firm_index.emplace(i, static_cast<int>(firm_index.size()));
  d.n_firms = static_cast<int>(firm_index.size());
  for (const auto& r : panel.rows) {
    const auto a = firm_index.find(g.index_of(r.first.firm_id));
    const auto b = firm_index.find(g.index_of(r.second.firm_id));
    if (a == firm_index.end() || b == firm_index.end()) continue;
    const int w = d.n_workers++;
    d.spells.push_back({w, a->second});
    d.spells.push_back({w, b->second});
  }
  return d;
}

double lemma_inclusion(int size, double p) { return 1.0 - std::pow(1.0 - p, size); }

ConnectivityResult connectivity_simulation(const std::vector<int>& sizes,
                                           const ConnectivityOptions& o) {
  if (!(o.move_prob >= 0.0 && o.move_prob <= 1.0)) throw ConfigError("move_prob must be in [0,1]");
  if (!(o.core_share >= 0.0 && o.core_share <= 1.0)) {
    throw ConfigError("core_share must be in [0,1]");
  }
  if (o.reps == 0) throw ConfigError("connectivity simulation needs reps >= 1");
  for (int s : sizes) {
    if (s < 0) throw ConfigError("firm sizes must be non-negative");
  }
  const int J = static_cast<int>(sizes.size());
  const int core = J;
  // hits[rep][j] in {0,1}
  std::vector<std::vector<char>> hits(o.reps, std::vector<char>(J, 0));
  parallel_for(o.reps, o.threads, [&](std::size_t rep) {
    auto gen = substream(o.seed, {rep});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Edge> edges;
    for (int j = 0; j < J; ++j) {
      for (int w = 0; w < sizes[j]; ++w) {
        if (u(gen) >= o.move_prob) continue;
        int dest = core;
        if (J > 1 && u(gen) >= o.core_share) {
          auto pick = std::uniform_int_distribution<int>(0, J - 2)(gen);
          dest = pick >= j ? pick + 1 : pick;
        }
        edges.emplace_back(std::min(j, dest), std::max(j, dest));
      }
    }
    const Partition p = connected_sets(J + 1, edges);
    const int c = p.label[core];
    for (int j = 0; j < J; ++j) hits[rep][j] = p.label[j] == c ? 1 : 0;
  });
  ConnectivityResult r;
  r.sizes = sizes;
  r.inclusion.assign(J, 0.0);
  r.se.assign(J, 0.0);
  for (int j = 0; j < J; ++j) {
    std::size_t n = 0;
    for (std::size_t rep = 0; rep < o.reps; ++rep) n += hits[rep][j];
    const double f = static_cast<double>(n) / static_cast<double>(o.reps);
    r.inclusion[j] = f;
    r.se[j] = std::sqrt(f * (1.0 - f) / static_cast<double>(o.reps));
  }
  return r;
}

SymmetryReport mobility_symmetry_diagnostic(const decompose::FixedEffectsFit& fit,
                                            const panel::BiennialPanel& panel,
                                            const firmcluster::FirmClassing& classing) {
  std::unordered_map<WorkerId, bool> mover;
  for (const auto& r : panel.rows) mover[r.first.worker_id] = r.first.firm_id != r.second.firm_id;
  struct Acc {
    CompensatedSum sum, sq;
    std::size_t n = 0;
  };
  std::map<std::pair<int, int>, Acc> cells;
  Acc grand;
  for (std::size_t a = 0; a + 1 < fit.worker.size(); a += 2) {
    if (!(fit.worker[a] == fit.worker[a + 1])) {
      throw DataError("fit rows are not paired by worker");
    }
    const auto it = mover.find(fit.worker[a]);
    if (it == mover.end() || !it->second) continue;
    const double d = fit.residual[a + 1] - fit.residual[a];
    auto& c = cells[{fit.klass[a], fit.klass[a + 1]}];
    for (Acc* acc : {&c, &grand}) {
      acc->sum += d;
      acc->sq += d * d;
      acc->n++;
    }
  }
  auto finish = [](const Acc& acc, double& mean, double& se) {
    const double n = static_cast<double>(acc.n);
    mean = acc.sum.value() / n;
    if (acc.n > 1) {
      const double var = std::max(0.0, (acc.sq.value() - n * mean * mean) / (n - 1.0));
      se = std::sqrt(var / n);
    } else {
      se = kNaN;
    }
  };
  SymmetryReport rep;
  (void)classing;
  for (const auto& [key, acc] : cells) {
    SymmetryCell c;
    c.origin = key.first;
    c.destination = key.second;
    c.gender = fit.gender;
    // Classes are ordered by mean wage.
    c.direction = key.second > key.first ? "upward" : (key.second < key.first ? "downward" : "lateral");
    c.n = acc.n;
    finish(acc, c.mean_change, c.se);
    rep.cells.push_back(c);
  }
  rep.movers = grand.n;
  if (grand.n > 0) finish(grand, rep.grand_mean, rep.grand_se);
  return rep;
}

}  // namespace wagemix::graph
