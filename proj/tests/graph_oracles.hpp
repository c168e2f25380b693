#pragma once

// Fixtures and independent oracles for the mobility-graph tests.

#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wagemix/graph.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/panel.hpp"

namespace graphoracle {

using namespace wagemix;

inline panel::BiennialRow spell_row(const std::string& worker, const std::string& f1,
                                    const std::string& f2, Gender g = Gender::F) {
  panel::BiennialRow r;
  r.first.worker_id = WorkerId(worker);
  r.first.firm_id = FirmId(f1);
  r.first.gender = g;
  r.first.year = 2010;
  r.second = r.first;
  r.second.firm_id = FirmId(f2);
  r.second.year = 2012;
  r.mover = f1 != f2;
  return r;
}

// Five firms, five workers: 1 moves 1->2, 3 moves 2->3, 5 moves 4->5,
// workers 2 and 4 stay at firms 1 and 3.
inline panel::BiennialPanel figure_market() {
  panel::BiennialPanel p;
  p.year1 = 2010;
  p.year2 = 2012;
  p.rows = {spell_row("w1", "1", "2"), spell_row("w2", "1", "1"), spell_row("w3", "2", "3"),
            spell_row("w4", "3", "3"), spell_row("w5", "4", "5")};
  return p;
}

// Components by repeated depth-first search over an adjacency matrix,
// returned as sorted member sets.
inline std::set<std::set<int>> brute_components(int n, const std::vector<graph::Edge>& edges) {
  std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
  for (const auto& [a, b] : edges) adj[a][b] = adj[b][a] = 1;
  std::vector<char> seen(n, 0);
  std::set<std::set<int>> out;
  for (int s = 0; s < n; ++s) {
    if (seen[s]) continue;
    std::set<int> comp;
    std::vector<int> stack{s};
    seen[s] = 1;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      comp.insert(v);
      for (int u = 0; u < n; ++u) {
        if (adj[v][u] && !seen[u]) {
          seen[u] = 1;
          stack.push_back(u);
        }
      }
    }
    out.insert(comp);
  }
  return out;
}

// Six workers, three firms, two periods each:
// w0 f0->f1, w1 f1->f2, w2/w3/w4 stay at f0/f1/f2, w5 f2->f0.
inline graph::BiasDesign toy_design(double sigma2, graph::BiasForm form) {
  graph::BiasDesign d;
  d.n_workers = 6;
  d.n_firms = 3;
  d.sigma2 = sigma2;
  d.form = form;
  const int path[6][2] = {{0, 1}, {1, 2}, {0, 0}, {1, 1}, {2, 2}, {2, 0}};
  for (int w = 0; w < 6; ++w) {
    for (int t = 0; t < 2; ++t) d.spells.push_back({w, path[w][t]});
  }
  return d;
}

struct MonteCarlo {
  double bias = 0.0;
  double se = 0.0;
};

// Plug-in bias by simulation: draw y = alpha_i + psi_j + e, fit OLS on
// worker and firm dummies (firm 0 dropped), and compare the worker-year
// variance of firm effects (or covariance with worker effects) to the truth.
inline MonteCarlo simulate_plugin_bias(const graph::BiasDesign& d, std::size_t reps,
                                       std::uint64_t seed) {
  const int n = static_cast<int>(d.spells.size());
  const int p = d.n_workers + d.n_firms - 1;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, p);
  for (int i = 0; i < n; ++i) {
    X(i, d.spells[i].worker) = 1.0;
    if (d.spells[i].firm > 0) X(i, d.n_workers + d.spells[i].firm - 1) = 1.0;
  }
  const Eigen::MatrixXd solver = X.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(n, n));
  std::vector<double> alpha{0.3, -0.1, 0.5, 0.0, -0.4, 0.2};
  std::vector<double> psi{0.0, 0.25, -0.15};
  auto stat = [&](const std::vector<double>& a, const std::vector<double>& f) {
    std::vector<double> ai(n), fi(n);
    for (int i = 0; i < n; ++i) {
      ai[i] = a[d.spells[i].worker];
      fi[i] = f[d.spells[i].firm];
    }
    return d.form == graph::BiasForm::FirmVariance ? variance(fi) : covariance(ai, fi);
  };
  const double truth = stat(alpha, psi);
  auto gen = substream(seed, {});
  std::normal_distribution<double> z(0.0, std::sqrt(d.sigma2));
  Eigen::VectorXd y(n);
  double sum = 0.0, sum2 = 0.0;
  std::vector<double> a(d.n_workers), f(d.n_firms);
  for (std::size_t r = 0; r < reps; ++r) {
    for (int i = 0; i < n; ++i) y(i) = alpha[d.spells[i].worker] + psi[d.spells[i].firm] + z(gen);
    const Eigen::VectorXd g = solver * y;
    for (int w = 0; w < d.n_workers; ++w) a[w] = g(w);
    f[0] = 0.0;
    for (int j = 1; j < d.n_firms; ++j) f[j] = g(d.n_workers + j - 1);
    const double diff = stat(a, f) - truth;
    sum += diff;
    sum2 += diff * diff;
  }
  MonteCarlo out;
  out.bias = sum / reps;
  out.se = std::sqrt((sum2 / reps - out.bias * out.bias) / reps);
  return out;
}

}  // namespace graphoracle
