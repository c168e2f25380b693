#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wagemix/decompose.hpp"
#include "wagemix/firmcluster.hpp"
#include "wagemix/panel.hpp"

namespace wagemix::graph {

using Edge = std::pair<int, int>;  // node indices, a < b

/// Firms are nodes (sorted by id); each mover adds one to the count of the
/// undirected edge between the two firms. Per-gender edge maps are kept.
struct MobilityGraph {
  std::vector<FirmId> firms;
  std::map<Edge, std::size_t> edges;
  std::map<Edge, std::size_t> gender_edges[kGenders];

  int n() const { return static_cast<int>(firms.size()); }
  int index_of(const FirmId& id) const;  // -1 if absent
};

MobilityGraph mover_graph(const panel::BiennialPanel& panel);

/// Components sorted by size (descending), ties by smallest member; members
/// ascending. components[0] is the largest set.
struct Partition {
  std::vector<std::vector<int>> components;
  std::vector<int> label;  // node -> component index
  int largest() const { return components.empty() ? -1 : 0; }
};

Partition connected_sets(int n, const std::vector<Edge>& edges);
Partition connected_sets(const MobilityGraph& g);
/// Only that gender's movers ("F" or "M" edges).
Partition connected_sets(const MobilityGraph& g, Gender gender);

struct DualConnectedSet {
  std::vector<FirmId> firms;
  int iterations = 0;
  std::string diagnostic;
};

/// Intersect the largest female-mover and male-mover components, recompute
/// on the intersection, repeat to a fixed point.
DualConnectedSet largest_dual_connected(const panel::BiennialPanel& panel);
DualConnectedSet largest_dual_connected(const MobilityGraph& g);

/// Worker-firm design y = D alpha + F psi + e with one firm column dropped.
enum class BiasForm { FirmVariance, WorkerFirmCovariance };

struct Spell {
  int worker = 0;
  int firm = 0;
};

struct BiasDesign {
  int n_workers = 0;
  int n_firms = 0;
  std::vector<Spell> spells;
  double sigma2 = 0.0;
  BiasForm form = BiasForm::FirmVariance;
  int reference_firm = 0;
};

inline constexpr int kMaxBiasColumns = 2000;

struct BiasMatrices {
  Eigen::MatrixXd A;  // obs x (workers + firms - 1)
  Eigen::MatrixXd Q;  // quadratic form on the coefficient vector
};

/// Q gives the worker-year variance of firm effects, or the worker-year
/// covariance of worker and firm effects, as gamma' Q gamma.
BiasMatrices bias_matrices(const BiasDesign& d);

struct BiasResult {
  double xi = 0.0;
  double trace = 0.0;  // xi / sigma2
  int columns = 0;
};

BiasResult exact_lmb_bias(const BiasDesign& design);

/// Spells of the panel restricted to the largest connected set.
BiasDesign bias_design(const panel::BiennialPanel& panel, double sigma2, BiasForm form);

struct ConnectivityOptions {
  double move_prob = 0.02;
  std::size_t reps = 1000;
  std::uint64_t seed = 0;
  // Share of movers whose destination is the already-connected core of the
  // market; the rest go to one of the other listed firms uniformly.
  double core_share = 1.0;
  unsigned threads = 1;
};

struct ConnectivityResult {
  std::vector<int> sizes;
  std::vector<double> inclusion;
  std::vector<double> se;
};

/// Each worker of firm j moves with probability move_prob. A firm counts as
/// connected when it shares a component with the core.
ConnectivityResult connectivity_simulation(const std::vector<int>& firm_sizes,
                                           const ConnectivityOptions& options);

/// P(at least one of N workers moves) = 1 - (1 - p)^N.
double lemma_inclusion(int size, double p);

struct SymmetryCell {
  int origin = 0;       // 0-based class
  int destination = 0;
  Gender gender = Gender::F;
  std::string direction;  // upward | downward | lateral
  std::size_t n = 0;
  double mean_change = 0.0;
  double se = kNaN;
};

struct SymmetryReport {
  std::vector<SymmetryCell> cells;
  double grand_mean = 0.0;
  double grand_se = kNaN;
  std::size_t movers = 0;
};

/// Period-2 minus period-1 residual of each mover in the fit.
SymmetryReport mobility_symmetry_diagnostic(const decompose::FixedEffectsFit& fit,
                                            const panel::BiennialPanel& panel,
                                            const firmcluster::FirmClassing& classing);

}  // namespace wagemix::graph
