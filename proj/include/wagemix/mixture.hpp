#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wagemix/firmcluster.hpp"
#include "wagemix/panel.hpp"

namespace wagemix::mixture {

inline constexpr double kSdFloor = 1e-3;
inline constexpr double kSparseCell = 10.0;

/// Bilinear mover/stayer mixture. Classes and types are 0-based.
struct MixtureModel {
  int K = 0;
  int L = 0;
  std::vector<double> p;    // [k][k'][l], simplex over l
  std::vector<double> q;    // [k][l], simplex over l
  std::vector<double> mu1;  // [k][l], origin class
  std::vector<double> sd1;
  std::vector<double> mu2;  // [k'][l], destination class
  std::vector<double> sd2;
  double loglik_movers = 0.0;
  double loglik_stayers = 0.0;

  MixtureModel() = default;
  MixtureModel(int K, int L);

  double& P(int k, int k2, int l) { return p[(k * K + k2) * L + l]; }
  double P(int k, int k2, int l) const { return p[(k * K + k2) * L + l]; }
  double& Q(int k, int l) { return q[k * L + l]; }
  double Q(int k, int l) const { return q[k * L + l]; }
  static std::size_t cell(int k, int l, int L) { return static_cast<std::size_t>(k * L + l); }
};

/// Gender-blind estimation sample: classes and wages only.
struct MoverData {
  std::vector<WorkerId> ids;
  std::vector<int> k1, k2;
  std::vector<double> w1, w2;
  std::size_t size() const { return ids.size(); }
};

struct StayerData {
  std::vector<WorkerId> ids;
  std::vector<int> k;
  std::vector<double> w1;
  std::size_t size() const { return ids.size(); }
};

struct MixtureData {
  int K = 0;
  MoverData movers;
  StayerData stayers;
};

MixtureData mixture_data(const panel::BiennialPanel& panel,
                         const firmcluster::FirmClassing& classing);

struct EMOptions {
  int L = 1;
  int reps = 50;
  std::uint64_t seed = 0;
  int max_iter = 2000;
  double tol = 1e-8;  // relative loglik change
  unsigned threads = 1;
};

struct RestartLog {
  int restart = 0;
  std::vector<double> trace;  // loglik at the start of each iteration
  int iterations = 0;
  bool aborted = false;
  std::string reason;
  double loglik = 0.0;
};

struct MoverFit {
  MixtureModel model;
  std::vector<RestartLog> restarts;
  int best_restart = 0;
  double max_loglik_decrease = 0.0;  // over all restarts and iterations
  std::vector<std::pair<int, int>> sparse_cells;
};

/// EM over movers, `reps` starts with the best loglik kept (ties to the
/// lower restart). Start 0 uses quantile slicing; later starts jitter it.
MoverFit fit_movers(const MixtureData& data, const EMOptions& options);

struct StayerFit {
  MixtureModel model;
  std::vector<double> trace;
  int iterations = 0;
  double max_loglik_decrease = 0.0;
  std::vector<int> classes_without_stayers;
};

/// EM over q only, period-1 densities held at the mover fit.
StayerFit fit_stayers(const MixtureData& data, const MixtureModel& movers, int max_iter = 2000,
                      double tol = 1e-8);

double mover_loglik(const MixtureModel& model, const MoverData& movers);
double stayer_loglik(const MixtureModel& model, const StayerData& stayers);

/// Relabels types so pooled expected wage (mean over classes of the period
/// means) increases in l.
void canonical_order(MixtureModel& model);

struct TypeAssignment {
  int L = 0;
  std::vector<WorkerId> workers;   // panel order
  std::vector<double> posterior;   // workers x L
  std::vector<int> type;           // 0-based MAP type

  int type_of(const WorkerId& id) const;
  void rebuild_index();

 private:
  std::unordered_map<WorkerId, std::size_t> index_;
};

/// Stayers: prior q[k], period-1 density. Movers: prior p[k][k'], both
/// periods' densities. Lowest index wins ties.
TypeAssignment map_assign(const panel::BiennialPanel& panel,
                          const firmcluster::FirmClassing& classing, const MixtureModel& model);

}  // namespace wagemix::mixture
