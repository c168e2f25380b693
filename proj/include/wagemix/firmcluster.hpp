#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "wagemix/panel.hpp"

namespace wagemix::firmcluster {

inline constexpr int kGridPoints = 19;

/// Firm eCDFs evaluated on a common cut grid.
struct ECDFGrid {
  std::vector<double> grid;       // strictly increasing cut points
  std::vector<FirmId> firms;
  std::vector<double> values;     // firms x grid, row-major
  std::vector<double> weight;     // n_j
  std::vector<double> mean_wage;  // mean log wage of the firm's workers
  std::vector<FirmId> excluded;   // firms listed with no workers

  std::size_t size() const { return firms.size(); }
  std::size_t dim() const { return grid.size(); }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * dim(), dim()};
  }
};

/// The 19 ventile cuts of a pooled sample: the ceil(n*i/20)-th order
/// statistic for i = 1..19. Repeated cuts are collapsed so the grid stays
/// strictly increasing.
std::vector<double> ventile_grid(std::vector<double> wages);

struct FirmWage {
  FirmId firm;
  double wage = 0.0;
};

/// eCDFs of each firm's wages on `grid`. Firms come out sorted by id.
ECDFGrid ecdfs_on_grid(std::vector<double> grid, std::span<const FirmWage> rows);

/// Period-1 wages of a biennial, grid from the pooled period-1 ventiles.
ECDFGrid compute_ecdfs(const panel::BiennialPanel& panel);

/// Raw weighted k-means on row-major points. Restart r draws from a stream
/// keyed by (seed, r); the lowest objective wins, ties to the lower r.
struct KMeansResult {
  std::vector<int> label;
  std::vector<double> centroids;  // K x dim
  double objective = 0.0;
  int best_restart = 0;
  int iterations = 0;
  // Largest increase of the objective between consecutive Lloyd steps over
  // all restarts; <= 0 up to rounding for a monotone run.
  double max_objective_increase = 0.0;
};

struct KMeansOptions {
  int K = 1;
  int restarts = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  int max_iter = 300;
};

KMeansResult weighted_kmeans(std::span<const double> points, std::size_t dim,
                             std::span<const double> weights, const KMeansOptions& options);

struct FirmClassing {
  int K = 0;
  std::vector<double> grid;
  std::vector<FirmId> firms;   // sorted by id
  std::vector<int> klass;      // 0-based, parallel to firms
  std::vector<double> centroids;  // K x grid
  std::vector<double> class_mean_wage;
  double objective = 0.0;
  int best_restart = 0;
  double max_objective_increase = 0.0;
  std::size_t assigned_from_period2 = 0;

  bool contains(const FirmId& firm) const { return index_.count(firm) != 0; }
  int class_of(const FirmId& firm) const;
  void add(const FirmId& firm, int k);
  void rebuild_index();

 private:
  std::unordered_map<FirmId, std::size_t> index_;
};

/// Size-weighted k-means on eCDFs. Firms are processed in id order, so the
/// result does not depend on the input order. Classes are relabeled by
/// ascending mean wage of their workers.
FirmClassing kmeans_classes(const ECDFGrid& ecdfs, const KMeansOptions& options);

/// Firms seen only in period 2 get the class of the nearest centroid under
/// their period-2 eCDF on the classing grid.
void assign_period2_firms(FirmClassing& classing, const panel::BiennialPanel& panel);

struct GapRow {
  int k = 0;
  double W = 0.0;
  double log_W = 0.0;
  double ref_log_W = 0.0;  // mean over reference sets
  double gap = 0.0;
  double s = 0.0;          // sd of reference log W across sets
};

struct GapStatisticReport {
  std::vector<GapRow> rows;
  int chosen_K = 0;
  int B = 0;
};

struct GapOptions {
  int kmin = 1;
  int kmax = 10;
  int B = 500;
  int restarts = 20;            // observed data
  int reference_restarts = 5;   // each reference set
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool self_reference = false;  // use the observed data as the reference
};

/// Reference sets draw each coordinate uniformly over its observed range and
/// keep the firm weights. chosen_K is the smallest k with
/// Gap(k) >= Gap(k+1) - s(k+1), else kmax.
GapStatisticReport gap_statistic(const ECDFGrid& ecdfs, const GapOptions& options);

/// Stopping rule alone, on a filled report.
int choose_k(const std::vector<GapRow>& rows);

}  // namespace wagemix::firmcluster
