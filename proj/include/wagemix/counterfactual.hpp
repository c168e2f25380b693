#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wagemix/decompose.hpp"
#include "wagemix/firmcluster.hpp"
#include "wagemix/mixture.hpp"
#include "wagemix/moments.hpp"
#include "wagemix/panel.hpp"

namespace wagemix::counterfactual {

/// Cell moments over all worker-years of the panel (both periods); each
/// row's class is that of its firm in that period.
MatchMoments match_moments(const panel::BiennialPanel& panel,
                           const firmcluster::FirmClassing& classing,
                           const mixture::TypeAssignment& types);

/// Top classes hire top types until slots run out. Returns K x L counts.
std::vector<double> diagonal_fill(const std::vector<double>& class_slots,
                                  const std::vector<double>& type_counts);

struct SeparableMarket {
  std::vector<double> allocation[kGenders];  // K x L counts
  double mean_wage[kGenders] = {0.0, 0.0};
  std::vector<std::string> warnings;
};

/// Per-gender wage of a (class, type) cell: the observed mean when the cell
/// has workers, else that gender's additive prediction, else the pooled
/// additive prediction.
class CellWages {
 public:
  explicit CellWages(const MatchMoments& moments);
  double gender(int g, int k, int l) const;
  double pooled(int k, int l) const;

 private:
  const MatchMoments& m_;
  decompose::AdditiveFit fit_[kGenders];
  bool has_fit_[kGenders] = {false, false};
  decompose::AdditiveFit pooled_fit_;
};

SeparableMarket separable_market(const MatchMoments& moments);

struct GapDecomposition {
  std::string group = "All";
  double baseline = 0.0;
  double separable = 0.0;
  double complementarity = 0.0;
  double sorting = 0.0;
  double bargaining = 0.0;
  double residual = 0.0;  // baseline - (complementarity + sorting + bargaining)
  double n_female = 0.0;
  double n_male = 0.0;
  std::vector<std::string> warnings;

  double share(double component) const { return baseline != 0.0 ? component / baseline : kNaN; }
};

/// Expectation mode. Sorting: separable gap minus the gap when women fill
/// the male class distribution. Bargaining: separable gap minus the gap when
/// both genders are paid pooled cell means on their separable allocations.
GapDecomposition decompose_gap(const MatchMoments& moments);

/// Monte Carlo mode: `draws` simulated workers per gender and scenario,
/// wages Normal(cell mean, cell variance).
GapDecomposition decompose_gap_draws(const MatchMoments& moments, std::size_t draws,
                                     std::uint64_t seed);

enum class Subgroup { Education, Age, Size, Occupation };
Subgroup parse_subgroup(const std::string& name);

struct SubgroupResult {
  GapDecomposition result;
  bool skipped = false;
  std::string reason;
};

struct DecomposeOptions {
  bool draws = false;
  std::size_t n_draws = 100000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Worker-years are partitioned by the filter before moments are computed.
/// Firm size: period workforce in the panel, bins <10, 10-49, >=50.
std::vector<SubgroupResult> subgroup_decompose(const panel::BiennialPanel& panel,
                                               const firmcluster::FirmClassing& classing,
                                               const mixture::TypeAssignment& types,
                                               Subgroup by, const DecomposeOptions& options);

}  // namespace wagemix::counterfactual
