#pragma once

#include <span>
#include <vector>

#include "wagemix/numeric.hpp"
#include "wagemix/types.hpp"

namespace wagemix {

struct CellMoment {
  double count = 0.0;
  double mean = kNaN;
  double var = kNaN;  // population variance; 0 for a single observation
};

inline constexpr double kLowSupport = 5.0;

/// Per-gender log-wage moments on the class x type grid. Classes and types
/// are 0-based here.
class MatchMoments {
 public:
  MatchMoments() = default;
  MatchMoments(int K, int L);

  int K() const { return K_; }
  int L() const { return L_; }

  CellMoment& at(int g, int k, int l) { return cells_[g][k * L_ + l]; }
  const CellMoment& at(int g, int k, int l) const { return cells_[g][k * L_ + l]; }

  double total(int g) const;
  std::vector<double> type_marginal(int g) const;   // P^g(l)
  std::vector<double> class_marginal(int g) const;  // P^g(k)
  bool low_support(int g, int k, int l) const { return at(g, k, l).count < kLowSupport; }

  /// Both genders merged by count.
  CellMoment pooled(int k, int l) const;

  /// Count-weighted mean wage of gender g over observed cells.
  double mean_wage(int g) const;

 private:
  int K_ = 0;
  int L_ = 0;
  std::vector<CellMoment> cells_[kGenders];
};

struct CellRecord {
  int gender = 0;
  int k = 0;
  int l = 0;
  double wage = 0.0;
};

MatchMoments tabulate_moments(int K, int L, std::span<const CellRecord> records);

}  // namespace wagemix
