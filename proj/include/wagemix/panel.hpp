#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wagemix/types.hpp"

namespace wagemix::panel {

enum class Education { Dropout = 0, HighSchool = 1, College = 2 };
enum class Sector { Primary = 0, Manufacturing = 1, Construction = 2, Trade = 3, Services = 4 };

inline constexpr int kEducationLevels = 3;
inline constexpr int kSectors = 5;

const char* to_string(Education e);
const char* to_string(Sector s);

/// One worker-firm-year record. Raw contract rows use the same layout and may
/// violate the invariants until they pass through clean_contracts.
struct Observation {
  WorkerId worker_id;
  FirmId firm_id;
  int year = 0;
  double log_wage = 0.0;  // log hourly wage
  double hours = 40.0;    // contracted hours per week
  Gender gender = Gender::F;
  int age = 30;
  Education education = Education::HighSchool;
  int occupation = 0;
  Sector sector = Sector::Services;
  double tenure = 0.0;
  int contract_span = 365;  // days employed in the year
  bool private_sector = true;

  bool operator==(const Observation&) const = default;
};

inline constexpr double kMinHours = 30.0;

/// Row counts per cleaning rule.
struct IngestionReport {
  std::size_t rows_read = 0;
  std::size_t rows_kept = 0;
  std::size_t rejected_nonfinite_wage = 0;
  std::size_t rejected_nonpositive_wage = 0;
  std::size_t rejected_invalid_age = 0;
  std::size_t rejected_nonpositive_hours = 0;
  std::size_t dropped_secondary_contracts = 0;
  std::size_t dropped_short_hours = 0;
  std::size_t dropped_non_private = 0;
};

struct CleanResult {
  std::vector<Observation> rows;  // sorted by (worker_id, year)
  IngestionReport report;
};

/// Keeps one contract per (worker, year): longest contract_span, then highest
/// wage, then lowest firm_id. The hours (>= 30) and private-sector filters are
/// applied to the selected contract. Rows with a non-finite log wage, an age
/// outside [14, 100] or non-positive hours are rejected up front.
CleanResult clean_contracts(std::span<const Observation> raw);

struct BiennialRow {
  Observation first;   // year t
  Observation second;  // year t + 2
  bool mover = false;  // firm differs between periods
};

struct BiennialPanel {
  int year1 = 0;
  int year2 = 0;
  std::vector<BiennialRow> rows;  // sorted by worker_id
  bool empty_warning = false;
  std::size_t dropped_firms = 0;
  std::size_t dropped_workers = 0;

  std::size_t movers() const;
  std::size_t worker_years() const { return 2 * rows.size(); }
};

/// The six jumping biennials 2010-12 ... 2015-17.
std::vector<std::pair<int, int>> standard_biennial_pairs();

/// Pairs cleaned rows into balanced two-period panels. Within each pair, a
/// firm is dropped when 4 * min(F, M) < max(F, M) among its workers in either
/// period; workers left with only one period are then removed, once.
std::vector<BiennialPanel> build_biennials(std::span<const Observation> cleaned,
                                           std::span<const std::pair<int, int>> pairs);

/// Reassembles a biennial from rows already balanced over exactly two years
/// two apart (e.g. a panel written by `simulate`). No filtering.
BiennialPanel assemble_biennial(std::span<const Observation> rows);

/// Flattens a biennial back into worker-year rows (period-1 rows first).
std::vector<Observation> flatten(const BiennialPanel& panel);

struct GenderSummary {
  std::size_t firms = 0;
  std::size_t firms_at_least_10 = 0;
  std::size_t firms_at_least_50 = 0;
  double mean_firm_size = 0.0;
  double median_firm_size = 0.0;
  std::array<double, kEducationLevels> education_shares{};
  std::array<double, 3> age_shares{};  // <=30, 31-50, >=51
  std::array<double, kSectors> sector_shares{};
  std::map<int, double> occupation_shares;
  double mean_tenure = 0.0;
  double mean_log_wage = 0.0;
  double var_log_wage = 0.0;
  std::size_t worker_years = 0;
  std::size_t unique_workers = 0;
  double gender_fraction = 0.0;
};

struct PanelSummary {
  std::array<GenderSummary, kGenders> by_gender;
  const GenderSummary& operator[](Gender g) const { return by_gender[index_of(g)]; }
};

/// Per-gender descriptive statistics on period-1 rows. Firm sizes count the
/// whole period-1 workforce; a gender's firm count covers firms employing at
/// least one worker of that gender. Worker-years count both periods.
PanelSummary summary_stats(const BiennialPanel& panel);

int age_bin(int age);  // 0: <=30, 1: 31-50, 2: >=51

}  // namespace wagemix::panel
