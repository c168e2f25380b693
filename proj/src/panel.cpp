#include "wagemix/panel.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "wagemix/error.hpp"
#include "wagemix/numeric.hpp"

namespace wagemix::panel {

const char* to_string(Education e) {
  switch (e) {
    case Education::Dropout: return "Dropout";
    case Education::HighSchool: return "HighSchool";
    case Education::College: return "College";
  }
  return "?";
}

const char* to_string(Sector s) {
  switch (s) {
    case Sector::Primary: return "Primary";
    case Sector::Manufacturing: return "Manufacturing";
    case Sector::Construction: return "Construction";
    case Sector::Trade: return "Trade";
    case Sector::Services: return "Services";
  }
  return "?";
}

int age_bin(int age) {
  if (age <= 30) return 0;
  if (age <= 50) return 1;
  return 2;
}

namespace {

// True when a should be kept over b for the same (worker, year).
bool preferred(const Observation& a, const Observation& b) {
  if (a.contract_span != b.contract_span) return a.contract_span > b.contract_span;
  if (a.log_wage != b.log_wage) return a.log_wage > b.log_wage;
  return a.firm_id < b.firm_id;
}

}  // namespace

CleanResult clean_contracts(std::span<const Observation> raw) {
  CleanResult result;
  auto& report = result.report;
  report.rows_read = raw.size();

  std::vector<const Observation*> valid;
  valid.reserve(raw.size());
  for (const auto& row : raw) {
    if (!std::isfinite(row.log_wage)) {
      ++report.rejected_nonfinite_wage;
    } else if (row.age < 14 || row.age > 100) {
      ++report.rejected_invalid_age;
    } else if (!(row.hours > 0.0)) {
      ++report.rejected_nonpositive_hours;
    } else {
      valid.push_back(&row);
    }
  }

  std::sort(valid.begin(), valid.end(), [](const Observation* a, const Observation* b) {
    if (a->worker_id != b->worker_id) return a->worker_id < b->worker_id;
    if (a->year != b->year) return a->year < b->year;
    return preferred(*a, *b);
  });

  for (std::size_t i = 0; i < valid.size();) {
    std::size_t j = i + 1;
    while (j < valid.size() && valid[j]->worker_id == valid[i]->worker_id &&
           valid[j]->year == valid[i]->year) {
      ++j;
    }
    report.dropped_secondary_contracts += j - i - 1;
    const Observation& best = *valid[i];
    if (best.hours < kMinHours) {
      ++report.dropped_short_hours;
    } else if (!best.private_sector) {
      ++report.dropped_non_private;
    } else {
      result.rows.push_back(best);
    }
    i = j;
  }
  report.rows_kept = result.rows.size();
  return result;
}

std::size_t BiennialPanel::movers() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const BiennialRow& r) { return r.mover; }));
}

std::vector<std::pair<int, int>> standard_biennial_pairs() {
  std::vector<std::pair<int, int>> pairs;
  for (int t = 2010; t <= 2015; ++t) pairs.emplace_back(t, t + 2);
  return pairs;
}

std::vector<BiennialPanel> build_biennials(std::span<const Observation> cleaned,
                                           std::span<const std::pair<int, int>> pairs) {
  std::set<int> first_years;
  for (const auto& [t1, t2] : pairs) {
    if (t2 != t1 + 2) {
      throw ConfigError("biennial pair (" + std::to_string(t1) + ", " + std::to_string(t2) +
                        ") is not two years apart");
    }
    if (!first_years.insert(t1).second) {
      throw ConfigError("biennial pairs repeat first year " + std::to_string(t1));
    }
  }

  std::vector<BiennialPanel> out;
  if (cleaned.empty()) return out;

  // (worker, year) -> row
  std::unordered_map<WorkerId, std::unordered_map<int, const Observation*>> index;
  for (const auto& row : cleaned) {
    auto& years = index[row.worker_id];
    if (!years.emplace(row.year, &row).second) {
      throw DataError("worker " + row.worker_id.value + " has two rows in year " +
                      std::to_string(row.year) + "; run clean_contracts first");
    }
  }
  std::vector<WorkerId> workers;
  workers.reserve(index.size());
  for (const auto& [w, _] : index) workers.push_back(w);
  std::sort(workers.begin(), workers.end());

  for (const auto& [t1, t2] : pairs) {
    BiennialPanel panel;
    panel.year1 = t1;
    panel.year2 = t2;

    std::vector<BiennialRow> balanced;
    for (const auto& w : workers) {
      const auto& years = index.at(w);
      auto a = years.find(t1);
      auto b = years.find(t2);
      if (a == years.end() || b == years.end()) continue;
      balanced.push_back({*a->second, *b->second, a->second->firm_id != b->second->firm_id});
    }

    // Gender counts per (firm, period) on the balanced set.
    std::unordered_map<FirmId, std::array<std::array<std::size_t, 2>, 2>> counts;
    for (const auto& r : balanced) {
      counts[r.first.firm_id][0][index_of(r.first.gender)]++;
      counts[r.second.firm_id][1][index_of(r.second.gender)]++;
    }
    std::unordered_map<FirmId, bool> keep;
    for (const auto& [firm, periods] : counts) {
      bool ok = true;
      for (const auto& c : periods) {
        const std::size_t total = c[0] + c[1];
        if (total == 0) continue;
        const std::size_t lo = std::min(c[0], c[1]);
        const std::size_t hi = std::max(c[0], c[1]);
        if (4 * lo < hi) ok = false;
      }
      keep[firm] = ok;
      if (!ok) ++panel.dropped_firms;
    }

    for (auto& r : balanced) {
      if (keep[r.first.firm_id] && keep[r.second.firm_id]) {
        panel.rows.push_back(std::move(r));
      } else {
        ++panel.dropped_workers;
      }
    }
    panel.empty_warning = panel.rows.empty();
    out.push_back(std::move(panel));
  }
  return out;
}

BiennialPanel assemble_biennial(std::span<const Observation> rows) {
  BiennialPanel panel;
  if (rows.empty()) {
    panel.empty_warning = true;
    return panel;
  }
  std::set<int> years;
  for (const auto& r : rows) years.insert(r.year);
  if (years.size() != 2 || *years.rbegin() != *years.begin() + 2) {
    throw DataError("panel must contain exactly two years two apart");
  }
  panel.year1 = *years.begin();
  panel.year2 = *years.rbegin();

  std::unordered_map<WorkerId, std::array<const Observation*, 2>> pairs;
  for (const auto& r : rows) {
    auto& slot = pairs[r.worker_id][r.year == panel.year1 ? 0 : 1];
    if (slot) throw DataError("worker " + r.worker_id.value + " repeats a year");
    slot = &r;
  }
  std::vector<WorkerId> workers;
  for (const auto& [w, p] : pairs) {
    if (!p[0] || !p[1]) throw DataError("worker " + w.value + " is not observed in both years");
    workers.push_back(w);
  }
  std::sort(workers.begin(), workers.end());
  panel.rows.reserve(workers.size());
  for (const auto& w : workers) {
    const auto& p = pairs.at(w);
    panel.rows.push_back({*p[0], *p[1], p[0]->firm_id != p[1]->firm_id});
  }
  return panel;
}

std::vector<Observation> flatten(const BiennialPanel& panel) {
  std::vector<Observation> out;
  out.reserve(panel.worker_years());
  for (const auto& r : panel.rows) out.push_back(r.first);
  for (const auto& r : panel.rows) out.push_back(r.second);
  return out;
}

PanelSummary summary_stats(const BiennialPanel& panel) {
  if (panel.rows.empty()) throw DataError("summary_stats: empty panel");

  std::unordered_map<FirmId, std::size_t> firm_size;
  for (const auto& r : panel.rows) firm_size[r.first.firm_id]++;

  PanelSummary summary;
  std::array<std::size_t, 2> gender_workers{};
  for (const auto& r : panel.rows) gender_workers[index_of(r.first.gender)]++;

  for (int gi = 0; gi < kGenders; ++gi) {
    const Gender g = gender_at(gi);
    GenderSummary& s = summary.by_gender[gi];
    std::vector<double> wages;
    std::vector<double> tenure;
    std::unordered_map<FirmId, bool> employs;
    std::size_t n = 0;
    for (const auto& r : panel.rows) {
      const auto& o = r.first;
      if (o.gender != g) continue;
      ++n;
      wages.push_back(o.log_wage);
      tenure.push_back(o.tenure);
      employs[o.firm_id] = true;
      s.education_shares[static_cast<int>(o.education)] += 1.0;
      s.age_shares[age_bin(o.age)] += 1.0;
      s.sector_shares[static_cast<int>(o.sector)] += 1.0;
      s.occupation_shares[o.occupation] += 1.0;
    }
    s.unique_workers = n;
    s.worker_years = 2 * n;
    s.gender_fraction = static_cast<double>(n) / static_cast<double>(panel.rows.size());
    if (n == 0) continue;
    const double dn = static_cast<double>(n);
    for (auto& x : s.education_shares) x /= dn;
    for (auto& x : s.age_shares) x /= dn;
    for (auto& x : s.sector_shares) x /= dn;
    for (auto& [_, x] : s.occupation_shares) x /= dn;
    s.mean_tenure = mean(tenure);
    s.mean_log_wage = mean(wages);
    s.var_log_wage = variance(wages);

    std::vector<double> sizes;
    for (const auto& [firm, _] : employs) sizes.push_back(static_cast<double>(firm_size.at(firm)));
    std::sort(sizes.begin(), sizes.end());
    s.firms = sizes.size();
    for (double sz : sizes) {
      if (sz >= 10) ++s.firms_at_least_10;
      if (sz >= 50) ++s.firms_at_least_50;
    }
    s.mean_firm_size = mean(sizes);
    const std::size_t m = sizes.size();
    s.median_firm_size = (m % 2 == 1) ? sizes[m / 2] : 0.5 * (sizes[m / 2 - 1] + sizes[m / 2]);
  }
  return summary;
}

}  // namespace wagemix::panel
