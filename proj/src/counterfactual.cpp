#include "wagemix/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "wagemix/error.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/parallel.hpp"

namespace wagemix::counterfactual {

MatchMoments match_moments(const panel::BiennialPanel& panel,
                           const firmcluster::FirmClassing& classing,
                           const mixture::TypeAssignment& types) {
  std::vector<CellRecord> records;
  records.reserve(panel.worker_years());
  for (const auto& r : panel.rows) {
    const int l = types.type_of(r.first.worker_id);
    const int g = index_of(r.first.gender);
    records.push_back({g, classing.class_of(r.first.firm_id), l, r.first.log_wage});
    records.push_back({g, classing.class_of(r.second.firm_id), l, r.second.log_wage});
  }
  return tabulate_moments(classing.K, types.L, records);
}

std::vector<double> diagonal_fill(const std::vector<double>& class_slots,
                                  const std::vector<double>& type_counts) {
  const int K = static_cast<int>(class_slots.size());
  const int L = static_cast<int>(type_counts.size());
  std::vector<double> out(K * L, 0.0);
  std::vector<double> slots = class_slots;
  std::vector<double> workers = type_counts;
  int k = K - 1;
  int l = L - 1;
  while (k >= 0 && l >= 0) {
    if (slots[k] <= 0.0) {
      --k;
      continue;
    }
    if (workers[l] <= 0.0) {
      --l;
      continue;
    }
    const double take = std::min(slots[k], workers[l]);
    out[k * L + l] += take;
    slots[k] -= take;
    workers[l] -= take;
    // Whichever ran out (exactly, or to rounding) moves on.
    if (slots[k] <= 1e-12 * std::max(1.0, class_slots[k])) slots[k] = 0.0;
    if (workers[l] <= 1e-12 * std::max(1.0, type_counts[l])) workers[l] = 0.0;
  }
  return out;
}

namespace {

decompose::AdditiveFit pooled_fit(const MatchMoments& m) {
  const int K = m.K();
  const int L = m.L();
  std::vector<double> means(K * L), weights(K * L);
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      const auto c = m.pooled(k, l);
      means[k * L + l] = c.mean;
      weights[k * L + l] = c.count;
    }
  }
  return decompose::weighted_tw_fe(K, L, means, weights);
}

}  // namespace

CellWages::CellWages(const MatchMoments& moments) : m_(moments) {
  for (int g = 0; g < kGenders; ++g) {
    try {
      fit_[g] = decompose::weighted_tw_fe(moments, g);
      has_fit_[g] = true;
    } catch (const DataError&) {
      has_fit_[g] = false;
    }
  }
  pooled_fit_ = pooled_fit(moments);
}

double CellWages::gender(int g, int k, int l) const {
  const auto& c = m_.at(g, k, l);
  if (c.count > 0.0) return c.mean;
  if (has_fit_[g]) {
    const double v = fit_[g].predict(k, l);
    if (std::isfinite(v)) return v;
  }
  return pooled(k, l);
}

double CellWages::pooled(int k, int l) const {
  const auto c = m_.pooled(k, l);
  if (c.count > 0.0) return c.mean;
  const double v = pooled_fit_.predict(k, l);
  if (!std::isfinite(v)) {
    throw DataError("no wage available for class " + std::to_string(k + 1) + ", type " +
                    std::to_string(l + 1));
  }
  return v;
}

namespace {

struct Scenario {
  std::vector<double> allocation[kGenders];
  double mean[kGenders] = {0.0, 0.0};
};

std::vector<double> scaled(std::vector<double> v, double to) {
  CompensatedSum s;
  for (double x : v) s += x;
  if (s.value() <= 0.0) return v;
  for (auto& x : v) x *= to / s.value();
  return v;
}

// Allocation-weighted mean of a cell wage function.
template <class Wage>
double mean_over(const std::vector<double>& alloc, int K, int L, Wage&& wage) {
  CompensatedSum s;
  CompensatedSum n;
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      const double a = alloc[k * L + l];
      if (a <= 0.0) continue;
      s += a * wage(k, l);
      n += a;
    }
  }
  return n.value() > 0 ? s.value() / n.value() : kNaN;
}

struct Scenarios {
  std::vector<double> baseline[kGenders];
  std::vector<double> separable[kGenders];
  std::vector<double> sorting_female;  // women on the male class distribution
  std::vector<std::string> warnings;
};

Scenarios build_scenarios(const MatchMoments& m) {
  const int K = m.K();
  const int L = m.L();
  Scenarios s;
  for (int g = 0; g < kGenders; ++g) {
    s.baseline[g].resize(K * L);
    for (int k = 0; k < K; ++k) {
      for (int l = 0; l < L; ++l) s.baseline[g][k * L + l] = m.at(g, k, l).count;
    }
    const double n = m.total(g);
    if (n <= 0.0) throw DataError("decompose_gap: both genders must be present");
    std::vector<double> slots(K), types(L);
    const auto pk = m.class_marginal(g);
    const auto pl = m.type_marginal(g);
    for (int k = 0; k < K; ++k) slots[k] = pk[k] * n;
    for (int l = 0; l < L; ++l) types[l] = pl[l] * n;
    s.separable[g] = diagonal_fill(slots, types);
  }
  const double nf = m.total(0);
  const auto pm = m.class_marginal(1);
  std::vector<double> slots(K), types(L);
  const auto pl = m.type_marginal(0);
  for (int k = 0; k < K; ++k) slots[k] = pm[k] * nf;
  for (int l = 0; l < L; ++l) types[l] = pl[l] * nf;
  CompensatedSum st;
  for (double x : slots) st += x;
  if (std::abs(st.value() - nf) > 1e-9 * nf) {
    s.warnings.push_back("class slots rescaled to the female worker total");
    slots = scaled(slots, nf);
  }
  s.sorting_female = diagonal_fill(slots, types);
  return s;
}

}  // namespace

SeparableMarket separable_market(const MatchMoments& m) {
  const int K = m.K();
  const int L = m.L();
  const CellWages wages(m);
  const Scenarios s = build_scenarios(m);
  SeparableMarket out;
  out.warnings = s.warnings;
  for (int g = 0; g < kGenders; ++g) {
    out.allocation[g] = s.separable[g];
    out.mean_wage[g] =
        mean_over(s.separable[g], K, L, [&](int k, int l) { return wages.gender(g, k, l); });
  }
  return out;
}

GapDecomposition decompose_gap(const MatchMoments& m) {
  const int K = m.K();
  const int L = m.L();
  const CellWages wages(m);
  const Scenarios s = build_scenarios(m);
  auto gw = [&](int g) { return [&, g](int k, int l) { return wages.gender(g, k, l); }; };
  auto pw = [&](int k, int l) { return wages.pooled(k, l); };

  GapDecomposition d;
  d.warnings = s.warnings;
  d.n_female = m.total(0);
  d.n_male = m.total(1);
  d.baseline = m.mean_wage(0) - m.mean_wage(1);
  const double sep_f = mean_over(s.separable[0], K, L, gw(0));
  const double sep_m = mean_over(s.separable[1], K, L, gw(1));
  d.separable = sep_f - sep_m;
  d.complementarity = d.baseline - d.separable;

  const double sort_f = mean_over(s.sorting_female, K, L, gw(0));
  d.sorting = d.separable - (sort_f - sep_m);

  const double barg_f = mean_over(s.separable[0], K, L, pw);
  const double barg_m = mean_over(s.separable[1], K, L, pw);
  d.bargaining = d.separable - (barg_f - barg_m);

  d.residual = d.baseline - (d.complementarity + d.sorting + d.bargaining);
  return d;
}

GapDecomposition decompose_gap_draws(const MatchMoments& m, std::size_t draws,
                                     std::uint64_t seed) {
  if (draws == 0) throw ConfigError("draws mode needs at least one simulated worker");
  const int K = m.K();
  const int L = m.L();
  const CellWages wages(m);
  const Scenarios s = build_scenarios(m);

  // Cell sd: observed variance when present, else the pooled cell variance.
  auto cell_sd = [&](int g, int k, int l, bool pooled) {
    const CellMoment c = pooled ? m.pooled(k, l) : m.at(g, k, l);
    double v = c.count > 0 ? c.var : kNaN;
    if (!std::isfinite(v)) {
      const CellMoment p = m.pooled(k, l);
      v = p.count > 0 && std::isfinite(p.var) ? p.var : 0.0;
    }
    return std::sqrt(std::max(0.0, v));
  };

  // Sample mean wage of `draws` workers from an allocation.
  auto simulate = [&](const std::vector<double>& alloc, int g, bool pooled, std::uint64_t stream) {
    auto gen = substream(seed, {stream});
    std::vector<double> cum(alloc.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < alloc.size(); ++i) {
      acc += std::max(0.0, alloc[i]);
      cum[i] = acc;
    }
    std::normal_distribution<double> z(0.0, 1.0);
    CompensatedSum total;
    for (std::size_t d = 0; d < draws; ++d) {
      const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53 * acc;
      const auto cell = static_cast<int>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
      const int c = std::min(cell, K * L - 1);
      const int k = c / L;
      const int l = c % L;
      const double mu = pooled ? wages.pooled(k, l) : wages.gender(g, k, l);
      total += mu + cell_sd(g, k, l, pooled) * z(gen);
    }
    return total.value() / static_cast<double>(draws);
  };

  GapDecomposition d;
  d.warnings = s.warnings;
  d.n_female = m.total(0);
  d.n_male = m.total(1);
  d.baseline = simulate(s.baseline[0], 0, false, 1) - simulate(s.baseline[1], 1, false, 2);
  const double sep_m = simulate(s.separable[1], 1, false, 4);
  d.separable = simulate(s.separable[0], 0, false, 3) - sep_m;
  d.complementarity = d.baseline - d.separable;
  d.sorting = d.separable - (simulate(s.sorting_female, 0, false, 5) - sep_m);
  d.bargaining =
      d.separable - (simulate(s.separable[0], 0, true, 6) - simulate(s.separable[1], 1, true, 7));
  d.residual = d.baseline - (d.complementarity + d.sorting + d.bargaining);
  return d;
}

Subgroup parse_subgroup(const std::string& name) {
  if (name == "education") return Subgroup::Education;
  if (name == "age") return Subgroup::Age;
  if (name == "size") return Subgroup::Size;
  if (name == "occupation") return Subgroup::Occupation;
  throw ConfigError("unknown subgroup filter '" + name + "' (education|age|size|occupation)");
}

std::vector<SubgroupResult> subgroup_decompose(const panel::BiennialPanel& panel,
                                               const firmcluster::FirmClassing& classing,
                                               const mixture::TypeAssignment& types,
                                               Subgroup by, const DecomposeOptions& opt) {
  std::unordered_map<FirmId, int> size[2];
  for (const auto& r : panel.rows) {
    size[0][r.first.firm_id]++;
    size[1][r.second.firm_id]++;
  }
  auto label = [&](const panel::Observation& o, int t) -> std::string {
    switch (by) {
      case Subgroup::Education: return panel::to_string(o.education);
      case Subgroup::Age: {
        static const char* bins[] = {"<=30", "31-50", ">=51"};
        return bins[panel::age_bin(o.age)];
      }
      case Subgroup::Size: {
        const int n = size[t].at(o.firm_id);
        return n < 10 ? "size<10" : (n < 50 ? "size10-49" : "size>=50");
      }
      case Subgroup::Occupation: return "occ" + std::to_string(o.occupation);
    }
    return "?";
  };

  // Ordered groups for a deterministic report.
  std::map<std::string, std::vector<CellRecord>> groups;
  if (by == Subgroup::Age) {
    for (const char* b : {"<=30", "31-50", ">=51"}) groups[b];
  }
  for (const auto& r : panel.rows) {
    const int l = types.type_of(r.first.worker_id);
    const int g = index_of(r.first.gender);
    const panel::Observation* obs[2] = {&r.first, &r.second};
    for (int t = 0; t < 2; ++t) {
      groups[label(*obs[t], t)].push_back(
          {g, classing.class_of(obs[t]->firm_id), l, obs[t]->log_wage});
    }
  }
  std::vector<std::pair<std::string, std::vector<CellRecord>>> ordered(groups.begin(),
                                                                       groups.end());
  std::vector<SubgroupResult> out(ordered.size());
  parallel_for(ordered.size(), opt.threads, [&](std::size_t i) {
    auto& res = out[i];
    res.result.group = ordered[i].first;
    const MatchMoments m = tabulate_moments(classing.K, types.L, ordered[i].second);
    if (m.total(0) <= 0 || m.total(1) <= 0) {
      res.skipped = true;
      res.reason = "one gender absent";
      return;
    }
    try {
      res.result = opt.draws ? decompose_gap_draws(m, opt.n_draws, opt.seed + i) : decompose_gap(m);
      res.result.group = ordered[i].first;
    } catch (const DataError& e) {
      res.skipped = true;
      res.reason = e.what();
    }
  });
  return out;
}

}  // namespace wagemix::counterfactual
