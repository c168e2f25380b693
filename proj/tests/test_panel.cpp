#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "wagemix/error.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/panel.hpp"
#include "wagemix/panel_io.hpp"

using namespace wagemix;
using namespace wagemix::panel;

namespace {

Observation obs(const std::string& w, const std::string& f, int year, double wage,
                Gender g = Gender::F, int span = 365) {
  Observation o;
  o.worker_id = WorkerId(w);
  o.firm_id = FirmId(f);
  o.year = year;
  o.log_wage = wage;
  o.gender = g;
  o.contract_span = span;
  return o;
}

}  // namespace

TEST_CASE("clean_contracts keeps the longest contract") {
  std::vector<Observation> raw{obs("A", "f1", 2010, 2.0, Gender::F, 300),
                               obs("A", "f2", 2010, 3.0, Gender::F, 100)};
  const auto r = clean_contracts(raw);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].firm_id.value == "f1");
  CHECK(r.report.dropped_secondary_contracts == 1);
}

TEST_CASE("clean_contracts tie-breaks by wage then lowest firm id") {
  std::vector<Observation> raw{obs("A", "f3", 2010, 2.0), obs("A", "f2", 2010, 2.5),
                               obs("A", "f1", 2010, 2.5)};
  const auto r = clean_contracts(raw);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].firm_id.value == "f1");
}

TEST_CASE("clean_contracts is the identity on single contracts") {
  std::vector<Observation> raw{obs("A", "f1", 2010, 2.0), obs("B", "f1", 2010, 1.5)};
  const auto r = clean_contracts(raw);
  CHECK(r.rows == raw);
  CHECK(clean_contracts(std::vector<Observation>{}).rows.empty());
}

TEST_CASE("clean_contracts rejects invalid rows and applies filters") {
  std::vector<Observation> raw{obs("A", "f1", 2010, NAN), obs("B", "f1", 2010, 1.0),
                               obs("C", "f1", 2010, 1.0), obs("D", "f1", 2010, 1.0),
                               obs("E", "f1", 2010, 1.0), obs("F", "f1", 2010, 1.0)};
  raw[1].age = 12;
  raw[2].hours = 0.0;
  raw[3].hours = 29.5;
  raw[4].private_sector = false;
  raw[5].hours = 30.0;  // inclusive threshold
  const auto r = clean_contracts(raw);
  CHECK(r.report.rejected_nonfinite_wage == 1);
  CHECK(r.report.rejected_invalid_age == 1);
  CHECK(r.report.rejected_nonpositive_hours == 1);
  CHECK(r.report.dropped_short_hours == 1);
  CHECK(r.report.dropped_non_private == 1);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].worker_id.value == "F");
}

TEST_CASE("clean_contracts matches a brute-force per-worker scan") {
  auto gen = substream(11, {});
  std::vector<Observation> raw;
  for (int w = 0; w < 10; ++w) {
    for (int year : {2010, 2011}) {
      const int n = 1 + static_cast<int>(gen() % 4);
      for (int c = 0; c < n; ++c) {
        auto o = obs("w" + std::to_string(w), "f" + std::to_string(gen() % 5), year,
                     0.5 * static_cast<double>(gen() % 4), Gender::M,
                     100 * static_cast<int>(1 + gen() % 3));
        raw.push_back(o);
      }
    }
  }
  std::reverse(raw.begin(), raw.end());
  const auto got = clean_contracts(raw).rows;
  // Oracle: per (worker, year), scan every contract for the preferred one.
  std::map<std::pair<std::string, int>, Observation> best;
  for (const auto& o : raw) {
    auto key = std::make_pair(o.worker_id.value, o.year);
    auto it = best.find(key);
    if (it == best.end()) {
      best.emplace(key, o);
      continue;
    }
    const auto& b = it->second;
    const bool better = o.contract_span > b.contract_span ||
                        (o.contract_span == b.contract_span &&
                         (o.log_wage > b.log_wage ||
                          (o.log_wage == b.log_wage && o.firm_id < b.firm_id)));
    if (better) it->second = o;
  }
  REQUIRE(got.size() == best.size());
  std::size_t i = 0;
  for (const auto& [key, o] : best) {
    CHECK(got[i].worker_id == o.worker_id);
    CHECK(got[i].year == o.year);
    CHECK(got[i].firm_id == o.firm_id);
    CHECK(got[i].log_wage == o.log_wage);
    ++i;
  }
}

TEST_CASE("build_biennials drops a firm at a 9:1 gender ratio") {
  // Firm b has 9 men and 1 woman; firm a is balanced. Worker x is only in
  // 2010 and must go too.
  std::vector<Observation> rows;
  for (int i = 0; i < 10; ++i) {
    const Gender g = i == 0 ? Gender::F : Gender::M;
    for (int y : {2010, 2012}) rows.push_back(obs("b" + std::to_string(i), "fb", y, 1.0, g));
  }
  for (int y : {2010, 2012}) {
    rows.push_back(obs("a1", "fa", y, 1.0, Gender::F));
    rows.push_back(obs("a2", "fa", y, 1.0, Gender::M));
  }
  rows.push_back(obs("x", "fa", 2010, 1.0, Gender::M));
  const auto cleaned = clean_contracts(rows).rows;
  const std::vector<std::pair<int, int>> pairs{{2010, 2012}};
  const auto out = build_biennials(cleaned, pairs);
  REQUIRE(out.size() == 1);
  const auto& p = out[0];
  // Hand enumeration: a1 and a2 survive.
  REQUIRE(p.rows.size() == 2);
  CHECK(p.rows[0].first.worker_id.value == "a1");
  CHECK(p.rows[1].first.worker_id.value == "a2");
  CHECK(p.dropped_firms == 1);
}

TEST_CASE("build_biennials output is balanced") {
  auto gen = substream(21, {});
  std::vector<Observation> rows;
  for (int w = 0; w < 400; ++w) {
    const Gender g = gen() % 2 ? Gender::F : Gender::M;
    for (int y : {2010, 2012}) {
      if (gen() % 10 == 0) continue;
      rows.push_back(obs("w" + std::to_string(w), "f" + std::to_string(gen() % 12), y, 1.0, g));
    }
  }
  const auto cleaned = clean_contracts(rows).rows;
  const std::vector<std::pair<int, int>> pairs{{2010, 2012}};
  const auto p = build_biennials(cleaned, pairs).at(0);
  std::set<std::string> seen;
  for (const auto& r : p.rows) {
    CHECK(r.first.worker_id == r.second.worker_id);
    CHECK(r.first.year == 2010);
    CHECK(r.second.year == 2012);
    CHECK(r.mover == (r.first.firm_id != r.second.firm_id));
    CHECK(seen.insert(r.first.worker_id.value).second);
  }
}

TEST_CASE("build_biennials edge cases") {
  const std::vector<std::pair<int, int>> pairs{{2010, 2012}};
  CHECK(build_biennials(std::vector<Observation>{}, pairs).empty());
  // Nobody is seen in both years.
  const std::vector<Observation> lonely{obs("a", "f1", 2010, 1.0), obs("b", "f1", 2012, 1.0)};
  const auto none = build_biennials(lonely, pairs);
  REQUIRE(none.size() == 1);
  CHECK(none[0].rows.empty());
  CHECK(none[0].empty_warning);
  const std::vector<std::pair<int, int>> bad{{2010, 2011}};
  CHECK_THROWS_AS(build_biennials(std::vector<Observation>{}, bad), ConfigError);
  CHECK(standard_biennial_pairs().size() == 6);
  CHECK(standard_biennial_pairs().front() == std::make_pair(2010, 2012));
  CHECK(standard_biennial_pairs().back() == std::make_pair(2015, 2017));
}

TEST_CASE("assemble_biennial and flatten are inverse") {
  std::vector<Observation> rows{obs("a", "f1", 2010, 1.0), obs("a", "f2", 2012, 1.5),
                                obs("b", "f1", 2010, 2.0, Gender::M),
                                obs("b", "f1", 2012, 2.1, Gender::M)};
  const auto p = assemble_biennial(rows);
  CHECK(p.year1 == 2010);
  CHECK(p.movers() == 1);
  auto back = flatten(p);
  auto sorted = rows;
  auto key = [](const Observation& o) { return std::make_pair(o.year, o.worker_id); };
  std::sort(back.begin(), back.end(), [&](auto& x, auto& y) { return key(x) < key(y); });
  std::sort(sorted.begin(), sorted.end(), [&](auto& x, auto& y) { return key(x) < key(y); });
  CHECK(back == sorted);
  rows.pop_back();
  CHECK_THROWS_AS(assemble_biennial(rows), DataError);
}

TEST_CASE("summary_stats equal wages give no gap") {
  std::vector<Observation> rows{obs("a", "f1", 2010, 2.0, Gender::F), obs("a", "f1", 2012, 2.0, Gender::F),
                                obs("b", "f1", 2010, 2.0, Gender::M), obs("b", "f1", 2012, 2.0, Gender::M)};
  const auto s = summary_stats(assemble_biennial(rows));
  CHECK(s[Gender::F].mean_log_wage - s[Gender::M].mean_log_wage == 0.0);
}

TEST_CASE("summary_stats shares match direct tabulation") {
  auto gen = substream(5, {});
  std::vector<Observation> rows;
  for (int w = 0; w < 50; ++w) {
    Observation o = obs("w" + std::to_string(w), "f" + std::to_string(gen() % 7), 2010,
                        1.0 + 0.01 * static_cast<double>(gen() % 100),
                        gen() % 2 ? Gender::F : Gender::M);
    o.education = static_cast<Education>(gen() % 3);
    o.sector = static_cast<Sector>(gen() % 5);
    o.age = 18 + static_cast<int>(gen() % 50);
    o.occupation = static_cast<int>(gen() % 4);
    rows.push_back(o);
    Observation o2 = o;
    o2.year = 2012;
    rows.push_back(o2);
  }
  const auto p = assemble_biennial(rows);
  const auto s = summary_stats(p);
  for (int g = 0; g < kGenders; ++g) {
    double n = 0, college = 0, young = 0, trade = 0;
    std::vector<double> wages;
    for (const auto& r : p.rows) {
      if (index_of(r.first.gender) != g) continue;
      ++n;
      college += r.first.education == Education::College;
      young += r.first.age <= 30;
      trade += r.first.sector == Sector::Trade;
      wages.push_back(r.first.log_wage);
    }
    const auto& gs = s.by_gender[g];
    CHECK(gs.education_shares[2] == doctest::Approx(college / n));
    CHECK(gs.age_shares[0] == doctest::Approx(young / n));
    CHECK(gs.sector_shares[3] == doctest::Approx(trade / n));
    CHECK(gs.mean_log_wage == doctest::Approx(mean(wages)));
    double total = 0;
    for (double x : gs.education_shares) total += x;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    total = 0;
    for (double x : gs.sector_shares) total += x;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    total = 0;
    for (const auto& [occ, x] : gs.occupation_shares) total += x;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(gs.worker_years == 2 * static_cast<std::size_t>(n));
  }
  CHECK_THROWS_AS(summary_stats(BiennialPanel{}), DataError);
}

TEST_CASE("reading delimited contracts") {
  std::istringstream comma(
      "worker_id,firm_id,year,gender,wage,hours\n"
      "w1,f1,2010,F,10,40\n"
      "w2,f1,2010,M,0,40\n");
  const auto r = read_contracts(comma);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].log_wage == doctest::Approx(std::log(10.0)));
  CHECK(r.rejected_nonpositive_wage == 1);

  std::istringstream tab("worker_id\tfirm_id\tyear\tgender\tlog_wage\nw1\tf1\t2010\tM\t1.5\n");
  const auto t = read_contracts(tab);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].gender == Gender::M);

  std::istringstream missing("worker_id,year,gender,log_wage\nw1,2010,F,1\n");
  CHECK_THROWS_AS(read_contracts(missing), DataError);
}

TEST_CASE("column mapping from config") {
  std::istringstream cfgs("column.worker_id = pis\ncolumn.firm_id = cnpj\n");
  const auto cfg = KeyValueConfig::parse(cfgs);
  std::istringstream in("pis,cnpj,year,gender,log_wage\nw1,f9,2011,F,1.25\n");
  const auto r = read_contracts(in, ColumnMap::from_config(cfg));
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].firm_id.value == "f9");
}

TEST_CASE("written observations read back unchanged") {
  std::vector<Observation> rows{obs("a", "f1", 2010, 1.0 / 3.0), obs("b", "f2", 2010, 2.5, Gender::M)};
  rows[0].education = Education::College;
  rows[1].sector = Sector::Construction;
  rows[1].tenure = 3.25;
  std::ostringstream out;
  write_observations(out, rows);
  std::istringstream in(out.str());
  const auto back = read_contracts(in);
  CHECK(back.rows == rows);
  std::ostringstream again;
  write_observations(again, back.rows);
  CHECK(again.str() == out.str());
}
