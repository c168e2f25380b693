#include "wagemix/serialize.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "wagemix/error.hpp"

namespace wagemix::io {

namespace {

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double get_num(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

json nums(const std::vector<double>& xs) {
  json a = json::array();
  for (double x : xs) a.push_back(num(x));
  return a;
}

std::vector<double> get_nums(const json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(get_num(x));
  return out;
}

// Row-major [rows][cols] nested array.
json matrix(const std::vector<double>& xs, int rows, int cols) {
  json a = json::array();
  for (int r = 0; r < rows; ++r) {
    json row = json::array();
    for (int c = 0; c < cols; ++c) row.push_back(num(xs[r * cols + c]));
    a.push_back(std::move(row));
  }
  return a;
}

std::vector<double> get_matrix(const json& j) {
  std::vector<double> out;
  for (const auto& row : j) {
    for (const auto& x : row) out.push_back(get_num(x));
  }
  return out;
}

void check_artifact(const json& j, const char* name) {
  if (!j.contains("artifact") || j.at("artifact") != name) {
    throw DataError(std::string("expected a '") + name + "' artifact");
  }
  if (j.at("version").get<int>() != kArtifactVersion) {
    throw DataError(std::string(name) + " artifact version " + j.at("version").dump() +
                    " is not supported");
  }
}

template <class Fn>
auto guarded(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw DataError(std::string(what) + ": " + e.what());
  }
}

std::string share(double part, double whole) {
  return format_number(whole != 0.0 ? part / whole : kNaN);
}

}  // namespace

json classing_json(const firmcluster::FirmClassing& c) {
  json j;
  j["artifact"] = "classing";
  j["version"] = kArtifactVersion;
  j["K"] = c.K;
  j["grid"] = nums(c.grid);
  j["centroids"] = matrix(c.centroids, c.K, static_cast<int>(c.grid.size()));
  j["class_mean_wage"] = nums(c.class_mean_wage);
  j["objective"] = num(c.objective);
  j["best_restart"] = c.best_restart;
  j["max_objective_increase"] = num(c.max_objective_increase);
  j["assigned_from_period2"] = c.assigned_from_period2;
  json firms = json::array();
  json klass = json::array();
  for (std::size_t i = 0; i < c.firms.size(); ++i) {
    firms.push_back(c.firms[i].value);
    klass.push_back(c.klass[i] + 1);
  }
  j["firms"] = std::move(firms);
  j["class"] = std::move(klass);
  return j;
}

firmcluster::FirmClassing classing_from_json(const json& j) {
  return guarded("classing JSON", [&] {
    check_artifact(j, "classing");
    firmcluster::FirmClassing c;
    c.K = j.at("K").get<int>();
    c.grid = get_nums(j.at("grid"));
    c.centroids = get_matrix(j.at("centroids"));
    c.class_mean_wage = get_nums(j.at("class_mean_wage"));
    c.objective = get_num(j.at("objective"));
    c.best_restart = j.at("best_restart").get<int>();
    c.max_objective_increase = get_num(j.at("max_objective_increase"));
    c.assigned_from_period2 = j.at("assigned_from_period2").get<std::size_t>();
    const auto& firms = j.at("firms");
    const auto& klass = j.at("class");
    if (firms.size() != klass.size()) throw DataError("classing JSON: firms and class differ in length");
    for (std::size_t i = 0; i < firms.size(); ++i) {
      const int k = klass[i].get<int>() - 1;
      if (k < 0 || k >= c.K) throw DataError("classing JSON: class label out of range");
      c.firms.emplace_back(firms[i].get<std::string>());
      c.klass.push_back(k);
    }
    c.rebuild_index();
    return c;
  });
}

json model_json(const mixture::MixtureModel& m) {
  json j;
  j["artifact"] = "mixture_model";
  j["version"] = kArtifactVersion;
  j["K"] = m.K;
  j["L"] = m.L;
  json p = json::array();
  for (int k = 0; k < m.K; ++k) {
    json row = json::array();
    for (int k2 = 0; k2 < m.K; ++k2) {
      json cell = json::array();
      for (int l = 0; l < m.L; ++l) cell.push_back(num(m.P(k, k2, l)));
      row.push_back(std::move(cell));
    }
    p.push_back(std::move(row));
  }
  j["p"] = std::move(p);
  j["q"] = matrix(m.q, m.K, m.L);
  j["mu"] = {{"period1", matrix(m.mu1, m.K, m.L)}, {"period2", matrix(m.mu2, m.K, m.L)}};
  j["sd"] = {{"period1", matrix(m.sd1, m.K, m.L)}, {"period2", matrix(m.sd2, m.K, m.L)}};
  j["loglik"] = {{"movers", num(m.loglik_movers)}, {"stayers", num(m.loglik_stayers)}};
  return j;
}

mixture::MixtureModel model_from_json(const json& j) {
  return guarded("model JSON", [&] {
    check_artifact(j, "mixture_model");
    mixture::MixtureModel m(j.at("K").get<int>(), j.at("L").get<int>());
    m.p.clear();
    for (const auto& row : j.at("p")) {
      for (const auto& cell : row) {
        for (const auto& x : cell) m.p.push_back(get_num(x));
      }
    }
    m.q = get_matrix(j.at("q"));
    m.mu1 = get_matrix(j.at("mu").at("period1"));
    m.mu2 = get_matrix(j.at("mu").at("period2"));
    m.sd1 = get_matrix(j.at("sd").at("period1"));
    m.sd2 = get_matrix(j.at("sd").at("period2"));
    m.loglik_movers = get_num(j.at("loglik").at("movers"));
    m.loglik_stayers = get_num(j.at("loglik").at("stayers"));
    const std::size_t kl = static_cast<std::size_t>(m.K * m.L);
    if (m.p.size() != kl * m.K || m.q.size() != kl || m.mu1.size() != kl || m.mu2.size() != kl ||
        m.sd1.size() != kl || m.sd2.size() != kl) {
      throw DataError("model JSON: array shapes do not match K and L");
    }
    return m;
  });
}

json assignment_json(const mixture::TypeAssignment& a) {
  json j;
  j["artifact"] = "type_assignment";
  j["version"] = kArtifactVersion;
  j["L"] = a.L;
  json workers = json::array();
  json type = json::array();
  for (std::size_t i = 0; i < a.workers.size(); ++i) {
    workers.push_back(a.workers[i].value);
    type.push_back(a.type[i] + 1);
  }
  j["workers"] = std::move(workers);
  j["type"] = std::move(type);
  j["posterior"] = matrix(a.posterior, static_cast<int>(a.workers.size()), a.L);
  return j;
}

mixture::TypeAssignment assignment_from_json(const json& j) {
  return guarded("assignment JSON", [&] {
    check_artifact(j, "type_assignment");
    mixture::TypeAssignment a;
    a.L = j.at("L").get<int>();
    for (const auto& w : j.at("workers")) a.workers.emplace_back(w.get<std::string>());
    for (const auto& t : j.at("type")) {
      const int l = t.get<int>() - 1;
      if (l < 0 || l >= a.L) throw DataError("assignment JSON: type label out of range");
      a.type.push_back(l);
    }
    a.posterior = get_matrix(j.at("posterior"));
    if (a.type.size() != a.workers.size() || a.posterior.size() != a.workers.size() * a.L) {
      throw DataError("assignment JSON: array lengths differ");
    }
    a.rebuild_index();
    return a;
  });
}

json partition_json(const graph::MobilityGraph& g, const graph::Partition& p) {
  json j;
  j["artifact"] = "partition";
  j["version"] = kArtifactVersion;
  json comps = json::array();
  for (const auto& c : p.components) {
    json members = json::array();
    for (int i : c) members.push_back(g.firms[i].value);
    comps.push_back(std::move(members));
  }
  j["components"] = std::move(comps);
  j["largest"] = p.largest();
  j["firms"] = g.n();
  std::size_t movers = 0;
  for (const auto& [e, c] : g.edges) movers += c;
  j["movers"] = movers;
  return j;
}

json ldcs_json(const graph::DualConnectedSet& d) {
  json j;
  j["artifact"] = "dual_connected_set";
  j["version"] = kArtifactVersion;
  json firms = json::array();
  for (const auto& f : d.firms) firms.push_back(f.value);
  j["firms"] = std::move(firms);
  j["iterations"] = d.iterations;
  j["diagnostic"] = d.diagnostic;
  return j;
}

json kob_json(const decompose::KOBReport& r) {
  json j;
  j["overall"] = num(r.overall);
  j["explained"] = num(r.explained);
  j["unexplained"] = num(r.unexplained);
  j["firm"] = num(r.firm);
  j["sorting"] = num(r.sorting);
  j["bargaining"] = num(r.bargaining);
  j["n_female"] = r.n_female;
  j["n_male"] = r.n_male;
  j["dropped_columns"] = r.dropped_columns;
  j["warnings"] = r.warnings;
  return j;
}

json variance_json(const decompose::VarDecompReport& r) {
  json j;
  j["var_w"] = num(r.var_w);
  for (const auto& [name, v] : r.components()) j[name] = num(v);
  j["n"] = r.n;
  return j;
}

json gap_decomposition_json(const counterfactual::GapDecomposition& d) {
  json j;
  j["group"] = d.group;
  j["baseline"] = num(d.baseline);
  j["separable"] = num(d.separable);
  j["complementarity"] = num(d.complementarity);
  j["sorting"] = num(d.sorting);
  j["bargaining"] = num(d.bargaining);
  j["residual"] = num(d.residual);
  j["n_female"] = num(d.n_female);
  j["n_male"] = num(d.n_male);
  j["warnings"] = d.warnings;
  return j;
}

Table gap_statistic_table(const firmcluster::GapStatisticReport& r) {
  Table t{"gap_statistic", 1, {"k", "W_k", "log_W_k", "ref_log_W_k", "gap", "s", "chosen"}, {}};
  for (const auto& row : r.rows) {
    t.add_row({format_number(static_cast<long long>(row.k)), format_number(row.W),
               format_number(row.log_W), format_number(row.ref_log_W), format_number(row.gap),
               format_number(row.s), row.k == r.chosen_K ? "1" : "0"});
  }
  return t;
}

Table kob_table(const std::vector<std::pair<std::string, decompose::KOBReport>>& rows) {
  Table t{"kob",
          1,
          {"group", "overall", "explained", "unexplained", "firm", "sorting", "bargaining",
           "explained_share", "unexplained_share", "n_female", "n_male"},
          {}};
  for (const auto& [group, r] : rows) {
    t.add_row({group, format_number(r.overall), format_number(r.explained),
               format_number(r.unexplained), format_number(r.firm), format_number(r.sorting),
               format_number(r.bargaining), share(r.explained, r.overall),
               share(r.unexplained, r.overall), format_number(static_cast<long long>(r.n_female)),
               format_number(static_cast<long long>(r.n_male))});
  }
  return t;
}

Table variance_table(const std::vector<std::pair<std::string, decompose::VarDecompReport>>& rows) {
  Table t{"variance_decomposition", 1, {"group", "component", "value", "share"}, {}};
  for (const auto& [group, r] : rows) {
    t.add_row({group, "var_w", format_number(r.var_w), "1"});
    for (const auto& [name, v] : r.components()) {
      t.add_row({group, name, format_number(v), share(v, r.var_w)});
    }
  }
  return t;
}

Table theil_table(const std::vector<std::pair<std::string, double>>& rows) {
  Table t{"theil", 1, {"group", "theil"}, {}};
  for (const auto& [group, v] : rows) t.add_row({group, format_number(v)});
  return t;
}

Table decomposition_table(const std::vector<counterfactual::SubgroupResult>& rows) {
  Table t{"gap_decomposition",
          1,
          {"group", "baseline", "separable", "complementarity", "sorting", "bargaining",
           "residual", "complementarity_share", "sorting_share", "bargaining_share", "n_female",
           "n_male", "status"},
          {}};
  for (const auto& s : rows) {
    const auto& d = s.result;
    if (s.skipped) {
      t.add_row({d.group, "", "", "", "", "", "", "", "", "", "", "", "skipped: " + s.reason});
      continue;
    }
    t.add_row({d.group, format_number(d.baseline), format_number(d.separable),
               format_number(d.complementarity), format_number(d.sorting),
               format_number(d.bargaining), format_number(d.residual),
               share(d.complementarity, d.baseline), share(d.sorting, d.baseline),
               share(d.bargaining, d.baseline), format_number(d.n_female),
               format_number(d.n_male), "ok"});
  }
  return t;
}

Table symmetry_table(const std::vector<graph::SymmetryReport>& reports) {
  Table t{"mobility_symmetry",
          1,
          {"gender", "origin", "destination", "direction", "n", "mean_change", "se"},
          {}};
  for (const auto& r : reports) {
    for (const auto& c : r.cells) {
      t.add_row({to_string(c.gender), format_number(static_cast<long long>(c.origin + 1)),
                 format_number(static_cast<long long>(c.destination + 1)), c.direction,
                 format_number(static_cast<long long>(c.n)), format_number(c.mean_change),
                 format_number(c.se)});
    }
  }
  return t;
}

Table connectivity_table(const graph::ConnectivityResult& r) {
  Table t{"connectivity", 1, {"firm", "size", "inclusion", "se"}, {}};
  for (std::size_t j = 0; j < r.sizes.size(); ++j) {
    t.add_row({format_number(static_cast<long long>(j + 1)),
               format_number(static_cast<long long>(r.sizes[j])), format_number(r.inclusion[j]),
               format_number(r.se[j])});
  }
  return t;
}

Table summary_table(const panel::PanelSummary& s) {
  Table t{"panel_summary", 1, {"statistic", "F", "M"}, {}};
  auto row = [&](const std::string& name, auto get) {
    t.add_row({name, format_number(get(s.by_gender[0])), format_number(get(s.by_gender[1]))});
  };
  using G = panel::GenderSummary;
  row("firms", [](const G& g) { return static_cast<long long>(g.firms); });
  row("firms_at_least_10", [](const G& g) { return static_cast<long long>(g.firms_at_least_10); });
  row("firms_at_least_50", [](const G& g) { return static_cast<long long>(g.firms_at_least_50); });
  row("mean_firm_size", [](const G& g) { return g.mean_firm_size; });
  row("median_firm_size", [](const G& g) { return g.median_firm_size; });
  for (int e = 0; e < panel::kEducationLevels; ++e) {
    row(std::string("education_") + panel::to_string(static_cast<panel::Education>(e)),
        [e](const G& g) { return g.education_shares[e]; });
  }
  static const char* ages[] = {"age_le30", "age_31_50", "age_ge51"};
  for (int a = 0; a < 3; ++a) row(ages[a], [a](const G& g) { return g.age_shares[a]; });
  for (int k = 0; k < panel::kSectors; ++k) {
    row(std::string("sector_") + panel::to_string(static_cast<panel::Sector>(k)),
        [k](const G& g) { return g.sector_shares[k]; });
  }
  row("mean_tenure", [](const G& g) { return g.mean_tenure; });
  row("mean_log_wage", [](const G& g) { return g.mean_log_wage; });
  row("var_log_wage", [](const G& g) { return g.var_log_wage; });
  row("worker_years", [](const G& g) { return static_cast<long long>(g.worker_years); });
  row("unique_workers", [](const G& g) { return static_cast<long long>(g.unique_workers); });
  row("gender_fraction", [](const G& g) { return g.gender_fraction; });
  return t;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(2) << '\n';
}

void write_table_file(const std::string& path, const Table& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  write_table(out, t);
}

}  // namespace wagemix::io
