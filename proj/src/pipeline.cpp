#include "wagemix/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "wagemix/digest.hpp"
#include "wagemix/error.hpp"
#include "wagemix/graph.hpp"
#include "wagemix/metrics.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/panel_io.hpp"
#include "wagemix/serialize.hpp"

namespace wagemix::pipeline {

using json = nlohmann::json;

namespace {

const std::set<std::string> kRunOptions = {"threads", "out"};

template <class T>
T positive(long long v, const std::string& key) {
  if (v < 1) throw ConfigError(key + " must be >= 1");
  return static_cast<T>(v);
}

}  // namespace

std::string config_hash(const KeyValueConfig& cfg) {
  KeyValueConfig c;
  for (const auto& [k, v] : cfg.entries()) {
    if (!kRunOptions.count(k)) c.set(k, v);
  }
  return sha256_hex(c.canonical_text());
}

std::uint64_t stage_seed(const KeyValueConfig& cfg, const std::string& stage) {
  const std::string key = "seed." + stage;
  if (cfg.has(key)) return cfg.get_uint(key);
  if (cfg.has("seed")) return derive_seed(cfg.get_uint("seed"), stage);
  throw ConfigError("no seed for stage '" + stage + "': set '" + key + "' or a master 'seed'");
}

PipelineConfig load_config(const KeyValueConfig& cfg) {
  PipelineConfig c;
  c.raw = cfg;
  c.input = cfg.get_string("input", "");
  c.input_format = cfg.get_string("input.format", "panel");
  if (c.input_format != "panel" && c.input_format != "contracts") {
    throw ConfigError("input.format must be 'panel' or 'contracts'");
  }
  c.truth = cfg.get_string("truth", "");
  c.K = positive<int>(cfg.get_int("K", 5), "K");
  c.L = positive<int>(cfg.get_int("L", 3), "L");
  c.kmeans_restarts = positive<int>(cfg.get_int("kmeans.restarts", 1000), "kmeans.restarts");
  c.em_reps = positive<int>(cfg.get_int("em.reps", 50), "em.reps");
  c.em_max_iter = positive<int>(cfg.get_int("em.max_iter", 2000), "em.max_iter");
  c.gapstat = cfg.get_string("gapstat", "off") == "on";
  c.gap_kmin = positive<int>(cfg.get_int("gapstat.kmin", 1), "gapstat.kmin");
  c.gap_kmax = positive<int>(cfg.get_int("gapstat.kmax", 10), "gapstat.kmax");
  c.gap_B = positive<int>(cfg.get_int("gapstat.B", 500), "gapstat.B");
  c.gap_restarts = positive<int>(cfg.get_int("gapstat.restarts", 20), "gapstat.restarts");
  c.gap_reference_restarts =
      positive<int>(cfg.get_int("gapstat.reference_restarts", 5), "gapstat.reference_restarts");
  if (c.gap_kmax <= c.gap_kmin) throw ConfigError("gapstat.kmax must exceed gapstat.kmin");
  if (cfg.has("counterfactual.by")) {
    c.subgroups = cfg.get_strings("counterfactual.by");
    for (const auto& s : c.subgroups) counterfactual::parse_subgroup(s);
  }
  const std::string mode = cfg.get_string("counterfactual.mode", "expectation");
  if (mode != "expectation" && mode != "draws") {
    throw ConfigError("counterfactual.mode must be 'expectation' or 'draws'");
  }
  c.draws = mode == "draws";
  c.n_draws = positive<std::size_t>(cfg.get_int("counterfactual.draws", 100000),
                                    "counterfactual.draws");
  if (cfg.has("connectivity.sizes")) {
    for (long long s : cfg.get_ints("connectivity.sizes")) {
      c.connectivity_sizes.push_back(static_cast<int>(positive<int>(s, "connectivity.sizes")));
    }
  }
  c.connectivity_move_prob = cfg.get_double("connectivity.move_prob", 0.02);
  c.connectivity_reps =
      positive<std::size_t>(cfg.get_int("connectivity.reps", 1000), "connectivity.reps");
  c.connectivity_core_share = cfg.get_double("connectivity.core_share", 1.0);
  for (const auto& s : kSeededStages) {
    if (s == "simulate" && !c.input.empty()) continue;
    c.seeds[s] = stage_seed(cfg, s);
  }
  c.out_dir = cfg.get_string("out", "");
  const long long threads = cfg.get_int("threads", 1);
  c.threads = static_cast<unsigned>(positive<long long>(threads, "threads"));
  return c;
}

panel::BiennialPanel load_panel(const std::string& path, const std::string& format,
                                const KeyValueConfig& cfg, panel::IngestionReport* report) {
  const auto read = panel::read_contracts_file(path, panel::ColumnMap::from_config(cfg));
  if (format == "panel") {
    if (read.rejected_nonpositive_wage > 0) {
      throw DataError(path + ": non-positive wages in a panel file");
    }
    return panel::assemble_biennial(read.rows);
  }
  auto cleaned = panel::clean_contracts(read.rows);
  cleaned.report.rejected_nonpositive_wage += read.rejected_nonpositive_wage;
  cleaned.report.rows_read += read.rejected_nonpositive_wage;
  if (report) *report = cleaned.report;
  std::vector<std::pair<int, int>> pairs;
  if (cfg.has("panel.year1")) {
    const int y = static_cast<int>(cfg.get_int("panel.year1"));
    pairs.emplace_back(y, y + 2);
  } else {
    pairs = panel::standard_biennial_pairs();
  }
  for (auto& b : panel::build_biennials(cleaned.rows, pairs)) {
    if (!b.rows.empty()) return std::move(b);
  }
  throw DataError(path + ": no non-empty biennial panel after cleaning");
}

RecoveryReport recovery(const panel::BiennialPanel& panel, const synth::GroundTruth& truth,
                        const firmcluster::FirmClassing& classing,
                        const mixture::MixtureModel& model) {
  const auto& spec = truth.spec;
  const int K = classing.K;
  const int L = model.L;
  if (K != spec.K || L != spec.L) {
    throw ConfigError("recovery needs the estimated K and L to match the ground truth");
  }
  RecoveryReport r;
  std::vector<int> est, tru;
  std::vector<double> overlap(K * K, 0.0);
  for (std::size_t i = 0; i < classing.firms.size(); ++i) {
    const auto it = truth.firm_class.find(classing.firms[i]);
    if (it == truth.firm_class.end()) continue;
    est.push_back(classing.klass[i]);
    tru.push_back(it->second);
    overlap[classing.klass[i] * K + it->second] -= 1.0;
  }
  r.ari = adjusted_rand_index(est, tru);
  r.class_map = hungarian(overlap, K);

  std::vector<double> cost(L * L, 0.0);
  for (int l = 0; l < L; ++l) {
    for (int lt = 0; lt < L; ++lt) {
      for (int k = 0; k < K; ++k) {
        const int kt = r.class_map[k];
        cost[l * L + lt] += std::abs(model.mu1[k * L + l] - spec.mu[0][kt][lt]) +
                            std::abs(model.mu2[k * L + l] - spec.mu[1][kt][lt]);
      }
    }
  }
  r.type_map = hungarian(cost, L);
  std::vector<int> inverse(L);
  for (int l = 0; l < L; ++l) inverse[r.type_map[l]] = l;

  for (int k = 0; k < K; ++k) {
    const int kt = r.class_map[k];
    for (int l = 0; l < L; ++l) {
      const int lt = r.type_map[l];
      r.max_mu_error = std::max({r.max_mu_error, std::abs(model.mu1[k * L + l] - spec.mu[0][kt][lt]),
                                 std::abs(model.mu2[k * L + l] - spec.mu[1][kt][lt])});
    }
  }

  std::vector<double> pc(K * K * L, 0.0), qc(K * L, 0.0);
  for (const auto& row : panel.rows) {
    const auto t = truth.worker_type.find(row.first.worker_id);
    if (t == truth.worker_type.end()) continue;
    const int l = inverse[t->second];
    const int k1 = classing.class_of(row.first.firm_id);
    if (row.mover) {
      const int k2 = classing.class_of(row.second.firm_id);
      pc[(k1 * K + k2) * L + l] += 1.0;
    } else {
      qc[k1 * L + l] += 1.0;
    }
  }
  auto compare = [&](const std::vector<double>& counts, int cells, auto&& estimate,
                     double& max_error, std::size_t* used) {
    for (int c = 0; c < cells; ++c) {
      double n = 0.0;
      for (int l = 0; l < L; ++l) n += counts[c * L + l];
      if (n <= 0.0) continue;
      if (used) ++*used;
      for (int l = 0; l < L; ++l) {
        max_error = std::max(max_error, std::abs(estimate(c, l) - counts[c * L + l] / n));
      }
    }
  };
  compare(pc, K * K, [&](int c, int l) { return model.p[c * L + l]; }, r.max_p_error, &r.p_cells);
  compare(qc, K, [&](int c, int l) { return model.q[c * L + l]; }, r.max_q_error, nullptr);
  return r;
}

json checks_json(const std::vector<Check>& checks) {
  json a = json::array();
  for (const auto& c : checks) {
    a.push_back({{"name", c.name},
                 {"value", std::isfinite(c.value) ? json(c.value) : json(nullptr)},
                 {"threshold", c.threshold},
                 {"relation", c.relation},
                 {"pass", c.pass}});
  }
  return {{"artifact", "checks"}, {"version", io::kArtifactVersion}, {"checks", a}};
}

json RunManifest::to_json() const {
  json j;
  j["artifact"] = "manifest";
  j["version"] = io::kArtifactVersion;
  j["program_version"] = kProgramVersion;
  j["config_hash"] = config_hash;
  j["config"] = config;
  j["artifact_versions"] = {{"classing", io::kArtifactVersion},
                            {"mixture_model", io::kArtifactVersion},
                            {"type_assignment", io::kArtifactVersion},
                            {"partition", io::kArtifactVersion},
                            {"tables", 1}};
  json stages_json = json::array();
  for (const auto& s : stages) {
    json js{{"name", s.name}, {"status", s.status}, {"seconds", s.seconds}, {"outputs", s.outputs}};
    if (!s.error.empty()) js["error"] = s.error;
    stages_json.push_back(std::move(js));
  }
  j["stages"] = std::move(stages_json);
  j["complete"] = complete;
  j["checks"] = {{"total", checks_total}, {"failed", checks_failed}};
  return j;
}

std::map<std::string, std::string> RunManifest::digests() const {
  std::map<std::string, std::string> out;
  for (const auto& s : stages) {
    for (const auto& [file, d] : s.outputs) out[s.name + "/" + file] = d;
  }
  return out;
}

namespace {

struct State {
  std::optional<panel::BiennialPanel> panel;
  std::optional<synth::GroundTruth> truth;
  std::optional<firmcluster::ECDFGrid> ecdfs;
  std::optional<firmcluster::FirmClassing> classing;
  std::optional<firmcluster::GapStatisticReport> gap;
  std::optional<mixture::MoverFit> movers;
  std::optional<mixture::StayerFit> stayers;
  std::optional<mixture::TypeAssignment> types;
  std::optional<MatchMoments> moments;
  std::optional<decompose::KOBReport> mincer, cakm;
  std::optional<decompose::FixedEffectsFit> fit[kGenders];
  std::optional<decompose::VarDecompReport> var_cakm[kGenders], var_blm[kGenders];
  std::optional<counterfactual::GapDecomposition> gap_all;
};

int exit_code_of(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const ConfigError&) {
    return 2;
  } catch (const DataError&) {
    return 3;
  } catch (const NumericalError&) {
    return 4;
  } catch (...) {
    return 4;
  }
}

std::string message_of(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& x) {
    return x.what();
  } catch (...) {
    return "unknown error";
  }
}

bool is_additive(const synth::MarketSpec& s) {
  for (int t = 0; t < 2; ++t) {
    for (int k = 0; k < s.K; ++k) {
      for (int l = 0; l < s.L; ++l) {
        const double m = s.mu[t][k][l] - s.mu[t][0][l] - s.mu[t][k][0] + s.mu[t][0][0];
        if (std::abs(m) > 1e-12) return false;
        for (int g = 0; g < kGenders; ++g) {
          if (std::abs(s.gender_offset[g][k][l] - s.gender_offset[g][0][0]) > 1e-12) return false;
        }
      }
    }
  }
  return true;
}

Check check(std::string name, double value, const std::string& rel, double threshold) {
  Check c{std::move(name), value, threshold, rel, false};
  if (rel == "<=") c.pass = value <= threshold;
  if (rel == ">=") c.pass = value >= threshold;
  if (rel == "==") c.pass = value == threshold;
  return c;
}

Table moments_table(const MatchMoments& m) {
  Table t{"match_moments", 1, {"gender", "class", "type", "count", "mean", "var"}, {}};
  for (int g = 0; g < kGenders; ++g) {
    for (int k = 0; k < m.K(); ++k) {
      for (int l = 0; l < m.L(); ++l) {
        const auto& c = m.at(g, k, l);
        t.add_row({to_string(gender_at(g)), format_number(static_cast<long long>(k + 1)),
                   format_number(static_cast<long long>(l + 1)), format_number(c.count),
                   format_number(c.mean), format_number(c.var)});
      }
    }
  }
  return t;
}

std::vector<double> cell_counts(const MatchMoments& m, int g) {
  std::vector<double> out;
  for (int k = 0; k < m.K(); ++k) {
    for (int l = 0; l < m.L(); ++l) out.push_back(m.at(g, k, l).count);
  }
  return out;
}

}  // namespace

RunManifest run_pipeline(const PipelineConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("pipeline needs an output directory (--out)");
  std::filesystem::create_directories(cfg.out_dir);
  RunManifest manifest;
  manifest.config_hash = config_hash(cfg.raw);
  for (const auto& [k, v] : cfg.raw.entries()) {
    if (!kRunOptions.count(k)) manifest.config[k] = v;
  }
  State st;
  const unsigned threads = cfg.threads;
  const std::string dir = cfg.out_dir;

  auto path = [&](const std::string& f) { return (std::filesystem::path(dir) / f).string(); };

  using Emit = std::function<void(const std::string&)>;
  std::vector<std::pair<std::string, std::function<void(const Emit&)>>> stages;

  auto write_json_file = [&](const Emit& emit, const std::string& f, const json& j) {
    io::write_json(path(f), j);
    emit(f);
  };
  auto write_table = [&](const Emit& emit, const std::string& f, const Table& t) {
    io::write_table_file(path(f), t);
    emit(f);
  };

  stages.emplace_back(cfg.input.empty() ? "simulate" : "ingest", [&](const Emit& emit) {
    if (cfg.input.empty()) {
      KeyValueConfig mc = cfg.raw;
      if (!mc.has("market.seed")) mc.set("market.seed", std::to_string(cfg.seeds.at("simulate")));
      const auto spec = synth::spec_from_config(mc, "market.");
      auto market = synth::generate_market(spec, threads);
      st.panel = std::move(market.panel);
      st.truth = std::move(market.truth);
      std::ofstream(path("truth.json"), std::ios::binary) << synth::truth_json(*st.truth) << '\n';
      emit("truth.json");
    } else {
      panel::IngestionReport report;
      st.panel = load_panel(cfg.input, cfg.input_format, cfg.raw, &report);
      if (cfg.input_format == "contracts") {
        std::ofstream(path("ingestion.json"), std::ios::binary) << panel::report_json(report)
                                                                << '\n';
        emit("ingestion.json");
      }
      if (!cfg.truth.empty()) st.truth = synth::truth_from_json(io::read_text(cfg.truth));
    }
    {
      std::ofstream out(path("panel.csv"), std::ios::binary);
      panel::write_observations(out, panel::flatten(*st.panel));
    }
    emit("panel.csv");
    write_table(emit, "summary.tsv", io::summary_table(panel::summary_stats(*st.panel)));
  });

  stages.emplace_back("cluster", [&](const Emit& emit) {
    st.ecdfs = firmcluster::compute_ecdfs(*st.panel);
    firmcluster::KMeansOptions o;
    o.K = cfg.K;
    o.restarts = cfg.kmeans_restarts;
    o.seed = cfg.seeds.at("cluster");
    o.threads = threads;
    auto c = firmcluster::kmeans_classes(*st.ecdfs, o);
    firmcluster::assign_period2_firms(c, *st.panel);
    st.classing = std::move(c);
    write_json_file(emit, "classing.json", io::classing_json(*st.classing));
  });

  if (cfg.gapstat) {
    stages.emplace_back("gapstat", [&](const Emit& emit) {
      firmcluster::GapOptions o;
      o.kmin = cfg.gap_kmin;
      o.kmax = cfg.gap_kmax;
      o.B = cfg.gap_B;
      o.restarts = cfg.gap_restarts;
      o.reference_restarts = cfg.gap_reference_restarts;
      o.seed = cfg.seeds.at("gapstat");
      o.threads = threads;
      st.gap = firmcluster::gap_statistic(*st.ecdfs, o);
      write_table(emit, "gapstat.tsv", io::gap_statistic_table(*st.gap));
    });
  }

  stages.emplace_back("estimate", [&](const Emit& emit) {
    const auto data = mixture::mixture_data(*st.panel, *st.classing);
    mixture::EMOptions o;
    o.L = cfg.L;
    o.reps = cfg.em_reps;
    o.seed = cfg.seeds.at("estimate");
    o.max_iter = cfg.em_max_iter;
    o.threads = threads;
    st.movers = mixture::fit_movers(data, o);
    st.stayers = mixture::fit_stayers(data, st.movers->model, cfg.em_max_iter);
    json j = io::model_json(st.stayers->model);
    j["best_restart"] = st.movers->best_restart;
    j["max_loglik_decrease"] = {{"movers", st.movers->max_loglik_decrease},
                                {"stayers", st.stayers->max_loglik_decrease}};
    write_json_file(emit, "model.json", j);
  });

  stages.emplace_back("assign", [&](const Emit& emit) {
    st.types = mixture::map_assign(*st.panel, *st.classing, st.stayers->model);
    write_json_file(emit, "assignment.json", io::assignment_json(*st.types));
  });

  stages.emplace_back("decompose", [&](const Emit& emit) {
    const auto& p = *st.panel;
    st.mincer = decompose::mincer_kob(p);
    for (int g = 0; g < kGenders; ++g) {
      st.fit[g] = decompose::cakm_fit(p, *st.classing, gender_at(g));
      st.var_cakm[g] = decompose::variance_decomposition(*st.fit[g]);
    }
    st.cakm = decompose::cakm_kob(*st.fit[0], *st.fit[1]);
    st.moments = counterfactual::match_moments(p, *st.classing, *st.types);
    std::vector<std::pair<std::string, decompose::VarDecompReport>> var_rows;
    json additive = json::object();
    for (int g = 0; g < kGenders; ++g) {
      const auto fit = decompose::weighted_tw_fe(*st.moments, g);
      st.var_blm[g] =
          decompose::blm_variance(p, *st.classing, *st.types, fit, gender_at(g));
      var_rows.emplace_back(std::string("cakm_") + to_string(gender_at(g)), *st.var_cakm[g]);
      // NaN effects (unobserved classes or types) are written as null.
      auto finite = [](const std::vector<double>& xs) {
        json a = json::array();
        for (double x : xs) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
        return a;
      };
      additive[to_string(gender_at(g))] = {{"alpha", finite(fit.alpha)},
                                           {"psi", finite(fit.psi)},
                                           {"reference_class", fit.reference_class + 1}};
    }
    for (int g = 0; g < kGenders; ++g) {
      var_rows.emplace_back(std::string("blm_") + to_string(gender_at(g)), *st.var_blm[g]);
    }
    write_table(emit, "kob.tsv", io::kob_table({{"mincer", *st.mincer}, {"cakm", *st.cakm}}));
    write_json_file(emit, "kob.json",
                    {{"mincer", io::kob_json(*st.mincer)}, {"cakm", io::kob_json(*st.cakm)}});
    write_table(emit, "variance.tsv", io::variance_table(var_rows));
    std::vector<std::pair<std::string, double>> theil;
    for (int g = 0; g < kGenders; ++g) {
      theil.emplace_back(to_string(gender_at(g)), decompose::theil_index(cell_counts(*st.moments, g)));
    }
    write_table(emit, "theil.tsv", io::theil_table(theil));
    write_table(emit, "moments.tsv", moments_table(*st.moments));
    write_json_file(emit, "additive.json", additive);
  });

  stages.emplace_back("counterfactual", [&](const Emit& emit) {
    const std::uint64_t seed = cfg.seeds.at("counterfactual");
    std::vector<counterfactual::SubgroupResult> rows;
    counterfactual::SubgroupResult all;
    all.result = cfg.draws ? counterfactual::decompose_gap_draws(*st.moments, cfg.n_draws, seed)
                           : counterfactual::decompose_gap(*st.moments);
    st.gap_all = all.result;
    rows.push_back(all);
    json j = json::object();
    j["All"] = io::gap_decomposition_json(all.result);
    for (const auto& name : cfg.subgroups) {
      counterfactual::DecomposeOptions o;
      o.draws = cfg.draws;
      o.n_draws = cfg.n_draws;
      o.seed = derive_seed(seed, name);
      o.threads = threads;
      auto groups = counterfactual::subgroup_decompose(*st.panel, *st.classing, *st.types,
                                                       counterfactual::parse_subgroup(name), o);
      json arr = json::array();
      for (auto& g : groups) {
        g.result.group = name + ":" + g.result.group;
        json e = io::gap_decomposition_json(g.result);
        e["skipped"] = g.skipped;
        if (g.skipped) e["reason"] = g.reason;
        arr.push_back(std::move(e));
        rows.push_back(std::move(g));
      }
      j[name] = std::move(arr);
    }
    write_table(emit, "counterfactual.tsv", io::decomposition_table(rows));
    write_json_file(emit, "counterfactual.json", j);
  });

  stages.emplace_back("graph", [&](const Emit& emit) {
    const auto g = graph::mover_graph(*st.panel);
    write_json_file(emit, "components.json", io::partition_json(g, graph::connected_sets(g)));
    write_json_file(emit, "ldcs.json", io::ldcs_json(graph::largest_dual_connected(g)));
    std::vector<graph::SymmetryReport> reps;
    for (int s = 0; s < kGenders; ++s) {
      reps.push_back(graph::mobility_symmetry_diagnostic(*st.fit[s], *st.panel, *st.classing));
    }
    write_table(emit, "exomobility.tsv", io::symmetry_table(reps));
    if (!cfg.connectivity_sizes.empty()) {
      graph::ConnectivityOptions o;
      o.move_prob = cfg.connectivity_move_prob;
      o.reps = cfg.connectivity_reps;
      o.core_share = cfg.connectivity_core_share;
      o.seed = cfg.seeds.at("graph");
      o.threads = threads;
      write_table(emit, "connectivity.tsv",
                  io::connectivity_table(graph::connectivity_simulation(cfg.connectivity_sizes, o)));
    }
  });

  stages.emplace_back("verify", [&](const Emit& emit) {
    std::vector<Check> checks;
    const double scale = std::max(1.0, std::abs(st.classing->objective));
    checks.push_back(check("kmeans_objective_increase", st.classing->max_objective_increase / scale,
                           "<=", 1e-9));
    checks.push_back(check("em_mover_loglik_decrease", st.movers->max_loglik_decrease, "<=", 1e-9));
    checks.push_back(
        check("em_stayer_loglik_decrease", st.stayers->max_loglik_decrease, "<=", 1e-9));
    for (const auto* name : {"mincer", "cakm"}) {
      const auto& r = std::string(name) == "mincer" ? *st.mincer : *st.cakm;
      checks.push_back(check(std::string("kob_identity_") + name,
                             std::abs(r.explained + r.unexplained - r.overall), "<=", 1e-10));
    }
    for (int g = 0; g < kGenders; ++g) {
      for (const auto& [name, v] : {std::pair{"cakm", *st.var_cakm[g]}, {"blm", *st.var_blm[g]}}) {
        checks.push_back(check(std::string("variance_identity_") + name + "_" +
                                   to_string(gender_at(g)),
                               std::abs(v.component_sum() - v.var_w) / v.var_w, "<=", 1e-8));
      }
    }
    if (st.truth) {
      const auto& spec = st.truth->spec;
      if (spec.K == cfg.K && spec.L == cfg.L) {
        const auto r = recovery(*st.panel, *st.truth, *st.classing, st.stayers->model);
        checks.push_back(check("firm_class_ari", r.ari, ">=", 0.95));
        checks.push_back(check("mixture_mu_error", r.max_mu_error, "<=", 0.02));
        checks.push_back(check("mixture_p_error", r.max_p_error, "<=", 0.02));
        checks.push_back(check("mixture_q_error", r.max_q_error, "<=", 0.02));
      }
      if (st.gap) checks.push_back(check("gap_statistic_K", st.gap->chosen_K, "==", spec.K));
      if (is_additive(spec)) {
        const auto pop = synth::expected_moments(spec);
        double worst = 0.0;
        for (int g = 0; g < kGenders; ++g) {
          for (double m : decompose::weighted_tw_fe(pop, g).residual) {
            if (std::isfinite(m)) worst = std::max(worst, std::abs(m));
          }
        }
        checks.push_back(check("additive_null_match_effects", worst, "<=", 1e-6));
        checks.push_back(
            check("additive_null_complementarity", std::abs(st.gap_all->complementarity), "<=", 0.005));
      }
    }
    manifest.checks_total = checks.size();
    for (const auto& c : checks) manifest.checks_failed += c.pass ? 0 : 1;
    write_json_file(emit, "checks.json", checks_json(checks));
  });

  bool failed = false;
  for (auto& [name, run] : stages) {
    StageRecord rec;
    rec.name = name;
    if (failed) {
      rec.status = "skipped";
      manifest.stages.push_back(rec);
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      run([&](const std::string& f) { rec.outputs[f] = sha256_file(path(f)); });
      rec.status = "ok";
    } catch (...) {
      const auto e = std::current_exception();
      rec.status = "failed";
      rec.error = message_of(e);
      manifest.exit_code = exit_code_of(e);
      failed = true;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    manifest.stages.push_back(rec);
  }
  manifest.complete = !failed;
  io::write_json(path("manifest.json"), manifest.to_json());
  return manifest;
}

}  // namespace wagemix::pipeline
