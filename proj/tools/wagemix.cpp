// Command-line front end. Every flag maps onto a config key, so a run can be
// described entirely by a config file and reproduced from it.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"

#include "wagemix/config.hpp"
#include "wagemix/counterfactual.hpp"
#include "wagemix/decompose.hpp"
#include "wagemix/error.hpp"
#include "wagemix/firmcluster.hpp"
#include "wagemix/graph.hpp"
#include "wagemix/mixture.hpp"
#include "wagemix/panel_io.hpp"
#include "wagemix/pipeline.hpp"
#include "wagemix/serialize.hpp"
#include "wagemix/synth.hpp"

namespace fs = std::filesystem;
using namespace wagemix;
using json = nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::string out;
  unsigned threads = 1;
  std::string seed;
  // Subcommand flags, keyed by the config entry they set.
  std::map<std::string, std::string> flags;
};

KeyValueConfig load(const Globals& g) {
  KeyValueConfig cfg = g.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(g.config);
  for (const auto& [k, v] : g.flags) {
    if (!v.empty()) cfg.set(k, v);
  }
  if (!g.seed.empty()) cfg.set("seed", g.seed);
  if (!g.out.empty()) cfg.set("out", g.out);
  cfg.set("threads", std::to_string(g.threads));
  return cfg;
}

// --out names a file when it has an extension, else a directory.
std::string out_path(const KeyValueConfig& cfg, const std::string& default_name) {
  const std::string out = cfg.get_string("out", ".");
  const fs::path p(out);
  if (p.has_extension()) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return out;
  }
  fs::create_directories(p);
  return (p / default_name).string();
}

std::string sibling(const std::string& path, const std::string& ext) {
  return fs::path(path).replace_extension(ext).string();
}

std::string require(const KeyValueConfig& cfg, const std::string& key, const std::string& flag) {
  if (!cfg.has(key)) throw ConfigError("missing --" + flag + " (config key '" + key + "')");
  return cfg.get_string(key);
}

panel::BiennialPanel input_panel(const KeyValueConfig& cfg) {
  return pipeline::load_panel(require(cfg, "input", "input"), cfg.get_string("input.format", "panel"),
                              cfg);
}

firmcluster::FirmClassing input_classing(const KeyValueConfig& cfg) {
  return io::classing_from_json(io::read_json(require(cfg, "classing", "classing")));
}

mixture::TypeAssignment input_assignment(const KeyValueConfig& cfg) {
  return io::assignment_from_json(io::read_json(require(cfg, "assignment", "assignment")));
}

unsigned threads_of(const KeyValueConfig& cfg) {
  return static_cast<unsigned>(cfg.get_int("threads", 1));
}

void say(const std::string& what, const std::string& path) { std::cout << what << ": " << path << '\n'; }

int cmd_simulate(const KeyValueConfig& cfg) {
  const std::string prefix = cfg.has("market.K") ? "market." : "";
  KeyValueConfig c = cfg;
  if (!c.has(prefix + "seed")) c.set(prefix + "seed", std::to_string(pipeline::stage_seed(cfg, "simulate")));
  const auto market = synth::generate_market(synth::spec_from_config(c, prefix), threads_of(cfg));
  const std::string panel_file = out_path(cfg, "panel.csv");
  {
    std::ofstream out(panel_file, std::ios::binary);
    panel::write_observations(out, panel::flatten(market.panel));
  }
  const std::string truth_file = sibling(panel_file, ".truth.json");
  std::ofstream(truth_file, std::ios::binary) << synth::truth_json(market.truth) << '\n';
  say("panel", panel_file);
  say("truth", truth_file);
  return 0;
}

int cmd_cluster(const KeyValueConfig& cfg) {
  const auto p = input_panel(cfg);
  firmcluster::KMeansOptions o;
  o.K = static_cast<int>(cfg.get_int("K", 10));
  o.restarts = static_cast<int>(cfg.get_int("kmeans.restarts", 1000));
  o.seed = pipeline::stage_seed(cfg, "cluster");
  o.threads = threads_of(cfg);
  auto c = firmcluster::kmeans_classes(firmcluster::compute_ecdfs(p), o);
  firmcluster::assign_period2_firms(c, p);
  const std::string f = out_path(cfg, "classing.json");
  io::write_json(f, io::classing_json(c));
  say("classing", f);
  return 0;
}

int cmd_gapstat(const KeyValueConfig& cfg) {
  const auto p = input_panel(cfg);
  firmcluster::GapOptions o;
  o.kmin = static_cast<int>(cfg.get_int("gapstat.kmin", 1));
  o.kmax = static_cast<int>(cfg.get_int("gapstat.kmax", 10));
  o.B = static_cast<int>(cfg.get_int("gapstat.B", 500));
  o.restarts = static_cast<int>(cfg.get_int("gapstat.restarts", 20));
  o.reference_restarts = static_cast<int>(cfg.get_int("gapstat.reference_restarts", 5));
  o.seed = pipeline::stage_seed(cfg, "gapstat");
  o.threads = threads_of(cfg);
  const auto r = firmcluster::gap_statistic(firmcluster::compute_ecdfs(p), o);
  const std::string f = out_path(cfg, "gapstat.tsv");
  io::write_table_file(f, io::gap_statistic_table(r));
  say("gap statistic", f);
  std::cout << "chosen K: " << r.chosen_K << '\n';
  return 0;
}

int cmd_estimate(const KeyValueConfig& cfg) {
  const auto p = input_panel(cfg);
  const auto c = input_classing(cfg);
  const auto data = mixture::mixture_data(p, c);
  mixture::EMOptions o;
  o.L = static_cast<int>(cfg.get_int("L", 10));
  o.reps = static_cast<int>(cfg.get_int("em.reps", 50));
  o.max_iter = static_cast<int>(cfg.get_int("em.max_iter", 2000));
  o.seed = pipeline::stage_seed(cfg, "estimate");
  o.threads = threads_of(cfg);
  const auto movers = mixture::fit_movers(data, o);
  const auto stayers = mixture::fit_stayers(data, movers.model, o.max_iter);
  json j = io::model_json(stayers.model);
  j["best_restart"] = movers.best_restart;
  j["max_loglik_decrease"] = {{"movers", movers.max_loglik_decrease},
                              {"stayers", stayers.max_loglik_decrease}};
  const std::string f = out_path(cfg, "model.json");
  io::write_json(f, j);
  say("model", f);
  return 0;
}

int cmd_assign(const KeyValueConfig& cfg) {
  const auto p = input_panel(cfg);
  const auto c = input_classing(cfg);
  const auto m = io::model_from_json(io::read_json(require(cfg, "model", "model")));
  const auto a = mixture::map_assign(p, c, m);
  const std::string f = out_path(cfg, "assignment.json");
  io::write_json(f, io::assignment_json(a));
  say("assignment", f);
  return 0;
}

int cmd_decompose(const KeyValueConfig& cfg) {
  const std::string kind = cfg.get_string("decompose.kind", "mincer");
  const auto p = input_panel(cfg);
  std::string f;
  if (kind == "mincer") {
    const auto r = decompose::mincer_kob(p);
    f = out_path(cfg, "kob_mincer.tsv");
    io::write_table_file(f, io::kob_table({{"mincer", r}}));
    io::write_json(sibling(f, ".json"), io::kob_json(r));
  } else if (kind == "cakm") {
    const auto c = input_classing(cfg);
    const auto r = decompose::cakm_kob(decompose::cakm_fit(p, c, Gender::F),
                                       decompose::cakm_fit(p, c, Gender::M));
    f = out_path(cfg, "kob_cakm.tsv");
    io::write_table_file(f, io::kob_table({{"cakm", r}}));
    io::write_json(sibling(f, ".json"), io::kob_json(r));
  } else if (kind == "variance") {
    const auto c = input_classing(cfg);
    std::vector<std::pair<std::string, decompose::VarDecompReport>> rows;
    json j;
    for (Gender g : {Gender::F, Gender::M}) {
      const auto v = decompose::variance_decomposition(decompose::cakm_fit(p, c, g));
      rows.emplace_back(std::string("cakm_") + to_string(g), v);
      j[std::string("cakm_") + to_string(g)] = io::variance_json(v);
    }
    if (cfg.has("assignment")) {
      const auto a = input_assignment(cfg);
      const auto m = counterfactual::match_moments(p, c, a);
      for (Gender g : {Gender::F, Gender::M}) {
        const auto fit = decompose::weighted_tw_fe(m, index_of(g));
        const auto v = decompose::blm_variance(p, c, a, fit, g);
        rows.emplace_back(std::string("blm_") + to_string(g), v);
        j[std::string("blm_") + to_string(g)] = io::variance_json(v);
      }
    }
    f = out_path(cfg, "variance.tsv");
    io::write_table_file(f, io::variance_table(rows));
    io::write_json(sibling(f, ".json"), j);
  } else if (kind == "theil") {
    const auto c = input_classing(cfg);
    const auto a = input_assignment(cfg);
    const auto m = counterfactual::match_moments(p, c, a);
    std::vector<std::pair<std::string, double>> rows;
    for (int g = 0; g < kGenders; ++g) {
      std::vector<double> counts;
      for (int k = 0; k < m.K(); ++k) {
        for (int l = 0; l < m.L(); ++l) counts.push_back(m.at(g, k, l).count);
      }
      rows.emplace_back(to_string(gender_at(g)), decompose::theil_index(counts));
    }
    f = out_path(cfg, "theil.tsv");
    io::write_table_file(f, io::theil_table(rows));
  } else {
    throw ConfigError("--kind must be mincer, cakm, variance or theil");
  }
  say(kind, f);
  return 0;
}

int cmd_counterfactual(const KeyValueConfig& cfg) {
  const auto p = input_panel(cfg);
  const auto c = input_classing(cfg);
  const auto a = input_assignment(cfg);
  const std::string mode = cfg.get_string("counterfactual.mode", "expectation");
  if (mode != "expectation" && mode != "draws") throw ConfigError("--mode must be expectation or draws");
  counterfactual::DecomposeOptions o;
  o.draws = mode == "draws";
  o.n_draws = static_cast<std::size_t>(cfg.get_int("counterfactual.draws", 100000));
  o.seed = pipeline::stage_seed(cfg, "counterfactual");
  o.threads = threads_of(cfg);
  const auto m = counterfactual::match_moments(p, c, a);
  std::vector<counterfactual::SubgroupResult> rows(1);
  rows[0].result = o.draws ? counterfactual::decompose_gap_draws(m, o.n_draws, o.seed)
                           : counterfactual::decompose_gap(m);
  if (cfg.has("counterfactual.by")) {
    for (const auto& name : cfg.get_strings("counterfactual.by")) {
      auto groups = counterfactual::subgroup_decompose(p, c, a, counterfactual::parse_subgroup(name), o);
      for (auto& g : groups) {
        g.result.group = name + ":" + g.result.group;
        rows.push_back(std::move(g));
      }
    }
  }
  const std::string f = out_path(cfg, "counterfactual.tsv");
  io::write_table_file(f, io::decomposition_table(rows));
  json j = json::array();
  for (const auto& r : rows) j.push_back(io::gap_decomposition_json(r.result));
  io::write_json(sibling(f, ".json"), j);
  say("counterfactual", f);
  return 0;
}

int cmd_graph(const KeyValueConfig& cfg, const std::string& what) {
  if (what == "connectivity") {
    graph::ConnectivityOptions o;
    std::vector<int> sizes;
    require(cfg, "connectivity.sizes", "sizes");
    for (long long s : cfg.get_ints("connectivity.sizes")) {
      sizes.push_back(static_cast<int>(s));
    }
    o.move_prob = cfg.get_double("connectivity.move_prob", 0.02);
    o.reps = static_cast<std::size_t>(cfg.get_int("connectivity.reps", 1000));
    o.core_share = cfg.get_double("connectivity.core_share", 1.0);
    o.seed = pipeline::stage_seed(cfg, "graph");
    o.threads = threads_of(cfg);
    const std::string f = out_path(cfg, "connectivity.tsv");
    io::write_table_file(f, io::connectivity_table(graph::connectivity_simulation(sizes, o)));
    say("connectivity", f);
    return 0;
  }
  const auto p = input_panel(cfg);
  if (what == "components") {
    const auto g = graph::mover_graph(p);
    const std::string f = out_path(cfg, "components.json");
    io::write_json(f, io::partition_json(g, graph::connected_sets(g)));
    say("components", f);
  } else if (what == "ldcs") {
    const auto d = graph::largest_dual_connected(p);
    const std::string f = out_path(cfg, "ldcs.json");
    io::write_json(f, io::ldcs_json(d));
    say("ldcs", f);
    std::cout << d.diagnostic << '\n';
  } else if (what == "bias") {
    const std::string form = cfg.get_string("bias.form", "variance");
    if (form != "variance" && form != "covariance") throw ConfigError("--form must be variance or covariance");
    const auto d = graph::bias_design(p, cfg.get_double("bias.sigma2", 1.0),
                                      form == "variance" ? graph::BiasForm::FirmVariance
                                                         : graph::BiasForm::WorkerFirmCovariance);
    const auto r = graph::exact_lmb_bias(d);
    const std::string f = out_path(cfg, "bias.json");
    io::write_json(f, {{"form", form}, {"sigma2", d.sigma2}, {"xi", r.xi}, {"trace", r.trace},
                       {"columns", r.columns}, {"workers", d.n_workers}, {"firms", d.n_firms}});
    say("bias", f);
  } else if (what == "exomobility") {
    const auto c = input_classing(cfg);
    std::vector<graph::SymmetryReport> reps;
    for (Gender g : {Gender::F, Gender::M}) {
      reps.push_back(graph::mobility_symmetry_diagnostic(decompose::cakm_fit(p, c, g), p, c));
    }
    const std::string f = out_path(cfg, "exomobility.tsv");
    io::write_table_file(f, io::symmetry_table(reps));
    say("exomobility", f);
  } else {
    throw ConfigError("graph action must be components, ldcs, bias, connectivity or exomobility");
  }
  return 0;
}

int cmd_pipeline(const KeyValueConfig& cfg) {
  const auto run = pipeline::run_pipeline(pipeline::load_config(cfg));
  for (const auto& s : run.stages) {
    std::cout << s.name << ": " << s.status;
    if (!s.error.empty()) std::cout << " (" << s.error << ")";
    std::cout << '\n';
  }
  std::cout << "checks: " << run.checks_total - run.checks_failed << "/" << run.checks_total
            << " passed\n";
  return run.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Firm-class and worker-type wage decomposition toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Flat key = value config file");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Master seed");

  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key,
                  const std::string& help) { sub->add_option(name, g.flags[key], help); };

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic market");
  auto* cluster = app.add_subcommand("cluster", "K-means firm classes on wage eCDFs");
  flag(cluster, "--k", "K", "Number of classes");
  flag(cluster, "--restarts", "kmeans.restarts", "K-means restarts");
  auto* gapstat = app.add_subcommand("gapstat", "Gap statistic over K");
  flag(gapstat, "--kmin", "gapstat.kmin", "Smallest K");
  flag(gapstat, "--kmax", "gapstat.kmax", "Largest K");
  flag(gapstat, "--B", "gapstat.B", "Reference sets");
  auto* estimate = app.add_subcommand("estimate", "Fit the mover/stayer mixture");
  flag(estimate, "--L", "L", "Number of worker types");
  flag(estimate, "--reps", "em.reps", "EM restarts");
  flag(estimate, "--classing", "classing", "Classing JSON");
  auto* assign = app.add_subcommand("assign", "MAP worker types");
  flag(assign, "--classing", "classing", "Classing JSON");
  flag(assign, "--model", "model", "Model JSON");
  auto* decomp = app.add_subcommand("decompose", "KOB, variance and Theil reports");
  flag(decomp, "--kind", "decompose.kind", "mincer|cakm|variance|theil");
  flag(decomp, "--classing", "classing", "Classing JSON");
  flag(decomp, "--assignment", "assignment", "Assignment JSON");
  auto* cf = app.add_subcommand("counterfactual", "Separable-market gap decomposition");
  flag(cf, "--by", "counterfactual.by", "education|age|size|occupation");
  flag(cf, "--mode", "counterfactual.mode", "expectation|draws");
  flag(cf, "--draws", "counterfactual.draws", "Simulated workers per scenario");
  flag(cf, "--classing", "classing", "Classing JSON");
  flag(cf, "--assignment", "assignment", "Assignment JSON");
  auto* gr = app.add_subcommand("graph", "Mobility-graph tools");
  std::string graph_action;
  gr->add_option("action", graph_action, "components|ldcs|bias|connectivity|exomobility")->required();
  flag(gr, "--classing", "classing", "Classing JSON");
  flag(gr, "--sigma2", "bias.sigma2", "Noise variance");
  flag(gr, "--form", "bias.form", "variance|covariance");
  flag(gr, "--sizes", "connectivity.sizes", "Firm sizes, comma separated");
  flag(gr, "--move-prob", "connectivity.move_prob", "Per-worker move probability");
  flag(gr, "--reps", "connectivity.reps", "Replications");
  flag(gr, "--core-share", "connectivity.core_share", "Share of moves into the core");
  auto* pipe = app.add_subcommand("pipeline", "Run every stage");
  for (auto* sub : {cluster, gapstat, estimate, assign, decomp, cf, gr}) {
    flag(sub, "--input", "input", "Panel file");
  }
  (void)simulate;
  (void)pipe;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const KeyValueConfig cfg = load(g);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "simulate") return cmd_simulate(cfg);
    if (cmd == "cluster") return cmd_cluster(cfg);
    if (cmd == "gapstat") return cmd_gapstat(cfg);
    if (cmd == "estimate") return cmd_estimate(cfg);
    if (cmd == "assign") return cmd_assign(cfg);
    if (cmd == "decompose") return cmd_decompose(cfg);
    if (cmd == "counterfactual") return cmd_counterfactual(cfg);
    if (cmd == "graph") return cmd_graph(cfg, graph_action);
    return cmd_pipeline(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
}
