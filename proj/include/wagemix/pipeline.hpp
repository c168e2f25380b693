#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "wagemix/config.hpp"
#include "wagemix/counterfactual.hpp"
#include "wagemix/decompose.hpp"
#include "wagemix/firmcluster.hpp"
#include "wagemix/mixture.hpp"
#include "wagemix/panel.hpp"
#include "wagemix/synth.hpp"

namespace wagemix::pipeline {

inline constexpr const char* kProgramVersion = "1.0.0";

/// Stages that draw random numbers. Each gets `seed.<stage>` if present,
/// else a seed derived from the master `seed`.
inline const std::vector<std::string> kSeededStages = {"simulate", "cluster", "gapstat",
                                                       "estimate", "counterfactual", "graph"};

struct PipelineConfig {
  KeyValueConfig raw;
  std::string input;                  // panel file; empty means simulate
  std::string input_format = "panel";  // panel | contracts
  std::string truth;                  // optional ground-truth JSON for file input
  int K = 5;
  int L = 3;
  int kmeans_restarts = 1000;
  int em_reps = 50;
  int em_max_iter = 2000;
  bool gapstat = false;
  int gap_kmin = 1;
  int gap_kmax = 10;
  int gap_B = 500;
  int gap_restarts = 20;
  int gap_reference_restarts = 5;
  std::vector<std::string> subgroups;
  bool draws = false;
  std::size_t n_draws = 100000;
  std::vector<int> connectivity_sizes;
  double connectivity_move_prob = 0.02;
  std::size_t connectivity_reps = 1000;
  double connectivity_core_share = 1.0;
  std::map<std::string, std::uint64_t> seeds;
  std::string out_dir;
  unsigned threads = 1;
};

/// Keys read from the flat config; `threads` and `out` are run options and
/// do not enter the config hash.
PipelineConfig load_config(const KeyValueConfig& cfg);

/// sha256 of the canonical config text without run options.
std::string config_hash(const KeyValueConfig& cfg);

std::uint64_t stage_seed(const KeyValueConfig& cfg, const std::string& stage);

struct StageRecord {
  std::string name;
  std::string status = "pending";  // ok | failed | skipped
  double seconds = 0.0;
  std::map<std::string, std::string> outputs;  // file -> sha256
  std::string error;
};

struct RunManifest {
  std::string config_hash;
  std::map<std::string, std::string> config;
  std::vector<StageRecord> stages;
  bool complete = false;
  int exit_code = 0;
  std::size_t checks_total = 0;
  std::size_t checks_failed = 0;

  nlohmann::json to_json() const;
  // Digest of every stage output, in stage order; equal for identical runs.
  std::map<std::string, std::string> digests() const;
};

RunManifest run_pipeline(const PipelineConfig& config);

/// A panel file: `panel` format is a written biennial (two years two apart);
/// `contracts` is raw contract data that goes through cleaning and the first
/// non-empty standard biennial (or `panel.year1` when set).
panel::BiennialPanel load_panel(const std::string& path, const std::string& format,
                                const KeyValueConfig& cfg, panel::IngestionReport* report = nullptr);

/// Class and type recovery against ground truth. Estimated classes are
/// matched to true classes by maximum overlap, types by closest means.
/// p and q are compared with the shares realized by the true types.
struct RecoveryReport {
  double ari = 0.0;
  std::vector<int> class_map;  // estimated -> true
  std::vector<int> type_map;   // estimated -> true
  double max_mu_error = 0.0;
  double max_p_error = 0.0;
  double max_q_error = 0.0;
  std::size_t p_cells = 0;
};

RecoveryReport recovery(const panel::BiennialPanel& panel, const synth::GroundTruth& truth,
                        const firmcluster::FirmClassing& classing,
                        const mixture::MixtureModel& model);

struct Check {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  std::string relation;  // "<=", ">=", "=="
  bool pass = false;
};

nlohmann::json checks_json(const std::vector<Check>& checks);

}  // namespace wagemix::pipeline
