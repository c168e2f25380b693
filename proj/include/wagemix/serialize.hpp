#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "wagemix/counterfactual.hpp"
#include "wagemix/decompose.hpp"
#include "wagemix/firmcluster.hpp"
#include "wagemix/graph.hpp"
#include "wagemix/mixture.hpp"
#include "wagemix/table.hpp"

// JSON artifacts carry "artifact" and "version" fields; class and type
// labels are 1-based on disk and 0-based in memory.
namespace wagemix::io {

using json = nlohmann::json;

inline constexpr int kArtifactVersion = 1;

json classing_json(const firmcluster::FirmClassing& c);
firmcluster::FirmClassing classing_from_json(const json& j);

json model_json(const mixture::MixtureModel& m);
mixture::MixtureModel model_from_json(const json& j);

json assignment_json(const mixture::TypeAssignment& a);
mixture::TypeAssignment assignment_from_json(const json& j);

json partition_json(const graph::MobilityGraph& g, const graph::Partition& p);
json ldcs_json(const graph::DualConnectedSet& d);

json kob_json(const decompose::KOBReport& r);
json variance_json(const decompose::VarDecompReport& r);
json gap_decomposition_json(const counterfactual::GapDecomposition& d);

// Delimited tables; schema names and versions are fixed per shape.
Table gap_statistic_table(const firmcluster::GapStatisticReport& r);
Table kob_table(const std::vector<std::pair<std::string, decompose::KOBReport>>& rows);
Table variance_table(const std::vector<std::pair<std::string, decompose::VarDecompReport>>& rows);
Table theil_table(const std::vector<std::pair<std::string, double>>& rows);
Table decomposition_table(const std::vector<counterfactual::SubgroupResult>& rows);
Table symmetry_table(const std::vector<graph::SymmetryReport>& reports);
Table connectivity_table(const graph::ConnectivityResult& r);
Table summary_table(const panel::PanelSummary& s);

std::string read_text(const std::string& path);
json read_json(const std::string& path);
// Two-space indent, sorted keys, trailing newline.
void write_json(const std::string& path, const json& j);
void write_table_file(const std::string& path, const Table& t);

}  // namespace wagemix::io
