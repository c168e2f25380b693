#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "wagemix/config.hpp"
#include "wagemix/moments.hpp"
#include "wagemix/panel.hpp"

namespace wagemix::synth {

inline constexpr double kSigmaFloor = 1e-4;

/// Generative parameters of a synthetic two-period market. Classes and types
/// are 0-based. Array layouts:
///   class_attachment[g][l][k] = P(k | l, g)
///   transition_kernel[l][k][k'] = P(destination k' | origin k, type l, mover)
///   mu[t][k][l], sigma[t][k][l] for periods t = 0, 1
///   gender_offset[g][k][l] added to mu for gender g
struct MarketSpec {
  int K = 0;
  int L = 0;
  std::vector<int> firms_per_class;
  double size_log_mean = 3.4;
  double size_log_sd = 0.4;
  double female_share = 0.5;
  std::vector<double> type_marginals[kGenders];
  std::vector<std::vector<double>> class_attachment[kGenders];
  double mover_share = 0.5;
  std::vector<std::vector<std::vector<double>>> transition_kernel;
  std::vector<std::vector<double>> mu[2];
  std::vector<std::vector<double>> sigma[2];
  std::vector<std::vector<double>> gender_offset[kGenders];
  int year1 = 2010;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

/// Reads a spec from `<prefix>key` entries. See configs/recovery_market.cfg
/// for the full key list; list values are row-major over the layouts above.
MarketSpec spec_from_config(const KeyValueConfig& cfg, const std::string& prefix = "");

struct GroundTruth {
  MarketSpec spec;
  std::unordered_map<WorkerId, int> worker_type;
  std::unordered_map<FirmId, int> firm_class;
  std::vector<FirmId> firms;  // generation order
};

struct Market {
  panel::BiennialPanel panel;
  GroundTruth truth;
};

/// Draws firms per class, fills each firm's period-1 workforce with
/// (gender, type) from P(g, l | k), moves a mover_share of workers to another
/// firm of a class drawn from the kernel, and draws log wages. Parallel over
/// firms with one substream per firm; output does not depend on `threads`.
Market generate_market(const MarketSpec& spec, unsigned threads = 1);

/// Population match moments implied by the spec, pooling both periods. Job
/// slots per class are proportional to firms_per_class (one size law for all
/// classes); counts are expected worker-years per unit of population.
MatchMoments expected_moments(const MarketSpec& spec);

/// P(g, l | k) implied by the spec: [k][g * L + l].
std::vector<std::vector<double>> cell_probabilities(const MarketSpec& spec);

std::string truth_json(const GroundTruth& truth);
GroundTruth truth_from_json(const std::string& text);

}  // namespace wagemix::synth
