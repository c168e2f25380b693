#include <cmath>
#include <map>
#include <sstream>

#include "doctest.h"
#include "wagemix/error.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/panel_io.hpp"
#include "wagemix/synth.hpp"

using namespace wagemix;
using namespace wagemix::synth;

namespace {

MarketSpec spec_from(const std::string& text) {
  std::istringstream in(text);
  return spec_from_config(KeyValueConfig::parse(in));
}

const char* kSmall =
    "K = 3\n"
    "L = 2\n"
    "firms_per_class = 500\n"
    "female_share = 0.5\n"
    "mover_share = 0.4\n"
    "seed = 99\n"
    "type_marginals.F = 0.6 0.4\n"
    "type_marginals.M = 0.3 0.7\n"
    "transition_kernel = 0.6 0.3 0.1, 0.2 0.6 0.2, 0.1 0.3 0.6, 0.2 0.3 0.5, 0.1 0.4 0.5, 0.3 0.3 0.4\n"
    "mu.class = 0 0.5 1.0\n"
    "mu.type = 0 0.3\n"
    "mu.interaction = 0.1\n"
    "mu.growth = 0.05\n"
    "sigma.p1 = 0.2\n";

std::string text_of(const Market& m) {
  std::ostringstream out;
  panel::write_observations(out, panel::flatten(m.panel));
  return out.str();
}

}  // namespace

TEST_CASE("generation is deterministic and thread independent") {
  const auto spec = spec_from(kSmall);
  const auto a = generate_market(spec, 1);
  const auto b = generate_market(spec, 1);
  const auto c = generate_market(spec, 3);
  CHECK(text_of(a) == text_of(b));
  CHECK(text_of(a) == text_of(c));
  CHECK(truth_json(a.truth) == truth_json(c.truth));
}

TEST_CASE("a different seed changes draws, not parameters") {
  auto spec = spec_from(kSmall);
  const auto a = generate_market(spec);
  spec.seed = 100;
  const auto b = generate_market(spec);
  CHECK(text_of(a) != text_of(b));
  CHECK(a.truth.spec.mu[0] == b.truth.spec.mu[0]);
  CHECK(a.truth.spec.transition_kernel == b.truth.spec.transition_kernel);
}

TEST_CASE("cell means agree with the spec within 3 standard errors") {
  const auto spec = spec_from(kSmall);
  const auto m = generate_market(spec);
  REQUIRE(m.panel.rows.size() > 40000);
  // Direct per-cell averaging with the true labels.
  std::map<std::tuple<int, int, int>, std::pair<double, double>> acc;  // sum, n
  for (const auto& r : m.panel.rows) {
    const int l = m.truth.worker_type.at(r.first.worker_id);
    const panel::Observation* o[2] = {&r.first, &r.second};
    for (int t = 0; t < 2; ++t) {
      const int k = m.truth.firm_class.at(o[t]->firm_id);
      auto& a = acc[{t, k, l}];
      a.first += o[t]->log_wage;
      a.second += 1.0;
    }
  }
  for (const auto& [key, a] : acc) {
    const auto [t, k, l] = key;
    const double se = spec.sigma[t][k][l] / std::sqrt(a.second);
    CHECK(std::abs(a.first / a.second - spec.mu[t][k][l]) < 3.0 * se);
  }
  CHECK(acc.size() == 12u);
}

TEST_CASE("type marginals and mover share converge") {
  // Uniform attachment and equal class counts make P(l | g) the spec marginal.
  const auto spec = spec_from(kSmall);
  const auto m = generate_market(spec);
  double n[2] = {0, 0}, first_type[2] = {0, 0}, movers = 0;
  for (const auto& r : m.panel.rows) {
    const int g = index_of(r.first.gender);
    n[g] += 1;
    first_type[g] += m.truth.worker_type.at(r.first.worker_id) == 0;
    movers += r.mover;
  }
  for (int g = 0; g < 2; ++g) {
    CHECK(std::abs(first_type[g] / n[g] - spec.type_marginals[g][0]) < 3.0 / std::sqrt(n[g]));
  }
  const double total = n[0] + n[1];
  CHECK(std::abs(movers / total - spec.mover_share) < 3.0 / std::sqrt(total));
  CHECK(std::abs(n[0] / total - spec.female_share) < 3.0 / std::sqrt(total));
}

TEST_CASE("mover transitions follow the kernel rows") {
  const auto spec = spec_from(kSmall);
  const auto m = generate_market(spec);
  std::vector<double> counts(2 * 3 * 3, 0.0);
  for (const auto& r : m.panel.rows) {
    if (!r.mover) continue;
    const int l = m.truth.worker_type.at(r.first.worker_id);
    const int k = m.truth.firm_class.at(r.first.firm_id);
    const int k2 = m.truth.firm_class.at(r.second.firm_id);
    counts[(l * 3 + k) * 3 + k2] += 1;
  }
  for (int l = 0; l < 2; ++l) {
    for (int k = 0; k < 3; ++k) {
      double row = 0;
      for (int k2 = 0; k2 < 3; ++k2) row += counts[(l * 3 + k) * 3 + k2];
      REQUIRE(row > 100);
      for (int k2 = 0; k2 < 3; ++k2) {
        const double p = spec.transition_kernel[l][k][k2];
        const double se = std::sqrt(p * (1 - p) / row);
        CHECK(std::abs(counts[(l * 3 + k) * 3 + k2] / row - p) < 3.5 * se + 1e-12);
      }
    }
  }
}

TEST_CASE("movers change firm, stayers keep it, sizes are at least two") {
  const auto spec = spec_from(kSmall);
  const auto m = generate_market(spec);
  std::map<FirmId, int> size;
  for (const auto& r : m.panel.rows) {
    CHECK(r.mover == (r.first.firm_id != r.second.firm_id));
    CHECK(r.first.year == spec.year1);
    CHECK(r.second.year == spec.year1 + 2);
    size[r.first.firm_id]++;
  }
  for (const auto& [f, n] : size) CHECK(n >= 2);
}

TEST_CASE("ground truth JSON round-trips") {
  const auto spec = spec_from(kSmall);
  const auto m = generate_market(spec);
  const auto back = truth_from_json(truth_json(m.truth));
  CHECK(back.worker_type == m.truth.worker_type);
  CHECK(back.firm_class == m.truth.firm_class);
  CHECK(back.spec.mu[1] == m.truth.spec.mu[1]);
  CHECK(truth_json(back).size() > 0);
}

TEST_CASE("spec validation names the offending field") {
  auto spec = spec_from(kSmall);
  spec.type_marginals[0] = {0.6, 0.5};
  try {
    spec.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("type_marginals") != std::string::npos);
  }
  spec = spec_from(kSmall);
  spec.sigma[0][0][0] = 1e-6;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = spec_from(kSmall);
  spec.firms_per_class[1] = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK_THROWS_AS(spec_from("K = 2\nL = 2\nfirms_per_class = 3\n"), ConfigError);  // no seed
}

TEST_CASE("expected moments of an additive spec are additive") {
  auto spec = spec_from(
      "K = 3\nL = 2\nfirms_per_class = 10\nseed = 1\nmu.class = 0 1 2\nmu.type = 0 0.5\n"
      "sigma.p1 = 0.1\n");
  const auto m = expected_moments(spec);
  for (int g = 0; g < 2; ++g) {
    for (int k = 0; k < 3; ++k) {
      const double d = m.at(g, k, 1).mean - m.at(g, k, 0).mean;
      CHECK(d == doctest::Approx(0.5).epsilon(1e-12));
    }
  }
  const auto cp = cell_probabilities(spec);
  for (const auto& row : cp) {
    double s = 0;
    for (double x : row) s += x;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}
