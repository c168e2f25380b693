#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "wagemix/config.hpp"
#include "wagemix/error.hpp"
#include "wagemix/metrics.hpp"
#include "wagemix/mixture.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/synth.hpp"

using namespace wagemix;
using namespace wagemix::mixture;

namespace {

firmcluster::FirmClassing true_classing(const synth::Market& m) {
  firmcluster::FirmClassing c;
  c.K = m.truth.spec.K;
  for (const auto& f : m.truth.firms) {
    c.firms.push_back(f);
    c.klass.push_back(m.truth.firm_class.at(f));
  }
  c.rebuild_index();
  return c;
}

synth::Market market(const std::string& text) {
  std::istringstream in(text);
  return synth::generate_market(synth::spec_from_config(KeyValueConfig::parse(in)));
}

const char* kRecovery =
    "K = 3\nL = 2\nfirms_per_class = 400\nseed = 17\nmover_share = 0.5\n"
    "type_marginals.F = 0.5 0.5\ntype_marginals.M = 0.3 0.7\n"
    "mu.class = 0 1 2\nmu.type = 0 0.4\nmu.interaction = 0.05\nsigma.p1 = 0.08\n";

// Random movers with K classes, wages from a loose two-bump mixture.
MixtureData noisy_movers(int K, std::size_t n, std::uint64_t seed) {
  auto gen = substream(seed, {});
  std::uniform_int_distribution<int> cls(0, K - 1);
  std::normal_distribution<double> z(0.0, 0.3);
  std::bernoulli_distribution coin(0.4);
  MixtureData d;
  d.K = K;
  for (std::size_t i = 0; i < n; ++i) {
    const int k1 = cls(gen), k2 = cls(gen);
    const double t = coin(gen) ? 0.8 : 0.0;
    d.movers.ids.push_back(WorkerId("m" + std::to_string(i)));
    d.movers.k1.push_back(k1);
    d.movers.k2.push_back(k2);
    d.movers.w1.push_back(0.5 * k1 + t + z(gen));
    d.movers.w2.push_back(0.5 * k2 + t + z(gen));
    d.stayers.ids.push_back(WorkerId("s" + std::to_string(i)));
    d.stayers.k.push_back(k1);
    d.stayers.w1.push_back(0.5 * k1 + t + z(gen));
  }
  return d;
}

double log_normal(double x, double m, double s) {
  return -0.5 * std::log(2 * std::numbers::pi) - std::log(s) - 0.5 * (x - m) * (x - m) / (s * s);
}

}  // namespace

TEST_CASE("L = 1 reduces to per-class sample moments") {
  const auto d = noisy_movers(3, 600, 1);
  EMOptions o;
  o.L = 1;
  o.reps = 3;
  o.seed = 2;
  const auto fit = fit_movers(d, o);
  for (int k = 0; k < 3; ++k) {
    std::vector<double> a, b;
    for (std::size_t i = 0; i < d.movers.size(); ++i) {
      if (d.movers.k1[i] == k) a.push_back(d.movers.w1[i]);
      if (d.movers.k2[i] == k) b.push_back(d.movers.w2[i]);
    }
    CHECK(fit.model.mu1[k] == doctest::Approx(mean(a)).epsilon(1e-10));
    CHECK(fit.model.sd1[k] == doctest::Approx(std::sqrt(variance(a))).epsilon(1e-10));
    CHECK(fit.model.mu2[k] == doctest::Approx(mean(b)).epsilon(1e-10));
    for (int k2 = 0; k2 < 3; ++k2) CHECK(fit.model.P(k, k2, 0) == 1.0);
  }
  const auto st = fit_stayers(d, fit.model);
  for (int k = 0; k < 3; ++k) CHECK(st.model.Q(k, 0) == 1.0);
}

TEST_CASE("single observation log-likelihood equals the Gaussian log density") {
  MixtureModel m(1, 1);
  m.p = {1.0};
  m.q = {1.0};
  m.mu1 = {0.3};
  m.sd1 = {0.2};
  m.mu2 = {0.5};
  m.sd2 = {0.4};
  MoverData mv;
  mv.ids = {WorkerId("a")};
  mv.k1 = {0};
  mv.k2 = {0};
  mv.w1 = {0.1};
  mv.w2 = {0.9};
  CHECK(mover_loglik(m, mv) ==
        doctest::Approx(log_normal(0.1, 0.3, 0.2) + log_normal(0.9, 0.5, 0.4)).epsilon(1e-14));
}

TEST_CASE("log-likelihoods match direct summation on 100 rows") {
  const auto d = noisy_movers(2, 100, 3);
  EMOptions o;
  o.L = 3;
  o.reps = 2;
  o.seed = 4;
  o.max_iter = 7;  // stop early so parameters are generic
  const auto fit = fit_movers(d, o);
  const auto& m = fit.model;
  double direct = 0.0;
  for (std::size_t i = 0; i < d.movers.size(); ++i) {
    const int k1 = d.movers.k1[i], k2 = d.movers.k2[i];
    double s = 0.0;
    for (int l = 0; l < 3; ++l) {
      s += m.P(k1, k2, l) * std::exp(log_normal(d.movers.w1[i], m.mu1[k1 * 3 + l], m.sd1[k1 * 3 + l]) +
                                     log_normal(d.movers.w2[i], m.mu2[k2 * 3 + l], m.sd2[k2 * 3 + l]));
    }
    direct += std::log(s);
  }
  CHECK(mover_loglik(m, d.movers) == doctest::Approx(direct).epsilon(1e-10));
  const auto st = fit_stayers(d, m, 5);
  double sdirect = 0.0;
  for (std::size_t i = 0; i < d.stayers.size(); ++i) {
    const int k = d.stayers.k[i];
    double s = 0.0;
    for (int l = 0; l < 3; ++l) {
      s += st.model.Q(k, l) * std::exp(log_normal(d.stayers.w1[i], m.mu1[k * 3 + l], m.sd1[k * 3 + l]));
    }
    sdirect += std::log(s);
  }
  CHECK(stayer_loglik(st.model, d.stayers) == doctest::Approx(sdirect).epsilon(1e-10));
}

TEST_CASE("EM is monotone and the model satisfies its invariants") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto d = noisy_movers(3, 800, 10 + s);
    EMOptions o;
    o.L = 2 + static_cast<int>(s % 3);
    o.reps = 4;
    o.seed = s;
    const auto fit = fit_movers(d, o);
    CHECK(fit.max_loglik_decrease <= 1e-9);
    for (const auto& r : fit.restarts) {
      for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] >= r.trace[i - 1] - 1e-9);
    }
    const auto st = fit_stayers(d, fit.model);
    CHECK(st.max_loglik_decrease <= 1e-9);
    const auto& m = st.model;
    for (double sd : m.sd1) CHECK(sd >= kSdFloor);
    for (double sd : m.sd2) CHECK(sd >= kSdFloor);
    for (int k = 0; k < m.K; ++k) {
      double qs = 0;
      for (int l = 0; l < m.L; ++l) qs += m.Q(k, l);
      CHECK(std::abs(qs - 1) < 1e-10);
      for (int k2 = 0; k2 < m.K; ++k2) {
        double ps = 0;
        for (int l = 0; l < m.L; ++l) ps += m.P(k, k2, l);
        CHECK(std::abs(ps - 1) < 1e-10);
      }
    }
    // Canonical order: pooled expected wage increases in l.
    for (int l = 0; l + 1 < m.L; ++l) {
      double a = 0, b = 0;
      for (int k = 0; k < m.K; ++k) {
        a += m.mu1[k * m.L + l] + m.mu2[k * m.L + l];
        b += m.mu1[k * m.L + l + 1] + m.mu2[k * m.L + l + 1];
      }
      CHECK(a <= b);
    }
  }
}

TEST_CASE("canonical order undoes a type permutation") {
  const auto d = noisy_movers(2, 500, 30);
  EMOptions o;
  o.L = 3;
  o.reps = 3;
  o.seed = 1;
  const auto base = fit_movers(d, o).model;
  MixtureModel perm = base;
  const int pi[3] = {2, 0, 1};
  for (int k = 0; k < base.K; ++k) {
    for (int l = 0; l < 3; ++l) {
      perm.mu1[k * 3 + pi[l]] = base.mu1[k * 3 + l];
      perm.sd1[k * 3 + pi[l]] = base.sd1[k * 3 + l];
      perm.mu2[k * 3 + pi[l]] = base.mu2[k * 3 + l];
      perm.sd2[k * 3 + pi[l]] = base.sd2[k * 3 + l];
      perm.Q(k, pi[l]) = base.Q(k, l);
      for (int k2 = 0; k2 < base.K; ++k2) perm.P(k, k2, pi[l]) = base.P(k, k2, l);
    }
  }
  canonical_order(perm);
  CHECK(perm.mu1 == base.mu1);
  CHECK(perm.sd2 == base.sd2);
  CHECK(perm.p == base.p);
}

TEST_CASE("fits do not depend on the thread count or on gender") {
  auto m = market(kRecovery);
  const auto c = true_classing(m);
  EMOptions o;
  o.L = 2;
  o.reps = 4;
  o.seed = 3;
  const auto a = fit_movers(mixture_data(m.panel, c), o);
  o.threads = 3;
  const auto b = fit_movers(mixture_data(m.panel, c), o);
  CHECK(a.model.mu1 == b.model.mu1);
  CHECK(a.model.p == b.model.p);
  CHECK(a.model.loglik_movers == b.model.loglik_movers);
  for (auto& r : m.panel.rows) {
    r.first.gender = r.first.gender == Gender::F ? Gender::M : Gender::F;
    r.second.gender = r.first.gender;
  }
  const auto g = fit_movers(mixture_data(m.panel, c), o);
  CHECK(g.model.p == a.model.p);
}

TEST_CASE("synthetic recovery of mixture parameters and types") {
  const auto m = market(kRecovery);
  const auto c = true_classing(m);
  const auto data = mixture_data(m.panel, c);
  REQUIRE(data.movers.size() > 10000);
  EMOptions o;
  o.L = 2;
  o.reps = 5;
  o.seed = 8;
  const auto movers = fit_movers(data, o);
  const auto fit = fit_stayers(data, movers.model);
  const auto& est = fit.model;
  const auto& spec = m.truth.spec;
  const int K = 3, L = 2;

  // Align types on period-1 means.
  std::vector<double> cost(L * L, 0.0);
  for (int a = 0; a < L; ++a) {
    for (int b = 0; b < L; ++b) {
      for (int k = 0; k < K; ++k) cost[a * L + b] += std::abs(est.mu1[k * L + a] - spec.mu[0][k][b]);
    }
  }
  const auto map = hungarian(cost, L);  // estimated -> true
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      CHECK(std::abs(est.mu1[k * L + l] - spec.mu[0][k][map[l]]) <= 0.02);
      CHECK(std::abs(est.mu2[k * L + l] - spec.mu[1][k][map[l]]) <= 0.02);
    }
  }
  // Realized type shares per mover cell and per stayer class.
  std::vector<double> pc(K * K * L, 0.0), pn(K * K, 0.0), qc(K * L, 0.0), qn(K, 0.0);
  for (const auto& r : m.panel.rows) {
    const int l = m.truth.worker_type.at(r.first.worker_id);
    const int k1 = c.class_of(r.first.firm_id), k2 = c.class_of(r.second.firm_id);
    if (r.mover) {
      pc[(k1 * K + k2) * L + l] += 1;
      pn[k1 * K + k2] += 1;
    } else {
      qc[k1 * L + l] += 1;
      qn[k1] += 1;
    }
  }
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      CHECK(std::abs(est.Q(k, l) - qc[k * L + map[l]] / qn[k]) <= 0.02);
      for (int k2 = 0; k2 < K; ++k2) {
        CHECK(std::abs(est.P(k, k2, l) - pc[(k * K + k2) * L + map[l]] / pn[k * K + k2]) <= 0.02);
      }
    }
  }

  const auto assign = map_assign(m.panel, c, est);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < assign.workers.size(); ++i) {
    hit += map[assign.type[i]] == m.truth.worker_type.at(assign.workers[i]);
    double s = 0;
    for (int l = 0; l < L; ++l) s += assign.posterior[i * L + l];
    CHECK(std::abs(s - 1) < 1e-10);
  }
  CHECK(static_cast<double>(hit) / assign.workers.size() >= 0.90);
}

TEST_CASE("stayers equal to the movers' period-1 sample reproduce the origin marginal") {
  // Well separated types so both stages classify the same way.
  auto m = market(
      "K = 2\nL = 2\nfirms_per_class = 300\nseed = 23\nmover_share = 0.5\n"
      "mu.class = 0 1\nmu.type = 0 3\nsigma.p1 = 0.05\n");
  const auto c = true_classing(m);
  auto d = mixture_data(m.panel, c);
  d.stayers.ids = d.movers.ids;
  d.stayers.k = d.movers.k1;
  d.stayers.w1 = d.movers.w1;
  EMOptions o;
  o.L = 2;
  o.reps = 3;
  o.seed = 5;
  const auto mv = fit_movers(d, o);
  const auto st = fit_stayers(d, mv.model);
  for (int k = 0; k < 2; ++k) {
    std::vector<double> n(2, 0.0);
    for (std::size_t i = 0; i < d.movers.size(); ++i) {
      if (d.movers.k1[i] == k) n[d.movers.k2[i]] += 1;
    }
    for (int l = 0; l < 2; ++l) {
      const double marginal = (n[0] * mv.model.P(k, 0, l) + n[1] * mv.model.P(k, 1, l)) / (n[0] + n[1]);
      CHECK(st.model.Q(k, l) == doctest::Approx(marginal).epsilon(1e-6));
    }
  }
}

TEST_CASE("a class without stayers falls back to the mover marginal") {
  auto d = noisy_movers(2, 400, 50);
  // Drop class-1 stayers.
  MixtureData e = d;
  e.stayers = {};
  for (std::size_t i = 0; i < d.stayers.size(); ++i) {
    if (d.stayers.k[i] == 0) {
      e.stayers.ids.push_back(d.stayers.ids[i]);
      e.stayers.k.push_back(0);
      e.stayers.w1.push_back(d.stayers.w1[i]);
    }
  }
  EMOptions o;
  o.L = 2;
  o.reps = 2;
  o.seed = 6;
  const auto mv = fit_movers(e, o);
  const auto st = fit_stayers(e, mv.model);
  REQUIRE(st.classes_without_stayers == std::vector<int>{1});
  std::vector<double> n(2, 0.0);
  for (std::size_t i = 0; i < e.movers.size(); ++i) {
    if (e.movers.k1[i] == 1) n[e.movers.k2[i]] += 1;
  }
  for (int l = 0; l < 2; ++l) {
    const double marginal = (n[0] * mv.model.P(1, 0, l) + n[1] * mv.model.P(1, 1, l)) / (n[0] + n[1]);
    CHECK(st.model.Q(1, l) == doctest::Approx(marginal).epsilon(1e-12));
  }
}

TEST_CASE("no movers and bad options are rejected") {
  MixtureData d;
  d.K = 2;
  EMOptions o;
  o.L = 2;
  CHECK_THROWS_AS(fit_movers(d, o), DataError);
  auto r = noisy_movers(2, 50, 1);
  o.L = 0;
  CHECK_THROWS_AS(fit_movers(r, o), ConfigError);
}

TEST_CASE("MAP posterior follows Bayes arithmetic") {
  // One class, two types with equal priors; density of type 0 is 10x type 1.
  MixtureModel m(1, 2);
  m.q = {0.5, 0.5};
  m.p = {0.5, 0.5};
  m.mu1 = {0.0, 1.0};
  m.sd1 = {1.0, 1.0};
  m.mu2 = m.mu1;
  m.sd2 = m.sd1;
  const double w = (1.0 - 2.0 * std::log(10.0)) / 2.0;
  panel::BiennialPanel p;
  panel::BiennialRow r;
  r.first.worker_id = WorkerId("x");
  r.first.firm_id = FirmId("f");
  r.first.log_wage = w;
  r.second = r.first;
  p.rows.push_back(r);
  firmcluster::FirmClassing c;
  c.K = 1;
  c.firms = {FirmId("f")};
  c.klass = {0};
  c.rebuild_index();
  const auto a = map_assign(p, c, m);
  CHECK(a.posterior[0] == doctest::Approx(10.0 / 11.0).epsilon(1e-12));
  CHECK(a.posterior[1] == doctest::Approx(1.0 / 11.0).epsilon(1e-12));
  CHECK(a.type[0] == 0);

  // Exact tie goes to the lower index.
  p.rows[0].first.log_wage = 0.5;
  p.rows[0].second.log_wage = 0.5;
  CHECK(map_assign(p, c, m).type[0] == 0);

  // Far outside both supports the posterior stays finite and sums to one.
  p.rows[0].first.log_wage = 60.0;
  const auto far = map_assign(p, c, m);
  CHECK(far.posterior[0] + far.posterior[1] == doctest::Approx(1.0));
  CHECK(far.type[0] == 1);

  // L = 1: posterior is 1.
  MixtureModel one(1, 1);
  one.q = {1.0};
  one.p = {1.0};
  one.mu1 = one.mu2 = {0.0};
  one.sd1 = one.sd2 = {1.0};
  CHECK(map_assign(p, c, one).posterior[0] == 1.0);
}

TEST_CASE("MAP types are invariant to an affine change of wage units") {
  const auto m = market(kRecovery);
  const auto c = true_classing(m);
  EMOptions o;
  o.L = 2;
  o.reps = 2;
  o.seed = 4;
  const auto data = mixture_data(m.panel, c);
  auto model = fit_stayers(data, fit_movers(data, o).model).model;
  const auto a = map_assign(m.panel, c, model);
  auto scaled = m.panel;
  for (auto& r : scaled.rows) {
    r.first.log_wage = 3.0 * r.first.log_wage + 1.0;
    r.second.log_wage = 3.0 * r.second.log_wage + 1.0;
  }
  for (auto& x : model.mu1) x = 3.0 * x + 1.0;
  for (auto& x : model.mu2) x = 3.0 * x + 1.0;
  for (auto& x : model.sd1) x *= 3.0;
  for (auto& x : model.sd2) x *= 3.0;
  const auto b = map_assign(scaled, c, model);
  CHECK(a.type == b.type);
}
