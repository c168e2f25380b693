#include "wagemix/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "wagemix/error.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/parallel.hpp"

namespace wagemix::mixture {

namespace {

constexpr std::size_t kChunk = 4096;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double floor_sd(double sd) { return std::isfinite(sd) ? std::max(sd, kSdFloor) : kSdFloor; }

// Cached log-density terms for one (class, type) Gaussian.
struct Component {
  double mean = 0.0;
  double inv_sd = 1.0;
  double log_norm = 0.0;  // -log(sd) - log(sqrt(2 pi))

  double logpdf(double x) const {
    const double z = (x - mean) * inv_sd;
    return log_norm - 0.5 * z * z;
  }
};

std::vector<Component> components(const std::vector<double>& mu, const std::vector<double>& sd) {
  std::vector<Component> out(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    out[i].mean = mu[i];
    out[i].inv_sd = 1.0 / sd[i];
    out[i].log_norm = -std::log(sd[i]) - kHalfLog2Pi;
  }
  return out;
}

std::vector<double> safe_log(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] > 0.0 ? std::log(v[i]) : -INFINITY;
  }
  return out;
}

// Normalizes lp[0..L) in place into posterior weights; returns log-sum-exp.
double normalize(double* lp, int L) {
  double top = -INFINITY;
  for (int l = 0; l < L; ++l) top = std::max(top, lp[l]);
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (int l = 0; l < L; ++l) {
    lp[l] = std::exp(lp[l] - top);
    acc += lp[l];
  }
  for (int l = 0; l < L; ++l) lp[l] /= acc;
  return top + std::log(acc);
}

// Per-chunk sufficient statistics. Moments are accumulated around a fixed
// center to limit cancellation.
struct Stats {
  std::vector<double> pcount;          // K*K*L
  std::vector<double> r1, s1, ss1;     // K*L
  std::vector<double> r2, s2, ss2;     // K*L
  CompensatedSum loglik;
  bool finite = true;

  Stats(int K, int L)
      : pcount(K * K * L, 0.0),
        r1(K * L, 0.0), s1(K * L, 0.0), ss1(K * L, 0.0),
        r2(K * L, 0.0), s2(K * L, 0.0), ss2(K * L, 0.0) {}
};

struct EStep {
  double loglik = 0.0;
  bool finite = true;
  Stats total;
  EStep(int K, int L) : total(K, L) {}
};

EStep e_step(const MixtureModel& m, const MoverData& d, unsigned threads, bool want_stats) {
  const int K = m.K;
  const int L = m.L;
  const auto c1 = components(m.mu1, m.sd1);
  const auto c2 = components(m.mu2, m.sd2);
  const auto logp = safe_log(m.p);
  const std::size_t n = d.size();
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<Stats> parts(chunks, Stats(want_stats ? K : 0, want_stats ? L : 0));

  parallel_for(chunks, threads, [&](std::size_t c) {
    Stats& st = parts[c];
    std::vector<double> lp(L);
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(n, lo + kChunk);
    for (std::size_t i = lo; i < hi; ++i) {
      const int k1 = d.k1[i];
      const int k2 = d.k2[i];
      const double* lpk = &logp[(k1 * K + k2) * L];
      for (int l = 0; l < L; ++l) {
        lp[l] = lpk[l] + c1[k1 * L + l].logpdf(d.w1[i]) + c2[k2 * L + l].logpdf(d.w2[i]);
      }
      const double ll = normalize(lp.data(), L);
      if (!std::isfinite(ll)) {
        st.finite = false;
        continue;
      }
      st.loglik += ll;
      if (!want_stats) continue;
      for (int l = 0; l < L; ++l) {
        const double r = lp[l];
        st.pcount[(k1 * K + k2) * L + l] += r;
        const std::size_t a = k1 * L + l;
        const double x1 = d.w1[i] - m.mu1[a];
        st.r1[a] += r;
        st.s1[a] += r * x1;
        st.ss1[a] += r * x1 * x1;
        const std::size_t b = k2 * L + l;
        const double x2 = d.w2[i] - m.mu2[b];
        st.r2[b] += r;
        st.s2[b] += r * x2;
        st.ss2[b] += r * x2 * x2;
      }
    }
  });

  EStep out(want_stats ? K : 0, want_stats ? L : 0);
  CompensatedSum ll;
  for (auto& part : parts) {
    out.finite = out.finite && part.finite;
    ll += part.loglik.value();
    if (!want_stats) continue;
    auto add = [](std::vector<double>& into, const std::vector<double>& from) {
      for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
    };
    add(out.total.pcount, part.pcount);
    add(out.total.r1, part.r1);
    add(out.total.s1, part.s1);
    add(out.total.ss1, part.ss1);
    add(out.total.r2, part.r2);
    add(out.total.s2, part.s2);
    add(out.total.ss2, part.ss2);
  }
  out.loglik = ll.value();
  return out;
}

void m_step(MixtureModel& m, const Stats& st) {
  const int K = m.K;
  const int L = m.L;
  for (int k = 0; k < K; ++k) {
    for (int k2 = 0; k2 < K; ++k2) {
      double total = 0.0;
      for (int l = 0; l < L; ++l) total += st.pcount[(k * K + k2) * L + l];
      if (total <= 0.0) continue;  // no movers in this cell: keep p
      for (int l = 0; l < L; ++l) m.P(k, k2, l) = st.pcount[(k * K + k2) * L + l] / total;
    }
  }
  auto update = [&](std::vector<double>& mu, std::vector<double>& sd, const std::vector<double>& r,
                    const std::vector<double>& s, const std::vector<double>& ss) {
    for (std::size_t a = 0; a < mu.size(); ++a) {
      if (r[a] <= 0.0) continue;
      const double shift = s[a] / r[a];
      const double var = std::max(0.0, ss[a] / r[a] - shift * shift);
      mu[a] += shift;
      sd[a] = floor_sd(std::sqrt(var));
    }
  };
  update(m.mu1, m.sd1, st.r1, st.s1, st.ss1);
  update(m.mu2, m.sd2, st.r2, st.s2, st.ss2);
}

// Quantile slicing of each class's wages into L equal-count bins.
void slice_init(const std::vector<int>& klass, const std::vector<double>& w, int K, int L,
                std::vector<double>& mu, std::vector<double>& sd) {
  std::vector<std::vector<double>> by_class(K);
  for (std::size_t i = 0; i < w.size(); ++i) by_class[klass[i]].push_back(w[i]);
  std::vector<double> all(w);
  std::sort(all.begin(), all.end());
  for (int k = 0; k < K; ++k) {
    auto& v = by_class[k];
    if (v.empty()) v = all;  // class unseen here: fall back to the pooled sample
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    for (int l = 0; l < L; ++l) {
      std::size_t lo = n * l / L;
      std::size_t hi = std::max(lo + 1, n * (l + 1) / L);
      hi = std::min(hi, n);
      lo = std::min(lo, hi - 1);
      std::span<const double> bin(v.data() + lo, hi - lo);
      mu[k * L + l] = mean(bin);
      sd[k * L + l] = floor_sd(std::sqrt(variance(bin)));
    }
  }
}

double unit(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

MixtureModel initial_model(const MixtureData& data, int L, int restart, std::uint64_t seed) {
  const int K = data.K;
  MixtureModel m(K, L);
  const auto& mv = data.movers;
  slice_init(mv.k1, mv.w1, K, L, m.mu1, m.sd1);
  slice_init(mv.k2, mv.w2, K, L, m.mu2, m.sd2);
  if (restart == 0) return m;

  auto gen = substream(seed, {static_cast<std::uint64_t>(restart)});
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t a = 0; a < m.mu1.size(); ++a) {
    m.mu1[a] += 0.5 * m.sd1[a] * z(gen);
    m.mu2[a] += 0.5 * m.sd2[a] * z(gen);
  }
  // Flat-Dirichlet type shares per mover cell.
  for (int c = 0; c < K * K; ++c) {
    double total = 0.0;
    for (int l = 0; l < L; ++l) {
      const double e = -std::log(std::max(unit(gen), 1e-300));
      m.p[c * L + l] = e;
      total += e;
    }
    for (int l = 0; l < L; ++l) m.p[c * L + l] /= total;
  }
  return m;
}

RestartLog run_em(MixtureModel& m, const MoverData& d, const EMOptions& opt) {
  RestartLog log;
  double previous = -INFINITY;
  for (int it = 0; it < opt.max_iter; ++it) {
    EStep e = e_step(m, d, opt.threads, true);
    if (!e.finite || !std::isfinite(e.loglik)) {
      log.aborted = true;
      log.reason = "non-finite likelihood at iteration " + std::to_string(it);
      return log;
    }
    log.trace.push_back(e.loglik);
    log.iterations = it + 1;
    const bool converged =
        std::isfinite(previous) && std::abs(e.loglik - previous) <= opt.tol * std::abs(previous);
    if (converged) break;
    previous = e.loglik;
    m_step(m, e.total);
  }
  // Loglik at the returned parameters.
  const EStep final = e_step(m, d, opt.threads, false);
  if (!final.finite || !std::isfinite(final.loglik)) {
    log.aborted = true;
    log.reason = "non-finite likelihood after the last update";
    return log;
  }
  if (log.trace.empty() || final.loglik != log.trace.back()) log.trace.push_back(final.loglik);
  log.loglik = final.loglik;
  m.loglik_movers = final.loglik;
  return log;
}

double max_decrease(const std::vector<double>& trace) {
  double worst = 0.0;
  for (std::size_t i = 1; i < trace.size(); ++i) worst = std::max(worst, trace[i - 1] - trace[i]);
  return worst;
}

}  // namespace

MixtureModel::MixtureModel(int K_, int L_)
    : K(K_),
      L(L_),
      p(K_ * K_ * L_, 1.0 / L_),
      q(K_ * L_, 1.0 / L_),
      mu1(K_ * L_, 0.0),
      sd1(K_ * L_, 1.0),
      mu2(K_ * L_, 0.0),
      sd2(K_ * L_, 1.0) {}

MixtureData mixture_data(const panel::BiennialPanel& panel,
                         const firmcluster::FirmClassing& classing) {
  MixtureData d;
  d.K = classing.K;
  for (const auto& r : panel.rows) {
    const int k1 = classing.class_of(r.first.firm_id);
    if (r.mover) {
      d.movers.ids.push_back(r.first.worker_id);
      d.movers.k1.push_back(k1);
      d.movers.k2.push_back(classing.class_of(r.second.firm_id));
      d.movers.w1.push_back(r.first.log_wage);
      d.movers.w2.push_back(r.second.log_wage);
    } else {
      d.stayers.ids.push_back(r.first.worker_id);
      d.stayers.k.push_back(k1);
      d.stayers.w1.push_back(r.first.log_wage);
    }
  }
  return d;
}

double mover_loglik(const MixtureModel& model, const MoverData& movers) {
  return e_step(model, movers, 1, false).loglik;
}

double stayer_loglik(const MixtureModel& m, const StayerData& s) {
  const int L = m.L;
  const auto c1 = components(m.mu1, m.sd1);
  const auto logq = safe_log(m.q);
  CompensatedSum total;
  std::vector<double> lp(L);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int k = s.k[i];
    for (int l = 0; l < L; ++l) lp[l] = logq[k * L + l] + c1[k * L + l].logpdf(s.w1[i]);
    total += log_sum_exp(lp);
  }
  return total.value();
}

void canonical_order(MixtureModel& m) {
  const int K = m.K;
  const int L = m.L;
  std::vector<double> score(L, 0.0);
  for (int l = 0; l < L; ++l) {
    for (int k = 0; k < K; ++k) score[l] += 0.5 * (m.mu1[k * L + l] + m.mu2[k * L + l]);
  }
  std::vector<int> order(L);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[a] < score[b]; });
  const MixtureModel old = m;
  for (int l = 0; l < L; ++l) {
    const int from = order[l];
    for (int k = 0; k < K; ++k) {
      m.mu1[k * L + l] = old.mu1[k * L + from];
      m.sd1[k * L + l] = old.sd1[k * L + from];
      m.mu2[k * L + l] = old.mu2[k * L + from];
      m.sd2[k * L + l] = old.sd2[k * L + from];
      m.q[k * L + l] = old.q[k * L + from];
      for (int k2 = 0; k2 < K; ++k2) m.P(k, k2, l) = old.P(k, k2, from);
    }
  }
}

MoverFit fit_movers(const MixtureData& data, const EMOptions& opt) {
  if (opt.L < 1) throw ConfigError("mixture: L must be >= 1");
  if (opt.reps < 1) throw ConfigError("mixture: reps must be >= 1");
  if (data.movers.size() == 0) throw DataError("mixture: the panel has no movers");
  const int K = data.K;

  MoverFit fit;
  std::vector<double> cell_n(K * K, 0.0);
  for (std::size_t i = 0; i < data.movers.size(); ++i) {
    cell_n[data.movers.k1[i] * K + data.movers.k2[i]] += 1.0;
  }
  for (int k = 0; k < K; ++k) {
    for (int k2 = 0; k2 < K; ++k2) {
      if (cell_n[k * K + k2] > 0 && cell_n[k * K + k2] < kSparseCell) {
        fit.sparse_cells.emplace_back(k, k2);
      }
    }
  }

  // Restarts run one after another; each E-step uses the thread pool.
  bool any = false;
  for (int r = 0; r < opt.reps; ++r) {
    MixtureModel m = initial_model(data, opt.L, r, opt.seed);
    RestartLog log = run_em(m, data.movers, opt);
    log.restart = r;
    if (!log.aborted) {
      fit.max_loglik_decrease = std::max(fit.max_loglik_decrease, max_decrease(log.trace));
      if (!any || log.loglik > fit.model.loglik_movers) {
        fit.model = m;
        fit.best_restart = r;
        any = true;
      }
    }
    fit.restarts.push_back(std::move(log));
  }
  if (!any) throw NumericalError("mixture: every EM restart hit a non-finite likelihood");

  // Cells without movers keep their starting shares; give them the origin
  // class's mover marginal instead so the model stays interpretable.
  for (int k = 0; k < K; ++k) {
    std::vector<double> marginal(opt.L, 0.0);
    double total = 0.0;
    for (int k2 = 0; k2 < K; ++k2) {
      for (int l = 0; l < opt.L; ++l) {
        marginal[l] += cell_n[k * K + k2] * fit.model.P(k, k2, l);
      }
      total += cell_n[k * K + k2];
    }
    if (total <= 0) continue;
    for (int k2 = 0; k2 < K; ++k2) {
      if (cell_n[k * K + k2] > 0) continue;
      for (int l = 0; l < opt.L; ++l) fit.model.P(k, k2, l) = marginal[l] / total;
    }
  }
  canonical_order(fit.model);
  return fit;
}

StayerFit fit_stayers(const MixtureData& data, const MixtureModel& movers, int max_iter,
                      double tol) {
  const int K = movers.K;
  const int L = movers.L;
  StayerFit fit;
  fit.model = movers;
  MixtureModel& m = fit.model;
  const auto& s = data.stayers;
  const std::size_t n = s.size();

  std::vector<double> n_k(K, 0.0);
  for (int k : s.k) n_k[k] += 1.0;

  // Mover origin marginal per class, the fallback for classes with no stayers.
  std::vector<double> cell_n(K * K, 0.0);
  for (std::size_t i = 0; i < data.movers.size(); ++i) {
    cell_n[data.movers.k1[i] * K + data.movers.k2[i]] += 1.0;
  }
  for (int k = 0; k < K; ++k) {
    std::vector<double> marginal(L, 0.0);
    double total = 0.0;
    for (int k2 = 0; k2 < K; ++k2) {
      for (int l = 0; l < L; ++l) marginal[l] += cell_n[k * K + k2] * m.P(k, k2, l);
      total += cell_n[k * K + k2];
    }
    for (int l = 0; l < L; ++l) m.Q(k, l) = total > 0 ? marginal[l] / total : 1.0 / L;
    if (n_k[k] == 0) fit.classes_without_stayers.push_back(k);
  }
  // Start from uniform shares where stayers exist.
  for (int k = 0; k < K; ++k) {
    if (n_k[k] > 0) {
      for (int l = 0; l < L; ++l) m.Q(k, l) = 1.0 / L;
    }
  }
  if (n == 0) {
    m.loglik_stayers = 0.0;
    return fit;
  }

  const auto c1 = components(m.mu1, m.sd1);
  std::vector<double> dens(n * L);
  for (std::size_t i = 0; i < n; ++i) {
    for (int l = 0; l < L; ++l) dens[i * L + l] = c1[s.k[i] * L + l].logpdf(s.w1[i]);
  }

  double previous = -INFINITY;
  std::vector<double> lp(L);
  for (int it = 0; it < max_iter; ++it) {
    const auto logq = safe_log(m.q);
    std::vector<double> acc(K * L, 0.0);
    CompensatedSum ll;
    for (std::size_t i = 0; i < n; ++i) {
      const int k = s.k[i];
      for (int l = 0; l < L; ++l) lp[l] = logq[k * L + l] + dens[i * L + l];
      ll += normalize(lp.data(), L);
      for (int l = 0; l < L; ++l) acc[k * L + l] += lp[l];
    }
    const double value = ll.value();
    if (!std::isfinite(value)) throw NumericalError("stayer EM: non-finite likelihood");
    fit.trace.push_back(value);
    fit.iterations = it + 1;
    if (std::isfinite(previous) && std::abs(value - previous) <= tol * std::abs(previous)) break;
    previous = value;
    for (int k = 0; k < K; ++k) {
      if (n_k[k] == 0) continue;
      for (int l = 0; l < L; ++l) m.Q(k, l) = acc[k * L + l] / n_k[k];
    }
  }
  m.loglik_stayers = stayer_loglik(m, s);
  if (m.loglik_stayers != fit.trace.back()) fit.trace.push_back(m.loglik_stayers);
  fit.max_loglik_decrease = max_decrease(fit.trace);
  return fit;
}

int TypeAssignment::type_of(const WorkerId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError("worker " + id.value + " has no type");
  return type[it->second];
}

void TypeAssignment::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < workers.size(); ++i) index_[workers[i]] = i;
}

TypeAssignment map_assign(const panel::BiennialPanel& panel,
                          const firmcluster::FirmClassing& classing, const MixtureModel& m) {
  const int L = m.L;
  const auto c1 = components(m.mu1, m.sd1);
  const auto c2 = components(m.mu2, m.sd2);
  const auto logp = safe_log(m.p);
  const auto logq = safe_log(m.q);
  TypeAssignment out;
  out.L = L;
  out.workers.reserve(panel.rows.size());
  out.posterior.reserve(panel.rows.size() * L);
  out.type.reserve(panel.rows.size());
  std::vector<double> lp(L);
  for (const auto& r : panel.rows) {
    const int k1 = classing.class_of(r.first.firm_id);
    if (r.mover) {
      const int k2 = classing.class_of(r.second.firm_id);
      for (int l = 0; l < L; ++l) {
        lp[l] = logp[(k1 * m.K + k2) * L + l] + c1[k1 * L + l].logpdf(r.first.log_wage) +
                c2[k2 * L + l].logpdf(r.second.log_wage);
      }
    } else {
      for (int l = 0; l < L; ++l) lp[l] = logq[k1 * L + l] + c1[k1 * L + l].logpdf(r.first.log_wage);
    }
    const double ll = normalize(lp.data(), L);
    if (!std::isfinite(ll)) {
      throw NumericalError("map_assign: worker " + r.first.worker_id.value +
                           " has zero prior mass on every type");
    }
    int best = 0;
    for (int l = 1; l < L; ++l) {
      if (lp[l] > lp[best]) best = l;
    }
    out.workers.push_back(r.first.worker_id);
    out.posterior.insert(out.posterior.end(), lp.begin(), lp.end());
    out.type.push_back(best);
  }
  out.rebuild_index();
  return out;
}

}  // namespace wagemix::mixture
