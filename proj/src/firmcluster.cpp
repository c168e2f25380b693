#include "wagemix/firmcluster.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>

#include "wagemix/error.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/parallel.hpp"

namespace wagemix::firmcluster {

std::vector<double> ventile_grid(std::vector<double> wages) {
  if (wages.empty()) throw DataError("ventile grid of an empty sample");
  std::sort(wages.begin(), wages.end());
  const std::size_t n = wages.size();
  std::vector<double> grid;
  for (int i = 1; i <= kGridPoints; ++i) {
    // ceil(n * i / 20) in exact integer arithmetic
    const std::size_t rank = (n * static_cast<std::size_t>(i) + 19) / 20;
    const double cut = wages[std::max<std::size_t>(rank, 1) - 1];
    if (grid.empty() || cut > grid.back()) grid.push_back(cut);
  }
  return grid;
}

ECDFGrid ecdfs_on_grid(std::vector<double> grid, std::span<const FirmWage> rows) {
  ECDFGrid out;
  out.grid = std::move(grid);
  std::vector<const FirmWage*> sorted;
  sorted.reserve(rows.size());
  for (const auto& r : rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const FirmWage* a, const FirmWage* b) { return a->firm < b->firm; });
  const std::size_t d = out.grid.size();
  std::vector<double> wages;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    wages.clear();
    while (j < sorted.size() && sorted[j]->firm == sorted[i]->firm) {
      wages.push_back(sorted[j]->wage);
      ++j;
    }
    std::sort(wages.begin(), wages.end());
    out.firms.push_back(sorted[i]->firm);
    const double n = static_cast<double>(wages.size());
    out.weight.push_back(n);
    out.mean_wage.push_back(mean(wages));
    for (std::size_t c = 0; c < d; ++c) {
      const auto below = std::upper_bound(wages.begin(), wages.end(), out.grid[c]) - wages.begin();
      out.values.push_back(static_cast<double>(below) / n);
    }
    i = j;
  }
  return out;
}

ECDFGrid compute_ecdfs(const panel::BiennialPanel& panel) {
  if (panel.rows.empty()) throw DataError("compute_ecdfs: empty panel");
  std::vector<double> pooled;
  std::vector<FirmWage> rows;
  pooled.reserve(panel.rows.size());
  rows.reserve(panel.rows.size());
  for (const auto& r : panel.rows) {
    pooled.push_back(r.first.log_wage);
    rows.push_back({r.first.firm_id, r.first.log_wage});
  }
  return ecdfs_on_grid(ventile_grid(std::move(pooled)), rows);
}

// ---------------------------------------------------------------------------
// k-means

namespace {

double sqdist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

double unit(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

std::size_t draw_weighted(std::mt19937_64& gen, const std::vector<double>& w, double total) {
  const double u = unit(gen) * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    last = i;
    acc += w[i];
    if (u < acc) return i;
  }
  return last;
}

struct RunResult {
  std::vector<int> label;
  std::vector<double> centroids;
  double objective = 0.0;
  int iterations = 0;
  double max_increase = -INFINITY;
};

class Lloyd {
 public:
  Lloyd(std::span<const double> x, std::size_t d, std::span<const double> w, int K, int max_iter)
      : x_(x), d_(d), w_(w), n_(w.size()), K_(K), max_iter_(max_iter) {}

  RunResult run(std::mt19937_64& gen) const {
    RunResult r;
    r.centroids = seed_centroids(gen);
    r.label.assign(n_, -1);
    double previous = INFINITY;
    for (int it = 0; it < max_iter_; ++it) {
      const bool changed = assign(r.centroids, r.label);
      repair_empty(r.centroids, r.label);
      update(r.label, r.centroids);
      const double obj = objective(r.label, r.centroids);
      if (std::isfinite(previous)) r.max_increase = std::max(r.max_increase, obj - previous);
      previous = obj;
      r.objective = obj;
      r.iterations = it + 1;
      if (!changed && it > 0) break;
    }
    return r;
  }

  double objective(const std::vector<int>& label, const std::vector<double>& c) const {
    CompensatedSum s;
    for (std::size_t i = 0; i < n_; ++i) {
      s += w_[i] * sqdist(point(i), &c[label[i] * d_], d_);
    }
    return s.value();
  }

 private:
  const double* point(std::size_t i) const { return x_.data() + i * d_; }

  // Weighted k-means++.
  std::vector<double> seed_centroids(std::mt19937_64& gen) const {
    std::vector<double> c(K_ * d_);
    std::vector<double> score(w_.begin(), w_.end());
    std::vector<double> best(n_, INFINITY);
    std::vector<char> used(n_, 0);
    double total = std::accumulate(score.begin(), score.end(), 0.0);
    for (int k = 0; k < K_; ++k) {
      std::size_t pick;
      if (total > 0.0) {
        pick = draw_weighted(gen, score, total);
      } else {
        // All remaining mass sits on chosen points; take an unused point.
        std::vector<double> fallback(n_, 0.0);
        double ft = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
          if (!used[i]) {
            fallback[i] = w_[i] > 0 ? w_[i] : 1.0;
            ft += fallback[i];
          }
        }
        pick = draw_weighted(gen, fallback, ft);
      }
      used[pick] = 1;
      std::copy(point(pick), point(pick) + d_, c.begin() + k * d_);
      total = 0.0;
      for (std::size_t i = 0; i < n_; ++i) {
        best[i] = std::min(best[i], sqdist(point(i), &c[k * d_], d_));
        score[i] = used[i] ? 0.0 : w_[i] * best[i];
        total += score[i];
      }
    }
    return c;
  }

  bool assign(const std::vector<double>& c, std::vector<int>& label) const {
    bool changed = false;
    for (std::size_t i = 0; i < n_; ++i) {
      int arg = 0;
      double top = sqdist(point(i), &c[0], d_);
      for (int k = 1; k < K_; ++k) {
        const double dk = sqdist(point(i), &c[k * d_], d_);
        if (dk < top) {
          top = dk;
          arg = k;
        }
      }
      if (label[i] != arg) {
        label[i] = arg;
        changed = true;
      }
    }
    return changed;
  }

  // Moves the farthest firm (weighted distance) into each empty cluster.
  void repair_empty(std::vector<double>& c, std::vector<int>& label) const {
    for (;;) {
      std::vector<std::size_t> members(K_, 0);
      for (int l : label) members[l]++;
      int empty = -1;
      for (int k = 0; k < K_; ++k) {
        if (members[k] == 0) {
          empty = k;
          break;
        }
      }
      if (empty < 0) return;
      std::size_t far = n_;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n_; ++i) {
        if (members[label[i]] < 2) continue;
        const double dd = w_[i] * sqdist(point(i), &c[label[i] * d_], d_);
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      if (far == n_) throw DataError("k-means: cannot fill an empty cluster");
      label[far] = empty;
      std::copy(point(far), point(far) + d_, c.begin() + empty * d_);
    }
  }

  void update(const std::vector<int>& label, std::vector<double>& c) const {
    std::vector<double> sum(K_ * d_, 0.0);
    std::vector<double> mass(K_, 0.0);
    std::vector<std::size_t> count(K_, 0);
    for (std::size_t i = 0; i < n_; ++i) {
      const int k = label[i];
      mass[k] += w_[i];
      count[k]++;
      const double* p = point(i);
      for (std::size_t j = 0; j < d_; ++j) sum[k * d_ + j] += w_[i] * p[j];
    }
    for (int k = 0; k < K_; ++k) {
      if (mass[k] > 0.0) {
        for (std::size_t j = 0; j < d_; ++j) c[k * d_ + j] = sum[k * d_ + j] / mass[k];
      } else if (count[k] > 0) {
        // zero-weight members only: plain mean
        std::fill(c.begin() + k * d_, c.begin() + (k + 1) * d_, 0.0);
        for (std::size_t i = 0; i < n_; ++i) {
          if (label[i] != k) continue;
          for (std::size_t j = 0; j < d_; ++j) c[k * d_ + j] += point(i)[j] / count[k];
        }
      }
    }
  }

  std::span<const double> x_;
  std::size_t d_;
  std::span<const double> w_;
  std::size_t n_;
  int K_;
  int max_iter_;
};

}  // namespace

KMeansResult weighted_kmeans(std::span<const double> points, std::size_t dim,
                             std::span<const double> weights, const KMeansOptions& opt) {
  const std::size_t n = weights.size();
  if (opt.K < 1) throw ConfigError("k-means: K must be >= 1");
  if (opt.restarts < 1) throw ConfigError("k-means: restarts must be >= 1");
  if (static_cast<std::size_t>(opt.K) > n) {
    throw ConfigError("k-means: K = " + std::to_string(opt.K) + " exceeds the " +
                      std::to_string(n) + " firms");
  }
  if (points.size() != n * dim) throw DataError("k-means: point array does not match weights");

  const Lloyd lloyd(points, dim, weights, opt.K, opt.max_iter);
  std::vector<RunResult> runs(opt.restarts);
  parallel_for(runs.size(), opt.threads, [&](std::size_t r) {
    auto gen = substream(opt.seed, {r});
    runs[r] = lloyd.run(gen);
  });

  KMeansResult out;
  std::size_t best = 0;
  double worst_increase = -INFINITY;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    worst_increase = std::max(worst_increase, runs[r].max_increase);
    if (runs[r].objective < runs[best].objective) best = r;
  }
  out.label = std::move(runs[best].label);
  out.centroids = std::move(runs[best].centroids);
  out.objective = runs[best].objective;
  out.iterations = runs[best].iterations;
  out.best_restart = static_cast<int>(best);
  out.max_objective_increase = std::isfinite(worst_increase) ? worst_increase : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// classing

int FirmClassing::class_of(const FirmId& firm) const {
  auto it = index_.find(firm);
  if (it == index_.end()) throw DataError("firm " + firm.value + " has no class");
  return klass[it->second];
}

void FirmClassing::add(const FirmId& firm, int k) {
  if (contains(firm)) throw DataError("firm " + firm.value + " already classed");
  index_[firm] = firms.size();
  firms.push_back(firm);
  klass.push_back(k);
}

void FirmClassing::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < firms.size(); ++i) index_[firms[i]] = i;
}

FirmClassing kmeans_classes(const ECDFGrid& ecdfs, const KMeansOptions& options) {
  const std::size_t n = ecdfs.size();
  const std::size_t d = ecdfs.dim();
  if (n == 0) throw DataError("kmeans_classes: no firms");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ecdfs.firms[a] < ecdfs.firms[b]; });
  std::vector<double> x(n * d);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = ecdfs.row(order[i]);
    std::copy(row.begin(), row.end(), x.begin() + i * d);
    w[i] = ecdfs.weight[order[i]];
  }
  KMeansResult km = weighted_kmeans(x, d, w, options);

  const int K = options.K;
  std::vector<double> mass(K, 0.0);
  std::vector<double> wage(K, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    mass[km.label[i]] += w[i];
    wage[km.label[i]] += w[i] * ecdfs.mean_wage[order[i]];
  }
  std::vector<double> class_mean(K);
  for (int k = 0; k < K; ++k) class_mean[k] = mass[k] > 0 ? wage[k] / mass[k] : 0.0;
  std::vector<int> rank(K);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(),
                   [&](int a, int b) { return class_mean[a] < class_mean[b]; });
  std::vector<int> relabel(K);
  for (int k = 0; k < K; ++k) relabel[rank[k]] = k;

  FirmClassing out;
  out.K = K;
  out.grid = ecdfs.grid;
  out.objective = km.objective;
  out.best_restart = km.best_restart;
  out.max_objective_increase = km.max_objective_increase;
  out.centroids.assign(K * d, 0.0);
  out.class_mean_wage.assign(K, 0.0);
  for (int k = 0; k < K; ++k) {
    std::copy(km.centroids.begin() + rank[k] * d, km.centroids.begin() + (rank[k] + 1) * d,
              out.centroids.begin() + k * d);
    out.class_mean_wage[k] = class_mean[rank[k]];
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.firms.push_back(ecdfs.firms[order[i]]);
    out.klass.push_back(relabel[km.label[i]]);
  }
  out.rebuild_index();
  return out;
}

void assign_period2_firms(FirmClassing& classing, const panel::BiennialPanel& panel) {
  std::vector<FirmWage> rows;
  for (const auto& r : panel.rows) {
    if (!classing.contains(r.second.firm_id)) rows.push_back({r.second.firm_id, r.second.log_wage});
  }
  if (rows.empty()) return;
  const ECDFGrid late = ecdfs_on_grid(classing.grid, rows);
  const std::size_t d = late.dim();
  for (std::size_t i = 0; i < late.size(); ++i) {
    int arg = 0;
    double top = INFINITY;
    for (int k = 0; k < classing.K; ++k) {
      const double dk = sqdist(late.row(i).data(), &classing.centroids[k * d], d);
      if (dk < top) {
        top = dk;
        arg = k;
      }
    }
    classing.add(late.firms[i], arg);
    classing.assigned_from_period2++;
  }
}

// ---------------------------------------------------------------------------
// gap statistic

int choose_k(const std::vector<GapRow>& rows) {
  if (rows.empty()) return 0;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    if (rows[i].gap >= rows[i + 1].gap - rows[i + 1].s) return rows[i].k;
  }
  return rows.back().k;
}

GapStatisticReport gap_statistic(const ECDFGrid& ecdfs, const GapOptions& opt) {
  const std::size_t n = ecdfs.size();
  const std::size_t d = ecdfs.dim();
  if (opt.B < 1) throw ConfigError("gap statistic: B must be >= 1");
  if (opt.kmin < 1 || opt.kmax < opt.kmin || static_cast<std::size_t>(opt.kmax) > n) {
    throw ConfigError("gap statistic: k range must lie within [1, #firms]");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ecdfs.firms[a] < ecdfs.firms[b]; });
  std::vector<double> x(n * d);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = ecdfs.row(order[i]);
    std::copy(row.begin(), row.end(), x.begin() + i * d);
    w[i] = ecdfs.weight[order[i]];
  }
  std::vector<double> lo(d, INFINITY);
  std::vector<double> hi(d, -INFINITY);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min(lo[j], x[i * d + j]);
      hi[j] = std::max(hi[j], x[i * d + j]);
    }
  }

  auto safe_log = [](double v) { return std::log(std::max(v, DBL_MIN)); };
  const int nk = opt.kmax - opt.kmin + 1;

  // Reference sets [b], each clustered at every k; randomness keyed by b.
  std::vector<std::vector<double>> ref_log(opt.B, std::vector<double>(nk));
  parallel_for(static_cast<std::size_t>(opt.B), opt.threads, [&](std::size_t b) {
    std::vector<double> ref;
    if (opt.self_reference) {
      ref = x;
    } else {
      auto gen = substream(opt.seed, {1, b});
      ref.resize(n * d);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) ref[i * d + j] = lo[j] + (hi[j] - lo[j]) * unit(gen);
      }
    }
    for (int k = opt.kmin; k <= opt.kmax; ++k) {
      KMeansOptions ko;
      ko.K = k;
      ko.restarts = opt.self_reference ? opt.restarts : opt.reference_restarts;
      ko.seed = opt.self_reference ? derive_seed(opt.seed, "observed" + std::to_string(k))
                                   : derive_seed(opt.seed, "ref" + std::to_string(b) + "/" +
                                                               std::to_string(k));
      ko.threads = 1;
      ref_log[b][k - opt.kmin] = safe_log(weighted_kmeans(ref, d, w, ko).objective);
    }
  });

  GapStatisticReport report;
  report.B = opt.B;
  for (int k = opt.kmin; k <= opt.kmax; ++k) {
    KMeansOptions ko;
    ko.K = k;
    ko.restarts = opt.restarts;
    ko.seed = derive_seed(opt.seed, "observed" + std::to_string(k));
    ko.threads = opt.threads;
    GapRow row;
    row.k = k;
    row.W = weighted_kmeans(x, d, w, ko).objective;
    row.log_W = safe_log(row.W);
    std::vector<double> logs(opt.B);
    for (int b = 0; b < opt.B; ++b) logs[b] = ref_log[b][k - opt.kmin];
    row.ref_log_W = mean(logs);
    row.s = std::sqrt(std::max(0.0, variance(logs)));
    row.gap = row.ref_log_W - row.log_W;
    report.rows.push_back(row);
  }
  report.chosen_K = choose_k(report.rows);
  return report;
}

}  // namespace wagemix::firmcluster
