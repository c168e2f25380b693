#include "wagemix/decompose.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "wagemix/error.hpp"
#include "wagemix/numeric.hpp"

namespace wagemix::decompose {

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

std::vector<int> independent_columns(const Eigen::MatrixXd& X, double tol) {
  std::vector<int> kept;
  std::vector<Eigen::VectorXd> basis;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double norm = X.col(j).norm();
    if (!(norm > 0.0)) continue;
    Eigen::VectorXd v = X.col(j) / norm;
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : basis) v -= q.dot(v) * q;
    }
    const double rest = v.norm();
    if (rest > tol) {
      basis.push_back(v / rest);
      kept.push_back(static_cast<int>(j));
    }
  }
  return kept;
}

RegressionFit least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            std::vector<std::string> columns) {
  if (X.rows() != y.size()) throw DataError("least_squares: design and outcome differ in rows");
  if (X.rows() < X.cols()) throw DataError("least_squares: fewer rows than columns");
  RegressionFit fit;
  fit.columns = std::move(columns);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
  fit.beta = qr.solve(y);
  if (!fit.beta.allFinite()) throw NumericalError("least_squares: non-finite solution");
  fit.residuals = y - X * fit.beta;
  fit.x_mean = X.colwise().mean();
  return fit;
}

KOBReport kob(const Design& female, const Design& male) {
  if (female.columns != male.columns) throw DataError("kob: designs have different columns");
  if (female.X.rows() == 0 || male.X.rows() == 0) {
    throw DataError("kob: both genders must be present");
  }
  const auto kf = independent_columns(female.X);
  const auto km = independent_columns(male.X);
  std::vector<int> kept;
  std::set_intersection(kf.begin(), kf.end(), km.begin(), km.end(), std::back_inserter(kept));

  KOBReport rep;
  std::vector<std::string> names;
  for (int j = 0; j < static_cast<int>(female.columns.size()); ++j) {
    if (std::binary_search(kept.begin(), kept.end(), j)) {
      names.push_back(female.columns[j]);
    } else {
      rep.dropped_columns.push_back(female.columns[j]);
    }
  }
  auto select = [&](const Eigen::MatrixXd& X) {
    Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t c = 0; c < kept.size(); ++c) out.col(c) = X.col(kept[c]);
    return out;
  };
  const Eigen::MatrixXd XF = select(female.X);
  const Eigen::MatrixXd XM = select(male.X);
  const RegressionFit fF = least_squares(XF, female.y, names);
  const RegressionFit fM = least_squares(XM, male.y, names);

  rep.n_female = static_cast<std::size_t>(female.y.size());
  rep.n_male = static_cast<std::size_t>(male.y.size());
  rep.overall = female.y.mean() - male.y.mean();
  rep.explained = (fF.x_mean - fM.x_mean).dot(fF.beta);
  rep.unexplained = fM.x_mean.dot(fF.beta - fM.beta);
  return rep;
}

std::pair<Design, Design> mincer_designs(std::span<const panel::Observation> rows) {
  std::set<int> occupations;
  for (const auto& o : rows) occupations.insert(o.occupation);
  std::vector<std::string> cols = {"intercept", "age", "age2", "edu_HighSchool", "edu_College"};
  std::map<int, int> occ_col;
  for (int occ : occupations) {
    if (occ == *occupations.begin()) continue;
    occ_col[occ] = static_cast<int>(cols.size());
    cols.push_back("occ_" + std::to_string(occ));
  }
  const int sector0 = static_cast<int>(cols.size());
  for (int s = 1; s < panel::kSectors; ++s) {
    cols.push_back(std::string("sector_") + panel::to_string(static_cast<panel::Sector>(s)));
  }

  std::pair<Design, Design> out;
  Design* d[2] = {&out.first, &out.second};
  std::size_t n[2] = {0, 0};
  for (const auto& o : rows) n[index_of(o.gender)]++;
  for (int g = 0; g < 2; ++g) {
    d[g]->columns = cols;
    d[g]->X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n[g]),
                                    static_cast<Eigen::Index>(cols.size()));
    d[g]->y.resize(static_cast<Eigen::Index>(n[g]));
  }
  std::size_t at[2] = {0, 0};
  for (const auto& o : rows) {
    const int g = index_of(o.gender);
    const auto i = static_cast<Eigen::Index>(at[g]++);
    auto& X = d[g]->X;
    X(i, 0) = 1.0;
    X(i, 1) = o.age;
    X(i, 2) = static_cast<double>(o.age) * o.age;
    if (o.education == panel::Education::HighSchool) X(i, 3) = 1.0;
    if (o.education == panel::Education::College) X(i, 4) = 1.0;
    if (auto it = occ_col.find(o.occupation); it != occ_col.end()) X(i, it->second) = 1.0;
    const int s = static_cast<int>(o.sector);
    if (s > 0) X(i, sector0 + s - 1) = 1.0;
    d[g]->y(i) = o.log_wage;
  }
  return out;
}

KOBReport mincer_kob(const panel::BiennialPanel& panel) {
  const auto rows = panel::flatten(panel);
  const auto [female, male] = mincer_designs(rows);
  return kob(female, male);
}

KOBReport weighted_average(const std::vector<KOBReport>& reports) {
  KOBReport out;
  if (reports.empty()) return out;
  double total = 0.0;
  CompensatedSum overall, explained, unexplained, firm, sorting, bargaining;
  bool has_firm = true;
  for (const auto& r : reports) {
    const double w = static_cast<double>(r.n_female + r.n_male);
    total += w;
    overall += w * r.overall;
    explained += w * r.explained;
    unexplained += w * r.unexplained;
    if (std::isnan(r.firm)) {
      has_firm = false;
    } else {
      firm += w * r.firm;
      sorting += w * r.sorting;
      bargaining += w * r.bargaining;
    }
    out.n_female += r.n_female;
    out.n_male += r.n_male;
  }
  if (total <= 0) throw DataError("weighted_average: reports carry no observations");
  out.overall = overall.value() / total;
  out.explained = explained.value() / total;
  out.unexplained = unexplained.value() / total;
  if (has_firm) {
    out.firm = firm.value() / total;
    out.sorting = sorting.value() / total;
    out.bargaining = bargaining.value() / total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// clustered AKM

FixedEffectsFit cakm_fit(const panel::BiennialPanel& panel,
                         const firmcluster::FirmClassing& classing, Gender gender) {
  const int K = classing.K;
  FixedEffectsFit fit;
  fit.K = K;
  fit.gender = gender;
  fit.covariates = {"period2", "age2"};

  std::vector<const panel::BiennialRow*> rows;
  for (const auto& r : panel.rows) {
    if (r.first.gender == gender) rows.push_back(&r);
  }
  if (rows.empty()) throw DataError(std::string("cakm_fit: no workers of gender ") + to_string(gender));

  // Class graph over movers; every class with workers must be reachable.
  std::vector<char> present(K, 0);
  UnionFind uf(K);
  for (const auto* r : rows) {
    const int k1 = classing.class_of(r->first.firm_id);
    const int k2 = classing.class_of(r->second.firm_id);
    present[k1] = present[k2] = 1;
    uf.unite(k1, k2);
  }
  if (!present[0]) {
    throw DataError(std::string("cakm_fit: reference class 1 has no workers of gender ") +
                    to_string(gender));
  }
  std::map<int, std::vector<int>> comps;
  for (int k = 0; k < K; ++k) {
    if (present[k]) comps[uf.find(k)].push_back(k + 1);
  }
  if (comps.size() > 1) {
    std::string msg = "cakm_fit: class mobility graph is disconnected for gender ";
    msg += to_string(gender);
    msg += "; components:";
    for (const auto& [_, members] : comps) {
      msg += " {";
      for (std::size_t i = 0; i < members.size(); ++i) {
        msg += (i ? "," : "") + std::to_string(members[i]);
      }
      msg += "}";
    }
    throw DataError(msg + ". See `graph components`.");
  }

  const std::size_t n = 2 * rows.size();
  const int p = (K - 1) + 2;
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), p);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  std::vector<std::string> names;
  for (int k = 1; k < K; ++k) names.push_back("class" + std::to_string(k + 1));
  names.push_back("period2");
  names.push_back("age2");

  fit.worker.reserve(n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const panel::Observation* obs[2] = {&rows[i]->first, &rows[i]->second};
    for (int t = 0; t < 2; ++t) {
      const auto row = static_cast<Eigen::Index>(2 * i + t);
      const int k = classing.class_of(obs[t]->firm_id);
      if (k > 0) Z(row, k - 1) = 1.0;
      Z(row, K - 1) = t;
      Z(row, K) = static_cast<double>(obs[t]->age) * obs[t]->age;
      y(row) = obs[t]->log_wage;
      fit.worker.push_back(obs[t]->worker_id);
      fit.period.push_back(t);
      fit.klass.push_back(k);
    }
  }
  // Within-worker demeaning.
  Eigen::MatrixXd Zd = Z;
  Eigen::VectorXd yd = y;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto a = static_cast<Eigen::Index>(2 * i);
    const Eigen::RowVectorXd zm = 0.5 * (Z.row(a) + Z.row(a + 1));
    Zd.row(a) -= zm;
    Zd.row(a + 1) -= zm;
    const double ym = 0.5 * (y(a) + y(a + 1));
    yd(a) -= ym;
    yd(a + 1) -= ym;
  }
  const auto kept = independent_columns(Zd);
  Eigen::MatrixXd Zk(Zd.rows(), static_cast<Eigen::Index>(kept.size()));
  std::vector<std::string> kept_names;
  for (std::size_t c = 0; c < kept.size(); ++c) {
    Zk.col(c) = Zd.col(kept[c]);
    kept_names.push_back(names[kept[c]]);
  }
  for (int j = 0; j < p; ++j) {
    if (!std::binary_search(kept.begin(), kept.end(), j)) fit.dropped_columns.push_back(names[j]);
  }
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(p);
  if (!kept.empty()) {
    const RegressionFit rf = least_squares(Zk, yd, kept_names);
    for (std::size_t c = 0; c < kept.size(); ++c) coef(kept[c]) = rf.beta(c);
  }

  fit.psi.assign(K, kNaN);
  fit.identified.assign(K, false);
  fit.psi[0] = 0.0;
  fit.identified[0] = true;
  for (int k = 1; k < K; ++k) {
    if (std::binary_search(kept.begin(), kept.end(), k - 1)) {
      fit.psi[k] = coef(k - 1);
      fit.identified[k] = true;
    }
  }
  fit.beta = {coef(K - 1), coef(K)};

  fit.y.resize(n);
  fit.firm_effect.resize(n);
  fit.xb.resize(n);
  fit.worker_effect.resize(n);
  fit.residual.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    fit.y[r] = y(row);
    fit.firm_effect[r] = fit.klass[r] > 0 ? coef(fit.klass[r] - 1) : 0.0;
    fit.xb[r] = coef(K - 1) * Z(row, K - 1) + coef(K) * Z(row, K);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t a = 2 * i;
    const double alpha = 0.5 * ((fit.y[a] - fit.firm_effect[a] - fit.xb[a]) +
                                (fit.y[a + 1] - fit.firm_effect[a + 1] - fit.xb[a + 1]));
    for (std::size_t t = 0; t < 2; ++t) {
      fit.worker_effect[a + t] = alpha;
      fit.residual[a + t] = fit.y[a + t] - alpha - fit.firm_effect[a + t] - fit.xb[a + t];
    }
  }
  return fit;
}

FirmComponents firm_components(std::span<const double> sf, std::span<const double> sm,
                               std::span<const double> pf, std::span<const double> pm) {
  const std::size_t K = sf.size();
  if (sm.size() != K || pf.size() != K || pm.size() != K) {
    throw DataError("firm_components: inputs differ in class count");
  }
  CompensatedSum sort_f, sort_m, barg_f, barg_m;
  for (std::size_t k = 0; k < K; ++k) {
    sort_f += pf[k] * (sf[k] - sm[k]);
    sort_m += pm[k] * (sf[k] - sm[k]);
    barg_f += sf[k] * (pf[k] - pm[k]);
    barg_m += sm[k] * (pf[k] - pm[k]);
  }
  FirmComponents out;
  out.sorting = 0.5 * (sort_f.value() + sort_m.value());
  out.bargaining = 0.5 * (barg_f.value() + barg_m.value());
  out.firm = out.sorting + out.bargaining;
  return out;
}

KOBReport cakm_kob(const FixedEffectsFit& female, const FixedEffectsFit& male) {
  if (female.K != male.K) throw DataError("cakm_kob: fits use different classings");
  const int K = female.K;
  KOBReport rep;
  std::vector<double> sf(K, 0.0), sm(K, 0.0);
  for (int k : female.klass) sf[k] += 1.0;
  for (int k : male.klass) sm[k] += 1.0;
  for (auto& x : sf) x /= static_cast<double>(female.klass.size());
  for (auto& x : sm) x /= static_cast<double>(male.klass.size());
  std::vector<double> pf = female.psi;
  std::vector<double> pm = male.psi;
  for (int k = 0; k < K; ++k) {
    if (std::isnan(pf[k]) && std::isnan(pm[k])) {
      pf[k] = pm[k] = 0.0;  // no workers of either gender; shares are 0
    } else if (std::isnan(pf[k])) {
      pf[k] = pm[k];
      rep.warnings.push_back("class " + std::to_string(k + 1) +
                             " has no female effect; using the male effect");
    } else if (std::isnan(pm[k])) {
      pm[k] = pf[k];
      rep.warnings.push_back("class " + std::to_string(k + 1) +
                             " has no male effect; using the female effect");
    }
  }
  const FirmComponents fc = firm_components(sf, sm, pf, pm);
  rep.overall = mean(female.y) - mean(male.y);
  rep.firm = fc.firm;
  rep.sorting = fc.sorting;
  rep.bargaining = fc.bargaining;
  rep.explained = fc.firm;
  rep.unexplained = rep.overall - fc.firm;
  rep.n_female = female.y.size();
  rep.n_male = male.y.size();
  return rep;
}

// ---------------------------------------------------------------------------
// variance decomposition

double VarDecompReport::component_sum() const {
  CompensatedSum s;
  for (const auto& [_, v] : components()) s += v;
  return s.value();
}

std::vector<std::pair<std::string, double>> VarDecompReport::components() const {
  return {{"var_worker", var_worker},         {"var_firm", var_firm},
          {"var_xb", var_xb},                 {"cov_worker_firm2", cov_worker_firm2},
          {"cov_worker_xb2", cov_worker_xb2}, {"cov_firm_xb2", cov_firm_xb2},
          {"var_resid", var_resid}};
}

VarDecompReport variance_decomposition(std::span<const double> y, std::span<const double> worker,
                                       std::span<const double> firm, std::span<const double> xb,
                                       std::span<const double> resid) {
  const std::size_t n = y.size();
  if (n == 0 || worker.size() != n || firm.size() != n || xb.size() != n || resid.size() != n) {
    throw DataError("variance_decomposition: component vectors must be non-empty and aligned");
  }
  VarDecompReport r;
  r.n = n;
  r.var_w = variance(y);
  r.var_worker = variance(worker);
  r.var_firm = variance(firm);
  r.var_xb = variance(xb);
  r.cov_worker_firm2 = 2.0 * covariance(worker, firm);
  r.cov_worker_xb2 = 2.0 * covariance(worker, xb);
  r.cov_firm_xb2 = 2.0 * covariance(firm, xb);
  r.var_resid = variance(resid);
  return r;
}

VarDecompReport variance_decomposition(const FixedEffectsFit& fit) {
  return variance_decomposition(fit.y, fit.worker_effect, fit.firm_effect, fit.xb, fit.residual);
}

double theil_index(std::span<const double> counts) {
  if (counts.empty()) throw DataError("theil_index: no cells");
  CompensatedSum total;
  for (double c : counts) {
    if (!(c >= 0.0)) throw DataError("theil_index: negative or non-finite count");
    total += c;
  }
  if (total.value() <= 0.0) throw DataError("theil_index: all counts are zero");
  const double M = static_cast<double>(counts.size());
  const double bar = total.value() / M;
  CompensatedSum t;
  for (double c : counts) {
    if (c <= 0.0) continue;
    const double r = c / bar;
    t += r * std::log(r);
  }
  return t.value() / M;
}

// ---------------------------------------------------------------------------
// weighted two-way fit

AdditiveFit weighted_tw_fe(int K, int L, std::span<const double> means,
                           std::span<const double> weights) {
  if (means.size() != static_cast<std::size_t>(K * L) || weights.size() != means.size()) {
    throw DataError("weighted_tw_fe: inputs must be K x L");
  }
  auto observed = [&](int k, int l) {
    const double w = weights[k * L + l];
    return w > 0.0 && std::isfinite(means[k * L + l]);
  };
  // Nodes: types 0..L-1, classes L..L+K-1.
  std::vector<char> used(K + L, 0);
  UnionFind uf(K + L);
  std::size_t cells = 0;
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      if (!observed(k, l)) continue;
      used[l] = used[L + k] = 1;
      uf.unite(l, L + k);
      ++cells;
    }
  }
  if (cells == 0) throw DataError("weighted_tw_fe: no observed cells");
  std::map<int, std::vector<std::string>> comps;
  for (int v = 0; v < K + L; ++v) {
    if (!used[v]) continue;
    comps[uf.find(v)].push_back(v < L ? "type" + std::to_string(v + 1)
                                      : "class" + std::to_string(v - L + 1));
  }
  if (comps.size() > 1) {
    std::string msg = "weighted_tw_fe: class-type support is disconnected; components:";
    for (const auto& [_, members] : comps) {
      msg += " {";
      for (std::size_t i = 0; i < members.size(); ++i) msg += (i ? "," : "") + members[i];
      msg += "}";
    }
    throw DataError(msg);
  }

  AdditiveFit fit;
  fit.K = K;
  fit.L = L;
  fit.reference_class = 0;
  while (!used[L + fit.reference_class]) ++fit.reference_class;

  std::vector<int> col(K + L, -1);
  int p = 0;
  for (int l = 0; l < L; ++l) {
    if (used[l]) col[l] = p++;
  }
  for (int k = 0; k < K; ++k) {
    if (used[L + k] && k != fit.reference_class) col[L + k] = p++;
  }
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cells), p);
  Eigen::VectorXd b(static_cast<Eigen::Index>(cells));
  Eigen::Index row = 0;
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      if (!observed(k, l)) continue;
      const double s = std::sqrt(weights[k * L + l]);
      A(row, col[l]) = s;
      if (col[L + k] >= 0) A(row, col[L + k]) = s;
      b(row) = s * means[k * L + l];
      ++row;
    }
  }
  const Eigen::VectorXd x = A.colPivHouseholderQr().solve(b);
  if (!x.allFinite()) throw NumericalError("weighted_tw_fe: non-finite solution");

  fit.alpha.assign(L, kNaN);
  fit.psi.assign(K, kNaN);
  for (int l = 0; l < L; ++l) {
    if (col[l] >= 0) fit.alpha[l] = x(col[l]);
  }
  for (int k = 0; k < K; ++k) {
    if (k == fit.reference_class) {
      fit.psi[k] = 0.0;
    } else if (col[L + k] >= 0) {
      fit.psi[k] = x(col[L + k]);
    }
  }
  fit.residual.assign(K * L, kNaN);
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      if (observed(k, l)) fit.residual[k * L + l] = means[k * L + l] - fit.alpha[l] - fit.psi[k];
    }
  }
  return fit;
}

AdditiveFit weighted_tw_fe(const MatchMoments& m, int g) {
  const int K = m.K();
  const int L = m.L();
  std::vector<double> means(K * L), weights(K * L);
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      means[k * L + l] = m.at(g, k, l).mean;
      weights[k * L + l] = m.at(g, k, l).count;
    }
  }
  return weighted_tw_fe(K, L, means, weights);
}

VarDecompReport blm_variance(const panel::BiennialPanel& panel,
                             const firmcluster::FirmClassing& classing,
                             const mixture::TypeAssignment& types, const AdditiveFit& fit,
                             Gender gender) {
  std::vector<double> y, worker, firm, xb, resid;
  for (const auto& r : panel.rows) {
    if (r.first.gender != gender) continue;
    const int l = types.type_of(r.first.worker_id);
    for (const auto* o : {&r.first, &r.second}) {
      const int k = classing.class_of(o->firm_id);
      const double a = fit.alpha[l];
      const double p = fit.psi[k];
      if (std::isnan(a) || std::isnan(p)) {
        throw DataError("blm_variance: worker-year in a cell without an additive effect");
      }
      y.push_back(o->log_wage);
      worker.push_back(a);
      firm.push_back(p);
      xb.push_back(0.0);
      resid.push_back(o->log_wage - a - p);
    }
  }
  return variance_decomposition(y, worker, firm, xb, resid);
}

}  // namespace wagemix::decompose
