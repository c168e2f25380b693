#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wagemix/firmcluster.hpp"
#include "wagemix/mixture.hpp"
#include "wagemix/moments.hpp"
#include "wagemix/panel.hpp"

namespace wagemix::decompose {

/// Gaps are female - male. For the clustered-AKM variant `explained` is the
/// firm component and `unexplained` the rest of the gap.
struct KOBReport {
  double overall = 0.0;
  double explained = 0.0;
  double unexplained = 0.0;
  double firm = kNaN;
  double sorting = kNaN;
  double bargaining = kNaN;
  std::size_t n_female = 0;  // worker-years
  std::size_t n_male = 0;
  std::vector<std::string> dropped_columns;
  std::vector<std::string> warnings;
};

/// Indices of a maximal independent column set, scanning left to right.
std::vector<int> independent_columns(const Eigen::MatrixXd& X, double tol = 1e-9);

struct RegressionFit {
  std::vector<std::string> columns;
  Eigen::VectorXd beta;
  Eigen::VectorXd residuals;
  Eigen::RowVectorXd x_mean;
};

/// Least squares on a full-column-rank design.
RegressionFit least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            std::vector<std::string> columns);

struct Design {
  std::vector<std::string> columns;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

/// Two-fold decomposition with female coefficients as the reference:
///   explained = (Xf - Xm) bf,  unexplained = Xm (bf - bm).
/// Columns collinear in either sample are dropped from both.
KOBReport kob(const Design& female, const Design& male);

/// Mincer regressors: intercept, age, age^2, education, occupation and sector
/// dummies (first level dropped; occupation levels pooled over both genders).
std::pair<Design, Design> mincer_designs(std::span<const panel::Observation> rows);

/// All worker-years of the biennial.
KOBReport mincer_kob(const panel::BiennialPanel& panel);

/// Worker-year-weighted average of per-biennial reports.
KOBReport weighted_average(const std::vector<KOBReport>& reports);

/// Worker effects + class effects (class 1 at 0) + period-2 dummy and age^2,
/// for one gender. Rows are the gender's worker-years in panel order, period
/// 1 then period 2 for each worker.
struct FixedEffectsFit {
  int K = 0;
  Gender gender = Gender::F;
  std::vector<double> psi;            // K, psi[0] = 0; NaN if not identified
  std::vector<bool> identified;
  std::vector<std::string> covariates;
  std::vector<double> beta;
  std::vector<WorkerId> worker;
  std::vector<int> period;            // 0 or 1
  std::vector<int> klass;
  std::vector<double> y, worker_effect, firm_effect, xb, residual;
  std::vector<std::string> dropped_columns;
};

FixedEffectsFit cakm_fit(const panel::BiennialPanel& panel,
                         const firmcluster::FirmClassing& classing, Gender gender);

/// Sorting and bargaining, each averaged over the two reference choices.
struct FirmComponents {
  double sorting = 0.0;
  double bargaining = 0.0;
  double firm = 0.0;
};
FirmComponents firm_components(std::span<const double> share_f, std::span<const double> share_m,
                               std::span<const double> psi_f, std::span<const double> psi_m);

KOBReport cakm_kob(const FixedEffectsFit& female, const FixedEffectsFit& male);

struct VarDecompReport {
  double var_w = 0.0;
  double var_firm = 0.0;
  double var_worker = 0.0;
  double var_xb = 0.0;
  double cov_worker_firm2 = 0.0;  // 2 Cov(worker, firm)
  double cov_worker_xb2 = 0.0;
  double cov_firm_xb2 = 0.0;
  double var_resid = 0.0;
  std::size_t n = 0;

  double component_sum() const;
  std::vector<std::pair<std::string, double>> components() const;
};

VarDecompReport variance_decomposition(std::span<const double> y, std::span<const double> worker,
                                       std::span<const double> firm, std::span<const double> xb,
                                       std::span<const double> resid);
VarDecompReport variance_decomposition(const FixedEffectsFit& fit);

/// T = (1/M) sum (N_m / Nbar) log(N_m / Nbar); empty cells contribute 0.
double theil_index(std::span<const double> counts);

/// Minimizes sum n_kl (mu_kl - alpha_l - psi_k)^2 over observed cells with
/// psi of the first observed class fixed at 0. Classes or types with no
/// observed cell get NaN effects.
struct AdditiveFit {
  int K = 0;
  int L = 0;
  std::vector<double> alpha;     // L
  std::vector<double> psi;       // K
  std::vector<double> residual;  // K x L match effects, NaN on empty cells
  int reference_class = 0;

  double predict(int k, int l) const { return alpha[l] + psi[k]; }
};

AdditiveFit weighted_tw_fe(int K, int L, std::span<const double> means,
                           std::span<const double> weights);
AdditiveFit weighted_tw_fe(const MatchMoments& moments, int gender);

/// Type effects + class effects for one gender's worker-years from the
/// additive fit of its (class, type) means; no covariates.
VarDecompReport blm_variance(const panel::BiennialPanel& panel,
                             const firmcluster::FirmClassing& classing,
                             const mixture::TypeAssignment& types, const AdditiveFit& fit,
                             Gender gender);

}  // namespace wagemix::decompose
