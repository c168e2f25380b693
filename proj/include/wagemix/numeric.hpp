#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace wagemix {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  CompensatedSum& operator+=(double x) {
    add(x);
    return *this;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double normal_logpdf(double x, double mean, double sd);
double log_sum_exp(std::span<const double> values);

double mean(std::span<const double> xs);
// Population (1/n) variance and covariance.
double variance(std::span<const double> xs);
double covariance(std::span<const double> xs, std::span<const double> ys);

/// Generator for an independent substream keyed by (seed, path...). The
/// seed_seq mixing is specified by the standard, so streams are reproducible.
std::mt19937_64 substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

/// Stage seed derived from a master seed and a stage name.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage);

}  // namespace wagemix
