#include "wagemix/moments.hpp"

#include <stdexcept>

#include "wagemix/error.hpp"

namespace wagemix {

MatchMoments::MatchMoments(int K, int L) : K_(K), L_(L) {
  if (K < 1 || L < 1) throw ConfigError("match moments need K, L >= 1");
  for (auto& c : cells_) c.assign(static_cast<std::size_t>(K * L), CellMoment{});
}

double MatchMoments::total(int g) const {
  CompensatedSum s;
  for (const auto& c : cells_[g]) s += c.count;
  return s.value();
}

std::vector<double> MatchMoments::type_marginal(int g) const {
  std::vector<double> out(L_, 0.0);
  const double n = total(g);
  if (n <= 0) return out;
  for (int l = 0; l < L_; ++l) {
    CompensatedSum s;
    for (int k = 0; k < K_; ++k) s += at(g, k, l).count;
    out[l] = s.value() / n;
  }
  return out;
}

std::vector<double> MatchMoments::class_marginal(int g) const {
  std::vector<double> out(K_, 0.0);
  const double n = total(g);
  if (n <= 0) return out;
  for (int k = 0; k < K_; ++k) {
    CompensatedSum s;
    for (int l = 0; l < L_; ++l) s += at(g, k, l).count;
    out[k] = s.value() / n;
  }
  return out;
}

CellMoment MatchMoments::pooled(int k, int l) const {
  const auto& a = at(0, k, l);
  const auto& b = at(1, k, l);
  CellMoment out;
  out.count = a.count + b.count;
  if (out.count <= 0) return out;
  if (a.count <= 0) return b;
  if (b.count <= 0) return a;
  out.mean = (a.count * a.mean + b.count * b.mean) / out.count;
  const double da = a.mean - out.mean;
  const double db = b.mean - out.mean;
  out.var = (a.count * (a.var + da * da) + b.count * (b.var + db * db)) / out.count;
  return out;
}

double MatchMoments::mean_wage(int g) const {
  CompensatedSum s;
  double n = 0.0;
  for (const auto& c : cells_[g]) {
    if (c.count <= 0) continue;
    s += c.count * c.mean;
    n += c.count;
  }
  return n > 0 ? s.value() / n : kNaN;
}

MatchMoments tabulate_moments(int K, int L, std::span<const CellRecord> records) {
  MatchMoments m(K, L);
  std::vector<CompensatedSum> sums[kGenders];
  std::vector<CompensatedSum> sq[kGenders];
  for (int g = 0; g < kGenders; ++g) {
    sums[g].resize(static_cast<std::size_t>(K * L));
    sq[g].resize(static_cast<std::size_t>(K * L));
  }
  for (const auto& r : records) {
    if (r.k < 0 || r.k >= K || r.l < 0 || r.l >= L || r.gender < 0 || r.gender >= kGenders) {
      throw DataError("cell record outside the class x type grid");
    }
    m.at(r.gender, r.k, r.l).count += 1.0;
    sums[r.gender][r.k * L + r.l] += r.wage;
  }
  for (int g = 0; g < kGenders; ++g) {
    for (int k = 0; k < K; ++k) {
      for (int l = 0; l < L; ++l) {
        auto& c = m.at(g, k, l);
        if (c.count > 0) c.mean = sums[g][k * L + l].value() / c.count;
      }
    }
  }
  for (const auto& r : records) {
    const double d = r.wage - m.at(r.gender, r.k, r.l).mean;
    sq[r.gender][r.k * L + r.l] += d * d;
  }
  for (int g = 0; g < kGenders; ++g) {
    for (int k = 0; k < K; ++k) {
      for (int l = 0; l < L; ++l) {
        auto& c = m.at(g, k, l);
        if (c.count > 0) c.var = sq[g][k * L + l].value() / c.count;
      }
    }
  }
  return m;
}

}  // namespace wagemix
