#pragma once

// 2-class x 2-type hand markets and an exhaustive-enumeration oracle for the
// counterfactual gaps. Shared by the unit and acceptance tests.

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wagemix/moments.hpp"

namespace handmarket {

struct Market {
  std::string name;
  double count[2][2][2];  // [g][k][l]
  double mean[2][2][2];
  double var[2][2][2];
};

inline std::vector<Market> load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const auto j = nlohmann::json::parse(in);
  std::vector<Market> out;
  for (const auto& m : j.at("markets")) {
    Market h{};
    h.name = m.at("name").get<std::string>();
    const char* g_name[2] = {"F", "M"};
    for (int g = 0; g < 2; ++g) {
      for (int k = 0; k < 2; ++k) {
        for (int l = 0; l < 2; ++l) {
          h.count[g][k][l] = m.at(g_name[g]).at("count")[k][l].get<double>();
          h.mean[g][k][l] = m.at(g_name[g]).at("mean")[k][l].get<double>();
          h.var[g][k][l] = m.at(g_name[g]).at("var")[k][l].get<double>();
        }
      }
    }
    out.push_back(h);
  }
  return out;
}

inline wagemix::MatchMoments moments(const Market& h) {
  wagemix::MatchMoments m(2, 2);
  for (int g = 0; g < 2; ++g) {
    for (int k = 0; k < 2; ++k) {
      for (int l = 0; l < 2; ++l) {
        auto& c = m.at(g, k, l);
        c.count = h.count[g][k][l];
        c.mean = h.mean[g][k][l];
        c.var = h.var[g][k][l];
      }
    }
  }
  return m;
}

using Alloc = std::vector<double>;  // [k * 2 + l]

// Every integer allocation with the given margins; keep the one with the
// most top-class/top-type matches.
inline Alloc enumerate_assortative(double c0, double c1, double t0, double t1) {
  const auto integral = [](double x) { return std::abs(x - std::round(x)) < 1e-9; };
  if (!integral(c0) || !integral(c1) || !integral(t0) || !integral(t1)) {
    throw std::runtime_error("hand market margins must be integers");
  }
  Alloc best;
  double top = -1;
  const int n = static_cast<int>(std::round(c0 + c1));
  for (int x = 0; x <= n; ++x) {
    const double n11 = x, n10 = c1 - x, n01 = t1 - x, n00 = c0 - t1 + x;
    if (n10 < 0 || n01 < 0 || n00 < 0) continue;
    if (n11 > top) {
      top = n11;
      best = {n00, n01, n10, n11};
    }
  }
  return best;
}

struct Oracle {
  Alloc separable[2];
  Alloc sorting_female;
  double baseline, separable_gap, complementarity, sorting, bargaining, residual;
};

inline Oracle solve(const Market& h) {
  auto total = [&](int g) {
    double s = 0;
    for (int k = 0; k < 2; ++k)
      for (int l = 0; l < 2; ++l) s += h.count[g][k][l];
    return s;
  };
  auto avg = [](const Alloc& a, auto wage) {
    double s = 0, n = 0;
    for (int k = 0; k < 2; ++k) {
      for (int l = 0; l < 2; ++l) {
        s += a[k * 2 + l] * wage(k, l);
        n += a[k * 2 + l];
      }
    }
    return s / n;
  };
  auto own = [&](int g) { return [&h, g](int k, int l) { return h.mean[g][k][l]; }; };
  auto pooled = [&h](int k, int l) {
    const double n = h.count[0][k][l] + h.count[1][k][l];
    return (h.count[0][k][l] * h.mean[0][k][l] + h.count[1][k][l] * h.mean[1][k][l]) / n;
  };
  Oracle o;
  Alloc observed[2];
  for (int g = 0; g < 2; ++g) {
    const auto& c = h.count[g];
    observed[g] = {c[0][0], c[0][1], c[1][0], c[1][1]};
    o.separable[g] = enumerate_assortative(c[0][0] + c[0][1], c[1][0] + c[1][1],
                                           c[0][0] + c[1][0], c[0][1] + c[1][1]);
  }
  const double nf = total(0), nm = total(1);
  const auto& cm = h.count[1];
  const auto& cf = h.count[0];
  o.sorting_female = enumerate_assortative((cm[0][0] + cm[0][1]) / nm * nf,
                                           (cm[1][0] + cm[1][1]) / nm * nf,
                                           cf[0][0] + cf[1][0], cf[0][1] + cf[1][1]);
  o.baseline = avg(observed[0], own(0)) - avg(observed[1], own(1));
  const double sep_f = avg(o.separable[0], own(0));
  const double sep_m = avg(o.separable[1], own(1));
  o.separable_gap = sep_f - sep_m;
  o.complementarity = o.baseline - o.separable_gap;
  o.sorting = o.separable_gap - (avg(o.sorting_female, own(0)) - sep_m);
  o.bargaining = o.separable_gap - (avg(o.separable[0], pooled) - avg(o.separable[1], pooled));
  o.residual = o.baseline - (o.complementarity + o.sorting + o.bargaining);
  return o;
}

}  // namespace handmarket
