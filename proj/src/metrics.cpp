#include "wagemix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "wagemix/error.hpp"

namespace wagemix {

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw DataError("adjusted_rand_index: label vectors differ in length");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra;
  std::map<int, double> rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_joint = 0.0;
  for (const auto& [_, v] : joint) sum_joint += c2(v);
  double sum_a = 0.0;
  for (const auto& [_, v] : ra) sum_a += c2(v);
  double sum_b = 0.0;
  for (const auto& [_, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(n);
  const double top = 0.5 * (sum_a + sum_b);
  if (top == expected) return 1.0;
  return (sum_joint - expected) / (top - expected);
}

// O(n^3) shortest augmenting path with potentials.
std::vector<int> hungarian(const std::vector<double>& cost, int n) {
  if (static_cast<int>(cost.size()) != n * n) throw DataError("hungarian: cost is not n x n");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col(n);
  for (int j = 1; j <= n; ++j) col[p[j] - 1] = j - 1;
  return col;
}

}  // namespace wagemix
