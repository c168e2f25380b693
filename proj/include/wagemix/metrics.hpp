#pragma once

#include <span>
#include <vector>

namespace wagemix {

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

/// Minimum-cost assignment on a square cost matrix (row-major n x n).
/// Returns col[row].
std::vector<int> hungarian(const std::vector<double>& cost, int n);

}  // namespace wagemix
