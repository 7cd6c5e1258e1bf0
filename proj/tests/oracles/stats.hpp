#pragma once
// Mann-Whitney p-values by enumerating every distinct ordering of group
// labels, and voxel-count Dice.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

/// U of sample a, counting pairs (a_i > b_j) plus half of the ties.
inline double u_by_pairs(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

/// Two-tailed exact p: fraction of label orderings whose |U - mean| is at least the observed one.
inline double mwu_exact_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const double mean = 0.5 * static_cast<double>(a.size() * b.size());
  const double obs = std::abs(u_by_pairs(a, b) - mean);
  std::vector<int> lab(pooled.size(), 1);
  std::fill(lab.begin(), lab.begin() + static_cast<std::ptrdiff_t>(a.size()), 0);
  std::sort(lab.begin(), lab.end());
  long hits = 0, total = 0;
  do {
    std::vector<double> ga, gb;
    for (std::size_t i = 0; i < pooled.size(); ++i) (lab[i] == 0 ? ga : gb).push_back(pooled[i]);
    ++total;
    if (std::abs(u_by_pairs(ga, gb) - mean) >= obs - 1e-9) ++hits;
  } while (std::next_permutation(lab.begin(), lab.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

inline double dice_count(const std::vector<std::uint8_t>& x, const std::vector<std::uint8_t>& y) {
  long a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    a += x[i] ? 1 : 0;
    b += y[i] ? 1 : 0;
    both += (x[i] && y[i]) ? 1 : 0;
  }
  if (a == 0 && b == 0) return 1.0;
  if (a == 0 || b == 0) return 0.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

}  // namespace oracle
