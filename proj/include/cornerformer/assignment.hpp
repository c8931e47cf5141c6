#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

namespace cornerformer {

// Minimum-cost perfect assignment on a square matrix (Hungarian method,
// potentials form, O(n^3)). Returns col_of_row.
inline std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
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
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> col_of_row(n);
  for (std::size_t j = 1; j <= n; ++j) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

// Maximum-cardinality one-to-one matching between `rows` and `cols` items over
// the allowed pairs; among maximum matchings, the one with least total cost.
// `cost(i, j)` returns a negative value for forbidden pairs. Returned pairs are
// sorted by row.
template <class CostFn>
std::vector<std::pair<std::size_t, std::size_t>> optimal_matching(std::size_t rows,
                                                                  std::size_t cols,
                                                                  CostFn cost) {
  const std::size_t n = std::max(rows, cols);
  if (rows == 0 || cols == 0) return {};
  std::vector<std::vector<double>> c(rows, std::vector<double>(cols, -1.0));
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      c[i][j] = cost(i, j);
      if (c[i][j] >= 0.0) total += c[i][j];
    }
  // Any unmatched slot costs more than every allowed assignment combined, so
  // cardinality is maximized before cost is minimized.
  const double big = 2.0 * total + 1.0;
  std::vector<std::vector<double>> sq(n, std::vector<double>(n, big));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      if (c[i][j] >= 0.0) sq[i][j] = c[i][j];
  const auto assign = hungarian(sq);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t j = assign[i];
    if (j < cols && c[i][j] >= 0.0) out.emplace_back(i, j);
  }
  return out;
}

}  // namespace cornerformer
