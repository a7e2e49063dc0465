#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ocn/matrix.hpp"

namespace ocn {

struct MatchResult {
  std::vector<std::size_t> assignment;  // assignment[row] = column
  double total_cost = 0.0;
};

namespace detail {

/// Shortest-augmenting-path assignment with potentials. Rows <= columns;
/// returns one optimal column per row.
inline std::vector<std::size_t> jv_assign(const Matrix& cost) {
  const std::size_t n = cost.rows(), m = cost.cols();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      std::size_t j1 = 0;
      double delta = kInf;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
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
    } while (j0 != 0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) assign[p[j] - 1] = j - 1;
  return assign;
}

inline double jv_total(const Matrix& cost) {
  if (cost.rows() == 0) return 0.0;
  const std::vector<std::size_t> a = jv_assign(cost);
  double s = 0.0;
  for (std::size_t i = 0; i < cost.rows(); ++i) s += cost(i, a[i]);
  return s;
}

}  // namespace detail

/// Minimum-cost injective assignment of rows to columns. Among all optimal
/// assignments the lexicographically smallest one (row 0's column minimized
/// first, then row 1's, ...) is returned, so results are reproducible under
/// exact cost ties.
inline MatchResult hungarian(const Matrix& cost) {
  const std::size_t n = cost.rows(), m = cost.cols();
  if (n == 0) throw std::invalid_argument("hungarian: empty cost matrix");
  if (n > m)
    throw std::invalid_argument("hungarian: more rows than columns, " + cost.shape_str());
  if (!cost.all_finite()) throw std::invalid_argument("hungarian: non-finite cost entry");

  const double best = detail::jv_total(cost);
  const double tol = 1e-12 * std::max(1.0, std::abs(best));

  std::vector<std::size_t> assign(n);
  std::vector<char> used_col(m, 0);
  double prefix = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    bool fixed = false;
    for (std::size_t j = 0; j < m && !fixed; ++j) {
      if (used_col[j]) continue;
      double completion = 0.0;
      if (i + 1 < n) {
        std::vector<std::size_t> cols;
        for (std::size_t c = 0; c < m; ++c)
          if (!used_col[c] && c != j) cols.push_back(c);
        Matrix sub(n - i - 1, cols.size());
        for (std::size_t r = 0; r < sub.rows(); ++r)
          for (std::size_t c = 0; c < cols.size(); ++c) sub(r, c) = cost(i + 1 + r, cols[c]);
        completion = detail::jv_total(sub);
      }
      if (prefix + cost(i, j) + completion <= best + tol) {
        assign[i] = j;
        used_col[j] = 1;
        prefix += cost(i, j);
        fixed = true;
      }
    }
    if (!fixed) throw std::logic_error("hungarian: no column completes an optimal assignment");
  }
  MatchResult res;
  res.assignment = std::move(assign);
  res.total_cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) res.total_cost += cost(i, res.assignment[i]);
  return res;
}

}  // namespace ocn
