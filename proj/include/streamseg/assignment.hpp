#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <utility>
#include <vector>

#include "streamseg/errors.hpp"

namespace streamseg {

namespace detail {

// Shortest-augmenting-path solver for the rectangular assignment problem.
// Minimizes total cost over a full assignment of rows (requires rows <= cols,
// all costs finite). Returns row -> column.
inline std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    if (n > m) throw ConfigError("assignment: more rows than columns");
    const double inf = std::numeric_limits<double>::infinity();

    // 1-indexed potentials and matching, p[j] = row matched to column j
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = -1;
            double delta = inf;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
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
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= m; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace detail

// Maximum-total-weight bipartite matching. weights(i,j) = -inf forbids the
// pair; pairs with negative weight are left unmatched (skipping them can only
// raise the total). Returns (row, col) pairs sorted by row.
inline std::vector<std::pair<int, int>> max_weight_matching(const Eigen::MatrixXd& weights) {
    const int rows = static_cast<int>(weights.rows());
    const int cols = static_cast<int>(weights.cols());
    if (rows == 0 || cols == 0) return {};
    if (rows > cols) {
        // solve the cheaper orientation, the matching is symmetric
        Eigen::MatrixXd t = weights.transpose();
        std::vector<std::pair<int, int>> pairs = max_weight_matching(t);
        for (auto& [a, b] : pairs) std::swap(a, b);
        std::sort(pairs.begin(), pairs.end());
        return pairs;
    }

    // One dummy column per row gives every row a zero-cost "stay unmatched"
    // option; forbidden pairs get a finite sentinel the solver will never pick.
    const double forbidden = 1e15;
    Eigen::MatrixXd cost(rows, cols + rows);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            double w = weights(i, j);
            cost(i, j) = std::isfinite(w) ? -w : forbidden;
        }
        for (int j = 0; j < rows; ++j) cost(i, cols + j) = 0.0;
    }

    std::vector<int> row_to_col = detail::min_cost_assignment(cost);
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < rows; ++i) {
        int j = row_to_col[i];
        if (j < 0 || j >= cols) continue;            // unmatched
        if (!std::isfinite(weights(i, j))) continue;  // forbidden, must never appear
        if (weights(i, j) < 0.0) continue;            // skipping beats a negative pair
        pairs.emplace_back(i, j);
    }
    return pairs;
}

}  // namespace streamseg
