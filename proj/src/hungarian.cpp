#include "sixmap/hungarian.hpp"

#include <cmath>
#include <limits>

#include "sixmap/common.hpp"

namespace sixmap::roles {
namespace {

// Kuhn's augmenting path on the tight-edge graph restricted to rows >= first_row
// and columns not in `taken`.
bool augment(int row, const std::vector<std::vector<char>>& tight, const std::vector<char>& taken,
             std::vector<int>& match_col, std::vector<char>& seen) {
  const int n = static_cast<int>(tight.size());
  for (int j = 0; j < n; ++j) {
    if (!tight[row][j] || taken[j] || seen[j]) continue;
    seen[j] = 1;
    if (match_col[j] < 0 || augment(match_col[j], tight, taken, match_col, seen)) {
      match_col[j] = row;
      return true;
    }
  }
  return false;
}

bool has_perfect_matching(int first_row, const std::vector<std::vector<char>>& tight,
                          const std::vector<char>& taken) {
  const int n = static_cast<int>(tight.size());
  std::vector<int> match_col(n, -1);
  std::vector<char> seen(n);
  for (int i = first_row; i < n; ++i) {
    std::fill(seen.begin(), seen.end(), 0);
    if (!augment(i, tight, taken, match_col, seen)) return false;
  }
  return true;
}

}  // namespace

Assignment hungarian(const Eigen::MatrixXd& cost) {
  require(cost.rows() == cost.cols(), "hungarian: cost matrix must be square");
  require(cost.allFinite(), "hungarian: cost matrix must be finite");
  const int n = static_cast<int>(cost.rows());
  Assignment out;
  if (n == 0) return out;

  // 1-indexed potentials; p[j] is the row matched to column j.
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
    } while (j0 != 0);
  }

  out.col_of_row.assign(n, -1);
  for (int j = 1; j <= n; ++j) out.col_of_row[p[j] - 1] = j - 1;

  // Every optimal assignment uses only edges with zero reduced cost, so the
  // lexicographically smallest optimum is the smallest perfect matching of
  // the tight-edge graph.
  const double tol = 1e-9 * (1.0 + cost.cwiseAbs().maxCoeff());
  std::vector<std::vector<char>> tight(n, std::vector<char>(n, 0));
  int tight_edges = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (cost(i, j) - u[i + 1] - v[j + 1] <= tol) {
        tight[i][j] = 1;
        ++tight_edges;
      }
    }
  }
  if (tight_edges > n) {
    std::vector<char> taken(n, 0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (!tight[i][j] || taken[j]) continue;
        taken[j] = 1;
        if (has_perfect_matching(i + 1, tight, taken)) {
          out.col_of_row[i] = j;
          break;
        }
        taken[j] = 0;
      }
    }
  }

  for (int i = 0; i < n; ++i) out.cost += cost(i, out.col_of_row[i]);
  return out;
}

}  // namespace sixmap::roles
