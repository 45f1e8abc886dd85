#include "latmap/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "latmap/errors.hpp"
#include "latmap/io_util.hpp"

namespace latmap::ot {

namespace {

// Row-major storage: every hot loop below scans one row at a time, and at a
// few thousand nodes the column-major stride would defeat the cache.
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Jonker-Volgenant: column reduction, reduction transfer, two rounds of
// augmenting row reduction, then Dijkstra augmentation for the remaining free
// rows. Exact for real costs; the heuristic phases only shortcut work the
// augmentation phase would otherwise do.
void lapjv(const RowMat& c, std::vector<int>& rowsol, std::vector<int>& colsol,
           std::vector<double>& u, std::vector<double>& v) {
  const int n = static_cast<int>(c.rows());
  rowsol.assign(n, -1);
  colsol.assign(n, -1);
  u.assign(n, 0.0);
  v.assign(n, 0.0);
  constexpr double kBig = std::numeric_limits<double>::max();

  std::vector<int> matches(n, 0), freerows(n), collist(n), pred(n);
  std::vector<double> d(n);

  // column minima in one row-major streaming pass
  std::vector<int> imins(n, 0);
  for (int j = 0; j < n; ++j) v[j] = c(0, j);
  for (int i = 1; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (c(i, j) < v[j]) {
        v[j] = c(i, j);
        imins[j] = i;
      }
  for (int j = n - 1; j >= 0; --j) {
    const int imin = imins[j];
    if (++matches[imin] == 1) {
      rowsol[imin] = j;
      colsol[j] = imin;
    }
  }

  int numfree = 0;
  for (int i = 0; i < n; ++i) {
    if (matches[i] == 0) {
      freerows[numfree++] = i;
    } else if (matches[i] == 1 && n > 1) {
      const int j1 = rowsol[i];
      double min = kBig;
      for (int j = 0; j < n; ++j)
        if (j != j1) min = std::min(min, c(i, j) - v[j]);
      v[j1] -= min;
    }
  }

  // Augmenting row reduction. With real costs the textbook loop can cycle on
  // near-ties, so each row gets a bounded number of immediate retries before
  // being deferred to the exact augmentation phase.
  std::vector<int> retries(n, 0);
  for (int loop = 0; loop < 2; ++loop) {
    int k = 0;
    const int prvnumfree = numfree;
    numfree = 0;
    while (k < prvnumfree) {
      const int i = freerows[k++];
      double umin = c(i, 0) - v[0], usubmin = kBig;
      int j1 = 0, j2 = -1;
      for (int j = 1; j < n; ++j) {
        const double h = c(i, j) - v[j];
        if (h < usubmin) {
          if (h >= umin) {
            usubmin = h;
            j2 = j;
          } else {
            usubmin = umin;
            umin = h;
            j2 = j1;
            j1 = j;
          }
        }
      }
      int i0 = colsol[j1];
      if (umin < usubmin) {
        v[j1] -= usubmin - umin;
      } else if (i0 >= 0 && j2 >= 0) {
        j1 = j2;
        i0 = colsol[j2];
      }
      rowsol[i] = j1;
      colsol[j1] = i;
      if (i0 >= 0) {
        if (umin < usubmin && ++retries[i0] <= n)
          freerows[--k] = i0;
        else
          freerows[numfree++] = i0;
      }
    }
  }

  for (int f = 0; f < numfree; ++f) {
    const int freerow = freerows[f];
    for (int j = 0; j < n; ++j) {
      d[j] = c(freerow, j) - v[j];
      pred[j] = freerow;
      collist[j] = j;
    }
    int low = 0, up = 0, last = -1, endofpath = -1;
    double min = 0.0;
    while (endofpath < 0) {
      if (up == low) {
        last = low - 1;
        min = d[collist[up++]];
        for (int k = up; k < n; ++k) {
          const int j = collist[k];
          const double h = d[j];
          if (h <= min) {
            if (h < min) {
              up = low;
              min = h;
            }
            collist[k] = collist[up];
            collist[up++] = j;
          }
        }
        for (int k = low; k < up; ++k)
          if (colsol[collist[k]] < 0) {
            endofpath = collist[k];
            break;
          }
      }
      if (endofpath < 0) {
        const int j1 = collist[low++];
        const int i = colsol[j1];
        const double h = c(i, j1) - v[j1] - min;
        for (int k = up; k < n; ++k) {
          const int j = collist[k];
          const double v2 = c(i, j) - v[j] - h;
          if (v2 < d[j]) {
            pred[j] = i;
            if (v2 == min && colsol[j] < 0) {
              endofpath = j;
              break;
            }
            if (v2 == min) {
              collist[k] = collist[up];
              collist[up++] = j;
            }
            d[j] = v2;
          }
        }
      }
    }
    for (int k = 0; k <= last; ++k) {
      const int j1 = collist[k];
      v[j1] += d[j1] - min;
    }
    int i;
    do {
      i = pred[endofpath];
      colsol[endofpath] = i;
      std::swap(rowsol[i], endofpath);
    } while (i != freerow);
  }

  for (int i = 0; i < n; ++i) u[i] = c(i, rowsol[i]) - v[rowsol[i]];
}

// Lexicographically smallest perfect matching within the graph of dual-tight
// edges; any optimal permutation lives there, so the result stays optimal.
struct TieRefiner {
  const std::vector<std::vector<int>>& adj;  // ascending tight columns per row
  std::vector<int>& rowsol;
  std::vector<int>& colsol;
  std::vector<char> col_fixed;
  std::vector<char> col_seen;

  bool augment(int row, int first_movable_row) {
    for (int j : adj[row]) {
      if (col_fixed[j] || col_seen[j]) continue;
      col_seen[j] = 1;
      const int other = colsol[j];
      if (other < 0 || (other >= first_movable_row && augment(other, first_movable_row))) {
        rowsol[row] = j;
        colsol[j] = row;
        return true;
      }
    }
    return false;
  }
};

void refine_ties(const RowMat& c, const std::vector<double>& u,
                 const std::vector<double>& v, double tie_tol, std::vector<int>& rowsol,
                 std::vector<int>& colsol) {
  const int n = static_cast<int>(c.rows());
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (c(i, j) - u[i] - v[j] <= tie_tol) adj[i].push_back(j);

  TieRefiner ref{adj, rowsol, colsol, std::vector<char>(n, 0), std::vector<char>(n, 0)};
  for (int i = 0; i < n; ++i) {
    for (int j : adj[i]) {
      if (ref.col_fixed[j]) continue;
      if (j == rowsol[i]) break;  // already the smallest reachable column
      if (j > rowsol[i]) break;
      const int displaced = colsol[j];
      const int old = rowsol[i];
      rowsol[i] = j;
      colsol[j] = i;
      colsol[old] = -1;
      std::fill(ref.col_seen.begin(), ref.col_seen.end(), 0);
      ref.col_seen[j] = 1;
      if (ref.augment(displaced, i + 1)) break;
      rowsol[i] = old;  // infeasible, roll back
      colsol[old] = i;
      colsol[j] = displaced;
    }
    ref.col_fixed[rowsol[i]] = 1;
  }
}

}  // namespace

std::vector<int> TransportPermutation::inverse() const {
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
  return inv;
}

Eigen::MatrixXd cost_matrix(const std::vector<std::array<double, 2>>& x,
                            const std::vector<std::array<double, 2>>& y) {
  if (x.size() != y.size() || x.empty())
    throw config_error("cost_matrix: clouds must be nonempty and of equal size");
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd c(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dx = x[i][0] - y[j][0], dy = x[i][1] - y[j][1];
      c(i, j) = dx * dx + dy * dy;
    }
  return c;
}

TransportPermutation solve_assignment(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols() || cost.rows() == 0)
    throw config_error("solve_assignment: cost matrix must be square and nonempty");
  if (!cost.allFinite()) throw numeric_error("solve_assignment: non-finite cost entries");
  const int n = static_cast<int>(cost.rows());

  const RowMat c = cost;  // row-major working copy, see lapjv

  std::vector<int> rowsol, colsol;
  std::vector<double> u, v;
  lapjv(c, rowsol, colsol, u, v);

  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  double gap = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) gap = std::max(gap, u[i] + v[j] - c(i, j));
  if (gap > 1e-7 * scale)
    throw numeric_error("solve_assignment: dual feasibility violated by " + io::fmt_double(gap));

  const double tie_tol = 64.0 * std::numeric_limits<double>::epsilon() * scale;
  bool has_tie = false;
  for (int i = 0; i < n && !has_tie; ++i)
    for (int j = 0; j < n; ++j)
      if (j != rowsol[i] && c(i, j) - u[i] - v[j] <= tie_tol) {
        has_tie = true;
        break;
      }
  if (has_tie) refine_ties(c, u, v, tie_tol, rowsol, colsol);

  TransportPermutation t;
  t.perm = rowsol;
  t.ties_refined = has_tie;
  t.dual_gap = gap;
  t.edge_cost.resize(n);
  for (int i = 0; i < n; ++i) {
    t.edge_cost[i] = cost(i, rowsol[i]);
    t.cost += t.edge_cost[i];
  }
  return t;
}

std::vector<int> brute_force_assignment(const Eigen::MatrixXd& cost, double* best_cost) {
  const int n = static_cast<int>(cost.rows());
  if (n < 1 || n > 9) throw config_error("brute_force_assignment: supported for 1 <= n <= 9");
  std::vector<int> perm(n), best;
  std::iota(perm.begin(), perm.end(), 0);
  double bc = std::numeric_limits<double>::max();
  do {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += cost(i, perm[i]);
    if (acc < bc) {  // strict: lexicographic enumeration keeps the first minimizer
      bc = acc;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (best_cost) *best_cost = bc;
  return best;
}

std::vector<double> transport_pullback(const TransportPermutation& t,
                                       const std::vector<double>& values_on_y) {
  if (values_on_y.size() != t.perm.size())
    throw config_error("transport_pullback: value count does not match permutation size");
  std::vector<double> out(t.perm.size());
  for (size_t i = 0; i < t.perm.size(); ++i) out[i] = values_on_y[t.perm[i]];
  return out;
}

void write_perm_csv(const std::filesystem::path& path, const TransportPermutation& t) {
  std::vector<std::vector<double>> rows;
  rows.reserve(t.perm.size());
  for (size_t i = 0; i < t.perm.size(); ++i)
    rows.push_back({static_cast<double>(i), static_cast<double>(t.perm[i]), t.edge_cost[i]});
  io::write_csv(path, "i,perm_i,cost_i", rows);
}

TransportPermutation read_perm_csv(const std::filesystem::path& path) {
  const io::Csv csv = io::read_csv(path);
  TransportPermutation t;
  t.perm.resize(csv.rows.size());
  t.edge_cost.resize(csv.rows.size());
  for (const auto& row : csv.rows) {
    const auto i = static_cast<size_t>(row[0]);
    t.perm[i] = static_cast<int>(row[1]);
    t.edge_cost[i] = row[2];
    t.cost += row[2];
  }
  std::vector<char> seen(t.perm.size(), 0);
  for (int j : t.perm) {
    if (j < 0 || j >= static_cast<int>(t.perm.size()) || seen[j])
      throw artifact_error("read_perm_csv: " + path.string() + " is not a permutation");
    seen[j] = 1;
  }
  return t;
}

}  // namespace latmap::ot
