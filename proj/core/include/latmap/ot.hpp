#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

namespace latmap::ot {

// Minimum-cost bijection between two equal-size point clouds.
// perm[i] = j matches row point i to column point j.
struct TransportPermutation {
  std::vector<int> perm;
  std::vector<double> edge_cost;  // cost(i, perm[i])
  double cost = 0.0;
  double dual_gap = 0.0;  // certificate residual, see solve_assignment
  bool ties_refined = false;

  std::vector<int> inverse() const;
};

// Squared Euclidean distances, rows indexed by x, columns by y.
Eigen::MatrixXd cost_matrix(const std::vector<std::array<double, 2>>& x,
                            const std::vector<std::array<double, 2>>& y);

// Exact assignment solve (Jonker-Volgenant shortest augmenting paths).
// The result carries dual potentials implicitly: after the solve the maximum
// complementary-slackness violation over all (i, j) is measured and stored in
// dual_gap, and the solve fails if it is not negligible. Ties between optimal
// permutations are broken toward the lexicographically smallest one.
TransportPermutation solve_assignment(const Eigen::MatrixXd& cost);

// Exhaustive reference for tiny instances (n <= 9); returns the
// lexicographically smallest minimizer.
std::vector<int> brute_force_assignment(const Eigen::MatrixXd& cost, double* best_cost = nullptr);

// out[i] = values_on_y[perm[i]]
std::vector<double> transport_pullback(const TransportPermutation& t,
                                       const std::vector<double>& values_on_y);

void write_perm_csv(const std::filesystem::path& path, const TransportPermutation& t);
TransportPermutation read_perm_csv(const std::filesystem::path& path);

}  // namespace latmap::ot
