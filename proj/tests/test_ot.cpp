#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "latmap/errors.hpp"
#include "latmap/ot.hpp"
#include "latmap/rng.hpp"

using namespace latmap;

namespace {
Eigen::MatrixXd random_cost(int n, Rng& rng) {
  Eigen::MatrixXd c(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) c(i, j) = rng.uniform(0.0, 10.0);
  return c;
}

std::vector<std::array<double, 2>> random_cloud(int n, Rng& rng) {
  std::vector<std::array<double, 2>> pts(n);
  for (auto& p : pts) p = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
  return pts;
}
}  // namespace

TEST_CASE("solver agrees with exhaustive search, permutation for permutation") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(8));
    const auto c = random_cost(n, rng);
    double best_cost = 0.0;
    const auto brute = ot::brute_force_assignment(c, &best_cost);
    const auto t = ot::solve_assignment(c);
    CHECK(t.cost == doctest::Approx(best_cost).epsilon(1e-12));
    REQUIRE(t.perm.size() == brute.size());
    for (int i = 0; i < n; ++i) CHECK(t.perm[i] == brute[i]);
  }
}

TEST_CASE("matched clouds assign identically at zero cost") {
  Rng rng(7);
  const auto x = random_cloud(40, rng);
  const Eigen::MatrixXd c = ot::cost_matrix(x, x);
  const auto t = ot::solve_assignment(c);
  CHECK(t.cost == doctest::Approx(0.0).epsilon(1e-15));
  for (int i = 0; i < 40; ++i) CHECK(t.perm[i] == i);
}

TEST_CASE("a rigid translation of a grid is matched point to point") {
  std::vector<std::array<double, 2>> x, y;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      x.push_back({0.5 * i, 0.5 * j});
      y.push_back({0.5 * i + 0.3, 0.5 * j - 0.2});
    }
  const auto t = ot::solve_assignment(ot::cost_matrix(x, y));
  for (size_t i = 0; i < x.size(); ++i) CHECK(t.perm[i] == static_cast<int>(i));
  CHECK(t.cost == doctest::Approx(36 * (0.3 * 0.3 + 0.2 * 0.2)).epsilon(1e-12));
}

TEST_CASE("solutions carry a valid complementary slackness certificate") {
  Rng rng(99);
  for (int n : {5, 23, 64}) {
    const auto c = random_cost(n, rng);
    const auto t = ot::solve_assignment(c);
    CHECK(t.dual_gap >= 0.0);
    CHECK(t.dual_gap < 1e-7 * c.maxCoeff());
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      CHECK(t.edge_cost[i] == doctest::Approx(c(i, t.perm[i])).epsilon(1e-15));
      sum += c(i, t.perm[i]);
    }
    CHECK(t.cost == doctest::Approx(sum).epsilon(1e-13));
  }
}

TEST_CASE("duplicate targets break ties toward the smallest lexicographic match") {
  // rows 0 and 1 see identical columns, so two optima exist
  Eigen::MatrixXd c(3, 3);
  c << 1.0, 1.0, 5.0,
       1.0, 1.0, 5.0,
       4.0, 4.0, 0.5;
  const auto t = ot::solve_assignment(c);
  CHECK(t.perm[0] == 0);
  CHECK(t.perm[1] == 1);
  CHECK(t.perm[2] == 2);
  CHECK(t.ties_refined);
  double best = 0.0;
  const auto brute = ot::brute_force_assignment(c, &best);
  for (int i = 0; i < 3; ++i) CHECK(t.perm[i] == brute[i]);
}

TEST_CASE("repeat solves of the same instance are bitwise identical") {
  Rng rng(5);
  const auto x = random_cloud(50, rng);
  const auto y = random_cloud(50, rng);
  const Eigen::MatrixXd c = ot::cost_matrix(x, y);
  const auto t1 = ot::solve_assignment(c);
  const auto t2 = ot::solve_assignment(c);
  CHECK(t1.cost == t2.cost);
  for (int i = 0; i < 50; ++i) CHECK(t1.perm[i] == t2.perm[i]);
}

TEST_CASE("inverse permutation composes to the identity") {
  Rng rng(31);
  const auto c = random_cost(17, rng);
  const auto t = ot::solve_assignment(c);
  const auto inv = t.inverse();
  for (int i = 0; i < 17; ++i) CHECK(inv[t.perm[i]] == i);
}

TEST_CASE("pullback reindexes values through the permutation") {
  Eigen::MatrixXd c(3, 3);
  c << 0, 1, 1,
       1, 1, 0,
       1, 0, 1;
  const auto t = ot::solve_assignment(c);  // 0->0, 1->2, 2->1
  const std::vector<double> on_targets = {10.0, 20.0, 30.0};
  const auto pulled = ot::transport_pullback(t, on_targets);
  CHECK(pulled[0] == 10.0);
  CHECK(pulled[1] == 30.0);
  CHECK(pulled[2] == 20.0);
  CHECK_THROWS_AS(ot::transport_pullback(t, std::vector<double>(4, 0.0)), config_error);
}

TEST_CASE("degenerate inputs are rejected with typed errors") {
  CHECK_THROWS_AS(ot::solve_assignment(Eigen::MatrixXd(0, 0)), config_error);
  CHECK_THROWS_AS(ot::solve_assignment(Eigen::MatrixXd::Zero(2, 3)), config_error);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(3, 3);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(ot::solve_assignment(bad), numeric_error);
  CHECK_THROWS_AS(ot::brute_force_assignment(Eigen::MatrixXd::Zero(10, 10), nullptr), config_error);
  CHECK_THROWS_AS(ot::cost_matrix({}, {}), config_error);
}

TEST_CASE("permutation files roundtrip") {
  Rng rng(3);
  const auto c = random_cost(12, rng);
  const auto t = ot::solve_assignment(c);
  const auto path = std::filesystem::temp_directory_path() / "latmap_test_perm.csv";
  ot::write_perm_csv(path, t);
  const auto back = ot::read_perm_csv(path);
  REQUIRE(back.perm.size() == t.perm.size());
  for (size_t i = 0; i < t.perm.size(); ++i) {
    CHECK(back.perm[i] == t.perm[i]);
    CHECK(back.edge_cost[i] == t.edge_cost[i]);
  }
  CHECK(back.cost == t.cost);
}
