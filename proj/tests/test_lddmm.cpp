#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "latmap/complex_geom.hpp"
#include "latmap/errors.hpp"
#include "latmap/lddmm.hpp"
#include "latmap/rng.hpp"

using namespace latmap;
using lddmm::Mat2;

namespace {
constexpr double kPi = 3.14159265358979323846;

Mat2 circle_pts(int n, double r, double dx = 0.0, double dy = 0.0) {
  Mat2 q(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = 2 * kPi * i / n;
    q(i, 0) = r * std::cos(t) + dx;
    q(i, 1) = r * std::sin(t) + dy;
  }
  return q;
}

Mat2 random_momenta(int n, double scale, std::uint64_t seed) {
  Rng rng(seed);
  Mat2 p(n, 2);
  for (int i = 0; i < n; ++i) {
    p(i, 0) = scale * rng.uniform(-1.0, 1.0);
    p(i, 1) = scale * rng.uniform(-1.0, 1.0);
  }
  return p;
}
}  // namespace

TEST_CASE("kernel config rejects out-of-range values") {
  lddmm::KernelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.steps() == cfg.timesteps * cfg.substeps);
  auto bad = cfg;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(bad.validate(), config_error);
  bad = cfg;
  bad.timesteps = 2;
  CHECK_THROWS_AS(bad.validate(), config_error);
  bad = cfg;
  bad.lambda_match = -1.0;
  CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("zero momenta freeze the flow") {
  const auto q0 = circle_pts(16, 1.0);
  lddmm::KernelConfig cfg;
  const auto flow = lddmm::make_flow(q0, Mat2::Zero(16, 2), cfg);
  const auto probe = circle_pts(33, 1.4, 0.05);
  const auto moved = lddmm::flow_forward(flow, probe);
  CHECK((moved - probe).cwiseAbs().maxCoeff() < 1e-14);
  // energy reduces to the endpoint mismatch term
  const auto target = circle_pts(16, 1.0, 0.2);
  double match = 0.0;
  const double e = lddmm::flow_energy(q0, Mat2::Zero(16, 2), target, cfg, &match);
  CHECK(e == doctest::Approx(cfg.lambda_match * 16 * 0.04).epsilon(1e-12));
  CHECK(match == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("adjoint gradient matches finite differences") {
  const auto q0 = circle_pts(6, 1.0);
  const auto target = circle_pts(6, 1.15, 0.1);
  const auto p0 = random_momenta(6, 0.05, 11);
  lddmm::KernelConfig cfg;
  cfg.use_adjoint = true;
  const Mat2 g_adj = lddmm::energy_gradient(q0, p0, target, cfg);
  auto fd_cfg = cfg;
  fd_cfg.use_adjoint = false;
  const Mat2 g_fd = lddmm::energy_gradient(q0, p0, target, fd_cfg);
  const double scale = std::max(g_fd.cwiseAbs().maxCoeff(), 1e-8);
  CHECK((g_adj - g_fd).cwiseAbs().maxCoeff() / scale < 1e-5);
}

TEST_CASE("integrator error falls at fourth order in the substep count") {
  const auto q0 = circle_pts(8, 1.0);
  const auto p0 = random_momenta(8, 0.3, 5);
  lddmm::KernelConfig cfg;
  const auto endpoint = [&](int substeps) {
    auto c = cfg;
    c.substeps = substeps;
    return lddmm::make_flow(q0, p0, c).knots_q.back();
  };
  const Mat2 ref = endpoint(16);
  const double e1 = (endpoint(1) - ref).cwiseAbs().maxCoeff();
  const double e2 = (endpoint(2) - ref).cwiseAbs().maxCoeff();
  CHECK(e1 > 0);
  const double ratio = e1 / e2;
  CHECK(ratio > 8.0);
  CHECK(ratio < 40.0);
}

TEST_CASE("registration reaches a shifted circle and keeps its invariants") {
  const int n = 24;
  const auto src = circle_pts(n, 1.0);
  const auto dst = circle_pts(n, 1.05, 0.15, -0.1);
  lddmm::KernelConfig cfg;
  cfg.max_iters = 150;
  const auto reg = lddmm::register_landmarks(src, dst, cfg);

  CHECK(reg.match_error < 0.02);
  CHECK(reg.energy > 0);
  CHECK(reg.iterations > 0);
  REQUIRE(!reg.energy_trace.empty());
  for (size_t i = 1; i < reg.energy_trace.size(); ++i)
    CHECK(reg.energy_trace[i] <= reg.energy_trace[i - 1] + 1e-12);

  // forward/backward transport must invert each other well inside the shapes
  const auto probe = circle_pts(500, 1.2, 0.02);
  const auto fwd = lddmm::flow_forward(reg.flow, probe);
  const auto back = lddmm::flow_inverse(reg.flow, fwd);
  CHECK((back - probe).cwiseAbs().maxCoeff() < 1e-4);

  CHECK(lddmm::jacobian_min_det(reg.flow, probe) > 0);
}

TEST_CASE("curve registration consumes boundary curves directly") {
  const auto src_in = geom::circle_curve(1.0, 64, geom::CurveRole::Inner);
  const auto src_out = geom::circle_curve(2.0, 64, geom::CurveRole::Outer);
  auto dst_in = src_in;
  auto dst_out = src_out;
  for (auto& p : dst_in.points) p += geom::Cplx(0.05, -0.03);
  for (auto& p : dst_out.points) p += geom::Cplx(0.05, -0.03);
  lddmm::KernelConfig cfg;
  cfg.max_iters = 80;
  const auto reg = lddmm::register_curves(src_in, src_out, dst_in, dst_out, cfg, 24);
  CHECK(reg.flow.landmarks() == 48);
  CHECK(reg.match_error < 0.02);
  CHECK_THROWS_AS(lddmm::register_curves(src_in, src_out, dst_in, dst_out, cfg, 2), config_error);
}

TEST_CASE("runaway trajectories trip the safety box") {
  const auto q0 = circle_pts(8, 1.0);
  const auto p0 = random_momenta(8, 500.0, 3);
  lddmm::KernelConfig cfg;
  CHECK_THROWS_AS(lddmm::make_flow(q0, p0, cfg), numeric_error);
}

TEST_CASE("flow serialization restores the registration verbatim") {
  const auto src = circle_pts(12, 1.0);
  const auto dst = circle_pts(12, 1.1, 0.08);
  lddmm::KernelConfig cfg;
  cfg.max_iters = 40;
  const auto reg = lddmm::register_landmarks(src, dst, cfg);
  const auto path = std::filesystem::temp_directory_path() / "latmap_test_flow.json";
  lddmm::write_flow_json(path, reg);
  const auto back = lddmm::read_flow_json(path);
  CHECK(back.energy == reg.energy);
  CHECK(back.match_error == reg.match_error);
  CHECK(back.flow.kernel.sigma == cfg.sigma);
  CHECK(back.flow.kernel.substeps == cfg.substeps);
  REQUIRE(back.flow.q0.rows() == reg.flow.q0.rows());
  CHECK((back.flow.q0 - reg.flow.q0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.flow.p0 - reg.flow.p0).cwiseAbs().maxCoeff() == 0.0);
  // cached knots are rebuilt from the same data, so transports agree exactly
  const auto probe = circle_pts(50, 1.3);
  const auto a = lddmm::flow_forward(reg.flow, probe);
  const auto b = lddmm::flow_forward(back.flow, probe);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mismatched landmark sets are rejected") {
  lddmm::KernelConfig cfg;
  CHECK_THROWS_AS(lddmm::register_landmarks(circle_pts(8, 1.0), circle_pts(9, 1.0), cfg),
                  config_error);
  CHECK_THROWS_AS(lddmm::flow_energy(circle_pts(8, 1.0), Mat2::Zero(8, 2), circle_pts(7, 1.0), cfg),
                  config_error);
  CHECK_THROWS_AS(lddmm::make_flow(Mat2(0, 2), Mat2(0, 2), cfg), config_error);
}
