#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "latmap/complex_geom.hpp"
#include "latmap/conformal.hpp"
#include "latmap/errors.hpp"
#include "latmap/latent.hpp"
#include "latmap/mesh_fem.hpp"
#include "latmap/rng.hpp"

using namespace latmap;
using geom::Cplx;

namespace {
constexpr double kPi = 3.14159265358979323846;

conformal::ReferenceAnnulus small_ref() {
  conformal::ReferenceAnnulus ref;
  ref.n_rho = 16;
  ref.n_theta = 32;
  return ref;
}

std::filesystem::path temp_dir() {
  auto p = std::filesystem::temp_directory_path() / "latmap_test_latent";
  std::filesystem::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("grid points follow the node flattening of the annulus") {
  const auto ref = small_ref();
  const auto pts = latent::grid_points(ref);
  REQUIRE(static_cast<int>(pts.size()) == ref.node_count());
  for (int i = 0; i < ref.n_rho; i += 3) {
    for (int j = 0; j < ref.n_theta; j += 7) {
      const auto z = ref.node(i, j);
      const auto& p = pts[ref.node_index(i, j)];
      CHECK(p[0] == doctest::Approx(z.real()).epsilon(1e-15));
      CHECK(p[1] == doctest::Approx(z.imag()).epsilon(1e-15));
    }
  }
}

TEST_CASE("composition with a conformal map keeps fields harmonic on the grid") {
  const auto sp = geom::sample_shape_params(4);
  const auto inner = geom::generate_inner_boundary(sp, 256);
  conformal::FitOptions opt;
  const auto map = conformal::fit_exterior_map(inner, opt);
  const auto ref = conformal::ReferenceAnnulus{};

  const auto defect_of = [&](auto h) {
    Eigen::VectorXd u0(ref.node_count());
    for (int i = 0; i < ref.n_rho; ++i)
      for (int j = 0; j < ref.n_theta; ++j) {
        const Cplx q = map.eval(ref.node(i, j));
        u0[ref.node_index(i, j)] = h(q.real(), q.imag());
      }
    u0.array() -= u0.mean();
    return latent::harmonic_defect(u0, ref);
  };

  const double d_x = defect_of([](double x, double) { return x; });
  const double d_y = defect_of([](double, double y) { return y; });
  const double d_saddle = defect_of([](double x, double y) { return x * x - y * y; });
  const double d_cross = defect_of([](double x, double y) { return x * y; });
  const double d_bump = defect_of([](double x, double y) { return x * x + y * y; });

  // harmonic compositions sit at the stencil truncation level, far below a
  // generic smooth field of the same size
  CHECK(d_x < 1e-2);
  CHECK(d_y < 1e-2);
  CHECK(d_saddle < 0.1);
  CHECK(d_cross < 0.1);
  CHECK(d_bump > 50 * d_saddle);
}

TEST_CASE("harmonic defect vanishes on the separation-of-variables field") {
  const auto ref = conformal::ReferenceAnnulus{};
  Eigen::VectorXd bc0(ref.n_theta);
  for (int j = 0; j < ref.n_theta; ++j)
    bc0[j] = 0.8 * std::cos(ref.theta(j)) - 0.3 * std::sin(2 * ref.theta(j));
  const auto field = latent::annulus_field_from_boundary(bc0, ref);
  const double floor_defect = latent::harmonic_defect(field, ref);
  CHECK(floor_defect < 0.1);

  Eigen::VectorXd noisy = field;
  Rng rng(6);
  for (int i = 0; i < noisy.size(); ++i) noisy[i] += 0.05 * rng.uniform(-1.0, 1.0);
  CHECK(latent::harmonic_defect(noisy, ref) > 20 * floor_defect);
}

TEST_CASE("boundary-driven annulus field matches the oracle mode by mode") {
  const auto ref = small_ref();
  Eigen::VectorXd bc0(ref.n_theta);
  for (int j = 0; j < ref.n_theta; ++j) bc0[j] = std::cos(ref.theta(j));
  const auto field = latent::annulus_field_from_boundary(bc0, ref);

  fem::NeumannData bc;
  bc.coeffs = {{1.0, 0.0}};
  bc.perimeter = 2 * kPi * ref.r_outer;
  for (int i = 0; i < ref.n_rho; i += 4) {
    for (int j = 0; j < ref.n_theta; j += 5) {
      const double expect = fem::annulus_oracle_eval(bc, ref.r_outer, ref.rho(i), ref.theta(j));
      CHECK(field[ref.node_index(i, j)] == doctest::Approx(expect).epsilon(1e-10));
    }
  }
  CHECK_THROWS_AS(latent::annulus_field_from_boundary(Eigen::VectorXd::Zero(5), ref), config_error);
}

TEST_CASE("outer arc length is the normalized angle on the identity annulus") {
  const auto ref = small_ref();
  const auto mesh = fem::mesh_annulus_grid(ref);
  for (double frac : {0.0, 0.125, 0.4, 0.85}) {
    const double ang = 2 * kPi * frac;
    const double s =
        latent::outer_arclength(mesh, {ref.r_outer * std::cos(ang), ref.r_outer * std::sin(ang)});
    CHECK(s == doctest::Approx(frac).epsilon(1e-3));
  }
}

TEST_CASE("field pullback interpolates linear data and snaps near the rim") {
  const auto ref = small_ref();
  const auto mesh = fem::mesh_annulus_grid(ref);
  std::vector<double> u(mesh.node_count());
  for (int i = 0; i < mesh.node_count(); ++i) u[i] = 0.3 * mesh.x[i] - 1.2 * mesh.y[i];

  std::vector<std::array<double, 2>> pts = {{1.5, 0.2}, {-1.1, 0.9}, {0.0, -1.7}};
  const auto res = latent::pullback_field_at_points(mesh, u, pts, 1e-6);
  for (size_t k = 0; k < pts.size(); ++k)
    CHECK(res.values[k] == doctest::Approx(0.3 * pts[k][0] - 1.2 * pts[k][1]).epsilon(1e-10));
  CHECK(res.max_snap == 0.0);

  const auto snapped =
      latent::pullback_field_at_points(mesh, u, {{2.0 + 5e-3, 0.0}}, 1e-2);
  CHECK(snapped.max_snap > 0.0);
  CHECK(snapped.max_snap < 1e-2 + 1e-3);
  CHECK_THROWS_AS(latent::pullback_field_at_points(mesh, u, {{3.0, 3.0}}, 1e-2), numeric_error);
}

TEST_CASE("pca basis is orthonormal, ordered, and sign-fixed") {
  Rng rng(17);
  Eigen::MatrixXd rows(14, 40);
  for (int i = 0; i < rows.rows(); ++i)
    for (int j = 0; j < rows.cols(); ++j) rows(i, j) = rng.uniform(-1.0, 1.0);
  const auto basis = latent::fit_pca(rows, 5);
  REQUIRE(basis.q() == 5);
  REQUIRE(basis.mean.size() == 40);

  const Eigen::MatrixXd gram = basis.modes.transpose() * basis.modes;
  CHECK((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
  for (int k = 1; k < 5; ++k) CHECK(basis.singular_values[k] <= basis.singular_values[k - 1]);
  for (int k = 0; k < 5; ++k) {
    Eigen::Index imax = 0;
    basis.modes.col(k).cwiseAbs().maxCoeff(&imax);
    CHECK(basis.modes(imax, k) > 0);
  }

  // projection through the basis is the best rank-5 reconstruction; check it
  // against a direct dense svd of the centered rows
  const Eigen::MatrixXd centered = rows.rowwise() - basis.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::MatrixXd recon_basis = centered * basis.modes * basis.modes.transpose();
  Eigen::MatrixXd trunc = Eigen::MatrixXd::Zero(centered.rows(), centered.cols());
  for (int k = 0; k < 5; ++k)
    trunc += svd.singularValues()[k] * svd.matrixU().col(k) * svd.matrixV().col(k).transpose();
  CHECK((recon_basis - trunc).cwiseAbs().maxCoeff() < 1e-10);

  // encoding is the coordinate functional of the affine basis
  const Eigen::VectorXd probe = basis.mean + 0.7 * basis.modes.col(2);
  const auto code = latent::encode_geometry(basis, probe);
  REQUIRE(code.size() == 5);
  CHECK(code[2] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(std::abs(code[0]) < 1e-12);
  CHECK_THROWS_AS(latent::encode_geometry(basis, Eigen::VectorXd::Zero(7)), config_error);
}

TEST_CASE("pca rejects more modes than samples can support") {
  Eigen::MatrixXd rows(3, 10);
  rows.setRandom();
  CHECK_THROWS_AS(latent::fit_pca(rows, 5), config_error);
}

TEST_CASE("conformal sample transport is flux-weighted and mean-centered") {
  const auto sp = geom::sample_shape_params(4);
  const auto inner = geom::generate_inner_boundary(sp, 256);
  const auto ref = small_ref();
  conformal::FitOptions opt;
  const auto dom = conformal::build_domain_map(inner, ref, opt);
  const auto fine = ref.refined(2);
  const auto mesh = fem::mesh_pushforward(dom.map, fine);
  const auto bc = fem::sample_neumann(4, 6, mesh.outer_perimeter);
  const auto sol = fem::assemble_and_solve(mesh, bc);

  const auto built = latent::build_sample_conformal(mesh, sol, bc, sp, dom.map, ref, 0.1);
  const auto& s = built.sample;
  CHECK(s.method == "conformal");
  CHECK(built.displacement.size() == 0);
  CHECK(s.geo.size() == 0);
  REQUIRE(s.u0.size() == ref.node_count());
  REQUIRE(s.bc0.size() == ref.n_theta);
  CHECK(std::abs(s.u0.mean()) < 1e-12);
  CHECK(s.defect >= 0.0);

  // boundary data carries the conformal flux factor |g'| at the ring nodes
  for (int j = 0; j < ref.n_theta; j += 5) {
    const Cplx zeta = std::polar(ref.r_outer, ref.theta(j));
    const Cplx q = dom.map.eval(zeta);
    const double sarc = latent::outer_arclength(mesh, {q.real(), q.imag()});
    const double expect = std::abs(dom.map.deriv(zeta)) * bc.eval(sarc);
    CHECK(s.bc0[j] == doctest::Approx(expect).epsilon(1e-9));
  }

  // the transported field stays close to harmonic: defect within a small
  // multiple of the per-sample truncation floor
  const double floor_defect =
      latent::harmonic_defect(latent::annulus_field_from_boundary(s.bc0, ref), ref);
  CHECK(s.defect < 5 * std::max(floor_defect, 1e-6));
}

TEST_CASE("sample files roundtrip with metadata") {
  const auto ref = small_ref();
  Rng rng(9);
  latent::LatentSample s;
  s.u0.resize(ref.node_count());
  for (int i = 0; i < s.u0.size(); ++i) s.u0[i] = rng.uniform(-1.0, 1.0);
  s.bc0.resize(ref.n_theta);
  for (int i = 0; i < s.bc0.size(); ++i) s.bc0[i] = rng.uniform(-1.0, 1.0);
  s.geo.resize(4);
  for (int i = 0; i < 4; ++i) s.geo[i] = rng.uniform(-2.0, 2.0);
  s.alpha_meta = geom::sample_shape_params(12);
  s.method = "lddmm";
  s.defect = 0.125;
  s.max_snap = 3e-4;

  const auto dir = temp_dir() / "sample_0000";
  std::filesystem::create_directories(dir);
  latent::write_sample(dir, s);
  const auto back = latent::read_sample(dir, ref);
  CHECK(back.method == s.method);
  CHECK(back.defect == s.defect);
  CHECK(back.max_snap == s.max_snap);
  CHECK(back.alpha_meta.a == s.alpha_meta.a);
  CHECK(back.alpha_meta.seed == s.alpha_meta.seed);
  CHECK((back.u0 - s.u0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.bc0 - s.bc0).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(back.geo.size() == 4);
  CHECK((back.geo - s.geo).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pca files roundtrip") {
  Rng rng(21);
  Eigen::MatrixXd rows(10, 18);
  for (int i = 0; i < rows.rows(); ++i)
    for (int j = 0; j < rows.cols(); ++j) rows(i, j) = rng.uniform(-1.0, 1.0);
  const auto basis = latent::fit_pca(rows, 3);
  const auto dir = temp_dir();
  latent::write_pca(dir / "pca.json", dir / "modes.csv", basis);
  const auto back = latent::read_pca(dir / "pca.json", dir / "modes.csv");
  CHECK(back.q() == basis.q());
  CHECK((back.mean - basis.mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.modes - basis.modes).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.singular_values - basis.singular_values).cwiseAbs().maxCoeff() == 0.0);
}
