#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "latmap/errors.hpp"
#include "latmap/latent.hpp"
#include "latmap/nn.hpp"
#include "latmap/rng.hpp"

using namespace latmap;

namespace {
conformal::ReferenceAnnulus tiny_ref() {
  conformal::ReferenceAnnulus ref;
  ref.n_rho = 6;
  ref.n_theta = 12;
  return ref;
}

nn::TrainConfig tiny_cfg() {
  nn::TrainConfig cfg;
  cfg.n_basis = 4;
  cfg.hidden_branch = {8, 8};
  cfg.hidden_trunk = {8, 8};
  cfg.batch_size = 4;
  cfg.val_every = 10;
  cfg.seed = 3;
  return cfg;
}

std::vector<latent::LatentSample> synthetic(const conformal::ReferenceAnnulus& ref, int n,
                                            int geo_dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<latent::LatentSample> out(n);
  for (auto& s : out) {
    s.bc0.resize(ref.n_theta);
    for (int i = 0; i < s.bc0.size(); ++i) s.bc0[i] = rng.uniform(-1.0, 1.0);
    s.u0.resize(ref.node_count());
    // a smooth deterministic function of the boundary data
    for (int i = 0; i < ref.n_rho; ++i)
      for (int j = 0; j < ref.n_theta; ++j)
        s.u0[ref.node_index(i, j)] = std::tanh(s.bc0[j]) * ref.rho(i) / ref.r_outer;
    if (geo_dim > 0) {
      s.geo.resize(geo_dim);
      for (int i = 0; i < geo_dim; ++i) s.geo[i] = rng.uniform(-1.0, 1.0);
    }
  }
  return out;
}

std::filesystem::path temp_dir(const char* leaf) {
  auto p = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("tape gradients match finite differences op by op") {
  Rng rng(1);
  Eigen::MatrixXd a(3, 4), b(4, 2), r(1, 2), target(3, 2);
  for (auto* m : {&a, &target}) {
    for (int i = 0; i < m->rows(); ++i)
      for (int j = 0; j < m->cols(); ++j) (*m)(i, j) = rng.uniform(-1.0, 1.0);
  }
  for (int i = 0; i < b.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) b(i, j) = rng.uniform(-1.0, 1.0);
  for (int j = 0; j < r.cols(); ++j) r(0, j) = rng.uniform(-1.0, 1.0);

  const auto loss_value = [&](const Eigen::MatrixXd& aa) {
    nn::Tape t;
    const int ia = t.leaf(aa);
    const int ib = t.leaf(b);
    const int ir = t.leaf(r);
    const int y = t.tanh_act(t.add_rowvec(t.matmul(ia, ib), ir));
    return t.value(t.mse(y, target))(0, 0);
  };

  nn::Tape t;
  const int ia = t.leaf(a);
  const int ib = t.leaf(b);
  const int ir = t.leaf(r);
  const int y = t.tanh_act(t.add_rowvec(t.matmul(ia, ib), ir));
  const int loss = t.mse(y, target);
  t.backward(loss);

  const double h = 1e-6;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) {
      auto ap = a, am = a;
      ap(i, j) += h;
      am(i, j) -= h;
      const double fd = (loss_value(ap) - loss_value(am)) / (2 * h);
      CHECK(t.grad(ia)(i, j) == doctest::Approx(fd).epsilon(1e-5));
    }
  CHECK(t.grad(ib).rows() == 4);
  CHECK(t.grad(ir).cols() == 2);
}

TEST_CASE("relu, hadamard, and scalar affine backpropagate correctly") {
  Eigen::MatrixXd a(2, 3), b(2, 3), target(2, 3);
  a << 0.5, -1.2, 0.3, 2.0, -0.1, 0.7;
  b << 1.0, 0.4, -0.6, -1.5, 0.8, 0.2;
  target.setZero();
  Eigen::MatrixXd s(1, 1), c(1, 1);
  s << 1.3;
  c << -0.2;

  const auto loss_value = [&](const Eigen::MatrixXd& aa, const Eigen::MatrixXd& ss) {
    nn::Tape t;
    const int node = t.affine_scalar(t.hadamard(t.relu_act(t.leaf(aa)), t.leaf(b)), t.leaf(ss),
                                     t.leaf(c));
    return t.value(t.mse(node, target))(0, 0);
  };

  nn::Tape t;
  const int ia = t.leaf(a);
  const int is = t.leaf(s);
  const int node = t.affine_scalar(t.hadamard(t.relu_act(ia), t.leaf(b)), is, t.leaf(c));
  t.backward(t.mse(node, target));

  const double h = 1e-6;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      auto ap = a, am = a;
      ap(i, j) += h;
      am(i, j) -= h;
      const double fd = (loss_value(ap, s) - loss_value(am, s)) / (2 * h);
      CHECK(t.grad(ia)(i, j) == doctest::Approx(fd).epsilon(1e-5));
    }
  auto sp = s, sm = s;
  sp(0, 0) += h;
  sm(0, 0) -= h;
  CHECK(t.grad(is)(0, 0) ==
        doctest::Approx((loss_value(a, sp) - loss_value(a, sm)) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("tape misuse is rejected") {
  nn::Tape t;
  const int a = t.leaf(Eigen::MatrixXd::Ones(2, 2));
  const int loss = t.mse(a, Eigen::MatrixXd::Zero(2, 2));
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), config_error);

  nn::Tape t2;
  const int b = t2.leaf(Eigen::MatrixXd::Ones(2, 2));
  const int c = t2.constant(Eigen::MatrixXd::Ones(2, 2));
  const int l2 = t2.mse(b, Eigen::MatrixXd::Zero(2, 2));
  t2.backward(l2);
  CHECK_THROWS_AS(t2.grad(c), config_error);  // constants collect no gradient
  CHECK_THROWS_AS(t2.backward(b), config_error);  // fresh-tape rule aside, non-scalar start

  nn::Tape t3;
  CHECK_THROWS_AS(t3.matmul(t3.leaf(Eigen::MatrixXd::Ones(2, 3)),
                            t3.leaf(Eigen::MatrixXd::Ones(2, 3))),
                  config_error);
}

TEST_CASE("model gradients agree with central differences everywhere") {
  const auto ref = tiny_ref();
  auto cfg = tiny_cfg();
  const int geo_dim = 3;
  auto model = nn::make_model(ref, geo_dim, cfg);
  const auto samples = synthetic(ref, 5, geo_dim, 77);

  Eigen::MatrixXd bc0(5, ref.n_theta), geo(5, geo_dim), targets(5, ref.node_count());
  for (int s = 0; s < 5; ++s) {
    bc0.row(s) = samples[s].bc0.transpose();
    geo.row(s) = samples[s].geo.transpose();
    targets.row(s) = samples[s].u0.transpose();
  }
  nn::set_standardization(model, bc0, geo);

  std::vector<Eigen::MatrixXd> grads;
  nn::loss_and_gradients(model, bc0, geo, targets, &grads);
  const auto params = nn::model_params(model);
  REQUIRE(grads.size() == params.size());

  double worst = 0.0;
  const double h = 1e-5;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& w = *params[pi];
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) {
        const double keep = w(i, j);
        w(i, j) = keep + h;
        const double lp = nn::loss_and_gradients(model, bc0, geo, targets, nullptr);
        w(i, j) = keep - h;
        const double lm = nn::loss_and_gradients(model, bc0, geo, targets, nullptr);
        w(i, j) = keep;
        const double fd = (lp - lm) / (2 * h);
        const double rel =
            std::abs(grads[pi](i, j) - fd) / std::max(std::abs(fd), 1e-6);
        worst = std::max(worst, rel);
      }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("one sample can be memorized almost exactly") {
  const auto ref = tiny_ref();
  nn::TrainConfig cfg;
  cfg.n_basis = 16;
  cfg.hidden_branch = {32, 32};
  cfg.hidden_trunk = {128, 128};
  cfg.batch_size = 4;
  cfg.val_every = 10;
  cfg.seed = 3;

  // memorize a smooth harmonic field rather than raw noise, so the smooth
  // trunk basis is actually able to drive the residual to zero
  Rng rng(5);
  latent::LatentSample s;
  s.bc0.resize(ref.n_theta);
  for (int i = 0; i < s.bc0.size(); ++i) s.bc0[i] = rng.uniform(-1.0, 1.0);
  s.u0 = latent::annulus_field_from_boundary(s.bc0, ref);
  s.u0.array() -= s.u0.mean();
  const std::vector<latent::LatentSample> samples = {s};

  auto model = nn::make_model(ref, 0, cfg);
  auto adam = nn::make_adam_state(model);
  cfg.learning_rate = 1e-2;
  cfg.epochs = 8000;
  const auto result = nn::train(model, adam, samples, cfg, 0);
  REQUIRE(!result.trace.empty());
  CHECK(result.epochs_done == 8000);
  CHECK(result.trace.front().train_mse > 20 * result.trace.back().train_mse);

  const auto pred = nn::predict(model, s.bc0, Eigen::VectorXd());
  CHECK(nn::relative_l2(pred, s.u0) < 1e-3);
}

TEST_CASE("training is bitwise deterministic in the seed") {
  const auto ref = tiny_ref();
  auto cfg = tiny_cfg();
  cfg.epochs = 25;
  const auto samples = synthetic(ref, 6, 2, 13);

  const auto run = [&]() {
    auto model = nn::make_model(ref, 2, cfg);
    auto adam = nn::make_adam_state(model);
    nn::train(model, adam, samples, cfg, 0);
    return model;
  };
  auto m1 = run();
  auto m2 = run();
  const auto p1 = nn::model_params(m1);
  const auto p2 = nn::model_params(m2);
  for (size_t i = 0; i < p1.size(); ++i)
    CHECK((*p1[i] - *p2[i]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a checkpointed run resumes to the exact same weights") {
  const auto ref = tiny_ref();
  auto cfg = tiny_cfg();
  const auto samples = synthetic(ref, 6, 0, 29);
  const auto dir = temp_dir("latmap_test_nn_ckpt");

  // straight run to 20 epochs
  cfg.epochs = 20;
  auto full = nn::make_model(ref, 0, cfg);
  auto full_adam = nn::make_adam_state(full);
  nn::train(full, full_adam, samples, cfg, 0);

  // same run interrupted after 10 epochs and pushed through a checkpoint
  auto part = nn::make_model(ref, 0, cfg);
  auto part_adam = nn::make_adam_state(part);
  nn::train(part, part_adam, samples, cfg, 0, 10);
  nn::write_checkpoint(dir, part, part_adam, cfg, 10);

  auto loaded = nn::read_checkpoint(dir);
  CHECK(loaded.epochs_done == 10);
  nn::train(loaded.model, loaded.adam, samples, loaded.cfg, loaded.epochs_done);

  const auto pf = nn::model_params(full);
  const auto pl = nn::model_params(loaded.model);
  REQUIRE(pf.size() == pl.size());
  for (size_t i = 0; i < pf.size(); ++i)
    CHECK((*pf[i] - *pl[i]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loaded.adam.step == full_adam.step);
  for (size_t i = 0; i < full_adam.m.size(); ++i) {
    CHECK((loaded.adam.m[i] - full_adam.m[i]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.adam.v[i] - full_adam.v[i]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("holdout takes the documented tail") {
  CHECK(nn::holdout_indices(3).empty());
  const auto h4 = nn::holdout_indices(4);
  REQUIRE(h4.size() == 1);
  CHECK(h4[0] == 3);
  const auto h40 = nn::holdout_indices(40);
  REQUIRE(h40.size() == 4);
  CHECK(h40.front() == 36);
  CHECK(h40.back() == 39);
  CHECK(nn::holdout_indices(200).size() == 8);
}

TEST_CASE("trace files roundtrip and carry validation milestones") {
  const auto ref = tiny_ref();
  auto cfg = tiny_cfg();
  cfg.epochs = 20;
  cfg.val_every = 5;
  const auto samples = synthetic(ref, 8, 0, 31);
  auto model = nn::make_model(ref, 0, cfg);
  auto adam = nn::make_adam_state(model);
  const auto result = nn::train(model, adam, samples, cfg, 0);
  REQUIRE(result.trace.size() == 20);
  bool any_val = false;
  for (const auto& row : result.trace) any_val = any_val || std::isfinite(row.val_rel_l2);
  CHECK(any_val);

  const auto path = temp_dir("latmap_test_nn_trace") / "trace.csv";
  nn::write_trace_csv(path, result.trace, false);
  const auto back = nn::read_trace_csv(path);
  REQUIRE(back.size() == result.trace.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].epoch == result.trace[i].epoch);
    CHECK(back[i].train_mse == result.trace[i].train_mse);
  }
}

TEST_CASE("shape and configuration errors are typed") {
  const auto ref = tiny_ref();
  auto cfg = tiny_cfg();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = tiny_cfg();
  cfg.activation = "sigmoid";
  CHECK_THROWS_AS(nn::make_model(ref, 0, cfg), config_error);
  cfg = tiny_cfg();

  auto model = nn::make_model(ref, 0, cfg);
  auto adam = nn::make_adam_state(model);
  CHECK_THROWS_AS(nn::train(model, adam, {}, cfg, 0), config_error);
  CHECK_THROWS_AS(nn::predict(model, Eigen::VectorXd::Zero(ref.n_theta), Eigen::VectorXd()),
                  config_error);  // no statistics yet

  CHECK_THROWS_AS(nn::relative_l2(Eigen::VectorXd::Ones(3), Eigen::VectorXd::Zero(3)),
                  numeric_error);
  CHECK(nn::relative_l2(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)) ==
        doctest::Approx(1.0));
}
