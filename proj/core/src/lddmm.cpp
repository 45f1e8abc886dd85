#include "latmap/lddmm.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <json.hpp>

#include "latmap/errors.hpp"
#include "latmap/io_util.hpp"

namespace latmap::lddmm {

namespace {

Eigen::MatrixXd kernel(const Mat2& a, const Mat2& b, double sig2) {
  Eigen::MatrixXd d2 = -2.0 * a * b.transpose();
  d2.colwise() += a.rowwise().squaredNorm();
  d2.rowwise() += b.rowwise().squaredNorm().transpose();
  return (d2.array().max(0.0) * (-0.5 / sig2)).exp().matrix();
}

// One evaluation point of the landmark Hamiltonian system:
//   dq_i = sum_j k_ij p_j
//   dp_i = (1/sigma^2) sum_j k_ij (p_i . p_j) (q_i - q_j)
struct Stage {
  Mat2 q, p, dq, dp;
  Eigen::MatrixXd K, S;  // S = K .* (p p^T)
};

void rhs(Stage& s, double sig2) {
  s.K = kernel(s.q, s.q, sig2);
  s.dq.noalias() = s.K * s.p;
  s.S = s.K.cwiseProduct(s.p * s.p.transpose());
  const Eigen::VectorXd srow = s.S.rowwise().sum();
  s.dp = (srow.asDiagonal() * s.q - s.S * s.q) / sig2;
}

// Accumulates into (qb, pb) the vector-Jacobian product of the rhs at stage s
// applied to cotangents (Qb on dq, Pb on dp).
void rhs_vjp(const Stage& s, double sig2, const Mat2& Qb, const Mat2& Pb, Mat2& qb, Mat2& pb) {
  const Mat2& q = s.q;
  const Mat2& p = s.p;

  pb.noalias() += s.K * Qb;
  Eigen::MatrixXd w = s.K.cwiseProduct(Qb * p.transpose() + p * Qb.transpose());
  Eigen::VectorXd row = w.rowwise().sum();
  qb.noalias() -= (row.asDiagonal() * q - w * q) / sig2;

  // beta_ij = (Pb_j - Pb_i) . (q_i - q_j)
  const Eigen::VectorXd d = (Pb.array() * q.array()).rowwise().sum();
  Eigen::MatrixXd beta = q * Pb.transpose() + Pb * q.transpose();
  beta.rowwise() -= d.transpose();
  beta.colwise() -= d;

  pb.noalias() -= s.K.cwiseProduct(beta) * p / sig2;
  w = s.S.cwiseProduct(beta) / (sig2 * sig2);
  row = w.rowwise().sum();
  qb.noalias() += row.asDiagonal() * q - w * q;
  row = s.S.rowwise().sum();
  qb.noalias() += (row.asDiagonal() * Pb - s.S * Pb) / sig2;
}

struct Guard {
  double cx = 0.0, cy = 0.0, limit = 0.0;

  void absorb(const Mat2& pts) {
    if (pts.rows() == 0) return;
    const double cx0 = pts.col(0).mean(), cy0 = pts.col(1).mean();
    if (limit == 0.0) {
      cx = cx0;
      cy = cy0;
    }
    const double r = ((pts.col(0).array() - cx).square() + (pts.col(1).array() - cy).square())
                         .sqrt()
                         .maxCoeff();
    limit = std::max(limit, 10.0 * std::max(1.0, r));
  }
  void check(const Mat2& pts) const {
    if (pts.rows() == 0) return;
    const double r = ((pts.col(0).array() - cx).square() + (pts.col(1).array() - cy).square())
                         .sqrt()
                         .maxCoeff();
    if (!(r <= limit)) throw numeric_error("lddmm: trajectory left the safety box");
  }
};

// RK4 step of (q, p) and optionally passive points x advected by the field.
void rk4_step(Mat2& q, Mat2& p, Mat2* x, double h, double sig2,
              std::array<Stage, 4>* rec) {
  std::array<Stage, 4> local;
  std::array<Stage, 4>& st = rec ? *rec : local;
  std::array<Mat2, 4> xdot;
  const double c[4] = {0.0, 0.5 * h, 0.5 * h, h};

  for (int s = 0; s < 4; ++s) {
    st[s].q = q;
    st[s].p = p;
    if (s > 0) {
      st[s].q += c[s] * st[s - 1].dq;
      st[s].p += c[s] * st[s - 1].dp;
    }
    rhs(st[s], sig2);
    if (x) {
      Mat2 xs = *x;
      if (s > 0) xs += c[s] * xdot[s - 1];
      xdot[s].noalias() = kernel(xs, st[s].q, sig2) * st[s].p;
    }
  }
  q += (h / 6.0) * (st[0].dq + 2.0 * st[1].dq + 2.0 * st[2].dq + st[3].dq);
  p += (h / 6.0) * (st[0].dp + 2.0 * st[1].dp + 2.0 * st[2].dp + st[3].dp);
  if (x) *x += (h / 6.0) * (xdot[0] + 2.0 * xdot[1] + 2.0 * xdot[2] + xdot[3]);
}

void rk4_step_vjp(const std::array<Stage, 4>& st, double h, double sig2, Mat2& qb, Mat2& pb) {
  const auto n = qb.rows();
  Mat2 k4q = (h / 6.0) * qb, k4p = (h / 6.0) * pb;
  Mat2 k3q = (h / 3.0) * qb, k3p = (h / 3.0) * pb;
  Mat2 k2q = (h / 3.0) * qb, k2p = (h / 3.0) * pb;
  Mat2 k1q = (h / 6.0) * qb, k1p = (h / 6.0) * pb;
  Mat2 aq = Mat2::Zero(n, 2), ap = Mat2::Zero(n, 2);

  rhs_vjp(st[3], sig2, k4q, k4p, aq, ap);
  qb += aq;
  pb += ap;
  k3q += h * aq;
  k3p += h * ap;
  aq.setZero();
  ap.setZero();
  rhs_vjp(st[2], sig2, k3q, k3p, aq, ap);
  qb += aq;
  pb += ap;
  k2q += (0.5 * h) * aq;
  k2p += (0.5 * h) * ap;
  aq.setZero();
  ap.setZero();
  rhs_vjp(st[1], sig2, k2q, k2p, aq, ap);
  qb += aq;
  pb += ap;
  k1q += (0.5 * h) * aq;
  k1p += (0.5 * h) * ap;
  aq.setZero();
  ap.setZero();
  rhs_vjp(st[0], sig2, k1q, k1p, aq, ap);
  qb += aq;
  pb += ap;
}

struct TrajRecord {
  std::vector<std::array<Stage, 4>> steps;
};

// Integrates the landmark system; returns the endpoint and the knot kinetic
// energies p^T K p for knots 0..T-1. rec, when given, stores every RK4 stage
// for the adjoint sweep.
void integrate_landmarks(const Mat2& q0, const Mat2& p0, const KernelConfig& cfg, Mat2& q, Mat2& p,
                         std::vector<double>* kinetic, TrajRecord* rec,
                         std::vector<Mat2>* knots_q = nullptr,
                         std::vector<Mat2>* knots_p = nullptr) {
  const double sig2 = cfg.sigma * cfg.sigma;
  const int steps = cfg.steps();
  const double h = 1.0 / steps;
  q = q0;
  p = p0;
  Guard guard;
  guard.absorb(q0);
  if (kinetic) kinetic->clear();
  if (rec) rec->steps.resize(steps);
  for (int s = 0; s < steps; ++s) {
    if (s % cfg.substeps == 0) {
      if (knots_q) knots_q->push_back(q);
      if (knots_p) knots_p->push_back(p);
    }
    std::array<Stage, 4> local;
    std::array<Stage, 4>& st = rec ? rec->steps[s] : local;
    rk4_step(q, p, nullptr, h, sig2, &st);
    if (kinetic && s % cfg.substeps == 0)
      kinetic->push_back((st[0].p.array() * st[0].dq.array()).sum());
    guard.check(q);
  }
  if (knots_q) knots_q->push_back(q);
  if (knots_p) knots_p->push_back(p);
}

double objective(const Mat2& q1, const Mat2& target, const std::vector<double>& kinetic,
                 const KernelConfig& cfg, double* match_error) {
  const double dt = 1.0 / cfg.timesteps;
  double e = 0.0;
  for (double k : kinetic) e += dt * k;
  const Eigen::VectorXd dist = (q1 - target).rowwise().norm();
  e += cfg.lambda_match * dist.squaredNorm();
  if (match_error) *match_error = dist.mean();
  return e;
}

Mat2 gradient_adjoint(const Mat2& q0, const Mat2& p0, const Mat2& target,
                      const KernelConfig& cfg) {
  const double sig2 = cfg.sigma * cfg.sigma;
  const double h = 1.0 / cfg.steps();
  const double dt = 1.0 / cfg.timesteps;
  Mat2 q, p;
  TrajRecord rec;
  integrate_landmarks(q0, p0, cfg, q, p, nullptr, &rec);

  Mat2 qb = 2.0 * cfg.lambda_match * (q - target);
  Mat2 pb = Mat2::Zero(q.rows(), 2);
  for (int s = cfg.steps() - 1; s >= 0; --s) {
    rk4_step_vjp(rec.steps[s], h, sig2, qb, pb);
    if (s % cfg.substeps == 0) {
      // kinetic term dt * p^T K(q) p evaluated at this knot state
      pb += 2.0 * dt * rec.steps[s][0].dq;
      qb -= 2.0 * dt * rec.steps[s][0].dp;
    }
  }
  return pb;
}

Mat2 gradient_fd(const Mat2& q0, const Mat2& p0, const Mat2& target, const KernelConfig& cfg) {
  Mat2 g(p0.rows(), 2);
  for (int i = 0; i < p0.rows(); ++i)
    for (int d = 0; d < 2; ++d) {
      const double step = 1e-6 * (1.0 + std::abs(p0(i, d)));
      Mat2 pp = p0, pm = p0;
      pp(i, d) += step;
      pm(i, d) -= step;
      g(i, d) = (flow_energy(q0, pp, target, cfg) - flow_energy(q0, pm, target, cfg)) /
                (2.0 * step);
    }
  return g;
}

}  // namespace

void KernelConfig::validate() const {
  if (!(sigma > 0) || timesteps < 5 || substeps < 1 || !(lambda_match > 0) || max_iters < 1 ||
      !(step_size > 0) || !(grad_tol > 0))
    throw config_error("lddmm: invalid kernel config (need sigma>0, timesteps>=5, substeps>=1, "
                       "lambda>0, max_iters>=1, step_size>0, grad_tol>0)");
}

DiffeoFlow make_flow(Mat2 q0, Mat2 p0, const KernelConfig& cfg) {
  cfg.validate();
  if (q0.rows() != p0.rows() || q0.rows() == 0)
    throw config_error("make_flow: positions and momenta must be nonempty with equal counts");
  DiffeoFlow f;
  f.q0 = std::move(q0);
  f.p0 = std::move(p0);
  f.kernel = cfg;
  Mat2 q, p;
  integrate_landmarks(f.q0, f.p0, cfg, q, p, nullptr, nullptr, &f.knots_q, &f.knots_p);
  return f;
}

Mat2 flow_forward(const DiffeoFlow& flow, const Mat2& pts) {
  const double sig2 = flow.kernel.sigma * flow.kernel.sigma;
  const int steps = flow.kernel.steps();
  const double h = 1.0 / steps;
  Mat2 q = flow.q0, p = flow.p0, x = pts;
  Guard guard;
  guard.absorb(q);
  guard.absorb(pts);
  for (int s = 0; s < steps; ++s) {
    rk4_step(q, p, &x, h, sig2, nullptr);
    guard.check(q);
    guard.check(x);
  }
  return x;
}

Mat2 flow_inverse(const DiffeoFlow& flow, const Mat2& pts) {
  if (flow.knots_q.empty()) throw config_error("flow_inverse: flow has no cached trajectory");
  const double sig2 = flow.kernel.sigma * flow.kernel.sigma;
  const int steps = flow.kernel.steps();
  const double h = -1.0 / steps;
  Mat2 q = flow.knots_q.back(), p = flow.knots_p.back(), x = pts;
  Guard guard;
  guard.absorb(q);
  guard.absorb(pts);
  for (int s = 0; s < steps; ++s) {
    rk4_step(q, p, &x, h, sig2, nullptr);
    guard.check(q);
    guard.check(x);
  }
  return x;
}

double flow_energy(const Mat2& q0, const Mat2& p0, const Mat2& target, const KernelConfig& cfg,
                   double* match_error) {
  if (q0.rows() != target.rows())
    throw config_error("flow_energy: source and target landmark counts differ");
  Mat2 q, p;
  std::vector<double> kin;
  integrate_landmarks(q0, p0, cfg, q, p, &kin, nullptr);
  return objective(q, target, kin, cfg, match_error);
}

Mat2 energy_gradient(const Mat2& q0, const Mat2& p0, const Mat2& target, const KernelConfig& cfg) {
  return cfg.use_adjoint ? gradient_adjoint(q0, p0, target, cfg)
                         : gradient_fd(q0, p0, target, cfg);
}

RegistrationResult register_landmarks(const Mat2& source, const Mat2& target,
                                      const KernelConfig& cfg) {
  cfg.validate();
  if (source.rows() != target.rows() || source.rows() == 0)
    throw config_error("register_landmarks: need equal nonempty landmark sets");

  RegistrationResult res;
  Mat2 p = Mat2::Zero(source.rows(), 2);
  double energy = flow_energy(source, p, target, cfg);
  res.energy_trace.push_back(energy);
  Mat2 g = energy_gradient(source, p, target, cfg);
  double alpha = cfg.step_size;
  int plateau = 0;

  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    if (g.cwiseAbs().maxCoeff() <= cfg.grad_tol) {
      res.converged = true;
      break;
    }
    const double g2 = g.squaredNorm();
    bool accepted = false;
    Mat2 p_try;
    double e_try = 0.0;
    for (int ls = 0; ls < 45; ++ls) {
      p_try = p - alpha * g;
      bool finite = true;
      try {
        e_try = flow_energy(source, p_try, target, cfg);
      } catch (const numeric_error&) {
        finite = false;  // trial flow left the safety box; shrink and retry
      }
      if (finite && e_try <= energy - 1e-4 * alpha * g2) {
        accepted = true;
        if (ls == 0) alpha = std::min(alpha * 2.0, 1e4);
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // step collapsed; gradient noise floor reached
    plateau = (energy - e_try <= 1e-12 * std::max(1.0, std::abs(energy))) ? plateau + 1 : 0;
    p = p_try;
    energy = e_try;
    res.energy_trace.push_back(energy);
    if (plateau >= 3) {
      res.converged = true;
      break;
    }
    g = energy_gradient(source, p, target, cfg);
  }

  res.iterations = it;
  res.flow = make_flow(source, p, cfg);
  res.energy = flow_energy(source, p, target, cfg, &res.match_error);
  return res;
}

RegistrationResult register_curves(const geom::BoundaryCurve& src_inner,
                                   const geom::BoundaryCurve& src_outer,
                                   const geom::BoundaryCurve& dst_inner,
                                   const geom::BoundaryCurve& dst_outer,
                                   const KernelConfig& cfg, int landmarks_per_curve) {
  if (landmarks_per_curve < 4) throw config_error("register_curves: need at least 4 landmarks");
  const auto stack = [&](const geom::BoundaryCurve& in, const geom::BoundaryCurve& out) {
    Mat2 m(2 * landmarks_per_curve, 2);
    m.topRows(landmarks_per_curve) = curve_to_mat(geom::resample_closed(in, landmarks_per_curve));
    m.bottomRows(landmarks_per_curve) =
        curve_to_mat(geom::resample_closed(out, landmarks_per_curve));
    return m;
  };
  return register_landmarks(stack(src_inner, src_outer), stack(dst_inner, dst_outer), cfg);
}

double jacobian_min_det(const DiffeoFlow& flow, const Mat2& pts, double fd_step) {
  const auto n = pts.rows();
  Mat2 probes(4 * n, 2);
  probes.middleRows(0, n) = pts;
  probes.middleRows(n, n) = pts;
  probes.middleRows(2 * n, n) = pts;
  probes.middleRows(3 * n, n) = pts;
  probes.col(0).segment(0, n).array() += fd_step;
  probes.col(0).segment(n, n).array() -= fd_step;
  probes.col(1).segment(2 * n, n).array() += fd_step;
  probes.col(1).segment(3 * n, n).array() -= fd_step;
  const Mat2 mapped = flow_forward(flow, probes);
  double min_det = std::numeric_limits<double>::max();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double j11 = (mapped(i, 0) - mapped(n + i, 0)) / (2.0 * fd_step);
    const double j21 = (mapped(i, 1) - mapped(n + i, 1)) / (2.0 * fd_step);
    const double j12 = (mapped(2 * n + i, 0) - mapped(3 * n + i, 0)) / (2.0 * fd_step);
    const double j22 = (mapped(2 * n + i, 1) - mapped(3 * n + i, 1)) / (2.0 * fd_step);
    min_det = std::min(min_det, j11 * j22 - j12 * j21);
  }
  return min_det;
}

Mat2 curve_to_mat(const geom::BoundaryCurve& c) {
  Mat2 m(c.size(), 2);
  for (int i = 0; i < c.size(); ++i) {
    m(i, 0) = c.points[i].real();
    m(i, 1) = c.points[i].imag();
  }
  return m;
}

void write_flow_json(const std::filesystem::path& path, const RegistrationResult& r) {
  nlohmann::json j;
  j["config"] = {{"sigma", r.flow.kernel.sigma},
                 {"timesteps", r.flow.kernel.timesteps},
                 {"substeps", r.flow.kernel.substeps},
                 {"lambda_match", r.flow.kernel.lambda_match},
                 {"max_iters", r.flow.kernel.max_iters},
                 {"step_size", r.flow.kernel.step_size},
                 {"grad_tol", r.flow.kernel.grad_tol},
                 {"use_adjoint", r.flow.kernel.use_adjoint}};
  auto dump_mat = [&](const Mat2& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) arr.push_back({m(i, 0), m(i, 1)});
    return arr;
  };
  j["q0"] = dump_mat(r.flow.q0);
  j["p0"] = dump_mat(r.flow.p0);
  j["energy"] = r.energy;
  j["match_error"] = r.match_error;
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["energy_trace"] = r.energy_trace;
  io::write_json(path, j);
}

RegistrationResult read_flow_json(const std::filesystem::path& path) {
  const nlohmann::json j = io::read_json(path);
  KernelConfig cfg;
  const auto& c = j.at("config");
  cfg.sigma = c.at("sigma");
  cfg.timesteps = c.at("timesteps");
  cfg.substeps = c.at("substeps");
  cfg.lambda_match = c.at("lambda_match");
  cfg.max_iters = c.at("max_iters");
  cfg.step_size = c.at("step_size");
  cfg.grad_tol = c.at("grad_tol");
  cfg.use_adjoint = c.at("use_adjoint");
  auto load_mat = [&](const nlohmann::json& arr) {
    Mat2 m(arr.size(), 2);
    for (size_t i = 0; i < arr.size(); ++i) {
      m(static_cast<Eigen::Index>(i), 0) = arr[i][0];
      m(static_cast<Eigen::Index>(i), 1) = arr[i][1];
    }
    return m;
  };
  RegistrationResult r;
  r.flow = make_flow(load_mat(j.at("q0")), load_mat(j.at("p0")), cfg);
  r.energy = j.at("energy");
  r.match_error = j.at("match_error");
  r.converged = j.at("converged");
  r.iterations = j.at("iterations");
  r.energy_trace = j.at("energy_trace").get<std::vector<double>>();
  return r;
}

}  // namespace latmap::lddmm
