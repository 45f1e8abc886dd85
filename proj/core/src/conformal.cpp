#include "latmap/conformal.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <json.hpp>

#include "latmap/errors.hpp"
#include "latmap/io_util.hpp"

namespace latmap::conformal {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;

// Local cubic Lagrange interpolation of a closed curve sampled at strictly
// increasing parameter values covering one period.
struct PeriodicCurveInterp {
  const std::vector<double>& phi;
  const std::vector<Cplx>& pts;
  int m;

  Cplx eval(double x) const {
    double xx = std::fmod(x - phi[0], kTwoPi);
    if (xx < 0) xx += kTwoPi;
    xx += phi[0];
    int lo = static_cast<int>(std::upper_bound(phi.begin(), phi.end(), xx) - phi.begin()) - 1;
    if (lo < 0) lo = m - 1;
    const double base = phi[((lo - 1) % m + m) % m];
    double xk[4];
    Cplx yk[4];
    for (int t = 0; t < 4; ++t) {
      const int idx = ((lo - 1 + t) % m + m) % m;
      double off = std::fmod(phi[idx] - base, kTwoPi);
      if (off < 0) off += kTwoPi;
      xk[t] = base + off;
      yk[t] = pts[idx];
    }
    double offq = std::fmod(xx - xk[0], kTwoPi);
    if (offq < 0) offq += kTwoPi;
    const double xq = xk[0] + offq;
    Cplx s(0, 0);
    for (int t = 0; t < 4; ++t) {
      double w = 1.0;
      for (int u = 0; u < 4; ++u)
        if (u != t) w *= (xq - xk[u]) / (xk[t] - xk[u]);
      s += w * yk[t];
    }
    return s;
  }
};
}  // namespace

double ReferenceAnnulus::theta(int j) const { return kTwoPi * j / n_theta; }

Cplx ReferenceAnnulus::node(int i, int j) const { return std::polar(rho(i), theta(j)); }

ReferenceAnnulus ReferenceAnnulus::refined(int factor) const {
  ReferenceAnnulus fine = *this;
  fine.n_rho = factor * (n_rho - 1) + 1;
  fine.n_theta = factor * n_theta;
  return fine;
}

Cplx ConformalMap::eval(Cplx z) const {
  // Horner in 1/z for the tail.
  const Cplx w = 1.0 / z;
  Cplx tail(0.0, 0.0);
  for (int k = static_cast<int>(cneg.size()) - 1; k >= 0; --k) tail = (tail + cneg[k]) * w;
  return c1 * z + c0 + tail;
}

Cplx ConformalMap::deriv(Cplx z) const {
  const Cplx w = 1.0 / z;
  Cplx tail(0.0, 0.0);
  // d/dz z^{-k} = -k z^{-k-1}; Horner over k = K..1 of -k*cneg[k-1]*w^{k+1}.
  for (int k = static_cast<int>(cneg.size()); k >= 1; --k)
    tail = (tail - static_cast<double>(k) * cneg[k - 1]) * w;
  return c1 + tail * w;
}

ConformalMap fit_exterior_map(const BoundaryCurve& inner, const FitOptions& opt) {
  const int m = inner.size();
  const int k_modes = opt.modes;
  if (k_modes < 16) throw config_error("fit_exterior_map: need at least 16 modes");
  if (m < 2 * (k_modes + 2))
    throw config_error("fit_exterior_map: curve must oversample the modes at least 2x");
  if (geom::curve_metrics(inner.points).signed_area <= 0)
    throw numeric_error("fit_exterior_map: curve must be counterclockwise");

  Eigen::VectorXcd target(m);
  for (int i = 0; i < m; ++i) target(i) = inner.points[i];
  const double scale = target.cwiseAbs().maxCoeff();

  // Phase 1: recover the boundary correspondence in the frequency domain.
  // At the true exterior parameterization the curve's spectrum lives on
  // modes {1, 0, -1, -2, ...}; content on modes k >= 2 equals, to first
  // order, i*c1*eps_{k-1} for a parameter warp eps(phi). Reading the warp
  // off the DFT and re-warping converges fast where foot-point sliding
  // crawls along nearly flat valleys.
  std::vector<double> phi(m);
  for (int i = 0; i < m; ++i) phi[i] = kTwoPi * i / m;
  const std::vector<Cplx>& pts = inner.points;
  const int kmax = std::min(k_modes, m / 2 - 2);

  for (int it = 0; it < opt.max_iters; ++it) {
    const PeriodicCurveInterp interp{phi, pts, m};
    std::vector<Cplx> q(m);
    for (int j = 0; j < m; ++j) q[j] = interp.eval(kTwoPi * j / m);
    std::vector<Cplx> f(kmax + 1, Cplx(0, 0));
    for (int k = 1; k <= kmax; ++k) {
      Cplx acc(0, 0);
      for (int j = 0; j < m; ++j) acc += q[j] * std::polar(1.0, -kTwoPi * k * j / m);
      f[k] = acc / double(m);
    }
    if (!(std::abs(f[1]) > 1e-9 * scale))
      throw numeric_error("fit_exterior_map: degenerate leading mode");
    double defect = 0.0;
    for (int k = 2; k <= kmax; ++k) defect = std::max(defect, std::abs(f[k]));
    if (defect < 1e-13 * std::abs(f[1])) break;

    std::vector<double> corr(m);
    double cmax = 0.0;
    for (int i = 0; i < m; ++i) {
      Cplx acc(0, 0);
      for (int n = 1; n < kmax; ++n) acc += f[n + 1] / (Cplx(0, 1) * f[1]) * std::polar(1.0, n * phi[i]);
      corr[i] = 2.0 * acc.real();
      cmax = std::max(cmax, std::abs(corr[i]));
    }
    // damped update keeping the phases strictly increasing
    double alpha = 1.0;
    for (int tries = 0; tries < 6; ++tries) {
      bool ok = true;
      for (int i = 0; i < m && ok; ++i) {
        const int j = (i + 1) % m;
        double gap = (phi[j] + alpha * corr[j]) - (phi[i] + alpha * corr[i]);
        if (i == m - 1) gap += kTwoPi;
        ok = gap > 1e-9;
      }
      if (ok) break;
      alpha *= 0.5;
    }
    for (int i = 0; i < m; ++i) phi[i] += alpha * corr[i];
    if (cmax * alpha < 1e-14) break;
  }

  // Phase 2: least-squares coefficients at the recovered correspondence,
  // with short foot-point slides between rounds.
  ConformalMap map;
  map.r_outer = 2.0;
  map.cneg.assign(k_modes, Cplx(0, 0));
  Eigen::MatrixXcd design(m, k_modes + 2);
  double best_residual = 1e300;
  ConformalMap best = map;

  for (int round = 0; round < 4; ++round) {
    for (int i = 0; i < m; ++i) {
      const Cplx zeta = std::polar(1.0, phi[i]);
      const Cplx w = 1.0 / zeta;
      design(i, 0) = zeta;
      design(i, 1) = Cplx(1, 0);
      Cplx p = w;
      for (int k = 0; k < k_modes; ++k) {
        design(i, k + 2) = p;
        p *= w;
      }
    }
    const Eigen::VectorXcd coef = design.colPivHouseholderQr().solve(target);
    map.c1 = coef(0);
    map.c0 = coef(1);
    for (int k = 0; k < k_modes; ++k) map.cneg[k] = coef(k + 2);

    // rotation gauge: make c1 real positive by rotating the parameter
    const double omega = std::arg(map.c1);
    if (omega != 0.0) {
      map.c1 = std::abs(map.c1);
      for (int k = 0; k < k_modes; ++k) map.cneg[k] *= std::polar(1.0, (k + 1) * omega);
      for (int i = 0; i < m; ++i) phi[i] += omega;
    }

    // foot-point slide: move each correspondence along the fitted curve
    const double step_cap = kTwoPi / m;
    double residual = 0.0;
    for (int i = 0; i < m; ++i) {
      for (int newton = 0; newton < 3; ++newton) {
        const Cplx zeta = std::polar(1.0, phi[i]);
        const Cplx diff = map.eval(zeta) - target(i);
        const Cplx tangent = map.deriv(zeta) * Cplx(0, 1) * zeta;  // d/dphi g(e^{i phi})
        const double grad = diff.real() * tangent.real() + diff.imag() * tangent.imag();
        const double curv = std::norm(tangent);
        if (curv <= 0) break;
        const double step = std::clamp(-grad / curv, -step_cap, step_cap);
        phi[i] += step;
        if (std::abs(step) < 1e-15) break;
      }
      residual = std::max(residual, std::abs(map.eval(std::polar(1.0, phi[i])) - target(i)));
    }

    map.residual = residual;
    if (residual < best_residual) {
      best_residual = residual;
      best = map;
    }
    if (residual < opt.tol * std::max(1.0, scale) * 1e-3) break;  // already far below tol
  }

  if (!(best_residual < opt.tol))
    throw numeric_error("fit_exterior_map: residual " + io::fmt_double(best_residual) +
                        " did not reach tol " + io::fmt_double(opt.tol));
  if (!(best.c1.real() > 0.0) || std::abs(best.c1.imag()) > 1e-9 * std::abs(best.c1))
    throw numeric_error("fit_exterior_map: gauge normalization failed");
  return best;
}

DoublyConnectedMap build_domain_map(const BoundaryCurve& inner, const ReferenceAnnulus& ref,
                                    const FitOptions& opt) {
  DoublyConnectedMap dom;
  dom.inner = inner;
  dom.map = fit_exterior_map(inner, opt);
  dom.map.r_outer = ref.r_outer;
  const double tail = std::abs(dom.map.cneg.back());
  if (!(tail < 1e-3 * std::abs(dom.map.c1)))
    throw numeric_error("build_domain_map: Laurent tail has not decayed (|c_-K| = " +
                        io::fmt_double(tail) + ")");
  dom.outer.role = geom::CurveRole::Outer;
  dom.outer.points.resize(ref.n_theta);
  for (int j = 0; j < ref.n_theta; ++j)
    dom.outer.points[j] = dom.map.eval(std::polar(ref.r_outer, ref.theta(j)));
  if (!geom::curve_is_simple(dom.outer.points))
    throw numeric_error("build_domain_map: outer image self-intersects");
  return dom;
}

Cplx map_annulus_to_domain(const ConformalMap& m, Cplx p) { return m.eval(p); }

Cplx map_domain_to_annulus(const ConformalMap& m, Cplx q, double tol) {
  const double scale = std::max(1.0, std::abs(m.c1) * m.r_outer);

  // Rank candidate starts on a coarse annulus grid by image distance.
  struct Start {
    double err;
    Cplx p;
  };
  std::vector<Start> starts;
  starts.reserve(4 * 24);
  for (int i = 0; i < 4; ++i) {
    const double rho = 1.0 + (m.r_outer - 1.0) * i / 3.0;
    for (int j = 0; j < 24; ++j) {
      const Cplx p = std::polar(rho, kTwoPi * j / 24);
      starts.push_back({std::abs(m.eval(p) - q), p});
    }
  }
  std::sort(starts.begin(), starts.end(), [](const Start& a, const Start& b) { return a.err < b.err; });

  for (int attempt = 0; attempt < 4; ++attempt) {
    Cplx p = starts[attempt].p;
    double err = starts[attempt].err;
    bool ok = true;
    for (int it = 0; it < 80 && err > tol * scale; ++it) {
      const Cplx dg = m.deriv(p);
      if (std::abs(dg) < 1e-14) {
        ok = false;
        break;
      }
      const Cplx full = (m.eval(p) - q) / dg;
      double damp = 1.0;
      Cplx p_next = p - full;
      double err_next = std::abs(m.eval(p_next) - q);
      while (err_next >= err && damp > 1e-4) {
        damp *= 0.5;
        p_next = p - damp * full;
        err_next = std::abs(m.eval(p_next) - q);
      }
      if (err_next >= err) {
        ok = false;
        break;
      }
      p = p_next;
      err = err_next;
      if (std::abs(p) < 0.5 || std::abs(p) > m.r_outer + 1.5) {
        ok = false;
        break;
      }
    }
    if (ok && err <= tol * scale) {
      const double r = std::abs(p);
      if (r < 1.0 - 1e-7 || r > m.r_outer + 1e-7)
        throw numeric_error("map_domain_to_annulus: preimage left the annulus (|p| = " +
                            io::fmt_double(r) + ")");
      const double rc = std::clamp(r, 1.0, m.r_outer);
      return std::polar(rc, std::arg(p));
    }
  }
  throw numeric_error("map_domain_to_annulus: Newton failed to converge");
}

ConformalityReport conformality_check(const ConformalMap& m) {
  ConformalityReport rep;
  rep.min_abs_deriv = 1e300;
  const double radii[3] = {1.05, 1.5, 3.0};
  const double h = 1e-6;
  for (double r : radii) {
    for (int j = 0; j < 64; ++j) {
      const Cplx z = std::polar(r, kTwoPi * j / 64);
      const Cplx dg = m.deriv(z);
      rep.min_abs_deriv = std::min(rep.min_abs_deriv, std::abs(dg));
      // central differences along two independent directions
      for (const Cplx dir : {Cplx(1, 0), Cplx(0, 1)}) {
        const Cplx step = h * dir * std::abs(z);
        const Cplx fd = (m.eval(z + step) - m.eval(z - step)) / (2.0 * step);
        rep.max_rel_deriv_err =
            std::max(rep.max_rel_deriv_err, std::abs(fd - dg) / std::max(1e-30, std::abs(dg)));
      }
    }
  }
  return rep;
}

void write_map_json(const std::filesystem::path& path, const ConformalMap& m) {
  nlohmann::json j;
  j["c1"] = {m.c1.real(), m.c1.imag()};
  j["c0"] = {m.c0.real(), m.c0.imag()};
  auto& arr = j["cneg"] = nlohmann::json::array();
  for (const Cplx& c : m.cneg) arr.push_back({c.real(), c.imag()});
  j["residual"] = m.residual;
  j["r_outer"] = m.r_outer;
  io::write_json(path, j);
}

ConformalMap read_map_json(const std::filesystem::path& path) {
  const nlohmann::json j = io::read_json(path);
  ConformalMap m;
  m.c1 = Cplx(j.at("c1")[0], j.at("c1")[1]);
  m.c0 = Cplx(j.at("c0")[0], j.at("c0")[1]);
  for (const auto& c : j.at("cneg")) m.cneg.emplace_back(c[0], c[1]);
  m.residual = j.at("residual");
  m.r_outer = j.at("r_outer");
  return m;
}

}  // namespace latmap::conformal
