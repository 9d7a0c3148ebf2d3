#include "hypdiag/model.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>

#include "hypdiag/errors.hpp"

namespace hypdiag {

namespace {

Eigen::MatrixXd blockdiag(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

std::string shape(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

struct ShapeChecker {
  ValidationReport& report;
  int points;

  void matrix(const char* name, const Eigen::MatrixXd& m, int r, int c) {
    if (m.rows() != r || m.cols() != c)
      report.violations.push_back(std::string("dimension: ") + name + " is " +
                                  shape(m.rows(), m.cols()) + ", expected " + shape(r, c));
  }
  void function(const char* name, const TabulatedFunction& f, int r, int c) {
    if (f.points() == 0) {
      if (r * c != 0) report.violations.push_back(std::string("dimension: ") + name + " missing");
      return;
    }
    if (f.rows() != r || f.cols() != c)
      report.violations.push_back(std::string("dimension: ") + name + " is " +
                                  shape(f.rows(), f.cols()) + ", expected " + shape(r, c));
    if (f.points() != points)
      report.violations.push_back(std::string("dimension: ") + name + " tabulated on " +
                                  std::to_string(f.points()) + " points, expected " +
                                  std::to_string(points));
  }
};

}  // namespace

PlantModel PlantModel::resampled(int n) const {
  PlantModel m = *this;
  auto re = [n](TabulatedFunction& f) {
    if (f.points() > 0) f = f.resampled(n);
  };
  re(m.gamma);
  re(m.A);
  re(m.A0);
  re(m.H1);
  re(m.B1);
  re(m.E1);
  re(m.G1);
  if (m.D.points() > 0) m.D = m.D.resampled(n);
  return m;
}

Eigen::MatrixXd SignalModel::S() const { return blockdiag(S_f, S_d); }

Eigen::MatrixXd SignalModel::R_f() const {
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(R_f_tilde.rows(), n_v());
  r.leftCols(n_vf()) = R_f_tilde;
  return r;
}

Eigen::MatrixXd SignalModel::R_d() const {
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(R_d_tilde.rows(), n_v());
  r.rightCols(n_vd()) = R_d_tilde;
  return r;
}

ValidationReport validate_plant(const PlantModel& m) {
  ValidationReport rep;
  const Dimensions& d = m.dims;
  const int nx = d.n_x();
  if (d.n_minus < 1 || d.n_plus < 1)
    rep.violations.push_back("dimension: need n_minus >= 1 and n_plus >= 1");
  if (m.gamma.points() < 2) {
    rep.violations.push_back("dimension: gamma is not tabulated");
    return rep;
  }
  const int n = m.points();
  ShapeChecker chk{rep, n};
  chk.function("gamma", m.gamma, nx, 1);
  chk.function("A", m.A, nx, nx);
  chk.function("A0", m.A0, nx, d.n_minus);
  if (m.D.points() != n || m.D.rows() != nx || m.D.cols() != nx)
    rep.violations.push_back("dimension: D must be " + shape(nx, nx) + " on " +
                             std::to_string(n) + " points");
  chk.matrix("Q0", m.Q0, d.n_plus, d.n_minus);
  chk.matrix("Q1", m.Q1, d.n_minus, d.n_plus);
  chk.matrix("F", m.F, d.n_w, d.n_w);
  chk.matrix("L2", m.L2, d.n_w, d.n_minus);
  chk.function("H1", m.H1, nx, d.n_w);
  chk.matrix("H2", m.H2, d.n_plus, d.n_w);
  chk.function("B1", m.B1, nx, d.n_u);
  chk.matrix("B2", m.B2, d.n_plus, d.n_u);
  chk.matrix("B3", m.B3, d.n_minus, d.n_u);
  chk.matrix("B4", m.B4, d.n_w, d.n_u);
  chk.function("E1", m.E1, nx, d.n_f);
  chk.matrix("E2", m.E2, d.n_plus, d.n_f);
  chk.matrix("E3", m.E3, d.n_minus, d.n_f);
  chk.matrix("E4", m.E4, d.n_w, d.n_f);
  chk.matrix("E5", m.E5, d.n_minus, d.n_f);
  chk.function("G1", m.G1, nx, d.n_d);
  chk.matrix("G2", m.G2, d.n_plus, d.n_d);
  chk.matrix("G3", m.G3, d.n_minus, d.n_d);
  chk.matrix("G4", m.G4, d.n_w, d.n_d);
  chk.matrix("G5", m.G5, d.n_minus, d.n_d);
  chk.matrix("G_tilde", m.G_tilde, d.n_d, d.n_d_tilde);
  chk.matrix("G_bar", m.G_bar, d.n_d, d.n_d_bar);
  if (m.delta.size() != d.n_d_bar)
    rep.violations.push_back("dimension: delta has " + std::to_string(m.delta.size()) +
                             " entries, expected " + std::to_string(d.n_d_bar));
  for (Eigen::Index i = 0; i < m.delta.size(); ++i)
    if (!(m.delta[i] >= 0.0))
      rep.violations.push_back("delta: entry " + std::to_string(i + 1) + " is negative");
  if (m.gamma.rows() != nx) return rep;

  bool vanishing = false, ordering = false, diagonal = false;
  for (int k = 0; k < n; ++k) {
    const double z = m.gamma.node(k);
    for (int i = 0; i < nx && !vanishing; ++i) {
      const double g = m.gamma[k](i, 0);
      if (!std::isfinite(g) || g == 0.0) {
        std::ostringstream os;
        os << "vanishing gamma: gamma_" << i + 1 << " is " << g << " at z = " << z;
        rep.violations.push_back(os.str());
        vanishing = true;
      }
    }
    if (vanishing) break;
    for (int i = 0; i + 1 < nx && !ordering; ++i) {
      const double li = 1.0 / m.gamma[k](i, 0), lj = 1.0 / m.gamma[k](i + 1, 0);
      const bool sign_ok = i < d.n_minus ? li > 0.0 : li < 0.0;
      if (!(li > lj) || !sign_ok) {
        std::ostringstream os;
        os << "velocity ordering: lambda_" << i + 1 << " = " << li << ", lambda_" << i + 2
           << " = " << lj << " at z = " << z;
        rep.violations.push_back(os.str());
        ordering = true;
      }
    }
    const double last = 1.0 / m.gamma[k](nx - 1, 0);
    if (!ordering && !(last < 0.0)) {
      rep.violations.push_back("velocity ordering: lambda_" + std::to_string(nx) +
                               " must be negative");
      ordering = true;
    }
    if (m.A.rows() == nx && m.A.cols() == nx && !diagonal)
      for (int i = 0; i < nx; ++i)
        if (m.A[k](i, i) != 0.0) {
          std::ostringstream os;
          os << "nonzero diagonal: A_" << i + 1 << i + 1 << " = " << m.A[k](i, i)
             << " at z = " << z;
          rep.violations.push_back(os.str());
          diagonal = true;
          break;
        }
  }
  return rep;
}

ValidationReport validate_signal_model(const SignalModel& sig, const Dimensions& dims) {
  ValidationReport rep;
  auto square = [&](const char* name, const Eigen::MatrixXd& s) {
    if (s.rows() != s.cols()) {
      rep.violations.push_back(std::string("dimension: ") + name + " is not square");
      return false;
    }
    return true;
  };
  auto spectrum = [&](const char* name, const Eigen::MatrixXd& s) {
    if (s.size() == 0) return;
    Eigen::EigenSolver<Eigen::MatrixXd> es(s, false);
    for (const std::complex<double>& ev : es.eigenvalues())
      if (std::abs(ev.real()) > 1e-9 * (1.0 + std::abs(ev))) {
        std::ostringstream os;
        os << "spectrum: eigenvalue " << ev << " of " << name << " is off the imaginary axis";
        rep.violations.push_back(os.str());
      }
  };
  if (square("S_f", sig.S_f)) spectrum("S_f", sig.S_f);
  if (square("S_d", sig.S_d)) spectrum("S_d", sig.S_d);
  if (sig.R_f_tilde.rows() != dims.n_f || sig.R_f_tilde.cols() != sig.S_f.rows())
    rep.violations.push_back("dimension: R_f_tilde must be " + shape(dims.n_f, sig.S_f.rows()));
  if (sig.R_d_tilde.rows() != dims.n_d_tilde || sig.R_d_tilde.cols() != sig.S_d.rows())
    rep.violations.push_back("dimension: R_d_tilde must be " +
                             shape(dims.n_d_tilde, sig.S_d.rows()));
  return rep;
}

TransportGeometry::TransportGeometry(const TabulatedFunction& gamma_bar, int n_minus)
    : points_(gamma_bar.points()) {
  const int nx = gamma_bar.rows();
  if (n_minus < 1 || n_minus >= nx) throw DimensionError("geometry: need 0 < n_minus < n_x");
  const double h = gamma_bar.step();
  cumulative_.assign(nx, std::vector<double>(points_, 0.0));
  for (int j = 0; j < nx; ++j) {
    for (int k = 1; k < points_; ++k) {
      const double a = gamma_bar[k - 1](j, 0), b = gamma_bar[k](j, 0);
      if (!std::isfinite(a) || !std::isfinite(b))
        throw ValidationError("geometry: non-finite gamma tabulation");
      cumulative_[j][k] = cumulative_[j][k - 1] + 0.5 * h * (a + b);
    }
  }
  tau_plus = cumulative_[n_minus - 1].back();
  tau_minus = std::fabs(cumulative_[n_minus].back());
  T0 = tau_plus + tau_minus;
}

double TransportGeometry::Theta(int j, double z) const {
  const auto [k, t] = locate(z, points_);
  return (1.0 - t) * cumulative_[j][k] + t * cumulative_[j][k + 1];
}

double TransportGeometry::Theta_inverse(int j, double a) const {
  const std::vector<double>& c = cumulative_[j];
  const bool up = c.back() > 0.0;
  // position of a in the monotone table
  int lo = 0, hi = points_ - 1;
  auto below = [&](int k) { return up ? c[k] <= a : c[k] >= a; };
  if (!below(lo)) return 0.0;
  if (below(hi)) return 1.0;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (below(mid)) lo = mid;
    else hi = mid;
  }
  const double t = (a - c[lo]) / (c[hi] - c[lo]);
  return (lo + t) / (points_ - 1);
}

TransportGeometry transport_geometry(const PlantModel& model) {
  return TransportGeometry(model.gamma.reversed(), model.dims.n_minus);
}

ReversedSystem build_reversed_system(const PlantModel& m, const SignalModel& sig) {
  const Dimensions& d = m.dims;
  const int nx = d.n_x(), n = m.points();
  const int nv = sig.n_v(), neta = d.n_w + nv;
  const ValidationReport vs = validate_signal_model(sig, d);
  if (!vs.ok()) throw DimensionError(vs.violations.front());
  if (m.E1.rows() != nx || m.G1.rows() != nx || m.H1.rows() != nx || m.G_tilde.rows() != d.n_d)
    throw DimensionError("reversed system: inconsistent input map dimensions");

  ReversedSystem r;
  r.dims = d;
  r.n_vf = sig.n_vf();
  r.n_vd = sig.n_vd();
  r.gamma_bar = m.gamma.reversed();
  r.A_bar = m.A.reversed();
  r.A0_bar = m.A0.reversed();
  r.C = BivariateFunction(n, nx, nx);
  for (int k = 0; k < n; ++k)
    for (int l = 0; l <= k; ++l) r.C.at(k, l) = m.D.at(n - 1 - l, n - 1 - k).transpose();
  r.Q0 = m.Q0;
  r.Q1 = m.Q1;
  r.L2 = m.L2;
  r.J = Eigen::MatrixXd::Zero(d.n_w, neta);
  r.J.leftCols(d.n_w).setIdentity();

  const Eigen::MatrixXd Rf = sig.R_f(), Rd = sig.R_d();
  const Eigen::MatrixXd RdG = Rd.transpose() * m.G_tilde.transpose();  // n_v × n_d

  r.F_bar = Eigen::MatrixXd::Zero(neta, neta);
  r.F_bar.topLeftCorner(d.n_w, d.n_w) = m.F.transpose();
  r.F_bar.bottomLeftCorner(nv, d.n_w) = Rf.transpose() * m.E4.transpose() + RdG * m.G4.transpose();
  r.F_bar.bottomRightCorner(nv, nv) = sig.S().transpose();

  r.B2_bar = Eigen::MatrixXd::Zero(neta, d.n_minus);
  r.B2_bar.bottomRows(nv) = -Rf.transpose() * m.E3.transpose() - RdG * m.G3.transpose();
  r.B3_bar = Eigen::MatrixXd::Zero(neta, d.n_plus);
  r.B3_bar.topRows(d.n_w) = m.H2.transpose();
  r.B3_bar.bottomRows(nv) = Rf.transpose() * m.E2.transpose() + RdG * m.G2.transpose();
  r.B4_bar = Eigen::MatrixXd::Zero(neta, d.n_minus);
  r.B4_bar.bottomRows(nv) = -Rf.transpose() * m.E5.transpose() - RdG * m.G5.transpose();

  r.B1_bar = TabulatedFunction(n, neta, nx);
  for (int k = 0; k < n; ++k) {
    const int kr = n - 1 - k;
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(neta, nx);
    if (d.n_w > 0) b.topRows(d.n_w) = m.H1[kr].transpose();
    b.bottomRows(nv) = Rf.transpose() * m.E1[kr].transpose() + RdG * m.G1[kr].transpose();
    r.B1_bar[k] = b;
  }

  for (int i = 0; i < d.n_f; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(neta);
    e.tail(nv) = Rf.row(i).transpose();
    r.eta0.push_back(e);
  }
  return r;
}

ReversedSystem ReversedSystem::resampled(int n) const {
  if (n == points()) return *this;
  ReversedSystem r = *this;
  r.gamma_bar = gamma_bar.resampled(n);
  r.A_bar = A_bar.resampled(n);
  r.A0_bar = A0_bar.resampled(n);
  r.C = C.resampled(n);
  r.B1_bar = B1_bar.resampled(n);
  return r;
}

}  // namespace hypdiag
