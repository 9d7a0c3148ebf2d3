#include "hypdiag/trajectory.hpp"

#include <boost/multiprecision/eigen.hpp>
#include <boost/multiprecision/float128.hpp>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "hypdiag/errors.hpp"
#include "hypdiag/linalg.hpp"

namespace hypdiag {

namespace {

using quad = boost::multiprecision::float128;
using QMat = Eigen::Matrix<quad, Eigen::Dynamic, Eigen::Dynamic>;

// Padé [13/13] truncation error stays under quad epsilon for unit norm.
constexpr double kQuadPadeTheta = 1.0;

QMat to_quad(const Eigen::MatrixXd& A) { return A.cast<quad>(); }

Eigen::MatrixXd to_double(const QMat& A) {
  Eigen::MatrixXd out(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) out(i, j) = static_cast<double>(A(i, j));
  return out;
}

QMat expm_quad(const QMat& A) { return expm_pade<quad>(A, kQuadPadeTheta); }

QMat van_loan(const QMat& A) {
  const Eigen::Index n = A.rows();
  QMat M = QMat::Zero(2 * n, 2 * n);
  M.topLeftCorner(n, n) = A;
  M(n - 1, 2 * n - 1) = quad(1);
  M.bottomRightCorner(n, n) = -A.transpose();
  return M;
}

std::vector<double> trapezoid(int count, double h) {
  std::vector<double> w(count, h);
  if (count == 1) {
    w[0] = 0.0;
    return w;
  }
  w.front() = w.back() = 0.5 * h;
  return w;
}

// Phase boundaries rounded up to the τ grid, so every stencil sample of η(0)
// and η(T) lands in a closed zero-trace phase.
double grid_ceil(double t, double dt) { return std::ceil(t / dt - 1e-9) * dt; }

// Row-major vec of X (row j = φ^{(j)}ᵀ) into ξ.
Eigen::VectorXd stack_xi(const Eigen::MatrixXd& X) {
  Eigen::VectorXd v(X.size());
  for (Eigen::Index j = 0; j < X.rows(); ++j) v.segment(j * X.cols(), X.cols()) = X.row(j).transpose();
  return v;
}

}  // namespace

Eigen::VectorXd SampledSignal::operator()(double t) const {
  const double p = (t - t0) / dt;
  const int last = count() - 1;
  if (p < -1e-9 || p > last + 1e-9 || last < 0)
    throw std::out_of_range("sampled signal: t = " + std::to_string(t) + " outside [" + std::to_string(t0) +
                            ", " + std::to_string(t_end()) + "]");
  if (last == 0) return values.col(0);
  int j = static_cast<int>(std::floor(p));
  j = std::clamp(j, 0, last - 1);
  const double f = std::clamp(p - j, 0.0, 1.0);
  return (1.0 - f) * values.col(j) + f * values.col(j + 1);
}

namespace {

Eigen::MatrixXd boundary_map(int n_minus, const Eigen::MatrixXd& Q1) {
  const int n_plus = static_cast<int>(Q1.cols());
  Eigen::MatrixXd V(n_minus + n_plus, n_minus);
  V.topRows(n_minus).setIdentity();
  V.bottomRows(n_plus) = -Q1.transpose();
  return V;
}

}  // namespace

Eigen::VectorXd psi_apply(const TransportGeometry& geo, const TabulatedFunction& A0_tilde,
                          const Eigen::MatrixXd& Q1, const SampledSignal& h, double z, double tau) {
  const int nx = geo.n_x();
  const int nm = static_cast<int>(A0_tilde.cols());
  const Eigen::MatrixXd V = boundary_map(nm, Q1);
  const int n = geo.points();
  const int nodes = std::max(2, static_cast<int>(std::ceil(z * (n - 1) - 1e-9)) + 1);
  const double dz = z / (nodes - 1);
  const std::vector<double> w = trapezoid(nodes, dz);
  Eigen::VectorXd out(nx);
  for (int r = 0; r < nx; ++r) {
    const double Tz = geo.Theta(r, z);
    double acc = V.row(r).dot(h(tau + Tz));
    if (z > 0.0)
      for (int l = 0; l < nodes; ++l) {
        const double zeta = l * dz;
        acc += w[l] * A0_tilde(zeta).row(r).dot(h(tau + Tz - geo.Theta(r, zeta)));
      }
    out[r] = acc;
  }
  return out;
}

PsiStencil::PsiStencil(const TransportGeometry& geo, const TabulatedFunction& A0_tilde,
                       const Eigen::MatrixXd& Q1, double dtau)
    : points_(geo.points()), n_x_(geo.n_x()), n_minus_(static_cast<int>(A0_tilde.cols())), dtau_(dtau) {
  if (A0_tilde.points() != points_) throw DimensionError("psi stencil: Ã0 and geometry grids differ");
  const Eigen::MatrixXd V = boundary_map(n_minus_, Q1);
  const double h = 1.0 / (points_ - 1);
  offsets_.assign(points_ * n_x_, 0);
  coef_.resize(points_ * n_x_);

  struct Tap {
    int o;
    double w;
    Eigen::RowVectorXd row;
  };
  std::vector<Tap> taps;
  auto push = [&](double shift, const Eigen::RowVectorXd& row) {
    const double p = shift / dtau;
    const double pr = std::round(p);
    if (std::abs(p - pr) < 1e-9) {
      taps.push_back({static_cast<int>(pr), 1.0, row});
      return;
    }
    const int o = static_cast<int>(std::floor(p));
    const double f = p - o;
    taps.push_back({o, 1.0 - f, row});
    taps.push_back({o + 1, f, row});
  };

  bool first = true;
  for (int k = 0; k < points_; ++k)
    for (int r = 0; r < n_x_; ++r) {
      taps.clear();
      const double Tk = geo.Theta_node(r, k);
      push(Tk, V.row(r));
      if (k > 0)
        for (int l = 0; l <= k; ++l) {
          const double w = (l == 0 || l == k) ? 0.5 * h : h;
          const Eigen::RowVectorXd row = w * A0_tilde[l].row(r);
          if (row.cwiseAbs().maxCoeff() == 0.0) continue;
          push(Tk - geo.Theta_node(r, l), row);
        }
      int lo = taps.front().o, hi = taps.front().o;
      for (const Tap& t : taps) {
        lo = std::min(lo, t.o);
        hi = std::max(hi, t.o);
      }
      Eigen::MatrixXd c = Eigen::MatrixXd::Zero(hi - lo + 1, n_minus_);
      for (const Tap& t : taps) c.row(t.o - lo) += t.w * t.row;
      offsets_[k * n_x_ + r] = lo;
      coef_[k * n_x_ + r] = std::move(c);
      if (first) {
        o_lo_ = lo;
        o_hi_ = hi;
        first = false;
      }
      o_lo_ = std::min(o_lo_, lo);
      o_hi_ = std::max(o_hi_, hi);
    }
}

Eigen::MatrixXd PsiStencil::apply(const Eigen::MatrixXd& h, int j0, int j_first, int count) const {
  if (h.rows() != n_minus_) throw DimensionError("psi stencil: trace has wrong channel count");
  if (j_first + o_lo_ < j0 || j_first + count - 1 + o_hi_ > j0 + h.cols() - 1)
    throw std::out_of_range("psi stencil: trace does not cover the shifted support");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(points_ * n_x_, count);
  for (int e = 0; e < points_ * n_x_; ++e) {
    const Eigen::MatrixXd& c = coef_[e];
    for (Eigen::Index o = 0; o < c.rows(); ++o) {
      if (c.row(o).cwiseAbs().maxCoeff() == 0.0) continue;
      const int start = j_first + offsets_[e] + static_cast<int>(o) - j0;
      out.row(e).noalias() += c.row(o) * h.middleCols(start, count);
    }
  }
  return out;
}

Eigen::MatrixXd ParametrizationData::Phi(double t) const {
  const Eigen::MatrixXd E = expm(A_c * t);
  return Eigen::kroneckerProduct(E, Eigen::MatrixXd::Identity(n_minus, n_minus));
}

IdentifiabilityResult identifiability_check(const Eigen::MatrixXd& W0, const Eigen::VectorXd& eta0) {
  IdentifiabilityResult res;
  Eigen::MatrixXd aug(W0.rows(), W0.cols() + 1);
  aug << W0, eta0;
  res.rank_W0 = numerical_rank(W0);
  res.rank_augmented = numerical_rank(aug);
  res.identifiable = res.rank_W0 == res.rank_augmented;
  const Eigen::VectorXd xi0 = pseudo_inverse(W0) * eta0;
  res.consistency = (W0 * xi0 - eta0).norm() / (1.0 + eta0.norm());
  return res;
}

EtaStencil eta_stencil(const PsiStencil& psi, const TargetSystemData& target,
                       const std::vector<Eigen::MatrixXd>& F_adj) {
  const int n = psi.points(), nx = psi.n_x(), nm = psi.n_minus();
  const int neta = static_cast<int>(target.F_tilde.rows());
  if (target.B1_tilde.points() != n) throw DimensionError("eta stencil: B̃1 and stencil grids differ");
  const int span = psi.offset_max() - psi.offset_min() + 1;
  std::vector<Eigen::MatrixXd> G(span, Eigen::MatrixXd::Zero(neta, nm));
  const double h = 1.0 / (n - 1);
  for (int k = 0; k < n; ++k) {
    const double w = (k == 0 || k == n - 1) ? 0.5 * h : h;
    for (int r = 0; r < nx; ++r) {
      Eigen::VectorXd col = w * target.B1_tilde[k].col(r);
      if (k == 0) col += target.B2_tilde.col(r);
      if (k == n - 1) col += target.B3_tilde.col(r);
      if (col.cwiseAbs().maxCoeff() == 0.0) continue;
      const Eigen::MatrixXd& c = psi.entry(k, r);
      const int base = psi.entry_offset(k, r) - psi.offset_min();
      for (Eigen::Index o = 0; o < c.rows(); ++o) G[base + o].noalias() += col * c.row(o);
    }
  }
  EtaStencil out;
  out.o_min = psi.offset_min();
  out.E.resize(span);
  for (int o = 0; o < span; ++o) {
    Eigen::MatrixXd E(neta, neta * nm);
    for (int j = 0; j < neta; ++j) E.middleCols(j * nm, nm) = F_adj[j] * G[o];
    out.E[o] = std::move(E);
  }
  return out;
}

namespace {

// Transition e^{Aσ} and forward Gramian ∫_0^σ e^{Ar} b bᵀ e^{Aᵀr} dr of the
// chain over a short interval, from the Van Loan block exponential.
struct ChainStep {
  QMat Phi, W;
};

ChainStep chain_step(const QMat& A, double sigma) {
  const Eigen::Index n = A.rows();
  const QMat E = expm_quad(van_loan(A) * quad(sigma));
  return {E.topLeftCorner(n, n), E.topRightCorner(n, n) * E.topLeftCorner(n, n).transpose()};
}

// W(a + b) = Φ(b) W(a) Φ(b)ᵀ + W(b).
void compose(ChainStep& acc, const ChainStep& step) {
  acc.W = step.Phi * acc.W * step.Phi.transpose() + step.W;
  acc.Phi = step.Phi * acc.Phi;
}

ChainStep chain_over(const QMat& A, double L) {
  const int pieces = std::max(1, static_cast<int>(std::ceil(L / 0.05)));
  const ChainStep piece = chain_step(A, L / pieces);
  ChainStep acc = piece;
  for (int i = 1; i < pieces; ++i) compose(acc, piece);
  return acc;
}

}  // namespace

Eigen::MatrixXd steering_gramian(const Eigen::VectorXd& mu, double L) {
  return to_double(chain_over(to_quad(companion(mu)), L).W);
}

ReferencePlan plan_reference(const Eigen::VectorXd& mu, const Eigen::MatrixXd& X0, double tau_plus,
                             double tau_minus, double T, double dtau, int j_lo, int j_hi) {
  const double L = T - tau_minus - tau_plus;
  if (!(L > 0.0))
    throw ValidationError("detection window T = " + std::to_string(T) + " must exceed the transport bound " +
                          std::to_string(tau_plus + tau_minus));
  const int n = static_cast<int>(mu.size()) - 1;
  const int nm = static_cast<int>(X0.cols());
  if (X0.rows() != n) throw DimensionError("plan: ξ⁰ rows differ from characteristic degree");
  const QMat A = to_quad(companion(mu));
  const QMat Xq0 = to_quad(X0);

  ReferencePlan plan;
  plan.dtau = dtau;
  plan.j_lo = j_lo;
  const int count = j_hi - j_lo + 1;
  plan.xi.assign(count, Eigen::MatrixXd::Zero(n, nm));
  plan.trace = Eigen::MatrixXd::Zero(nm, count);

  const double eps = 1e-9 * dtau;
  auto phase = [&](int j) {
    const double t = j * dtau;
    if (t <= tau_plus + eps) return 1;
    if (t < T - tau_minus - eps) return 2;
    return 3;
  };

  // Free response, ξ(τ) = e^{A(τ+τ⁻)} ξ⁰.
  {
    const QMat step = expm_quad(A * quad(dtau));
    QMat X = expm_quad(A * quad(j_lo * dtau + tau_minus)) * Xq0;
    for (int j = j_lo; j <= j_hi && phase(j) == 1; ++j) {
      plan.xi[j - j_lo] = to_double(X);
      X = step * X;
    }
  }

  // Minimum-energy steering with s = τ − τ⁺ ∈ (0, L):
  //   p(s) = e^{Aᵀ(L−s)} λ,  λ = W(L)⁻¹ e^{AL} ξ(τ⁺),
  //   ξ(s) = e^{As} ξ(τ⁺) − W(s) p(s),  χ(s) = −bᵀ p(s).
  const QMat Xp = expm_quad(A * quad(tau_plus + tau_minus)) * Xq0;
  int j2 = j_lo;
  while (j2 <= j_hi && phase(j2) == 1) ++j2;
  int j3 = j2;
  while (j3 <= j_hi && phase(j3) == 2) ++j3;

  const ChainStep dstep = chain_step(A, dtau);
  std::vector<ChainStep> grid;
  ChainStep acc = chain_step(A, j2 * dtau - tau_plus);
  for (int j = j2; j < j3; ++j) {
    grid.push_back(acc);
    if (j + 1 < j3) compose(acc, dstep);
  }
  ChainStep full;
  if (grid.empty()) {
    full = chain_over(A, L);
  } else {
    full = grid.back();
    compose(full, chain_step(A, T - tau_minus - (j3 - 1) * dtau));
  }
  const Eigen::LDLT<QMat> ldlt(full.W);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw SolverError("trajectory", "steering Gramian is not positive definite");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(ldlt.vectorD()(i) > quad(0))) throw SolverError("trajectory", "steering Gramian is singular");
  const QMat target = full.Phi * Xp;
  QMat lambda = ldlt.solve(target);
  lambda += ldlt.solve(QMat(target - full.W * lambda));
  plan.terminal_residual = static_cast<double>((target - full.W * lambda).cwiseAbs().maxCoeff());

  for (int j = j2; j < j3; ++j) {
    const ChainStep& g = grid[j - j2];
    const QMat p = expm_quad(A.transpose() * quad(T - tau_minus - j * dtau)) * lambda;
    plan.xi[j - j_lo] = to_double(QMat(g.Phi * Xp - g.W * p));
    plan.trace.col(j - j_lo) = -to_double(QMat(p.row(n - 1))).transpose();
  }

  for (const Eigen::MatrixXd& X : plan.xi) plan.xi_max = std::max(plan.xi_max, X.cwiseAbs().maxCoeff());
  plan.trace_max = plan.trace.size() ? plan.trace.cwiseAbs().maxCoeff() : 0.0;
  return plan;
}

ParametrizationData parametrize(const ReversedSystem& sys, const TransportGeometry& geo,
                                const TargetSystemData& target, const PsiStencil& psi) {
  ParametrizationData p;
  p.n_minus = sys.dims.n_minus;
  const int nm = p.n_minus;
  CharPoly cp = char_poly_and_adjugate(target.F_tilde);
  p.mu = cp.mu;
  p.F_adj = std::move(cp.F_adj);
  const int neta = static_cast<int>(p.mu.size()) - 1;
  p.A_c = companion(p.mu);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(nm, nm);
  p.A_phi = Eigen::kroneckerProduct(p.A_c, I);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(neta, 1);
  b(neta - 1, 0) = 1.0;
  p.B_phi = Eigen::kroneckerProduct(b, I);

  // Kalman rank of the chain.
  Eigen::MatrixXd ctrb(neta * nm, neta * nm);
  Eigen::MatrixXd blk = p.B_phi;
  for (int j = 0; j < neta; ++j) {
    ctrb.middleCols(j * nm, nm) = blk;
    blk = p.A_phi * blk;
  }
  if (numerical_rank(ctrb) < neta * nm) throw SolverError("trajectory", "flat-output chain is not controllable");

  const EtaStencil es = eta_stencil(psi, target, p.F_adj);
  p.W0 = Eigen::MatrixXd::Zero(neta, neta * nm);
  for (std::size_t o = 0; o < es.E.size(); ++o) {
    const double t = (es.o_min + static_cast<int>(o)) * psi.dtau() + grid_ceil(geo.tau_minus, psi.dtau());
    p.W0 += es.E[o] * Eigen::kroneckerProduct(expm(p.A_c * t), I);
  }
  const Eigen::MatrixXd W0p = pseudo_inverse(p.W0);
  for (const Eigen::VectorXd& e : sys.eta0) p.xi0.push_back(W0p * e);
  return p;
}

Eigen::VectorXd thresholds(const DiagnosisKernels& dk, const Eigen::VectorXd& delta) {
  Eigen::VectorXd fB = Eigen::VectorXd::Zero(dk.n_f());
  for (int i = 0; i < dk.n_f(); ++i) {
    const Eigen::MatrixXd& m = dk.MGbar[i];
    if (m.rows() == 0) continue;
    if (delta.size() != m.rows()) throw DimensionError("thresholds: δ has wrong length");
    const std::vector<double> w = trapezoid(static_cast<int>(m.cols()), dk.tau_step);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) acc += w[j] * m.col(j).cwiseAbs().dot(delta);
    fB[i] = acc;
  }
  return fB;
}

void output_kernels(const PlantModel& model_in, DiagnosisKernels& dk) {
  if (dk.M.size() != dk.N.size()) throw std::invalid_argument("output kernels: spatial kernel M not retained");
  const PlantModel model = model_in.points() == dk.points ? model_in : model_in.resampled(dk.points);
  const Dimensions& d = dk.dims;
  const int n = dk.points, nx = d.n_x(), nm = d.n_minus;
  const std::vector<double> w = trapezoid(n, 1.0 / (n - 1));
  const int nt = dk.n_tau();
  dk.MB.assign(dk.n_f(), Eigen::MatrixXd());
  dk.ME = dk.MG = dk.MGbar = dk.MB;
  for (int i = 0; i < dk.n_f(); ++i) {
    const Eigen::MatrixXd& M = dk.M[i];
    Eigen::MatrixXd MB = Eigen::MatrixXd::Zero(d.n_u, nt), ME = Eigen::MatrixXd::Zero(d.n_f, nt),
                    MG = Eigen::MatrixXd::Zero(d.n_d, nt);
    for (int k = 0; k < n; ++k) {
      const auto blk = M.middleRows(k * nx, nx);
      if (d.n_u) MB.noalias() += w[k] * model.B1[k].transpose() * blk;
      ME.noalias() += w[k] * model.E1[k].transpose() * blk;
      if (d.n_d) MG.noalias() += w[k] * model.G1[k].transpose() * blk;
    }
    const auto Mp0 = M.middleRows(nm, nx - nm);
    const auto Mm1 = M.middleRows((n - 1) * nx, nm);
    const Eigen::MatrixXd& P = dk.P[i];
    const Eigen::MatrixXd& N = dk.N[i];
    if (d.n_u) {
      MB += model.B2.transpose() * Mp0 - model.B3.transpose() * Mm1;
      if (d.n_w) MB += model.B4.transpose() * P;
    }
    ME += model.E2.transpose() * Mp0 - model.E3.transpose() * Mm1 - model.E5.transpose() * N;
    if (d.n_w) ME += model.E4.transpose() * P;
    if (d.n_d) {
      MG += model.G2.transpose() * Mp0 - model.G3.transpose() * Mm1 - model.G5.transpose() * N;
      if (d.n_w) MG += model.G4.transpose() * P;
    }
    dk.MB[i] = MB;
    dk.ME[i] = ME;
    dk.MG[i] = MG;
    dk.MGbar[i] = d.n_d_bar ? Eigen::MatrixXd(model.G_bar.transpose() * MG) : Eigen::MatrixXd(0, nt);
  }
  dk.f_B = thresholds(dk, model.delta);
}

KernelEquationResidual kernel_equation_residual(const ReversedSystem& sys_in, const DiagnosisKernels& dk) {
  if (dk.M.size() != dk.N.size()) throw std::invalid_argument("kernel residual: spatial kernel M not retained");
  const int n = dk.points;
  const ReversedSystem sys = sys_in.points() == n ? sys_in : sys_in.resampled(n);
  const TransportGeometry geo(sys.gamma_bar, sys.dims.n_minus);
  const int nx = sys.dims.n_x(), nm = sys.dims.n_minus, nt = dk.n_tau();
  const double dz = 1.0 / (n - 1), dtau = dk.tau_step;
  const std::vector<double> wz = trapezoid(n, dz);

  double pde_num = 0, pde_den = 0, bc_num = 0, bc_den = 0, ode_num = 0, ode_den = 0;
  for (int i = 0; i < dk.n_f(); ++i) {
    // m̄(z̄_k) = M(1 − z̄_k); row k·n_x + r.
    Eigen::MatrixXd mb(n * nx, nt);
    for (int k = 0; k < n; ++k) mb.middleRows(k * nx, nx) = dk.M[i].middleRows((n - 1 - k) * nx, nx);

    // Source S = Āᵀ m̄ + ∫_0^z C m̄ on the grid.
    Eigen::MatrixXd S(n * nx, nt);
    for (int k = 0; k < n; ++k) {
      Eigen::MatrixXd s = sys.A_bar[k].transpose() * mb.middleRows(k * nx, nx);
      if (k > 0)
        for (int l = 0; l <= k; ++l) {
          const Eigen::MatrixXd& C = sys.C.at(k, l);
          if (C.cwiseAbs().maxCoeff() == 0.0) continue;
          const double w = (l == 0 || l == k) ? 0.5 * dz : dz;
          s.noalias() += w * C * mb.middleRows(l * nx, nx);
        }
      S.middleRows(k * nx, nx) = s;
    }
    auto interp = [&](const Eigen::MatrixXd& F, int row, double tau) {
      const double p = tau / dtau;
      int j = std::clamp(static_cast<int>(std::floor(p)), 0, nt - 2);
      const double f = std::clamp(p - j, 0.0, 1.0);
      return (1.0 - f) * F(row, j) + f * F(row, j + 1);
    };

    for (int r = 0; r < nx; ++r)
      for (int k = 1; k < n; ++k) {
        const double Tk = geo.Theta_node(r, k);
        for (int j = 0; j < nt; ++j) {
          const double t0 = j * dtau + Tk;
          if (t0 < -1e-9 * dtau || t0 > dk.T + 1e-9 * dtau) continue;
          double integral = 0.0;
          for (int l = 0; l <= k; ++l) {
            const double w = (l == 0 || l == k) ? 0.5 * dz : dz;
            integral += w * interp(S, l * nx + r, t0 - geo.Theta_node(r, l));
          }
          const double res = mb(k * nx + r, j) - interp(mb, r, t0) - integral;
          pde_num += res * res;
          pde_den += mb(k * nx + r, j) * mb(k * nx + r, j);
        }
      }

    const auto m0 = mb.topRows(nx);
    const Eigen::MatrixXd bc = m0.bottomRows(nx - nm) + sys.Q1.transpose() * m0.topRows(nm);
    bc_num += bc.squaredNorm();
    bc_den += m0.squaredNorm();

    const int nw = sys.dims.n_w;
    Eigen::MatrixXd eta(sys.n_eta(), nt);
    if (nw) eta.topRows(nw) = dk.P[i];
    eta.bottomRows(sys.n_eta() - nw) = dk.Q[i];
    Eigen::MatrixXd rhs = sys.F_bar * eta + sys.B2_bar * mb.topRows(nm) +
                          sys.B3_bar * mb.bottomRows(nx).bottomRows(nx - nm) + sys.B4_bar * dk.N[i];
    for (int k = 0; k < n; ++k) rhs.noalias() += wz[k] * sys.B1_bar[k] * mb.middleRows(k * nx, nx);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(sys.n_eta());
    for (int j = 1; j < nt; ++j) {
      acc += 0.5 * dtau * (rhs.col(j - 1) + rhs.col(j));
      ode_num += (eta.col(j) - eta.col(0) - acc).squaredNorm();
      ode_den += eta.col(j).squaredNorm();
    }
  }
  KernelEquationResidual out;
  out.pde = pde_den > 0 ? std::sqrt(pde_num / pde_den) : std::sqrt(pde_num);
  out.boundary = bc_den > 0 ? std::sqrt(bc_num / bc_den) : std::sqrt(bc_num);
  out.ode = ode_den > 0 ? std::sqrt(ode_num / ode_den) : std::sqrt(ode_num);
  return out;
}

SynthesisResult synthesize(const PlantModel& model, const SignalModel& sig, const SynthesisOptions& opts) {
  SynthesisResult res;
  const Dimensions& d = model.dims;
  {
    const TransportGeometry g = transport_geometry(model);
    if (!(opts.T > g.T0))
      throw ValidationError("detection window T = " + std::to_string(opts.T) + " must exceed T0 = " +
                            std::to_string(g.T0));
  }
  if (opts.tau_intervals < 1) throw InputError("tau_intervals must be positive");
  const ReversedSystem rs0 = build_reversed_system(model, sig);
  res.kernels = solve_kernel(rs0, opts.points, opts.kernel);
  const int n = res.kernels.K.points();
  res.reversed = rs0.resampled(n);
  const ReversedSystem& rs = res.reversed;
  res.geometry = TransportGeometry(rs.gamma_bar, d.n_minus);
  res.target = target_matrices(rs, res.kernels);

  const double dtau = opts.T / opts.tau_intervals;
  const PsiStencil psi(res.geometry, res.target.A0_tilde, rs.Q1, dtau);
  res.param = parametrize(rs, res.geometry, res.target, psi);
  const int nm = d.n_minus, nx = d.n_x(), neta = rs.n_eta();
  const double tp = grid_ceil(res.geometry.tau_plus, dtau), tm = grid_ceil(res.geometry.tau_minus, dtau);
  if (!(opts.T - tp - tm > 0.5 * dtau))
    throw ValidationError("detection window T = " + std::to_string(opts.T) +
                          " leaves no steering interval after rounding the transport times to tau_step");
  res.param.W_gram = Eigen::kroneckerProduct(steering_gramian(res.param.mu, opts.T - tp - tm),
                                             Eigen::MatrixXd::Identity(nm, nm));

  for (int i = 0; i < d.n_f; ++i) {
    IdentifiabilityResult id = identifiability_check(res.param.W0, rs.eta0[i]);
    res.identifiability.push_back(id);
    if (!id.identifiable)
      throw ValidationError("fault " + std::to_string(i + 1) + " is not identifiable: rank W0 = " +
                            std::to_string(id.rank_W0) + ", augmented rank " + std::to_string(id.rank_augmented));
    if (id.consistency > 1e-8)
      throw SolverError("trajectory", "pseudo-inverse of W0 misses η⁰ (relative " + std::to_string(id.consistency) + ")");
  }

  const EtaStencil es = eta_stencil(psi, res.target, res.param.F_adj);
  const Eigen::MatrixXd Tinv = transform_operator(res.kernels.K_I, 1.0);
  const int nt = opts.tau_intervals + 1;
  const int j_lo = psi.offset_min(), j_hi = opts.tau_intervals + psi.offset_max();
  const std::vector<double> wz = trapezoid(n, 1.0 / (n - 1));

  DiagnosisKernels& dk = res.dk;
  dk.dims = d;
  dk.n_v = sig.n_v();
  dk.T = opts.T;
  dk.tau_step = dtau;
  dk.points = n;

  for (int i = 0; i < d.n_f; ++i) {
    Eigen::MatrixXd X0(neta, nm);
    for (int j = 0; j < neta; ++j) X0.row(j) = res.param.xi0[i].segment(j * nm, nm).transpose();
    ReferencePlan plan = plan_reference(res.param.mu, X0, tp, tm, opts.T, dtau, j_lo, j_hi);

    const Eigen::MatrixXd mt = psi.apply(plan.trace, j_lo, 0, nt);
    Eigen::MatrixXd Xi(neta * nm, plan.count());
    for (int c = 0; c < plan.count(); ++c) Xi.col(c) = stack_xi(plan.xi[c]);
    Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(neta, nt);
    for (std::size_t o = 0; o < es.E.size(); ++o)
      eta.noalias() += es.E[o] * Xi.middleCols(es.o_min + static_cast<int>(o) - j_lo, nt);

    const Eigen::VectorXd& e0 = rs.eta0[i];
    const int nv = neta - d.n_w;
    if ((eta.col(0) - e0).norm() > 1e-8 * (1.0 + e0.norm()))
      throw SolverError("trajectory", "initial condition η(0) missed for fault " + std::to_string(i + 1));
    eta.col(0).tail(nv) = e0.tail(nv);

    const Eigen::MatrixXd mb = Tinv * mt;
    Eigen::MatrixXd nvec = mb.middleRows((n - 1) * nx, nm) +
                           rs.Q0.transpose() * mb.middleRows((n - 1) * nx + nm, nx - nm);
    if (d.n_w) nvec += rs.L2.transpose() * rs.J * eta;
    for (int k = 0; k < n; ++k) nvec.noalias() += wz[k] * rs.A0_bar[k].transpose() * mb.middleRows(k * nx, nx);

    Eigen::MatrixXd M(n * nx, nt);
    for (int k = 0; k < n; ++k) M.middleRows(k * nx, nx) = mb.middleRows((n - 1 - k) * nx, nx);
    dk.M.push_back(std::move(M));
    dk.N.push_back(std::move(nvec));
    dk.P.push_back(eta.topRows(d.n_w));
    dk.Q.push_back(eta.bottomRows(nv));
    res.plans.push_back(std::move(plan));
  }
  output_kernels(model, dk);
  if (!opts.keep_M) dk.M.clear();
  return res;
}

// ---------------------------------------------------------------------------
// Kernel files

namespace {

constexpr const char* kKernelMagic = "hypdiag-kernels 1";

struct ArrayRef {
  std::string name;
  int fault;
  std::vector<Eigen::MatrixXd>* store;
};

std::vector<ArrayRef> kernel_arrays(DiagnosisKernels& dk, bool include_M) {
  std::vector<ArrayRef> a;
  for (int i = 0; i < dk.n_f(); ++i) {
    if (include_M) a.push_back({"M", i, &dk.M});
    a.push_back({"N", i, &dk.N});
    a.push_back({"P", i, &dk.P});
    a.push_back({"Q", i, &dk.Q});
    a.push_back({"MB", i, &dk.MB});
    a.push_back({"ME", i, &dk.ME});
    a.push_back({"MG", i, &dk.MG});
    a.push_back({"MGbar", i, &dk.MGbar});
  }
  return a;
}

}  // namespace

void write_kernels(const std::string& path, const DiagnosisKernels& dk_in, bool include_M) {
  DiagnosisKernels dk = dk_in;
  include_M = include_M && dk.M.size() == dk.N.size();
  const Dimensions& d = dk.dims;
  nlohmann::ordered_json h;
  h["dimensions"] = {{"n_minus", d.n_minus}, {"n_plus", d.n_plus}, {"n_w", d.n_w},
                     {"n_u", d.n_u},         {"n_f", d.n_f},       {"n_d", d.n_d},
                     {"n_d_tilde", d.n_d_tilde}, {"n_d_bar", d.n_d_bar}};
  h["n_v"] = dk.n_v;
  h["T"] = dk.T;
  h["tau_step"] = dk.tau_step;
  h["points"] = dk.points;
  h["n_tau"] = dk.n_tau();
  h["f_B"] = std::vector<double>(dk.f_B.data(), dk.f_B.data() + dk.f_B.size());
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  const std::vector<ArrayRef> refs = kernel_arrays(dk, include_M);
  for (const ArrayRef& r : refs) {
    const Eigen::MatrixXd& m = (*r.store)[r.fault];
    arr.push_back({{"name", r.name}, {"fault", r.fault}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  h["arrays"] = arr;
  h["layout"] = "row-major float64 little-endian";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write kernel file '" + path + "'");
  out << kKernelMagic << "\n" << h.dump() << "\n";
  for (const ArrayRef& r : refs) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m = (*r.store)[r.fault];
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw InputError("write failed for kernel file '" + path + "'");
}

DiagnosisKernels read_kernels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open kernel file '" + path + "'");
  std::string magic, header;
  std::getline(in, magic);
  if (magic != kKernelMagic) throw InputError("kernel file '" + path + "': unrecognized format '" + magic + "'");
  std::getline(in, header);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("kernel file '" + path + "': bad header: " + e.what());
  }
  DiagnosisKernels dk;
  try {
    const auto& dj = h.at("dimensions");
    dk.dims = {dj.at("n_minus"), dj.at("n_plus"), dj.at("n_w"), dj.at("n_u"),
               dj.at("n_f"),     dj.at("n_d"),    dj.at("n_d_tilde"), dj.at("n_d_bar")};
    dk.n_v = h.at("n_v");
    dk.T = h.at("T");
    dk.tau_step = h.at("tau_step");
    dk.points = h.at("points");
    const std::vector<double> fb = h.at("f_B");
    dk.f_B = Eigen::Map<const Eigen::VectorXd>(fb.data(), static_cast<Eigen::Index>(fb.size()));
    const int nf = dk.dims.n_f;
    for (auto* v : {&dk.M, &dk.N, &dk.P, &dk.Q, &dk.MB, &dk.ME, &dk.MG, &dk.MGbar}) v->clear();
    bool has_M = false;
    for (const auto& a : h.at("arrays"))
      if (a.at("name") == "M") has_M = true;
    for (auto* v : {&dk.N, &dk.P, &dk.Q, &dk.MB, &dk.ME, &dk.MG, &dk.MGbar}) v->resize(nf);
    if (has_M) dk.M.resize(nf);
    for (const auto& a : h.at("arrays")) {
      const std::string name = a.at("name");
      const int fault = a.at("fault");
      const Eigen::Index rows = a.at("rows"), cols = a.at("cols");
      std::vector<Eigen::MatrixXd>* store = name == "M"       ? &dk.M
                                            : name == "N"     ? &dk.N
                                            : name == "P"     ? &dk.P
                                            : name == "Q"     ? &dk.Q
                                            : name == "MB"   ? &dk.MB
                                            : name == "ME"   ? &dk.ME
                                            : name == "MG"   ? &dk.MG
                                            : name == "MGbar" ? &dk.MGbar
                                                               : nullptr;
      if (!store || fault < 0 || fault >= nf) throw InputError("kernel file '" + path + "': bad array entry");
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(rows, cols);
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
      if (!in) throw InputError("kernel file '" + path + "': truncated payload");
      (*store)[fault] = m;
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("kernel file '" + path + "': " + e.what());
  }
  return dk;
}

void write_kernels_csv(const std::string& path, const DiagnosisKernels& dk) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << "tau";
  auto cols = [&](const char* tag, const std::vector<Eigen::MatrixXd>& v) {
    for (int i = 0; i < dk.n_f(); ++i)
      for (Eigen::Index r = 0; r < v[i].rows(); ++r) out << ',' << tag << '_' << (i + 1) << '_' << (r + 1);
  };
  cols("N", dk.N);
  cols("MB", dk.MB);
  cols("MGbar", dk.MGbar);
  cols("P", dk.P);
  cols("Q", dk.Q);
  out << '\n' << std::setprecision(12);
  for (int j = 0; j < dk.n_tau(); ++j) {
    out << dk.tau(j);
    for (const auto* v : {&dk.N, &dk.MB, &dk.MGbar, &dk.P, &dk.Q})
      for (int i = 0; i < dk.n_f(); ++i)
        for (Eigen::Index r = 0; r < (*v)[i].rows(); ++r) out << ',' << (*v)[i](r, j);
    out << '\n';
  }
}

}  // namespace hypdiag
