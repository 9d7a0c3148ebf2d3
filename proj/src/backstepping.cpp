#include "hypdiag/backstepping.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hypdiag/errors.hpp"

namespace hypdiag {

KernelField::KernelField(int points, int nx)
    : points_(points), nx_(nx), data_(static_cast<std::size_t>(nx) * nx * points * points, 0.0) {}

Eigen::MatrixXd KernelField::at(int k, int l) const {
  Eigen::MatrixXd m(nx_, nx_);
  for (int r = 0; r < nx_; ++r)
    for (int c = 0; c < nx_; ++c) m(r, c) = (*this)(k, l, r, c);
  return m;
}

void KernelField::set(int k, int l, const Eigen::MatrixXd& m) {
  for (int r = 0; r < nx_; ++r)
    for (int c = 0; c < nx_; ++c) (*this)(k, l, r, c) = m(r, c);
}

namespace {

// Linear interpolation on the lower triangle of a points×points array,
// cells split along the diagonal direction.
inline double tri_interp(const double* f, int n, double z, double zeta) {
  const double sz = std::clamp(z, 0.0, 1.0) * (n - 1);
  double sq = std::clamp(zeta, 0.0, 1.0) * (n - 1);
  if (sq > sz) sq = sz;
  int i = static_cast<int>(sz);
  int j = static_cast<int>(sq);
  if (i > n - 2) i = n - 2;
  if (j > n - 2) j = n - 2;
  if (j > i) j = i;
  const double u = sz - i, v = sq - j;
  const double* row = f + static_cast<std::size_t>(i) * n;
  const double* next = row + n;
  if (u >= v || i == j) return row[j] + u * (next[j] - row[j]) + std::min(u, v) * (next[j + 1] - next[j]);
  return row[j] + v * (row[j + 1] - row[j]) + u * (next[j + 1] - row[j + 1]);
}

// Θ_j on the nodes, monotone, with O(1) inversion through bucket hints.
class ThetaTable {
 public:
  ThetaTable(const std::vector<double>& nodes) : n_(static_cast<int>(nodes.size())) {
    sign_ = nodes.back() > 0.0 ? 1.0 : -1.0;
    u_.resize(n_);
    for (int k = 0; k < n_; ++k) u_[k] = sign_ * nodes[k];
    const int buckets = 4 * n_;
    du_ = u_.back() / buckets;
    hint_.resize(buckets + 1);
    int k = 0;
    for (int b = 0; b <= buckets; ++b) {
      const double u = b * du_;
      while (k + 1 < n_ - 1 && u_[k + 1] <= u) ++k;
      hint_[b] = k;
    }
  }

  double value(int k) const { return sign_ * u_[k]; }
  double lo() const { return sign_ > 0 ? 0.0 : -u_.back(); }
  double hi() const { return sign_ > 0 ? u_.back() : 0.0; }

  double inverse(double a) const {
    double u = sign_ * a;
    if (u <= 0.0) return 0.0;
    if (u >= u_.back()) return 1.0;
    int b = static_cast<int>(u / du_);
    if (b >= static_cast<int>(hint_.size())) b = static_cast<int>(hint_.size()) - 1;
    int k = hint_[b];
    while (k + 1 < n_ - 1 && u_[k + 1] <= u) ++k;
    const double t = (u - u_[k]) / (u_[k + 1] - u_[k]);
    return (k + t) / (n_ - 1);
  }

 private:
  int n_;
  double sign_;
  double du_;
  std::vector<double> u_;
  std::vector<int> hint_;
};

enum class EndKind : unsigned char { Diagonal, Bottom, Right };

struct PathEnd {
  double s;
  double z;
  double zeta;
  EndKind kind;
};

struct PathInfo {
  double s_end;
  double z_end;
  double fixed;  // λ_c K at the end for Diagonal / Right data
  int steps;
  bool bottom;   // value taken from the constrained bottom edge
};

struct Solver {
  const ReversedSystem& sys;
  int n, nx, nm;
  double h;
  std::vector<ThetaTable> theta;
  std::vector<std::vector<double>> lam;   // lam[j][k]
  std::vector<double> abar;               // abar[(c*nx+p)*n + k] = Ā_cp(z_k)
  std::vector<std::vector<double>> cgrid; // C_pc(m,l) per nonzero entry
  std::vector<std::pair<int, int>> cnz;
  std::vector<std::vector<PathInfo>> paths;  // per entry, per node k*n+l
  std::vector<double> lam_max;

  explicit Solver(const ReversedSystem& s) : sys(s) {
    n = s.points();
    nx = s.dims.n_x();
    nm = s.dims.n_minus;
    h = 1.0 / (n - 1);
    const TransportGeometry geo(s.gamma_bar, nm);
    for (int j = 0; j < nx; ++j) theta.emplace_back(geo.Theta_nodes(j));
    lam.assign(nx, std::vector<double>(n));
    lam_max.assign(nx, 0.0);
    for (int j = 0; j < nx; ++j)
      for (int k = 0; k < n; ++k) {
        lam[j][k] = s.lambda(j, k);
        lam_max[j] = std::max(lam_max[j], std::fabs(lam[j][k]));
      }
    abar.assign(static_cast<std::size_t>(nx) * nx * n, 0.0);
    for (int c = 0; c < nx; ++c)
      for (int p = 0; p < nx; ++p)
        for (int k = 0; k < n; ++k) abar[(c * nx + p) * n + k] = s.A_bar[k](c, p);
    for (int p = 0; p < nx; ++p)
      for (int c = 0; c < nx; ++c) {
        std::vector<double> g(static_cast<std::size_t>(n) * n, 0.0);
        bool any = false;
        for (int m = 0; m < n; ++m)
          for (int l = 0; l <= m; ++l) {
            g[m * n + l] = s.C.at(m, l)(p, c);
            any = any || g[m * n + l] != 0.0;
          }
        if (any) {
          cnz.emplace_back(p, c);
          cgrid.push_back(std::move(g));
        }
      }
  }

  bool constrained(int r, int c) const { return r < nm && c < nm && c >= r; }

  double lam_at(int j, double z) const {
    const auto [k, t] = locate(z, n);
    return (1.0 - t) * lam[j][k] + t * lam[j][k + 1];
  }

  double diag_value(int r, int c, double z) const {
    const auto [k, t] = locate(z, n);
    const double lr = lam_at(r, z), lc = lam_at(c, z);
    const double a = (1.0 - t) * abar[(c * nx + r) * n + k] + t * abar[(c * nx + r) * n + k + 1];
    return lr * a / (lr - lc);
  }

  PathEnd trace(int r, int c, int k, int l, double dir) const {
    const ThetaTable& tr = theta[r];
    const ThetaTable& tc = theta[c];
    const double ar = tr.value(k), ac = tc.value(l);
    const double sr = dir > 0 ? tr.hi() - ar : ar - tr.lo();
    const double sc = dir > 0 ? tc.hi() - ac : ac - tc.lo();
    const double smax = std::max(0.0, std::min(sr, sc));
    auto zs = [&](double s) { return tr.inverse(ar + dir * s); };
    auto qs = [&](double s) { return tc.inverse(ac + dir * s); };
    if (r != c) {
      if (k == l) {
        // on the diagonal d(z − ζ)/ds = λ_r − λ_c; the side where it turns negative carries the data
        if (dir * (lam[r][k] - lam[c][k]) < 0.0) return {0.0, k * h, k * h, EndKind::Diagonal};
      } else if (zs(smax) - qs(smax) < 0.0) {
        double a = 0.0, b = smax;
        for (int it = 0; it < 60 && b - a > 1e-14; ++it) {
          const double m = 0.5 * (a + b);
          if (zs(m) - qs(m) >= 0.0) a = m;
          else b = m;
        }
        const double s = 0.5 * (a + b);
        const double zc = 0.5 * (zs(s) + qs(s));
        return {dir * s, zc, zc, EndKind::Diagonal};
      }
    }
    const double ze = zs(smax), qe = std::min(qs(smax), ze);
    // the coordinate whose limit binds decides the edge: z = 1 or ζ = 1 is the
    // right edge, ζ = 0 or z = 0 (then also ζ = 0) the bottom
    const bool right = sr < sc ? ze > 0.5 : qe > 0.5;
    if (!right) return {dir * smax, ze, 0.0, EndKind::Bottom};
    return {dir * smax, ze, qe, EndKind::Right};
  }

  void build_paths() {
    paths.assign(nx * nx, std::vector<PathInfo>(static_cast<std::size_t>(n) * n));
    for (int r = 0; r < nx; ++r)
      for (int c = 0; c < nx; ++c) {
        const double corner = r == c ? 0.0 : diag_value(r, c, 1.0);
        const double vmax = std::max(lam_max[r], lam_max[c]);
        auto& P = paths[r * nx + c];
        for (int k = 0; k < n; ++k)
          for (int l = 0; l <= k; ++l) {
            const PathEnd ends[2] = {trace(r, c, k, l, -1.0), trace(r, c, k, l, 1.0)};
            const PathEnd* pick = nullptr;
            for (const auto& e : ends)
              if (e.kind == EndKind::Diagonal) pick = &e;
            if (!pick && constrained(r, c))
              for (const auto& e : ends)
                if (e.kind == EndKind::Bottom) pick = &e;
            if (!pick)
              for (const auto& e : ends)
                if (e.kind == EndKind::Right) pick = &e;
            if (!pick)
              throw SolverError("kernel", "characteristic without data end at entry (" + std::to_string(r) + "," + std::to_string(c) + ") node (" + std::to_string(k) + "," + std::to_string(l) + ") ends " + std::to_string(int(ends[0].kind)) + std::to_string(int(ends[1].kind)));
            PathInfo info{};
            info.s_end = pick->s;
            info.z_end = pick->z;
            info.bottom = pick->kind == EndKind::Bottom;
            if (pick->kind == EndKind::Diagonal)
              info.fixed = lam_at(c, pick->z) * diag_value(r, c, pick->z);
            else if (pick->kind == EndKind::Right)
              info.fixed = lam_at(c, pick->zeta) * corner;
            info.steps = std::max(1, static_cast<int>(std::ceil(std::fabs(info.s_end) * vmax / h)));
            P[k * n + l] = info;
          }
      }
  }

  // g_rc = λ_c(ζ) times the right-hand side of the kernel PDE.
  void source(const KernelField& K, std::vector<std::vector<double>>& g) const {
    const std::size_t nn = static_cast<std::size_t>(n) * n;
    const std::vector<double> w(n, h);
    std::vector<double> y(nn);
    for (int r = 0; r < nx; ++r) {
      for (int c = 0; c < nx; ++c) {
        auto& out = g[r * nx + c];
        out.assign(nn, 0.0);
        for (int p = 0; p < nx; ++p) {
          const double* kp = K.entry_data(r, p);
          const double* a = &abar[(c * nx + p) * n];
          if (p == c) continue;
          for (int k = 0; k < n; ++k)
            for (int l = 0; l <= k; ++l) out[k * n + l] -= kp[k * n + l] * lam[p][l] * a[l];
        }
      }
      for (std::size_t q = 0; q < cnz.size(); ++q) {
        const auto [p, c] = cnz[q];
        const double* cg = cgrid[q].data();
        auto& out = g[r * nx + c];
        if (r == p)
          for (int k = 0; k < n; ++k)
            for (int l = 0; l <= k; ++l) out[k * n + l] += lam[r][k] * cg[k * n + l];
        const double* kp = K.entry_data(r, p);
        for (int k = 0; k < n; ++k) {
          for (int m = 0; m <= k; ++m) y[m] = kp[k * n + m] * lam[p][m];
          for (int l = 0; l < k; ++l) {
            double acc = 0.5 * (y[l] * cg[l * n + l] + y[k] * cg[k * n + l]);
            for (int m = l + 1; m < k; ++m) acc += y[m] * cg[m * n + l];
            out[k * n + l] -= h * acc;
          }
        }
      }
      for (int c = 0; c < nx; ++c) {
        auto& out = g[r * nx + c];
        for (int k = 0; k < n; ++k)
          for (int l = 0; l <= k; ++l) out[k * n + l] *= lam[c][l];
      }
    }
  }

  // One application of the integrated characteristic map.
  double sweep(const KernelField& K, KernelField& next, std::vector<std::vector<double>>& g) const {
    source(K, g);
    double inc = 0.0;
    // plus columns first: the constrained bottom data of a row reads them from `next`
    for (int r = 0; r < nx; ++r)
      for (int cc = 0; cc < nx; ++cc) {
        const int c = (cc + nm) % nx;
        const ThetaTable& tr = theta[r];
        const ThetaTable& tc = theta[c];
        const double* ge = g[r * nx + c].data();
        const double* kold = K.entry_data(r, c);
        double* knew = next.entry_data(r, c);
        const auto& P = paths[r * nx + c];
        for (int k = 0; k < n; ++k)
          for (int l = 0; l <= k; ++l) {
            const PathInfo& info = P[k * n + l];
            double gend = info.fixed;
            if (info.bottom) {
              const auto [kb, t] = locate(info.z_end, n);
              gend = 0.0;
              for (int p = nm; p < nx; ++p) {
                const double* kp = next.entry_data(r, p);
                const double kv = (1.0 - t) * kp[kb * n] + t * kp[(kb + 1) * n];
                gend += lam[p][0] * sys.Q1(c, p - nm) * kv;
              }
            }
            double integral = 0.0;
            if (info.s_end != 0.0) {
              const double ar = tr.value(k), ac = tc.value(l);
              const double ds = info.s_end / info.steps;
              double acc = 0.5 * ge[k * n + l];
              for (int i = 1; i <= info.steps; ++i) {
                const double s = i * ds;
                const double gv = tri_interp(ge, n, tr.inverse(ar + s), tc.inverse(ac + s));
                acc += i == info.steps ? 0.5 * gv : gv;
              }
              integral = acc * ds;
            }
            const double v = (gend - integral) / lam[c][l];
            inc = std::max(inc, std::fabs(v - kold[k * n + l]));
            knew[k * n + l] = v;
          }
      }
    return inc;
  }
};

Eigen::MatrixXd minus_plus_V(const Eigen::MatrixXd& Q1, int nm, int np) {
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(nm + np, nm);
  V.topRows(nm).setIdentity();
  V.bottomRows(np) = -Q1.transpose();
  return V;
}

}  // namespace

double KernelField::eval(int r, int c, double z, double zeta) const {
  if (z < -1e-12 || z > 1 + 1e-12 || zeta < -1e-12 || zeta > z + 1e-12)
    throw std::out_of_range("kernel evaluation outside the triangle");
  return tri_interp(entry_data(r, c), points_, z, zeta);
}

Eigen::MatrixXd KernelField::eval(double z, double zeta) const {
  Eigen::MatrixXd m(nx_, nx_);
  for (int r = 0; r < nx_; ++r)
    for (int c = 0; c < nx_; ++c) m(r, c) = eval(r, c, z, zeta);
  return m;
}

double KernelField::max_abs() const {
  double m = 0.0;
  for (int e = 0; e < nx_ * nx_; ++e)
    for (int k = 0; k < points_; ++k)
      for (int l = 0; l <= k; ++l)
        m = std::max(m, std::fabs(data_[static_cast<std::size_t>(e) * points_ * points_ + k * points_ + l]));
  return m;
}

TabulatedFunction target_coupling(const ReversedSystem& sys, const KernelField& K) {
  const int n = K.points(), nm = sys.dims.n_minus, np = sys.dims.n_plus;
  const Eigen::MatrixXd V = minus_plus_V(sys.Q1, nm, np);
  Eigen::VectorXd lam0(nm + np);
  for (int j = 0; j < nm + np; ++j) lam0[j] = sys.lambda(j, 0);
  TabulatedFunction out(n, nm + np, nm);
  for (int k = 0; k < n; ++k) {
    Eigen::VectorXd gam = sys.gamma_bar[k].col(0);
    out[k] = -(gam.asDiagonal() * K.at(k, 0) * lam0.asDiagonal() * V);
    // the constrained block vanishes up to rounding; make the structure exact
    for (int r = 0; r < nm; ++r)
      for (int c = r; c < nm; ++c) out[k](r, c) = 0.0;
  }
  return out;
}

BacksteppingKernelPair solve_kernel(const ReversedSystem& sys_in, int points,
                                    const KernelSolverOptions& opts) {
  const ReversedSystem sys = points > 0 ? sys_in.resampled(points) : sys_in;
  const int n = sys.points(), nx = sys.dims.n_x(), nm = sys.dims.n_minus;
  if (n < 3) throw DimensionError("kernel: grid needs at least 3 points");
  Solver solver(sys);
  solver.build_paths();

  BacksteppingKernelPair out;
  KernelField K(n, nx), next(n, nx);
  std::vector<std::vector<double>> g(nx * nx);
  double inc = 0.0;
  int it = 0;
  for (it = 1; it <= opts.max_iterations; ++it) {
    inc = solver.sweep(K, next, g);
    if (std::getenv("HYPDIAG_TRACE")) std::fprintf(stderr, "sweep %d inc %.3e\n", it, inc);
    std::swap(K, next);
    if (!std::isfinite(inc)) throw SolverError("kernel", "iteration diverged");
    if (inc < opts.tolerance) break;
  }
  if (inc >= opts.tolerance)
    throw SolverError("kernel", "no convergence after " + std::to_string(opts.max_iterations) +
                                    " sweeps, last increment " + std::to_string(inc));
  out.info.iterations = it;
  out.info.last_increment = inc;
  out.info.characteristic_residual = solver.sweep(K, next, g);

  double dres = 0.0, eres = 0.0;
  for (int k = 0; k < n; ++k)
    for (int r = 0; r < nx; ++r)
      for (int c = 0; c < nx; ++c) {
        const double lhs = (solver.lam[r][k] - solver.lam[c][k]) * K(k, k, r, c);
        dres = std::max(dres, std::fabs(lhs - solver.lam[r][k] * sys.A_bar[k](c, r)));
      }
  const Eigen::MatrixXd V = minus_plus_V(sys.Q1, nm, sys.dims.n_plus);
  Eigen::VectorXd lam0(nx);
  for (int j = 0; j < nx; ++j) lam0[j] = solver.lam[j][0];
  for (int k = 0; k < n; ++k) {
    const Eigen::MatrixXd e = K.at(k, 0) * lam0.asDiagonal() * V;
    for (int r = 0; r < nm; ++r)
      for (int c = r; c < nm; ++c) eres = std::max(eres, std::fabs(e(r, c)));
  }
  out.info.diagonal_residual = dres;
  out.info.edge_residual = eres;
  out.A0_tilde = target_coupling(sys, K);
  out.K_I = solve_inverse_kernel(K);
  out.info.inverse_residual = inverse_kernel_residual(K, out.K_I);
  out.K = std::move(K);
  return out;
}

KernelField solve_inverse_kernel(const KernelField& K) {
  const int n = K.points(), nx = K.n_x();
  const double h = K.step();
  KernelField KI(n, nx);
  // discrete operator 𝒯 = I − W with W_kl = w_kl K(k,l); (I + X) = 𝒯⁻¹ solves
  // (I − W_kk) X_kl = W_kl + Σ_{m=l}^{k−1} W_km X_ml.
  std::vector<Eigen::MatrixXd> X(static_cast<std::size_t>(n) * n);
  auto w = [&](int k, int l) { return (l == 0 || l == k) ? 0.5 * h : h; };
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(nx, nx);
  for (int k = 0; k < n; ++k) {
    const Eigen::MatrixXd Wkk = k == 0 ? Eigen::MatrixXd::Zero(nx, nx) : Eigen::MatrixXd(w(k, k) * K.at(k, k));
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(I - Wkk);
    std::vector<Eigen::MatrixXd> Wrow(k + 1);
    for (int m = 0; m <= k; ++m) Wrow[m] = k == 0 ? Eigen::MatrixXd::Zero(nx, nx) : Eigen::MatrixXd(w(k, m) * K.at(k, m));
    for (int l = 0; l <= k; ++l) {
      Eigen::MatrixXd rhs = Wrow[l];
      for (int m = l; m < k; ++m) rhs.noalias() += Wrow[m] * X[m * n + l];
      X[k * n + l] = lu.solve(rhs);
      if (k > 0) KI.set(k, l, X[k * n + l] / w(k, l));
    }
  }
  KI.set(0, 0, K.at(0, 0));
  return KI;
}

double inverse_kernel_residual(const KernelField& K, const KernelField& KI) {
  const int n = K.points(), nx = K.n_x();
  const double h = K.step();
  std::vector<Eigen::MatrixXd> kk(static_cast<std::size_t>(n) * n), ki(kk.size());
  for (int k = 0; k < n; ++k)
    for (int l = 0; l <= k; ++l) {
      kk[k * n + l] = K.at(k, l);
      ki[k * n + l] = KI.at(k, l);
    }
  double res = 0.0;
  Eigen::MatrixXd acc(nx, nx);
  for (int k = 0; k < n; ++k)
    for (int l = 0; l <= k; ++l) {
      acc.setZero();
      for (int m = l; m <= k && k > l; ++m) {
        const double wm = (m == l || m == k) ? 0.5 * h : h;
        acc.noalias() += wm * kk[k * n + m] * ki[m * n + l];
      }
      res = std::max(res, (ki[k * n + l] - kk[k * n + l] - acc).cwiseAbs().maxCoeff());
    }
  return res;
}

Eigen::MatrixXd transform_operator(const KernelField& K, double sign) {
  const int n = K.points(), nx = K.n_x();
  const double h = K.step();
  Eigen::MatrixXd T = Eigen::MatrixXd::Identity(n * nx, n * nx);
  for (int k = 1; k < n; ++k)
    for (int l = 0; l <= k; ++l) {
      const double w = (l == 0 || l == k) ? 0.5 * h : h;
      T.block(k * nx, l * nx, nx, nx) += sign * w * K.at(k, l);
    }
  return T;
}

namespace {

Eigen::MatrixXd apply_kernel(const Eigen::MatrixXd& h, const KernelField& K, double sign) {
  const int n = K.points(), nx = K.n_x();
  if (h.rows() != nx || h.cols() != n)
    throw DimensionError("transform: profile is " + std::to_string(h.rows()) + "x" +
                         std::to_string(h.cols()) + ", kernel grid needs " + std::to_string(nx) +
                         "x" + std::to_string(n));
  const double dz = K.step();
  Eigen::MatrixXd out = h;
  for (int k = 1; k < n; ++k) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(nx);
    for (int l = 0; l <= k; ++l) {
      const double w = (l == 0 || l == k) ? 0.5 * dz : dz;
      acc.noalias() += w * K.at(k, l) * h.col(l);
    }
    out.col(k) += sign * acc;
  }
  return out;
}

}  // namespace

Eigen::MatrixXd transform(const Eigen::MatrixXd& h, const KernelField& K) { return apply_kernel(h, K, -1.0); }

Eigen::MatrixXd inverse_transform(const Eigen::MatrixXd& h, const KernelField& K_I) {
  return apply_kernel(h, K_I, 1.0);
}

TargetSystemData target_matrices(const ReversedSystem& sys_in, const BacksteppingKernelPair& kp) {
  const KernelField& KI = kp.K_I;
  const int n = KI.points();
  const ReversedSystem sys = sys_in.resampled(n);
  const int nx = sys.dims.n_x(), nm = sys.dims.n_minus, np = sys.dims.n_plus;
  const int neta = sys.n_eta();
  if (sys.B4_bar.cols() != sys.L2.cols() || sys.L2.rows() != sys.J.rows())
    throw DimensionError("target matrices: B̄4, L2, J mismatch");
  const double h = KI.step();

  Eigen::MatrixXd Jm = Eigen::MatrixXd::Zero(nm, nx), Jp = Eigen::MatrixXd::Zero(np, nx);
  Jm.leftCols(nm).setIdentity();
  Jp.rightCols(np).setIdentity();
  static_assert(kTargetBoundaryCoupling == TargetBoundaryCoupling::Q0Transpose);
  const Eigen::MatrixXd boundary = Jm + sys.Q0.transpose() * Jp;  // n_minus × n_x

  TargetSystemData t;
  t.F_tilde = sys.F_bar + sys.B4_bar * sys.L2.transpose() * sys.J;
  t.B2_tilde = sys.B2_bar * Jm;
  t.B3_tilde = sys.B3_bar * Jp + sys.B4_bar * boundary;
  t.A0_tilde = kp.A0_tilde;
  t.B1_tilde = TabulatedFunction(n, neta, nx);
  for (int k = 0; k < n; ++k) {
    Eigen::MatrixXd b1 = Eigen::MatrixXd::Zero(neta, nx);
    Eigen::MatrixXd a0 = Eigen::MatrixXd::Zero(nm, nx);
    for (int m = k; m < n && k < n - 1; ++m) {
      const double w = (m == k || m == n - 1) ? 0.5 * h : h;
      const Eigen::MatrixXd kim = KI.at(m, k);
      b1.noalias() += w * sys.B1_bar[m] * kim;
      a0.noalias() += w * sys.A0_bar[m].transpose() * kim;
    }
    const Eigen::MatrixXd k1 = KI.at(n - 1, k);
    t.B1_tilde[k] = sys.B1_bar[k] + b1 + sys.B3_bar * Jp * k1 +
                    sys.B4_bar * (boundary * k1 + sys.A0_bar[k].transpose() + a0);
  }
  return t;
}

void write_kernel_csv(const std::string& path, const KernelField& K) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path);
  os << std::setprecision(17);
  os << "# n_x=" << K.n_x() << ",points=" << K.points() << ",layout=lower-triangle\n";
  os << "k,l";
  for (int r = 0; r < K.n_x(); ++r)
    for (int c = 0; c < K.n_x(); ++c) os << ",K_" << r + 1 << "_" << c + 1;
  os << "\n";
  for (int k = 0; k < K.points(); ++k)
    for (int l = 0; l <= k; ++l) {
      os << k << "," << l;
      for (int r = 0; r < K.n_x(); ++r)
        for (int c = 0; c < K.n_x(); ++c) os << "," << K(k, l, r, c);
      os << "\n";
    }
}

KernelField read_kernel_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read " + path);
  std::string line;
  std::getline(is, line);
  int nx = 0, points = 0;
  if (std::sscanf(line.c_str(), "# n_x=%d,points=%d", &nx, &points) != 2 || nx < 1 || points < 2)
    throw InputError(path + ": malformed kernel header");
  std::getline(is, line);
  KernelField K(points, nx);
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (static_cast<int>(v.size()) != 2 + nx * nx) throw InputError(path + ": wrong column count");
    const int k = static_cast<int>(v[0]), l = static_cast<int>(v[1]);
    if (k < 0 || k >= points || l < 0 || l > k) throw InputError(path + ": index out of range");
    for (int r = 0; r < nx; ++r)
      for (int c = 0; c < nx; ++c) K(k, l, r, c) = v[2 + r * nx + c];
    ++rows;
  }
  if (rows != static_cast<std::size_t>(points) * (points + 1) / 2)
    throw InputError(path + ": incomplete kernel dump");
  return K;
}

}  // namespace hypdiag
