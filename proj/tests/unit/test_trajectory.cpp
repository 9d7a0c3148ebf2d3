#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "hypdiag/errors.hpp"
#include "hypdiag/linalg.hpp"
#include "hypdiag/trajectory.hpp"

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

using namespace hypdiag;

namespace {

double poly(const Eigen::VectorXd& mu, double s) {
  double p = 0.0;
  for (Eigen::Index j = mu.size() - 1; j >= 0; --j) p = p * s + mu[j];
  return p;
}

// Two states with Γ̄ = diag(1, −1), no coupling.
TransportGeometry unit_geometry(int points) {
  const TabulatedFunction g = TabulatedFunction::sample(points, 2, 1, [](double) {
    Eigen::MatrixXd v(2, 1);
    v << 1.0, -1.0;
    return v;
  });
  return TransportGeometry(g, 1);
}

SampledSignal sampled(double t0, double dt, int count, double (*f)(double)) {
  SampledSignal s;
  s.t0 = t0;
  s.dt = dt;
  s.values.resize(1, count);
  for (int j = 0; j < count; ++j) s.values(0, j) = f(t0 + j * dt);
  return s;
}

double bump(double t) { return std::sin(2.0 * t) + 0.3 * t; }

DiagnosisKernels small_kernels() {
  DiagnosisKernels dk;
  dk.dims.n_minus = 2;
  dk.dims.n_plus = 1;
  dk.dims.n_w = 1;
  dk.dims.n_u = 1;
  dk.dims.n_f = 2;
  dk.dims.n_d = 1;
  dk.dims.n_d_bar = 1;
  dk.n_v = 3;
  dk.T = 1.0;
  dk.tau_step = 0.25;
  dk.points = 3;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> N(0.0, 1.0);
  auto rnd = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = N(rng);
    return m;
  };
  for (int i = 0; i < 2; ++i) {
    dk.M.push_back(rnd(9, 5));
    dk.N.push_back(rnd(2, 5));
    dk.P.push_back(rnd(1, 5));
    dk.Q.push_back(rnd(3, 5));
    dk.MB.push_back(rnd(1, 5));
    dk.ME.push_back(rnd(2, 5));
    dk.MG.push_back(rnd(1, 5));
    dk.MGbar.push_back(rnd(1, 5));
  }
  dk.f_B = Eigen::Vector2d(0.5, 1.0 / 3.0);
  return dk;
}

}  // namespace

TEST_CASE("Faddeev-LeVerrier on small cases") {
  Eigen::MatrixXd F(2, 2);
  F << 0, 1, 0, 0;
  const CharPoly cp = char_poly_and_adjugate(F);
  CHECK(cp.mu.isApprox(Eigen::Vector3d(0, 0, 1)));
  CHECK(cp.F_adj[0].isApprox(F));
  CHECK(cp.F_adj[1].isApprox(Eigen::MatrixXd::Identity(2, 2)));

  const CharPoly one = char_poly_and_adjugate(Eigen::MatrixXd::Zero(1, 1));
  CHECK(one.mu[0] == 0.0);
  CHECK(one.mu[1] == 1.0);
  CHECK(one.F_adj[0](0, 0) == 1.0);
}

TEST_CASE("adjugate expansion satisfies the polynomial identity") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd F(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) F(i, j) = N(rng);
  const CharPoly cp = char_poly_and_adjugate(F);
  CHECK(cp.mu[4] == 1.0);
  for (double s : {0.0, 1.0, 2.0, 3.0, 4.0}) {
    Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(4, 4);
    for (int j = 3; j >= 0; --j) adj = adj * s + cp.F_adj[j];
    const Eigen::MatrixXd lhs = adj * (s * Eigen::MatrixXd::Identity(4, 4) - F);
    const Eigen::MatrixXd rhs = poly(cp.mu, s) * Eigen::MatrixXd::Identity(4, 4);
    CHECK((lhs - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    const double det = (s * Eigen::MatrixXd::Identity(4, 4) - F).determinant();
    CHECK(poly(cp.mu, s) == doctest::Approx(det).epsilon(1e-10));
  }
}

TEST_CASE("companion form") {
  const Eigen::Vector4d mu(2.0, -1.0, 0.5, 1.0);
  const Eigen::MatrixXd C = companion(mu);
  REQUIRE(C.rows() == 3);
  CHECK(C(0, 1) == 1.0);
  CHECK(C(1, 2) == 1.0);
  CHECK(C(2, 0) == -2.0);
  CHECK(C(2, 1) == 1.0);
  CHECK(C(2, 2) == -0.5);
  const Eigen::VectorXd cp = char_poly_and_adjugate(C).mu;
  CHECK((cp - mu).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("matrix exponential against the reference implementation") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> N(0.0, 1.0);
  for (double scale : {0.1, 1.0, 10.0}) {
    Eigen::MatrixXd A(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) A(i, j) = scale * N(rng);
    const Eigen::MatrixXd ref = A.exp();
    CHECK((expm(A) - ref).norm() <= 1e-10 * ref.norm());
  }
}

TEST_CASE("numerical rank and pseudo-inverse") {
  Eigen::MatrixXd A(3, 2);
  A << 1, 2, 2, 4, 3, 6;
  CHECK(numerical_rank(A) == 1);
  const Eigen::MatrixXd P = pseudo_inverse(A);
  CHECK((A * P * A - A).norm() < 1e-12);
  CHECK(numerical_rank(Eigen::MatrixXd::Zero(2, 2)) == 0);
}

TEST_CASE("psi at the boundary and on zero data") {
  const TransportGeometry geo = unit_geometry(51);
  const TabulatedFunction A0 = TabulatedFunction::constant(51, Eigen::MatrixXd::Constant(2, 1, 0.4));
  Eigen::MatrixXd Q1(1, 1);
  Q1 << 0.7;
  const SampledSignal h = sampled(-2.0, 0.01, 501, bump);
  const Eigen::VectorXd at0 = psi_apply(geo, A0, Q1, h, 0.0, 0.37);
  CHECK(at0[0] == doctest::Approx(bump(0.37)));
  CHECK(at0[1] == doctest::Approx(-0.7 * bump(0.37)));
  SampledSignal zero = h;
  zero.values.setZero();
  CHECK(psi_apply(geo, A0, Q1, zero, 0.6, 0.2).isZero());
}

TEST_CASE("psi without coupling is a pure shift matching a characteristic solve") {
  // Target PDE ∂z m = Γ̄ ∂τ m with m⁻(0) = h, m⁺(0) = −Q1ᵀ h, marched in z by
  // upwind differences at unit Courant number.
  const int nz = 201, nt = 1001;
  const double dz = 1.0 / (nz - 1), dtau = dz, t0 = -2.0;
  const TransportGeometry geo = unit_geometry(nz);
  const TabulatedFunction A0(nz, 2, 1);
  Eigen::MatrixXd Q1(1, 1);
  Q1 << 0.7;
  const SampledSignal h = sampled(t0, dtau, nt, bump);

  Eigen::MatrixXd m(2, nt);
  for (int j = 0; j < nt; ++j) m.col(j) << h.values(0, j), -0.7 * h.values(0, j);
  double err = 0.0, ref = 0.0;
  for (int k = 1; k < nz; ++k) {
    Eigen::MatrixXd next = m;
    for (int j = 0; j < nt; ++j) {
      next(0, j) = j + 1 < nt ? m(0, j) + dz / dtau * (m(0, j + 1) - m(0, j)) : NAN;
      next(1, j) = j > 0 ? m(1, j) - dz / dtau * (m(1, j) - m(1, j - 1)) : NAN;
    }
    m = next;
    const double z = k * dz;
    for (int j = 300; j < 700; j += 7) {
      const Eigen::VectorXd p = psi_apply(geo, A0, Q1, h, z, t0 + j * dtau);
      err += (p - m.col(j)).squaredNorm();
      ref += m.col(j).squaredNorm();
    }
  }
  CHECK(std::sqrt(err / ref) < 1e-3);
}

TEST_CASE("psi stencil agrees with direct evaluation") {
  const ProblemConfig cfg = parse_config(testutil::example_json(), 41);
  const ReversedSystem rs = build_reversed_system(cfg.plant, cfg.signals);
  const BacksteppingKernelPair kp = solve_kernel(rs);
  const TransportGeometry geo(rs.gamma_bar, rs.dims.n_minus);
  const double dtau = 0.01;
  const PsiStencil psi(geo, kp.A0_tilde, rs.Q1, dtau);
  const int j0 = psi.offset_min() - 2, count = psi.offset_max() - j0 + 40;
  SampledSignal h;
  h.t0 = j0 * dtau;
  h.dt = dtau;
  h.values.resize(2, count);
  for (int j = 0; j < count; ++j) {
    const double t = (j0 + j) * dtau;
    h.values.col(j) << std::cos(t), std::sin(0.5 * t) + 0.1 * t;
  }
  const Eigen::MatrixXd out = psi.apply(h.values, j0, 0, 30);
  double err = 0.0;
  for (int k : {0, 10, 25, 40})
    for (int c : {0, 13, 29}) {
      const Eigen::VectorXd d = psi_apply(geo, kp.A0_tilde, rs.Q1, h, k / 40.0, c * dtau);
      err = std::max(err, (out.col(c).segment(k * 4, 4) - d).cwiseAbs().maxCoeff());
    }
  CHECK(err < 1e-2);
}

TEST_CASE("scalar steering toy") {
  // μ(s) = s: A_φ = 0, B_φ = 1, W(L) = L, χ = −ξ(τ⁺)/L.
  const Eigen::Vector2d mu(0.0, 1.0);
  CHECK(steering_gramian(mu, 3.5)(0, 0) == doctest::Approx(3.5));
  Eigen::MatrixXd X0(1, 1);
  X0 << 2.0;
  const double dtau = 0.05, tp = 1.0, tm = 0.5, T = 4.0;
  const ReferencePlan plan = plan_reference(mu, X0, tp, tm, T, dtau, -10, 100);
  const double L = T - tp - tm;
  for (int idx = 0; idx < plan.count(); ++idx) {
    const double t = plan.time(idx);
    if (t <= tp + 1e-12 || t >= T - tm - 1e-12) {
      CHECK(plan.trace(0, idx) == 0.0);
    } else {
      CHECK(plan.trace(0, idx) == doctest::Approx(-2.0 / L).epsilon(1e-12));
      CHECK(plan.xi[idx](0, 0) == doctest::Approx(2.0 - 2.0 * (t - tp) / L).epsilon(1e-10));
    }
    if (t <= tp + 1e-12) CHECK(plan.xi[idx](0, 0) == 2.0);
    if (t >= T - tm - 1e-12) CHECK(plan.xi[idx](0, 0) == 0.0);
  }
  CHECK(plan.terminal_residual < 1e-20);
}

TEST_CASE("double integrator Gramian") {
  const Eigen::Vector3d mu(0.0, 0.0, 1.0);
  const double L = 2.5;
  const Eigen::MatrixXd W = steering_gramian(mu, L);
  Eigen::Matrix2d ref;
  ref << L * L * L / 3, L * L / 2, L * L / 2, L;
  CHECK((W - ref).norm() < 1e-12 * ref.norm());
  CHECK((W - W.transpose()).norm() <= 1e-12 * W.norm());
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(W).eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("zero transition is planned as zero") {
  const Eigen::Vector4d mu(0.5, 1.0, 2.0, 1.0);
  const ReferencePlan plan = plan_reference(mu, Eigen::MatrixXd::Zero(3, 2), 0.8, 0.6, 5.0, 0.1, -6, 60);
  CHECK(plan.trace.isZero(0.0));
  for (const auto& X : plan.xi) CHECK(X.isZero(0.0));
  CHECK_THROWS_AS(plan_reference(mu, Eigen::MatrixXd::Zero(3, 2), 3.0, 2.0, 5.0, 0.1, -6, 60), ValidationError);
}

TEST_CASE("identifiability trivial cases") {
  Eigen::MatrixXd W0(3, 4);
  W0 << 1, 0, 2, 0, 0, 1, 0, 0, 1, 1, 2, 0;
  CHECK(identifiability_check(W0, Eigen::VectorXd::Zero(3)).identifiable);
  CHECK(identifiability_check(W0, W0 * Eigen::Vector4d(1, -2, 0.5, 3)).identifiable);
  const IdentifiabilityResult bad = identifiability_check(Eigen::MatrixXd::Zero(3, 4), Eigen::Vector3d(0, 1, 0));
  CHECK_FALSE(bad.identifiable);
  CHECK(bad.rank_W0 == 0);
  CHECK(bad.rank_augmented == 1);
  // rank-deficient W0 with η⁰ outside its range
  const IdentifiabilityResult out = identifiability_check(W0, Eigen::Vector3d(1, 0, 0));
  CHECK(out.rank_W0 == 2);
  CHECK_FALSE(out.identifiable);
}

TEST_CASE("threshold of a constant disturbance kernel") {
  DiagnosisKernels dk = small_kernels();
  dk.MGbar[0] = Eigen::MatrixXd::Constant(1, 5, -0.8);
  const Eigen::VectorXd delta = Eigen::VectorXd::Constant(1, 0.3);
  CHECK(thresholds(dk, delta)[0] == doctest::Approx(1.0 * 0.8 * 0.3));
}

TEST_CASE("kernel file roundtrip") {
  DiagnosisKernels dk = small_kernels();
  for (bool with_M : {false, true}) {
    const std::string path = "kernels_roundtrip.bin";
    write_kernels(path, dk, with_M);
    const DiagnosisKernels r = read_kernels(path);
    std::remove(path.c_str());
    CHECK(r.T == dk.T);
    CHECK(r.tau_step == dk.tau_step);
    CHECK(r.points == dk.points);
    CHECK(r.dims.n_minus == 2);
    CHECK(r.dims.n_u == 1);
    CHECK(r.f_B == dk.f_B);
    REQUIRE(r.n_f() == 2);
    for (int i = 0; i < 2; ++i) {
      CHECK(r.N[i] == dk.N[i]);
      CHECK(r.MB[i] == dk.MB[i]);
      CHECK(r.MGbar[i] == dk.MGbar[i]);
      CHECK(r.P[i] == dk.P[i]);
      CHECK(r.Q[i] == dk.Q[i]);
    }
    CHECK(r.M.size() == (with_M ? 2u : 0u));
    if (with_M) CHECK(r.M[1] == dk.M[1]);
  }
}

TEST_CASE("corrupt kernel file is rejected") {
  const std::string path = "kernels_bad.bin";
  {
    std::ofstream f(path);
    f << "not a kernel file\n";
  }
  CHECK_THROWS_AS(read_kernels(path), InputError);
  std::remove(path.c_str());
}

TEST_CASE("window at the transport bound is rejected") {
  auto j = testutil::example_json();
  const ProblemConfig cfg = parse_config(j, 41);
  SynthesisOptions o;
  o.T = transport_geometry(cfg.plant).T0;
  o.tau_intervals = 200;
  CHECK_THROWS_AS(synthesize(cfg.plant, cfg.signals, o), ValidationError);
}

TEST_CASE("coarse synthesis of the example") {
  const ProblemConfig cfg = parse_config(testutil::example_json(), 41);
  SynthesisOptions o;
  o.T = 40.0;
  o.tau_intervals = 800;
  const SynthesisResult r = synthesize(cfg.plant, cfg.signals, o);
  const DiagnosisKernels& dk = r.dk;
  REQUIRE(dk.n_f() == 3);
  CHECK((r.param.A_phi - Eigen::kroneckerProduct(r.param.A_c, Eigen::MatrixXd::Identity(2, 2))).norm() == 0.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(r.identifiability[i].identifiable);
    CHECK(r.plans[i].terminal_residual < 1e-8);
    const double mmax = dk.M[i].cwiseAbs().maxCoeff();
    CHECK(dk.M[i].col(0).cwiseAbs().maxCoeff() <= 1e-4 * mmax);
    CHECK(dk.M[i].col(dk.n_tau() - 1).cwiseAbs().maxCoeff() <= 1e-4 * mmax);
    CHECK(dk.Q[i].col(dk.n_tau() - 1).isZero(1e-10));
    CHECK(dk.Q[i].col(0) == r.reversed.eta0[i].tail(dk.Q[i].rows()));
    CHECK(dk.f_B[i] > 0.0);
  }
  const KernelEquationResidual res = kernel_equation_residual(r.reversed, dk);
  CHECK(res.total() < 5e-2);
}

TEST_CASE("no bounded disturbance channel gives zero thresholds") {
  auto j = testutil::example_json();
  j["plant"]["G_bar"] = 0;
  const ProblemConfig cfg = parse_config(j, 31);
  SynthesisOptions o;
  o.T = 40.0;
  o.tau_intervals = 400;
  o.keep_M = false;
  const SynthesisResult r = synthesize(cfg.plant, cfg.signals, o);
  CHECK(r.dk.f_B.isZero(0.0));
  CHECK(r.dk.M.empty());
}
