#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "hypdiag/backstepping.hpp"
#include "hypdiag/model.hpp"

namespace hypdiag {

/// Piecewise-linear vector signal on the grid t0 + j·dt.
struct SampledSignal {
  double t0 = 0.0;
  double dt = 1.0;
  Eigen::MatrixXd values;  ///< channels × samples

  int count() const { return static_cast<int>(values.cols()); }
  double t_end() const { return t0 + (count() - 1) * dt; }
  /// Throws std::out_of_range outside [t0, t_end].
  Eigen::VectorXd operator()(double t) const;
};

/// Ψ[h](z,τ) row j = V_j h(τ + Θ_j(z)) + ∫_0^z Ã0_j(ζ) h(τ + Θ_j(z) − Θ_j(ζ)) dζ,
/// V = [I; −Q1ᵀ]. Direct evaluation with trapezoidal quadrature on the
/// geometry grid.
Eigen::VectorXd psi_apply(const TransportGeometry& geo, const TabulatedFunction& A0_tilde,
                          const Eigen::MatrixXd& Q1, const SampledSignal& h, double z, double tau);

/// Ψ at every grid node as a shift stencil over the uniform time grid:
/// Ψ[h]_r(z_k, τ_j) = Σ_o coef(k,r).row(o − o_min)·h_{j+o}.
class PsiStencil {
 public:
  PsiStencil(const TransportGeometry& geo, const TabulatedFunction& A0_tilde, const Eigen::MatrixXd& Q1,
             double dtau);

  int points() const { return points_; }
  int n_x() const { return n_x_; }
  int n_minus() const { return n_minus_; }
  double dtau() const { return dtau_; }
  int offset_min() const { return o_lo_; }
  int offset_max() const { return o_hi_; }

  int entry_offset(int k, int r) const { return offsets_[k * n_x_ + r]; }
  const Eigen::MatrixXd& entry(int k, int r) const { return coef_[k * n_x_ + r]; }

  /// h sampled at j = j0, j0+1, …; returns (points·n_x) × count matrix of
  /// Ψ[h] at τ-indices j_first … j_first+count−1 (row k·n_x + r).
  Eigen::MatrixXd apply(const Eigen::MatrixXd& h, int j0, int j_first, int count) const;

 private:
  int points_, n_x_, n_minus_;
  double dtau_;
  int o_lo_ = 0, o_hi_ = 0;
  std::vector<int> offsets_;
  std::vector<Eigen::MatrixXd> coef_;
};

struct ParametrizationData {
  Eigen::VectorXd mu;                 ///< det(sI − F̃) coefficients, mu[n_η] = 1
  std::vector<Eigen::MatrixXd> F_adj;  ///< adj(sI − F̃) = Σ F_adj[j] s^j
  Eigen::MatrixXd A_c;                ///< n_η × n_η companion of mu
  Eigen::MatrixXd A_phi, B_phi;       ///< A_c ⊗ I, e_last ⊗ I
  Eigen::MatrixXd W0;                 ///< ξ⁰ ↦ η(0)
  std::vector<Eigen::VectorXd> xi0;
  Eigen::MatrixXd W_gram;             ///< steering Gramian on the open phase, ⊗ I
  int n_minus = 0;

  Eigen::MatrixXd Phi(double t) const;
};

struct IdentifiabilityResult {
  bool identifiable = false;
  int rank_W0 = 0;
  int rank_augmented = 0;
  double consistency = 0.0;  ///< ‖W0 ξ⁰ − η⁰‖ / (1 + ‖η⁰‖)
};

/// rank(W0) == rank([W0 η⁰]) with the 1e−10·σ_max rank threshold.
IdentifiabilityResult identifiability_check(const Eigen::MatrixXd& W0, const Eigen::VectorXd& eta0);

/// Stencil form of η(τ_j) = Σ_o E_o ξ_{j+o}; E_o is n_η × (n_η·n_minus) for
/// ξ stacked as (φ, φ', …, φ^{(n_η−1)}).
struct EtaStencil {
  int o_min = 0;
  std::vector<Eigen::MatrixXd> E;
};
EtaStencil eta_stencil(const PsiStencil& psi, const TargetSystemData& target,
                       const std::vector<Eigen::MatrixXd>& F_adj);

/// ξ on the extended grid j_lo … j_hi (τ_j = j·dtau), trace on the same grid.
struct ReferencePlan {
  double dtau = 0.0;
  int j_lo = 0;
  std::vector<Eigen::MatrixXd> xi;  ///< n_η × n_minus per sample, row j = φ^{(j)}ᵀ
  Eigen::MatrixXd trace;            ///< n_minus × samples
  double terminal_residual = 0.0;   ///< ‖ξ(T − τ⁻)‖ from the steering formula
  double xi_max = 0.0;
  double trace_max = 0.0;

  int count() const { return static_cast<int>(xi.size()); }
  double time(int idx) const { return (j_lo + idx) * dtau; }
};

/// Gramian of the scalar chain (A_c, e_last) over [0, L], in extended precision
/// and rounded to double.
Eigen::MatrixXd steering_gramian(const Eigen::VectorXd& mu, double L);

/// Three-phase reference: free response from X0 = ξ(−τ⁻) up to τ⁺ (closed),
/// minimum-energy steering to zero on (τ⁺, T − τ⁻), zero from T − τ⁻ on.
ReferencePlan plan_reference(const Eigen::VectorXd& mu, const Eigen::MatrixXd& X0, double tau_plus,
                             double tau_minus, double T, double dtau, int j_lo, int j_hi);

struct DiagnosisKernels {
  Dimensions dims;
  int n_v = 0;
  double T = 0.0;
  double tau_step = 0.0;
  int points = 0;
  // Per fault i, rows × n_tau samples on τ_j = j·tau_step.
  std::vector<Eigen::MatrixXd> M;  ///< (points·n_x) × n_tau, row k·n_x + r, original z; may be empty
  std::vector<Eigen::MatrixXd> N, P, Q, MB, ME, MG, MGbar;
  Eigen::VectorXd f_B;

  int n_f() const { return static_cast<int>(N.size()); }
  int n_tau() const { return N.empty() ? 0 : static_cast<int>(N[0].cols()); }
  double tau(int j) const { return j * tau_step; }
};

/// Versioned binary file: a text header line then row-major float64 arrays.
void write_kernels(const std::string& path, const DiagnosisKernels& dk, bool include_M = false);
DiagnosisKernels read_kernels(const std::string& path);
void write_kernels_csv(const std::string& path, const DiagnosisKernels& dk);

/// Trapezoidal ∫_0^T |m_Ḡ,i|ᵀ δ dτ for every fault.
Eigen::VectorXd thresholds(const DiagnosisKernels& dk, const Eigen::VectorXd& delta);

/// Output kernels from M, N, P: MB, ME, MG and M_Ḡ.
void output_kernels(const PlantModel& model, DiagnosisKernels& dk);

/// Characteristic-integrated residuals of the reversed kernel system.
struct KernelEquationResidual {
  double pde = 0.0;
  double boundary = 0.0;
  double ode = 0.0;
  double total() const { return std::max(pde, std::max(boundary, ode)); }
};
KernelEquationResidual kernel_equation_residual(const ReversedSystem& sys, const DiagnosisKernels& dk);

struct SynthesisOptions {
  double T = 40.0;
  int tau_intervals = 4000;
  int points = 0;  ///< kernel grid; 0 keeps the model grid
  KernelSolverOptions kernel;
  bool keep_M = true;
};

struct SynthesisResult {
  TransportGeometry geometry;
  ReversedSystem reversed;
  BacksteppingKernelPair kernels;
  TargetSystemData target;
  ParametrizationData param;
  std::vector<IdentifiabilityResult> identifiability;
  std::vector<ReferencePlan> plans;
  DiagnosisKernels dk;
};

/// Parametrization precursors only: target system, stencil and W0.
ParametrizationData parametrize(const ReversedSystem& sys, const TransportGeometry& geo,
                                const TargetSystemData& target, const PsiStencil& psi);

/// Full pipeline. Throws ValidationError for T ≤ T0 or a failed rank test and
/// SolverError with a stage label when a numerical stage fails.
SynthesisResult synthesize(const PlantModel& model, const SignalModel& sig, const SynthesisOptions& opts);

}  // namespace hypdiag
