#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "hypdiag/model.hpp"
#include "hypdiag/tabulated.hpp"

namespace hypdiag {

/// In B̃1 the boundary value m̄⁺(1) reached through the ODE input n enters via
/// this matrix. The source formula names an undefined K_0ᵀ; Q_0ᵀ is the only
/// boundary matrix consistent with the n-elimination.
enum class TargetBoundaryCoupling { Q0Transpose };
inline constexpr TargetBoundaryCoupling kTargetBoundaryCoupling = TargetBoundaryCoupling::Q0Transpose;

/// n_x × n_x kernel samples K(z_k, ζ_l), 0 ≤ l ≤ k < points, stored entry-major.
class KernelField {
 public:
  KernelField() = default;
  KernelField(int points, int nx);

  int points() const { return points_; }
  int n_x() const { return nx_; }
  double step() const { return 1.0 / (points_ - 1); }

  double& operator()(int k, int l, int r, int c) { return data_[index(k, l, r, c)]; }
  double operator()(int k, int l, int r, int c) const { return data_[index(k, l, r, c)]; }

  Eigen::MatrixXd at(int k, int l) const;
  void set(int k, int l, const Eigen::MatrixXd& m);

  /// Triangle-wise linear interpolation, ζ ≤ z.
  double eval(int r, int c, double z, double zeta) const;
  Eigen::MatrixXd eval(double z, double zeta) const;

  double max_abs() const;
  const double* entry_data(int r, int c) const { return data_.data() + entry_offset(r, c); }
  double* entry_data(int r, int c) { return data_.data() + entry_offset(r, c); }
  const std::vector<double>& raw() const { return data_; }
  std::vector<double>& raw() { return data_; }

 private:
  std::size_t entry_offset(int r, int c) const {
    return static_cast<std::size_t>(r * nx_ + c) * points_ * points_;
  }
  std::size_t index(int k, int l, int r, int c) const {
    return entry_offset(r, c) + static_cast<std::size_t>(k) * points_ + l;
  }

  int points_ = 0;
  int nx_ = 0;
  std::vector<double> data_;
};

struct KernelSolverOptions {
  double tolerance = 1e-9;
  int max_iterations = 500;
};

struct KernelSolveInfo {
  int iterations = 0;
  double last_increment = 0.0;
  double diagonal_residual = 0.0;       ///< max |ΛK − KΛ − ΛĀᵀ| on z = ζ
  double edge_residual = 0.0;           ///< max over the constrained entries of K(z,0)Λ(0)V
  double characteristic_residual = 0.0; ///< max |K − 𝒦[K]| for the integrated map 𝒦
  double inverse_residual = 0.0;        ///< resolvent relation, trapezoid quadrature
};

struct BacksteppingKernelPair {
  KernelField K;
  KernelField K_I;
  TabulatedFunction A0_tilde;  ///< n_x × n_minus, top block strictly lower triangular
  KernelSolveInfo info;
};

/// Successive approximation along the kernel characteristics. `points` = 0
/// keeps the resolution of `sys`. Throws SolverError when the increment does
/// not fall below the tolerance within max_iterations.
BacksteppingKernelPair solve_kernel(const ReversedSystem& sys, int points = 0,
                                    const KernelSolverOptions& opts = {});

/// Inverse of the trapezoid-discretized transformation, expressed as a kernel
/// on the same grid; the discrete roundtrip is exact up to rounding.
KernelField solve_inverse_kernel(const KernelField& K);

/// max |K_I − K − ∫_ζ^z K(z,s) K_I(s,ζ) ds| over the triangle.
double inverse_kernel_residual(const KernelField& K, const KernelField& K_I);

/// Coupling of the target system, Ã0(z) = −Γ̄(z) K(z,0) Λ(0) V.
TabulatedFunction target_coupling(const ReversedSystem& sys, const KernelField& K);

/// Profiles are n_x × points matrices (column k = value at z_k).
Eigen::MatrixXd transform(const Eigen::MatrixXd& h, const KernelField& K);
Eigen::MatrixXd inverse_transform(const Eigen::MatrixXd& h, const KernelField& K_I);

/// Dense operator of the transform acting on the stacked vector (index k*n_x + r);
/// `sign` = −1 gives 𝒯, +1 gives 𝒯⁻¹ when used with K_I.
Eigen::MatrixXd transform_operator(const KernelField& K, double sign);

struct TargetSystemData {
  Eigen::MatrixXd F_tilde;
  TabulatedFunction B1_tilde;  ///< n_η × n_x
  Eigen::MatrixXd B2_tilde, B3_tilde;
  TabulatedFunction A0_tilde;
};

TargetSystemData target_matrices(const ReversedSystem& sys, const BacksteppingKernelPair& kernels);

/// CSV grid dump; header line "n_x,points,lower-triangle" then one row per
/// (k, l ≤ k): k,l,K_11,K_12,…
void write_kernel_csv(const std::string& path, const KernelField& K);
KernelField read_kernel_csv(const std::string& path);

}  // namespace hypdiag
