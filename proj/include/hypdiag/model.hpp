#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "hypdiag/tabulated.hpp"

namespace hypdiag {

struct Dimensions {
  int n_minus = 0;
  int n_plus = 0;
  int n_w = 0;
  int n_u = 0;
  int n_f = 0;
  int n_d = 0;
  int n_d_tilde = 0;
  int n_d_bar = 0;

  int n_x() const { return n_minus + n_plus; }
};

/// Faulty ODE-PDE plant, PDE solved for the spatial derivative:
///
///   x'(z,t) = Γ(z) ẋ + A x + A0 x⁻(0) + ∫_0^z D(z,ζ) x(ζ) dζ + H1 w + B1 u + E1 f + G1 d
///   x⁺(0) = Q0 x⁻(0) + H2 w + B2 u + E2 f + G2 d
///   x⁻(1) = Q1 x⁺(1) + B3 u + E3 f + G3 d
///   ẇ = F w + L2 x⁻(0) + B4 u + E4 f + G4 d,      y = x⁻(0) + E5 f + G5 d
///
/// with d = G̃ d̃ + Ḡ d̄ and |d̄_i| ≤ δ_i. Minus states travel towards z = 0.
struct PlantModel {
  Dimensions dims;

  TabulatedFunction gamma;  ///< n_x × 1, reciprocal velocities γ_i = 1/λ_i
  TabulatedFunction A;      ///< n_x × n_x, zero diagonal
  TabulatedFunction A0;     ///< n_x × n_minus
  BivariateFunction D;      ///< n_x × n_x on ζ ≤ z

  Eigen::MatrixXd Q0, Q1, F, L2;
  TabulatedFunction H1;
  Eigen::MatrixXd H2;
  TabulatedFunction B1;
  Eigen::MatrixXd B2, B3, B4;
  TabulatedFunction E1;
  Eigen::MatrixXd E2, E3, E4, E5;
  TabulatedFunction G1;
  Eigen::MatrixXd G2, G3, G4, G5;
  Eigen::MatrixXd G_tilde, G_bar;
  Eigen::VectorXd delta;

  int points() const { return gamma.points(); }
  double lambda(int i, int k) const { return 1.0 / gamma[k](i, 0); }

  /// Every tabulated member re-interpolated onto `points` nodes.
  PlantModel resampled(int points) const;
};

/// Fault and disturbance exosystems v̇ = S v with f = R_f v, d̃ = R_d v.
struct SignalModel {
  Eigen::MatrixXd S_f, R_f_tilde, S_d, R_d_tilde;

  int n_vf() const { return static_cast<int>(S_f.rows()); }
  int n_vd() const { return static_cast<int>(S_d.rows()); }
  int n_v() const { return n_vf() + n_vd(); }

  Eigen::MatrixXd S() const;    ///< blockdiag(S_f, S_d)
  Eigen::MatrixXd R_f() const;  ///< [R̃_f 0]
  Eigen::MatrixXd R_d() const;  ///< [0 R̃_d]
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_plant(const PlantModel& model);
ValidationReport validate_signal_model(const SignalModel& sig, const Dimensions& dims);

/// Travel times of the spatially reversed velocities. Θ_j(z) = ∫_0^z γ̄_j is
/// kept as a cumulative trapezoid table so θ_j(z,ζ) = Θ_j(z) − Θ_j(ζ).
class TransportGeometry {
 public:
  TransportGeometry() = default;
  TransportGeometry(const TabulatedFunction& gamma_bar, int n_minus);

  int points() const { return points_; }
  int n_x() const { return static_cast<int>(cumulative_.size()); }

  double Theta(int j, double z) const;
  double Theta_node(int j, int k) const { return cumulative_[j][k]; }
  const std::vector<double>& Theta_nodes(int j) const { return cumulative_[j]; }
  double theta(int j, double z, double zeta) const { return Theta(j, z) - Theta(j, zeta); }

  /// z with Θ_j(z) = a, for a within the range of Θ_j.
  double Theta_inverse(int j, double a) const;

  double tau_plus = 0.0;
  double tau_minus = 0.0;
  double T0 = 0.0;

 private:
  int points_ = 0;
  std::vector<std::vector<double>> cumulative_;
};

TransportGeometry transport_geometry(const PlantModel& model);

/// Kernel-equation data in the reversed coordinate z̄ = 1 − z:
///
///   m̄' = Γ̄ ṁ̄ + Āᵀ m̄ + ∫_0^z C(z,ζ) m̄(ζ) dζ,      C(z,ζ) = D̄ᵀ(ζ,z)
///   m̄⁺(0) = −Q1ᵀ m̄⁻(0)
///   m̄⁻(1) = −Q0ᵀ m̄⁺(1) − ∫ Ā0ᵀ m̄ − L2ᵀ J η + n
///   η̇ = F̄ η + ∫ B̄1 m̄ + B̄2 m̄⁻(0) + B̄3 m̄⁺(1) + B̄4 n
struct ReversedSystem {
  Dimensions dims;
  int n_vf = 0;
  int n_vd = 0;

  TabulatedFunction gamma_bar;  ///< n_x × 1
  TabulatedFunction A_bar;      ///< n_x × n_x
  TabulatedFunction A0_bar;     ///< n_x × n_minus
  BivariateFunction C;          ///< n_x × n_x, C(z,ζ) = Dᵀ(1−ζ, 1−z)

  Eigen::MatrixXd Q0, Q1, L2;
  Eigen::MatrixXd J;  ///< [I_{n_w} 0], n_w × n_η
  Eigen::MatrixXd F_bar, B2_bar, B3_bar, B4_bar;
  TabulatedFunction B1_bar;  ///< n_η × n_x

  std::vector<Eigen::VectorXd> eta0;  ///< (0, R_fᵀ e_i) per fault

  int points() const { return gamma_bar.points(); }
  int n_eta() const { return static_cast<int>(F_bar.rows()); }
  double lambda(int j, int k) const { return 1.0 / gamma_bar[k](j, 0); }

  ReversedSystem resampled(int points) const;
};

ReversedSystem build_reversed_system(const PlantModel& model, const SignalModel& sig);

}  // namespace hypdiag
