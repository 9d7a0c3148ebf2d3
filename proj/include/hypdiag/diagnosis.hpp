#pragma once

#include <Eigen/Dense>

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "hypdiag/simulate.hpp"
#include "hypdiag/trajectory.hpp"

namespace hypdiag {

/// Sliding-window FIR taps: f̂(t_j) = Σ_k taps_N[k] y_{j−k} + taps_MB[k] u_{j−k}.
struct FilterBank {
  double T = 0.0;
  double dt = 0.0;
  std::vector<Eigen::MatrixXd> taps_N;   ///< n_f × n_minus per tap, trapezoid weight folded in
  std::vector<Eigen::MatrixXd> taps_MB;  ///< n_f × n_u per tap
  Eigen::VectorXd f_B;
  bool commensurate = true;  ///< tau_step / dt is an integer

  int taps() const { return static_cast<int>(taps_N.size()); }
  int n_f() const { return static_cast<int>(f_B.size()); }
};

/// Trapezoid weights over floor(T/dt)+1 taps, kernels interpolated linearly.
/// Throws InputError when dt exceeds the kernel step.
FilterBank build_filters(const DiagnosisKernels& dk, double dt);

struct DiagnosisReport {
  TimeGrid grid;
  int first_valid = 0;         ///< first sample with a full window
  Eigen::MatrixXd f_hat;       ///< n_f × count; NaN before first_valid
  Eigen::VectorXd f_B;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> detected;
  std::vector<std::vector<double>> detection_times;  ///< rising edges of the flag, per fault

  Eigen::MatrixXd lower() const;
  Eigen::MatrixXd upper() const;
};

/// Estimates are withheld until a full window of history is available.
DiagnosisReport run_identification(const FilterBank& bank, const Eigen::MatrixXd& y, const Eigen::MatrixXd& u,
                                   double dt);

/// |f̂_i| > f_B,i, strictly.
void detect(DiagnosisReport& report);

void write_report_csv(const std::string& path, const DiagnosisReport& report);

/// Ring-buffer evaluator for one stream of samples.
class StreamingDiagnoser {
 public:
  explicit StreamingDiagnoser(FilterBank bank);
  /// Returns f̂ once the window is full.
  std::optional<Eigen::VectorXd> push(const Eigen::VectorXd& y, const Eigen::VectorXd& u);

 private:
  FilterBank bank_;
  std::deque<Eigen::VectorXd> y_, u_;
};

/// Window integral Σ_rows ∫_0^T k(τ)ᵀ s(t−τ) dτ at every sample t_j ≥ T (NaN before),
/// kernel sampled at tau_step, signal at dt, trapezoid in τ.
Eigen::VectorXd window_integral(const Eigen::MatrixXd& kernel, double tau_step, const Eigen::MatrixXd& signal,
                                double dt);

struct IoResidual {
  double relative = 0.0;  ///< ‖residual‖ / Σ‖terms‖ over full windows
  double absolute = 0.0;  ///< max |residual|
  double endpoint = 0.0;  ///< max |state endpoint terms|
  int samples = 0;
};

/// Both sides of the input-output equation on a simulated trace, per fault
/// column, aggregated. Needs the spatial kernel M; the trace must be sampled at
/// the kernel step. State endpoint terms are included where states were
/// recorded at both t and t − T.
IoResidual verify_io_equation(const DiagnosisKernels& dk, const PlantModel& model, const SimTrace& trace);

}  // namespace hypdiag
