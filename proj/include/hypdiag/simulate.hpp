#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "hypdiag/expr.hpp"
#include "hypdiag/model.hpp"

namespace hypdiag {

/// Fault exosystem state change at `time`: v_f(t+) = v_f(t−) + jump, or
/// v_f(t+) = jump when `reset` is set.
struct FaultOccurrence {
  double time = 0.0;
  Eigen::VectorXd jump;
  bool reset = false;
};

struct BoundedDisturbanceSpec {
  enum class Kind { Zero, Random, WorstCase };
  Kind kind = Kind::Zero;
  double hold = 0.5;        ///< random generator: piecewise-constant hold time
  std::uint64_t seed = 1;
  int fault = 0;            ///< worst case: fault column whose estimate is maximized
  double target_time = 0.0; ///< worst case: time at which the bound is attained
};

struct SimConfig {
  int points = 0;        ///< 0: plant grid
  double dt = 0.0;       ///< internal step bound; 0: largest CFL-admissible step
  double output_dt = 0.0;  ///< sampling step of the trace; 0: kernel tau_step
  double horizon = 0.0;
  std::vector<Expression> input;  ///< u_j(t), n_u entries (empty: u ≡ 0)
  Eigen::VectorXd w0;
  std::vector<FaultOccurrence> faults;
  Eigen::VectorXd vd0;
  BoundedDisturbanceSpec bounded;
  bool record_states = false;
  int state_stride = 1;
};

/// Uniform time grid t_j = j·dt, j = 0 … count−1.
struct TimeGrid {
  double dt = 0.0;
  int count = 0;
  double at(int j) const { return j * dt; }
};

struct SignalSeries {
  Eigen::MatrixXd v;        ///< n_v × count
  Eigen::MatrixXd f;        ///< n_f × count
  Eigen::MatrixXd d_tilde;  ///< n_d_tilde × count
};

/// Piecewise exosystem solution restarted at each occurrence, propagated by
/// exact matrix exponentials. `min_dwell` > 0 enforces t_{i+1} − t_i > min_dwell.
SignalSeries generate_signals(const SignalModel& sig, const std::vector<FaultOccurrence>& faults,
                              const Eigen::VectorXd& vd0, const TimeGrid& grid,
                              double min_dwell = 0.0);

/// Piecewise-constant uniform draws in [−δ_i, δ_i], deterministic in `seed`.
Eigen::MatrixXd random_bounded_disturbance(const Eigen::VectorXd& delta, double hold,
                                           std::uint64_t seed, const TimeGrid& grid);

/// d̄_j(t* − τ) = δ_j sign(m_Ḡ,j(τ)) for τ ∈ [0, T], zero elsewhere. `m_gbar`
/// holds the kernel column sampled at multiples of tau_step.
Eigen::MatrixXd worst_case_disturbance(const Eigen::MatrixXd& m_gbar, double tau_step,
                                       const Eigen::VectorXd& delta, double target_time,
                                       const TimeGrid& grid);

struct SimTrace {
  TimeGrid grid;
  Eigen::MatrixXd y, u, f, d_tilde, d_bar, d, v;
  int state_stride = 0;            ///< 0 when states were not recorded
  std::vector<Eigen::MatrixXd> x;  ///< n_x × points per recorded step
  Eigen::MatrixXd w;               ///< n_w × recorded steps
};

/// Largest admissible step dt = Δz / max|λ|.
double cfl_step(const PlantModel& model);

/// Explicit first-order upwind finite differences for the PDE, explicit Euler
/// for the ODE. u, signals and d_bar are sampled on the output `grid` and
/// interpolated linearly across the internal substeps.
SimTrace simulate_plant(const PlantModel& model, const SimConfig& config, const TimeGrid& grid,
                        const Eigen::MatrixXd& u, const SignalSeries& signals,
                        const Eigen::MatrixXd& d_bar);

/// u sampled from the configured expressions.
Eigen::MatrixXd sample_input(const SimConfig& config, int n_u, const TimeGrid& grid);

void write_trace_csv(const std::string& path, const SimTrace& trace);
/// Recorded x, w and v with a text header line and float64 payload.
void write_state_dump(const std::string& path, const SimTrace& trace);
/// Reads t, y_*, u_* columns; other columns are ignored.
SimTrace read_trace_csv(const std::string& path);

}  // namespace hypdiag
