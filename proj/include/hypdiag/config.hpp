#pragma once

#include <json.hpp>

#include <string>

#include "hypdiag/model.hpp"
#include "hypdiag/simulate.hpp"

namespace hypdiag {

struct SynthesisSettings {
  double T = 40.0;
  int tau_intervals = 4000;  ///< tau_step = T / tau_intervals
  double kernel_tolerance = 1e-9;
  int max_iterations = 500;
};

struct ProblemConfig {
  PlantModel plant;
  SignalModel signals;
  SynthesisSettings synthesis;
  SimConfig simulation;
  nlohmann::json source;
};

/// Schema errors throw InputError naming the offending field path.
/// `grid_points` > 0 overrides the configured tabulation resolution.
ProblemConfig parse_config(const nlohmann::json& j, int grid_points = 0);
ProblemConfig load_config(const std::string& path, int grid_points = 0);

}  // namespace hypdiag
