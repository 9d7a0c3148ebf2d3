#pragma once

#include <json.hpp>

#include <fstream>
#include <string>

#include "hypdiag/config.hpp"

namespace testutil {

inline std::string example_path() { return std::string(HYPDIAG_SOURCE_DIR) + "/configs/example_4x4.json"; }

inline nlohmann::json example_json() {
  std::ifstream is(example_path());
  nlohmann::json j;
  is >> j;
  return j;
}

/// Two counter-propagating states with unit speeds and no coupling.
inline nlohmann::json transport_json() {
  return nlohmann::json::parse(R"({
    "grid_points": 101,
    "dimensions": {"n_minus": 1, "n_plus": 1, "n_w": 0, "n_u": 1,
                   "n_f": 0, "n_d": 0, "n_d_tilde": 0, "n_d_bar": 0},
    "plant": {"gamma": [1, -1], "Q0": [[0]], "Q1": [[0]], "B3": [[1]]},
    "signals": {},
    "simulation": {"horizon": 4.0}
  })");
}

}  // namespace testutil
