#include "hypdiag/config.hpp"

#include <fstream>
#include <functional>

#include "hypdiag/errors.hpp"
#include "hypdiag/expr.hpp"

namespace hypdiag {

using nlohmann::json;

namespace {

[[noreturn]] void schema(const std::string& field, const std::string& why) {
  throw InputError("config field '" + field + "': " + why);
}

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) schema(path + key, "missing");
  return j.at(key);
}

int require_int(const json& j, const std::string& key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_number_integer() || v.get<int>() < 0) schema(path + key, "expected a nonnegative integer");
  return v.get<int>();
}

double number(const json& v, const std::string& field) {
  if (!v.is_number()) schema(field, "expected a number");
  return v.get<double>();
}

// Scalar coefficient function of (z, zeta).
using Scalar2 = std::function<double(double, double)>;

Scalar2 scalar_function(const json& v, const std::string& field) {
  if (v.is_number()) {
    const double c = v.get<double>();
    return [c](double, double) { return c; };
  }
  if (v.is_string()) {
    const Expression e = Expression::parse(v.get<std::string>());
    return [e](double z, double zeta) { return e(z, zeta); };
  }
  if (v.is_object() && v.contains("poly")) {
    std::vector<double> c;
    for (const auto& x : v.at("poly")) c.push_back(number(x, field + ".poly"));
    return [c](double z, double) {
      double acc = 0.0;
      for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * z + *it;
      return acc;
    };
  }
  if (v.is_object() && v.contains("samples")) {
    std::vector<double> s;
    for (const auto& x : v.at("samples")) s.push_back(number(x, field + ".samples"));
    if (s.size() < 2) schema(field, "samples need at least 2 values");
    return [s](double z, double) {
      const auto [k, t] = locate(z, static_cast<int>(s.size()));
      return (1.0 - t) * s[k] + t * s[k + 1];
    };
  }
  schema(field, "expected number, expression string, {poly:[...]} or {samples:[...]}");
}

// Entries of a matrix given densely (nested rows) or as {sparse: [[i,j,value],…]}.
std::vector<std::vector<json>> matrix_entries(const json& v, int rows, int cols,
                                              const std::string& field) {
  std::vector<std::vector<json>> e(rows, std::vector<json>(cols, json(0.0)));
  if (v.is_object() && v.contains("sparse")) {
    for (const auto& t : v.at("sparse")) {
      if (!t.is_array() || t.size() != 3) schema(field, "sparse entries are [row, col, value]");
      const int i = t[0].get<int>(), j = t[1].get<int>();
      if (i < 1 || i > rows || j < 1 || j > cols)
        schema(field, "sparse index (" + std::to_string(i) + "," + std::to_string(j) +
                          ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
      e[i - 1][j - 1] = t[2];
    }
    return e;
  }
  if (v.is_number() && v.get<double>() == 0.0) return e;
  if (!v.is_array() || static_cast<int>(v.size()) != rows)
    schema(field, "expected " + std::to_string(rows) + " rows");
  for (int i = 0; i < rows; ++i) {
    if (!v[i].is_array() || static_cast<int>(v[i].size()) != cols)
      schema(field, "row " + std::to_string(i + 1) + " needs " + std::to_string(cols) + " entries");
    for (int j = 0; j < cols; ++j) e[i][j] = v[i][j];
  }
  return e;
}

Eigen::MatrixXd constant_matrix(const json& parent, const std::string& key, int rows, int cols,
                                const std::string& path, bool required = false) {
  const std::string field = path + key;
  if (!parent.contains(key)) {
    if (required) schema(field, "missing");
    return Eigen::MatrixXd::Zero(rows, cols);
  }
  const auto e = matrix_entries(parent.at(key), rows, cols, field);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = number(e[i][j], field);
  return m;
}

TabulatedFunction function_matrix(const json& parent, const std::string& key, int rows, int cols,
                                  int points, const std::string& path, bool required = false) {
  const std::string field = path + key;
  if (!parent.contains(key)) {
    if (required) schema(field, "missing");
    return TabulatedFunction(points, rows, cols);
  }
  const auto e = matrix_entries(parent.at(key), rows, cols, field);
  std::vector<std::vector<Scalar2>> f(rows, std::vector<Scalar2>(cols));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) f[i][j] = scalar_function(e[i][j], field);
  return TabulatedFunction::sample(points, rows, cols, [&](double z) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = f[i][j](z, 0.0);
    return m;
  });
}

BivariateFunction bivariate_matrix(const json& parent, const std::string& key, int n, int points,
                                   const std::string& path) {
  if (!parent.contains(key)) return BivariateFunction(points, n, n);
  const std::string field = path + key;
  const auto e = matrix_entries(parent.at(key), n, n, field);
  std::vector<std::vector<Scalar2>> f(n, std::vector<Scalar2>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) f[i][j] = scalar_function(e[i][j], field);
  return BivariateFunction::sample(points, n, n, [&](double z, double zeta) {
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = f[i][j](z, zeta);
    return m;
  });
}

Eigen::VectorXd vector_field(const json& parent, const std::string& key, int size,
                             const std::string& path, bool required = false) {
  const std::string field = path + key;
  if (!parent.contains(key)) {
    if (required) schema(field, "missing");
    return Eigen::VectorXd::Zero(size);
  }
  const json& v = parent.at(key);
  if (!v.is_array() || static_cast<int>(v.size()) != size)
    schema(field, "expected " + std::to_string(size) + " entries");
  Eigen::VectorXd out(size);
  for (int i = 0; i < size; ++i) out[i] = number(v[i], field);
  return out;
}

SimConfig parse_simulation(const json& s, const Dimensions& d, int n_vf, int n_vd) {
  const std::string path = "simulation.";
  SimConfig c;
  if (s.contains("points")) c.points = require_int(s, "points", path);
  if (s.contains("dt")) c.dt = number(s.at("dt"), path + "dt");
  if (s.contains("output_dt")) c.output_dt = number(s.at("output_dt"), path + "output_dt");
  c.horizon = number(require(s, "horizon", path), path + "horizon");
  if (s.contains("input")) {
    const json& in = s.at("input");
    if (!in.is_array() || static_cast<int>(in.size()) != d.n_u)
      schema(path + "input", "expected " + std::to_string(d.n_u) + " expressions in t");
    for (const auto& e : in) {
      if (e.is_number()) c.input.push_back(Expression::parse(std::to_string(e.get<double>())));
      else if (e.is_string()) c.input.push_back(Expression::parse(e.get<std::string>()));
      else schema(path + "input", "entries are numbers or expressions in t");
    }
  }
  c.w0 = vector_field(s, "w0", d.n_w, path);
  c.vd0 = vector_field(s, "v_d0", n_vd, path);
  if (s.contains("faults")) {
    int idx = 0;
    for (const auto& f : s.at("faults")) {
      const std::string fp = path + "faults[" + std::to_string(idx++) + "].";
      FaultOccurrence occ;
      occ.time = number(require(f, "time", fp), fp + "time");
      occ.jump = vector_field(f, "v", n_vf, fp, true);
      if (f.contains("mode")) {
        const std::string m = f.at("mode").get<std::string>();
        if (m == "reset") occ.reset = true;
        else if (m != "add") schema(fp + "mode", "expected 'add' or 'reset'");
      }
      c.faults.push_back(occ);
    }
  }
  if (s.contains("bounded")) {
    const json& b = s.at("bounded");
    const std::string bp = path + "bounded.";
    const std::string kind = require(b, "kind", bp).get<std::string>();
    if (kind == "zero") c.bounded.kind = BoundedDisturbanceSpec::Kind::Zero;
    else if (kind == "random") c.bounded.kind = BoundedDisturbanceSpec::Kind::Random;
    else if (kind == "worst_case") c.bounded.kind = BoundedDisturbanceSpec::Kind::WorstCase;
    else schema(bp + "kind", "expected zero, random or worst_case");
    if (b.contains("hold")) c.bounded.hold = number(b.at("hold"), bp + "hold");
    if (b.contains("seed")) c.bounded.seed = b.at("seed").get<std::uint64_t>();
    if (b.contains("fault")) c.bounded.fault = require_int(b, "fault", bp) - 1;
    if (b.contains("target_time")) c.bounded.target_time = number(b.at("target_time"), bp + "target_time");
  }
  if (s.contains("record_states")) c.record_states = s.at("record_states").get<bool>();
  if (s.contains("state_stride")) c.state_stride = std::max(1, require_int(s, "state_stride", path));
  return c;
}

}  // namespace

ProblemConfig parse_config(const json& j, int grid_points) {
  ProblemConfig cfg;
  cfg.source = j;
  int points = 201;
  if (j.contains("grid_points")) points = require_int(j, "grid_points", "");
  if (grid_points > 0) points = grid_points;
  if (points < 3) schema("grid_points", "need at least 3 points");

  const json& dj = require(j, "dimensions", "");
  Dimensions d;
  d.n_minus = require_int(dj, "n_minus", "dimensions.");
  d.n_plus = require_int(dj, "n_plus", "dimensions.");
  d.n_w = require_int(dj, "n_w", "dimensions.");
  d.n_u = require_int(dj, "n_u", "dimensions.");
  d.n_f = require_int(dj, "n_f", "dimensions.");
  d.n_d = require_int(dj, "n_d", "dimensions.");
  d.n_d_tilde = require_int(dj, "n_d_tilde", "dimensions.");
  d.n_d_bar = require_int(dj, "n_d_bar", "dimensions.");
  const int nx = d.n_x(), nm = d.n_minus, np = d.n_plus;

  const json& p = require(j, "plant", "");
  const std::string pp = "plant.";
  PlantModel& m = cfg.plant;
  m.dims = d;
  const json& g = require(p, "gamma", pp);
  if (!g.is_array() || static_cast<int>(g.size()) != nx)
    schema(pp + "gamma", "expected " + std::to_string(nx) + " diagonal entries");
  std::vector<Scalar2> gf;
  for (const auto& e : g) gf.push_back(scalar_function(e, pp + "gamma"));
  m.gamma = TabulatedFunction::sample(points, nx, 1, [&](double z) {
    Eigen::MatrixXd v(nx, 1);
    for (int i = 0; i < nx; ++i) v(i, 0) = gf[i](z, 0.0);
    return v;
  });
  m.A = function_matrix(p, "A", nx, nx, points, pp);
  m.A0 = function_matrix(p, "A0", nx, nm, points, pp);
  m.D = bivariate_matrix(p, "D", nx, points, pp);
  m.Q0 = constant_matrix(p, "Q0", np, nm, pp, true);
  m.Q1 = constant_matrix(p, "Q1", nm, np, pp, true);
  m.F = constant_matrix(p, "F", d.n_w, d.n_w, pp, d.n_w > 0);
  m.L2 = constant_matrix(p, "L2", d.n_w, nm, pp);
  m.H1 = function_matrix(p, "H1", nx, d.n_w, points, pp);
  m.H2 = constant_matrix(p, "H2", np, d.n_w, pp);
  m.B1 = function_matrix(p, "B1", nx, d.n_u, points, pp);
  m.B2 = constant_matrix(p, "B2", np, d.n_u, pp);
  m.B3 = constant_matrix(p, "B3", nm, d.n_u, pp);
  m.B4 = constant_matrix(p, "B4", d.n_w, d.n_u, pp);
  m.E1 = function_matrix(p, "E1", nx, d.n_f, points, pp);
  m.E2 = constant_matrix(p, "E2", np, d.n_f, pp);
  m.E3 = constant_matrix(p, "E3", nm, d.n_f, pp);
  m.E4 = constant_matrix(p, "E4", d.n_w, d.n_f, pp);
  m.E5 = constant_matrix(p, "E5", nm, d.n_f, pp);
  m.G1 = function_matrix(p, "G1", nx, d.n_d, points, pp);
  m.G2 = constant_matrix(p, "G2", np, d.n_d, pp);
  m.G3 = constant_matrix(p, "G3", nm, d.n_d, pp);
  m.G4 = constant_matrix(p, "G4", d.n_w, d.n_d, pp);
  m.G5 = constant_matrix(p, "G5", nm, d.n_d, pp);
  m.G_tilde = constant_matrix(p, "G_tilde", d.n_d, d.n_d_tilde, pp);
  m.G_bar = constant_matrix(p, "G_bar", d.n_d, d.n_d_bar, pp);
  m.delta = vector_field(p, "delta", d.n_d_bar, pp);

  const json& s = require(j, "signals", "");
  const std::string sp = "signals.";
  auto square = [&](const char* key) {
    if (!s.contains(key)) return Eigen::MatrixXd(0, 0);
    const json& v = s.at(key);
    const int n = v.is_array() ? static_cast<int>(v.size()) : 0;
    return constant_matrix(s, key, n, n, sp);
  };
  cfg.signals.S_f = square("S_f");
  cfg.signals.S_d = square("S_d");
  cfg.signals.R_f_tilde = constant_matrix(s, "R_f_tilde", d.n_f, cfg.signals.n_vf(), sp, d.n_f > 0);
  cfg.signals.R_d_tilde = constant_matrix(s, "R_d_tilde", d.n_d_tilde, cfg.signals.n_vd(), sp);

  if (j.contains("synthesis")) {
    const json& y = j.at("synthesis");
    const std::string yp = "synthesis.";
    if (y.contains("T")) cfg.synthesis.T = number(y.at("T"), yp + "T");
    if (y.contains("tau_intervals")) cfg.synthesis.tau_intervals = require_int(y, "tau_intervals", yp);
    if (y.contains("kernel_tolerance"))
      cfg.synthesis.kernel_tolerance = number(y.at("kernel_tolerance"), yp + "kernel_tolerance");
    if (y.contains("max_iterations")) cfg.synthesis.max_iterations = require_int(y, "max_iterations", yp);
  }
  if (j.contains("simulation"))
    cfg.simulation = parse_simulation(j.at("simulation"), d, cfg.signals.n_vf(), cfg.signals.n_vd());
  return cfg;
}

ProblemConfig load_config(const std::string& path, int grid_points) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw InputError("config " + path + ": " + e.what());
  }
  try {
    return parse_config(j, grid_points);
  } catch (const json::exception& e) {
    throw InputError("config " + path + ": " + e.what());
  }
}

}  // namespace hypdiag
