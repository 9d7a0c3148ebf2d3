#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "helpers.hpp"
#include "hypdiag/errors.hpp"
#include "hypdiag/simulate.hpp"

using namespace hypdiag;

namespace {

SignalSeries no_signals(const Dimensions& d, int count) {
  SignalSeries s;
  s.f = Eigen::MatrixXd::Zero(d.n_f, count);
  s.d_tilde = Eigen::MatrixXd::Zero(d.n_d_tilde, count);
  return s;
}

SimTrace run_transport(const nlohmann::json& j, int points, const std::string& input, double horizon) {
  auto jj = j;
  jj["grid_points"] = points;
  const ProblemConfig cfg = parse_config(jj);
  SimConfig sc = cfg.simulation;
  sc.input = {Expression::parse(input)};
  const double dt = cfl_step(cfg.plant);
  const TimeGrid grid{dt, static_cast<int>(std::round(horizon / dt)) + 1};
  const Eigen::MatrixXd u = sample_input(sc, 1, grid);
  return simulate_plant(cfg.plant, sc, grid, u, no_signals(cfg.plant.dims, grid.count),
                        Eigen::MatrixXd::Zero(0, grid.count));
}

}  // namespace

TEST_CASE("exosystem signals of the example") {
  const ProblemConfig cfg = parse_config(testutil::example_json(), 21);
  const TimeGrid grid{0.05, 4001};
  std::vector<FaultOccurrence> occ(3);
  occ[0].time = 20.0;
  occ[0].jump = (Eigen::VectorXd(5) << 1.5, 0, 0, 0, 0).finished();
  occ[1].time = 80.0;
  occ[1].jump = (Eigen::VectorXd(5) << 0, 0, 0.2, 0.05, 0).finished();
  occ[2].time = 150.0;
  occ[2].jump = (Eigen::VectorXd(5) << 0, 0, 0, 0, 0.7).finished();
  const SignalSeries s = generate_signals(cfg.signals, occ, cfg.simulation.vd0, grid, 40.0);
  for (int j = 0; j < grid.count; ++j) {
    const double t = grid.at(j);
    const double f1 = t >= 20.0 ? 1.5 * std::sin((t - 20.0) / 3.0) : 0.0;
    const double f2 = t >= 80.0 ? 0.2 + 0.05 * (t - 80.0) : 0.0;
    const double f3 = t >= 150.0 ? 0.7 : 0.0;
    CHECK(s.f(0, j) == doctest::Approx(f1).epsilon(1e-9).scale(1.0));
    CHECK(s.f(1, j) == doctest::Approx(f2).epsilon(1e-9).scale(1.0));
    CHECK(s.f(2, j) == doctest::Approx(f3).epsilon(1e-12).scale(1.0));
    CHECK(s.d_tilde(0, j) == doctest::Approx(std::sin(0.5 * t)).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("occurrences closer than the dwell time are rejected") {
  const ProblemConfig cfg = parse_config(testutil::example_json(), 21);
  std::vector<FaultOccurrence> occ(2);
  occ[0].time = 10.0;
  occ[1].time = 30.0;
  occ[0].jump = occ[1].jump = Eigen::VectorXd::Zero(5);
  const TimeGrid grid{0.1, 500};
  CHECK_THROWS_AS(generate_signals(cfg.signals, occ, cfg.simulation.vd0, grid, 40.0), ValidationError);
  CHECK_NOTHROW(generate_signals(cfg.signals, occ, cfg.simulation.vd0, grid, 15.0));
}

TEST_CASE("reset occurrence replaces the exosystem state") {
  const ProblemConfig cfg = parse_config(testutil::example_json(), 21);
  std::vector<FaultOccurrence> occ(2);
  occ[0].time = 1.0;
  occ[0].jump = (Eigen::VectorXd(5) << 0, 0, 0, 0, 2.0).finished();
  occ[1].time = 5.0;
  occ[1].jump = (Eigen::VectorXd(5) << 0, 0, 0, 0, 0.5).finished();
  occ[1].reset = true;
  const SignalSeries s = generate_signals(cfg.signals, occ, cfg.simulation.vd0, TimeGrid{0.5, 20});
  CHECK(s.f(2, 4) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(s.f(2, 12) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("equilibrium is preserved exactly") {
  const ProblemConfig cfg = parse_config(testutil::example_json(), 41);
  SimConfig sc = cfg.simulation;
  sc.input.clear();
  const TimeGrid grid{0.05, 201};
  const Dimensions& d = cfg.plant.dims;
  const SimTrace tr = simulate_plant(cfg.plant, sc, grid, Eigen::MatrixXd::Zero(d.n_u, grid.count),
                                     no_signals(d, grid.count), Eigen::MatrixXd::Zero(d.n_d_bar, grid.count));
  CHECK(tr.y.isZero(0.0));
}

TEST_CASE("pure transport delays the boundary input by the travel time") {
  const SimTrace tr = run_transport(testutil::transport_json(), 101, "sin(2*t)", 4.0);
  const double dz = 0.01;
  double err = 0.0;
  for (int j = 0; j < tr.grid.count; ++j) {
    const double t = tr.grid.at(j);
    const double ref = t >= 1.0 ? std::sin(2.0 * (t - 1.0)) : 0.0;
    err = std::max(err, std::abs(tr.y(0, j) - ref));
  }
  CHECK(err <= 2.0 * dz + 1e-12);

  // a step reaches z = 0 after θ(1,0) = 1 to within one cell
  const SimTrace st = run_transport(testutil::transport_json(), 101, "step(t - 0.5)", 3.0);
  int first = -1;
  for (int j = 0; j < st.grid.count && first < 0; ++j)
    if (st.y(0, j) > 0.5) first = j;
  REQUIRE(first >= 0);
  CHECK(std::abs(st.grid.at(first) - 1.5) <= dz + 1e-9);
}

TEST_CASE("upwind scheme converges at first order") {
  auto j = testutil::transport_json();
  j["plant"]["gamma"] = {"1 + z/2", -0.8};
  j["plant"]["A"] = {{0, "0.5"}, {"-0.4*z", 0}};
  j["plant"]["Q0"] = {{0.5}};
  j["plant"]["Q1"] = {{-0.3}};
  auto sample = [&](int points) {
    // common output grid independent of the CFL step
    auto jj = j;
    jj["grid_points"] = points;
    const ProblemConfig cfg = parse_config(jj);
    SimConfig sc = cfg.simulation;
    sc.input = {Expression::parse("sin(3*t)")};
    const TimeGrid grid{0.01, 301};
    return simulate_plant(cfg.plant, sc, grid, sample_input(sc, 1, grid), no_signals(cfg.plant.dims, grid.count),
                          Eigen::MatrixXd::Zero(0, grid.count))
        .y;
  };
  const Eigen::MatrixXd ref = sample(1601);
  const double e1 = (sample(101) - ref).cwiseAbs().maxCoeff();
  const double e2 = (sample(201) - ref).cwiseAbs().maxCoeff();
  MESSAGE("self-convergence errors " << e1 << " " << e2);
  CHECK(e1 / e2 > 2.0 / 1.5);
  CHECK(e1 / e2 < 2.0 * 1.5);
}

TEST_CASE("CFL violation is rejected") {
  const ProblemConfig cfg = parse_config(testutil::transport_json());
  SimConfig sc = cfg.simulation;
  sc.dt = 2.0 * cfl_step(cfg.plant);
  const TimeGrid grid{0.05, 10};
  CHECK_THROWS_AS(simulate_plant(cfg.plant, sc, grid, Eigen::MatrixXd::Zero(1, 10), no_signals(cfg.plant.dims, 10),
                                 Eigen::MatrixXd::Zero(0, 10)),
                  ValidationError);
}

TEST_CASE("bounded disturbance generators") {
  const Eigen::Vector2d delta(0.7, 0.3);
  const TimeGrid grid{0.01, 2000};
  const Eigen::MatrixXd a = random_bounded_disturbance(delta, 0.5, 42, grid);
  const Eigen::MatrixXd b = random_bounded_disturbance(delta, 0.5, 42, grid);
  const Eigen::MatrixXd c = random_bounded_disturbance(delta, 0.5, 43, grid);
  CHECK(a == b);
  CHECK(a != c);
  for (int i = 0; i < 2; ++i) CHECK(a.row(i).cwiseAbs().maxCoeff() <= delta[i]);
  CHECK(a(0, 10) == a(0, 49));

  Eigen::MatrixXd m(2, 5);
  m << 1, -1, 0, 2, -3, -1, -1, 1, 1, 1;
  const Eigen::MatrixXd w = worst_case_disturbance(m, 0.25, delta, 2.0, TimeGrid{0.25, 12});
  // τ = 2 − t; samples t = 1 … 2 carry the sign pattern reversed in time
  CHECK(w(0, 8) == 0.7);
  CHECK(w(0, 7) == -0.7);
  CHECK(w(0, 6) == 0.0);
  CHECK(w(0, 4) == -0.7);
  CHECK(w(1, 8) == -0.3);
  CHECK(w.col(3).isZero(0.0));
  CHECK(w.col(9).isZero(0.0));
}

TEST_CASE("trace CSV roundtrip") {
  const SimTrace tr = run_transport(testutil::transport_json(), 41, "cos(t)", 1.0);
  const std::string path = "trace_roundtrip.csv";
  write_trace_csv(path, tr);
  const SimTrace r = read_trace_csv(path);
  std::remove(path.c_str());
  CHECK(r.grid.count == tr.grid.count);
  CHECK(r.grid.dt == doctest::Approx(tr.grid.dt));
  CHECK(r.y == tr.y);
  CHECK(r.u == tr.u);
}
