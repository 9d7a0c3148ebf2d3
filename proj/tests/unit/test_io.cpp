#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "helpers.hpp"
#include "hypdiag/errors.hpp"
#include "hypdiag/expr.hpp"
#include "hypdiag/io.hpp"

using namespace hypdiag;

TEST_CASE("expressions") {
  CHECK(Expression::parse("1/(z-2)")(0.5) == doctest::Approx(-1.0 / 1.5));
  CHECK(Expression::parse("exp(2*z - 2*zeta)/10")(0.7, 0.2) == doctest::Approx(std::exp(1.0) / 10));
  CHECK(Expression::parse("step(z - 0.2) - step(z - 0.8)")(0.5) == 1.0);
  CHECK(Expression::parse("step(z - 0.2) - step(z - 0.8)")(0.9) == 0.0);
  CHECK(Expression::parse("-2^2")(0.0) == -4.0);
  CHECK(Expression::parse("2^3^2")(0.0) == 512.0);
  CHECK(Expression::parse("0.5*sin(0.3*t)")(0.0, 0.0, 1.0) == doctest::Approx(0.5 * std::sin(0.3)));
  CHECK_THROWS_AS(Expression::parse("sin(z"), InputError);
  CHECK_THROWS_AS(Expression::parse("foo(z)"), InputError);
}

TEST_CASE("missing boundary matrix is named") {
  auto j = testutil::example_json();
  j["plant"].erase("Q1");
  try {
    parse_config(j, 21);
    FAIL("expected a schema error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("plant.Q1") != std::string::npos);
  }
}

TEST_CASE("wrongly shaped matrix is named") {
  auto j = testutil::example_json();
  j["plant"]["Q0"] = {{0, 1, 2}};
  CHECK_THROWS_WITH_AS(parse_config(j, 21), doctest::Contains("plant.Q0"), InputError);
}

TEST_CASE("coefficient function forms") {
  auto j = testutil::transport_json();
  j["grid_points"] = 11;
  j["plant"]["A"] = {{0, {{"poly", {1.0, 2.0}}}}, {{{"samples", {0.0, 1.0}}}, 0}};
  const ProblemConfig cfg = parse_config(j);
  CHECK(cfg.plant.A[5](0, 1) == doctest::Approx(2.0));
  CHECK(cfg.plant.A[5](1, 0) == doctest::Approx(0.5));
}

TEST_CASE("CSV reader") {
  const std::string path = "io_test.csv";
  {
    std::ofstream f(path);
    f << "# comment\n" << "t,a\n" << "0,1.5\n" << "0.1,-2e-3\n";
  }
  const CsvTable t = read_csv(path);
  CHECK(t.column("a") == 1);
  CHECK(t.column("b") == -1);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][1] == -2e-3);
  {
    std::ofstream f(path);
    f << "t,a\n" << "0,1\n" << "0.1,x\n";
  }
  CHECK_THROWS_WITH_AS(read_csv(path), doctest::Contains(":3:"), InputError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_csv("does/not/exist.csv"), InputError);
}

TEST_CASE("shortest round-trip formatting") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678, 0.0}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(0.25) == "0.25");
}
