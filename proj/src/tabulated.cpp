#include "hypdiag/tabulated.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hypdiag {

GridLocation locate(double z, int points) {
  constexpr double slack = 1e-12;
  if (!(z >= -slack && z <= 1.0 + slack))
    throw std::out_of_range("evaluation at z = " + std::to_string(z) + " outside [0,1]");
  const double s = std::clamp(z, 0.0, 1.0) * (points - 1);
  int cell = static_cast<int>(std::floor(s));
  if (cell >= points - 1) cell = points - 2;
  if (cell < 0) cell = 0;
  return {cell, s - cell};
}

std::vector<double> trapezoid_weights(int points, double h) {
  std::vector<double> w(points, h);
  if (points == 1) {
    w[0] = 0.0;
    return w;
  }
  w.front() = w.back() = 0.5 * h;
  return w;
}

TabulatedFunction::TabulatedFunction(int points, int rows, int cols)
    : rows_(rows), cols_(cols), samples_(points, Eigen::MatrixXd::Zero(rows, cols)) {
  if (points < 2) throw std::invalid_argument("tabulation needs at least 2 points");
}

TabulatedFunction TabulatedFunction::sample(int points, int rows, int cols, const Sampler& f) {
  TabulatedFunction out(points, rows, cols);
  for (int k = 0; k < points; ++k) {
    Eigen::MatrixXd v = f(out.node(k));
    if (v.rows() != rows || v.cols() != cols)
      throw std::invalid_argument("sampler returned wrong shape");
    out.samples_[k] = std::move(v);
  }
  return out;
}

TabulatedFunction TabulatedFunction::constant(int points, const Eigen::MatrixXd& value) {
  TabulatedFunction out(points, value.rows(), value.cols());
  for (auto& s : out.samples_) s = value;
  return out;
}

Eigen::MatrixXd TabulatedFunction::operator()(double z) const {
  const auto [k, t] = locate(z, points());
  return (1.0 - t) * samples_[k] + t * samples_[k + 1];
}

double TabulatedFunction::entry(int r, int c, double z) const {
  const auto [k, t] = locate(z, points());
  return (1.0 - t) * samples_[k](r, c) + t * samples_[k + 1](r, c);
}

TabulatedFunction TabulatedFunction::reversed() const {
  TabulatedFunction out = *this;
  const int n = points();
  for (int k = 0; k < n; ++k) out.samples_[k] = samples_[n - 1 - k];
  return out;
}

TabulatedFunction TabulatedFunction::transposed() const {
  TabulatedFunction out(points(), cols_, rows_);
  for (int k = 0; k < points(); ++k) out.samples_[k] = samples_[k].transpose();
  return out;
}

TabulatedFunction TabulatedFunction::resampled(int n) const {
  if (n == points()) return *this;
  return sample(n, rows_, cols_, [this](double z) { return (*this)(z); });
}

bool TabulatedFunction::is_zero() const {
  for (const auto& s : samples_)
    if (!s.isZero(0.0)) return false;
  return true;
}

double TabulatedFunction::max_abs() const {
  double m = 0.0;
  for (const auto& s : samples_)
    if (s.size() > 0) m = std::max(m, s.cwiseAbs().maxCoeff());
  return m;
}

BivariateFunction::BivariateFunction(int points, int rows, int cols)
    : points_(points),
      rows_(rows),
      cols_(cols),
      samples_(static_cast<std::size_t>(points) * points, Eigen::MatrixXd::Zero(rows, cols)) {
  if (points < 2) throw std::invalid_argument("tabulation needs at least 2 points");
}

BivariateFunction BivariateFunction::sample(int points, int rows, int cols, const Sampler& f) {
  BivariateFunction out(points, rows, cols);
  const double h = out.step();
  for (int k = 0; k < points; ++k)
    for (int l = 0; l <= k; ++l) {
      Eigen::MatrixXd v = f(k * h, l * h);
      if (v.rows() != rows || v.cols() != cols)
        throw std::invalid_argument("sampler returned wrong shape");
      out.at(k, l) = std::move(v);
    }
  return out;
}

Eigen::MatrixXd BivariateFunction::operator()(double z, double zeta) const {
  if (zeta > z + 1e-12) throw std::out_of_range("bivariate evaluation above the diagonal");
  const auto [i, u] = locate(z, points_);
  const auto [j, v] = locate(std::min(zeta, z), points_);
  if (j > i) return at(i + 1, i + 1);
  if (u >= v || i == j) {
    // triangle (i,j), (i+1,j), (i+1,j+1)
    const double vv = std::min(v, u);
    return at(i, j) + u * (at(i + 1, j) - at(i, j)) + vv * (at(i + 1, j + 1) - at(i + 1, j));
  }
  // triangle (i,j), (i,j+1), (i+1,j+1)
  return at(i, j) + v * (at(i, j + 1) - at(i, j)) + u * (at(i + 1, j + 1) - at(i, j + 1));
}

BivariateFunction BivariateFunction::resampled(int n) const {
  if (n == points_) return *this;
  return sample(n, rows_, cols_, [this](double z, double zeta) { return (*this)(z, zeta); });
}

bool BivariateFunction::is_zero() const {
  for (int k = 0; k < points_; ++k)
    for (int l = 0; l <= k; ++l)
      if (!at(k, l).isZero(0.0)) return false;
  return true;
}

}  // namespace hypdiag
