#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace hypdiag {

/// Matrix-valued samples on the uniform grid z_k = k/(points-1) of [0,1].
class TabulatedFunction {
 public:
  using Sampler = std::function<Eigen::MatrixXd(double)>;

  TabulatedFunction() = default;
  TabulatedFunction(int points, int rows, int cols);

  static TabulatedFunction sample(int points, int rows, int cols, const Sampler& f);
  static TabulatedFunction constant(int points, const Eigen::MatrixXd& value);

  int points() const { return static_cast<int>(samples_.size()); }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double step() const { return 1.0 / (points() - 1); }
  double node(int k) const { return k * step(); }

  const Eigen::MatrixXd& operator[](int k) const { return samples_[k]; }
  Eigen::MatrixXd& operator[](int k) { return samples_[k]; }

  /// Piecewise-linear interpolation; throws std::out_of_range outside [0,1].
  Eigen::MatrixXd operator()(double z) const;
  double entry(int r, int c, double z) const;

  /// g(z) = f(1-z). Exact on samples, hence an involution.
  TabulatedFunction reversed() const;
  TabulatedFunction transposed() const;
  TabulatedFunction resampled(int points) const;

  bool is_zero() const;
  double max_abs() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Eigen::MatrixXd> samples_;
};

/// Matrix-valued samples f(z_k, zeta_l) on the square grid; only l <= k is
/// meaningful (the triangle 0 <= zeta <= z <= 1).
class BivariateFunction {
 public:
  using Sampler = std::function<Eigen::MatrixXd(double, double)>;

  BivariateFunction() = default;
  BivariateFunction(int points, int rows, int cols);

  static BivariateFunction sample(int points, int rows, int cols, const Sampler& f);

  int points() const { return points_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double step() const { return 1.0 / (points_ - 1); }

  const Eigen::MatrixXd& at(int k, int l) const { return samples_[k * points_ + l]; }
  Eigen::MatrixXd& at(int k, int l) { return samples_[k * points_ + l]; }

  /// Interpolation on the two triangles of each cell split along zeta = z + const.
  Eigen::MatrixXd operator()(double z, double zeta) const;

  BivariateFunction resampled(int points) const;
  bool is_zero() const;

 private:
  int points_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Eigen::MatrixXd> samples_;
};

/// Position of z on the uniform grid: cell index and local coordinate in [0,1].
struct GridLocation {
  int cell;
  double frac;
};
GridLocation locate(double z, int points);

/// Weights of the compound trapezoidal rule on `points` nodes of step h.
std::vector<double> trapezoid_weights(int points, double h);

}  // namespace hypdiag
