#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace hypdiag {

/// Matrix exponential by scaling and squaring with the [13/13] Padé
/// approximant. `theta` bounds the scaled 1-norm; 5.37 suffices for double,
/// tighter bounds buy accuracy for wider scalar types.
template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> expm_pade(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& A, double theta = 5.371920351148152) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using std::ceil;
  using std::log2;
  using std::abs;
  static const double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                             1187353796428800.0,  129060195264000.0,   10559470521600.0,
                             670442572800.0,      33522128640.0,       1323241920.0,
                             40840800.0,          960960.0,            16380.0,
                             182.0,               1.0};
  const Eigen::Index n = A.rows();
  double norm = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double col = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) col += static_cast<double>(abs(A(i, j)));
    norm = std::max(norm, col);
  }
  int s = 0;
  if (norm > theta) s = static_cast<int>(std::ceil(std::log2(norm / theta)));
  Mat X = A;
  if (s > 0) X /= Scalar(std::ldexp(1.0, s));
  const Mat I = Mat::Identity(n, n);
  const Mat X2 = X * X, X4 = X2 * X2, X6 = X4 * X2;
  const Mat U = X * (X6 * (Scalar(b[13]) * X6 + Scalar(b[11]) * X4 + Scalar(b[9]) * X2) +
                     Scalar(b[7]) * X6 + Scalar(b[5]) * X4 + Scalar(b[3]) * X2 + Scalar(b[1]) * I);
  const Mat V = X6 * (Scalar(b[12]) * X6 + Scalar(b[10]) * X4 + Scalar(b[8]) * X2) +
                Scalar(b[6]) * X6 + Scalar(b[4]) * X4 + Scalar(b[2]) * X2 + Scalar(b[0]) * I;
  Mat R = (V - U).partialPivLu().solve(V + U);
  for (int k = 0; k < s; ++k) R = R * R;
  return R;
}

inline Eigen::MatrixXd expm(const Eigen::MatrixXd& A) { return expm_pade<double>(A); }

/// det(sI − F) = Σ_j mu_j s^j (mu_n = 1) and adj(sI − F) = Σ_j F_adj[j] s^j,
/// by the Faddeev–LeVerrier recursion.
struct CharPoly {
  Eigen::VectorXd mu;
  std::vector<Eigen::MatrixXd> F_adj;
};
CharPoly char_poly_and_adjugate(const Eigen::MatrixXd& F);

/// Numerical rank with singular values below rel · σ_max treated as zero.
int numerical_rank(const Eigen::MatrixXd& A, double rel = 1e-10);
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& A, double rel = 1e-10);

/// Block companion matrix of the monic polynomial with coefficients mu
/// (last block row −mu_0 … −mu_{n−1}).
Eigen::MatrixXd companion(const Eigen::VectorXd& mu);

}  // namespace hypdiag
