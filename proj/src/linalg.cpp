#include "hypdiag/linalg.hpp"

namespace hypdiag {

CharPoly char_poly_and_adjugate(const Eigen::MatrixXd& F) {
  const int n = static_cast<int>(F.rows());
  CharPoly out;
  out.mu = Eigen::VectorXd::Zero(n + 1);
  out.mu[n] = 1.0;
  out.F_adj.assign(n, Eigen::MatrixXd::Zero(n, n));
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd Mk = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k <= n; ++k) {
    Mk = F * Mk + out.mu[n - k + 1] * I;
    out.F_adj[n - k] = Mk;
    out.mu[n - k] = -(F * Mk).trace() / k;
  }
  return out;
}

int numerical_rank(const Eigen::MatrixXd& A, double rel) {
  if (A.size() == 0) return 0;
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const Eigen::VectorXd& s = svd.singularValues();
  if (s.size() == 0 || s[0] == 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > rel * s[0]) ++r;
  return r;
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& A, double rel) {
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd& s = svd.singularValues();
  Eigen::MatrixXd sinv = Eigen::MatrixXd::Zero(A.cols(), A.rows());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[0] > 0.0 && s[i] > rel * s[0]) sinv(i, i) = 1.0 / s[i];
  return svd.matrixV() * sinv * svd.matrixU().transpose();
}

Eigen::MatrixXd companion(const Eigen::VectorXd& mu) {
  const int n = static_cast<int>(mu.size()) - 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) A(i, i + 1) = 1.0;
  for (int j = 0; j < n; ++j) A(n - 1, j) = -mu[j];
  return A;
}

}  // namespace hypdiag
