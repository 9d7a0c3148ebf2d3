#include "hypdiag/diagnosis.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "hypdiag/errors.hpp"
#include "hypdiag/io.hpp"

namespace hypdiag {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct TapGrid {
  int count;
  std::vector<double> weight;
  std::vector<int> index;     // kernel sample left of τ_k
  std::vector<double> frac;
};

TapGrid tap_grid(double T, double tau_step, int n_tau, double dt) {
  if (!(dt > 0.0)) throw InputError("filter step must be positive");
  if (dt > tau_step * (1.0 + 1e-9))
    throw InputError("filter step " + format_double(dt) + " exceeds the kernel step " + format_double(tau_step) +
                     " (kernel would be undersampled)");
  TapGrid g;
  g.count = static_cast<int>(std::floor(T / dt + 1e-9)) + 1;
  g.weight.assign(g.count, dt);
  g.weight.front() = g.weight.back() = 0.5 * dt;
  if (g.count == 1) g.weight[0] = 0.0;
  for (int k = 0; k < g.count; ++k) {
    const double p = std::min(k * dt / tau_step, static_cast<double>(n_tau - 1));
    int j = static_cast<int>(std::floor(p + 1e-9));
    j = std::clamp(j, 0, std::max(0, n_tau - 2));
    double f = p - j;
    if (std::abs(f) < 1e-9) f = 0.0;
    g.index.push_back(j);
    g.frac.push_back(n_tau > 1 ? f : 0.0);
  }
  return g;
}

Eigen::VectorXd kernel_at(const Eigen::MatrixXd& m, const TapGrid& g, int k) {
  const int j = g.index[k];
  if (m.cols() == 1) return m.col(0);
  return (1.0 - g.frac[k]) * m.col(j) + g.frac[k] * m.col(j + 1);
}

}  // namespace

FilterBank build_filters(const DiagnosisKernels& dk, double dt) {
  const TapGrid g = tap_grid(dk.T, dk.tau_step, dk.n_tau(), dt);
  FilterBank b;
  b.T = dk.T;
  b.dt = dt;
  b.f_B = dk.f_B;
  const double ratio = dk.tau_step / dt;
  b.commensurate = std::abs(ratio - std::round(ratio)) < 1e-9 * ratio;
  const int nf = dk.n_f(), nm = dk.dims.n_minus, nu = dk.dims.n_u;
  b.taps_N.assign(g.count, Eigen::MatrixXd::Zero(nf, nm));
  b.taps_MB.assign(g.count, Eigen::MatrixXd::Zero(nf, nu));
  for (int k = 0; k < g.count; ++k)
    for (int i = 0; i < nf; ++i) {
      b.taps_N[k].row(i) = g.weight[k] * kernel_at(dk.N[i], g, k).transpose();
      if (nu) b.taps_MB[k].row(i) = g.weight[k] * kernel_at(dk.MB[i], g, k).transpose();
    }
  return b;
}

Eigen::MatrixXd DiagnosisReport::lower() const {
  Eigen::MatrixXd m = f_hat;
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).array() -= f_B[i];
  return m;
}

Eigen::MatrixXd DiagnosisReport::upper() const {
  Eigen::MatrixXd m = f_hat;
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).array() += f_B[i];
  return m;
}

DiagnosisReport run_identification(const FilterBank& bank, const Eigen::MatrixXd& y, const Eigen::MatrixXd& u,
                                   double dt) {
  if (std::abs(dt - bank.dt) > 1e-9 * bank.dt)
    throw InputError("data step " + format_double(dt) + " differs from the filter step " + format_double(bank.dt));
  const int nf = bank.n_f(), K = bank.taps();
  const int nm = bank.taps_N.empty() ? 0 : static_cast<int>(bank.taps_N[0].cols());
  const int nu = bank.taps_MB.empty() ? 0 : static_cast<int>(bank.taps_MB[0].cols());
  if (y.rows() != nm) throw DimensionError("data has " + std::to_string(y.rows()) + " outputs, filters expect " +
                                           std::to_string(nm));
  if (u.rows() != nu) throw DimensionError("data has " + std::to_string(u.rows()) + " inputs, filters expect " +
                                           std::to_string(nu));
  if (u.cols() != y.cols()) throw DimensionError("y and u series differ in length");
  const int count = static_cast<int>(y.cols());
  if (count < K)
    throw InputError("insufficient history: " + std::to_string(count) + " samples, one window needs " +
                     std::to_string(K));

  DiagnosisReport r;
  r.grid = {dt, count};
  r.first_valid = K - 1;
  r.f_B = bank.f_B;
  r.f_hat = Eigen::MatrixXd::Constant(nf, count, kNaN);
  // Stack taps so each estimate is one matrix-vector product per tap.
  for (int j = K - 1; j < count; ++j) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(nf);
    for (int k = 0; k < K; ++k) {
      acc.noalias() += bank.taps_N[k] * y.col(j - k);
      if (nu) acc.noalias() += bank.taps_MB[k] * u.col(j - k);
    }
    r.f_hat.col(j) = acc;
  }
  detect(r);
  return r;
}

void detect(DiagnosisReport& r) {
  const int nf = static_cast<int>(r.f_hat.rows()), count = static_cast<int>(r.f_hat.cols());
  r.detected.setConstant(nf, count, false);
  r.detection_times.assign(nf, {});
  for (int i = 0; i < nf; ++i) {
    bool prev = false;
    for (int j = r.first_valid; j < count; ++j) {
      const bool flag = std::abs(r.f_hat(i, j)) > r.f_B[i];
      r.detected(i, j) = flag;
      if (flag && !prev) r.detection_times[i].push_back(r.grid.at(j));
      prev = flag;
    }
  }
}

void write_report_csv(const std::string& path, const DiagnosisReport& r) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  const int nf = static_cast<int>(r.f_hat.rows());
  out << "t";
  for (int i = 1; i <= nf; ++i) out << ",f_hat_" << i;
  for (int i = 1; i <= nf; ++i) out << ",detected_" << i;
  for (int i = 1; i <= nf; ++i) out << ",lower_" << i;
  for (int i = 1; i <= nf; ++i) out << ",upper_" << i;
  out << '\n';
  for (int j = r.first_valid; j < r.grid.count; ++j) {
    out << format_double(r.grid.at(j));
    for (int i = 0; i < nf; ++i) out << ',' << format_double(r.f_hat(i, j));
    for (int i = 0; i < nf; ++i) out << ',' << (r.detected(i, j) ? 1 : 0);
    for (int i = 0; i < nf; ++i) out << ',' << format_double(r.f_hat(i, j) - r.f_B[i]);
    for (int i = 0; i < nf; ++i) out << ',' << format_double(r.f_hat(i, j) + r.f_B[i]);
    out << '\n';
  }
  if (!out) throw InputError("write failed for '" + path + "'");
}

StreamingDiagnoser::StreamingDiagnoser(FilterBank bank) : bank_(std::move(bank)) {}

std::optional<Eigen::VectorXd> StreamingDiagnoser::push(const Eigen::VectorXd& y, const Eigen::VectorXd& u) {
  y_.push_front(y);
  u_.push_front(u);
  const std::size_t K = bank_.taps();
  if (y_.size() > K) {
    y_.pop_back();
    u_.pop_back();
  }
  if (y_.size() < K) return std::nullopt;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(bank_.n_f());
  for (std::size_t k = 0; k < K; ++k) {
    acc.noalias() += bank_.taps_N[k] * y_[k];
    if (u_[k].size()) acc.noalias() += bank_.taps_MB[k] * u_[k];
  }
  return acc;
}

Eigen::VectorXd window_integral(const Eigen::MatrixXd& kernel, double tau_step, const Eigen::MatrixXd& signal,
                                double dt) {
  const int n_tau = static_cast<int>(kernel.cols());
  const double T = (n_tau - 1) * tau_step;
  const TapGrid g = tap_grid(T, tau_step, n_tau, dt);
  if (kernel.rows() != signal.rows()) throw DimensionError("window integral: kernel and signal rows differ");
  const int count = static_cast<int>(signal.cols());
  Eigen::VectorXd out = Eigen::VectorXd::Constant(count, kNaN);
  if (kernel.rows() == 0) {
    for (int j = g.count - 1; j < count; ++j) out[j] = 0.0;
    return out;
  }
  Eigen::MatrixXd taps(kernel.rows(), g.count);
  for (int k = 0; k < g.count; ++k) taps.col(k) = g.weight[k] * kernel_at(kernel, g, k);
  for (int j = g.count - 1; j < count; ++j) {
    double acc = 0.0;
    for (int k = 0; k < g.count; ++k) acc += taps.col(k).dot(signal.col(j - k));
    out[j] = acc;
  }
  return out;
}

IoResidual verify_io_equation(const DiagnosisKernels& dk, const PlantModel& model_in, const SimTrace& tr) {
  const double dt = tr.grid.dt;
  if (tr.grid.count < static_cast<int>(std::floor(dk.T / dt + 1e-9)) + 1)
    throw InputError("trace shorter than one detection window");
  const Dimensions& d = dk.dims;
  const int count = tr.grid.count;
  IoResidual res;
  double num = 0.0, den = 0.0;

  const bool states = tr.state_stride > 0 && !tr.x.empty() && dk.M.size() == dk.N.size();
  const int K = static_cast<int>(std::round(dk.T / dt));
  const bool aligned = std::abs(K * dt - dk.T) < 1e-9 * dk.T;
  PlantModel model;
  Eigen::MatrixXd gamma;
  int n = 0, nx = d.n_x();
  std::vector<double> wz;
  if (states) {
    n = static_cast<int>(tr.x[0].cols());
    if (n != dk.points) throw DimensionError("recorded states and kernels use different spatial grids");
    model = model_in.points() == n ? model_in : model_in.resampled(n);
    wz.assign(n, 1.0 / (n - 1));
    wz.front() = wz.back() = 0.5 / (n - 1);
  }
  auto state_term = [&](int i, int tau_col, int rec) {
    // ∫ Mᵀ(z,τ) Γ(z) x(z,t) dz
    double acc = 0.0;
    const Eigen::MatrixXd& x = tr.x[rec];
    for (int k = 0; k < n; ++k)
      for (int r = 0; r < nx; ++r) acc += wz[k] * dk.M[i](k * nx + r, tau_col) * model.gamma[k](r, 0) * x(r, k);
    return acc;
  };

  for (int i = 0; i < dk.n_f(); ++i) {
    Eigen::VectorXd total = window_integral(dk.N[i], dk.tau_step, tr.y, dt);
    Eigen::VectorXd scale = total.cwiseAbs();
    auto add = [&](const Eigen::MatrixXd& kern, const Eigen::MatrixXd& sig) {
      if (kern.rows() == 0) return;
      const Eigen::VectorXd v = window_integral(kern, dk.tau_step, sig, dt);
      total += v;
      scale += v.cwiseAbs();
    };
    add(dk.MB[i], tr.u);
    add(dk.ME[i], tr.f);
    if (d.n_d) add(dk.MG[i], tr.d);
    for (int j = 0; j < count; ++j) {
      if (std::isnan(total[j])) continue;
      double r = total[j];
      if (states && aligned && j % tr.state_stride == 0 && (j - K) % tr.state_stride == 0 && j - K >= 0) {
        const int now = j / tr.state_stride, past = (j - K) / tr.state_stride;
        double e = state_term(i, dk.n_tau() - 1, past) - state_term(i, 0, now);
        if (d.n_w) e += dk.P[i].col(0).dot(tr.w.col(now)) - dk.P[i].col(dk.n_tau() - 1).dot(tr.w.col(past));
        res.endpoint = std::max(res.endpoint, std::abs(e));
        r -= e;
      }
      res.absolute = std::max(res.absolute, std::abs(r));
      num += r * r;
      den += scale[j] * scale[j];
      ++res.samples;
    }
  }
  res.relative = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  return res;
}

}  // namespace hypdiag
