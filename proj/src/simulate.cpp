#include "hypdiag/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>
#include <stdexcept>

#include "hypdiag/errors.hpp"
#include "hypdiag/io.hpp"
#include "hypdiag/linalg.hpp"

namespace hypdiag {

SignalSeries generate_signals(const SignalModel& sig, const std::vector<FaultOccurrence>& faults_in,
                              const Eigen::VectorXd& vd0, const TimeGrid& grid, double min_dwell) {
  const int nvf = sig.n_vf(), nv = sig.n_v();
  std::vector<FaultOccurrence> faults = faults_in;
  std::stable_sort(faults.begin(), faults.end(),
                   [](const FaultOccurrence& a, const FaultOccurrence& b) { return a.time < b.time; });
  for (std::size_t i = 0; i < faults.size(); ++i) {
    if (faults[i].jump.size() != nvf) throw DimensionError("fault occurrence: v has wrong length");
    if (i > 0 && min_dwell > 0.0 && !(faults[i].time - faults[i - 1].time > min_dwell))
      throw ValidationError("fault occurrences at t = " + format_double(faults[i - 1].time) + " and " +
                            format_double(faults[i].time) + " violate the dwell time " + format_double(min_dwell));
  }
  if (vd0.size() != sig.n_vd()) throw DimensionError("v_d(0) has wrong length");

  const Eigen::MatrixXd S = sig.S();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(nv);
  v.tail(sig.n_vd()) = vd0;
  SignalSeries out;
  out.v.resize(nv, grid.count);
  std::size_t next = 0;
  auto apply = [&](const FaultOccurrence& f) {
    if (f.reset) v.head(nvf) = f.jump;
    else v.head(nvf) += f.jump;
  };
  double t = 0.0;
  while (next < faults.size() && faults[next].time <= 0.0) apply(faults[next++]);
  const Eigen::MatrixXd step = expm(S * grid.dt);
  for (int j = 0; j < grid.count; ++j) {
    const double tj = grid.at(j);
    if (j > 0) {
      if (next < faults.size() && faults[next].time <= tj) {
        while (next < faults.size() && faults[next].time <= tj) {
          v = expm(S * (faults[next].time - t)) * v;
          t = faults[next].time;
          apply(faults[next++]);
        }
        v = expm(S * (tj - t)) * v;
      } else {
        v = (t == grid.at(j - 1) ? step : expm(S * (tj - t))) * v;
      }
      t = tj;
    }
    out.v.col(j) = v;
  }
  out.f = sig.R_f() * out.v;
  out.d_tilde = sig.R_d() * out.v;
  return out;
}

namespace {

// Deterministic across standard libraries, unlike std::uniform_real_distribution.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

Eigen::MatrixXd random_bounded_disturbance(const Eigen::VectorXd& delta, double hold, std::uint64_t seed,
                                           const TimeGrid& grid) {
  if (!(hold > 0.0)) throw InputError("bounded disturbance: hold time must be positive");
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd d(delta.size(), grid.count);
  long block = -1;
  Eigen::VectorXd cur = Eigen::VectorXd::Zero(delta.size());
  for (int j = 0; j < grid.count; ++j) {
    const long b = static_cast<long>(std::floor(grid.at(j) / hold + 1e-9));
    if (b != block) {
      block = b;
      for (Eigen::Index i = 0; i < delta.size(); ++i) cur[i] = delta[i] * (2.0 * unit_uniform(rng) - 1.0);
    }
    d.col(j) = cur;
  }
  return d;
}

Eigen::MatrixXd worst_case_disturbance(const Eigen::MatrixXd& m_gbar, double tau_step, const Eigen::VectorXd& delta,
                                       double target_time, const TimeGrid& grid) {
  if (m_gbar.rows() != delta.size()) throw DimensionError("worst-case disturbance: δ has wrong length");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(delta.size(), grid.count);
  const double T = (m_gbar.cols() - 1) * tau_step;
  for (int j = 0; j < grid.count; ++j) {
    const double tau = target_time - grid.at(j);
    if (tau < -1e-9 * tau_step || tau > T + 1e-9 * tau_step) continue;
    const double p = std::clamp(tau / tau_step, 0.0, static_cast<double>(m_gbar.cols() - 1));
    const int k = std::min(static_cast<int>(std::floor(p)), static_cast<int>(m_gbar.cols()) - 2);
    const double f = p - k;
    for (Eigen::Index i = 0; i < delta.size(); ++i) {
      const double m = (1.0 - f) * m_gbar(i, k) + f * m_gbar(i, k + 1);
      d(i, j) = m > 0.0 ? delta[i] : (m < 0.0 ? -delta[i] : 0.0);
    }
  }
  return d;
}

double cfl_step(const PlantModel& model) {
  double vmax = 0.0;
  for (int k = 0; k < model.points(); ++k)
    for (int i = 0; i < model.dims.n_x(); ++i) vmax = std::max(vmax, std::abs(model.lambda(i, k)));
  return (1.0 / (model.points() - 1)) / vmax;
}

Eigen::MatrixXd sample_input(const SimConfig& config, int n_u, const TimeGrid& grid) {
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n_u, grid.count);
  if (config.input.empty()) return u;
  if (static_cast<int>(config.input.size()) != n_u) throw DimensionError("input: expected one expression per u_j");
  for (int j = 0; j < grid.count; ++j)
    for (int i = 0; i < n_u; ++i) u(i, j) = config.input[i](0.0, 0.0, grid.at(j));
  return u;
}

SimTrace simulate_plant(const PlantModel& model_in, const SimConfig& config, const TimeGrid& grid,
                        const Eigen::MatrixXd& u, const SignalSeries& signals, const Eigen::MatrixXd& d_bar) {
  const PlantModel model =
      config.points > 0 && config.points != model_in.points() ? model_in.resampled(config.points) : model_in;
  const Dimensions& dm = model.dims;
  const int n = model.points(), nx = dm.n_x(), nm = dm.n_minus, np = dm.n_plus;
  const double h = 1.0 / (n - 1);
  auto check_cols = [&](const Eigen::MatrixXd& m, Eigen::Index rows, const char* what) {
    if (m.rows() != rows || m.cols() != grid.count)
      throw DimensionError(std::string("simulate: ") + what + " must be " + std::to_string(rows) + " × " +
                           std::to_string(grid.count));
  };
  check_cols(u, dm.n_u, "u");
  check_cols(signals.f, dm.n_f, "f");
  check_cols(signals.d_tilde, dm.n_d_tilde, "d̃");
  check_cols(d_bar, dm.n_d_bar, "d̄");

  const double cfl = cfl_step(model);
  double dt_max = cfl;
  if (config.dt > 0.0) {
    if (config.dt > cfl * (1.0 + 1e-12))
      throw ValidationError("CFL violated: dt = " + format_double(config.dt) + " exceeds Δz/max|λ| = " +
                            format_double(cfl));
    dt_max = config.dt;
  }
  const int sub = std::max(1, static_cast<int>(std::ceil(grid.dt / dt_max - 1e-9)));
  const double dt = grid.dt / sub;

  // Dense λ, and only the structurally nonzero integral couplings.
  Eigen::MatrixXd lam(nx, n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < nx; ++i) lam(i, k) = model.lambda(i, k);
  struct Coupling {
    int r, c;
    Eigen::MatrixXd w;  // n × n, lower triangle, trapezoid weights folded in
  };
  std::vector<Coupling> couplings;
  for (int r = 0; r < nx; ++r)
    for (int c = 0; c < nx; ++c) {
      Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
      bool any = false;
      for (int k = 1; k < n; ++k)
        for (int l = 0; l <= k; ++l) {
          const double v = model.D.at(k, l)(r, c);
          if (v == 0.0) continue;
          w(k, l) = ((l == 0 || l == k) ? 0.5 * h : h) * v;
          any = true;
        }
      if (any) couplings.push_back({r, c, std::move(w)});
    }

  auto disturbance = [&](const Eigen::VectorXd& dt_, const Eigen::VectorXd& db) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(dm.n_d);
    if (dm.n_d_tilde) d += model.G_tilde * dt_;
    if (dm.n_d_bar) d += model.G_bar * db;
    return d;
  };

  SimTrace tr;
  tr.grid = grid;
  tr.u = u;
  tr.f = signals.f;
  tr.d_tilde = signals.d_tilde;
  tr.d_bar = d_bar;
  tr.v = signals.v;
  tr.y.resize(nm, grid.count);
  tr.d.resize(dm.n_d, grid.count);
  for (int j = 0; j < grid.count; ++j) tr.d.col(j) = disturbance(signals.d_tilde.col(j), d_bar.col(j));
  const int stride = std::max(1, config.state_stride);
  if (config.record_states) tr.state_stride = stride;
  const int recorded = config.record_states ? (grid.count - 1) / stride + 1 : 0;
  if (recorded) tr.w.resize(dm.n_w, recorded);

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(nx, n);
  Eigen::VectorXd w = config.w0.size() == dm.n_w ? config.w0 : Eigen::VectorXd::Zero(dm.n_w);

  // Inflow conditions for given interior values.
  auto apply_bc = [&](Eigen::MatrixXd& X, const Eigen::VectorXd& W, const Eigen::VectorXd& uu,
                      const Eigen::VectorXd& ff, const Eigen::VectorXd& dd) {
    Eigen::VectorXd xp0 = model.Q0 * X.col(0).head(nm);
    if (dm.n_w) xp0 += model.H2 * W;
    if (dm.n_u) xp0 += model.B2 * uu;
    xp0 += model.E2 * ff;
    if (dm.n_d) xp0 += model.G2 * dd;
    X.col(0).tail(np) = xp0;
    Eigen::VectorXd xm1 = model.Q1 * X.col(n - 1).tail(np);
    if (dm.n_u) xm1 += model.B3 * uu;
    xm1 += model.E3 * ff;
    if (dm.n_d) xm1 += model.G3 * dd;
    X.col(n - 1).head(nm) = xm1;
  };
  auto output = [&](int j) {
    Eigen::VectorXd y = x.col(0).head(nm) + model.E5 * tr.f.col(j);
    if (dm.n_d) y += model.G5 * tr.d.col(j);
    tr.y.col(j) = y;
    if (recorded && j % stride == 0) {
      tr.x.push_back(x);
      tr.w.col(j / stride) = w;
    }
  };
  apply_bc(x, w, u.col(0), tr.f.col(0), tr.d.col(0));
  output(0);

  Eigen::MatrixXd g(nx, n), xn(nx, n);
  for (int j = 1; j < grid.count; ++j) {
    for (int s = 0; s < sub; ++s) {
      const double a0 = static_cast<double>(s) / sub, a1 = static_cast<double>(s + 1) / sub;
      const Eigen::VectorXd uu = (1 - a0) * u.col(j - 1) + a0 * u.col(j);
      const Eigen::VectorXd ff = (1 - a0) * tr.f.col(j - 1) + a0 * tr.f.col(j);
      const Eigen::VectorXd dd = (1 - a0) * tr.d.col(j - 1) + a0 * tr.d.col(j);

      // g = A x + A0 x⁻(0) + ∫D x + H1 w + B1 u + E1 f + G1 d
      const Eigen::VectorXd xm0 = x.col(0).head(nm);
      for (int k = 0; k < n; ++k) {
        Eigen::VectorXd gk = model.A[k] * x.col(k) + model.A0[k] * xm0 + model.E1[k] * ff;
        if (dm.n_w) gk += model.H1[k] * w;
        if (dm.n_u) gk += model.B1[k] * uu;
        if (dm.n_d) gk += model.G1[k] * dd;
        g.col(k) = gk;
      }
      for (const Coupling& c : couplings) g.row(c.r) += (c.w * x.row(c.c).transpose()).transpose();

      xn = x;
      for (int i = 0; i < nx; ++i) {
        if (i < nm) {
          for (int k = 0; k + 1 < n; ++k)
            xn(i, k) = x(i, k) + dt * lam(i, k) * ((x(i, k + 1) - x(i, k)) / h - g(i, k));
        } else {
          for (int k = 1; k < n; ++k)
            xn(i, k) = x(i, k) + dt * lam(i, k) * ((x(i, k) - x(i, k - 1)) / h - g(i, k));
        }
      }
      Eigen::VectorXd wd = Eigen::VectorXd::Zero(dm.n_w);
      if (dm.n_w) {
        wd = model.F * w + model.L2 * xm0 + model.E4 * ff;
        if (dm.n_u) wd += model.B4 * uu;
        if (dm.n_d) wd += model.G4 * dd;
      }
      w += dt * wd;
      x.swap(xn);
      apply_bc(x, w, (1 - a1) * u.col(j - 1) + a1 * u.col(j), (1 - a1) * tr.f.col(j - 1) + a1 * tr.f.col(j),
               (1 - a1) * tr.d.col(j - 1) + a1 * tr.d.col(j));
    }
    if (!x.allFinite() || !w.allFinite())
      throw SolverError("simulate", "non-finite state at output step " + std::to_string(j) + " (t = " +
                                        format_double(grid.at(j)) + ")");
    output(j);
  }
  return tr;
}

void write_trace_csv(const std::string& path, const SimTrace& tr) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << "t";
  auto head = [&](const char* tag, const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) out << ',' << tag << '_' << (i + 1);
  };
  head("y", tr.y);
  head("u", tr.u);
  head("f", tr.f);
  head("d_bar", tr.d_bar);
  head("d_tilde", tr.d_tilde);
  out << '\n';
  for (int j = 0; j < tr.grid.count; ++j) {
    out << format_double(tr.grid.at(j));
    for (const Eigen::MatrixXd* m : {&tr.y, &tr.u, &tr.f, &tr.d_bar, &tr.d_tilde})
      for (Eigen::Index i = 0; i < m->rows(); ++i) out << ',' << format_double((*m)(i, j));
    out << '\n';
  }
  if (!out) throw InputError("write failed for '" + path + "'");
}

SimTrace read_trace_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const int ct = t.column("t");
  if (ct < 0) throw InputError(path + ": missing column 't'");
  auto collect = [&](const std::string& tag) {
    std::vector<int> cols;
    for (int i = 1;; ++i) {
      const int c = t.column(tag + "_" + std::to_string(i));
      if (c < 0) break;
      cols.push_back(c);
    }
    Eigen::MatrixXd m(cols.size(), t.rows.size());
    for (std::size_t j = 0; j < t.rows.size(); ++j)
      for (std::size_t i = 0; i < cols.size(); ++i) m(i, j) = t.rows[j][cols[i]];
    return m;
  };
  SimTrace tr;
  tr.y = collect("y");
  tr.u = collect("u");
  tr.f = collect("f");
  tr.d_bar = collect("d_bar");
  tr.d_tilde = collect("d_tilde");
  tr.grid.count = static_cast<int>(t.rows.size());
  if (tr.grid.count >= 2) {
    const double t0 = t.rows[0][ct];
    tr.grid.dt = t.rows[1][ct] - t0;
    if (!(tr.grid.dt > 0.0)) throw InputError(path + ": time column is not increasing");
    for (int j = 0; j < tr.grid.count; ++j)
      if (std::abs(t.rows[j][ct] - t0 - j * tr.grid.dt) > 1e-6 * tr.grid.dt * std::max(1, j))
        throw InputError(path + ": time column is not uniformly sampled at row " + std::to_string(j + 2));
    if (std::abs(t0) > 1e-9 * tr.grid.dt) throw InputError(path + ": time column must start at 0");
  }
  return tr;
}

void write_state_dump(const std::string& path, const SimTrace& tr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  const Eigen::Index nx = tr.x.empty() ? 0 : tr.x[0].rows(), n = tr.x.empty() ? 0 : tr.x[0].cols();
  nlohmann::ordered_json h;
  h["format"] = "hypdiag-states 1";
  h["dt"] = tr.grid.dt * tr.state_stride;
  h["steps"] = tr.x.size();
  h["n_x"] = nx;
  h["points"] = n;
  h["n_w"] = tr.w.rows();
  h["n_v"] = tr.v.rows();
  h["layout"] = "per step: x row-major (n_x × points), w, v; float64 little-endian";
  out << h.dump() << "\n";
  for (std::size_t s = 0; s < tr.x.size(); ++s) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x = tr.x[s];
    out.write(reinterpret_cast<const char*>(x.data()), static_cast<std::streamsize>(x.size() * sizeof(double)));
    const Eigen::VectorXd w = tr.w.col(s);
    out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
    const Eigen::VectorXd v = tr.v.col(s * tr.state_stride);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
}

}  // namespace hypdiag
