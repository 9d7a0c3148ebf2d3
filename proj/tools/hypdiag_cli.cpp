// hypdiag: synthesis, simulation and diagnosis subcommands over JSON configs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hypdiag/config.hpp"
#include "hypdiag/diagnosis.hpp"
#include "hypdiag/errors.hpp"
#include "hypdiag/io.hpp"
#include "hypdiag/simulate.hpp"
#include "hypdiag/trajectory.hpp"

namespace fs = std::filesystem;
using namespace hypdiag;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "1.0.0";

enum Exit { kOk = 0, kValidation = 1, kSolver = 2, kIo = 3 };

struct Common {
  std::string config;
  std::string out = "out";
  int points = 0;
};

struct SynthFlags {
  double T = 0.0;
  int tau_intervals = 0;
  double tolerance = 0.0;
  int max_iterations = 0;
};

ProblemConfig load(const Common& c) { return load_config(c.config, c.points); }

SynthesisOptions synthesis_options(const ProblemConfig& cfg, const SynthFlags& f) {
  SynthesisOptions o;
  o.T = f.T > 0 ? f.T : cfg.synthesis.T;
  o.tau_intervals = f.tau_intervals > 0 ? f.tau_intervals : cfg.synthesis.tau_intervals;
  o.kernel.tolerance = f.tolerance > 0 ? f.tolerance : cfg.synthesis.kernel_tolerance;
  o.kernel.max_iterations = f.max_iterations > 0 ? f.max_iterations : cfg.synthesis.max_iterations;
  return o;
}

ordered_json options_json(const SynthesisOptions& o) {
  return {{"T", o.T},
          {"tau_intervals", o.tau_intervals},
          {"tau_step", o.T / o.tau_intervals},
          {"kernel_tolerance", o.kernel.tolerance},
          {"max_iterations", o.kernel.max_iterations}};
}

fs::path prepare(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir + ": " + ec.message());
  return fs::path(dir);
}

ordered_json manifest(const std::string& command) {
  return {{"tool", "hypdiag"}, {"version", kVersion}, {"command", command}};
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw InputError("cannot write " + p.string());
  f << s;
}

// Identifiability needs the kernel solve and W0 but no trajectory planning.
std::vector<IdentifiabilityResult> identifiability(const ProblemConfig& cfg, const SynthesisOptions& o) {
  const ReversedSystem rs0 = build_reversed_system(cfg.plant, cfg.signals);
  const BacksteppingKernelPair kp = solve_kernel(rs0, 0, o.kernel);
  const ReversedSystem rs = rs0.resampled(kp.K.points());
  const TransportGeometry geo(rs.gamma_bar, rs.dims.n_minus);
  const TargetSystemData target = target_matrices(rs, kp);
  const PsiStencil psi(geo, target.A0_tilde, rs.Q1, o.T / o.tau_intervals);
  const ParametrizationData pd = parametrize(rs, geo, target, psi);
  std::vector<IdentifiabilityResult> out;
  for (const auto& e0 : rs.eta0) out.push_back(identifiability_check(pd.W0, e0));
  return out;
}

int cmd_validate(const Common& c, const SynthFlags& sf) {
  const ProblemConfig cfg = load(c);
  const SynthesisOptions o = synthesis_options(cfg, sf);
  const fs::path out = prepare(c.out);
  std::ostringstream rep;
  ordered_json man = manifest("validate");
  man["inputs"] = {{"config", c.config}, {"points", cfg.plant.points()}};
  man["options"] = options_json(o);

  std::vector<std::string> violations;
  for (const auto& v : validate_plant(cfg.plant).violations) violations.push_back("plant " + v);
  for (const auto& v : validate_signal_model(cfg.signals, cfg.plant.dims).violations)
    violations.push_back("signals " + v);

  rep << "config: " << c.config << "\n";
  if (violations.empty()) {
    const TransportGeometry g = transport_geometry(cfg.plant);
    rep << "tau_plus = " << g.tau_plus << "\ntau_minus = " << g.tau_minus << "\nT0 = " << g.T0 << "\n";
    man["geometry"] = {{"tau_plus", g.tau_plus}, {"tau_minus", g.tau_minus}, {"T0", g.T0}};
    if (!(o.T > g.T0)) {
      std::ostringstream s;
      s << "window: T = " << o.T << " is not above the lower bound T0 = " << g.T0;
      violations.push_back(s.str());
    }
  }
  if (violations.empty()) {
    ordered_json ids = ordered_json::array();
    const auto res = identifiability(cfg, o);
    for (std::size_t i = 0; i < res.size(); ++i) {
      const auto& r = res[i];
      rep << "fault " << i + 1 << ": rank W0 = " << r.rank_W0 << ", augmented = " << r.rank_augmented
          << (r.identifiable ? ", identifiable" : ", NOT identifiable") << "\n";
      ids.push_back({{"fault", i + 1},
                     {"identifiable", r.identifiable},
                     {"rank_W0", r.rank_W0},
                     {"rank_augmented", r.rank_augmented},
                     {"consistency", r.consistency}});
      if (!r.identifiable) violations.push_back("identifiability: fault " + std::to_string(i + 1));
    }
    man["identifiability"] = ids;
  }
  for (const auto& v : violations) rep << "violation: " << v << "\n";
  rep << (violations.empty() ? "result: pass\n" : "result: FAIL\n");
  write_text(out / "validate_report.txt", rep.str());
  man["violations"] = violations;
  man["outputs"] = {"validate_report.txt"};
  write_json((out / "manifest_validate.json").string(), man);
  std::cout << rep.str();
  return violations.empty() ? kOk : kValidation;
}

ordered_json residual_json(const SynthesisResult& r, const KernelEquationResidual* ker) {
  ordered_json j;
  const auto& info = r.kernels.info;
  j["backstepping"] = {{"iterations", info.iterations},
                       {"last_increment", info.last_increment},
                       {"diagonal_residual", info.diagonal_residual},
                       {"edge_residual", info.edge_residual},
                       {"characteristic_residual", info.characteristic_residual},
                       {"inverse_residual", info.inverse_residual}};
  ordered_json faults = ordered_json::array();
  const DiagnosisKernels& dk = r.dk;
  for (int i = 0; i < dk.n_f(); ++i) {
    const double mmax = dk.M.empty() ? 0.0 : dk.M[i].cwiseAbs().maxCoeff();
    ordered_json f = {{"fault", i + 1},
                      {"identifiable", r.identifiability[i].identifiable},
                      {"rank_W0", r.identifiability[i].rank_W0},
                      {"terminal_residual", r.plans[i].terminal_residual},
                      {"trace_max", r.plans[i].trace_max},
                      {"M_max", mmax},
                      {"f_B", dk.f_B[i]}};
    if (!dk.M.empty()) {
      f["M_at_0"] = dk.M[i].col(0).norm();
      f["M_at_T"] = dk.M[i].col(dk.n_tau() - 1).norm();
    }
    if (dk.dims.n_w) {
      f["P_at_0"] = dk.P[i].col(0).norm();
      f["P_at_T"] = dk.P[i].col(dk.n_tau() - 1).norm();
    }
    f["Q_at_T"] = dk.Q[i].col(dk.n_tau() - 1).norm();
    faults.push_back(f);
  }
  j["faults"] = faults;
  if (ker) j["kernel_equation"] = {{"pde", ker->pde}, {"boundary", ker->boundary}, {"ode", ker->ode}};
  return j;
}

int cmd_synthesize(const Common& c, const SynthFlags& sf, bool with_M, bool skip_residual) {
  const ProblemConfig cfg = load(c);
  const SynthesisOptions o = synthesis_options(cfg, sf);
  const fs::path out = prepare(c.out);
  const SynthesisResult r = synthesize(cfg.plant, cfg.signals, o);
  KernelEquationResidual ker;
  if (!skip_residual) ker = kernel_equation_residual(r.reversed, r.dk);

  write_kernels((out / "kernels.bin").string(), r.dk, with_M);
  write_kernels_csv((out / "kernels.csv").string(), r.dk);
  write_json((out / "residuals.json").string(), residual_json(r, skip_residual ? nullptr : &ker));
  std::ostringstream th;
  th << "fault,f_B\n";
  for (int i = 0; i < r.dk.n_f(); ++i) th << i + 1 << "," << format_double(r.dk.f_B[i]) << "\n";
  write_text(out / "thresholds.csv", th.str());

  ordered_json man = manifest("synthesize");
  man["inputs"] = {{"config", c.config}, {"points", r.dk.points}};
  man["options"] = options_json(o);
  man["options"]["include_M"] = with_M;
  man["geometry"] = {{"tau_plus", r.geometry.tau_plus}, {"tau_minus", r.geometry.tau_minus}, {"T0", r.geometry.T0}};
  man["f_B"] = std::vector<double>(r.dk.f_B.data(), r.dk.f_B.data() + r.dk.f_B.size());
  man["outputs"] = {"kernels.bin", "kernels.csv", "residuals.json", "thresholds.csv"};
  write_json((out / "manifest_synthesize.json").string(), man);
  std::cout << th.str();
  if (!skip_residual)
    std::cout << "kernel-equation residual: pde " << ker.pde << ", boundary " << ker.boundary << ", ode " << ker.ode
              << "\n";
  return kOk;
}

struct SimFlags {
  std::string kernels;
  std::string bounded;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int fault = 0;
  double target_time = -1.0;
  double horizon = 0.0;
  double dt = 0.0;
  double output_dt = 0.0;
  int sim_points = 0;
  bool states = false;
  int state_stride = 0;
};

int cmd_simulate(const Common& c, const SynthFlags& sf, const SimFlags& f) {
  ProblemConfig cfg = load(c);
  SimConfig sc = cfg.simulation;
  if (f.horizon > 0) sc.horizon = f.horizon;
  if (f.dt > 0) sc.dt = f.dt;
  if (f.output_dt > 0) sc.output_dt = f.output_dt;
  if (f.sim_points > 0) sc.points = f.sim_points;
  if (f.states) sc.record_states = true;
  if (f.state_stride > 0) sc.state_stride = f.state_stride;
  if (!f.bounded.empty()) {
    if (f.bounded == "zero") sc.bounded.kind = BoundedDisturbanceSpec::Kind::Zero;
    else if (f.bounded == "random") sc.bounded.kind = BoundedDisturbanceSpec::Kind::Random;
    else if (f.bounded == "worst_case") sc.bounded.kind = BoundedDisturbanceSpec::Kind::WorstCase;
    else throw InputError("--bounded must be zero, random or worst_case");
  }
  if (f.seed_set) sc.bounded.seed = f.seed;
  if (f.fault > 0) sc.bounded.fault = f.fault - 1;
  if (f.target_time >= 0) sc.bounded.target_time = f.target_time;

  std::optional<DiagnosisKernels> dk;
  if (!f.kernels.empty()) dk = read_kernels(f.kernels);
  const SynthesisOptions o = synthesis_options(cfg, sf);
  const double window = dk ? dk->T : o.T;
  double out_dt = sc.output_dt > 0 ? sc.output_dt : (dk ? dk->tau_step : o.T / o.tau_intervals);
  if (!(sc.horizon > 0)) throw InputError("simulation horizon must be positive");
  const TimeGrid grid{out_dt, static_cast<int>(std::floor(sc.horizon / out_dt + 1e-9)) + 1};

  const SignalSeries sig = generate_signals(cfg.signals, sc.faults, sc.vd0, grid, window);
  const Eigen::MatrixXd u = sample_input(sc, cfg.plant.dims.n_u, grid);
  Eigen::MatrixXd db = Eigen::MatrixXd::Zero(cfg.plant.dims.n_d_bar, grid.count);
  switch (sc.bounded.kind) {
    case BoundedDisturbanceSpec::Kind::Zero:
      break;
    case BoundedDisturbanceSpec::Kind::Random:
      db = random_bounded_disturbance(cfg.plant.delta, sc.bounded.hold, sc.bounded.seed, grid);
      break;
    case BoundedDisturbanceSpec::Kind::WorstCase:
      if (!dk) throw InputError("worst_case disturbance needs --kernels");
      if (sc.bounded.fault < 0 || sc.bounded.fault >= dk->n_f()) throw InputError("worst_case fault index out of range");
      db = worst_case_disturbance(dk->MGbar[sc.bounded.fault], dk->tau_step, cfg.plant.delta, sc.bounded.target_time,
                                  grid);
      break;
  }
  const SimTrace tr = simulate_plant(cfg.plant, sc, grid, u, sig, db);

  const fs::path out = prepare(c.out);
  write_trace_csv((out / "trace.csv").string(), tr);
  ordered_json outputs = {"trace.csv"};
  if (sc.record_states) {
    write_state_dump((out / "states.bin").string(), tr);
    outputs.push_back("states.bin");
  }
  static const char* kinds[] = {"zero", "random", "worst_case"};
  ordered_json man = manifest("simulate");
  man["inputs"] = {{"config", c.config}, {"kernels", f.kernels}, {"points", cfg.plant.points()}};
  man["options"] = {{"horizon", sc.horizon},
                    {"output_dt", out_dt},
                    {"samples", grid.count},
                    {"sim_points", sc.points > 0 ? sc.points : cfg.plant.points()},
                    {"internal_dt", sc.dt > 0 ? sc.dt : cfl_step(sc.points > 0 ? cfg.plant.resampled(sc.points) : cfg.plant)},
                    {"min_dwell", window},
                    {"bounded", kinds[static_cast<int>(sc.bounded.kind)]},
                    {"seed", sc.bounded.seed},
                    {"hold", sc.bounded.hold},
                    {"worst_case_fault", sc.bounded.fault + 1},
                    {"target_time", sc.bounded.target_time}};
  man["y_max"] = tr.y.size() ? tr.y.cwiseAbs().maxCoeff() : 0.0;
  man["outputs"] = outputs;
  write_json((out / "manifest_simulate.json").string(), man);
  std::cout << "wrote " << grid.count << " samples to " << (out / "trace.csv").string() << "\n";
  return kOk;
}

int cmd_diagnose(const std::string& kernels, const std::string& trace, const std::string& outdir) {
  const DiagnosisKernels dk = read_kernels(kernels);
  const SimTrace tr = read_trace_csv(trace);
  if (tr.y.rows() != dk.dims.n_minus)
    throw DimensionError("trace has " + std::to_string(tr.y.rows()) + " outputs, kernels expect " +
                         std::to_string(dk.dims.n_minus));
  if (tr.u.rows() != dk.dims.n_u)
    throw DimensionError("trace has " + std::to_string(tr.u.rows()) + " inputs, kernels expect " +
                         std::to_string(dk.dims.n_u));
  const FilterBank bank = build_filters(dk, tr.grid.dt);
  if (!bank.commensurate)
    std::cerr << "warning: kernel step " << dk.tau_step << " is not a multiple of trace step " << tr.grid.dt
              << ", kernels are interpolated\n";
  const DiagnosisReport rep = run_identification(bank, tr.y, tr.u, tr.grid.dt);
  const fs::path out = prepare(outdir);
  write_report_csv((out / "report.csv").string(), rep);

  ordered_json det = ordered_json::array();
  for (int i = 0; i < rep.f_B.size(); ++i) {
    det.push_back({{"fault", i + 1}, {"f_B", rep.f_B[i]}, {"detection_times", rep.detection_times[i]}});
    std::cout << "fault " << i + 1 << " (f_B = " << rep.f_B[i] << "):";
    if (rep.detection_times[i].empty()) std::cout << " no detection";
    for (double t : rep.detection_times[i]) std::cout << " t=" << t;
    std::cout << "\n";
  }
  ordered_json man = manifest("diagnose");
  man["inputs"] = {{"kernels", kernels}, {"trace", trace}};
  man["options"] = {{"T", dk.T}, {"dt", tr.grid.dt}, {"taps", bank.taps()}, {"commensurate", bank.commensurate}};
  man["detections"] = det;
  man["outputs"] = {"report.csv"};
  write_json((out / "manifest_diagnose.json").string(), man);
  return kOk;
}

int cmd_sweep(const Common& c, const SynthFlags& sf, std::vector<double> Ts, int count, double tau_step) {
  const ProblemConfig cfg = load(c);
  SynthesisOptions base = synthesis_options(cfg, sf);
  const TransportGeometry g = transport_geometry(cfg.plant);
  if (Ts.empty()) {
    const double a = g.T0 + 0.5, b = 3.0 * g.T0;
    for (int k = 0; k < count; ++k) Ts.push_back(count == 1 ? a : a + (b - a) * k / (count - 1));
  }
  if (!(tau_step > 0)) tau_step = base.T / base.tau_intervals;
  std::ostringstream csv;
  csv << "T";
  for (int i = 0; i < cfg.plant.dims.n_f; ++i) csv << ",f_B_" << i + 1;
  csv << "\n";
  ordered_json rows = ordered_json::array();
  for (double T : Ts) {
    SynthesisOptions o = base;
    o.T = T;
    o.tau_intervals = std::max(1, static_cast<int>(std::lround(T / tau_step)));
    o.keep_M = false;
    const SynthesisResult r = synthesize(cfg.plant, cfg.signals, o);
    csv << format_double(T);
    for (int i = 0; i < r.dk.n_f(); ++i) csv << "," << format_double(r.dk.f_B[i]);
    csv << "\n";
    rows.push_back({{"T", T}, {"tau_intervals", o.tau_intervals}});
    std::cerr << "T = " << T << " done\n";
  }
  const fs::path out = prepare(c.out);
  write_text(out / "threshold_sweep.csv", csv.str());
  ordered_json man = manifest("sweep-thresholds");
  man["inputs"] = {{"config", c.config}, {"points", cfg.plant.points()}};
  man["options"] = options_json(base);
  man["options"]["tau_step"] = tau_step;
  man["T0"] = g.T0;
  man["runs"] = rows;
  man["outputs"] = {"threshold_sweep.csv"};
  write_json((out / "manifest_sweep.json").string(), man);
  std::cout << csv.str();
  return kOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "problem config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("-o,--out", c.out, "output directory");
  sub->add_option("--points", c.points, "spatial tabulation points (overrides config)")->check(CLI::PositiveNumber);
}

void add_synth(CLI::App* sub, SynthFlags& f) {
  sub->add_option("-T,--window", f.T, "detection window T (overrides config)");
  sub->add_option("--tau-intervals", f.tau_intervals, "window subdivisions");
  sub->add_option("--kernel-tol", f.tolerance, "successive-approximation stopping increment");
  sub->add_option("--max-iter", f.max_iterations, "successive-approximation sweep limit");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fault diagnosis kernels for hyperbolic ODE-PDE systems"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common common;
  SynthFlags synth;
  SimFlags simf;
  bool with_M = false, skip_residual = false;
  std::string kernels, trace;
  std::vector<double> sweep_T;
  int sweep_count = 12;
  double sweep_step = 0.0;

  auto* v = app.add_subcommand("validate", "check structure, window bound and identifiability");
  add_common(v, common);
  add_synth(v, synth);

  auto* s = app.add_subcommand("synthesize", "compute diagnosis kernels and thresholds");
  add_common(s, common);
  add_synth(s, synth);
  s->add_flag("--with-M", with_M, "store the spatial kernel M in kernels.bin");
  s->add_flag("--skip-residual", skip_residual, "do not evaluate the kernel-equation residual");

  auto* m = app.add_subcommand("simulate", "simulate the faulty plant and write a trace");
  add_common(m, common);
  add_synth(m, synth);
  m->add_option("-k,--kernels", simf.kernels, "kernel file (sets sampling step; needed for worst_case)");
  m->add_option("--bounded", simf.bounded, "bounded disturbance: zero, random or worst_case");
  m->add_option("--seed", simf.seed, "random disturbance seed")->each([&](const std::string&) { simf.seed_set = true; });
  m->add_option("--fault", simf.fault, "worst case: fault (1-based) whose estimate is maximized");
  m->add_option("--target-time", simf.target_time, "worst case: time at which the bound is attained");
  m->add_option("--horizon", simf.horizon, "simulated time span");
  m->add_option("--dt", simf.dt, "internal time step bound");
  m->add_option("--output-dt", simf.output_dt, "trace sampling step");
  m->add_option("--sim-points", simf.sim_points, "finite-difference grid points");
  m->add_flag("--states", simf.states, "write the full state dump");
  m->add_option("--state-stride", simf.state_stride, "record states every n samples");

  auto* d = app.add_subcommand("diagnose", "run the filter bank over a trace");
  d->add_option("-k,--kernels", kernels, "kernel file")->required()->check(CLI::ExistingFile);
  d->add_option("-t,--trace", trace, "trace CSV")->required()->check(CLI::ExistingFile);
  d->add_option("-o,--out", common.out, "output directory");

  auto* w = app.add_subcommand("sweep-thresholds", "thresholds f_B as a function of T");
  add_common(w, common);
  add_synth(w, synth);
  w->add_option("--T-list", sweep_T, "explicit window lengths")->delimiter(',');
  w->add_option("--count", sweep_count, "number of windows in [T0+0.5, 3 T0]")->check(CLI::PositiveNumber);
  w->add_option("--tau-step", sweep_step, "kernel sampling step (default from config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kIo;
  }

  try {
    if (*v) return cmd_validate(common, synth);
    if (*s) return cmd_synthesize(common, synth, with_M, skip_residual);
    if (*m) return cmd_simulate(common, synth, simf);
    if (*d) return cmd_diagnose(kernels, trace, common.out);
    if (*w) return cmd_sweep(common, synth, sweep_T, sweep_count, sweep_step);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const SolverError& e) {
    std::cerr << "solver error [" << e.stage() << "]: " << e.what() << "\n";
    return kSolver;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kIo;
  } catch (const DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kOk;
}
