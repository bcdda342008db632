#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slwr/config.hpp"
#include "slwr/errors.hpp"
#include "slwr/fpe.hpp"
#include "slwr/inference.hpp"
#include "slwr/manifest.hpp"
#include "slwr/model.hpp"
#include "slwr/pfode.hpp"
#include "slwr/scorenet.hpp"
#include "slwr/simulate.hpp"
#include "slwr/stats.hpp"
#include "slwr/train.hpp"

namespace {

using namespace slwr;

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

void emit_manifest(const std::string& command, const std::vector<std::string>& configs,
                   const std::vector<std::uint64_t>& seeds,
                   const std::vector<std::string>& artifacts, double wall_clock) {
  if (artifacts.empty()) return;
  RunManifest m;
  m.command = command;
  m.config_paths = configs;
  m.seeds = seeds;
  m.wall_clock_sec = wall_clock;
  for (const auto& path : artifacts) m.artifacts.push_back(hash_artifact(path));
  write_manifest(m, artifacts.front() + ".manifest.json");
}

Closure build_closure(const std::string& spec, const TrafficModel& model, double x_query,
                      int nx_hint) {
  if (spec == "zero") return Closure::zero();
  if (spec == "meanfield") {
    const int nx = nx_hint;
    const double dx = model.domain_length / nx;
    const double speed = max_wave_speed(model.flux);
    const int nt = std::max(1, static_cast<int>(std::ceil(model.horizon * speed / (0.45 * dx))));
    const SpaceTimeGrid grid = SpaceTimeGrid::create(model, nx, nt);
    auto mean = std::make_shared<DeterministicField>(deterministic_lwr(model, grid));
    return Closure::mean_field(model.flux, std::move(mean));
  }
  if (spec.rfind("oracle:", 0) == 0) {
    const std::string path = spec.substr(7);
    const Ensemble ens = load_ensemble(path, model.rho_max());
    const int x_index =
        std::clamp(static_cast<int>(x_query / ens.grid.dx), 0, ens.grid.nx - 1);
    std::vector<OracleClosure> tables;
    for (int slot = 0; slot < ens.n_slots(); ++slot)
      tables.push_back(estimate_conditional_drift(ens, model, x_index, slot, 64));
    return Closure::oracle_tabulated(std::move(tables));
  }
  throw ConfigError("unknown closure '" + spec + "' (expected zero|oracle:ens.bin|meanfield)");
}

// -- subcommands -------------------------------------------------------------

int cmd_validate(const std::string& config_path) {
  const TrafficModel model = load_model(config_path);
  const ValidationReport report = validate_assumptions(model);
  std::cout << report.to_string();
  return report.all_fatal_pass() ? 0 : 1;
}

int cmd_simulate(const std::string& config_path, int nx, int nt, int nreal,
                 std::uint64_t seed, int store_every, const std::string& out, int threads,
                 const std::string& boundary_spec) {
  Timer timer;
  const TrafficModel model = load_model(config_path);
  Boundary boundary = Boundary::periodic();
  if (boundary_spec.rfind("dirichlet:", 0) == 0) {
    const std::string vals = boundary_spec.substr(10);
    const auto comma = vals.find(',');
    if (comma == std::string::npos)
      throw ConfigError("dirichlet boundary needs 'dirichlet:left,right'");
    boundary = Boundary::dirichlet(std::stod(vals.substr(0, comma)),
                                   std::stod(vals.substr(comma + 1)));
  } else if (boundary_spec != "periodic") {
    throw ConfigError("unknown boundary '" + boundary_spec + "'");
  }
  const SpaceTimeGrid grid = SpaceTimeGrid::create(model, nx, nt, boundary);
  const Ensemble ens = simulate_ensemble(model, grid, nreal, seed, store_every, threads);
  save_ensemble(ens, out);
  std::cout << "wrote " << out << " (" << nreal << " realisations, " << ens.n_slots()
            << " slices)\n";
  emit_manifest("simulate", {config_path}, {seed}, {out}, timer.seconds());
  return 0;
}

int cmd_solve_fpe(const std::string& config_path, const std::string& closure_spec, double x,
                  int ncells, double dt, double tmax, const std::string& out,
                  double eps_width_opt, int store_slices) {
  Timer timer;
  const TrafficModel model = load_model(config_path);
  const DensityMesh mesh = DensityMesh::uniform(ncells, model.rho_max());
  const Closure closure = build_closure(closure_spec, model, x, 256);
  const double eps_width = eps_width_opt > 0.0 ? eps_width_opt : 4.0 * mesh.h;
  const std::vector<double> init = mollified_delta(mesh, model.rho0(x), eps_width);
  FpeOptions options;
  options.t_begin = 0.0;
  options.t_end = tmax;
  options.dt = dt;
  for (int j = 0; j <= store_slices; ++j)
    options.store_times.push_back(tmax * j / std::max(1, store_slices));
  const DensityGrid grid = solve_fpe(model, closure, x, mesh, options, init);
  save_density_grid(grid, out);
  if (closure.kind() == Closure::Kind::OracleTabulated && closure.fill_gap_count() > 0)
    std::cout << "oracle closure: filled " << closure.fill_gap_count()
              << " empty bins by interpolation\n";
  std::cout << "wrote " << out << " (" << grid.n_times() << " slices, mass renorm "
            << grid.cumulative_renorm << ")\n";
  emit_manifest("solve-fpe", {config_path}, {}, {out}, timer.seconds());
  return 0;
}

int cmd_pfode(const std::string& pgrid_path, const std::string& config_path,
              const std::string& closure_spec, double t0, double t1, int nparticles,
              std::uint64_t seed, const std::string& out, int threads) {
  Timer timer;
  const TrafficModel model = load_model(config_path);
  const DensityGrid pgrid = load_density_grid(pgrid_path);
  const Closure closure = build_closure(closure_spec, model, pgrid.x, 256);
  auto score = std::make_shared<TabulatedScore>(pgrid);
  const VelocityField field = assemble_velocity(closure, model, score, pgrid.x);

  const int slot0 = pgrid.nearest_time_index(t0);
  ParticleSet particles;
  particles.positions = sample_from_density(pgrid.mesh, pgrid.slice(slot0), nparticles, seed);
  particles.t_current = pgrid.times[slot0];
  const double dt_ode = pgrid.dt > 0.0 ? pgrid.dt : (t1 - t0) / 256.0;
  const ParticleSet moved = transport_particles(field, particles, t1, dt_ode, threads);

  const BoundaryCompatibilityReport report =
      check_boundary_compatibility(field, {particles.t_current, 0.5 * (t0 + t1), t1},
                                   2.0 * pgrid.mesh.h);
  std::cout << report.to_string();

  std::ofstream os(out);
  if (!os) throw ConfigError("cannot open '" + out + "' for writing");
  os.precision(17);
  os << "rho\n";
  for (double v : moved.positions) os << v << "\n";
  os.close();
  std::cout << "wrote " << out << " (" << nparticles << " particles at t = " << t1 << ")\n";
  emit_manifest("pfode", {config_path, pgrid_path}, {seed}, {out}, timer.seconds());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& obs_path,
              const std::string& train_config_path, const std::string& out,
              const std::string& log_path) {
  Timer timer;
  const TrafficModel model = load_model(config_path);
  const TrainConfig config = load_train_config(train_config_path, model.rho_max());
  const ObservationSet obs = ObservationSet::from_csv(obs_path, model);
  const TrainResult result = train(obs, model, config);

  Checkpoint ckpt;
  ckpt.score_depth = config.score_depth;
  ckpt.score_width = config.score_width;
  ckpt.levels = config.encoding_levels;
  ckpt.closure_kind = static_cast<int>(config.closure_kind);
  ckpt.closure_depth = config.closure_depth;
  ckpt.closure_width = config.closure_width;
  ckpt.theta = result.score.net().params();
  ckpt.phi = result.closure.net().params();
  ckpt.alphas = result.alphas;
  save_checkpoint(ckpt, out);
  if (!log_path.empty()) save_train_log(result.log, log_path);

  if (!result.log.empty()) {
    const TrainLogRow& last = result.log.back();
    std::cout << "final loss " << last.loss_total << " (sm " << last.loss_sm << ", pf "
              << last.loss_pf << ", bc " << last.loss_bc << ") after " << result.log.size()
              << " epochs\n";
  }
  std::vector<std::string> artifacts{out};
  if (!log_path.empty()) artifacts.push_back(log_path);
  emit_manifest("train", {config_path, train_config_path, obs_path}, {config.seed}, artifacts,
                timer.seconds());
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& config_path, double x, double t,
              double rho_c, const std::string& out, const std::string& flow_out) {
  Timer timer;
  const TrafficModel model = load_model(config_path);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  ScoreModel score(ckpt.score_depth, ckpt.score_width, ckpt.levels, model.rho_max(),
                   model.domain_length, model.horizon, 0);
  if (score.net().params().size() != ckpt.theta.size())
    throw ConfigError("checkpoint parameter count does not match its architecture header");
  score.net().params() = ckpt.theta;

  const RecoveredDensity density = recover_density(
      [&](double rho_hat) { return eval_with_derivatives(score, rho_hat, x, t).v; },
      model.rho_max(), x, t, 0.5 * model.rho_max(), 100);
  const SummaryStats stats = summary_stats(density);
  const double risk = congestion_risk(density, rho_c);

  nlohmann::json j;
  j["x"] = x;
  j["t"] = t;
  j["rho_c"] = rho_c;
  j["mean"] = stats.mean;
  j["std"] = stats.stddev;
  j["ci_lo"] = stats.ci_lo;
  j["ci_hi"] = stats.ci_hi;
  j["congestion_risk"] = risk;
  j["quadrature_mass"] = density.quadrature_mass();
  std::ofstream os(out);
  if (!os) throw ConfigError("cannot open '" + out + "' for writing");
  os << j.dump(2) << "\n";
  os.close();

  std::vector<std::string> artifacts{out};
  if (!flow_out.empty()) {
    const FlowDensity flow = flow_pushforward(density, model.flux);
    std::ofstream fs(flow_out);
    if (!fs) throw ConfigError("cannot open '" + flow_out + "' for writing");
    fs.precision(17);
    fs << "q,p_q\n";
    for (std::size_t i = 0; i < flow.q_nodes.size(); ++i)
      fs << flow.q_nodes[i] << "," << flow.p_q[i] << "\n";
    artifacts.push_back(flow_out);
    std::cout << "flow pushforward: excised mass " << flow.excised_mass << " near capacity\n";
  }
  std::cout << "mean " << stats.mean << ", std " << stats.stddev << ", CI [" << stats.ci_lo
            << ", " << stats.ci_hi << "], risk " << risk << "\n";
  emit_manifest("infer", {config_path, ckpt_path}, {}, artifacts, timer.seconds());
  return 0;
}

int cmd_triangle(const std::string& config_path, int nreal, std::uint64_t seed, int nx,
                 int ncells, int nbins, int nparticles, int threads) {
  const TrafficModel model = load_model(config_path);
  const ValidationReport validation = validate_assumptions(model);
  if (!validation.all_fatal_pass()) {
    std::cout << validation.to_string();
    return 1;
  }
  const double rho_max = model.rho_max();
  const double w1_threshold = 0.02 * rho_max;
  const double ks_threshold = 0.03;

  const double dx = model.domain_length / nx;
  const double speed = max_wave_speed(model.flux);
  int nt = std::max(1, static_cast<int>(std::ceil(model.horizon * speed / (0.45 * dx))));
  int store_every = std::max(1, nt / 16);
  nt = ((nt + store_every - 1) / store_every) * store_every;  // make store_every divide nt
  const SpaceTimeGrid grid = SpaceTimeGrid::create(model, nx, nt);
  const int x_index = nx / 2;
  const double x = grid.cell_center(x_index);

  // degenerate noise: every realisation equals the deterministic path
  if (model.noise.max_sigma_sq() == 0.0) {
    const Ensemble ens = simulate_ensemble(model, grid, std::min(nreal, 8), seed, store_every,
                                           threads);
    const DeterministicField det = deterministic_lwr(model, grid);
    bool identical = true;
    for (int r = 0; r < ens.n_real && identical; ++r)
      for (int j = 0; j < ens.n_slots() && identical; ++j)
        for (int i = 0; i < nx; ++i)
          if (ens.at(r, j, i) != det.at(ens.stored_steps[j], i)) {
            identical = false;
            break;
          }
    std::cout << "triangle: degenerate noise (sigma = 0); delta-marginal shortcut\n";
    std::cout << "  ensemble == deterministic bit-for-bit: " << (identical ? "yes" : "NO")
              << "\n";
    std::cout << (identical ? "PASS" : "FAIL") << " (trivial: marginals are point masses)\n";
    return identical ? 0 : 1;
  }

  std::cout << "triangle: nx=" << nx << " nt=" << nt << " nreal=" << nreal << " x=" << x
            << " T=" << model.horizon << "\n";
  const Ensemble ens = simulate_ensemble(model, grid, nreal, seed, store_every, threads);

  std::vector<OracleClosure> tables;
  for (int slot = 0; slot < ens.n_slots(); ++slot)
    tables.push_back(estimate_conditional_drift(ens, model, x_index, slot, nbins));
  const Closure closure = Closure::oracle_tabulated(std::move(tables));

  const DensityMesh mesh = DensityMesh::uniform(ncells, rho_max);
  double max_sigma_sq = 0.0;
  for (int i = 0; i < ncells; ++i)
    max_sigma_sq = std::max(max_sigma_sq, model.noise.sigma_sq(mesh.center(i), x));
  FpeOptions options;
  options.t_begin = 0.0;
  options.t_end = model.horizon;
  options.dt = 0.2 * mesh.h * mesh.h / max_sigma_sq;
  for (int j = 0; j <= 64; ++j) options.store_times.push_back(model.horizon * j / 64.0);
  const std::vector<double> init = mollified_delta(mesh, model.rho0(x), 4.0 * mesh.h);
  const DensityGrid pgrid = solve_fpe(model, closure, x, mesh, options, init);

  // MC <-> FPE: Wasserstein-1 at (x, T)
  std::vector<double> samples(nreal);
  const int last_slot = ens.n_slots() - 1;
  for (int r = 0; r < nreal; ++r) samples[r] = ens.at(r, last_slot, x_index);
  const PiecewiseLinearCdf fpe_cdf =
      cdf_from_density(mesh.edges(), pgrid.slice(pgrid.n_times() - 1));
  const double w1 = wasserstein1_samples(samples, fpe_cdf);

  // sampling floor for the advisory: E W1(emp, truth) ~ integral sqrt(F(1-F)/n)
  double floor = 0.0;
  for (int i = 0; i + 1 < static_cast<int>(fpe_cdf.x.size()); ++i) {
    const double f = 0.5 * (fpe_cdf.F[i] + fpe_cdf.F[i + 1]);
    floor += std::sqrt(std::max(0.0, f * (1.0 - f))) * (fpe_cdf.x[i + 1] - fpe_cdf.x[i]);
  }
  floor /= std::sqrt(static_cast<double>(nreal));

  // FPE <-> PF-ODE: KS after transporting particles from t0 to T
  const double t0 = std::max(10.0 * options.dt, 0.25 * model.horizon);
  const int slot0 = pgrid.nearest_time_index(t0);
  auto score = std::make_shared<TabulatedScore>(pgrid);
  const VelocityField field = assemble_velocity(closure, model, score, x);
  ParticleSet particles;
  particles.positions =
      sample_from_density(pgrid.mesh, pgrid.slice(slot0), nparticles, seed ^ 0x9e37ULL);
  particles.t_current = pgrid.times[slot0];
  const ParticleSet moved =
      transport_particles(field, particles, model.horizon, options.dt, threads);
  const double ks = ks_distance_samples(moved.positions, fpe_cdf);

  const bool w1_pass = w1 <= w1_threshold;
  const bool ks_pass = ks <= ks_threshold;
  const bool advisory = floor > 0.25 * w1_threshold;
  std::cout << "  W1(empirical, FPE) = " << w1 << " (threshold " << w1_threshold << ") -> "
            << (w1_pass ? "pass" : "FAIL") << "\n";
  if (advisory)
    std::cout << "  advisory: W1 sampling floor " << floor << " is large at nreal = " << nreal
              << "; increase realisations\n";
  std::cout << "  KS(PF-ODE particles, FPE) = " << ks << " (threshold " << ks_threshold
            << ") -> " << (ks_pass ? "pass" : "FAIL") << "\n";
  std::cout << (w1_pass && ks_pass ? "PASS" : "FAIL") << "\n";
  return (w1_pass && ks_pass) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic LWR distributional pipeline"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap")->capture_default_str();

  // validate
  auto* validate = app.add_subcommand("validate", "check model assumptions");
  std::string v_config;
  validate->add_option("--config", v_config, "model config")->required();

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Monte-Carlo SLWR ensemble");
  std::string s_config, s_out, s_boundary = "periodic";
  int s_nx = 64, s_nt = 64, s_nreal = 1000, s_store = 1;
  std::uint64_t s_seed = 0;
  bool s_seed_set = false;
  simulate->add_option("--config", s_config)->required();
  simulate->add_option("--nx", s_nx)->capture_default_str();
  simulate->add_option("--nt", s_nt)->capture_default_str();
  simulate->add_option("--nreal", s_nreal)->capture_default_str();
  simulate->add_option("--seed", s_seed)->each([&](const std::string&) { s_seed_set = true; });
  simulate->add_option("--store-every", s_store)->capture_default_str();
  simulate->add_option("--out", s_out)->required();
  simulate->add_option("--boundary", s_boundary, "periodic | dirichlet:left,right")
      ->capture_default_str();

  // solve-fpe
  auto* solvefpe = app.add_subcommand("solve-fpe", "one-point Fokker-Planck solve");
  std::string f_config, f_closure = "zero", f_out;
  double f_x = 0.5, f_dt = 0.0, f_tmax = 1.0, f_eps = 0.0;
  int f_ncells = 400, f_slices = 64;
  solvefpe->add_option("--config", f_config)->required();
  solvefpe->add_option("--closure", f_closure, "zero | oracle:ens.bin | meanfield")
      ->capture_default_str();
  solvefpe->add_option("--x", f_x)->required();
  solvefpe->add_option("--ncells", f_ncells)->capture_default_str();
  solvefpe->add_option("--dt", f_dt)->required();
  solvefpe->add_option("--tmax", f_tmax)->required();
  solvefpe->add_option("--out", f_out)->required();
  solvefpe->add_option("--eps-width", f_eps, "mollifier width (default 4h)");
  solvefpe->add_option("--store-slices", f_slices)->capture_default_str();

  // pfode
  auto* pfode = app.add_subcommand("pfode", "probability-flow particle transport");
  std::string p_pgrid, p_config, p_closure = "zero", p_out;
  double p_t0 = 0.0, p_t1 = 1.0;
  int p_n = 10000;
  std::uint64_t p_seed = 0;
  bool p_seed_set = false;
  pfode->add_option("--pgrid", p_pgrid)->required();
  pfode->add_option("--config", p_config, "model config (diffusion and closure inputs)")
      ->required();
  pfode->add_option("--closure", p_closure)->capture_default_str();
  pfode->add_option("--t0", p_t0)->required();
  pfode->add_option("--t1", p_t1)->required();
  pfode->add_option("--nparticles", p_n)->capture_default_str();
  pfode->add_option("--seed", p_seed)->each([&](const std::string&) { p_seed_set = true; });
  pfode->add_option("--out", p_out)->required();

  // train
  auto* traincmd = app.add_subcommand("train", "physics-informed score matching");
  std::string t_config, t_obs, t_tc, t_out, t_log;
  traincmd->add_option("--config", t_config)->required();
  traincmd->add_option("--obs", t_obs)->required();
  traincmd->add_option("--train-config", t_tc)->required();
  traincmd->add_option("--out", t_out)->required();
  traincmd->add_option("--log", t_log);

  // infer
  auto* infer = app.add_subcommand("infer", "distributional summary at (x, t)");
  std::string i_ckpt, i_config, i_out, i_flow;
  double i_x = 0.5, i_t = 0.5, i_rhoc = 0.7;
  infer->add_option("--ckpt", i_ckpt)->required();
  infer->add_option("--config", i_config)->required();
  infer->add_option("--x", i_x)->required();
  infer->add_option("--t", i_t)->required();
  infer->add_option("--rho-c", i_rhoc)->capture_default_str();
  infer->add_option("--out", i_out)->required();
  infer->add_option("--flow-out", i_flow, "also write the flow pushforward CSV");

  // triangle
  auto* triangle = app.add_subcommand("triangle", "MC <-> FPE <-> PF-ODE cross-check");
  std::string g_config;
  int g_nreal = 20000, g_nx = 64, g_ncells = 400, g_nbins = 48, g_nparticles = 10000;
  std::uint64_t g_seed = 0;
  bool g_seed_set = false;
  triangle->add_option("--config", g_config)->required();
  triangle->add_option("--nreal", g_nreal)->capture_default_str();
  triangle->add_option("--seed", g_seed)->each([&](const std::string&) { g_seed_set = true; });
  triangle->add_option("--nx", g_nx)->capture_default_str();
  triangle->add_option("--ncells", g_ncells)->capture_default_str();
  triangle->add_option("--nbins", g_nbins)->capture_default_str();
  triangle->add_option("--nparticles", g_nparticles)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (validate->parsed()) return cmd_validate(v_config);
    if (simulate->parsed()) {
      if (!s_seed_set) throw ConfigError("simulate: --seed is required (no wall-clock default)");
      return cmd_simulate(s_config, s_nx, s_nt, s_nreal, s_seed, s_store, s_out, threads,
                          s_boundary);
    }
    if (solvefpe->parsed())
      return cmd_solve_fpe(f_config, f_closure, f_x, f_ncells, f_dt, f_tmax, f_out, f_eps,
                           f_slices);
    if (pfode->parsed()) {
      if (!p_seed_set) throw ConfigError("pfode: --seed is required (no wall-clock default)");
      return cmd_pfode(p_pgrid, p_config, p_closure, p_t0, p_t1, p_n, p_seed, p_out, threads);
    }
    if (traincmd->parsed()) return cmd_train(t_config, t_obs, t_tc, t_out, t_log);
    if (infer->parsed()) return cmd_infer(i_ckpt, i_config, i_x, i_t, i_rhoc, i_out, i_flow);
    if (triangle->parsed()) {
      if (!g_seed_set) throw ConfigError("triangle: --seed is required (no wall-clock default)");
      return cmd_triangle(g_config, g_nreal, g_seed, g_nx, g_ncells, g_nbins, g_nparticles,
                          threads);
    }
  } catch (const ValidationError& e) {
    std::cerr << "validation failure: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
