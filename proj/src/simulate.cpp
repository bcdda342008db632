#include "slwr/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "slwr/errors.hpp"
#include "slwr/rng.hpp"

namespace slwr {

double max_wave_speed(const FluxFunction& flux, int n_probes) {
  double best = 0.0;
  for (int i = 0; i <= n_probes; ++i) {
    const double rho = flux.rho_max() * i / n_probes;
    best = std::max(best, std::fabs(flux.prime(rho)));
  }
  return best;
}

SpaceTimeGrid SpaceTimeGrid::create(const TrafficModel& model, int nx, int nt,
                                    Boundary boundary) {
  if (nx < 3 || nt < 1) throw ConfigError("grid requires nx >= 3 and nt >= 1");
  SpaceTimeGrid g;
  g.nx = nx;
  g.dx = model.domain_length / nx;
  g.nt = nt;
  g.dt = model.horizon / nt;
  g.boundary = boundary;

  const double speed = max_wave_speed(model.flux);
  const double cfl = g.dt * speed / g.dx;
  if (cfl > 0.9)
    throw ConfigError("CFL violation: dt max|f'| / dx = " + std::to_string(cfl) +
                      " > 0.9 (dt = " + std::to_string(g.dt) + ", dx = " + std::to_string(g.dx) +
                      ")");
  if (model.viscosity > 0.0) {
    const double visc = g.dt * model.viscosity / (g.dx * g.dx);
    if (visc > 0.4)
      throw ConfigError("viscous stability violation: dt eps / dx^2 = " + std::to_string(visc) +
                        " > 0.4");
  }
  return g;
}

int Ensemble::nearest_slot(double t) const {
  int best = 0;
  double gap = std::fabs(slot_time(0) - t);
  for (int j = 1; j < n_slots(); ++j) {
    const double g = std::fabs(slot_time(j) - t);
    if (g < gap) {
      gap = g;
      best = j;
    }
  }
  return best;
}

double DeterministicField::value(int i, double t) const {
  const double s = std::clamp(t / grid.dt, 0.0, static_cast<double>(grid.nt));
  const int s0 = std::min(static_cast<int>(s), grid.nt - 1);
  const double w = s - s0;
  return (1.0 - w) * at(s0, i) + w * at(s0 + 1, i);
}

double DeterministicField::gradient_x(int i, double t) const {
  const int nx = grid.nx;
  if (grid.boundary.kind == BoundaryKind::Periodic) {
    const int il = (i + nx - 1) % nx, ir = (i + 1) % nx;
    return (value(ir, t) - value(il, t)) / (2.0 * grid.dx);
  }
  const int il = std::max(i - 1, 0), ir = std::min(i + 1, nx - 1);
  return (value(ir, t) - value(il, t)) / ((ir - il) * grid.dx);
}

namespace {

struct StepperContext {
  const TrafficModel* model;
  const SpaceTimeGrid* grid;
  std::vector<double> e_table;  // [mode][cell] basis values
  std::size_t n_modes;
  double rho_max;

  double basis(std::size_t k, int i) const { return e_table[k * grid->nx + i]; }
};

StepperContext make_context(const TrafficModel& model, const SpaceTimeGrid& grid) {
  StepperContext ctx;
  ctx.model = &model;
  ctx.grid = &grid;
  ctx.n_modes = model.noise.is_constant_test() ? 1 : model.noise.n_modes();
  ctx.rho_max = model.rho_max();
  ctx.e_table.assign(ctx.n_modes * grid.nx, 0.0);
  if (model.noise.is_constant_test()) {
    for (int i = 0; i < grid.nx; ++i) ctx.e_table[i] = 1.0;
  } else {
    for (std::size_t k = 0; k < ctx.n_modes; ++k)
      for (int i = 0; i < grid.nx; ++i)
        ctx.e_table[k * grid.nx + i] = model.noise.basis_value(k, grid.cell_center(i));
  }
  return ctx;
}

double rusanov_flux(const FluxFunction& f, double rho_l, double rho_r) {
  const double a = std::max(std::fabs(f.prime(rho_l)), std::fabs(f.prime(rho_r)));
  return 0.5 * (f.value(rho_l) + f.value(rho_r)) - 0.5 * a * (rho_r - rho_l);
}

double reflect_into_range(double rho, double rho_max) {
  // reflection preserves the invariant interval; excursions are rare and
  // small because the noise vanishes at the endpoints
  while (rho < 0.0 || rho > rho_max) {
    if (rho < 0.0) rho = -rho;
    if (rho > rho_max) rho = 2.0 * rho_max - rho;
  }
  return rho;
}

/// Advances one realisation over all steps, writing stored slices.
/// When with_noise is false every Brownian increment is forced to zero.
void run_realisation(const StepperContext& ctx, int realisation, std::uint64_t seed,
                     bool with_noise, const std::vector<int>& stored_steps, double* out_slices) {
  const SpaceTimeGrid& grid = *ctx.grid;
  const TrafficModel& model = *ctx.model;
  const int nx = grid.nx;
  const double dx = grid.dx, dt = grid.dt;
  const double sqrt_dt = std::sqrt(dt);
  const double rho_max = ctx.rho_max;
  const bool periodic = grid.boundary.kind == BoundaryKind::Periodic;
  const bool constant_noise = model.noise.is_constant_test();
  const double const_sigma = constant_noise ? std::sqrt(model.noise.sigma_sq(0.0, 0.0)) : 0.0;

  rng::CounterRng stream(seed, static_cast<std::uint64_t>(realisation));

  std::vector<double> rho(nx), flux_edge(nx + 1), dW(ctx.n_modes, 0.0);
  for (int i = 0; i < nx; ++i) rho[i] = model.rho0(grid.cell_center(i));

  std::size_t next_store = 0;
  auto store_if_due = [&](int step) {
    if (next_store < stored_steps.size() && stored_steps[next_store] == step) {
      std::copy(rho.begin(), rho.end(), out_slices + next_store * nx);
      ++next_store;
    }
  };
  store_if_due(0);

  for (int step = 0; step < grid.nt; ++step) {
    // edge fluxes
    if (periodic) {
      for (int i = 0; i <= nx; ++i) {
        const double l = rho[(i + nx - 1) % nx];
        const double r = rho[i % nx];
        flux_edge[i] = rusanov_flux(model.flux, l, r);
      }
    } else {
      flux_edge[0] = rusanov_flux(model.flux, grid.boundary.rho_left, rho[0]);
      for (int i = 1; i < nx; ++i) flux_edge[i] = rusanov_flux(model.flux, rho[i - 1], rho[i]);
      flux_edge[nx] = rusanov_flux(model.flux, rho[nx - 1], grid.boundary.rho_right);
    }

    if (with_noise) {
      for (std::size_t k = 0; k < ctx.n_modes; ++k)
        dW[k] = sqrt_dt * stream.normal_at(static_cast<std::uint64_t>(step) * ctx.n_modes + k);
    }

    for (int i = 0; i < nx; ++i) {
      double rhs = -(flux_edge[i + 1] - flux_edge[i]) / dx;
      if (model.viscosity > 0.0) {
        const double l = periodic ? rho[(i + nx - 1) % nx]
                                  : (i == 0 ? grid.boundary.rho_left : rho[i - 1]);
        const double r = periodic ? rho[(i + 1) % nx]
                                  : (i == nx - 1 ? grid.boundary.rho_right : rho[i + 1]);
        rhs += model.viscosity * (r - 2.0 * rho[i] + l) / (dx * dx);
      }
      double next = rho[i] + dt * rhs;
      if (with_noise) {
        for (std::size_t k = 0; k < ctx.n_modes; ++k) {
          const double sigma =
              constant_noise ? const_sigma : model.noise.mode_intensity(k, rho[i]);
          next += sigma * ctx.basis(k, i) * dW[k];
        }
      }
      flux_edge[i] = next;  // reuse as scratch for the updated state
    }
    for (int i = 0; i < nx; ++i) {
      double next = reflect_into_range(flux_edge[i], rho_max);
      if (!std::isfinite(next))
        throw NumericalError("simulation diverged: NaN at step " + std::to_string(step + 1) +
                             ", realisation " + std::to_string(realisation));
      rho[i] = next;
    }
    store_if_due(step + 1);
  }
}

}  // namespace

Ensemble simulate_ensemble(const TrafficModel& model, const SpaceTimeGrid& grid, int n_real,
                           std::uint64_t seed, int store_every, int n_threads) {
  if (n_real < 1) throw ConfigError("simulate_ensemble: n_real must be >= 1");
  if (store_every < 1 || grid.nt % store_every != 0)
    throw ConfigError("simulate_ensemble: store_every must divide nt");
  {
    const ValidationReport report = validate_assumptions(model, 128);
    if (!report.all_fatal_pass())
      throw ValidationError("model assumptions failed:\n" + report.to_string());
  }

  Ensemble ens;
  ens.grid = grid;
  ens.n_real = n_real;
  ens.seed = seed;
  ens.rho_max = model.rho_max();
  for (int s = 0; s <= grid.nt; s += store_every) ens.stored_steps.push_back(s);
  const std::size_t slice = static_cast<std::size_t>(ens.n_slots()) * grid.nx;
  ens.data.assign(static_cast<std::size_t>(n_real) * slice, 0.0);

  const StepperContext ctx = make_context(model, grid);
  const bool with_noise = model.noise.is_constant_test() || model.noise.n_modes() > 0;

  n_threads = std::max(1, std::min(n_threads, n_real));
  auto worker = [&](int begin, int end) {
    for (int r = begin; r < end; ++r)
      run_realisation(ctx, r, seed, with_noise, ens.stored_steps, ens.data.data() + r * slice);
  };
  if (n_threads == 1) {
    worker(0, n_real);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (n_real + n_threads - 1) / n_threads;
    std::exception_ptr first_error;
    std::mutex error_lock;
    for (int t = 0; t < n_threads; ++t) {
      const int b = t * chunk, e = std::min(n_real, b + chunk);
      if (b >= e) break;
      pool.emplace_back([&, b, e] {
        try {
          worker(b, e);
        } catch (...) {
          std::scoped_lock lk(error_lock);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  return ens;
}

DeterministicField deterministic_lwr(const TrafficModel& model, const SpaceTimeGrid& grid) {
  DeterministicField field;
  field.grid = grid;
  field.data.assign(static_cast<std::size_t>(grid.nt + 1) * grid.nx, 0.0);
  std::vector<int> all_steps(grid.nt + 1);
  for (int s = 0; s <= grid.nt; ++s) all_steps[s] = s;
  const StepperContext ctx = make_context(model, grid);
  run_realisation(ctx, 0, /*seed=*/0, /*with_noise=*/false, all_steps, field.data.data());
  return field;
}

EmpiricalMarginal empirical_marginal(const Ensemble& ens, int x_index, int t_slot, int n_bins) {
  if (x_index < 0 || x_index >= ens.grid.nx)
    throw DomainError("empirical_marginal: x_index " + std::to_string(x_index) + " out of range");
  if (t_slot < 0 || t_slot >= ens.n_slots())
    throw DomainError("empirical_marginal: t_slot " + std::to_string(t_slot) + " out of range");
  if (n_bins < 1) throw DomainError("empirical_marginal: n_bins must be >= 1");

  EmpiricalMarginal m;
  m.x = ens.grid.cell_center(x_index);
  m.t = ens.slot_time(t_slot);
  m.bin_edges.resize(n_bins + 1);
  for (int b = 0; b <= n_bins; ++b) m.bin_edges[b] = ens.rho_max * b / n_bins;
  m.mass.assign(n_bins, 0.0);
  const double w = 1.0 / ens.n_real;
  for (int r = 0; r < ens.n_real; ++r) {
    const double v = ens.at(r, t_slot, x_index);
    int b = static_cast<int>(v / ens.rho_max * n_bins);
    b = std::clamp(b, 0, n_bins - 1);
    m.mass[b] += w;
  }
  return m;
}

OracleClosure estimate_conditional_drift(const Ensemble& ens, const TrafficModel& model,
                                         int x_index, int t_slot, int n_bins) {
  if (ens.n_real < 1) throw DomainError("estimate_conditional_drift: empty ensemble");
  const int nx = ens.grid.nx;
  const bool periodic = ens.grid.boundary.kind == BoundaryKind::Periodic;
  if (!periodic && (x_index < 1 || x_index > nx - 2))
    throw DomainError("estimate_conditional_drift: need two spatial neighbours at x_index " +
                      std::to_string(x_index));
  if (t_slot < 0 || t_slot >= ens.n_slots())
    throw DomainError("estimate_conditional_drift: t_slot out of range");

  const int il = periodic ? (x_index + nx - 1) % nx : x_index - 1;
  const int ir = periodic ? (x_index + 1) % nx : x_index + 1;

  OracleClosure oc;
  oc.x = ens.grid.cell_center(x_index);
  oc.t = ens.slot_time(t_slot);
  oc.bin_centers.resize(n_bins);
  for (int b = 0; b < n_bins; ++b) oc.bin_centers[b] = ens.rho_max * (b + 0.5) / n_bins;
  oc.counts.assign(n_bins, 0);
  std::vector<double> sum(n_bins, 0.0), sum_sq(n_bins, 0.0);

  for (int r = 0; r < ens.n_real; ++r) {
    const double v = ens.at(r, t_slot, x_index);
    const double grad = (ens.at(r, t_slot, ir) - ens.at(r, t_slot, il)) / (2.0 * ens.grid.dx);
    const double beta = -model.flux.prime(std::clamp(v, 0.0, ens.rho_max)) * grad;
    int b = static_cast<int>(v / ens.rho_max * n_bins);
    b = std::clamp(b, 0, n_bins - 1);
    oc.counts[b] += 1;
    sum[b] += beta;
    sum_sq[b] += beta * beta;
  }
  oc.b_hat.assign(n_bins, std::numeric_limits<double>::quiet_NaN());
  oc.std_error.assign(n_bins, std::numeric_limits<double>::quiet_NaN());
  for (int b = 0; b < n_bins; ++b) {
    if (oc.counts[b] > 0) oc.b_hat[b] = sum[b] / oc.counts[b];
    if (oc.counts[b] > 1) {
      const double mean = oc.b_hat[b];
      const double var =
          std::max(0.0, (sum_sq[b] - oc.counts[b] * mean * mean) / (oc.counts[b] - 1));
      oc.std_error[b] = std::sqrt(var / oc.counts[b]);
    }
  }
  return oc;
}

// -- Persistence --------------------------------------------------------------

namespace {

template <typename T>
void write_le(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_ensemble(const Ensemble& ens, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out.write("SLWR1", 5);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ens.grid.nx));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ens.n_slots()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ens.n_real));
  write_le<double>(out, ens.grid.dx);
  // dt in the header is the spacing between stored slices, making the file
  // self-describing without the simulation step count
  const double slice_dt =
      ens.n_slots() > 1 ? ens.slot_time(1) - ens.slot_time(0) : ens.grid.dt;
  write_le<double>(out, slice_dt);
  write_le<std::uint64_t>(out, ens.seed);
  out.write(reinterpret_cast<const char*>(ens.data.data()),
            static_cast<std::streamsize>(ens.data.size() * sizeof(double)));
  if (!out) throw ConfigError("short write to '" + path + "'");
}

Ensemble load_ensemble(const std::string& path, double rho_max) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open ensemble file '" + path + "'");
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, "SLWR1", 5) != 0)
    throw ConfigError("'" + path + "' is not an SLWR1 ensemble file");
  Ensemble ens;
  const auto nx = read_le<std::uint32_t>(in);
  const auto n_slots = read_le<std::uint32_t>(in);
  const auto n_real = read_le<std::uint32_t>(in);
  const double dx = read_le<double>(in);
  const double slice_dt = read_le<double>(in);
  ens.seed = read_le<std::uint64_t>(in);
  ens.grid.nx = static_cast<int>(nx);
  ens.grid.dx = dx;
  ens.grid.nt = static_cast<int>(n_slots) - 1;
  ens.grid.dt = slice_dt;
  ens.n_real = static_cast<int>(n_real);
  ens.rho_max = rho_max;
  for (std::uint32_t j = 0; j < n_slots; ++j) ens.stored_steps.push_back(static_cast<int>(j));
  ens.data.resize(static_cast<std::size_t>(n_real) * n_slots * nx);
  in.read(reinterpret_cast<char*>(ens.data.data()),
          static_cast<std::streamsize>(ens.data.size() * sizeof(double)));
  if (!in) throw ConfigError("'" + path + "' truncated payload");
  return ens;
}

}  // namespace slwr
