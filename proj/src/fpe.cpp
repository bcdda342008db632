#include "slwr/fpe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "slwr/errors.hpp"

namespace slwr {

// -- DensityMesh -------------------------------------------------------------

DensityMesh DensityMesh::uniform(int n_cells, double rho_max) {
  if (n_cells < 3) throw ConfigError("density mesh requires n_cells >= 3");
  if (rho_max <= 0.0) throw ConfigError("density mesh requires rho_max > 0");
  return DensityMesh{n_cells, rho_max, rho_max / n_cells};
}

std::vector<double> DensityMesh::centers() const {
  std::vector<double> c(n_cells);
  for (int i = 0; i < n_cells; ++i) c[i] = center(i);
  return c;
}

std::vector<double> DensityMesh::edges() const {
  std::vector<double> e(n_cells + 1);
  for (int i = 0; i <= n_cells; ++i) e[i] = edge(i);
  return e;
}

// -- Closure -------------------------------------------------------------------

Closure Closure::zero() { return Closure{}; }

Closure Closure::oracle_tabulated(std::vector<OracleClosure> tables) {
  if (tables.empty()) throw ConfigError("oracle closure requires at least one table");
  Closure c;
  c.kind_ = Kind::OracleTabulated;
  c.oracle_centers_ = tables.front().bin_centers;
  for (const auto& table : tables) {
    if (table.bin_centers.size() != c.oracle_centers_.size())
      throw ConfigError("oracle closure tables must share a bin layout");
    c.oracle_times_.push_back(table.t);
    std::vector<double> filled = table.b_hat;
    // fill holes: linear interpolation between the nearest occupied bins,
    // constant extension beyond the occupied range
    const int n = static_cast<int>(filled.size());
    int first = -1, last = -1;
    for (int i = 0; i < n; ++i)
      if (table.has_data(i)) {
        if (first < 0) first = i;
        last = i;
      }
    if (first < 0) throw ConfigError("oracle closure table has no occupied bins");
    for (int i = 0; i < first; ++i) {
      filled[i] = filled[first];
      ++c.fill_gaps_;
    }
    for (int i = last + 1; i < n; ++i) {
      filled[i] = filled[last];
      ++c.fill_gaps_;
    }
    int i = first;
    while (i <= last) {
      if (table.has_data(i)) {
        ++i;
        continue;
      }
      int j = i;
      while (!table.has_data(j)) ++j;  // j <= last by construction
      const int lo = i - 1;
      for (int k = i; k < j; ++k) {
        const double w = static_cast<double>(k - lo) / (j - lo);
        filled[k] = (1.0 - w) * filled[lo] + w * filled[j];
        ++c.fill_gaps_;
      }
      i = j;
    }
    c.oracle_b_.push_back(std::move(filled));
  }
  return c;
}

Closure Closure::mean_field(FluxFunction flux, std::shared_ptr<const DeterministicField> mean) {
  Closure c;
  c.kind_ = Kind::MeanField;
  c.flux_ = std::make_unique<FluxFunction>(std::move(flux));
  c.mean_field_ = std::move(mean);
  return c;
}

Closure Closure::learned(std::function<double(double, double, double)> b_phi) {
  Closure c;
  c.kind_ = Kind::Learned;
  c.learned_ = std::move(b_phi);
  return c;
}

Closure::Closure(const Closure& other)
    : kind_(other.kind_),
      oracle_times_(other.oracle_times_),
      oracle_b_(other.oracle_b_),
      oracle_centers_(other.oracle_centers_),
      fill_gaps_(other.fill_gaps_),
      mean_field_(other.mean_field_),
      learned_(other.learned_) {
  if (other.flux_) flux_ = std::make_unique<FluxFunction>(*other.flux_);
}

Closure& Closure::operator=(const Closure& other) {
  if (this != &other) {
    Closure tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

double Closure::oracle_eval(double rho_hat, double t) const {
  // piecewise linear in time between tables
  const auto& ts = oracle_times_;
  std::size_t k = 0;
  double wt = 0.0;
  if (t <= ts.front()) {
    k = 0;
    wt = 0.0;
  } else if (t >= ts.back()) {
    k = ts.size() >= 2 ? ts.size() - 2 : 0;
    wt = ts.size() >= 2 ? 1.0 : 0.0;
  } else {
    while (k + 1 < ts.size() && ts[k + 1] < t) ++k;
    wt = (t - ts[k]) / (ts[k + 1] - ts[k]);
  }
  auto eval_table = [&](const std::vector<double>& b) {
    const auto& c = oracle_centers_;
    if (rho_hat <= c.front()) return b.front();
    if (rho_hat >= c.back()) return b.back();
    const auto it = std::upper_bound(c.begin(), c.end(), rho_hat);
    const std::size_t i = static_cast<std::size_t>(it - c.begin()) - 1;
    const double w = (rho_hat - c[i]) / (c[i + 1] - c[i]);
    return (1.0 - w) * b[i] + w * b[i + 1];
  };
  const double lo = eval_table(oracle_b_[k]);
  if (wt == 0.0) return lo;
  return (1.0 - wt) * lo + wt * eval_table(oracle_b_[k + 1]);
}

double Closure::operator()(double rho_hat, double x, double t) const {
  switch (kind_) {
    case Kind::Zero:
      return 0.0;
    case Kind::OracleTabulated:
      return oracle_eval(rho_hat, t);
    case Kind::MeanField: {
      const int i = std::clamp(static_cast<int>(x / mean_field_->grid.dx), 0,
                               mean_field_->grid.nx - 1);
      return -flux_->prime(rho_hat) * mean_field_->gradient_x(i, t);
    }
    case Kind::Learned:
      return learned_(rho_hat, x, t);
  }
  return 0.0;
}

// -- DensityGrid -----------------------------------------------------------------

std::vector<double> DensityGrid::slice(int t_index) const {
  if (t_index < 0 || t_index >= n_times())
    throw DomainError("DensityGrid::slice: index " + std::to_string(t_index) + " out of range");
  return std::vector<double>(p.begin() + static_cast<std::size_t>(t_index) * mesh.n_cells,
                             p.begin() + static_cast<std::size_t>(t_index + 1) * mesh.n_cells);
}

int DensityGrid::nearest_time_index(double t) const {
  int best = 0;
  for (int j = 1; j < n_times(); ++j)
    if (std::fabs(times[j] - t) < std::fabs(times[best] - t)) best = j;
  return best;
}

// -- Operations --------------------------------------------------------------------

std::vector<double> mollified_delta(const DensityMesh& mesh, double rho0, double eps_width) {
  if (!(rho0 > 0.0 && rho0 < mesh.rho_max))
    throw DomainError("mollified_delta: rho0 = " + std::to_string(rho0) +
                      " must lie strictly inside (0, rho_max)");
  if (eps_width < 2.0 * mesh.h)
    throw ConfigError("mollified_delta: width " + std::to_string(eps_width) +
                      " under-resolved, needs >= 2 h = " + std::to_string(2.0 * mesh.h));
  std::vector<double> p(mesh.n_cells);
  double mass = 0.0;
  for (int i = 0; i < mesh.n_cells; ++i) {
    const double z = (mesh.center(i) - rho0) / eps_width;
    p[i] = std::exp(-0.5 * z * z);
    mass += p[i] * mesh.h;
  }
  for (double& v : p) v /= mass;
  return p;
}

std::vector<double> probability_flux(const std::vector<double>& p, const Closure& closure,
                                     const TrafficModel& model, const DensityMesh& mesh,
                                     double x, double t) {
  const int n = mesh.n_cells;
  if (static_cast<int>(p.size()) != n)
    throw DomainError("probability_flux: p has wrong length");
  std::vector<double> flux(n + 1, 0.0);
  for (int e = 1; e < n; ++e) {
    const double rho_edge = mesh.edge(e);
    const double b = closure(rho_edge, x, t);
    const double upwind = b > 0.0 ? p[e - 1] : p[e];
    const double a_left = model.noise.sigma_sq(mesh.center(e - 1), x);
    const double a_right = model.noise.sigma_sq(mesh.center(e), x);
    flux[e] = b * upwind - 0.5 * (a_right * p[e] - a_left * p[e - 1]) / mesh.h;
  }
  return flux;  // outer edges stay exactly zero
}

DensityGrid solve_fpe(const TrafficModel& model, const Closure& closure, double x,
                      const DensityMesh& mesh, const FpeOptions& options,
                      const std::vector<double>& init) {
  const int n = mesh.n_cells;
  if (static_cast<int>(init.size()) != n) throw ConfigError("solve_fpe: init has wrong length");
  if (!(options.t_end > options.t_begin)) throw ConfigError("solve_fpe: empty time span");
  if (!(options.dt > 0.0)) throw ConfigError("solve_fpe: dt must be positive");

  // stability bounds: parabolic from max Sigma^2, advective from max |b|
  double max_sigma_sq = 0.0;
  for (int i = 0; i < n; ++i)
    max_sigma_sq = std::max(max_sigma_sq, model.noise.sigma_sq(mesh.center(i), x));
  double max_b = 0.0;
  for (int probe = 0; probe <= 16; ++probe) {
    const double t = options.t_begin + (options.t_end - options.t_begin) * probe / 16.0;
    for (int e = 0; e <= n; ++e)
      max_b = std::max(max_b, std::fabs(closure(mesh.edge(e), x, t)));
  }
  if (max_sigma_sq > 0.0) {
    const double bound = 0.4 * mesh.h * mesh.h / max_sigma_sq;
    if (options.dt > bound)
      throw ConfigError("solve_fpe: dt = " + std::to_string(options.dt) +
                        " exceeds the parabolic stability bound 0.4 h^2 / max Sigma^2 = " +
                        std::to_string(bound));
  }
  if (max_b > 0.0) {
    const double bound = 0.9 * mesh.h / max_b;
    if (options.dt > bound)
      throw ConfigError("solve_fpe: dt = " + std::to_string(options.dt) +
                        " exceeds the advective stability bound 0.9 h / max|b| = " +
                        std::to_string(bound));
  }

  DensityGrid grid;
  grid.mesh = mesh;
  grid.x = x;
  grid.dt = options.dt;

  std::vector<double> store = options.store_times;
  store.push_back(options.t_begin);
  store.push_back(options.t_end);
  std::sort(store.begin(), store.end());
  store.erase(std::unique(store.begin(), store.end()), store.end());

  const long n_steps =
      static_cast<long>(std::ceil((options.t_end - options.t_begin) / options.dt - 1e-12));

  std::vector<double> p = init;
  std::vector<double> flux;
  double t = options.t_begin;
  std::size_t next_store = 0;

  auto mass_of = [&](const std::vector<double>& v) {
    double m = 0.0;
    for (double pv : v) m += pv;
    return m * mesh.h;
  };
  auto store_due = [&](double now, double step_dt) {
    while (next_store < store.size() && store[next_store] <= now + 0.5 * step_dt) {
      grid.times.push_back(now);
      grid.p.insert(grid.p.end(), p.begin(), p.end());
      ++next_store;
    }
  };

  store_due(t, options.dt);
  for (long step = 0; step < n_steps; ++step) {
    const double dt = std::min(options.dt, options.t_end - t);
    flux = probability_flux(p, closure, model, mesh, x, t);
    double min_p = 0.0;
    for (int i = 0; i < n; ++i) {
      p[i] -= dt * (flux[i + 1] - flux[i]) / mesh.h;
      min_p = std::min(min_p, p[i]);
    }
    grid.min_pre_clip = std::min(grid.min_pre_clip, min_p);
    if (min_p < -1e-9)
      throw NumericalError("solve_fpe: negative density " + std::to_string(min_p) +
                           " beyond round-off at t = " + std::to_string(t));
    const double mass = mass_of(p);
    if (std::fabs(mass - 1.0) > 1e-10)
      throw NumericalError("solve_fpe: mass drift " + std::to_string(mass - 1.0) + " at t = " +
                           std::to_string(t));
    if (min_p < 0.0) {
      for (double& v : p) v = std::max(v, 0.0);
      const double clipped_mass = mass_of(p);
      const double factor = mass / clipped_mass;
      for (double& v : p) v *= factor;
      grid.cumulative_renorm += std::fabs(1.0 - factor);
    }
    t = options.t_begin + (step + 1) * options.dt;
    if (t > options.t_end) t = options.t_end;
    store_due(t, options.dt);
  }
  // anything still pending (t_end) gets the final state
  while (next_store < store.size()) {
    grid.times.push_back(store[next_store]);
    grid.p.insert(grid.p.end(), p.begin(), p.end());
    ++next_store;
  }
  return grid;
}

ScoreSlice numerical_score(const DensityGrid& pgrid, int t_index) {
  const std::vector<double> p = pgrid.slice(t_index);
  const int n = pgrid.mesh.n_cells;
  const double h = pgrid.mesh.h;
  const double peak = *std::max_element(p.begin(), p.end());
  const double floor = 1e-12 * peak;

  ScoreSlice out;
  out.s.assign(n, std::numeric_limits<double>::quiet_NaN());
  out.masked.assign(n, true);
  std::vector<bool> dense(n);
  for (int i = 0; i < n; ++i) dense[i] = p[i] > floor;

  int n_valid = 0;
  for (int i = 1; i + 1 < n; ++i) {
    if (!(dense[i - 1] && dense[i] && dense[i + 1])) continue;
    out.s[i] = (std::log(p[i + 1]) - std::log(p[i - 1])) / (2.0 * h);
    out.masked[i] = false;
    if (out.first_valid < 0) out.first_valid = i;
    out.last_valid = i;
    ++n_valid;
  }
  if (n_valid < 3)
    throw NumericalError("numerical_score: fewer than 3 unmasked cells at t index " +
                         std::to_string(t_index));
  return out;
}

// -- CSV -----------------------------------------------------------------------

void save_density_grid(const DensityGrid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "# slwr density grid\n";
  out << "# x = " << grid.x << "\n";
  out << "# rho_max = " << grid.mesh.rho_max << "\n";
  out << "# n_cells = " << grid.mesh.n_cells << "\n";
  out << "# dt = " << grid.dt << "\n";
  out << "# cumulative_renorm = " << grid.cumulative_renorm << "\n";
  out << "t,rho_hat,p\n";
  for (int j = 0; j < grid.n_times(); ++j)
    for (int i = 0; i < grid.mesh.n_cells; ++i)
      out << grid.times[j] << "," << grid.mesh.center(i) << ","
          << grid.p[static_cast<std::size_t>(j) * grid.mesh.n_cells + i] << "\n";
  if (!out) throw ConfigError("short write to '" + path + "'");
}

DensityGrid load_density_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open density grid '" + path + "'");
  DensityGrid grid;
  double x = 0.0, rho_max = 0.0;
  int n_cells = 0;
  std::string line;
  std::vector<double> ts, ps;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key, eq;
      ls >> key >> eq;
      if (eq == "=") {
        if (key == "x") ls >> x;
        if (key == "rho_max") ls >> rho_max;
        if (key == "n_cells") ls >> n_cells;
        if (key == "dt") ls >> grid.dt;
        if (key == "cumulative_renorm") ls >> grid.cumulative_renorm;
      }
      continue;
    }
    if (line.rfind("t,", 0) == 0) continue;  // column header
    std::istringstream ls(line);
    double t, rho, p;
    char c1, c2;
    if (!(ls >> t >> c1 >> rho >> c2 >> p))
      throw ConfigError(path + ": malformed row '" + line + "'");
    ts.push_back(t);
    ps.push_back(p);
  }
  if (n_cells <= 0 || rho_max <= 0.0)
    throw ConfigError(path + ": missing n_cells / rho_max metadata");
  if (ps.size() % n_cells != 0) throw ConfigError(path + ": row count not a multiple of n_cells");
  grid.mesh = DensityMesh::uniform(n_cells, rho_max);
  grid.x = x;
  const std::size_t n_slices = ps.size() / n_cells;
  for (std::size_t j = 0; j < n_slices; ++j) grid.times.push_back(ts[j * n_cells]);
  grid.p = std::move(ps);
  return grid;
}

}  // namespace slwr
