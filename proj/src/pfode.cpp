#include "slwr/pfode.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

#include "slwr/errors.hpp"
#include "slwr/rng.hpp"
#include "slwr/stats.hpp"

namespace slwr {

// -- TabulatedScore -----------------------------------------------------------

TabulatedScore::TabulatedScore(const DensityGrid& pgrid) : mesh_(pgrid.mesh) {
  if (pgrid.n_times() < 1) throw ConfigError("TabulatedScore: empty density grid");
  for (int j = 0; j < pgrid.n_times(); ++j) {
    times_.push_back(pgrid.times[j]);
    slices_.push_back(numerical_score(pgrid, j));
  }
}

double TabulatedScore::slice_score(int slice, double rho_hat) const {
  const ScoreSlice& s = slices_[slice];
  const double lo = mesh_.center(s.first_valid);
  const double hi = mesh_.center(s.last_valid);
  if (rho_hat <= lo) {
    if (rho_hat < lo) extrapolations_.fetch_add(1, std::memory_order_relaxed);
    return s.s[s.first_valid];
  }
  if (rho_hat >= hi) {
    if (rho_hat > hi) extrapolations_.fetch_add(1, std::memory_order_relaxed);
    return s.s[s.last_valid];
  }
  const double pos = (rho_hat - mesh_.center(0)) / mesh_.h;
  int i = std::clamp(static_cast<int>(pos), s.first_valid, s.last_valid - 1);
  // interpolate between the nearest unmasked cells around i
  int il = i, ir = i + 1;
  while (il > s.first_valid && s.masked[il]) --il;
  while (ir < s.last_valid && s.masked[ir]) ++ir;
  if (s.masked[il] || s.masked[ir]) return s.s[s.masked[il] ? ir : il];
  const double w = (rho_hat - mesh_.center(il)) / (mesh_.center(ir) - mesh_.center(il));
  return (1.0 - w) * s.s[il] + w * s.s[ir];
}

double TabulatedScore::score(double rho_hat, double t) const {
  if (times_.size() == 1 || t <= times_.front()) return slice_score(0, rho_hat);
  if (t >= times_.back()) return slice_score(static_cast<int>(times_.size()) - 1, rho_hat);
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  const int j = static_cast<int>(it - times_.begin()) - 1;
  const double w = (t - times_[j]) / (times_[j + 1] - times_[j]);
  return (1.0 - w) * slice_score(j, rho_hat) + w * slice_score(j + 1, rho_hat);
}

std::pair<double, double> TabulatedScore::band(double t) const {
  int j0 = 0, j1 = 0;
  if (times_.size() > 1 && t > times_.front()) {
    if (t >= times_.back()) {
      j0 = j1 = static_cast<int>(times_.size()) - 1;
    } else {
      const auto it = std::upper_bound(times_.begin(), times_.end(), t);
      j0 = static_cast<int>(it - times_.begin()) - 1;
      j1 = j0 + 1;
    }
  }
  const double lo =
      std::max(mesh_.center(slices_[j0].first_valid), mesh_.center(slices_[j1].first_valid));
  const double hi =
      std::min(mesh_.center(slices_[j0].last_valid), mesh_.center(slices_[j1].last_valid));
  return {lo, hi};
}

double CallableScore::score(double rho_hat, double t) const {
  if (rho_hat < lo_ || rho_hat > hi_) {
    extrapolations_.fetch_add(1, std::memory_order_relaxed);
    rho_hat = std::clamp(rho_hat, lo_, hi_);
  }
  return fn_(rho_hat, t);
}

// -- VelocityField ---------------------------------------------------------------

VelocityField::VelocityField(Closure closure, const TrafficModel* model,
                             std::shared_ptr<const ScoreSource> score, double x)
    : closure_(std::move(closure)), model_(model), score_(std::move(score)), x_(x) {}

VelocityComponents VelocityField::components(double rho_hat, double t) const {
  VelocityComponents c;
  c.advection = closure_(rho_hat, x_, t);
  c.ito = -0.5 * model_->noise.sigma_sq_d1(rho_hat, x_);
  c.score = -0.5 * model_->noise.sigma_sq(rho_hat, x_) * score_->score(rho_hat, t);
  if (!std::isfinite(c.total()))
    throw NumericalError("velocity not finite at rho_hat = " + std::to_string(rho_hat) +
                         ", t = " + std::to_string(t));
  return c;
}

VelocityField assemble_velocity(Closure closure, const TrafficModel& model,
                                std::shared_ptr<const ScoreSource> score, double x) {
  return VelocityField(std::move(closure), &model, std::move(score), x);
}

// -- Transport ----------------------------------------------------------------------

ParticleSet transport_particles(const VelocityField& field, ParticleSet particles,
                                double t_target, double dt_ode, int n_threads) {
  if (!(dt_ode > 0.0)) throw ConfigError("transport_particles: dt_ode must be positive");
  const double span = t_target - particles.t_current;
  if (span == 0.0) return particles;
  const long n_steps = std::max<long>(1, std::lround(std::fabs(span) / dt_ode));
  const double h = span / static_cast<double>(n_steps);
  const double t0 = particles.t_current;

  auto advance = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double y = particles.positions[i];
      for (long s = 0; s < n_steps; ++s) {
        const double t = t0 + s * h;
        try {
          // intermediate stages are clamped like the positions themselves so
          // the field is never queried outside its domain
          const auto [lo_t, hi_t] = field.clamp_band(t);
          const auto [lo_h, hi_h] = field.clamp_band(t + 0.5 * h);
          const double k1 = field(std::clamp(y, lo_t, hi_t), t);
          const double k2 = field(std::clamp(y + 0.5 * h * k1, lo_h, hi_h), t + 0.5 * h);
          const double k3 = field(std::clamp(y + 0.5 * h * k2, lo_h, hi_h), t + 0.5 * h);
          const auto [lo_e, hi_e] = field.clamp_band(t + h);
          const double k4 = field(std::clamp(y + h * k3, lo_e, hi_e), t + h);
          y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
          y = std::clamp(y, lo_e, hi_e);
        } catch (const std::exception& e) {
          throw NumericalError("transport failed for particle " + std::to_string(i) +
                               " at t = " + std::to_string(t) + ": " + e.what());
        }
      }
      particles.positions[i] = y;
    }
  };

  const std::size_t n = particles.positions.size();
  n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(n)));
  if (n_threads == 1) {
    advance(0, n);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_lock;
    const std::size_t chunk = (n + n_threads - 1) / n_threads;
    for (int w = 0; w < n_threads; ++w) {
      const std::size_t b = w * chunk, e = std::min(n, b + chunk);
      if (b >= e) break;
      pool.emplace_back([&, b, e] {
        try {
          advance(b, e);
        } catch (...) {
          std::scoped_lock lk(error_lock);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  particles.t_current = t_target;
  return particles;
}

// -- Boundary compatibility --------------------------------------------------------

bool BoundaryCompatibilityReport::all_pass() const {
  for (const auto& r : rows)
    if (!r.pass) return false;
  return true;
}

std::string BoundaryCompatibilityReport::to_string() const {
  std::ostringstream os;
  os << "boundary compatibility (margin " << margin << ")\n";
  for (const auto& r : rows)
    os << "  t = " << r.t << ": v(margin) = " << r.v_near_zero
       << ", v(rho_max - margin) = " << r.v_near_rho_max << " -> "
       << (r.pass ? "pass" : "FAIL") << "\n";
  return os.str();
}

BoundaryCompatibilityReport check_boundary_compatibility(const VelocityField& field,
                                                         const std::vector<double>& times,
                                                         double margin) {
  BoundaryCompatibilityReport report;
  report.margin = margin;
  for (double t : times) {
    BoundaryCompatibilityRow row;
    row.t = t;
    row.v_near_zero = field(margin, t);
    row.v_near_rho_max = field(field.rho_max() - margin, t);
    row.pass = row.v_near_zero >= 0.0 && row.v_near_rho_max <= 0.0;
    report.rows.push_back(row);
  }
  return report;
}

// -- Sampling ------------------------------------------------------------------------

std::vector<double> sample_from_density(const DensityMesh& mesh, const std::vector<double>& p,
                                        int n, std::uint64_t seed) {
  if (n < 1) throw DomainError("sample_from_density: n must be >= 1");
  const PiecewiseLinearCdf cdf = cdf_from_density(mesh.edges(), p);
  rng::CounterRng stream(seed, 0);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    const double u = (i + stream.uniform_at(i)) / n;
    // invert the piecewise-linear CDF
    const auto it = std::lower_bound(cdf.F.begin(), cdf.F.end(), u);
    std::size_t j = it == cdf.F.begin() ? 0 : static_cast<std::size_t>(it - cdf.F.begin()) - 1;
    while (j + 1 < cdf.F.size() && cdf.F[j + 1] <= cdf.F[j]) ++j;  // skip flat spans
    const double f0 = cdf.F[j], f1 = cdf.F[j + 1];
    const double w = f1 > f0 ? (u - f0) / (f1 - f0) : 0.5;
    out[i] = cdf.x[j] + std::clamp(w, 0.0, 1.0) * (cdf.x[j + 1] - cdf.x[j]);
  }
  return out;
}

}  // namespace slwr
