#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "slwr/model.hpp"
#include "slwr/simulate.hpp"

namespace slwr {

/// Uniform cell-centred mesh on [0, rho_max] in density space.
struct DensityMesh {
  int n_cells = 0;
  double rho_max = 0.0;
  double h = 0.0;

  static DensityMesh uniform(int n_cells, double rho_max);
  double center(int i) const { return (i + 0.5) * h; }
  double edge(int i) const { return i * h; }
  std::vector<double> centers() const;
  std::vector<double> edges() const;
};

/// Pluggable conditional-drift model b(rho_hat, x, t).
class Closure {
 public:
  enum class Kind { Zero, OracleTabulated, MeanField, Learned };

  static Closure zero();
  /// Binned conditional-drift tables at increasing times; empty bins are
  /// filled by linear interpolation from the nearest occupied bins (the gap
  /// count is reported through fill_gap_count).
  static Closure oracle_tabulated(std::vector<OracleClosure> tables);
  /// b = -f'(rho_hat) * d/dx mean_state(x, t).
  static Closure mean_field(FluxFunction flux, std::shared_ptr<const DeterministicField> mean);
  static Closure learned(std::function<double(double, double, double)> b_phi);

  double operator()(double rho_hat, double x, double t) const;
  Kind kind() const { return kind_; }
  /// Number of empty oracle bins that were filled by interpolation.
  int fill_gap_count() const { return fill_gaps_; }

 private:
  Closure() = default;
  Kind kind_ = Kind::Zero;
  // oracle tables, hole-filled, one per time stamp
  std::vector<double> oracle_times_;
  std::vector<std::vector<double>> oracle_b_;
  std::vector<double> oracle_centers_;
  int fill_gaps_ = 0;
  std::shared_ptr<const DeterministicField> mean_field_;
  std::unique_ptr<FluxFunction> flux_;
  std::function<double(double, double, double)> learned_;

  double oracle_eval(double rho_hat, double t) const;

 public:
  Closure(const Closure& other);
  Closure& operator=(const Closure& other);
  Closure(Closure&&) = default;
  Closure& operator=(Closure&&) = default;
  ~Closure() = default;
};

/// Discretised one-point law p(rho_hat; x, t) at a fixed location.
struct DensityGrid {
  DensityMesh mesh;
  double x = 0.0;
  std::vector<double> times;
  std::vector<double> p;  // [time][cell]
  double dt = 0.0;                 // solver step used to produce this grid
  double cumulative_renorm = 0.0;  // total |1 - renormalisation factor| over the run
  double min_pre_clip = 0.0;       // most negative cell value seen before clipping

  std::vector<double> slice(int t_index) const;
  int n_times() const { return static_cast<int>(times.size()); }
  int nearest_time_index(double t) const;
};

/// Gaussian bump of standard deviation eps_width centred at rho0, truncated
/// to [0, rho_max] and renormalised so that sum(p) * h = 1.
std::vector<double> mollified_delta(const DensityMesh& mesh, double rho0, double eps_width);

/// Edge probability flux J = b p - 1/2 d/drho [Sigma^2 p]; drift upwinded by
/// the sign of b, diffusion by central differences, outer edges exactly zero.
std::vector<double> probability_flux(const std::vector<double>& p, const Closure& closure,
                                     const TrafficModel& model, const DensityMesh& mesh,
                                     double x, double t);

struct FpeOptions {
  double t_begin = 0.0;
  double t_end = 1.0;
  double dt = 0.0;                  // must satisfy the stability bounds
  std::vector<double> store_times;  // slices to keep (t_begin and t_end always kept)
};

/// Conservative forward-Euler finite-volume solve of the one-point FPE with
/// zero-flux boundaries. Throws ConfigError if dt violates the parabolic or
/// advective stability bound, NumericalError on mass drift.
DensityGrid solve_fpe(const TrafficModel& model, const Closure& closure, double x,
                      const DensityMesh& mesh, const FpeOptions& options,
                      const std::vector<double>& init);

/// Central-difference score d/drho log p with low-density cells masked
/// (p < 1e-12 * max p, plus cells lacking two unmasked neighbours).
struct ScoreSlice {
  std::vector<double> s;
  std::vector<bool> masked;
  int first_valid = -1;
  int last_valid = -1;
};

ScoreSlice numerical_score(const DensityGrid& pgrid, int t_index);

// -- CSV persistence (columns t, rho_hat, p; metadata in comment lines) ------

void save_density_grid(const DensityGrid& grid, const std::string& path);
DensityGrid load_density_grid(const std::string& path);

}  // namespace slwr
