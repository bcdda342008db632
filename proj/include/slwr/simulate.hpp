#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slwr/grid.hpp"
#include "slwr/model.hpp"

namespace slwr {

/// Monte-Carlo ensemble of SLWR realisations on a space-time grid.
/// data is realisation-major: data[(r * n_slots + j) * nx + i] with j indexing
/// the stored time slices. Immutable after simulation.
struct Ensemble {
  SpaceTimeGrid grid;
  int n_real = 0;
  std::uint64_t seed = 0;
  std::vector<int> stored_steps;  // ascending step indices, first 0, last nt
  std::vector<double> data;
  double rho_max = 0.0;

  int n_slots() const { return static_cast<int>(stored_steps.size()); }
  double slot_time(int j) const { return grid.time_of(stored_steps[j]); }
  double at(int r, int slot, int i) const {
    return data[(static_cast<std::size_t>(r) * n_slots() + slot) * grid.nx + i];
  }
  /// Slot whose time is closest to t.
  int nearest_slot(double t) const;
};

/// Deterministic reference solution (all Brownian increments forced to zero),
/// stored at every step. rho(step, i) indexes time x space.
struct DeterministicField {
  SpaceTimeGrid grid;
  std::vector<double> data;  // [step][cell], step = 0..nt

  double at(int step, int i) const {
    return data[static_cast<std::size_t>(step) * grid.nx + i];
  }
  /// Central-difference spatial gradient at cell i, linearly interpolated in t.
  double gradient_x(int i, double t) const;
  /// Field value at cell i, linearly interpolated in t.
  double value(int i, double t) const;
};

/// Histogram estimate of the one-point marginal at a fixed (x, t).
struct EmpiricalMarginal {
  std::vector<double> bin_edges;  // n_bins + 1 edges spanning [0, rho_max]
  std::vector<double> mass;       // per-bin probability, sums to 1
  double x = 0.0;
  double t = 0.0;
};

/// Binned conditional-expectation estimate of the drift b(rho_hat, x, t).
/// Bins never visited carry counts == 0 and a NaN drift; consumers must
/// check has_data().
struct OracleClosure {
  std::vector<double> bin_centers;
  std::vector<double> b_hat;      // NaN where counts == 0
  std::vector<double> std_error;  // NaN where counts < 2
  std::vector<long> counts;
  double x = 0.0;
  double t = 0.0;

  bool has_data(std::size_t bin) const { return counts[bin] > 0; }
};

/// Euler-Maruyama simulation of the SLWR dynamics: local Lax-Friedrichs
/// advection, optional viscous term, one shared Brownian increment per mode
/// per step, reflection into [0, rho_max]. Realisations use independent
/// counter-based streams keyed by (seed, realisation), so results are
/// bit-identical for any worker count.
Ensemble simulate_ensemble(const TrafficModel& model, const SpaceTimeGrid& grid, int n_real,
                           std::uint64_t seed, int store_every = 1, int n_threads = 1);

/// Identical numerics with all Brownian increments forced to zero.
DeterministicField deterministic_lwr(const TrafficModel& model, const SpaceTimeGrid& grid);

EmpiricalMarginal empirical_marginal(const Ensemble& ens, int x_index, int t_slot, int n_bins);

OracleClosure estimate_conditional_drift(const Ensemble& ens, const TrafficModel& model,
                                         int x_index, int t_slot, int n_bins);

// -- Persistence (magic "SLWR1", little-endian header + f64 payload) --------

void save_ensemble(const Ensemble& ens, const std::string& path);
/// rho_max is not part of the on-disk format; it comes from the model config.
Ensemble load_ensemble(const std::string& path, double rho_max);

}  // namespace slwr
