#pragma once

#include <cstdint>

#include "slwr/model.hpp"

namespace slwr {

enum class BoundaryKind { Periodic, Dirichlet };

struct Boundary {
  BoundaryKind kind = BoundaryKind::Periodic;
  double rho_left = 0.0;   // Dirichlet only
  double rho_right = 0.0;  // Dirichlet only

  static Boundary periodic() { return {}; }
  static Boundary dirichlet(double left, double right) {
    return {BoundaryKind::Dirichlet, left, right};
  }
};

/// Uniform discretisation of [0, L] x (0, T]. Cell centres at (i + 1/2) dx.
struct SpaceTimeGrid {
  int nx = 0;
  double dx = 0.0;
  int nt = 0;
  double dt = 0.0;
  Boundary boundary;

  /// Builds the grid and enforces the advective CFL bound
  /// dt max|f'| / dx <= 0.9 and, when viscosity is active, dt eps / dx^2 <= 0.4.
  /// Throws ConfigError naming the violated bound.
  static SpaceTimeGrid create(const TrafficModel& model, int nx, int nt,
                              Boundary boundary = Boundary::periodic());

  double cell_center(int i) const { return (i + 0.5) * dx; }
  double time_of(int step) const { return step * dt; }
};

/// Largest |f'| over [0, rho_max], the wave-speed bound used by the CFL check.
double max_wave_speed(const FluxFunction& flux, int n_probes = 512);

}  // namespace slwr
