#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "slwr/fpe.hpp"
#include "slwr/model.hpp"

namespace slwr {

/// Score values s(rho_hat, t) at a fixed spatial location. Queries outside
/// the trusted band extrapolate with the boundary value and bump a counter.
class ScoreSource {
 public:
  virtual ~ScoreSource() = default;
  virtual double score(double rho_hat, double t) const = 0;
  /// Trusted rho_hat interval at time t.
  virtual std::pair<double, double> band(double t) const = 0;
  int extrapolation_count() const { return extrapolations_.load(); }

 protected:
  mutable std::atomic<int> extrapolations_{0};
};

/// Score tabulated from an FPE solution: central-difference log-density
/// slices, linear interpolation in rho_hat and t.
class TabulatedScore : public ScoreSource {
 public:
  explicit TabulatedScore(const DensityGrid& pgrid);
  double score(double rho_hat, double t) const override;
  std::pair<double, double> band(double t) const override;

 private:
  double slice_score(int slice, double rho_hat) const;
  DensityMesh mesh_;
  std::vector<double> times_;
  std::vector<ScoreSlice> slices_;
};

/// Analytic or learned score wrapped as a callable.
class CallableScore : public ScoreSource {
 public:
  CallableScore(std::function<double(double, double)> fn, double band_lo, double band_hi)
      : fn_(std::move(fn)), lo_(band_lo), hi_(band_hi) {}
  double score(double rho_hat, double t) const override;
  std::pair<double, double> band(double) const override { return {lo_, hi_}; }

 private:
  std::function<double(double, double)> fn_;
  double lo_, hi_;
};

struct VelocityComponents {
  double advection = 0.0;  // (I) conditional advection b
  double ito = 0.0;        // (II) -1/2 d/drho Sigma^2
  double score = 0.0;      // (III) -1/2 Sigma^2 s

  double total() const { return advection + ito + score; }
};

/// The probability-flow velocity at a fixed location, assembled from a
/// closure, the model's diffusion, and a score source.
class VelocityField {
 public:
  VelocityField(Closure closure, const TrafficModel* model,
                std::shared_ptr<const ScoreSource> score, double x);

  VelocityComponents components(double rho_hat, double t) const;
  double operator()(double rho_hat, double t) const {
    return components(rho_hat, t).total();
  }
  std::pair<double, double> clamp_band(double t) const { return score_->band(t); }
  double x() const { return x_; }
  double rho_max() const { return model_->rho_max(); }

 private:
  Closure closure_;
  const TrafficModel* model_;
  std::shared_ptr<const ScoreSource> score_;
  double x_;
};

VelocityField assemble_velocity(Closure closure, const TrafficModel& model,
                                std::shared_ptr<const ScoreSource> score, double x);

/// Particle ensemble in density space with uniform weights.
struct ParticleSet {
  std::vector<double> positions;
  double t_current = 0.0;
};

/// Classical RK4 transport of every particle to t_target; positions are
/// clamped to the score band after each step. Deterministic given inputs;
/// backward integration (t_target < t_current) is supported for
/// reversibility checks.
ParticleSet transport_particles(const VelocityField& field, ParticleSet particles,
                                double t_target, double dt_ode, int n_threads = 1);

struct BoundaryCompatibilityRow {
  double t = 0.0;
  double v_near_zero = 0.0;     // velocity at rho_hat = margin
  double v_near_rho_max = 0.0;  // velocity at rho_hat = rho_max - margin
  bool pass = false;
};

struct BoundaryCompatibilityReport {
  double margin = 0.0;
  std::vector<BoundaryCompatibilityRow> rows;
  bool all_pass() const;
  std::string to_string() const;
};

/// Checks the inward-pointing boundary conditions v(margin) >= 0 and
/// v(rho_max - margin) <= 0 at each time stamp.
BoundaryCompatibilityReport check_boundary_compatibility(const VelocityField& field,
                                                         const std::vector<double>& times,
                                                         double margin);

/// Inverse-CDF sampling from a cell-centred density: stratified uniforms
/// with seeded jitter, one particle per stratum.
std::vector<double> sample_from_density(const DensityMesh& mesh, const std::vector<double>& p,
                                        int n, std::uint64_t seed);

}  // namespace slwr
