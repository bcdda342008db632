#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include <doctest.h>

#include "slwr/fpe.hpp"
#include "slwr/model.hpp"
#include "slwr/pfode.hpp"
#include "slwr/rng.hpp"
#include "slwr/stats.hpp"

using namespace slwr;

namespace {

TrafficModel diffusion_test_model(double sigma_sq = 0.02) {
  return TrafficModel{.flux = FluxFunction::greenshields(1.0, 1.0),
                      .noise = NoiseStructure::constant_test(sigma_sq, 1.0, 1.0),
                      .domain_length = 1.0,
                      .horizon = 10.0,
                      .initial = InitialProfile{.kind = InitialKind::Constant, .value = 0.5},
                      .viscosity = 0.0};
}

std::shared_ptr<CallableScore> gaussian_score(double mu, double v0, double sigma_sq,
                                              double t_ref) {
  // time-dependent Gaussian marginal: variance v0 + sigma_sq (t - t_ref)
  return std::make_shared<CallableScore>(
      [=](double rho, double t) { return -(rho - mu) / (v0 + sigma_sq * (t - t_ref)); },
      1e-6, 1.0 - 1e-6);
}

}  // namespace

TEST_CASE("velocity components vanish for the uniform stationary state") {
  const TrafficModel m = diffusion_test_model(0.02);
  auto zero_score = std::make_shared<CallableScore>([](double, double) { return 0.0; }, 0.0, 1.0);
  const VelocityField field = assemble_velocity(Closure::zero(), m, zero_score, 0.5);
  for (double rho : {0.1, 0.5, 0.9}) {
    const VelocityComponents c = field.components(rho, 0.3);
    CHECK(c.advection == 0.0);
    CHECK(c.ito == 0.0);
    CHECK(c.score == 0.0);
    CHECK(field(rho, 0.3) == 0.0);
  }
}

TEST_CASE("gaussian marginal gives the analytic linear velocity") {
  const double sigma_sq = 0.02, mu = 0.5, sd = 0.1;
  const TrafficModel m = diffusion_test_model(sigma_sq);
  auto score = std::make_shared<CallableScore>(
      [=](double rho, double) { return -(rho - mu) / (sd * sd); }, 1e-9, 1.0 - 1e-9);
  const VelocityField field = assemble_velocity(Closure::zero(), m, score, 0.5);
  for (double rho : {0.2, 0.4, 0.6, 0.8}) {
    const double expect = 0.5 * sigma_sq * (rho - mu) / (sd * sd);
    CHECK(field(rho, 0.0) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("component access sums to the total at random probes") {
  std::vector<NoiseMode> modes;
  modes.push_back(NoiseMode{0.2, Polynomial{{1.0, 0.4}}, BasisKind::Constant, 0.0, 0.0});
  TrafficModel m = diffusion_test_model();
  m.noise = NoiseStructure(std::move(modes), 1.0, 1.0);
  auto score = std::make_shared<CallableScore>(
      [](double rho, double t) { return std::sin(7.0 * rho) + 0.3 * t; }, 1e-9, 1.0 - 1e-9);
  const Closure closure =
      Closure::learned([](double rho, double, double t) { return 0.3 * rho - 0.1 * t; });
  const VelocityField field = assemble_velocity(closure, m, score, 0.4);
  rng::CounterRng stream(9, 2);
  for (int i = 0; i < 1000; ++i) {
    const double rho = 0.01 + 0.98 * stream.next_uniform();
    const double t = stream.next_uniform();
    const VelocityComponents c = field.components(rho, t);
    CHECK(std::fabs(c.advection + c.ito + c.score - field(rho, t)) <= 1e-13);
  }
}

TEST_CASE("zero field leaves particles unchanged") {
  const TrafficModel m = diffusion_test_model(0.0);
  auto score = std::make_shared<CallableScore>([](double, double) { return 0.0; }, 0.0, 1.0);
  const VelocityField field = assemble_velocity(Closure::zero(), m, score, 0.5);
  ParticleSet particles;
  particles.positions = {0.2, 0.4, 0.6};
  particles.t_current = 0.0;
  const ParticleSet moved = transport_particles(field, particles, 1.0, 0.01);
  CHECK(moved.t_current == 1.0);
  for (int i = 0; i < 3; ++i) CHECK(moved.positions[i] == particles.positions[i]);
}

TEST_CASE("gaussian pure-diffusion flow grows the sample variance linearly") {
  const double sigma_sq = 0.02, mu = 0.5, v0 = 0.05 * 0.05;
  const TrafficModel m = diffusion_test_model(sigma_sq);
  const double t0 = 1.0, t1 = 1.5;
  const VelocityField field =
      assemble_velocity(Closure::zero(), m, gaussian_score(mu, v0, sigma_sq, t0), 0.5);
  const int n = 100000;
  ParticleSet particles;
  particles.positions.resize(n);
  for (int i = 0; i < n; ++i)
    particles.positions[i] = mu + std::sqrt(v0) * rng::inverse_normal_cdf((i + 0.5) / n);
  particles.t_current = t0;
  const ParticleSet moved = transport_particles(field, particles, t1, 0.002, 2);
  double mean = 0.0;
  for (double p : moved.positions) mean += p;
  mean /= n;
  double var = 0.0;
  for (double p : moved.positions) var += (p - mean) * (p - mean);
  var /= (n - 1);
  const double expect = v0 + sigma_sq * (t1 - t0);
  CHECK(mean == doctest::Approx(mu).epsilon(1e-4));
  CHECK(var == doctest::Approx(expect).epsilon(0.02));
}

TEST_CASE("particle ordering is preserved by the 1-D flow") {
  const TrafficModel m = diffusion_test_model(0.02);
  auto score = std::make_shared<CallableScore>(
      [](double rho, double t) { return std::cos(11.0 * rho + t) * 3.0; }, 1e-6, 1.0 - 1e-6);
  const Closure closure =
      Closure::learned([](double rho, double, double t) { return 0.2 * std::sin(5.0 * rho - t); });
  const VelocityField field = assemble_velocity(closure, m, score, 0.5);
  ParticleSet particles;
  rng::CounterRng stream(21, 0);
  for (int i = 0; i < 500; ++i) particles.positions.push_back(0.05 + 0.9 * stream.next_uniform());
  std::sort(particles.positions.begin(), particles.positions.end());
  particles.t_current = 0.0;
  const ParticleSet moved = transport_particles(field, particles, 2.0, 0.01);
  CHECK(std::is_sorted(moved.positions.begin(), moved.positions.end()));
}

TEST_CASE("transport is reversible on a smooth field") {
  const double sigma_sq = 0.02, mu = 0.5, v0 = 0.01;
  const TrafficModel m = diffusion_test_model(sigma_sq);
  const VelocityField field =
      assemble_velocity(Closure::zero(), m, gaussian_score(mu, v0, sigma_sq, 1.0), 0.5);
  ParticleSet particles;
  particles.positions = {0.3, 0.45, 0.5, 0.62, 0.8};
  particles.t_current = 1.0;
  const ParticleSet fwd = transport_particles(field, particles, 1.8, 0.004);
  const ParticleSet back = transport_particles(field, fwd, 1.0, 0.004);
  for (std::size_t i = 0; i < particles.positions.size(); ++i)
    CHECK(std::fabs(back.positions[i] - particles.positions[i]) <= 1e-6);
}

TEST_CASE("boundary compatibility report") {
  const TrafficModel m = diffusion_test_model(0.02);
  auto zero_score = std::make_shared<CallableScore>([](double, double) { return 0.0; }, 0.0, 1.0);
  SUBCASE("inward-pointing field passes") {
    const Closure inward =
        Closure::learned([](double rho, double, double) { return rho < 0.5 ? 0.1 : -0.1; });
    const VelocityField field = assemble_velocity(inward, m, zero_score, 0.5);
    const BoundaryCompatibilityReport report =
        check_boundary_compatibility(field, {0.0, 0.5, 1.0}, 0.01);
    CHECK(report.all_pass());
    CHECK(report.rows.size() == 3);
    CHECK(report.rows[0].v_near_zero == doctest::Approx(0.1));
    CHECK(report.rows[0].v_near_rho_max == doctest::Approx(-0.1));
  }
  SUBCASE("outward field at the left boundary fails with the offending value") {
    const Closure outward = Closure::learned([](double, double, double) { return -0.1; });
    const VelocityField field = assemble_velocity(outward, m, zero_score, 0.5);
    const BoundaryCompatibilityReport report = check_boundary_compatibility(field, {0.0}, 0.01);
    CHECK_FALSE(report.all_pass());
    CHECK(report.rows[0].v_near_zero == doctest::Approx(-0.1));
  }
  SUBCASE("gaussian score with endpoint-vanishing noise passes at the boundary") {
    // with the factorised noise both Sigma^2 and its slope vanish at the
    // endpoints, so the Ito and score terms drop out of the limit and the
    // compatibility condition holds with equality
    std::vector<NoiseMode> modes;
    modes.push_back(NoiseMode{0.2, Polynomial{{1.0}}, BasisKind::Constant, 0.0, 0.0});
    TrafficModel mv = diffusion_test_model();
    mv.noise = NoiseStructure(std::move(modes), 1.0, 1.0);
    const VelocityField field = assemble_velocity(
        Closure::zero(), mv, gaussian_score(0.5, 0.01, 0.0, 0.0), 0.5);
    const BoundaryCompatibilityReport report =
        check_boundary_compatibility(field, {0.0, 1.0}, 0.0);
    CHECK(report.all_pass());
  }
}

TEST_CASE("sampling from a density slice is deterministic and accurate") {
  const DensityMesh mesh = DensityMesh::uniform(200, 1.0);
  const std::vector<double> p = mollified_delta(mesh, 0.4, 0.08);
  const std::vector<double> a = sample_from_density(mesh, p, 5000, 33);
  const std::vector<double> b = sample_from_density(mesh, p, 5000, 33);
  CHECK(a == b);
  const PiecewiseLinearCdf cdf = cdf_from_density(mesh.edges(), p);
  CHECK(ks_distance_samples(a, cdf) <= 2e-3);
}

TEST_CASE("marginal matching of FPE and PF-ODE transport at desk scale") {
  const double sigma_sq = 0.02;
  const TrafficModel m = diffusion_test_model(sigma_sq);
  const DensityMesh mesh = DensityMesh::uniform(400, 1.0);
  const std::vector<double> init = mollified_delta(mesh, 0.5, 4.0 * mesh.h);
  FpeOptions options;
  options.t_end = 2.0;
  options.dt = 0.5 * 0.4 * mesh.h * mesh.h / sigma_sq;
  for (int j = 0; j <= 100; ++j) options.store_times.push_back(2.0 * j / 100.0);
  const DensityGrid grid = solve_fpe(m, Closure::zero(), 0.5, mesh, options, init);

  const double t0 = 0.5, t1 = 2.0;
  const int slot0 = grid.nearest_time_index(t0);
  auto score = std::make_shared<TabulatedScore>(grid);
  const VelocityField field = assemble_velocity(Closure::zero(), m, score, 0.5);
  ParticleSet particles;
  particles.positions = sample_from_density(mesh, grid.slice(slot0), 10000, 7);
  particles.t_current = grid.times[slot0];
  const ParticleSet moved = transport_particles(field, particles, t1, 0.005, 2);

  const PiecewiseLinearCdf target = cdf_from_density(mesh.edges(), grid.slice(grid.n_times() - 1));
  const double ks = ks_distance_samples(moved.positions, target);
  CHECK(ks <= 0.03);
}
