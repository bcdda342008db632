#include <cmath>

#include <doctest.h>

#include "slwr/config.hpp"
#include "slwr/errors.hpp"
#include "slwr/model.hpp"
#include "slwr/rng.hpp"

using namespace slwr;

namespace {

TrafficModel greenshields_quadratic_model(double alpha = 0.2) {
  std::vector<NoiseMode> modes;
  modes.push_back(NoiseMode{alpha, Polynomial{{1.0}}, BasisKind::Constant, 0.0, 0.0});
  return TrafficModel{
      .flux = FluxFunction::greenshields(1.0, 1.0),
      .noise = NoiseStructure(std::move(modes), 1.0, 1.0),
      .domain_length = 1.0,
      .horizon = 1.0,
      .initial = InitialProfile{.kind = InitialKind::Constant, .value = 0.5},
      .viscosity = 0.0};
}

}  // namespace

TEST_CASE("greenshields flux endpoints and midpoint") {
  const TrafficModel m = greenshields_quadratic_model();
  CHECK(flux_value(m, 0.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(flux_value(m, 0.5) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(flux_value(m, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("greenshields characteristic speed") {
  const TrafficModel m = greenshields_quadratic_model();
  CHECK(flux_prime(m, 0.5) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(flux_prime(m, 0.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(flux_prime(m, 1.0) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("out-of-range density names the offending value") {
  const TrafficModel m = greenshields_quadratic_model();
  CHECK_THROWS_AS(flux_value(m, 1.5), DomainError);
  CHECK_THROWS_WITH_AS(flux_value(m, 1.5), doctest::Contains("1.5"), DomainError);
  CHECK_THROWS_AS(sigma_squared(m, -0.1, 0.5), DomainError);
  CHECK_THROWS_AS(sigma_squared(m, 0.5, 7.0), DomainError);
}

TEST_CASE("flux_prime matches central differences at random interior points") {
  const FluxFunction fluxes[] = {FluxFunction::greenshields(1.3, 0.8),
                                 FluxFunction::drake(1.1, 1.0, 0.4)};
  for (const FluxFunction& f : fluxes) {
    rng::CounterRng stream(42, 7);
    const double h = 2e-6 * f.rho_max();
    for (int i = 0; i < 100; ++i) {
      const double rho = 0.05 + 0.9 * stream.next_uniform() * f.rho_max();
      const double fd = (f.value(rho + h) - f.value(rho - h)) / (2.0 * h);
      CHECK(f.prime(rho) == doctest::Approx(fd).epsilon(1e-8));
    }
  }
}

TEST_CASE("drake analytic derivatives agree with finite differences") {
  const FluxFunction f = FluxFunction::drake(1.0, 1.0, 0.35);
  const double h = 1e-5;
  for (double rho : {0.1, 0.3, 0.5, 0.8}) {
    const double fd2 = (f.prime(rho + h) - f.prime(rho - h)) / (2.0 * h);
    CHECK(f.second(rho) == doctest::Approx(fd2).epsilon(1e-6));
    const double fd3 = (f.second(rho + h) - f.second(rho - h)) / (2.0 * h);
    CHECK(f.third(rho) == doctest::Approx(fd3).epsilon(1e-5));
  }
}

TEST_CASE("sigma_squared quadratic-noise values") {
  const TrafficModel m = greenshields_quadratic_model();
  CHECK(sigma_squared(m, 0.0, 0.3) == 0.0);
  CHECK(sigma_squared(m, 1.0, 0.3) == 0.0);
  // (0.2 * 0.25)^2
  CHECK(sigma_squared(m, 0.5, 0.3) == doctest::Approx(0.0025).epsilon(1e-14));
}

TEST_CASE("second noise mode with sine basis vanishes at x = 0") {
  std::vector<NoiseMode> modes;
  modes.push_back(NoiseMode{0.2, Polynomial{{1.0}}, BasisKind::Constant, 0.0, 0.0});
  modes.push_back(NoiseMode{0.3, Polynomial{{1.0}}, BasisKind::Sin, 1.0, 0.0});
  const NoiseStructure noise(std::move(modes), 1.0, 2.0);
  const double both = noise.sigma_sq(0.5, 0.0);
  const double constant_only = 0.2 * 0.2 * 0.25 * 0.25;
  CHECK(both == doctest::Approx(constant_only).epsilon(1e-14));
  CHECK(noise.basis_value(1, 0.0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("sigma_squared equals twice the aggregate diffusion coefficient") {
  std::vector<NoiseMode> modes;
  modes.push_back(NoiseMode{0.2, Polynomial{{1.0, 0.5}}, BasisKind::Constant, 0.0, 0.0});
  modes.push_back(NoiseMode{0.1, Polynomial{{2.0, 0.0, 0.3}}, BasisKind::Cos, 2.0, 0.0});
  const NoiseStructure noise(std::move(modes), 1.0, 1.0);
  rng::CounterRng stream(3, 1);
  for (int i = 0; i < 200; ++i) {
    const double rho = stream.next_uniform();
    const double x = stream.next_uniform();
    CHECK(std::fabs(noise.sigma_sq(rho, x) - 2.0 * noise.diffusion(rho, x)) <= 1e-15);
  }
}

TEST_CASE("ito_drift values and symmetry") {
  const TrafficModel m = greenshields_quadratic_model();
  // symmetric quadratic sigma: antisymmetric about rho_max / 2
  CHECK(ito_drift(m, 0.5, 0.1) == doctest::Approx(0.0).epsilon(1e-14));
  // -1/2 d/drho [0.04 rho^2 (1-rho)^2] at rho = 0.25
  CHECK(ito_drift(m, 0.25, 0.1) == doctest::Approx(-0.00375).epsilon(1e-12));
  CHECK(ito_drift(m, 0.25, 0.1) == doctest::Approx(-ito_drift(m, 0.75, 0.1)).epsilon(1e-12));
}

TEST_CASE("ito_drift is zero for constant test-mode noise") {
  TrafficModel m = greenshields_quadratic_model();
  m.noise = NoiseStructure::constant_test(0.02, 1.0, 1.0);
  for (double rho : {0.1, 0.5, 0.9}) CHECK(ito_drift(m, rho, 0.2) == 0.0);
}

TEST_CASE("ito_drift matches central differences of sigma_squared") {
  std::vector<NoiseMode> modes;
  modes.push_back(NoiseMode{0.25, Polynomial{{1.0, 0.2, 0.1}}, BasisKind::Constant, 0.0, 0.0});
  TrafficModel m = greenshields_quadratic_model();
  m.noise = NoiseStructure(std::move(modes), 1.0, 1.0);
  rng::CounterRng stream(11, 0);
  const double h = 2e-6;
  for (int i = 0; i < 100; ++i) {
    const double rho = 0.05 + 0.9 * stream.next_uniform();
    const double fd =
        (sigma_squared(m, rho + h, 0.4) - sigma_squared(m, rho - h, 0.4)) / (2.0 * h);
    CHECK(ito_drift(m, rho, 0.4) == doctest::Approx(-0.5 * fd).epsilon(1e-8));
  }
}

TEST_CASE("noise density-derivatives are exact against finite differences") {
  std::vector<NoiseMode> modes;
  modes.push_back(NoiseMode{0.15, Polynomial{{1.0, -0.3, 0.2, 0.05}}, BasisKind::Constant, 0.0,
                            0.0});
  const NoiseStructure noise(std::move(modes), 1.0, 1.0);
  const double h = 1e-5;
  for (double rho : {0.2, 0.5, 0.7}) {
    const double fd1 = (noise.sigma_sq(rho + h, 0.0) - noise.sigma_sq(rho - h, 0.0)) / (2 * h);
    CHECK(noise.sigma_sq_d1(rho, 0.0) == doctest::Approx(fd1).epsilon(1e-7));
    const double fd2 =
        (noise.sigma_sq_d1(rho + h, 0.0) - noise.sigma_sq_d1(rho - h, 0.0)) / (2 * h);
    CHECK(noise.sigma_sq_d2(rho, 0.0) == doctest::Approx(fd2).epsilon(1e-7));
    const double fd3 =
        (noise.sigma_sq_d2(rho + h, 0.0) - noise.sigma_sq_d2(rho - h, 0.0)) / (2 * h);
    CHECK(noise.sigma_sq_d3(rho, 0.0) == doctest::Approx(fd3).epsilon(1e-6));
  }
}

TEST_CASE("validate_assumptions passes for greenshields plus quadratic noise") {
  const TrafficModel m = greenshields_quadratic_model();
  const ValidationReport report = validate_assumptions(m);
  CHECK(report.all_fatal_pass());
  for (const auto& c : report.checks) CHECK(c.status == CheckStatus::Pass);
}

TEST_CASE("validator flags s_tilde crossing zero as degenerate") {
  std::vector<NoiseMode> modes;
  // s_tilde = rho - 0.5 crosses zero at the midpoint
  modes.push_back(NoiseMode{0.2, Polynomial{{-0.5, 1.0}}, BasisKind::Constant, 0.0, 0.0});
  TrafficModel m = greenshields_quadratic_model();
  m.noise = NoiseStructure(std::move(modes), 1.0, 1.0);
  const ValidationReport report = validate_assumptions(m);
  CHECK_FALSE(report.all_fatal_pass());
  bool found = false;
  for (const auto& c : report.checks)
    if (c.status == CheckStatus::Fail && c.name.find("non-degeneracy") != std::string::npos)
      found = true;
  CHECK(found);
}

TEST_CASE("validator accepts a constant interior initial profile") {
  TrafficModel m = greenshields_quadratic_model();
  m.initial = InitialProfile{.kind = InitialKind::Constant, .value = 0.5};
  const ValidationReport report = validate_assumptions(m);
  CHECK(report.all_fatal_pass());
}

TEST_CASE("validator rejects initial data touching the bounds") {
  TrafficModel m = greenshields_quadratic_model();
  m.initial = InitialProfile{.kind = InitialKind::Sine, .mean = 0.5, .amplitude = 0.6};
  const ValidationReport report = validate_assumptions(m);
  CHECK_FALSE(report.all_fatal_pass());
}

TEST_CASE("drake endpoint residual is advisory, not fatal") {
  TrafficModel m = greenshields_quadratic_model();
  m.flux = FluxFunction::drake(1.0, 1.0, 0.4);
  const ValidationReport report = validate_assumptions(m);
  CHECK(report.all_fatal_pass());
  bool advisory_seen = false;
  for (const auto& c : report.checks)
    if (c.status == CheckStatus::Advisory) advisory_seen = true;
  CHECK(advisory_seen);
}

TEST_CASE("speed relation and its inverse") {
  const FluxFunction f = FluxFunction::greenshields(2.0, 0.8);
  CHECK(f.speed(0.0) == doctest::Approx(2.0));
  CHECK(f.speed_inverse(f.speed(0.3)) == doctest::Approx(0.3).epsilon(1e-10));
  const FluxFunction drake = FluxFunction::drake(1.5, 1.0, 0.4);
  for (double rho : {0.2, 0.5, 0.8})
    CHECK(drake.speed_inverse(drake.speed(rho)) == doctest::Approx(rho).epsilon(1e-9));
  CHECK_THROWS_AS(f.speed_inverse(5.0), DomainError);
}

TEST_CASE("model json round-trip") {
  const std::string text = R"json({
    "units": "normalized",
    "flux": {"kind": "greenshields", "u_f": 1.0, "rho_max": 1.0},
    "noise": {"modes": [{"alpha": 0.2, "s_tilde_coeffs": [1.0],
                          "basis": {"kind": "constant"}}]},
    "domain": {"L": 1.0, "T": 0.4},
    "initial": {"kind": "sine", "mean": 0.4, "amplitude": 0.1, "wavenumber": 1.0},
    "viscosity": {"epsilon": 0.0}
  })json";
  const TrafficModel m = parse_model(text);
  CHECK(m.flux.u_f() == 1.0);
  CHECK(m.rho0(0.25) == doctest::Approx(0.5).epsilon(1e-12));
  const TrafficModel m2 = parse_model(model_to_json(m));
  CHECK(m2.noise.sigma_sq(0.5, 0.3) == doctest::Approx(m.noise.sigma_sq(0.5, 0.3)));
  CHECK(m2.horizon == m.horizon);
}

TEST_CASE("config errors name the problem") {
  CHECK_THROWS_AS(parse_model("{}"), ConfigError);
  CHECK_THROWS_AS(load_model("/nonexistent/model.json"), ConfigError);
  CHECK_THROWS_AS(parse_model(R"({"domain": {"L": 1, "T": 1},
    "flux": {"kind": "warp", "u_f": 1, "rho_max": 1},
    "initial": {"kind": "constant", "value": 0.5}})"),
                  ConfigError);
}

TEST_CASE("counter rng reproducibility and stream independence") {
  rng::CounterRng a(123, 5), b(123, 5), c(123, 6);
  for (int i = 0; i < 64; ++i) {
    const double va = a.next_normal();
    const double vb = b.next_normal();
    CHECK(va == vb);
    CHECK(va != c.next_normal());
  }
  // moments of the inverse-CDF normal
  rng::CounterRng s(7, 0);
  double mean = 0.0, var = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = s.next_normal();
    mean += z;
    var += z * z;
  }
  mean /= n;
  var = var / n - mean * mean;
  CHECK(std::fabs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
}
