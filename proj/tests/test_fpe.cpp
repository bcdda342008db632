#include <cmath>
#include <cstdio>
#include <vector>

#include <doctest.h>

#include "slwr/errors.hpp"
#include "slwr/fpe.hpp"
#include "slwr/model.hpp"
#include "slwr/simulate.hpp"

using namespace slwr;

namespace {

TrafficModel diffusion_test_model(double sigma_sq = 0.02) {
  return TrafficModel{.flux = FluxFunction::greenshields(1.0, 1.0),
                      .noise = NoiseStructure::constant_test(sigma_sq, 1.0, 1.0),
                      .domain_length = 1.0,
                      .horizon = 1.0,
                      .initial = InitialProfile{.kind = InitialKind::Constant, .value = 0.5},
                      .viscosity = 0.0};
}

/// Spectral reference for pure diffusion with reflecting boundaries:
/// expand the initial cell vector in the DCT-II cosine basis and decay each
/// mode with exp(-(Sigma^2/2) n^2 pi^2 t). Independent of the FV path.
std::vector<double> cosine_series_solution(const DensityMesh& mesh,
                                           const std::vector<double>& p0, double sigma_sq,
                                           double t) {
  const int n = mesh.n_cells;
  std::vector<double> coeff(n, 0.0);
  for (int k = 0; k < n; ++k) {
    double a = 0.0;
    for (int i = 0; i < n; ++i) a += p0[i] * std::cos(k * M_PI * mesh.center(i)) * mesh.h;
    coeff[k] = (k == 0 ? 1.0 : 2.0) * a;
  }
  std::vector<double> p(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
      const double decay = std::exp(-0.5 * sigma_sq * k * k * M_PI * M_PI * t);
      if (decay < 1e-18) break;
      acc += coeff[k] * decay * std::cos(k * M_PI * mesh.center(i));
    }
    p[i] = acc;
  }
  return p;
}

double mass_of(const std::vector<double>& p, double h) {
  double m = 0.0;
  for (double v : p) m += v * h;
  return m;
}

}  // namespace

TEST_CASE("mollified delta mass, mean and variance") {
  const DensityMesh mesh = DensityMesh::uniform(400, 1.0);
  SUBCASE("unit mass and symmetric mean") {
    const std::vector<double> p = mollified_delta(mesh, 0.5, 0.05);
    CHECK(mass_of(p, mesh.h) == doctest::Approx(1.0).epsilon(1e-12));
    double mean = 0.0;
    for (int i = 0; i < mesh.n_cells; ++i) mean += p[i] * mesh.h * mesh.center(i);
    CHECK(mean == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("variance matches the truncated-Gaussian moment") {
    const std::vector<double> p = mollified_delta(mesh, 0.5, 0.05);
    double var = 0.0;
    for (int i = 0; i < mesh.n_cells; ++i)
      var += p[i] * mesh.h * (mesh.center(i) - 0.5) * (mesh.center(i) - 0.5);
    CHECK(var == doctest::Approx(0.0025).epsilon(0.02));
  }
  SUBCASE("under-resolved width is rejected") {
    CHECK_THROWS_AS(mollified_delta(mesh, 0.5, 1.0 * mesh.h), ConfigError);
  }
  SUBCASE("rho0 must be interior") {
    CHECK_THROWS_AS(mollified_delta(mesh, 0.0, 0.05), DomainError);
  }
}

TEST_CASE("probability flux on uniform states") {
  const TrafficModel m = diffusion_test_model(0.01);
  const DensityMesh mesh = DensityMesh::uniform(50, 1.0);
  SUBCASE("uniform density, zero drift: flux vanishes everywhere") {
    const std::vector<double> p(50, 1.0);
    const std::vector<double> flux =
        probability_flux(p, Closure::zero(), m, mesh, 0.5, 0.0);
    for (double j : flux) CHECK(j == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("outer edges are exactly zero for any input") {
    std::vector<double> p(50, 0.0);
    p[10] = 7.0;
    p[44] = 3.0;
    const std::vector<double> flux =
        probability_flux(p, Closure::learned([](double, double, double) { return 2.0; }), m,
                         mesh, 0.5, 0.0);
    CHECK(flux.front() == 0.0);
    CHECK(flux.back() == 0.0);
  }
  SUBCASE("mollified delta gives an antisymmetric diffusion flux") {
    const std::vector<double> p = mollified_delta(mesh, 0.5, 0.06);
    const std::vector<double> flux =
        probability_flux(p, Closure::zero(), m, mesh, 0.5, 0.0);
    for (int e = 1; e < 25; ++e)
      CHECK(flux[e] == doctest::Approx(-flux[50 - e]).epsilon(1e-10));
  }
}

TEST_CASE("solve_fpe stability bounds are enforced") {
  const TrafficModel m = diffusion_test_model(0.02);
  const DensityMesh mesh = DensityMesh::uniform(100, 1.0);
  const std::vector<double> init = mollified_delta(mesh, 0.5, 4.0 * mesh.h);
  FpeOptions options;
  options.t_end = 0.1;
  options.dt = 1.0 * mesh.h * mesh.h / 0.02;  // above the 0.4 h^2 / max Sigma^2 bound
  CHECK_THROWS_AS(solve_fpe(m, Closure::zero(), 0.5, mesh, options, init), ConfigError);
  // advective bound with a large constant drift
  options.dt = 0.3 * mesh.h * mesh.h / 0.02;
  const Closure fast = Closure::learned([](double, double, double) { return 100.0; });
  CHECK_THROWS_AS(solve_fpe(m, fast, 0.5, mesh, options, init), ConfigError);
}

TEST_CASE("pure diffusion matches the cosine-series oracle") {
  const double sigma_sq = 0.02;
  const TrafficModel m = diffusion_test_model(sigma_sq);
  const DensityMesh mesh = DensityMesh::uniform(400, 1.0);
  const std::vector<double> init = mollified_delta(mesh, 0.5, 4.0 * mesh.h);
  FpeOptions options;
  options.t_end = 5.0;
  options.dt = 0.5 * 0.4 * mesh.h * mesh.h / sigma_sq;
  options.store_times = {1.0, 5.0};
  const DensityGrid grid = solve_fpe(m, Closure::zero(), 0.5, mesh, options, init);
  for (int idx = 0; idx < grid.n_times(); ++idx) {
    const double t = grid.times[idx];
    if (t == 0.0) continue;
    const std::vector<double> ref = cosine_series_solution(mesh, init, sigma_sq, t);
    const std::vector<double> got = grid.slice(idx);
    double linf = 0.0;
    for (int i = 0; i < mesh.n_cells; ++i) linf = std::max(linf, std::fabs(got[i] - ref[i]));
    CAPTURE(t);
    CHECK(linf <= 1e-3);
  }
}

TEST_CASE("uniform initial state is a fixed point of pure diffusion") {
  const TrafficModel m = diffusion_test_model(0.02);
  const DensityMesh mesh = DensityMesh::uniform(200, 1.0);
  const std::vector<double> init(200, 1.0);
  FpeOptions options;
  options.t_end = 1.0;
  options.dt = 0.5 * 0.4 * mesh.h * mesh.h / 0.02;
  const DensityGrid grid = solve_fpe(m, Closure::zero(), 0.5, mesh, options, init);
  const std::vector<double> last = grid.slice(grid.n_times() - 1);
  for (double v : last) CHECK(std::fabs(v - 1.0) <= 1e-13);
}

TEST_CASE("mass is conserved and nonnegativity holds over a long run") {
  const TrafficModel m = diffusion_test_model(0.02);
  const DensityMesh mesh = DensityMesh::uniform(400, 1.0);
  const std::vector<double> init = mollified_delta(mesh, 0.5, 4.0 * mesh.h);
  FpeOptions options;
  options.t_end = 40.0;
  options.dt = 0.5 * 0.4 * mesh.h * mesh.h / 0.02;
  options.store_times = {40.0};
  const DensityGrid grid = solve_fpe(m, Closure::zero(), 0.5, mesh, options, init);
  CHECK(mass_of(grid.slice(grid.n_times() - 1), mesh.h) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(grid.min_pre_clip >= -1e-14);
  CHECK(grid.cumulative_renorm <= 1e-9);
  // t -> infinity limit is the uniform density
  const std::vector<double> last = grid.slice(grid.n_times() - 1);
  double linf = 0.0;
  for (double v : last) linf = std::max(linf, std::fabs(v - 1.0));
  CHECK(linf <= 1e-3);
}

TEST_CASE("comparison principle: CDF ordering is preserved under pure diffusion") {
  const TrafficModel m = diffusion_test_model(0.02);
  const DensityMesh mesh = DensityMesh::uniform(100, 1.0);
  const std::vector<double> p1 = mollified_delta(mesh, 0.6, 0.05);  // dominates p2
  const std::vector<double> p2 = mollified_delta(mesh, 0.4, 0.05);
  FpeOptions options;
  options.t_end = 2.0;
  options.dt = 0.5 * 0.4 * mesh.h * mesh.h / 0.02;
  for (int j = 0; j <= 20; ++j) options.store_times.push_back(2.0 * j / 20.0);
  const DensityGrid g1 = solve_fpe(m, Closure::zero(), 0.5, mesh, options, p1);
  const DensityGrid g2 = solve_fpe(m, Closure::zero(), 0.5, mesh, options, p2);
  REQUIRE(g1.n_times() == g2.n_times());
  for (int idx = 0; idx < g1.n_times(); ++idx) {
    const std::vector<double> a = g1.slice(idx), b = g2.slice(idx);
    double ca = 0.0, cb = 0.0;
    for (int i = 0; i < mesh.n_cells; ++i) {
      ca += a[i] * mesh.h;
      cb += b[i] * mesh.h;
      CHECK(ca <= cb + 1e-12);  // stochastic dominance of g1 over g2
    }
  }
}

TEST_CASE("mean-field closure translates a delta along the deterministic path") {
  // sigma = 0: the FPE is pure advection by b; with the mean-field closure the
  // mollified delta's centre must track the deterministic solution value
  std::vector<NoiseMode> no_modes;
  TrafficModel m{.flux = FluxFunction::greenshields(1.0, 1.0),
                 .noise = NoiseStructure(std::move(no_modes), 1.0, 1.0),
                 .domain_length = 1.0,
                 .horizon = 0.2,
                 .initial = InitialProfile{.kind = InitialKind::Sine,
                                           .mean = 0.4,
                                           .amplitude = 0.1,
                                           .wavenumber = 1.0},
                 .viscosity = 0.0};
  const SpaceTimeGrid sgrid = SpaceTimeGrid::create(m, 128, 256);
  auto mean = std::make_shared<DeterministicField>(deterministic_lwr(m, sgrid));
  const double x_query = sgrid.cell_center(32);

  const DensityMesh mesh = DensityMesh::uniform(400, 1.0);
  const Closure closure = Closure::mean_field(m.flux, mean);
  FpeOptions options;
  options.t_end = 0.2;
  // advective bound only (sigma = 0)
  double max_b = 0.0;
  for (int e = 0; e <= mesh.n_cells; ++e)
    for (double t : {0.0, 0.1, 0.2})
      max_b = std::max(max_b, std::fabs(closure(mesh.edge(e), x_query, t)));
  options.dt = 0.5 * 0.9 * mesh.h / max_b;
  const std::vector<double> init = mollified_delta(mesh, m.rho0(x_query), 4.0 * mesh.h);
  const DensityGrid grid = solve_fpe(m, closure, x_query, mesh, options, init);

  const std::vector<double> last = grid.slice(grid.n_times() - 1);
  double mean_rho = 0.0;
  for (int i = 0; i < mesh.n_cells; ++i) mean_rho += last[i] * mesh.h * mesh.center(i);
  int det_index = 0;
  for (int i = 0; i < sgrid.nx; ++i)
    if (std::fabs(sgrid.cell_center(i) - x_query) < 0.5 * sgrid.dx) det_index = i;
  const double det_value = mean->value(det_index, 0.2);
  CHECK(std::fabs(mean_rho - det_value) <= 2.0 * mesh.h);
}

TEST_CASE("numerical score of known shapes") {
  const DensityMesh mesh = DensityMesh::uniform(400, 1.0);
  DensityGrid grid;
  grid.mesh = mesh;
  grid.x = 0.5;
  SUBCASE("uniform density has zero score") {
    grid.times = {0.0};
    grid.p.assign(400, 1.0);
    const ScoreSlice s = numerical_score(grid, 0);
    for (int i = 0; i < 400; ++i)
      if (!s.masked[i]) CHECK(s.s[i] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("gaussian score is linear") {
    grid.times = {0.0};
    grid.p = mollified_delta(mesh, 0.5, 0.1);
    const ScoreSlice s = numerical_score(grid, 0);
    for (int i = 0; i < 400; ++i) {
      if (s.masked[i]) continue;
      const double rho = mesh.center(i);
      if (std::fabs(rho - 0.5) > 0.2) continue;  // central +-2 sd band
      const double expect = -(rho - 0.5) / 0.01;
      if (std::fabs(expect) > 1.0)
        CHECK(s.s[i] == doctest::Approx(expect).epsilon(0.02));
      else
        CHECK(std::fabs(s.s[i] - expect) <= 0.02);
    }
  }
  SUBCASE("exponential density has constant score") {
    const double a = 3.0;
    grid.times = {0.0};
    grid.p.resize(400);
    for (int i = 0; i < 400; ++i) grid.p[i] = std::exp(a * mesh.center(i));
    const ScoreSlice s = numerical_score(grid, 0);
    const double tol = mesh.h * mesh.h * a * a * a / 6.0 + 1e-12;
    for (int i = 0; i < 400; ++i)
      if (!s.masked[i]) CHECK(std::fabs(s.s[i] - a) <= tol);
  }
  SUBCASE("too few unmasked cells throws") {
    grid.times = {0.0};
    grid.p.assign(400, 0.0);
    grid.p[200] = 1.0 / mesh.h;
    CHECK_THROWS_AS(numerical_score(grid, 0), NumericalError);
  }
}

TEST_CASE("oracle closure interpolation and hole filling") {
  OracleClosure t0;
  t0.t = 0.0;
  t0.x = 0.5;
  t0.bin_centers = {0.1, 0.3, 0.5, 0.7, 0.9};
  t0.b_hat = {1.0, std::nan(""), 3.0, std::nan(""), 5.0};
  t0.counts = {10, 0, 10, 0, 10};
  t0.std_error = {0.1, std::nan(""), 0.1, std::nan(""), 0.1};
  OracleClosure t1 = t0;
  t1.t = 1.0;
  t1.b_hat = {2.0, std::nan(""), 4.0, std::nan(""), 6.0};
  const Closure c = Closure::oracle_tabulated({t0, t1});
  CHECK(c.fill_gap_count() == 4);
  // holes filled linearly: b(0.3, t=0) = 2.0
  CHECK(c(0.3, 0.5, 0.0) == doctest::Approx(2.0).epsilon(1e-12));
  // time interpolation halfway
  CHECK(c(0.5, 0.5, 0.5) == doctest::Approx(3.5).epsilon(1e-12));
  // constant extension below the first bin centre and beyond the last
  CHECK(c(0.05, 0.5, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c(0.95, 0.5, 1.0) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("density grid CSV round-trip") {
  const TrafficModel m = diffusion_test_model(0.02);
  const DensityMesh mesh = DensityMesh::uniform(50, 1.0);
  const std::vector<double> init = mollified_delta(mesh, 0.5, 0.1);
  FpeOptions options;
  options.t_end = 0.5;
  options.dt = 0.5 * 0.4 * mesh.h * mesh.h / 0.02;
  options.store_times = {0.25};
  const DensityGrid grid = solve_fpe(m, Closure::zero(), 0.5, mesh, options, init);
  const std::string path = "test_pgrid_roundtrip.csv";
  save_density_grid(grid, path);
  const DensityGrid back = load_density_grid(path);
  CHECK(back.mesh.n_cells == grid.mesh.n_cells);
  CHECK(back.x == doctest::Approx(grid.x));
  CHECK(back.dt == doctest::Approx(grid.dt));
  REQUIRE(back.n_times() == grid.n_times());
  for (int j = 0; j < grid.n_times(); ++j)
    CHECK(back.times[j] == doctest::Approx(grid.times[j]).epsilon(1e-12));
  for (std::size_t i = 0; i < grid.p.size(); ++i)
    CHECK(back.p[i] == doctest::Approx(grid.p[i]).epsilon(1e-12));
  std::remove(path.c_str());
}
