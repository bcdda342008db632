#pragma once

#include <string>
#include <vector>

namespace slwr {

/// Dense polynomial in one variable, c[0] + c[1] x + c[2] x^2 + ...
/// Used for the noise intensity profiles, which are polynomial by
/// construction so that density derivatives up to third order are exact.
class Polynomial {
 public:
  Polynomial() : c_{0.0} {}
  explicit Polynomial(std::vector<double> coeffs);

  double operator()(double x) const;
  Polynomial derivative() const;
  Polynomial operator*(const Polynomial& other) const;
  Polynomial operator+(const Polynomial& other) const;
  const std::vector<double>& coeffs() const { return c_; }

 private:
  std::vector<double> c_;
};

enum class FluxKind { Greenshields, Drake, TabulatedSmooth };

/// Concave fundamental diagram f(rho) = rho * v(rho) on [0, rho_max].
class FluxFunction {
 public:
  static FluxFunction greenshields(double u_f, double rho_max);
  static FluxFunction drake(double u_f, double rho_max, double k0);
  /// Smooth tabulated diagram; values between nodes by cubic Hermite
  /// interpolation, derivatives by central differences.
  static FluxFunction tabulated(std::vector<double> rho_nodes, std::vector<double> f_nodes,
                                double u_f, double rho_max);

  double value(double rho) const;   // f
  double prime(double rho) const;   // f'
  double second(double rho) const;  // f''
  double third(double rho) const;   // f'''

  /// Speed relation v(rho) = f(rho)/rho, with v(0) = u_f.
  double speed(double rho) const;
  /// Inverse of the decreasing speed relation, v is strictly decreasing so
  /// the inverse is unique. u must lie in (0, u_f).
  double speed_inverse(double u) const;

  FluxKind kind() const { return kind_; }
  double u_f() const { return u_f_; }
  double rho_max() const { return rho_max_; }
  /// Density at which f' = 0 (capacity), located by bisection.
  double capacity_density() const;

 private:
  FluxFunction() = default;
  void check_domain(double rho, const char* op) const;

  FluxKind kind_ = FluxKind::Greenshields;
  double u_f_ = 0.0;
  double rho_max_ = 0.0;
  double drake_k0_ = 0.0;
  std::vector<double> tab_rho_, tab_f_;  // TabulatedSmooth only
};

enum class BasisKind { Constant, Sin, Cos, GaussianBump };

/// One noise mode: sigma_k(rho) = alpha_k * rho (rho_max - rho) * s_tilde_k(rho)
/// paired with a spatial basis weight e_k(x).
struct NoiseMode {
  double alpha = 0.0;
  Polynomial s_tilde;      // positive polynomial of degree <= 3
  BasisKind basis = BasisKind::Constant;
  double basis_param = 0.0;   // Sin/Cos: integer k in sin(k pi x / L); bump: centre
  double basis_param2 = 0.0;  // bump: width
};

/// Multiplicative noise structure Sigma^2(rho, x) = sum_k sigma_k(rho)^2 e_k(x)^2.
/// The factorised sigma_k vanishes at rho = 0 and rho = rho_max exactly.
class NoiseStructure {
 public:
  NoiseStructure(std::vector<NoiseMode> modes, double rho_max, double domain_length);
  /// Test-mode structure with Sigma^2 identically constant (does not vanish
  /// at the endpoints; used by diffusion oracles, never by model configs).
  static NoiseStructure constant_test(double sigma_sq_value, double rho_max,
                                      double domain_length);

  double sigma_sq(double rho, double x) const;       // Sigma^2
  double sigma_sq_d1(double rho, double x) const;    // d/drho Sigma^2
  double sigma_sq_d2(double rho, double x) const;
  double sigma_sq_d3(double rho, double x) const;
  double diffusion(double rho, double x) const;      // D = Sigma^2 / 2

  /// sigma_k(rho), the per-mode intensity (no basis weight).
  double mode_intensity(std::size_t k, double rho) const;
  double basis_value(std::size_t k, double x) const;
  std::size_t n_modes() const { return modes_.size(); }
  const NoiseMode& mode(std::size_t k) const { return modes_[k]; }
  bool is_constant_test() const { return constant_test_; }
  double rho_max() const { return rho_max_; }
  double domain_length() const { return length_; }
  /// Largest Sigma^2 over a probe grid, used for stability bounds.
  double max_sigma_sq(int n_probes = 256) const;

  /// d^j/drho^j of [rho (rho_max-rho) s_tilde_k]^2 — the alpha-free profile
  /// factor, needed when the noise amplitudes are trainable.
  double mode_profile_sq_deriv(std::size_t k, int j, double rho) const;

 private:
  void check_domain(double rho, double x) const;

  std::vector<NoiseMode> modes_;
  std::vector<Polynomial> profile_sq_;  // [rho(rho_max-rho) s_tilde]^2 and its
  std::vector<Polynomial> profile_sq_d1_, profile_sq_d2_, profile_sq_d3_;
  double rho_max_ = 0.0;
  double length_ = 0.0;
  bool constant_test_ = false;
  double const_value_ = 0.0;
};

enum class InitialKind { Constant, Sine, CustomTable };

/// Initial density profile rho_0(x).
struct InitialProfile {
  InitialKind kind = InitialKind::Constant;
  double value = 0.0;       // Constant
  double mean = 0.0;        // Sine: mean + amplitude * sin(2 pi k x / L)
  double amplitude = 0.0;
  double wavenumber = 1.0;
  std::vector<double> table_x, table_rho;  // CustomTable, linear interpolation

  double operator()(double x, double domain_length) const;
};

/// The full traffic model: fundamental diagram, noise structure, domain and
/// initial data. Immutable after construction; safe for concurrent reads.
struct TrafficModel {
  FluxFunction flux;
  NoiseStructure noise;
  double domain_length = 1.0;  // L
  double horizon = 1.0;        // T
  InitialProfile initial;
  double viscosity = 0.0;      // epsilon >= 0; 0 means the raw dynamics

  double rho_max() const { return flux.rho_max(); }
  double rho0(double x) const { return initial(x, domain_length); }
};

// -- Operations ---------------------------------------------------------

double flux_value(const TrafficModel& model, double rho);
double flux_prime(const TrafficModel& model, double rho);
double sigma_squared(const TrafficModel& model, double rho, double x);
/// Ito drift correction -1/2 d/drho Sigma^2(rho, x).
double ito_drift(const TrafficModel& model, double rho, double x);

enum class CheckStatus { Pass, Fail, Advisory };

struct AssumptionCheck {
  std::string name;
  CheckStatus status = CheckStatus::Pass;
  std::string detail;  // on failure, names the violating probe point
};

struct ValidationReport {
  std::vector<AssumptionCheck> checks;
  bool all_fatal_pass() const;
  std::string to_string() const;
};

/// Evaluates the standing model assumptions on a probe grid: flux endpoints
/// and concavity, endpoint vanishing and interior non-degeneracy of the
/// noise, and interior initial data.
ValidationReport validate_assumptions(const TrafficModel& model, int n_probes = 1000);

}  // namespace slwr
