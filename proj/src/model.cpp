#include "slwr/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "slwr/errors.hpp"

namespace slwr {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

// -- Polynomial -----------------------------------------------------------

Polynomial::Polynomial(std::vector<double> coeffs) : c_(std::move(coeffs)) {
  if (c_.empty()) c_.push_back(0.0);
}

double Polynomial::operator()(double x) const {
  double acc = 0.0;
  for (std::size_t i = c_.size(); i-- > 0;) acc = acc * x + c_[i];
  return acc;
}

Polynomial Polynomial::derivative() const {
  if (c_.size() <= 1) return Polynomial{{0.0}};
  std::vector<double> d(c_.size() - 1);
  for (std::size_t i = 1; i < c_.size(); ++i) d[i - 1] = c_[i] * static_cast<double>(i);
  return Polynomial{std::move(d)};
}

Polynomial Polynomial::operator*(const Polynomial& other) const {
  std::vector<double> p(c_.size() + other.c_.size() - 1, 0.0);
  for (std::size_t i = 0; i < c_.size(); ++i)
    for (std::size_t j = 0; j < other.c_.size(); ++j) p[i + j] += c_[i] * other.c_[j];
  return Polynomial{std::move(p)};
}

Polynomial Polynomial::operator+(const Polynomial& other) const {
  std::vector<double> p(std::max(c_.size(), other.c_.size()), 0.0);
  for (std::size_t i = 0; i < c_.size(); ++i) p[i] += c_[i];
  for (std::size_t i = 0; i < other.c_.size(); ++i) p[i] += other.c_[i];
  return Polynomial{std::move(p)};
}

// -- FluxFunction ----------------------------------------------------------

FluxFunction FluxFunction::greenshields(double u_f, double rho_max) {
  if (u_f <= 0.0 || rho_max <= 0.0)
    throw ConfigError("greenshields flux requires u_f > 0 and rho_max > 0");
  FluxFunction f;
  f.kind_ = FluxKind::Greenshields;
  f.u_f_ = u_f;
  f.rho_max_ = rho_max;
  return f;
}

FluxFunction FluxFunction::drake(double u_f, double rho_max, double k0) {
  if (u_f <= 0.0 || rho_max <= 0.0 || k0 <= 0.0)
    throw ConfigError("drake flux requires u_f > 0, rho_max > 0, k0 > 0");
  FluxFunction f;
  f.kind_ = FluxKind::Drake;
  f.u_f_ = u_f;
  f.rho_max_ = rho_max;
  f.drake_k0_ = k0;
  return f;
}

FluxFunction FluxFunction::tabulated(std::vector<double> rho_nodes, std::vector<double> f_nodes,
                                     double u_f, double rho_max) {
  if (rho_nodes.size() != f_nodes.size() || rho_nodes.size() < 4)
    throw ConfigError("tabulated flux needs >= 4 matching (rho, f) nodes");
  if (!std::is_sorted(rho_nodes.begin(), rho_nodes.end()))
    throw ConfigError("tabulated flux nodes must be increasing in rho");
  FluxFunction f;
  f.kind_ = FluxKind::TabulatedSmooth;
  f.u_f_ = u_f;
  f.rho_max_ = rho_max;
  f.tab_rho_ = std::move(rho_nodes);
  f.tab_f_ = std::move(f_nodes);
  return f;
}

void FluxFunction::check_domain(double rho, const char* op) const {
  if (!(rho >= 0.0 && rho <= rho_max_))
    throw DomainError(std::string(op) + ": density " + fmt(rho) + " outside [0, " +
                      fmt(rho_max_) + "]");
}

double FluxFunction::value(double rho) const {
  check_domain(rho, "flux_value");
  switch (kind_) {
    case FluxKind::Greenshields:
      return u_f_ * rho * (1.0 - rho / rho_max_);
    case FluxKind::Drake:
      return u_f_ * rho * std::exp(-rho * rho / (2.0 * drake_k0_ * drake_k0_));
    case FluxKind::TabulatedSmooth: {
      // cubic Hermite with central-difference node slopes
      const auto& xs = tab_rho_;
      const auto& ys = tab_f_;
      auto it = std::upper_bound(xs.begin(), xs.end(), rho);
      std::size_t i = (it == xs.begin()) ? 0 : static_cast<std::size_t>(it - xs.begin()) - 1;
      if (i >= xs.size() - 1) i = xs.size() - 2;
      auto slope = [&](std::size_t j) {
        if (j == 0) return (ys[1] - ys[0]) / (xs[1] - xs[0]);
        if (j == xs.size() - 1) return (ys[j] - ys[j - 1]) / (xs[j] - xs[j - 1]);
        return (ys[j + 1] - ys[j - 1]) / (xs[j + 1] - xs[j - 1]);
      };
      const double h = xs[i + 1] - xs[i];
      const double s = (rho - xs[i]) / h;
      const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
      const double h10 = s * (1 - s) * (1 - s);
      const double h01 = s * s * (3 - 2 * s);
      const double h11 = s * s * (s - 1);
      return h00 * ys[i] + h10 * h * slope(i) + h01 * ys[i + 1] + h11 * h * slope(i + 1);
    }
  }
  return 0.0;
}

double FluxFunction::prime(double rho) const {
  check_domain(rho, "flux_prime");
  switch (kind_) {
    case FluxKind::Greenshields:
      return u_f_ * (1.0 - 2.0 * rho / rho_max_);
    case FluxKind::Drake: {
      const double k2 = drake_k0_ * drake_k0_;
      return u_f_ * std::exp(-rho * rho / (2.0 * k2)) * (1.0 - rho * rho / k2);
    }
    case FluxKind::TabulatedSmooth: {
      const double h = 1e-6 * rho_max_;
      const double lo = std::max(0.0, rho - h), hi = std::min(rho_max_, rho + h);
      return (value(hi) - value(lo)) / (hi - lo);
    }
  }
  return 0.0;
}

double FluxFunction::second(double rho) const {
  check_domain(rho, "flux_second");
  switch (kind_) {
    case FluxKind::Greenshields:
      return -2.0 * u_f_ / rho_max_;
    case FluxKind::Drake: {
      const double k2 = drake_k0_ * drake_k0_;
      return u_f_ * std::exp(-rho * rho / (2.0 * k2)) * (rho / k2) * (rho * rho / k2 - 3.0);
    }
    case FluxKind::TabulatedSmooth: {
      const double h = 1e-5 * rho_max_;
      const double lo = std::max(0.0, rho - h), hi = std::min(rho_max_, rho + h);
      const double mid = 0.5 * (lo + hi);
      return (prime(hi) - prime(lo)) / (hi - lo) + 0.0 * mid;
    }
  }
  return 0.0;
}

double FluxFunction::third(double rho) const {
  check_domain(rho, "flux_third");
  switch (kind_) {
    case FluxKind::Greenshields:
      return 0.0;
    case FluxKind::Drake: {
      const double k2 = drake_k0_ * drake_k0_;
      const double r2 = rho * rho / k2;
      return u_f_ * std::exp(-rho * rho / (2.0 * k2)) / k2 * (-r2 * r2 + 6.0 * r2 - 3.0);
    }
    case FluxKind::TabulatedSmooth: {
      const double h = 1e-4 * rho_max_;
      const double lo = std::max(0.0, rho - h), hi = std::min(rho_max_, rho + h);
      return (second(hi) - second(lo)) / (hi - lo);
    }
  }
  return 0.0;
}

double FluxFunction::speed(double rho) const {
  check_domain(rho, "speed");
  if (rho == 0.0) return u_f_;
  return value(rho) / rho;
}

double FluxFunction::speed_inverse(double u) const {
  if (!(u > 0.0 && u < u_f_))
    throw DomainError("speed_inverse: speed " + fmt(u) + " outside (0, " + fmt(u_f_) + ")");
  if (kind_ == FluxKind::Greenshields) return rho_max_ * (1.0 - u / u_f_);
  // v is strictly decreasing; bisection on [0, rho_max]
  double lo = 0.0, hi = rho_max_;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (speed(mid) > u)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double FluxFunction::capacity_density() const {
  // f' decreasing (concavity); bisection for the zero of f'
  double lo = 0.0, hi = rho_max_;
  if (prime(lo) <= 0.0) return lo;
  if (prime(hi) >= 0.0) return hi;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (prime(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// -- NoiseStructure ---------------------------------------------------------

NoiseStructure::NoiseStructure(std::vector<NoiseMode> modes, double rho_max,
                               double domain_length)
    : modes_(std::move(modes)), rho_max_(rho_max), length_(domain_length) {
  if (rho_max_ <= 0.0 || length_ <= 0.0)
    throw ConfigError("noise structure requires rho_max > 0 and L > 0");
  for (const auto& m : modes_) {
    // q(rho) = rho (rho_max - rho) s_tilde(rho); store q^2 and derivatives
    Polynomial q = Polynomial{{0.0, rho_max_, -1.0}} * m.s_tilde;
    Polynomial q2 = q * q;
    profile_sq_.push_back(q2);
    profile_sq_d1_.push_back(q2.derivative());
    profile_sq_d2_.push_back(profile_sq_d1_.back().derivative());
    profile_sq_d3_.push_back(profile_sq_d2_.back().derivative());
  }
}

NoiseStructure NoiseStructure::constant_test(double sigma_sq_value, double rho_max,
                                             double domain_length) {
  NoiseStructure n({}, rho_max, domain_length);
  n.constant_test_ = true;
  n.const_value_ = sigma_sq_value;
  return n;
}

void NoiseStructure::check_domain(double rho, double x) const {
  if (!(rho >= 0.0 && rho <= rho_max_))
    throw DomainError("sigma_squared: density " + fmt(rho) + " outside [0, " + fmt(rho_max_) +
                      "]");
  if (!(x >= 0.0 && x <= length_))
    throw DomainError("sigma_squared: position " + fmt(x) + " outside [0, " + fmt(length_) + "]");
}

double NoiseStructure::basis_value(std::size_t k, double x) const {
  const NoiseMode& m = modes_[k];
  switch (m.basis) {
    case BasisKind::Constant:
      return 1.0;
    case BasisKind::Sin:
      return std::sin(m.basis_param * M_PI * x / length_);
    case BasisKind::Cos:
      return std::cos(m.basis_param * M_PI * x / length_);
    case BasisKind::GaussianBump: {
      const double z = (x - m.basis_param) / m.basis_param2;
      return std::exp(-0.5 * z * z);
    }
  }
  return 0.0;
}

double NoiseStructure::mode_intensity(std::size_t k, double rho) const {
  const NoiseMode& m = modes_[k];
  return m.alpha * rho * (rho_max_ - rho) * m.s_tilde(rho);
}

double NoiseStructure::mode_profile_sq_deriv(std::size_t k, int j, double rho) const {
  switch (j) {
    case 0:
      return profile_sq_[k](rho);
    case 1:
      return profile_sq_d1_[k](rho);
    case 2:
      return profile_sq_d2_[k](rho);
    case 3:
      return profile_sq_d3_[k](rho);
    default:
      throw DomainError("mode_profile_sq_deriv: derivative order must be 0..3");
  }
}

double NoiseStructure::sigma_sq(double rho, double x) const {
  check_domain(rho, x);
  if (constant_test_) return const_value_;
  double acc = 0.0;
  for (std::size_t k = 0; k < modes_.size(); ++k) {
    const double e = basis_value(k, x);
    acc += modes_[k].alpha * modes_[k].alpha * profile_sq_[k](rho) * e * e;
  }
  return acc;
}

double NoiseStructure::sigma_sq_d1(double rho, double x) const {
  check_domain(rho, x);
  if (constant_test_) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < modes_.size(); ++k) {
    const double e = basis_value(k, x);
    acc += modes_[k].alpha * modes_[k].alpha * profile_sq_d1_[k](rho) * e * e;
  }
  return acc;
}

double NoiseStructure::sigma_sq_d2(double rho, double x) const {
  check_domain(rho, x);
  if (constant_test_) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < modes_.size(); ++k) {
    const double e = basis_value(k, x);
    acc += modes_[k].alpha * modes_[k].alpha * profile_sq_d2_[k](rho) * e * e;
  }
  return acc;
}

double NoiseStructure::sigma_sq_d3(double rho, double x) const {
  check_domain(rho, x);
  if (constant_test_) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < modes_.size(); ++k) {
    const double e = basis_value(k, x);
    acc += modes_[k].alpha * modes_[k].alpha * profile_sq_d3_[k](rho) * e * e;
  }
  return acc;
}

double NoiseStructure::diffusion(double rho, double x) const {
  check_domain(rho, x);
  if (constant_test_) return 0.5 * const_value_;
  double acc = 0.0;
  for (std::size_t k = 0; k < modes_.size(); ++k) {
    const double e = basis_value(k, x);
    acc += 0.5 * (modes_[k].alpha * modes_[k].alpha * profile_sq_[k](rho) * e * e);
  }
  return acc;
}

double NoiseStructure::max_sigma_sq(int n_probes) const {
  if (constant_test_) return const_value_;
  double best = 0.0;
  for (int i = 0; i <= n_probes; ++i) {
    const double rho = rho_max_ * i / n_probes;
    for (int j = 0; j <= n_probes / 8; ++j) {
      const double x = length_ * j / (n_probes / 8);
      best = std::max(best, sigma_sq(rho, x));
    }
  }
  return best;
}

// -- InitialProfile ----------------------------------------------------------

double InitialProfile::operator()(double x, double domain_length) const {
  switch (kind) {
    case InitialKind::Constant:
      return value;
    case InitialKind::Sine:
      return mean + amplitude * std::sin(2.0 * M_PI * wavenumber * x / domain_length);
    case InitialKind::CustomTable: {
      if (table_x.empty()) throw ConfigError("custom_table initial profile has no nodes");
      if (x <= table_x.front()) return table_rho.front();
      if (x >= table_x.back()) return table_rho.back();
      auto it = std::upper_bound(table_x.begin(), table_x.end(), x);
      const std::size_t i = static_cast<std::size_t>(it - table_x.begin()) - 1;
      const double w = (x - table_x[i]) / (table_x[i + 1] - table_x[i]);
      return (1.0 - w) * table_rho[i] + w * table_rho[i + 1];
    }
  }
  return 0.0;
}

// -- Operations ---------------------------------------------------------------

double flux_value(const TrafficModel& model, double rho) { return model.flux.value(rho); }
double flux_prime(const TrafficModel& model, double rho) { return model.flux.prime(rho); }

double sigma_squared(const TrafficModel& model, double rho, double x) {
  return model.noise.sigma_sq(rho, x);
}

double ito_drift(const TrafficModel& model, double rho, double x) {
  return -0.5 * model.noise.sigma_sq_d1(rho, x);
}

bool ValidationReport::all_fatal_pass() const {
  for (const auto& c : checks)
    if (c.status == CheckStatus::Fail) return false;
  return true;
}

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    const char* tag = c.status == CheckStatus::Pass   ? "PASS"
                      : c.status == CheckStatus::Fail ? "FAIL"
                                                      : "ADVISORY";
    os << "[" << tag << "] " << c.name;
    if (!c.detail.empty()) os << ": " << c.detail;
    os << "\n";
  }
  return os.str();
}

ValidationReport validate_assumptions(const TrafficModel& model, int n_probes) {
  ValidationReport report;
  const double rho_max = model.rho_max();
  const double L = model.domain_length;

  // flux endpoints
  {
    AssumptionCheck c;
    c.name = "flux endpoint f(0) = 0";
    const double f0 = model.flux.value(0.0);
    if (std::fabs(f0) > 1e-12) {
      c.status = CheckStatus::Fail;
      c.detail = "f(0) = " + fmt(f0);
    }
    report.checks.push_back(c);
  }
  {
    AssumptionCheck c;
    c.name = "flux endpoint f(rho_max) = 0";
    const double f1 = model.flux.value(rho_max);
    if (std::fabs(f1) > 1e-12) {
      // Drake does not vanish at rho_max analytically; advisory, not fatal
      c.status = model.flux.kind() == FluxKind::Drake ? CheckStatus::Advisory : CheckStatus::Fail;
      c.detail = "f(rho_max) = " + fmt(f1);
    }
    report.checks.push_back(c);
  }

  // flux concavity on probes
  {
    AssumptionCheck c;
    c.name = "flux concavity f'' <= 0";
    for (int i = 0; i <= n_probes; ++i) {
      const double rho = rho_max * i / n_probes;
      const double f2 = model.flux.second(rho);
      if (f2 > 1e-10) {
        c.status =
            model.flux.kind() == FluxKind::Drake ? CheckStatus::Advisory : CheckStatus::Fail;
        c.detail = "f''(" + fmt(rho) + ") = " + fmt(f2);
        break;
      }
    }
    report.checks.push_back(c);
  }

  // noise endpoint vanishing
  {
    AssumptionCheck c;
    c.name = "noise endpoint vanishing sigma_k(0) = sigma_k(rho_max) = 0";
    if (model.noise.is_constant_test()) {
      c.status = CheckStatus::Advisory;
      c.detail = "constant test-mode noise does not vanish at the endpoints";
    } else {
      for (std::size_t k = 0; k < model.noise.n_modes(); ++k) {
        const double s0 = model.noise.mode_intensity(k, 0.0);
        const double s1 = model.noise.mode_intensity(k, rho_max);
        if (s0 != 0.0 || s1 != 0.0) {
          c.status = CheckStatus::Fail;
          c.detail = "mode " + std::to_string(k) + ": sigma(0) = " + fmt(s0) +
                     ", sigma(rho_max) = " + fmt(s1);
          break;
        }
      }
    }
    report.checks.push_back(c);
  }

  // non-degeneracy of Sigma^2 on interior probes
  {
    AssumptionCheck c;
    c.name = "noise non-degeneracy Sigma^2 > 0 on the interior";
    if (model.noise.n_modes() == 0 && !model.noise.is_constant_test()) {
      c.status = CheckStatus::Advisory;
      c.detail = "no noise modes (deterministic model)";
    } else {
      const int nx_probes = std::max(8, n_probes / 8);
      bool ok = true;
      for (int i = 1; i < n_probes && ok; ++i) {
        const double rho = rho_max * i / n_probes;
        for (int j = 0; j <= nx_probes; ++j) {
          const double x = L * j / nx_probes;
          if (!(model.noise.sigma_sq(rho, x) > 0.0)) {
            c.status = CheckStatus::Fail;
            c.detail = "Sigma^2(" + fmt(rho) + ", " + fmt(x) + ") = " +
                       fmt(model.noise.sigma_sq(rho, x));
            ok = false;
            break;
          }
        }
      }
    }
    report.checks.push_back(c);
  }

  // interior initial data
  {
    AssumptionCheck c;
    c.name = "initial data 0 < rho_0 < rho_max";
    for (int j = 0; j <= n_probes; ++j) {
      const double x = L * j / n_probes;
      const double r0 = model.rho0(x);
      if (!(r0 > 0.0 && r0 < rho_max)) {
        c.status = CheckStatus::Fail;
        c.detail = "rho_0(" + fmt(x) + ") = " + fmt(r0);
        break;
      }
    }
    report.checks.push_back(c);
  }

  return report;
}

}  // namespace slwr
