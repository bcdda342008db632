#include "slwr/inference.hpp"

#include <algorithm>
#include <cmath>

#include "slwr/errors.hpp"

namespace slwr {

void gauss_legendre(int n, double a, double b, std::vector<double>& nodes,
                    std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  const int m = (n + 1) / 2;
  const double xm = 0.5 * (b + a);
  const double xl = 0.5 * (b - a);
  for (int i = 0; i < m; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::fabs(z - z1) < 1e-15) break;
    }
    nodes[i] = xm - xl * z;
    nodes[n - 1 - i] = xm + xl * z;
    weights[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
    weights[n - 1 - i] = weights[i];
  }
}

namespace {

// fixed small rule for the per-interval cumulative integrals
constexpr int kSubRule = 8;

struct SubRule {
  std::vector<double> nodes, weights;  // on [0, 1]
  SubRule() { gauss_legendre(kSubRule, 0.0, 1.0, nodes, weights); }
};

const SubRule& sub_rule() {
  static const SubRule rule;
  return rule;
}

double integrate_fn(const std::function<double(double)>& f, double a, double b) {
  const SubRule& r = sub_rule();
  const double w = b - a;
  double acc = 0.0;
  for (int k = 0; k < kSubRule; ++k) acc += r.weights[k] * f(a + w * r.nodes[k]);
  return acc * w;
}

}  // namespace

// -- RecoveredDensity ------------------------------------------------------------

RecoveredDensity::RecoveredDensity(ScoreFunction score, double rho_max, double x, double t,
                                   double rho_star, int n_q)
    : score_(std::move(score)), rho_max_(rho_max), x_(x), t_(t), rho_star_(rho_star) {
  if (!(rho_star > 0.0 && rho_star < rho_max))
    throw DomainError("recover_density: rho_star must lie inside (0, rho_max)");
  if (n_q < 2) throw ConfigError("recover_density: n_q must be >= 2");
  gauss_legendre(n_q, 0.0, rho_max, nodes_, weights_);

  // cumulative integral of the score along the node chain
  prefix_.assign(n_q, 0.0);
  for (int i = 0; i + 1 < n_q; ++i)
    prefix_[i + 1] = prefix_[i] + integrate_fn(score_, nodes_[i], nodes_[i + 1]);
  for (double v : prefix_)
    if (!std::isfinite(v)) throw NumericalError("recover_density: non-finite score integral");

  offset_ = prefix_at(rho_star);
  double z = 0.0;
  for (int i = 0; i < n_q; ++i) z += weights_[i] * std::exp(prefix_[i] - offset_);
  if (!(z > 0.0) || !std::isfinite(z))
    throw NumericalError("recover_density: degenerate normalisation");
  log_norm_ = std::log(z);
  log_p_.resize(n_q);
  for (int i = 0; i < n_q; ++i) log_p_[i] = prefix_[i] - offset_ - log_norm_;
}

double RecoveredDensity::prefix_at(double rho_hat) const {
  if (!(rho_hat >= 0.0 && rho_hat <= rho_max_))
    throw DomainError("recover_density: query " + std::to_string(rho_hat) +
                      " outside [0, rho_max]");
  // nearest node below (or the first node)
  const auto it = std::upper_bound(nodes_.begin(), nodes_.end(), rho_hat);
  if (it == nodes_.begin()) return prefix_.front() - integrate_fn(score_, rho_hat, nodes_.front());
  const std::size_t i = static_cast<std::size_t>(it - nodes_.begin()) - 1;
  return prefix_[i] + integrate_fn(score_, nodes_[i], rho_hat);
}

double RecoveredDensity::density_at(double rho_hat) const {
  return std::exp(prefix_at(rho_hat) - offset_ - log_norm_);
}

double RecoveredDensity::quadrature_mass() const {
  double m = 0.0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) m += weights_[i] * std::exp(log_p_[i]);
  return m;
}

double RecoveredDensity::interval_mass(double lo, double hi) const {
  lo = std::clamp(lo, 0.0, rho_max_);
  hi = std::clamp(hi, 0.0, rho_max_);
  if (hi <= lo) return 0.0;
  auto dens = [this](double q) { return density_at(q); };
  // split at the quadrature nodes inside (lo, hi)
  double mass = 0.0;
  double cursor = lo;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i] <= cursor) continue;
    if (nodes_[i] >= hi) break;
    mass += integrate_fn(dens, cursor, nodes_[i]);
    cursor = nodes_[i];
  }
  mass += integrate_fn(dens, cursor, hi);
  return mass;
}

RecoveredDensity recover_density(ScoreFunction score, double rho_max, double x, double t,
                                 double rho_star, int n_q) {
  return RecoveredDensity(std::move(score), rho_max, x, t, rho_star, n_q);
}

SummaryStats summary_stats(const RecoveredDensity& d) {
  const auto& nodes = d.quad_nodes();
  const auto& w = d.quad_weights();
  const auto& lp = d.log_p();
  SummaryStats s;
  double mass = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double pw = w[i] * std::exp(lp[i]);
    mass += pw;
    s.mean += pw * nodes[i];
  }
  s.mean /= mass;
  double var = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    var += w[i] * std::exp(lp[i]) * (nodes[i] - s.mean) * (nodes[i] - s.mean);
  s.stddev = std::sqrt(std::max(0.0, var / mass));

  // CDF on a refined chain (each node interval subdivided), then monotone
  // piecewise-linear inversion
  constexpr int kRefine = 8;
  std::vector<double> xs{0.0};
  auto push_refined = [&](double a, double b) {
    for (int k = 1; k <= kRefine; ++k) xs.push_back(a + (b - a) * k / kRefine);
  };
  push_refined(0.0, nodes.front());
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) push_refined(nodes[i], nodes[i + 1]);
  push_refined(nodes.back(), d.rho_max());

  std::vector<double> cdf(xs.size(), 0.0);
  for (std::size_t i = 1; i < xs.size(); ++i)
    cdf[i] = cdf[i - 1] + d.interval_mass(xs[i - 1], xs[i]);
  const double total = cdf.back();
  for (double& v : cdf) v /= total;
  for (std::size_t i = 1; i < cdf.size(); ++i) cdf[i] = std::max(cdf[i], cdf[i - 1]);

  auto quantile = [&](double q) {
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), q);
    if (it == cdf.begin()) return xs.front();
    if (it == cdf.end()) return xs.back();
    const std::size_t i = static_cast<std::size_t>(it - cdf.begin());
    const double f0 = cdf[i - 1], f1 = cdf[i];
    const double wq = f1 > f0 ? (q - f0) / (f1 - f0) : 0.5;
    return xs[i - 1] + wq * (xs[i] - xs[i - 1]);
  };
  s.ci_lo = quantile(0.025);
  s.ci_hi = quantile(0.975);
  return s;
}

double congestion_risk(const RecoveredDensity& d, double rho_c) {
  if (!(rho_c >= 0.0 && rho_c <= d.rho_max()))
    throw DomainError("congestion_risk: rho_c outside [0, rho_max]");
  if (rho_c == 0.0) return 1.0;
  if (rho_c == d.rho_max()) return 0.0;
  return d.interval_mass(rho_c, d.rho_max());
}

// -- Flow pushforward ------------------------------------------------------------

double FlowDensity::quadrature_mass() const {
  double m = 0.0;
  for (std::size_t i = 0; i < q_nodes.size(); ++i) m += weights[i] * p_q[i];
  return m;
}

FlowDensity flow_pushforward(const RecoveredDensity& d, const FluxFunction& flux,
                             int n_q_flow) {
  const double rho_max = flux.rho_max();
  const double rho_c = flux.capacity_density();
  if (!(rho_c > 0.0 && rho_c < rho_max) || flux.second(rho_c) > 0.0)
    throw ConfigError("flow_pushforward: flux must be unimodal concave with interior capacity");

  // excise a density neighbourhood of total measure 1e-4 rho_max around the
  // capacity point, where |f'| -> 0 makes the preimage sum singular
  const double delta_rho = 0.5e-4 * rho_max;
  const double q_cap = flux.value(rho_c);
  const double q_cut =
      std::min(flux.value(rho_c - delta_rho), flux.value(rho_c + delta_rho));

  // substitute q = q_cap - u^2 so the 1/|f'| ~ 1/u singularity cancels in the
  // quadrature weight
  const double u_lo = std::sqrt(std::max(0.0, q_cap - q_cut));
  const double u_hi = std::sqrt(q_cap);
  std::vector<double> u_nodes, u_weights;
  gauss_legendre(n_q_flow, u_lo, u_hi, u_nodes, u_weights);

  auto invert_branch = [&](double q, bool rising) {
    double lo = rising ? 0.0 : rho_c;
    double hi = rising ? rho_c : rho_max;
    // f increasing on [0, rho_c], decreasing on [rho_c, rho_max]
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const bool go_right = rising ? (flux.value(mid) < q) : (flux.value(mid) > q);
      if (go_right)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };

  FlowDensity out;
  out.q_capacity = q_cap;
  out.q_nodes.resize(n_q_flow);
  out.p_q.resize(n_q_flow);
  out.weights.resize(n_q_flow);
  out.preimages.resize(n_q_flow);
  for (int i = 0; i < n_q_flow; ++i) {
    const double u = u_nodes[i];
    const double q = q_cap - u * u;
    out.q_nodes[i] = q;
    out.weights[i] = 2.0 * u * u_weights[i];
    double pq = 0.0;
    const double lo_branch = invert_branch(q, true);
    const double hi_branch = invert_branch(q, false);
    for (double rho_j : {lo_branch, hi_branch}) {
      const double fp = std::fabs(flux.prime(rho_j));
      if (fp > 0.0) {
        pq += d.density_at(rho_j) / fp;
        out.preimages[i].push_back(rho_j);
      }
    }
    out.p_q[i] = pq;
  }
  const double mass = out.quadrature_mass();
  if (!(mass > 0.0)) throw NumericalError("flow_pushforward: zero pushforward mass");
  out.excised_mass = std::max(0.0, 1.0 - mass);
  for (double& v : out.p_q) v /= mass;
  return out;
}

// -- Grid adapters -------------------------------------------------------------------

ScoreFunction grid_score_function(const DensityGrid& pgrid, int t_index) {
  const ScoreSlice slice = numerical_score(pgrid, t_index);
  const DensityMesh mesh = pgrid.mesh;
  // collect the unmasked support once; capture by value for thread safety
  std::vector<double> xs, ss;
  for (int i = 0; i < mesh.n_cells; ++i) {
    if (slice.masked[i]) continue;
    xs.push_back(mesh.center(i));
    ss.push_back(slice.s[i]);
  }
  return [xs = std::move(xs), ss = std::move(ss)](double rho_hat) {
    if (rho_hat <= xs.front()) return ss.front();
    if (rho_hat >= xs.back()) return ss.back();
    const auto it = std::upper_bound(xs.begin(), xs.end(), rho_hat);
    const std::size_t i = static_cast<std::size_t>(it - xs.begin()) - 1;
    const double w = (rho_hat - xs[i]) / (xs[i + 1] - xs[i]);
    return (1.0 - w) * ss[i] + w * ss[i + 1];
  };
}

SummaryStats grid_moments(const DensityGrid& pgrid, int t_index) {
  const std::vector<double> p = pgrid.slice(t_index);
  const DensityMesh& mesh = pgrid.mesh;
  SummaryStats s;
  double mass = 0.0;
  for (int i = 0; i < mesh.n_cells; ++i) {
    mass += p[i] * mesh.h;
    s.mean += p[i] * mesh.h * mesh.center(i);
  }
  s.mean /= mass;
  double var = 0.0;
  for (int i = 0; i < mesh.n_cells; ++i)
    var += p[i] * mesh.h * (mesh.center(i) - s.mean) * (mesh.center(i) - s.mean);
  s.stddev = std::sqrt(std::max(0.0, var / mass));
  return s;
}

}  // namespace slwr
