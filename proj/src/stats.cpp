#include "slwr/stats.hpp"

#include <algorithm>
#include <cmath>

#include "slwr/errors.hpp"

namespace slwr {

double PiecewiseLinearCdf::operator()(double q) const {
  if (q <= x.front()) return 0.0;
  if (q >= x.back()) return 1.0;
  const auto it = std::upper_bound(x.begin(), x.end(), q);
  const std::size_t i = static_cast<std::size_t>(it - x.begin()) - 1;
  const double w = (q - x[i]) / (x[i + 1] - x[i]);
  return F[i] + w * (F[i + 1] - F[i]);
}

PiecewiseLinearCdf cdf_from_histogram(const std::vector<double>& bin_edges,
                                      const std::vector<double>& mass) {
  if (bin_edges.size() != mass.size() + 1)
    throw DomainError("cdf_from_histogram: edges must be one longer than mass");
  PiecewiseLinearCdf cdf;
  cdf.x = bin_edges;
  cdf.F.resize(bin_edges.size());
  cdf.F[0] = 0.0;
  double acc = 0.0, total = 0.0;
  for (double m : mass) total += m;
  if (total <= 0.0) throw DomainError("cdf_from_histogram: zero total mass");
  for (std::size_t i = 0; i < mass.size(); ++i) {
    acc += mass[i] / total;
    cdf.F[i + 1] = std::min(acc, 1.0);
  }
  cdf.F.back() = 1.0;
  return cdf;
}

PiecewiseLinearCdf cdf_from_density(const std::vector<double>& cell_edges,
                                    const std::vector<double>& p) {
  std::vector<double> mass(p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    mass[i] = std::max(0.0, p[i]) * (cell_edges[i + 1] - cell_edges[i]);
  return cdf_from_histogram(cell_edges, mass);
}

namespace {

/// Integral of |d(s)| over [a, b] where d is linear with endpoint values da, db.
double integrate_abs_linear(double a, double b, double da, double db) {
  const double w = b - a;
  if (w <= 0.0) return 0.0;
  if (da * db >= 0.0) return 0.5 * (std::fabs(da) + std::fabs(db)) * w;
  const double root = a + w * da / (da - db);
  return 0.5 * (std::fabs(da) * (root - a) + std::fabs(db) * (b - root));
}

std::vector<double> merged_breakpoints(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pts;
  pts.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(pts));
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

}  // namespace

double wasserstein1(const PiecewiseLinearCdf& a, const PiecewiseLinearCdf& b) {
  const std::vector<double> pts = merged_breakpoints(a.x, b.x);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    total += integrate_abs_linear(pts[i], pts[i + 1], a(pts[i]) - b(pts[i]),
                                  a(pts[i + 1]) - b(pts[i + 1]));
  return total;
}

double wasserstein1_samples(std::vector<double> samples, const PiecewiseLinearCdf& cdf) {
  if (samples.empty()) throw DomainError("wasserstein1_samples: empty sample set");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());

  // breakpoints: sample points and CDF nodes
  std::vector<double> pts = merged_breakpoints(samples, cdf.x);
  double total = 0.0;
  std::size_t k = 0;  // samples consumed (strictly below current point)
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double lo = pts[i], hi = pts[i + 1];
    while (k < samples.size() && samples[k] <= lo) ++k;
    const double fs = static_cast<double>(k) / n;  // empirical CDF on (lo, hi)
    total += integrate_abs_linear(lo, hi, fs - cdf(lo), fs - cdf(hi));
  }
  return total;
}

double ks_distance_samples(std::vector<double> samples, const PiecewiseLinearCdf& cdf) {
  if (samples.empty()) throw DomainError("ks_distance_samples: empty sample set");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double Fc = cdf(samples[i]);
    d = std::max(d, std::fabs(Fc - static_cast<double>(i) / n));
    d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - Fc));
  }
  // the CDF may also pull away from the empirical one between samples
  std::size_t k = 0;
  for (double q : cdf.x) {
    while (k < samples.size() && samples[k] <= q) ++k;
    d = std::max(d, std::fabs(cdf(q) - static_cast<double>(k) / n));
  }
  return d;
}

}  // namespace slwr
