#pragma once

#include <vector>

namespace slwr {

/// Continuous piecewise-linear CDF: breakpoints x (strictly increasing) with
/// values F, F.front() == 0 and F.back() == 1.
struct PiecewiseLinearCdf {
  std::vector<double> x;
  std::vector<double> F;

  double operator()(double q) const;
};

/// CDF of a histogram (uniform density within each bin).
PiecewiseLinearCdf cdf_from_histogram(const std::vector<double>& bin_edges,
                                      const std::vector<double>& mass);

/// CDF of a cell-centred density vector on a uniform mesh with spacing h;
/// cell i spans [edges[i], edges[i+1]] and carries mass p[i] * h.
PiecewiseLinearCdf cdf_from_density(const std::vector<double>& cell_edges,
                                    const std::vector<double>& p);

/// Exact L1 distance between two piecewise-linear CDFs (1-D Wasserstein-1),
/// integrated segment by segment on the union of breakpoints.
double wasserstein1(const PiecewiseLinearCdf& a, const PiecewiseLinearCdf& b);

/// Exact Wasserstein-1 between an empirical sample set and a CDF.
/// Sorts a copy of the samples.
double wasserstein1_samples(std::vector<double> samples, const PiecewiseLinearCdf& cdf);

/// Kolmogorov-Smirnov distance between an empirical sample set and a CDF.
double ks_distance_samples(std::vector<double> samples, const PiecewiseLinearCdf& cdf);

}  // namespace slwr
