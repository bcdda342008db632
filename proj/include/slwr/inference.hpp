#pragma once

#include <functional>
#include <vector>

#include "slwr/fpe.hpp"
#include "slwr/model.hpp"

namespace slwr {

/// One-dimensional score rho_hat -> d/drho log p at a fixed (x, t).
using ScoreFunction = std::function<double(double)>;

/// Gauss-Legendre nodes and weights on [a, b], found by Newton iteration on
/// the Legendre recurrence.
void gauss_legendre(int n, double a, double b, std::vector<double>& nodes,
                    std::vector<double>& weights);

/// Density recovered from a score by cumulative quadrature:
/// log p(rho_hat) = int_{rho_*}^{rho_hat} s + C with C fixed by unit mass.
class RecoveredDensity {
 public:
  RecoveredDensity(ScoreFunction score, double rho_max, double x, double t,
                   double rho_star, int n_q = 100);

  const std::vector<double>& quad_nodes() const { return nodes_; }
  const std::vector<double>& quad_weights() const { return weights_; }
  const std::vector<double>& log_p() const { return log_p_; }
  double log_norm() const { return log_norm_; }
  double x() const { return x_; }
  double t() const { return t_; }
  double rho_max() const { return rho_max_; }

  /// Normalised density at an arbitrary point, by chaining the cumulative
  /// integral from the nearest quadrature node.
  double density_at(double rho_hat) const;
  /// Quadrature mass over the nodes; 1 within 1e-8 by construction.
  double quadrature_mass() const;
  /// Mass of [lo, hi] with node-interval splitting at the endpoints.
  double interval_mass(double lo, double hi) const;

 private:
  double prefix_at(double rho_hat) const;  // unnormalised cumulative integral

  ScoreFunction score_;
  double rho_max_, x_, t_, rho_star_;
  std::vector<double> nodes_, weights_;
  std::vector<double> prefix_;  // cumulative integral anchored at the first node
  std::vector<double> log_p_;  // normalised log-density at the nodes
  double offset_ = 0.0;        // prefix value at rho_star
  double log_norm_ = 0.0;      // log of the quadrature normaliser
};

RecoveredDensity recover_density(ScoreFunction score, double rho_max, double x, double t,
                                 double rho_star, int n_q = 100);

struct SummaryStats {
  double mean = 0.0;
  double stddev = 0.0;
  double ci_lo = 0.0;  // 2.5% quantile
  double ci_hi = 0.0;  // 97.5% quantile
};

/// Quadrature moments plus credible-interval endpoints from monotone
/// piecewise-linear inversion of the CDF on a refined node chain.
SummaryStats summary_stats(const RecoveredDensity& d);

/// P(rho > rho_c) by tail quadrature.
double congestion_risk(const RecoveredDensity& d, double rho_c);

/// Flow distribution p(q) = sum over preimages p(rho_j) / |f'(rho_j)|.
struct FlowDensity {
  std::vector<double> q_nodes;
  std::vector<double> p_q;
  std::vector<double> weights;  // quadrature weights in q (singularity absorbed)
  std::vector<std::vector<double>> preimages;  // density preimages per node
  double q_capacity = 0.0;
  double excised_mass = 0.0;  // mass dropped by the capacity-point excision

  double quadrature_mass() const;
};

/// Pushes the recovered density through a unimodal concave flux. The
/// capacity point (f' = 0) is excised over a density-neighbourhood of
/// measure <= 1e-4 rho_max and the result renormalised.
FlowDensity flow_pushforward(const RecoveredDensity& d, const FluxFunction& flux,
                             int n_q_flow = 200);

/// Score table of an FPE solution slice as a ScoreFunction (linear
/// interpolation, constant extension outside the unmasked band).
ScoreFunction grid_score_function(const DensityGrid& pgrid, int t_index);

/// Mean / stddev directly from a density-grid slice, for consistency checks.
SummaryStats grid_moments(const DensityGrid& pgrid, int t_index);

}  // namespace slwr
