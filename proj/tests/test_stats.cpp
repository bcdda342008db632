#include <cmath>
#include <vector>

#include <doctest.h>

#include "slwr/rng.hpp"
#include "slwr/stats.hpp"

using namespace slwr;

TEST_CASE("wasserstein1 between shifted uniform histograms equals the shift") {
  // two unit-mass bins offset by 0.25: W1 = |shift|
  const PiecewiseLinearCdf a = cdf_from_histogram({0.0, 0.5}, {1.0});
  const PiecewiseLinearCdf b = cdf_from_histogram({0.25, 0.75}, {1.0});
  CHECK(wasserstein1(a, b) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(wasserstein1(a, a) == doctest::Approx(0.0));
}

TEST_CASE("wasserstein1 of samples against their own empirical histogram is small") {
  rng::CounterRng stream(5, 0);
  std::vector<double> samples(4000);
  for (auto& s : samples) s = 0.2 + 0.6 * stream.next_uniform();
  const int n_bins = 40;
  std::vector<double> edges(n_bins + 1), mass(n_bins, 0.0);
  for (int i = 0; i <= n_bins; ++i) edges[i] = i / static_cast<double>(n_bins);
  for (double s : samples) mass[std::min<int>(static_cast<int>(s * n_bins), n_bins - 1)] += 1.0;
  const PiecewiseLinearCdf hist = cdf_from_histogram(edges, mass);
  // binning error is at most half a bin width
  CHECK(wasserstein1_samples(samples, hist) < 0.5 / n_bins);
}

TEST_CASE("wasserstein1_samples exact on a two-point case") {
  // one sample at 0, uniform density on [0,1]: integral of |1[x>0] - x| = 1/2
  const PiecewiseLinearCdf uniform = cdf_from_histogram({0.0, 1.0}, {1.0});
  CHECK(wasserstein1_samples({0.0}, uniform) == doctest::Approx(0.5).epsilon(1e-12));
  // sample at the median: two triangles of area 1/8 each
  CHECK(wasserstein1_samples({0.5}, uniform) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("ks distance for a point mass against uniform") {
  const PiecewiseLinearCdf uniform = cdf_from_histogram({0.0, 1.0}, {1.0});
  CHECK(ks_distance_samples({0.5}, uniform) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ks_distance_samples({0.0}, uniform) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ks distance of stratified samples from the same density is tiny") {
  const int n = 10000;
  std::vector<double> samples(n);
  for (int i = 0; i < n; ++i) samples[i] = (i + 0.5) / n;
  const PiecewiseLinearCdf uniform = cdf_from_histogram({0.0, 1.0}, {1.0});
  CHECK(ks_distance_samples(samples, uniform) <= 0.5 / n + 1e-12);
}

TEST_CASE("cdf evaluation clamps outside the support") {
  const PiecewiseLinearCdf cdf = cdf_from_histogram({0.2, 0.8}, {1.0});
  CHECK(cdf(0.0) == 0.0);
  CHECK(cdf(1.0) == 1.0);
  CHECK(cdf(0.5) == doctest::Approx(0.5).epsilon(1e-12));
}
