#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "dfedcad/wcp.hpp"

namespace dfedcad {

/// Scalar Gaussian frequencies t ~ N(0, sigma^2), regenerable from the seed.
struct FrequencySet {
  std::vector<double> samples;
  double sigma = 1.0;
  std::uint64_t seed = 0;

  static FrequencySet sample(std::size_t n, double sigma, std::uint64_t seed);
};

/// Empirical characteristic function of a centroid set at frequency t:
/// (1/K) * sum_k exp(i t mu_k).
std::complex<double> char_fn(std::span<const double> centroids, double t);

/// Monte Carlo estimate of E_t |Phi_A(t) - Phi_B(t)|^2. Lies in [0, 4].
double cfd_layer(std::span<const double> a, std::span<const double> b, const FrequencySet& freqs);

inline double cfd_layer(const CentroidTable& a, const CentroidTable& b, const FrequencySet& freqs) {
  return cfd_layer(a.values, b.values, freqs);
}

/// Per-frequency terms |Phi_A(t) - Phi_B(t)|^2, for standard-error estimates.
std::vector<double> cfd_terms(std::span<const double> a, std::span<const double> b,
                              const FrequencySet& freqs);

/// Unweighted mean of the per-layer distances over all clustered layers.
double cfd_model(const CompressedModel& a, const CompressedModel& b, const FrequencySet& freqs);

/// Teacher importance: min-max normalise the distances, then softmax(-s).
/// Closer teachers get more weight; the result sums to one.
std::vector<double> teacher_weights(std::span<const double> cfds, double eps = 1e-8);

}  // namespace dfedcad
