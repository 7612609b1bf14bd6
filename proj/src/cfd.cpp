#include "dfedcad/cfd.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "dfedcad/errors.hpp"

namespace dfedcad {

FrequencySet FrequencySet::sample(std::size_t n, double sigma, std::uint64_t seed) {
  if (n == 0) throw ConfigError("frequency set needs at least one sample");
  if (!(sigma > 0.0)) throw ConfigError("frequency sigma must be positive");
  FrequencySet f;
  f.sigma = sigma;
  f.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  f.samples.resize(n);
  for (auto& t : f.samples) t = dist(rng);
  return f;
}

std::complex<double> char_fn(std::span<const double> centroids, double t) {
  if (centroids.empty()) throw ConfigError("characteristic function of an empty centroid set");
  double re = 0.0, im = 0.0;
  for (double mu : centroids) {
    re += std::cos(t * mu);
    im += std::sin(t * mu);
  }
  const double k = static_cast<double>(centroids.size());
  return {re / k, im / k};
}

std::vector<double> cfd_terms(std::span<const double> a, std::span<const double> b,
                              const FrequencySet& freqs) {
  std::vector<double> out;
  out.reserve(freqs.samples.size());
  for (double t : freqs.samples) out.push_back(std::norm(char_fn(a, t) - char_fn(b, t)));
  return out;
}

double cfd_layer(std::span<const double> a, std::span<const double> b, const FrequencySet& freqs) {
  if (freqs.samples.empty()) throw ConfigError("empty frequency set");
  double sum = 0.0;
  for (double t : freqs.samples) sum += std::norm(char_fn(a, t) - char_fn(b, t));
  return sum / static_cast<double>(freqs.samples.size());
}

double cfd_model(const CompressedModel& a, const CompressedModel& b, const FrequencySet& freqs) {
  if (a.layers.size() != b.layers.size())
    throw ProtocolError("CFD between models with different layer counts");
  if (a.layers.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    sum += cfd_layer(a.layers[l].table, b.layers[l].table, freqs);
  return sum / static_cast<double>(a.layers.size());
}

std::vector<double> teacher_weights(std::span<const double> cfds, double eps) {
  if (cfds.empty()) throw ConfigError("teacher weights need at least one teacher");
  const auto [lo, hi] = std::minmax_element(cfds.begin(), cfds.end());
  const double min = *lo, range = *hi - *lo + eps;
  std::vector<double> alpha(cfds.size());
  double z = 0.0;
  for (std::size_t j = 0; j < cfds.size(); ++j) {
    if (!(cfds[j] >= 0.0)) throw ConfigError("CFD values must be non-negative");
    alpha[j] = std::exp(-(cfds[j] - min) / range);
    z += alpha[j];
  }
  for (double& a : alpha) a /= z;
  return alpha;
}

}  // namespace dfedcad
