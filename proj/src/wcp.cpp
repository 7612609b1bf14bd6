#include "dfedcad/wcp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dfedcad/errors.hpp"

namespace dfedcad {

namespace {

double to_float_exact(double v) { return static_cast<double>(static_cast<float>(v)); }

// Linear-interpolated quantile of sorted data at q in [0, 1].
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> initial_centroids(std::span<const double> weights, std::size_t k) {
  std::vector<double> nonzero;
  for (double w : weights)
    if (w != 0.0) nonzero.push_back(w);
  std::vector<double> c(k, 0.0);
  if (nonzero.empty()) {
    for (std::size_t j = 1; j < k; ++j) c[j] = static_cast<double>(j) / static_cast<double>(k - 1);
    return c;
  }
  std::sort(nonzero.begin(), nonzero.end());
  const double m = static_cast<double>(k - 1);
  for (std::size_t j = 1; j < k; ++j)
    c[j] = quantile(nonzero, (static_cast<double>(j) - 0.5) / m);
  return c;
}

double assign(std::span<const double> weights, std::span<const double> centroids,
              std::vector<std::uint16_t>& idx) {
  double err = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    idx[i] = nearest_centroid(weights[i], centroids);
    const double d = weights[i] - centroids[idx[i]];
    err += d * d;
  }
  return err;
}

}  // namespace

std::uint16_t nearest_centroid(double w, std::span<const double> centroids) noexcept {
  std::uint16_t best = 0;
  double best_d = std::abs(w - centroids[0]);
  for (std::size_t j = 1; j < centroids.size(); ++j) {
    const double d = std::abs(w - centroids[j]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint16_t>(j);
    }
  }
  return best;
}

WcpResult wcp_compress(std::span<const double> weights, const WcpOptions& opts) {
  const std::size_t n = weights.size(), k = opts.clusters;
  if (n == 0) throw ConfigError("cannot cluster an empty weight vector");
  if (k < 2) throw ConfigError("WCP needs at least 2 clusters");
  if (k > std::numeric_limits<std::uint16_t>::max()) throw ConfigError("too many clusters");
  if (n < k)
    throw ConfigError("WCP needs at least as many weights (" + std::to_string(n) +
                      ") as clusters (" + std::to_string(k) + ")");
  if (opts.max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (!(opts.tol > 0.0)) throw ConfigError("tol must be positive");
  for (double w : weights)
    if (!std::isfinite(w)) throw NumericError("non-finite weight passed to WCP");

  WcpResult res;
  std::vector<double> c = initial_centroids(weights, k);
  std::vector<std::uint16_t> idx(n);
  std::vector<double> sum(k);
  std::vector<std::size_t> count(k);

  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    res.error_history.push_back(assign(weights, c, idx));
    ++res.iterations;

    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[idx[i]] += weights[i];
      ++count[idx[i]];
    }

    double moved = 0.0;
    std::vector<std::uint8_t> taken(n, 0);
    for (std::size_t j = 1; j < k; ++j) {
      double next = c[j];
      if (count[j] > 0) {
        next = sum[j] / static_cast<double>(count[j]);
      } else {
        // Re-seed an empty cluster at the worst-represented weight.
        double worst = 0.0;
        std::size_t pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (taken[i]) continue;
          const double d = std::abs(weights[i] - c[idx[i]]);
          if (d > worst) {
            worst = d;
            pick = i;
          }
        }
        if (pick < n) {
          taken[pick] = 1;
          next = weights[pick];
        }
      }
      moved = std::max(moved, std::abs(next - c[j]));
      c[j] = next;
    }
    if (moved < opts.tol) break;
  }

  for (std::size_t j = 1; j < k; ++j) c[j] = to_float_exact(c[j]);
  c[0] = 0.0;
  assign(weights, c, idx);

  res.mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.mask[i] = idx[i] != 0;
  res.table.values = std::move(c);
  res.indices.indices = std::move(idx);
  return res;
}

CompressedLayer compress_layer(const Matrix& weight, const WcpOptions& opts, WcpResult* detail) {
  WcpResult r = wcp_compress(weight.data(), opts);
  CompressedLayer layer{weight.rows(), weight.cols(), r.table, r.indices};
  if (detail) *detail = std::move(r);
  return layer;
}

Matrix wcp_decompress(const CompressedLayer& layer) {
  if (layer.indices.size() != layer.weight_count())
    throw CorruptionError("index count does not match layer shape");
  Matrix out(layer.rows, layer.cols);
  auto& d = out.data();
  const auto& vals = layer.table.values;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto j = layer.indices.indices[i];
    if (j >= vals.size())
      throw CorruptionError("centroid index " + std::to_string(j) + " out of range for K=" +
                            std::to_string(vals.size()));
    d[i] = vals[j];
  }
  return out;
}

CompressedModel compress_model(const ModelParams& model, const WcpOptions& opts,
                               std::uint32_t client_id, std::uint32_t round, PruneMask* mask,
                               std::vector<std::size_t>* lloyd_iterations) {
  CompressedModel out;
  out.client_id = client_id;
  out.round = round;
  if (mask) mask->layers.clear();
  if (lloyd_iterations) lloyd_iterations->clear();
  for (const auto& layer : model.layers) {
    WcpResult detail;
    out.layers.push_back(compress_layer(layer.weight, opts, &detail));
    if (mask) mask->layers.push_back(std::move(detail.mask));
    if (lloyd_iterations) lloyd_iterations->push_back(detail.iterations);
    std::vector<double> b(layer.bias.size());
    std::transform(layer.bias.begin(), layer.bias.end(), b.begin(), to_float_exact);
    out.biases.push_back(std::move(b));
  }
  return out;
}

ModelParams decompress_model(const CompressedModel& model) {
  if (model.biases.size() != model.layers.size())
    throw CorruptionError("bias vector count does not match layer count");
  ModelParams out;
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    out.layers.push_back({wcp_decompress(model.layers[l]), model.biases[l]});
  return out;
}

std::size_t index_bits(std::size_t clusters) {
  if (clusters < 2) throw ConfigError("index_bits needs K >= 2");
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < clusters) ++bits;
  return bits;
}

std::uint64_t payload_bits(std::uint64_t weights, std::uint64_t clusters,
                           std::uint64_t bits_per_value) {
  return clusters * bits_per_value + weights * index_bits(clusters);
}

}  // namespace dfedcad
