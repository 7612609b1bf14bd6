#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dfedcad/tensor.hpp"

namespace dfedcad {

/// K centroid values for one layer. values[0] is the pruning centroid and is
/// always exactly zero. Values produced by wcp_compress are exactly
/// representable as float so they survive the wire unchanged.
struct CentroidTable {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const CentroidTable&) const = default;
};

/// Per-weight index into a CentroidTable.
struct IndexSequence {
  std::vector<std::uint16_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
  bool operator==(const IndexSequence&) const = default;
};

struct CompressedLayer {
  std::size_t rows = 0;
  std::size_t cols = 0;
  CentroidTable table;
  IndexSequence indices;

  std::size_t weight_count() const noexcept { return rows * cols; }
  bool operator==(const CompressedLayer&) const = default;
};

/// What a client sends to its peers: clustered weights plus raw biases.
struct CompressedModel {
  std::uint32_t client_id = 0;
  std::uint32_t round = 0;
  std::vector<CompressedLayer> layers;
  std::vector<std::vector<double>> biases;

  bool operator==(const CompressedModel&) const = default;
};

struct WcpOptions {
  std::size_t clusters = 16;
  std::size_t max_iters = 50;
  double tol = 1e-6;
};

struct WcpResult {
  CentroidTable table;
  IndexSequence indices;
  std::vector<std::uint8_t> mask;  // 0 where the weight maps to the zero centroid
  std::size_t iterations = 0;
  /// Within-cluster squared error after each Lloyd assignment step (before
  /// the final rounding of centroids to float).
  std::vector<double> error_history;
};

/// Pruned Lloyd clustering of a flat weight vector. Centroid 0 is pinned at
/// zero; the others start at evenly spaced quantiles of the nonzero weights
/// and move to the mean of their members. Stops once no centroid moves by
/// `tol` or after `max_iters` iterations.
WcpResult wcp_compress(std::span<const double> weights, const WcpOptions& opts = {});

/// Index of the nearest centroid; ties resolve to the lowest index.
std::uint16_t nearest_centroid(double w, std::span<const double> centroids) noexcept;

CompressedLayer compress_layer(const Matrix& weight, const WcpOptions& opts, WcpResult* detail = nullptr);

/// weight[i] = table.values[indices[i]], with the original shape.
Matrix wcp_decompress(const CompressedLayer& layer);

/// Clusters every layer of `model`. Biases are copied after rounding to float.
/// Writes the resulting keep-mask to `mask` and the Lloyd iteration count of
/// each layer to `lloyd_iterations` when given.
CompressedModel compress_model(const ModelParams& model, const WcpOptions& opts,
                               std::uint32_t client_id, std::uint32_t round,
                               PruneMask* mask = nullptr,
                               std::vector<std::size_t>* lloyd_iterations = nullptr);

/// Rebuilds dense parameters from a compressed model.
ModelParams decompress_model(const CompressedModel& model);

/// ceil(log2(K)) for K >= 2.
std::size_t index_bits(std::size_t clusters);

/// Table plus index payload: K*B + N*ceil(log2 K) bits.
std::uint64_t payload_bits(std::uint64_t weights, std::uint64_t clusters, std::uint64_t bits_per_value);

}  // namespace dfedcad
