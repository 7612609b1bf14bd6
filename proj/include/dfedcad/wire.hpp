#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dfedcad/tensor.hpp"
#include "dfedcad/wcp.hpp"

namespace dfedcad::wire {

// Little-endian layout, version 1 (clustered):
//   "DCAD" | u8 version | u32 client_id | u32 round | u16 layer_count
//   per layer:  u32 rows | u32 cols | u16 K | K x f32 centroids (first is 0)
//               | ceil(N * ceil(log2 K) / 8) bytes of LSB-first packed indices
//   per layer:  u32 bias_len | bias_len x f32
//
// Version 2 carries dense float weights instead of table + indices and is only
// used by the dense-exchange baseline:
//   per layer:  u32 rows | u32 cols | rows*cols x f32
//   per layer:  u32 bias_len | bias_len x f32

inline constexpr std::uint8_t kMagic[4] = {'D', 'C', 'A', 'D'};
inline constexpr std::uint8_t kVersionClustered = 1;
inline constexpr std::uint8_t kVersionDense = 2;
inline constexpr std::size_t kHeaderBytes = 4 + 1 + 4 + 4 + 2;
inline constexpr std::size_t kLayerMetaBytes = 4 + 4 + 2;

using Bytes = std::vector<std::uint8_t>;

Bytes encode(const CompressedModel& model);
CompressedModel decode(std::span<const std::uint8_t> bytes);

/// Exact encoded length of `model` without encoding it.
std::size_t encoded_size(const CompressedModel& model);

/// Dense model message (baseline). Values are rounded to float.
struct DenseMessage {
  std::uint32_t client_id = 0;
  std::uint32_t round = 0;
  ModelParams model;
};

Bytes encode_dense(const DenseMessage& msg);
DenseMessage decode_dense(std::span<const std::uint8_t> bytes);

/// Version byte of a stream after validating the magic.
std::uint8_t peek_version(std::span<const std::uint8_t> bytes);

/// Packs indices LSB-first with `bits` bits each.
Bytes pack_indices(std::span<const std::uint16_t> indices, std::size_t bits);
std::vector<std::uint16_t> unpack_indices(std::span<const std::uint8_t> packed, std::size_t count,
                                          std::size_t bits);

}  // namespace dfedcad::wire
