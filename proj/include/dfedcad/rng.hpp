#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dfedcad {

using Rng = std::mt19937_64;

/// Purposes for which independent random streams are derived from the master
/// seed. The numeric values are part of the reproducibility contract.
enum class Stream : std::uint64_t {
  kData = 1,
  kPartition = 2,
  kSplit = 3,
  kInit = 4,
  kGraph = 5,
  kBatches = 6,
  kFrequencies = 7,
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Derives a child seed from `master` and a path of coordinates
/// (stream, client id, round, ...). Every distinct path yields an
/// independent-looking seed, so results never depend on the order in which
/// streams are consumed.
std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                          std::initializer_list<std::uint64_t> path = {}) noexcept;

inline Rng make_rng(std::uint64_t master, Stream stream,
                    std::initializer_list<std::uint64_t> path = {}) {
  return Rng(derive_seed(master, stream, path));
}

}  // namespace dfedcad
