#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dfedcad/rng.hpp"
#include "dfedcad/tensor.hpp"

namespace dfedcad {

struct SyntheticSpec {
  int classes = 4;
  std::size_t dims = 16;
  std::size_t samples = 4000;
  double spread = 0.6;  // per-coordinate noise std
  std::uint64_t seed = 0;
};

/// Isotropic Gaussian blobs. Class c has its mean on the unit circle spanned
/// by the first two coordinates at angle 2*pi*c/C. Every class gets at least
/// one sample.
Dataset gen_synthetic(const SyntheticSpec& spec);

struct ClientShard {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  bool test_empty_flag = false;  // shard too small to hold out a test split

  std::size_t size() const noexcept { return train.size() + test.size(); }
};

struct Partition {
  std::vector<ClientShard> clients;
};

/// Label-skewed split: for each class, client proportions ~ Dir(alpha) and
/// every sample is routed by a categorical draw. Clients left empty receive
/// one sample taken from the current largest shard. Indices land in `train`;
/// call split_train_test to hold out test samples.
Partition dirichlet_partition(std::span<const int> labels, int num_classes,
                              std::size_t num_clients, double alpha, Rng& rng);

/// Per-client stratified hold-out. The test size is round(n * fraction),
/// clamped to [1, n-1] when n >= 2, and distributed over classes by largest
/// remainder so each class is within one sample of its target.
Partition split_train_test(const Partition& partition, std::span<const int> labels,
                           double test_fraction, Rng& rng);

/// Shannon entropy (nats) of a client's label histogram.
double label_entropy(std::span<const std::size_t> indices, std::span<const int> labels,
                     int num_classes);

/// Flat little-endian dump: u32 M, u32 d, u32 C, then M*d f32 features, then M u16 labels.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace dfedcad
