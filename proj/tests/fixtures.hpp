#pragma once

// Random inputs shared by the unit and acceptance tests.

#include <random>

#include "dfedcad/dkm.hpp"
#include "dfedcad/wcp.hpp"

namespace fixture {

/// Structurally valid compressed model with float-exact values. Indices are
/// drawn uniformly, so decoding must not rely on them being nearest-centroid.
inline dfedcad::CompressedModel random_compressed_model(std::uint64_t seed) {
  dfedcad::Rng rng(seed);
  std::uniform_int_distribution<int> layers_d(0, 4), dim_d(1, 40), k_d(2, 300);
  std::normal_distribution<double> val(0.0, 1.0);
  dfedcad::CompressedModel m;
  m.client_id = static_cast<std::uint32_t>(rng());
  m.round = static_cast<std::uint32_t>(rng());
  const int layers = layers_d(rng);
  for (int l = 0; l < layers; ++l) {
    dfedcad::CompressedLayer layer;
    layer.rows = static_cast<std::size_t>(dim_d(rng));
    layer.cols = static_cast<std::size_t>(dim_d(rng));
    const int k = k_d(rng);
    layer.table.values.push_back(0.0);
    for (int j = 1; j < k; ++j)
      layer.table.values.push_back(static_cast<double>(static_cast<float>(val(rng))));
    std::uniform_int_distribution<int> idx(0, k - 1);
    for (std::size_t i = 0; i < layer.weight_count(); ++i)
      layer.indices.indices.push_back(static_cast<std::uint16_t>(idx(rng)));
    std::vector<double> bias(static_cast<std::size_t>(dim_d(rng)));
    for (double& b : bias) b = static_cast<double>(static_cast<float>(val(rng)));
    m.layers.push_back(std::move(layer));
    m.biases.push_back(std::move(bias));
  }
  return m;
}

struct AlignInstance {
  std::vector<double> weights;
  std::vector<double> init;  // student's own WCP table
  std::vector<dfedcad::TeacherLayer> teachers;
  std::vector<double> alpha;
};

/// Student layer of n weights, clustered with k centroids, and `teachers`
/// neighbours whose layers are noisy, shifted copies of the student's.
inline AlignInstance random_align_instance(std::uint64_t seed, std::size_t n = 32,
                                           std::size_t k = 4, std::size_t teachers = 2) {
  dfedcad::Rng rng(seed);
  std::normal_distribution<double> w_d(0.0, 0.5), noise(0.0, 0.2), shift(0.0, 0.1);
  AlignInstance inst;
  inst.weights.resize(n);
  for (double& w : inst.weights) w = w_d(rng);
  const dfedcad::WcpOptions opts{k, 50, 1e-6};
  inst.init = dfedcad::wcp_compress(inst.weights, opts).table.values;
  std::uniform_real_distribution<double> u(0.1, 1.0);
  double z = 0.0;
  for (std::size_t t = 0; t < teachers; ++t) {
    const double s = shift(rng);
    std::vector<double> tw(n);
    for (std::size_t i = 0; i < n; ++i) tw[i] = inst.weights[i] + s + noise(rng);
    const auto r = dfedcad::wcp_compress(tw, opts);
    inst.teachers.push_back(dfedcad::teacher_layer({n, 1, r.table, r.indices}));
    inst.alpha.push_back(u(rng));
    z += inst.alpha.back();
  }
  for (double& a : inst.alpha) a /= z;
  return inst;
}

}  // namespace fixture
