#include "dfedcad/flops.hpp"

namespace dfedcad::flops {

std::uint64_t forward_per_sample(const ModelParams& model, const PruneMask* mask) {
  std::uint64_t kept = 0;
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    kept += mask ? mask->kept(l) : model.layers[l].weight.size();
  return 2 * kept;
}

std::uint64_t training(const ModelParams& model, const PruneMask* mask, std::uint64_t samples) {
  return 3 * forward_per_sample(model, mask) * samples;
}

std::uint64_t dkm(std::uint64_t weights, std::uint64_t clusters, std::uint64_t iterations) {
  return 2 * weights * clusters * iterations;
}

std::uint64_t matching(std::uint64_t teacher_clusters, std::uint64_t student_clusters,
                       std::uint64_t weights) {
  return teacher_clusters * student_clusters * (weights + 3);
}

std::uint64_t wcp(std::uint64_t weights, std::uint64_t clusters, std::uint64_t lloyd_iterations) {
  return 2 * weights * clusters * lloyd_iterations;
}

}  // namespace dfedcad::flops
