#pragma once

#include <cstdint>

#include "dfedcad/tensor.hpp"

namespace dfedcad::flops {

// Counting rule used for the per-round computation cost:
//   forward   2 * (unmasked weights) per sample
//   backward  twice the forward cost
//   DKM       2 * N * K per E/M pair, T pairs per alignment evaluation
//   matching  K_teacher * K_student * (N + 3) per teacher
//   WCP       2 * N * K per Lloyd iteration
// Biases, activations and the optimizer step are not counted.

/// 2 * kept weights; pass nullptr for a dense model.
std::uint64_t forward_per_sample(const ModelParams& model, const PruneMask* mask);

/// Forward plus backward over `samples` samples.
std::uint64_t training(const ModelParams& model, const PruneMask* mask, std::uint64_t samples);

std::uint64_t dkm(std::uint64_t weights, std::uint64_t clusters, std::uint64_t iterations);

std::uint64_t matching(std::uint64_t teacher_clusters, std::uint64_t student_clusters,
                       std::uint64_t weights);

std::uint64_t wcp(std::uint64_t weights, std::uint64_t clusters, std::uint64_t lloyd_iterations);

}  // namespace dfedcad::flops
