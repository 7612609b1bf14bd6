#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dfedcad/tensor.hpp"
#include "dfedcad/wcp.hpp"

namespace dfedcad {

/// N x K row-stochastic matrix: row n is weight n's distribution over centroids.
using SoftAssignment = Matrix;

/// K_teacher x K_student row-normalised matching weights.
using MatchWeights = Matrix;

struct DkmOptions {
  std::size_t iterations = 5;  // fixed E/M unroll, no early stopping
  double alpha_mix = 0.5;      // Jaccard vs. distance emphasis
  double beta_dist = 1.0;      // centroid-distance sensitivity
  double eps = 1e-8;
  double temperature = 1.0;    // multiplies squared distances in the E-step
};

/// A[n,k] = softmax_k(-temperature * (w[n] - c[k])^2).
SoftAssignment e_step(std::span<const double> weights, std::span<const double> centroids,
                      double temperature = 1.0);

/// c[k] = sum_n A[n,k] w[n] / (sum_n A[n,k] + eps).
std::vector<double> m_step(std::span<const double> weights, const SoftAssignment& assignment,
                           double eps = 1e-8);

struct StudentClustering {
  std::vector<double> centroids;
  SoftAssignment assignment;  // from the last E-step
  std::size_t iterations_run = 0;
};

/// Exactly `iterations` E/M alternations starting from `init`.
StudentClustering dkm_cluster(std::span<const double> weights, std::span<const double> init,
                              std::size_t iterations, double temperature = 1.0, double eps = 1e-8);

/// One-hot assignment implied by a compressed layer's index sequence.
SoftAssignment teacher_assignment(const CompressedLayer& layer);

/// Hybrid matching between teacher clusters (rows) and student clusters
/// (columns): soft Jaccard overlap of assignments combined with a Gaussian
/// kernel on centroid distance through a weighted geometric mean, then
/// row-normalised.
MatchWeights match_weights(const SoftAssignment& teacher_assign,
                           std::span<const double> teacher_centroids,
                           const SoftAssignment& student_assign,
                           std::span<const double> student_centroids, double alpha_mix,
                           double beta_dist, double eps = 1e-8);

/// C~[j] = sum_t alpha[t] sum_i w_t[i,j] * C_t[i].
std::vector<double> target_centroids(std::span<const MatchWeights> matches,
                                     std::span<const std::vector<double>> teacher_centroids,
                                     std::span<const double> alpha);

/// A neighbour's clustering of one layer as seen by the student.
struct TeacherLayer {
  std::vector<double> centroids;
  SoftAssignment assignment;
};

TeacherLayer teacher_layer(const CompressedLayer& layer);

struct AlignResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d weights
};

/// Alignment loss (1/N) * ||w - A_S C~||^2 for one layer, where A_S comes from
/// clustering `weights` with DKM from `student_init`, and its exact gradient
/// with respect to `weights` through the whole unrolled pipeline (E/M
/// iterations, matching, target centroids). `student_init` and the teachers
/// are treated as constants.
AlignResult align_loss_and_grad(std::span<const double> weights,
                                std::span<const double> student_init,
                                std::span<const TeacherLayer> teachers,
                                std::span<const double> alpha, const DkmOptions& opts);

/// Forward pass only.
double align_loss(std::span<const double> weights, std::span<const double> student_init,
                  std::span<const TeacherLayer> teachers, std::span<const double> alpha,
                  const DkmOptions& opts);

}  // namespace dfedcad
