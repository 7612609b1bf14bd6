#include "dfedcad/dkm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dfedcad/errors.hpp"

namespace dfedcad {

SoftAssignment e_step(std::span<const double> weights, std::span<const double> centroids,
                      double temperature) {
  if (centroids.empty()) throw ConfigError("E-step needs at least one centroid");
  const std::size_t n = weights.size(), k = centroids.size();
  SoftAssignment a(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = a.row(i);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) {
      const double d = weights[i] - centroids[j];
      row[j] = -temperature * d * d;
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return a;
}

std::vector<double> m_step(std::span<const double> weights, const SoftAssignment& assignment,
                           double eps) {
  if (assignment.rows() != weights.size()) throw ShapeError("M-step assignment/weight mismatch");
  const std::size_t k = assignment.cols();
  std::vector<double> num(k, 0.0), den(k, 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    auto row = assignment.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      num[j] += row[j] * weights[i];
      den[j] += row[j];
    }
  }
  for (std::size_t j = 0; j < k; ++j) num[j] /= den[j] + eps;
  return num;
}

StudentClustering dkm_cluster(std::span<const double> weights, std::span<const double> init,
                              std::size_t iterations, double temperature, double eps) {
  if (iterations < 1) throw ConfigError("DKM needs at least one iteration");
  StudentClustering out;
  out.centroids.assign(init.begin(), init.end());
  for (std::size_t it = 0; it < iterations; ++it) {
    out.assignment = e_step(weights, out.centroids, temperature);
    out.centroids = m_step(weights, out.assignment, eps);
  }
  out.iterations_run = iterations;
  return out;
}

SoftAssignment teacher_assignment(const CompressedLayer& layer) {
  const std::size_t k = layer.table.size();
  SoftAssignment a(layer.indices.size(), k);
  for (std::size_t i = 0; i < layer.indices.size(); ++i) {
    const auto j = layer.indices.indices[i];
    if (j >= k) throw CorruptionError("centroid index out of range");
    a(i, j) = 1.0;
  }
  return a;
}

TeacherLayer teacher_layer(const CompressedLayer& layer) {
  return {layer.table.values, teacher_assignment(layer)};
}

namespace {

struct MatchTerms {
  Matrix num, den, jac, sim, raw, w;
  std::vector<double> row_sum;
};

MatchTerms compute_match(const SoftAssignment& at, std::span<const double> ct,
                         const SoftAssignment& as, std::span<const double> cs, double alpha_mix,
                         double beta_dist, double eps) {
  if (at.rows() != as.rows())
    throw ShapeError("teacher and student assignments cover different weight counts");
  if (at.cols() != ct.size() || as.cols() != cs.size())
    throw ShapeError("assignment width does not match centroid count");
  const std::size_t n = at.rows(), kt = ct.size(), ks = cs.size();
  MatchTerms m{Matrix(kt, ks), Matrix(kt, ks), Matrix(kt, ks), Matrix(kt, ks),
               Matrix(kt, ks), Matrix(kt, ks), std::vector<double>(kt, 0.0)};
  for (std::size_t r = 0; r < n; ++r) {
    auto trow = at.row(r);
    auto srow = as.row(r);
    for (std::size_t i = 0; i < kt; ++i) {
      const double t = trow[i];
      for (std::size_t j = 0; j < ks; ++j) {
        const double s = srow[j];
        m.num(i, j) += std::min(t, s);
        m.den(i, j) += std::max(t, s);
      }
    }
  }
  for (std::size_t i = 0; i < kt; ++i) {
    for (std::size_t j = 0; j < ks; ++j) {
      m.den(i, j) += eps;
      m.jac(i, j) = m.num(i, j) / m.den(i, j);
      const double d = ct[i] - cs[j];
      m.sim(i, j) = std::exp(-beta_dist * d * d);
      m.raw(i, j) =
          std::pow(m.jac(i, j) + eps, alpha_mix) * std::pow(m.sim(i, j) + eps, 1.0 - alpha_mix);
      m.row_sum[i] += m.raw(i, j);
    }
    for (std::size_t j = 0; j < ks; ++j) m.w(i, j) = m.raw(i, j) / m.row_sum[i];
  }
  return m;
}

void check_options(const DkmOptions& o) {
  if (o.iterations < 1) throw ConfigError("DKM iterations must be >= 1");
  if (o.alpha_mix < 0.0 || o.alpha_mix > 1.0) throw ConfigError("alpha_mix must be in [0, 1]");
  if (!(o.beta_dist > 0.0)) throw ConfigError("beta_dist must be positive");
  if (!(o.eps > 0.0)) throw ConfigError("eps must be positive");
}

// Everything the reverse pass needs from the forward pass.
struct AlignForward {
  std::vector<std::vector<double>> centroids;  // C^0 .. C^T
  std::vector<SoftAssignment> assignments;     // A^1 .. A^T
  std::vector<MatchTerms> matches;
  std::vector<double> target;
  std::vector<double> residual;  // w - A_S C~
  double loss = 0.0;
};

AlignForward align_forward(std::span<const double> w, std::span<const double> init,
                           std::span<const TeacherLayer> teachers, std::span<const double> alpha,
                           const DkmOptions& opts) {
  check_options(opts);
  if (teachers.size() != alpha.size())
    throw ShapeError("teacher count does not match teacher weight count");
  if (teachers.empty()) throw ConfigError("alignment needs at least one teacher");
  if (w.empty()) throw ShapeError("alignment on an empty layer");
  const std::size_t n = w.size(), ks = init.size();
  if (ks == 0) throw ConfigError("student needs at least one centroid");

  AlignForward f;
  f.centroids.emplace_back(init.begin(), init.end());
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    f.assignments.push_back(e_step(w, f.centroids.back(), opts.temperature));
    f.centroids.push_back(m_step(w, f.assignments.back(), opts.eps));
  }
  const SoftAssignment& as = f.assignments.back();
  const std::vector<double>& cs = f.centroids.back();

  f.target.assign(ks, 0.0);
  for (std::size_t t = 0; t < teachers.size(); ++t) {
    f.matches.push_back(compute_match(teachers[t].assignment, teachers[t].centroids, as, cs,
                                      opts.alpha_mix, opts.beta_dist, opts.eps));
    const auto& mw = f.matches.back().w;
    const auto& ct = teachers[t].centroids;
    for (std::size_t i = 0; i < ct.size(); ++i)
      for (std::size_t j = 0; j < ks; ++j) f.target[j] += alpha[t] * mw(i, j) * ct[i];
  }

  f.residual.resize(n);
  double sq = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = as.row(r);
    double recon = 0.0;
    for (std::size_t j = 0; j < ks; ++j) recon += row[j] * f.target[j];
    f.residual[r] = w[r] - recon;
    sq += f.residual[r] * f.residual[r];
  }
  f.loss = sq / static_cast<double>(n);
  return f;
}

}  // namespace

MatchWeights match_weights(const SoftAssignment& teacher_assign,
                           std::span<const double> teacher_centroids,
                           const SoftAssignment& student_assign,
                           std::span<const double> student_centroids, double alpha_mix,
                           double beta_dist, double eps) {
  if (alpha_mix < 0.0 || alpha_mix > 1.0) throw ConfigError("alpha_mix must be in [0, 1]");
  if (!(beta_dist > 0.0)) throw ConfigError("beta_dist must be positive");
  return compute_match(teacher_assign, teacher_centroids, student_assign, student_centroids,
                       alpha_mix, beta_dist, eps)
      .w;
}

std::vector<double> target_centroids(std::span<const MatchWeights> matches,
                                     std::span<const std::vector<double>> teacher_centroids,
                                     std::span<const double> alpha) {
  if (matches.size() != teacher_centroids.size() || matches.size() != alpha.size())
    throw ShapeError("target centroids: teacher list lengths differ");
  if (matches.empty()) throw ConfigError("target centroids need at least one teacher");
  const std::size_t ks = matches.front().cols();
  std::vector<double> out(ks, 0.0);
  for (std::size_t t = 0; t < matches.size(); ++t) {
    const auto& w = matches[t];
    const auto& ct = teacher_centroids[t];
    if (w.cols() != ks || w.rows() != ct.size())
      throw ShapeError("teacher " + std::to_string(t) + " cluster count mismatch");
    for (std::size_t i = 0; i < ct.size(); ++i)
      for (std::size_t j = 0; j < ks; ++j) out[j] += alpha[t] * w(i, j) * ct[i];
  }
  return out;
}

double align_loss(std::span<const double> weights, std::span<const double> student_init,
                  std::span<const TeacherLayer> teachers, std::span<const double> alpha,
                  const DkmOptions& opts) {
  return align_forward(weights, student_init, teachers, alpha, opts).loss;
}

AlignResult align_loss_and_grad(std::span<const double> weights,
                                std::span<const double> student_init,
                                std::span<const TeacherLayer> teachers,
                                std::span<const double> alpha, const DkmOptions& opts) {
  const AlignForward f = align_forward(weights, student_init, teachers, alpha, opts);
  const std::size_t n = weights.size(), ks = student_init.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double eps = opts.eps;

  AlignResult res;
  res.loss = f.loss;
  res.grad.assign(n, 0.0);

  // Loss -> reconstruction.
  const SoftAssignment& as = f.assignments.back();
  Matrix g_as(n, ks);
  std::vector<double> g_target(ks, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double g_recon = -2.0 * inv_n * f.residual[r];
    res.grad[r] += 2.0 * inv_n * f.residual[r];
    auto row = as.row(r);
    auto grow = g_as.row(r);
    for (std::size_t j = 0; j < ks; ++j) {
      grow[j] += g_recon * f.target[j];
      g_target[j] += g_recon * row[j];
    }
  }

  // Target centroids -> match weights -> (Jaccard, similarity) -> (A_S, C_S).
  const std::vector<double>& cs = f.centroids.back();
  std::vector<double> g_cs(ks, 0.0);
  for (std::size_t t = 0; t < teachers.size(); ++t) {
    const auto& m = f.matches[t];
    const auto& ct = teachers[t].centroids;
    const auto& at = teachers[t].assignment;
    const std::size_t kt = ct.size();
    Matrix g_num(kt, ks), g_den(kt, ks);
    for (std::size_t i = 0; i < kt; ++i) {
      // Row normalisation w = raw / sum(raw).
      double dot = 0.0;
      std::vector<double> g_w(ks);
      for (std::size_t j = 0; j < ks; ++j) {
        g_w[j] = alpha[t] * ct[i] * g_target[j];
        dot += g_w[j] * m.w(i, j);
      }
      for (std::size_t j = 0; j < ks; ++j) {
        const double g_raw = (g_w[j] - dot) / m.row_sum[i];
        const double g_jac = g_raw * opts.alpha_mix * m.raw(i, j) / (m.jac(i, j) + eps);
        const double g_sim =
            g_raw * (1.0 - opts.alpha_mix) * m.raw(i, j) / (m.sim(i, j) + eps);
        // d sim / d cs_j = 2 beta sim (ct_i - cs_j)
        g_cs[j] += g_sim * 2.0 * opts.beta_dist * m.sim(i, j) * (ct[i] - cs[j]);
        g_num(i, j) = g_jac / m.den(i, j);
        g_den(i, j) = -g_jac * m.num(i, j) / (m.den(i, j) * m.den(i, j));
      }
    }
    // min(t, s) passes gradient to s when s < t; max(t, s) when s >= t.
    for (std::size_t r = 0; r < n; ++r) {
      auto trow = at.row(r);
      auto srow = as.row(r);
      auto grow = g_as.row(r);
      for (std::size_t i = 0; i < kt; ++i) {
        const double tv = trow[i];
        for (std::size_t j = 0; j < ks; ++j)
          grow[j] += srow[j] < tv ? g_num(i, j) : g_den(i, j);
      }
    }
  }

  // Unrolled E/M iterations, last to first. C^0 is a constant.
  std::vector<double> g_c = std::move(g_cs);
  Matrix g_a = std::move(g_as);
  for (std::size_t it = opts.iterations; it-- > 0;) {
    const SoftAssignment& a = f.assignments[it];
    const std::vector<double>& c_prev = f.centroids[it];

    // M-step: c_k = P_k / (Q_k + eps).
    std::vector<double> p(ks, 0.0), q(ks, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = a.row(r);
      for (std::size_t k = 0; k < ks; ++k) {
        p[k] += row[k] * weights[r];
        q[k] += row[k];
      }
    }
    std::vector<double> g_p(ks), g_q(ks);
    for (std::size_t k = 0; k < ks; ++k) {
      const double denom = q[k] + eps;
      g_p[k] = g_c[k] / denom;
      g_q[k] = -g_c[k] * p[k] / (denom * denom);
    }
    std::vector<double> g_c_prev(ks, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = a.row(r);
      auto grow = g_a.row(r);
      double gw = 0.0;
      for (std::size_t k = 0; k < ks; ++k) {
        grow[k] += g_p[k] * weights[r] + g_q[k];
        gw += g_p[k] * row[k];
      }
      // E-step softmax over z_k = -temperature * (w - c_k)^2.
      double dot = 0.0;
      for (std::size_t k = 0; k < ks; ++k) dot += grow[k] * row[k];
      for (std::size_t k = 0; k < ks; ++k) {
        const double g_z = row[k] * (grow[k] - dot);
        const double diff = weights[r] - c_prev[k];
        gw += g_z * -2.0 * opts.temperature * diff;
        g_c_prev[k] += g_z * 2.0 * opts.temperature * diff;
      }
      res.grad[r] += gw;
    }
    g_c = std::move(g_c_prev);
    if (it > 0) g_a = Matrix(n, ks);
  }
  return res;
}

}  // namespace dfedcad
