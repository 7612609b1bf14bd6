#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dfedcad/dkm.hpp"
#include "dfedcad/errors.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dfedcad;

namespace {

void check_row_stochastic(const Matrix& m, double tol = 1e-9) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= tol);
  }
}

SoftAssignment one_hot(std::vector<int> idx, std::size_t k) {
  SoftAssignment a(idx.size(), k);
  for (std::size_t i = 0; i < idx.size(); ++i) a(i, static_cast<std::size_t>(idx[i])) = 1.0;
  return a;
}

double grad_fd_error(const fixture::AlignInstance& inst, const DkmOptions& opts, double h) {
  const auto res = align_loss_and_grad(inst.weights, inst.init, inst.teachers, inst.alpha, opts);
  auto f = [&](std::span<const double> w) {
    return align_loss(w, inst.init, inst.teachers, inst.alpha, opts);
  };
  const auto fd = oracle::finite_diff(f, inst.weights, h);
  return oracle::max_rel_error(res.grad, fd);
}

}  // namespace

TEST_CASE("E-step") {
  SUBCASE("identical centroids split evenly") {
    const auto a = e_step(std::vector<double>{-2.0, 0.3, 5.0}, std::vector<double>{0.7, 0.7});
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(a(r, 0) == doctest::Approx(0.5).epsilon(1e-15));
      CHECK(a(r, 1) == doctest::Approx(0.5).epsilon(1e-15));
    }
  }
  SUBCASE("softmax of negative squared distance") {
    const auto a = e_step(std::vector<double>{0.0}, std::vector<double>{0.0, 1.0});
    CHECK(a(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
    CHECK(a(0, 1) == doctest::Approx(0.2689414213699951).epsilon(1e-14));
  }
  SUBCASE("far centroids lose their mass") {
    double prev = 1.0;
    for (double far : {1.0, 3.0, 10.0, 100.0}) {
      const auto a = e_step(std::vector<double>{0.0}, std::vector<double>{0.0, far});
      CHECK(a(0, 1) < prev);
      prev = a(0, 1);
    }
    CHECK(prev == 0.0);
  }
  SUBCASE("rows are stochastic on random inputs") {
    const auto inst = fixture::random_align_instance(3, 64, 16);
    check_row_stochastic(e_step(inst.weights, inst.init));
    check_row_stochastic(e_step(inst.weights, inst.init, 500.0));
  }
}

TEST_CASE("M-step") {
  const std::vector<double> w{1.0, 3.0};
  SUBCASE("hard assignment gives cluster means") {
    const auto c = m_step(w, one_hot({0, 1}, 2));
    CHECK(c[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(c[1] == doctest::Approx(3.0).epsilon(1e-7));
    const std::vector<double> w4{1.0, 2.0, 6.0, 8.0};
    const auto c4 = m_step(w4, one_hot({0, 0, 1, 1}, 2), 1e-8);
    CHECK(c4[0] == doctest::Approx(1.5 * 2 / (2 + 1e-8)).epsilon(1e-15));
    CHECK(c4[1] == doctest::Approx(7.0 * 2 / (2 + 1e-8)).epsilon(1e-15));
  }
  SUBCASE("uniform assignment gives the damped mean") {
    const std::vector<double> w6{0.5, 1.0, -2.0, 4.0, 0.0, 2.5};
    const auto c = m_step(w6, Matrix(6, 3, 1.0 / 3.0));
    const double mean = 1.0;
    for (double v : c) CHECK(v == doctest::Approx(mean * 2.0 / (2.0 + 1e-8)).epsilon(1e-13));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(m_step(w, Matrix(3, 2)), ShapeError);
  }
}

TEST_CASE("DKM clustering") {
  SUBCASE("one iteration is an E-step then an M-step") {
    const auto inst = fixture::random_align_instance(5);
    const auto one = dkm_cluster(inst.weights, inst.init, 1);
    const auto a = e_step(inst.weights, inst.init);
    CHECK(one.assignment == a);
    CHECK(one.centroids == m_step(inst.weights, a));
    CHECK(one.iterations_run == 1);
  }
  SUBCASE("fixed point on well-separated clusters") {
    std::vector<double> w;
    for (double centre : {-20.0, 0.0, 20.0})
      for (double d : {-0.1, 0.0, 0.05, 0.05}) w.push_back(centre + d);
    const std::vector<double> init{-20.0, 0.0, 20.0};
    const auto c5 = dkm_cluster(w, init, 5);
    const auto c6 = dkm_cluster(w, init, 6);
    const auto c10 = dkm_cluster(w, init, 10);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(std::abs(c6.centroids[k] - c5.centroids[k]) < 1e-6);
      CHECK(std::abs(c10.centroids[k] - c5.centroids[k]) < 1e-6);
    }
    CHECK(c5.iterations_run == 5);
    check_row_stochastic(c5.assignment);
  }
  SUBCASE("zero iterations rejected") {
    CHECK_THROWS_AS(dkm_cluster(std::vector<double>{1.0}, std::vector<double>{0.0}, 0), ConfigError);
  }
}

TEST_CASE("hardened DKM matches brute-force k-means on separated data") {
  Rng rng(12);
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (int rep = 0; rep < 20; ++rep) {
    const std::vector<double> centres{-3.0, 0.5, 4.0};
    std::vector<double> w;
    std::vector<double> init;
    for (double c : centres) {
      for (int i = 0; i < 3; ++i) w.push_back(c + jitter(rng));
      init.push_back(w.back());
    }
    const auto dkm = dkm_cluster(w, init, 30, 1e4);
    std::vector<int> labels;
    for (std::size_t r = 0; r < w.size(); ++r) {
      auto row = dkm.assignment.row(r);
      labels.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    const auto brute = oracle::brute_force_kmeans(w, 3, false);
    CHECK(oracle::same_partition(labels, brute.labels, false));
  }
}

TEST_CASE("teacher assignment") {
  CompressedLayer layer{1, 3, {{0.0, 1.0}}, {{0, 0, 1}}};
  const auto a = teacher_assignment(layer);
  CHECK(a == Matrix(3, 2, {1, 0, 1, 0, 0, 1}));
  check_row_stochastic(a, 0.0);

  SUBCASE("E-step on the reconstruction favours the sent index") {
    const auto inst = fixture::random_align_instance(8, 200, 16);
    WcpResult r = wcp_compress(inst.weights, {16, 50, 1e-6});
    CompressedLayer l{200, 1, r.table, r.indices};
    const auto recon = wcp_decompress(l);
    const auto soft = e_step(recon.data(), r.table.values);
    for (std::size_t i = 0; i < 200; ++i) {
      auto row = soft.row(i);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      CHECK(static_cast<std::size_t>(best) == r.indices.indices[i]);
    }
  }
  SUBCASE("spread-out tables put at least half the mass on the sent index") {
    CompressedLayer spread{1, 6, {{0.0, -2.0, 1.5, 3.5}}, {{0, 1, 2, 3, 2, 1}}};
    const auto recon = wcp_decompress(spread);
    const auto soft = e_step(recon.data(), spread.table.values);
    for (std::size_t i = 0; i < 6; ++i) CHECK(soft(i, spread.indices.indices[i]) >= 0.5);
  }
  SUBCASE("corrupt index") {
    CompressedLayer bad{1, 2, {{0.0, 1.0}}, {{0, 5}}};
    CHECK_THROWS_AS(teacher_assignment(bad), CorruptionError);
  }
}

TEST_CASE("match weights") {
  SUBCASE("identical structure is diagonal dominant") {
    const std::vector<double> c{0.0, -1.0, 0.8};
    const auto a = one_hot({0, 1, 2, 2, 1, 0, 1}, 3);
    const auto w = match_weights(a, c, a, c, 0.5, 1.0);
    check_row_stochastic(w);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        if (i != j) CHECK(w(i, i) > w(i, j));
  }
  SUBCASE("disjoint assignments leave only the damped similarity term") {
    // Student column 0 never overlaps the teacher's only cluster; column 1 matches it.
    const std::vector<double> ct{0.0}, cs{0.3, 2.0};
    const auto at = one_hot({0, 0, 0, 0}, 1);
    const auto as = one_hot({1, 1, 1, 1}, 2);
    const auto w = match_weights(at, ct, as, cs, 0.5, 1.0);
    const double eps = 1e-8;
    const double m0 = std::sqrt(eps) * std::sqrt(std::exp(-0.09) + eps);
    const double m1 = std::sqrt(4.0 / (4.0 + eps) + eps) * std::sqrt(std::exp(-4.0) + eps);
    CHECK(w(0, 0) == doctest::Approx(m0 / (m0 + m1)).epsilon(1e-12));
    CHECK(w(0, 1) == doctest::Approx(m1 / (m0 + m1)).epsilon(1e-12));
  }
  SUBCASE("distance kernel at unit distance") {
    const std::vector<double> ct{0.0}, cs{1.0, 0.0};
    const auto at = one_hot({0, 0}, 1);
    const auto as = Matrix(2, 2, 0.5);
    const auto w = match_weights(at, ct, as, cs, 0.0, 1.0);
    const double s = std::exp(-1.0);
    CHECK(s == doctest::Approx(0.3679).epsilon(1e-4));
    CHECK(w(0, 0) == doctest::Approx((s + 1e-8) / (s + 1e-8 + 1.0 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("pure Jaccard mixing") {
    const std::vector<double> ct{0.0}, cs{0.0, 5.0};
    const auto at = one_hot({0, 0, 0}, 1);
    const auto as = Matrix(3, 2, {0.75, 0.25, 0.5, 0.5, 1.0, 0.0});
    const auto w = match_weights(at, ct, as, cs, 1.0, 1.0);
    const double eps = 1e-8;
    const double j0 = 2.25 / (3.0 + eps) + eps, j1 = 0.75 / (3.0 + eps) + eps;
    CHECK(w(0, 0) == doctest::Approx(j0 / (j0 + j1)).epsilon(1e-14));
  }
  SUBCASE("Jaccard of identical soft assignments is N / (N + eps)") {
    const std::vector<double> c{0.0};
    const auto a = one_hot({0, 0, 0, 0, 0}, 1);
    // One column only: M = (J + eps)^a (S + eps)^(1-a) and w = 1 regardless.
    const auto w = match_weights(a, c, a, c, 0.5, 1.0);
    CHECK(w(0, 0) == 1.0);
  }
  SUBCASE("random instances stay row-stochastic") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const auto inst = fixture::random_align_instance(s, 50, 8);
      const auto st = dkm_cluster(inst.weights, inst.init, 5);
      for (const auto& t : inst.teachers)
        check_row_stochastic(
            match_weights(t.assignment, t.centroids, st.assignment, st.centroids, 0.5, 1.0));
    }
  }
  SUBCASE("weight-count mismatch") {
    const std::vector<double> c{0.0, 1.0};
    CHECK_THROWS_AS(match_weights(one_hot({0, 1}, 2), c, one_hot({0, 1, 1}, 2), c, 0.5, 1.0),
                    ShapeError);
  }
}

TEST_CASE("target centroids") {
  SUBCASE("one teacher, identity matching") {
    const std::vector<MatchWeights> w{Matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1})};
    const std::vector<std::vector<double>> ct{{0.0, -1.0, 2.0}};
    CHECK(target_centroids(w, ct, std::vector<double>{1.0}) == ct[0]);
  }
  SUBCASE("duplicated teacher") {
    const Matrix m(2, 2, {0.7, 0.3, 0.2, 0.8});
    const std::vector<double> c{0.0, 1.5};
    const auto one = target_centroids(std::vector<MatchWeights>{m}, std::vector<std::vector<double>>{c},
                                      std::vector<double>{1.0});
    const auto two = target_centroids(std::vector<MatchWeights>{m, m}, std::vector<std::vector<double>>{c, c},
                                      std::vector<double>{0.5, 0.5});
    for (std::size_t j = 0; j < 2; ++j) CHECK(two[j] == doctest::Approx(one[j]).epsilon(1e-15));
  }
  SUBCASE("weighted pair of singletons") {
    const auto out = target_centroids(std::vector<MatchWeights>{Matrix(1, 1, 1.0), Matrix(1, 1, 1.0)},
                                      std::vector<std::vector<double>>{{0.0}, {2.0}},
                                      std::vector<double>{0.25, 0.75});
    CHECK(out[0] == doctest::Approx(1.5).epsilon(1e-15));
  }
  SUBCASE("column-mass bound") {
    const auto inst = fixture::random_align_instance(21, 40, 5, 3);
    const auto st = dkm_cluster(inst.weights, inst.init, 5);
    std::vector<MatchWeights> ms;
    std::vector<std::vector<double>> cts;
    for (const auto& t : inst.teachers) {
      ms.push_back(match_weights(t.assignment, t.centroids, st.assignment, st.centroids, 0.5, 1.0));
      cts.push_back(t.centroids);
    }
    const auto tgt = target_centroids(ms, cts, inst.alpha);
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      double lo = 0.0, hi = 0.0;
      for (std::size_t t = 0; t < ms.size(); ++t) {
        double mass = 0.0, tmin = INFINITY, tmax = -INFINITY;
        for (std::size_t i = 0; i < cts[t].size(); ++i) {
          mass += ms[t](i, j);
          tmin = std::min(tmin, cts[t][i]);
          tmax = std::max(tmax, cts[t][i]);
        }
        lo += inst.alpha[t] * mass * tmin;
        hi += inst.alpha[t] * mass * tmax;
      }
      CHECK(tgt[j] >= lo - 1e-12);
      CHECK(tgt[j] <= hi + 1e-12);
    }
  }
  SUBCASE("cluster count mismatch") {
    CHECK_THROWS_AS(target_centroids(std::vector<MatchWeights>{Matrix(2, 2), Matrix(3, 2)},
                                     std::vector<std::vector<double>>{{0, 1}, {0, 1}},
                                     std::vector<double>{0.5, 0.5}),
                    ShapeError);
  }
}

TEST_CASE("alignment loss and gradient") {
  const DkmOptions opts;
  SUBCASE("all-zero weights and teachers give zero loss and zero gradient") {
    const std::vector<double> w(16, 0.0), init(4, 0.0);
    std::vector<TeacherLayer> teachers{{std::vector<double>(4, 0.0), one_hot(std::vector<int>(16, 0), 4)}};
    const auto r = align_loss_and_grad(w, init, teachers, std::vector<double>{1.0}, opts);
    CHECK(r.loss == 0.0);
    double norm = 0.0;
    for (double g : r.grad) norm += g * g;
    CHECK(std::sqrt(norm) < 1e-8);
  }
  SUBCASE("loss is non-negative and gradient matches finite differences") {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 25; ++s) {
      const auto inst = fixture::random_align_instance(s);
      CHECK(align_loss(inst.weights, inst.init, inst.teachers, inst.alpha, opts) >= 0.0);
      worst = std::max(worst, grad_fd_error(inst, opts, 1e-6));
    }
    INFO("max relative error " << worst);
    CHECK(worst < 1e-5);
  }
  SUBCASE("gradient check with other hyperparameters") {
    DkmOptions o;
    o.alpha_mix = 0.2;
    o.beta_dist = 3.0;
    o.iterations = 3;
    o.temperature = 4.0;
    for (std::uint64_t s = 100; s < 105; ++s) {
      const auto inst = fixture::random_align_instance(s, 24, 6, 3);
      CHECK(grad_fd_error(inst, o, 1e-6) < 1e-5);
    }
  }
  SUBCASE("small step down the gradient does not raise the loss") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto inst = fixture::random_align_instance(s + 50);
      const auto r = align_loss_and_grad(inst.weights, inst.init, inst.teachers, inst.alpha, opts);
      auto w = inst.weights;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 1e-3 * r.grad[i];
      CHECK(align_loss(w, inst.init, inst.teachers, inst.alpha, opts) <= r.loss);
    }
  }
  SUBCASE("bad inputs") {
    const auto inst = fixture::random_align_instance(1);
    CHECK_THROWS_AS(align_loss(inst.weights, inst.init, inst.teachers, std::vector<double>{1.0}, opts),
                    ShapeError);
    std::vector<double> shorter(inst.weights.begin(), inst.weights.end() - 1);
    CHECK_THROWS_AS(align_loss(shorter, inst.init, inst.teachers, inst.alpha, opts), ShapeError);
  }
}
