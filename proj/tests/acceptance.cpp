// Acceptance suite. Prints one PASS/FAIL line per criterion; `--only N` runs a
// single criterion. Exit status is non-zero if any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dfedcad/cfd.hpp"
#include "dfedcad/dkm.hpp"
#include "dfedcad/protocol.hpp"
#include "dfedcad/wcp.hpp"
#include "dfedcad/wire.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dfedcad;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Payload of clustered layers with N >= 1e5 is at least 86% below dense.
Verdict communication_reduction() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst = 1.0;
  for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{400, 250}, {512, 512}}) {
    const std::size_t n = rows * cols;
    Rng rng(n);
    std::normal_distribution<double> d(0.0, 0.05);
    Matrix w(rows, cols);
    for (double& v : w.data()) v = d(rng);
    CompressedModel m;
    m.layers.push_back(compress_layer(w, {16, 50, 1e-6}));
    m.biases.push_back({});
    const auto bytes = wire::encode(m);
    // Strip the fixed header, layer metadata and the empty bias block.
    const std::size_t payload_bytes = bytes.size() - wire::kHeaderBytes - wire::kLayerMetaBytes - 4;
    const std::uint64_t formula = payload_bits(n, 16, 32);
    ok &= formula == 16 * 32 + n * 4;
    ok &= payload_bytes * 8 == formula;  // n * 4 is a whole number of bytes here
    const double reduction = 1.0 - static_cast<double>(payload_bytes * 8) / (32.0 * n);
    worst = std::min(worst, reduction);
  }
  const double secs = seconds_since(t0);
  ok &= worst >= 0.86 && secs < 1.0;
  return {ok, fmt("min reduction %.4f%% (need >= 86%%), %.2fs (limit 1s)", 100 * worst, secs)};
}

// 2. Alignment gradient against central finite differences.
Verdict gradient_oracle() {
  const auto t0 = Clock::now();
  const DkmOptions opts;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto inst = fixture::random_align_instance(1000 + s, 32, 4, 2);
    const auto res = align_loss_and_grad(inst.weights, inst.init, inst.teachers, inst.alpha, opts);
    const auto fd = oracle::finite_diff(
        [&](std::span<const double> w) {
          return align_loss(w, inst.init, inst.teachers, inst.alpha, opts);
        },
        inst.weights, 1e-6);
    worst = std::max(worst, oracle::max_rel_error(res.grad, fd));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 10.0,
          fmt("20 instances, max rel error %.3e (need < 1e-5), %.2fs (limit 10s)", worst, secs)};
}

// 3. Singleton CFD against 2(1 - exp(-sigma^2 delta^2 / 2)).
Verdict cfd_closed_form() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  std::uint64_t seed = 7;
  for (double delta : {0.5, 1.0, 2.0}) {
    const auto freqs = FrequencySet::sample(4096, 1.0, seed++);
    const std::vector<double> a{0.0}, b{delta};
    const auto terms = cfd_terms(a, b, freqs);
    const double n = static_cast<double>(terms.size());
    const double mean = std::accumulate(terms.begin(), terms.end(), 0.0) / n;
    double var = 0.0;
    for (double t : terms) var += (t - mean) * (t - mean);
    const double se = std::sqrt(var / (n - 1.0) / n);
    const double z = (cfd_layer(a, b, freqs) - oracle::singleton_cfd(delta, 1.0)) / se;
    ok &= std::abs(z) < 3.0;
    detail += fmt("d=%.1f z=%+.2f ", delta, z);
  }
  const double secs = seconds_since(t0);
  ok &= secs < 1.0;
  return {ok, detail + fmt("(need |z| < 3), %.2fs (limit 1s)", secs)};
}

// 4. Codec roundtrip on 1000 models and nearest-centroid reconstruction.
Verdict codec_correctness() {
  const auto t0 = Clock::now();
  std::size_t roundtrip_fail = 0, nearest_fail = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto m = fixture::random_compressed_model(s);
    if (!(wire::decode(wire::encode(m)) == m)) ++roundtrip_fail;

    Rng rng(50000 + s);
    std::normal_distribution<double> d(0.0, 0.3);
    std::uniform_int_distribution<std::size_t> kd(2, 32);
    const std::size_t k = kd(rng);
    Matrix w(10, 30);
    for (double& v : w.data()) v = d(rng);
    CompressedModel cm;
    cm.layers.push_back(compress_layer(w, {k, 50, 1e-6}));
    cm.biases.push_back({0.5});
    const auto back = decompress_model(wire::decode(wire::encode(cm)));
    const auto& table = cm.layers[0].table.values;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (std::abs(back.layers[0].weight.data()[i] - w.data()[i]) !=
          oracle::nearest_distance(w.data()[i], table))
        ++nearest_fail;
  }
  const double secs = seconds_since(t0);
  return {roundtrip_fail == 0 && nearest_fail == 0 && secs < 30.0,
          fmt("1000 models: %zu roundtrip mismatches, %zu non-nearest weights, %.2fs (limit 30s)",
              roundtrip_fail, nearest_fail, secs)};
}

// Well-separated 1-D groups: centres at least `gap` apart, jitter 0.05.
std::vector<double> separated_groups(Rng& rng, std::span<const std::size_t> sizes, double gap,
                                     double min_abs) {
  std::uniform_real_distribution<double> pos(-8.0, 8.0);
  std::normal_distribution<double> jitter(0.0, 0.05);
  std::vector<double> centres;
  while (centres.size() < sizes.size()) {
    const double c = pos(rng);
    bool ok = std::abs(c) >= min_abs;
    for (double o : centres) ok &= std::abs(c - o) >= gap;
    if (ok) centres.push_back(c);
  }
  std::vector<double> w;
  for (std::size_t g = 0; g < sizes.size(); ++g)
    for (std::size_t i = 0; i < sizes[g]; ++i) w.push_back(centres[g] + jitter(rng));
  return w;
}

// Farthest-point seeding from the smallest value.
std::vector<double> farthest_point_init(std::span<const double> w, std::size_t k) {
  std::vector<double> c{*std::min_element(w.begin(), w.end())};
  while (c.size() < k) {
    double best = -1.0, pick = 0.0;
    for (double v : w) {
      const double d = oracle::nearest_distance(v, c);
      if (d > best) {
        best = d;
        pick = v;
      }
    }
    c.push_back(pick);
  }
  return c;
}

// 5. Hardened DKM and WCP against exhaustive k-means.
Verdict clustering_oracle() {
  const auto t0 = Clock::now();
  std::size_t dkm_fail = 0, wcp_fail = 0, cases = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(9000 + s);
    const std::size_t k = 2 + s % 2;
    std::uniform_int_distribution<std::size_t> size_d(2, 4);

    // DKM: k groups, no pinned centre.
    {
      std::vector<std::size_t> sizes(k);
      for (auto& z : sizes) z = size_d(rng);
      const auto w = separated_groups(rng, sizes, 3.0, 0.0);
      const auto st = dkm_cluster(w, farthest_point_init(w, k), 25, 1e3);
      std::vector<int> labels;
      for (std::size_t r = 0; r < w.size(); ++r) {
        auto row = st.assignment.row(r);
        labels.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
      }
      dkm_fail += !oracle::same_partition(labels, oracle::brute_force_kmeans(w, static_cast<int>(k), false).labels, false);
    }
    // WCP: pruned exact zeros plus k-1 groups away from zero.
    {
      std::vector<std::size_t> sizes(k - 1);
      for (auto& z : sizes) z = size_d(rng);
      auto w = separated_groups(rng, sizes, 3.0, 3.0);
      const std::size_t zeros = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
      w.insert(w.end(), zeros, 0.0);
      std::shuffle(w.begin(), w.end(), rng);
      const auto r = wcp_compress(w, {k, 100, 1e-9});
      std::vector<int> labels(r.indices.indices.begin(), r.indices.indices.end());
      wcp_fail += !oracle::same_partition(labels, oracle::brute_force_kmeans(w, static_cast<int>(k), true).labels, true);
    }
    ++cases;
  }
  const double secs = seconds_since(t0);
  return {dkm_fail == 0 && wcp_fail == 0,
          fmt("%zu seeds, N <= 12, K in {2,3}: DKM mismatches %zu, WCP mismatches %zu, %.2fs", cases,
              dkm_fail, wcp_fail, secs)};
}

// 6. Delayed-client adaptation: full method vs lambda = 0.
struct Adaptation {
  double mean_post_join = 0.0;
  double rounds_to_90 = 0.0;
};

Adaptation delayed_adaptation(const MetricsTable& rows, int join, int rounds) {
  std::vector<double> acc(static_cast<std::size_t>(rounds) + 1, 0.0);
  int n = 0;
  double sum = 0.0;
  for (const auto& r : rows)
    if (r.delayed && r.acc) {
      acc[static_cast<std::size_t>(r.round)] = *r.acc;
      sum += *r.acc;
      ++n;
    }
  const double final_acc = acc[static_cast<std::size_t>(rounds)];
  int hit = rounds;
  for (int r = join; r <= rounds; ++r)
    if (acc[static_cast<std::size_t>(r)] >= 0.9 * final_acc) {
      hit = r;
      break;
    }
  return {n ? sum / n : 0.0, static_cast<double>(hit - join)};
}

Verdict end_to_end_adaptation() {
  const auto t0 = Clock::now();
  const int seeds = 10;
  Adaptation full, ablation;
  for (int s = 1; s <= seeds; ++s) {
    SimConfig cfg;  // 8 clients, 4 blobs, alpha 0.4, client 7 joins at round 5 of 30, n = 3, K = 16
    cfg.seed = static_cast<std::uint64_t>(s);
    cfg.threads = 1;
    const auto a = delayed_adaptation(run_simulation(cfg), cfg.join_round, cfg.rounds);
    cfg.lambda_align = 0.0;
    const auto b = delayed_adaptation(run_simulation(cfg), cfg.join_round, cfg.rounds);
    full.mean_post_join += a.mean_post_join / seeds;
    full.rounds_to_90 += a.rounds_to_90 / seeds;
    ablation.mean_post_join += b.mean_post_join / seeds;
    ablation.rounds_to_90 += b.rounds_to_90 / seeds;
  }
  const double secs = seconds_since(t0);
  const bool ok = full.mean_post_join > ablation.mean_post_join &&
                  full.rounds_to_90 <= ablation.rounds_to_90 && secs < 300.0;
  return {ok, fmt("%d seeds: post-join acc %.4f vs ablation %.4f, rounds-to-90%% %.2f vs %.2f, "
                  "%.1fs (limit 300s)",
                  seeds, full.mean_post_join, ablation.mean_post_join, full.rounds_to_90,
                  ablation.rounds_to_90, secs)};
}

// 7. Running average of the squared gradient norm at the consensus average.
double full_gradient_sq_norm(const SimState& st) {
  ModelParams avg;
  std::size_t active = 0;
  for (const auto& c : st.clients) {
    if (!c.active) continue;
    if (active++ == 0) {
      avg = c.model;
      continue;
    }
    for (std::size_t l = 0; l < avg.layers.size(); ++l) {
      auto& w = avg.layers[l].weight.data();
      const auto& cw = c.model.layers[l].weight.data();
      for (std::size_t k = 0; k < w.size(); ++k) w[k] += cw[k];
      for (std::size_t k = 0; k < avg.layers[l].bias.size(); ++k)
        avg.layers[l].bias[k] += c.model.layers[l].bias[k];
    }
  }
  for (auto& l : avg.layers) {
    for (double& v : l.weight.data()) v /= static_cast<double>(active);
    for (double& v : l.bias) v /= static_cast<double>(active);
  }
  std::vector<std::size_t> train;
  for (const auto& c : st.clients) train.insert(train.end(), c.shard.train.begin(), c.shard.train.end());
  const Dataset all = gather(st.data, train);
  const PruneMask dense = PruneMask::all_true(avg);
  const auto fwd = forward_loss(avg, dense, all);
  const Gradient g = backward(avg, dense, fwd.cache, all);
  double sq = 0.0;
  for (std::size_t l = 0; l < avg.layers.size(); ++l) {
    const auto& w = avg.layers[l].weight.data();
    const auto& gw = g.layers[l].weight.data();
    for (std::size_t k = 0; k < w.size(); ++k) sq += std::pow(gw[k] + st.cfg.l2 * w[k], 2);
    for (std::size_t k = 0; k < avg.layers[l].bias.size(); ++k)
      sq += std::pow(g.layers[l].bias[k] + st.cfg.l2 * avg.layers[l].bias[k], 2);
  }
  return sq;
}

Verdict convergence_trend() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (int s = 1; s <= 5; ++s) {
    SimConfig cfg;
    cfg.hidden = {};
    cfg.l2 = 1e-2;
    cfg.lr = 0.02;
    cfg.rounds = 40;
    cfg.seed = static_cast<std::uint64_t>(s);
    std::vector<double> norms;
    run_simulation(cfg, [&](const SimState& st, int) { norms.push_back(full_gradient_sq_norm(st)); });
    auto running = [&](std::size_t t) {
      return std::accumulate(norms.begin(), norms.begin() + static_cast<std::ptrdiff_t>(t), 0.0) /
             static_cast<double>(t);
    };
    const double a10 = running(10), a20 = running(20), a40 = running(40);
    ok &= a10 >= a20 && a20 >= a40;
    detail += fmt("[%.2e %.2e %.2e] ", a10, a20, a40);
  }
  return {ok, "5 seeds, T=10/20/40: " + detail + fmt("%.1fs", seconds_since(t0))};
}

// 8. Byte-identical JSONL across repeated serial and parallel runs.
Verdict determinism() {
  const auto t0 = Clock::now();
  SimConfig cfg;
  cfg.rounds = 10;
  cfg.seed = 17;
  std::vector<std::string> outs;
  for (int threads : {1, 1, 4, 4}) {
    cfg.threads = threads;
    outs.push_back(to_jsonl(run_simulation(cfg)));
  }
  bool ok = !outs[0].empty();
  for (const auto& o : outs) ok &= o == outs[0];
  return {ok, fmt("threads 1,1,4,4: %s (%zu bytes), %.1fs", ok ? "identical" : "DIFFERENT",
                  outs[0].size(), seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"communication reduction", communication_reduction},
      {"alignment gradient oracle", gradient_oracle},
      {"CFD closed form", cfd_closed_form},
      {"codec correctness", codec_correctness},
      {"clustering oracle", clustering_oracle},
      {"delayed-client adaptation", end_to_end_adaptation},
      {"convergence trend", convergence_trend},
      {"determinism", determinism},
  };
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--only N]\n", argv[0]);
      return 2;
    }
  }
  if (only < 0 || only > static_cast<int>(criteria.size())) {
    std::fprintf(stderr, "criterion must be in 1..%zu\n", criteria.size());
    return 2;
  }
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && static_cast<int>(i) + 1 != only) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("[%s] %zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                v.detail.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed ? 1 : 0;
}
