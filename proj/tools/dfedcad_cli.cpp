#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dfedcad/cfd.hpp"
#include "dfedcad/config.hpp"
#include "dfedcad/dkm.hpp"
#include "dfedcad/errors.hpp"
#include "dfedcad/metrics.hpp"
#include "dfedcad/protocol.hpp"
#include "dfedcad/rng.hpp"
#include "dfedcad/wcp.hpp"
#include "dfedcad/wire.hpp"

namespace fs = std::filesystem;
using namespace dfedcad;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Flat weight file: u32 rows | u32 cols | rows*cols x f32, little-endian.
Matrix read_weights(const fs::path& path) {
  const auto b = read_bytes(path);
  auto u32 = [&](std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
           static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
  };
  if (b.size() < 8) throw DecodeError(DecodeErrorKind::kTruncated, "weight file shorter than its header");
  const std::size_t rows = u32(0), cols = u32(4);
  if ((b.size() - 8) / 4 < rows * cols || b.size() != 8 + 4 * rows * cols)
    throw DecodeError(DecodeErrorKind::kMalformed, "weight file length does not match rows x cols");
  Matrix w(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const std::uint32_t bits = u32(8 + 4 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    if (!std::isfinite(f)) throw NumericError("non-finite weight in " + path.string());
    w.data()[i] = f;
  }
  return w;
}

void write_weights(const fs::path& path, const Matrix& w) {
  std::vector<std::uint8_t> b;
  auto put = [&](std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) b.push_back(static_cast<std::uint8_t>(v >> s));
  };
  put(static_cast<std::uint32_t>(w.rows()));
  put(static_cast<std::uint32_t>(w.cols()));
  for (double v : w.data()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put(bits);
  }
  write_bytes(path, b);
}

struct RunOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool ablation = false;
  bool dense = false;
  int threads = 0;
};

int cmd_run(const RunOptions& o) {
  RunConfig rc = o.config.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(o.config);
  if (!o.out.empty()) rc.out_dir = o.out;
  if (o.seed) rc.sim.seed = *o.seed;
  if (o.threads > 0) rc.sim.threads = o.threads;
  if (o.ablation) {
    rc.sim.lambda_align = 0.0;
    rc.sim.label = "ablation";
  }
  if (o.dense) {
    rc.sim.dense_exchange = true;
    if (!o.ablation) rc.sim.label = "baseline-dense";
  }
  rc.sim.validate();

  const MetricsTable rows = run_simulation(rc.sim);
  fs::create_directories(rc.out_dir);
  {
    std::ofstream jl(rc.out_dir / "metrics.jsonl");
    write_jsonl(rows, jl);
    std::ofstream csv(rc.out_dir / "metrics.csv");
    write_csv(rows, csv);
    std::ofstream cfg(rc.out_dir / "config.json");
    cfg << to_json(rc.sim).dump(2) << '\n';
    if (!jl || !csv || !cfg) throw std::runtime_error("cannot write to " + rc.out_dir.string());
  }

  struct Summary {
    double max_acc = 0.0;
    double bytes = 0.0;
    double flops = 0.0;
    int rounds = 0;
  };
  std::map<std::uint32_t, Summary> delayed;
  for (const auto& r : rows) {
    if (!r.delayed) continue;
    auto& s = delayed[r.client_id];
    if (r.acc) s.max_acc = std::max(s.max_acc, *r.acc);
    s.bytes += static_cast<double>(r.bytes_sent + r.bytes_recv);
    s.flops += static_cast<double>(r.flops);
    ++s.rounds;
  }
  for (const auto& [id, s] : delayed)
    std::printf("%s client %u: max_acc %.4f mean_bytes_per_round %.1f mean_flops_per_round %.4g\n",
                rc.sim.label.c_str(), id, s.max_acc, s.bytes / s.rounds, s.flops / s.rounds);
  std::fprintf(stderr, "wrote %zu rows to %s\n", rows.size(), rc.out_dir.string().c_str());
  return 0;
}

int cmd_compress(const std::string& in, const std::string& out, std::size_t k, std::size_t iters) {
  const Matrix w = read_weights(in);
  CompressedModel m;
  m.layers.push_back(compress_layer(w, {k, iters, 1e-6}));
  m.biases.push_back({});
  const auto bytes = wire::encode(m);
  write_bytes(out, bytes);
  const std::uint64_t n = w.size();
  const std::uint64_t bits = payload_bits(n, k, 32);
  std::printf("weights %llu clusters %zu bits_per_index %zu payload_bits %llu reduction %.4f%%\n",
              static_cast<unsigned long long>(n), k, index_bits(k), static_cast<unsigned long long>(bits),
              100.0 * (1.0 - static_cast<double>(bits) / (32.0 * static_cast<double>(n))));
  return 0;
}

int cmd_decompress(const std::string& in, const std::string& out) {
  const auto bytes = read_bytes(in);
  const CompressedModel m = wire::decode(bytes);
  if (m.layers.size() != 1) throw ProtocolError("expected a single-layer stream");
  write_weights(out, wcp_decompress(m.layers[0]));
  return 0;
}

int cmd_cfd(const std::string& a, const std::string& b, std::size_t freqs, double sigma,
            std::uint64_t seed) {
  const CompressedModel ma = wire::decode(read_bytes(a)), mb = wire::decode(read_bytes(b));
  const double d = cfd_model(ma, mb, FrequencySet::sample(freqs, sigma, seed));
  std::printf("%.17g\n", d);
  return 0;
}

// Finite-difference verification of the alignment gradient on random layers.
int cmd_align_check(std::size_t instances, std::size_t n, std::size_t k, std::size_t teachers,
                    std::uint64_t seed) {
  const DkmOptions opts;
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t s = 0; s < instances; ++s) {
    Rng rng(derive_seed(seed, Stream::kInit, {s}));
    std::normal_distribution<double> wd(0.0, 0.5), shift(0.0, 0.1), noise(0.0, 0.2);
    std::uniform_real_distribution<double> ad(0.1, 1.0);
    std::vector<double> w(n);
    for (double& v : w) v = wd(rng);
    const auto init = wcp_compress(w, {k, 50, 1e-6}).table.values;
    std::vector<TeacherLayer> ts;
    std::vector<double> alpha;
    for (std::size_t t = 0; t < teachers; ++t) {
      const double sh = shift(rng);
      std::vector<double> tw(n);
      for (std::size_t i = 0; i < n; ++i) tw[i] = w[i] + sh + noise(rng);
      const auto r = wcp_compress(tw, {k, 50, 1e-6});
      ts.push_back(teacher_layer({n, 1, r.table, r.indices}));
      alpha.push_back(ad(rng));
    }
    double total = 0.0;
    for (double a : alpha) total += a;
    for (double& a : alpha) a /= total;

    const auto res = align_loss_and_grad(w, init, ts, alpha, opts);
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto wp = w, wm = w;
      wp[i] += h;
      wm[i] -= h;
      const double fd = (align_loss(wp, init, ts, alpha, opts) - align_loss(wm, init, ts, alpha, opts)) / (2 * h);
      diff = std::max(diff, std::abs(res.grad[i] - fd));
      ref = std::max(ref, std::abs(fd));
    }
    worst = std::max(worst, diff / std::max(ref, 1e-12));
  }
  const bool pass = worst < 1e-5;
  std::printf("max_rel_error %.3e %s\n", worst, pass ? "PASS" : "FAIL");
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralised federated learning with clustered weight exchange"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Run a simulation and write metrics");
  run_cmd->add_option("--config", run.config, "JSON config file")->check(CLI::ExistingFile);
  run_cmd->add_option("--out", run.out, "Output directory (overrides out_dir)");
  run_cmd->add_option("--seed", run.seed, "Master seed override");
  run_cmd->add_option("--threads", run.threads, "Worker threads override");
  run_cmd->add_flag("--ablation-no-align", run.ablation, "Disable alignment (lambda = 0)");
  run_cmd->add_flag("--baseline-dense", run.dense, "Exchange dense float weights");

  std::string c_in, c_out;
  std::size_t c_k = 16, c_iters = 50;
  auto* comp = app.add_subcommand("compress", "Cluster a flat weight file into a wire stream");
  comp->add_option("input", c_in, "Weight file")->required()->check(CLI::ExistingFile);
  comp->add_option("--out", c_out, "Output stream")->required();
  comp->add_option("-k,--clusters", c_k, "Cluster count")->check(CLI::Range(2, 65535));
  comp->add_option("--max-iters", c_iters, "Lloyd iteration cap");

  std::string d_in, d_out;
  auto* decomp = app.add_subcommand("decompress", "Rebuild a flat weight file from a wire stream");
  decomp->add_option("input", d_in, "Wire stream")->required()->check(CLI::ExistingFile);
  decomp->add_option("--out", d_out, "Output weight file")->required();

  std::string f_a, f_b;
  std::size_t f_n = 1024;
  double f_sigma = 1.0;
  std::uint64_t f_seed = 1;
  auto* cfd = app.add_subcommand("cfd", "Characteristic-function distance of two wire streams");
  cfd->add_option("a", f_a)->required()->check(CLI::ExistingFile);
  cfd->add_option("b", f_b)->required()->check(CLI::ExistingFile);
  cfd->add_option("--freqs", f_n, "Monte Carlo frequencies");
  cfd->add_option("--sigma", f_sigma, "Frequency scale");
  cfd->add_option("--seed", f_seed, "Frequency seed");

  std::size_t a_inst = 20, a_n = 32, a_k = 4, a_t = 2;
  std::uint64_t a_seed = 1;
  auto* align = app.add_subcommand("align-check", "Finite-difference check of the alignment gradient");
  align->add_option("--instances", a_inst);
  align->add_option("-n,--weights", a_n);
  align->add_option("-k,--clusters", a_k);
  align->add_option("--teachers", a_t);
  align->add_option("--seed", a_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*comp) return cmd_compress(c_in, c_out, c_k, c_iters);
    if (*decomp) return cmd_decompress(d_in, d_out);
    if (*cfd) return cmd_cfd(f_a, f_b, f_n, f_sigma, f_seed);
    if (*align) return cmd_align_check(a_inst, a_n, a_k, a_t, a_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
