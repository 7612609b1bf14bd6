#include "dfedcad/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "dfedcad/errors.hpp"
#include "dfedcad/flops.hpp"

namespace dfedcad {

std::size_t PeerGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& o : out) n += o.size();
  return n;
}

PeerGraph build_peer_graph(std::span<const std::uint32_t> active, int n, Rng& rng) {
  PeerGraph g;
  g.nodes.assign(active.begin(), active.end());
  std::sort(g.nodes.begin(), g.nodes.end());
  g.out.resize(g.nodes.size());
  if (g.nodes.empty() || n <= 0) return g;
  const std::size_t degree = std::min<std::size_t>(static_cast<std::size_t>(n), g.nodes.size() - 1);
  for (std::size_t s = 0; s < g.nodes.size(); ++s) {
    std::vector<std::uint32_t> others;
    for (std::size_t k = 0; k < g.nodes.size(); ++k)
      if (k != s) others.push_back(g.nodes[k]);
    // Partial Fisher-Yates: the first `degree` slots are a uniform sample.
    for (std::size_t k = 0; k < degree; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, others.size() - 1);
      std::swap(others[k], others[pick(rng)]);
    }
    others.resize(degree);
    std::sort(others.begin(), others.end());
    g.out[s] = std::move(others);
  }
  return g;
}

namespace {

WcpOptions wcp_options(const SimConfig& cfg) {
  return {static_cast<std::size_t>(cfg.clusters), static_cast<std::size_t>(cfg.wcp_max_iters),
          cfg.wcp_tol};
}

DkmOptions dkm_options(const SimConfig& cfg) {
  DkmOptions o;
  o.iterations = static_cast<std::size_t>(cfg.dkm_iters);
  o.alpha_mix = cfg.alpha_mix;
  o.beta_dist = cfg.beta_dist;
  return o;
}

std::vector<std::size_t> model_widths(const SimConfig& cfg) {
  std::vector<std::size_t> w{static_cast<std::size_t>(cfg.dims)};
  for (int h : cfg.hidden) w.push_back(static_cast<std::size_t>(h));
  w.push_back(static_cast<std::size_t>(cfg.classes));
  return w;
}

bool same_shape(const ModelParams& a, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    if (a.layers[l].weight.rows() != b.layers[l].weight.rows() ||
        a.layers[l].weight.cols() != b.layers[l].weight.cols() ||
        a.layers[l].bias.size() != b.layers[l].bias.size())
      return false;
  return true;
}

std::uint64_t compress_flops(const ModelParams& model, std::size_t clusters,
                             std::span<const std::size_t> iterations) {
  std::uint64_t f = 0;
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    f += flops::wcp(model.layers[l].weight.size(), clusters, iterations[l]);
  return f;
}

// Compressed view of a model for CFD/DKM when none was received on the wire.
CompressedModel compress_for_alignment(const ModelParams& model, const SimConfig& cfg,
                                       std::uint32_t id, int round, std::uint64_t& flops_out) {
  std::vector<std::size_t> iters;
  auto cm = compress_model(model, wcp_options(cfg), id, static_cast<std::uint32_t>(round), nullptr,
                           &iters);
  flops_out += compress_flops(model, static_cast<std::size_t>(cfg.clusters), iters);
  return cm;
}

// Refreshes the compressed model and mask from the current weights.
std::uint64_t refresh_compression(ClientState& c, const SimConfig& cfg, int round) {
  if (cfg.dense_exchange) {
    c.compressed.reset();
    c.mask = PruneMask::all_true(c.model);
    return 0;
  }
  std::vector<std::size_t> iters;
  c.compressed = compress_model(c.model, wcp_options(cfg), c.id,
                                static_cast<std::uint32_t>(round), &c.mask, &iters);
  apply_mask(c.model, c.mask);
  return compress_flops(c.model, static_cast<std::size_t>(cfg.clusters), iters);
}

void activate(ClientState& c, const SimConfig& cfg, std::span<const std::size_t> widths,
              const Dataset& data, int round, std::uint64_t& flops_out) {
  Rng init = make_rng(cfg.seed, Stream::kInit, {c.id});
  c.model = init_model(widths, init);
  c.mask = PruneMask::all_true(c.model);
  c.compressed.reset();
  Rng batches = make_rng(cfg.seed, Stream::kBatches, {c.id, static_cast<std::uint64_t>(round), 0});
  flops_out += warmup_client(c, data, cfg.lr, static_cast<std::size_t>(cfg.batch_size), batches);
  c.active = true;
}

template <typename Fn>
void for_each_parallel(std::size_t count, int threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void send_along(SimState& state, const PeerGraph& g,
                const std::vector<wire::Bytes>& payload_by_node,
                std::vector<std::uint64_t>* sent_by_node) {
  for (std::size_t s = 0; s < g.nodes.size(); ++s) {
    for (std::uint32_t dst : g.out[s]) {
      state.inbox[dst].push_back({g.nodes[s], payload_by_node[s]});
      if (sent_by_node) (*sent_by_node)[s] += payload_by_node[s].size();
    }
  }
}

}  // namespace

std::uint64_t warmup_client(ClientState& client, const Dataset& data, double lr,
                            std::size_t batch_size, Rng& batch_rng) {
  if (client.shard.train.empty())
    throw ConfigError("client " + std::to_string(client.id) + " has no training data");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order = client.shard.train;
  std::shuffle(order.begin(), order.end(), batch_rng);
  const PruneMask dense = PruneMask::all_true(client.model);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    const Dataset batch =
        gather(data, std::span<const std::size_t>(order).subspan(start, end - start));
    const auto fwd = forward_loss(client.model, dense, batch);
    const Gradient g = backward(client.model, dense, fwd.cache, batch);
    apply_update_inplace(client.model, g, dense, lr, 0.0, client.model);
  }
  return flops::training(client.model, nullptr, order.size());
}

ReceivedModel decode_message(const Message& msg) {
  ReceivedModel r;
  r.sender = msg.sender;
  if (wire::peek_version(msg.bytes) == wire::kVersionDense) {
    r.dense = wire::decode_dense(msg.bytes).model;
  } else {
    r.compressed = wire::decode(msg.bytes);
    r.dense = decompress_model(*r.compressed);
  }
  return r;
}

wire::Bytes encode_client(const ClientState& client, const SimConfig& cfg, int round) {
  if (cfg.dense_exchange)
    return wire::encode_dense({client.id, static_cast<std::uint32_t>(round), client.model});
  if (!client.compressed) throw ProtocolError("client has no compressed model to send");
  return wire::encode(*client.compressed);
}

UpdateStats local_update(ClientState& client, std::span<const ReceivedModel> received, int round,
                         const SimConfig& cfg, const Dataset& data) {
  UpdateStats stats;
  ModelParams& model = client.model;

  // Reference model: mean of the neighbours' reconstructions.
  ModelParams reference = model;
  if (!received.empty()) {
    for (const auto& r : received)
      if (!same_shape(r.dense, model))
        throw ProtocolError("model from client " + std::to_string(r.sender) +
                            " does not match the local architecture");
    const double inv = 1.0 / static_cast<double>(received.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      auto& w = reference.layers[l].weight.data();
      auto& b = reference.layers[l].bias;
      std::fill(w.begin(), w.end(), 0.0);
      std::fill(b.begin(), b.end(), 0.0);
      for (const auto& r : received) {
        const auto& rw = r.dense.layers[l].weight.data();
        const auto& rb = r.dense.layers[l].bias;
        for (std::size_t k = 0; k < w.size(); ++k) w[k] += inv * rw[k];
        for (std::size_t k = 0; k < b.size(); ++k) b[k] += inv * rb[k];
      }
    }
  }

  const bool within_window =
      !cfg.align_rounds || round - client.join_round < *cfg.align_rounds;
  const bool aligning =
      client.delayed() && !received.empty() && cfg.lambda_align > 0.0 && within_window;

  // Teacher data: per layer, one entry per neighbour.
  std::vector<std::vector<TeacherLayer>> teachers;
  std::vector<std::vector<double>> student_init;
  std::vector<double> alpha;
  const DkmOptions dkm = dkm_options(cfg);
  std::uint64_t align_flops_per_batch = 0;
  if (aligning) {
    const CompressedModel own =
        client.compressed ? *client.compressed
                          : compress_for_alignment(model, cfg, client.id, round, stats.flops);
    std::vector<CompressedModel> peers;
    for (const auto& r : received)
      peers.push_back(r.compressed ? *r.compressed
                                   : compress_for_alignment(r.dense, cfg, r.sender, round,
                                                            stats.flops));

    const auto freqs = FrequencySet::sample(
        static_cast<std::size_t>(cfg.cfd_freqs), cfg.cfd_sigma,
        derive_seed(cfg.seed, Stream::kFrequencies, {static_cast<std::uint64_t>(round)}));
    std::vector<double> cfds;
    for (const auto& p : peers) cfds.push_back(cfd_model(own, p, freqs));
    alpha = teacher_weights(cfds);

    teachers.resize(model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      student_init.push_back(own.layers[l].table.values);
      const std::uint64_t n = model.layers[l].weight.size();
      const std::uint64_t ks = own.layers[l].table.size();
      align_flops_per_batch += flops::dkm(n, ks, dkm.iterations);
      for (const auto& p : peers) {
        teachers[l].push_back(teacher_layer(p.layers[l]));
        align_flops_per_batch += flops::matching(p.layers[l].table.size(), ks, n);
      }
    }
  }

  Rng rng = make_rng(cfg.seed, Stream::kBatches, {client.id, static_cast<std::uint64_t>(round), 1});
  std::vector<std::size_t> order = client.shard.train;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::size_t samples = 0, batches = 0;
  double align_sum = 0.0;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const Dataset batch =
          gather(data, std::span<const std::size_t>(order).subspan(start, end - start));
      const auto fwd = forward_loss(model, client.mask, batch);
      Gradient grad = backward(model, client.mask, fwd.cache, batch);

      if (cfg.l2 > 0.0) {
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
          auto& gw = grad.layers[l].weight.data();
          const auto& w = model.layers[l].weight.data();
          for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += cfg.l2 * w[k];
          for (std::size_t k = 0; k < model.layers[l].bias.size(); ++k)
            grad.layers[l].bias[k] += cfg.l2 * model.layers[l].bias[k];
        }
      }

      if (aligning) {
        double batch_align = 0.0;
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
          const auto res = align_loss_and_grad(model.layers[l].weight.data(), student_init[l],
                                               teachers[l], alpha, dkm);
          batch_align += res.loss;
          auto& gw = grad.layers[l].weight.data();
          const auto& keep = client.mask.layers[l];
          for (std::size_t k = 0; k < gw.size(); ++k)
            if (keep[k]) gw[k] += cfg.lambda_align * res.grad[k];
        }
        align_sum += batch_align;
        stats.flops += align_flops_per_batch;
      }

      apply_update_inplace(model, grad, client.mask, cfg.lr, cfg.gamma, reference);
      samples += batch.size();
      ++batches;
    }
  }
  stats.flops += flops::training(model, &client.mask, samples);
  if (aligning && batches > 0) stats.align_loss = align_sum / static_cast<double>(batches);

  stats.flops += refresh_compression(client, cfg, round);
  return stats;
}

SimState init_simulation(const SimConfig& cfg) {
  cfg.validate();
  SimState st;
  st.cfg = cfg;
  st.data = gen_synthetic({cfg.classes, static_cast<std::size_t>(cfg.dims),
                           static_cast<std::size_t>(cfg.samples), cfg.spread,
                           derive_seed(cfg.seed, Stream::kData)});
  Rng part_rng = make_rng(cfg.seed, Stream::kPartition);
  const Partition raw = dirichlet_partition(st.data.labels, cfg.classes,
                                            static_cast<std::size_t>(cfg.clients),
                                            cfg.dirichlet_alpha, part_rng);
  Rng split_rng = make_rng(cfg.seed, Stream::kSplit);
  const Partition part = split_train_test(raw, st.data.labels, cfg.test_fraction, split_rng);
  st.widths = model_widths(cfg);

  st.clients.resize(static_cast<std::size_t>(cfg.clients));
  st.inbox.resize(st.clients.size());
  for (std::size_t i = 0; i < st.clients.size(); ++i) {
    auto& c = st.clients[i];
    c.id = static_cast<std::uint32_t>(i);
    c.join_round = cfg.join_round_of(static_cast<int>(i));
    c.shard = part.clients[i];
  }

  // Bootstrap (round 0): initial clients warm up, compress and send along G^0.
  std::vector<std::uint32_t> active;
  for (auto& c : st.clients)
    if (c.join_round == 0) active.push_back(c.id);
  std::vector<std::uint64_t> ignored(active.size());
  for_each_parallel(active.size(), cfg.threads, [&](std::size_t k) {
    auto& c = st.clients[active[k]];
    activate(c, cfg, st.widths, st.data, 0, ignored[k]);
    refresh_compression(c, cfg, 0);
  });
  Rng graph_rng = make_rng(cfg.seed, Stream::kGraph, {0});
  const PeerGraph g0 = build_peer_graph(active, cfg.peers, graph_rng);
  std::vector<wire::Bytes> payload;
  for (auto id : g0.nodes) payload.push_back(encode_client(st.clients[id], cfg, 0));
  send_along(st, g0, payload, nullptr);
  st.next_round = 1;
  return st;
}

void run_round(SimState& st, int round, MetricsTable& metrics) {
  if (round < 1) throw ConfigError("rounds are numbered from 1");
  const SimConfig& cfg = st.cfg;

  std::vector<std::uint32_t> active;
  for (auto& c : st.clients)
    if (c.active || c.join_round == round) active.push_back(c.id);

  Rng graph_rng = make_rng(cfg.seed, Stream::kGraph, {static_cast<std::uint64_t>(round)});
  const PeerGraph g = build_peer_graph(active, cfg.peers, graph_rng);

  std::vector<std::vector<Message>> consumed(st.clients.size());
  consumed.swap(st.inbox);
  st.inbox.assign(st.clients.size(), {});

  const std::size_t n = g.nodes.size();
  std::vector<UpdateStats> stats(n);
  std::vector<wire::Bytes> payload(n);
  std::vector<std::optional<double>> acc(n);
  for_each_parallel(n, cfg.threads, [&](std::size_t k) {
    ClientState& c = st.clients[g.nodes[k]];
    std::uint64_t join_flops = 0;
    if (!c.active) activate(c, cfg, st.widths, st.data, round, join_flops);

    std::vector<ReceivedModel> received;
    for (const auto& m : consumed[c.id]) received.push_back(decode_message(m));
    stats[k] = local_update(c, received, round, cfg, st.data);
    stats[k].flops += join_flops;
    payload[k] = encode_client(c, cfg, round);
    if (!c.shard.test.empty()) {
      const Dataset test = gather(st.data, c.shard.test);
      acc[k] = evaluate(c.model, c.mask, test);
    }
  });

  std::vector<std::uint64_t> sent(n, 0);
  send_along(st, g, payload, &sent);

  for (std::size_t k = 0; k < n; ++k) {
    const ClientState& c = st.clients[g.nodes[k]];
    MetricsRow row;
    row.round = round;
    row.client_id = c.id;
    row.delayed = c.delayed();
    row.acc = acc[k];
    row.bytes_sent = sent[k];
    for (const auto& m : consumed[c.id]) row.bytes_recv += m.bytes.size();
    row.flops = stats[k].flops;
    row.align_loss = stats[k].align_loss;
    metrics.push_back(row);
  }
  st.next_round = round + 1;
}

MetricsTable run_simulation(const SimConfig& cfg, const RoundObserver& observer) {
  cfg.validate();
  MetricsTable metrics;
  if (cfg.rounds == 0) return metrics;
  SimState st = init_simulation(cfg);
  for (int r = 1; r <= cfg.rounds; ++r) {
    run_round(st, r, metrics);
    if (observer) observer(st, r);
  }
  return metrics;
}

}  // namespace dfedcad
