#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dfedcad/cfd.hpp"
#include "dfedcad/config.hpp"
#include "dfedcad/data.hpp"
#include "dfedcad/dkm.hpp"
#include "dfedcad/metrics.hpp"
#include "dfedcad/tensor.hpp"
#include "dfedcad/wcp.hpp"
#include "dfedcad/wire.hpp"

namespace dfedcad {

struct ClientState {
  std::uint32_t id = 0;
  int join_round = 0;
  bool active = false;
  ModelParams model;
  PruneMask mask;
  std::optional<CompressedModel> compressed;  // latest WCP output
  ClientShard shard;

  bool delayed() const noexcept { return join_round > 0; }
};

/// Directed "sender -> receivers" adjacency for one round.
struct PeerGraph {
  int round = 0;
  std::vector<std::uint32_t> nodes;                // active clients, ascending
  std::vector<std::vector<std::uint32_t>> out;     // parallel to nodes, ascending
  std::size_t edge_count() const;
};

/// Each client in `active` draws min(n, |active| - 1) distinct peers
/// uniformly from the others.
PeerGraph build_peer_graph(std::span<const std::uint32_t> active, int n, Rng& rng);

struct Message {
  std::uint32_t sender = 0;
  wire::Bytes bytes;
};

/// Work done by one client in one round.
struct UpdateStats {
  std::uint64_t flops = 0;
  std::optional<double> align_loss;
};

/// Whole-simulation state between rounds.
struct SimState {
  SimConfig cfg;
  Dataset data;
  std::vector<std::size_t> widths;
  std::vector<ClientState> clients;
  std::vector<std::vector<Message>> inbox;  // messages to consume next round
  int next_round = 1;
};

/// One dense SGD epoch over the client's training shard (no mask, no
/// reference pull). Expects a freshly initialised model; returns FLOPs spent.
std::uint64_t warmup_client(ClientState& client, const Dataset& data, double lr,
                            std::size_t batch_size, Rng& batch_rng);

/// Decoded neighbour message: its dense reconstruction and, for clustered
/// exchange, the compressed form it was sent in.
struct ReceivedModel {
  std::uint32_t sender = 0;
  std::optional<CompressedModel> compressed;
  ModelParams dense;
};

/// Accepts both clustered and dense (baseline) streams.
ReceivedModel decode_message(const Message& msg);

/// Local training for one round: reference averaging, optional
/// CFD-weighted DKM alignment (delayed clients only), masked SGD with the
/// reference pull, then WCP refresh of the mask and compressed model.
UpdateStats local_update(ClientState& client, std::span<const ReceivedModel> received, int round,
                         const SimConfig& cfg, const Dataset& data);

/// Builds data, partitions it, and runs the bootstrap step: clients active
/// from the start are initialised, warmed up, compressed, and send along G^0.
SimState init_simulation(const SimConfig& cfg);

/// One synchronous round. Appends one metrics row per active client.
void run_round(SimState& state, int round, MetricsTable& metrics);

using RoundObserver = std::function<void(const SimState&, int round)>;

/// Runs rounds 1..R.
MetricsTable run_simulation(const SimConfig& cfg, const RoundObserver& observer = {});

/// Encoded message for a client's current state.
wire::Bytes encode_client(const ClientState& client, const SimConfig& cfg, int round);

}  // namespace dfedcad
