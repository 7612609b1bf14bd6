#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dfedcad {

/// Everything that determines a simulation. Two runs with equal configs
/// produce identical metrics.
struct SimConfig {
  // Schedule and optimisation.
  int rounds = 30;
  int batch_size = 32;
  double lr = 0.05;
  int local_epochs = 1;
  double lambda_align = 1.0;  // weight of the alignment loss
  double gamma = 0.1;         // pull towards the neighbour reference model
  double l2 = 0.0;            // optional weight decay on all parameters
  int peers = 3;

  // Compression.
  int clusters = 16;
  int wcp_max_iters = 50;
  double wcp_tol = 1e-6;
  bool dense_exchange = false;  // baseline: ship float weights, no pruning

  // Alignment.
  int dkm_iters = 5;
  double alpha_mix = 0.5;
  double beta_dist = 1.0;
  double cfd_sigma = 1.0;
  int cfd_freqs = 1024;
  std::optional<int> align_rounds;  // unset: align every round after joining

  // Data and model.
  int classes = 4;
  int dims = 16;
  int samples = 4000;
  double spread = 0.6;
  int clients = 8;
  double dirichlet_alpha = 0.4;
  double test_fraction = 0.2;
  std::vector<int> hidden = {32, 32};

  // Delayed participation.
  std::vector<int> delayed_clients = {7};
  int join_round = 5;

  std::uint64_t seed = 1;
  int threads = 1;
  std::string label = "dfedcad";

  /// Throws ConfigError naming every offending field.
  void validate() const;

  int join_round_of(int client) const;
};

/// SimConfig plus where to write results.
struct RunConfig {
  SimConfig sim;
  std::filesystem::path out_dir = "out";
};

/// Strict parse: unknown keys and wrong types are errors, missing keys take
/// the defaults above.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const SimConfig& cfg);

}  // namespace dfedcad
