#include "dfedcad/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "dfedcad/errors.hpp"

namespace dfedcad {

using nlohmann::json;

void SimConfig::validate() const {
  std::vector<std::string> bad;
  auto need = [&](bool ok, const char* field, const char* rule) {
    if (!ok) bad.push_back(std::string(field) + " " + rule);
  };
  need(rounds >= 0, "rounds", "must be >= 0");
  need(batch_size >= 1, "batch_size", "must be >= 1");
  need(lr > 0.0, "lr", "must be > 0");
  need(local_epochs >= 1, "local_epochs", "must be >= 1");
  need(lambda_align >= 0.0, "lambda_align", "must be >= 0");
  need(gamma >= 0.0, "gamma", "must be >= 0");
  need(l2 >= 0.0, "l2", "must be >= 0");
  need(peers >= 0, "peers", "must be >= 0");
  need(clusters >= 2 && clusters <= 65535, "clusters", "must be in [2, 65535]");
  need(wcp_max_iters >= 1, "wcp_max_iters", "must be >= 1");
  need(wcp_tol > 0.0, "wcp_tol", "must be > 0");
  need(dkm_iters >= 1, "dkm_iters", "must be >= 1");
  need(alpha_mix >= 0.0 && alpha_mix <= 1.0, "alpha_mix", "must be in [0, 1]");
  need(beta_dist > 0.0, "beta_dist", "must be > 0");
  need(cfd_sigma > 0.0, "cfd_sigma", "must be > 0");
  need(cfd_freqs >= 1, "cfd_freqs", "must be >= 1");
  need(!align_rounds || *align_rounds >= 0, "align_rounds", "must be >= 0");
  need(classes >= 2, "classes", "must be >= 2");
  need(dims >= 2, "dims", "must be >= 2");
  need(samples >= classes && samples >= clients, "samples", "must be >= classes and >= clients");
  need(spread >= 0.0, "spread", "must be >= 0");
  need(clients >= 1, "clients", "must be >= 1");
  need(dirichlet_alpha > 0.0, "dirichlet_alpha", "must be > 0");
  need(test_fraction > 0.0 && test_fraction < 1.0, "test_fraction", "must be in (0, 1)");
  need(std::all_of(hidden.begin(), hidden.end(), [](int h) { return h >= 1; }), "hidden",
       "widths must be >= 1");
  std::set<int> seen;
  bool ids_ok = true;
  for (int id : delayed_clients) ids_ok &= id >= 0 && id < clients && seen.insert(id).second;
  need(ids_ok, "delayed_clients", "must be distinct ids in [0, clients)");
  need(join_round >= 1, "join_round", "must be >= 1");
  need(threads >= 1, "threads", "must be >= 1");
  need(!label.empty(), "label", "must not be empty");

  // Every clustered layer must hold at least K weights.
  std::vector<int> widths{dims};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(classes);
  bool layers_ok = true;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    layers_ok &= static_cast<long long>(widths[l]) * widths[l + 1] >= clusters;
  need(layers_ok || dense_exchange, "clusters", "exceeds the weight count of some layer");

  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "invalid configuration:";
    for (const auto& b : bad) msg << "\n  " << b;
    throw ConfigError(msg.str());
  }
}

int SimConfig::join_round_of(int client) const {
  return std::find(delayed_clients.begin(), delayed_clients.end(), client) !=
                 delayed_clients.end()
             ? join_round
             : 0;
}

namespace {

template <typename T>
void read(const json& doc, const char* key, T& field, std::vector<std::string>& bad) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  bool ok = true;
  if constexpr (std::is_same_v<T, int>)
    ok = it->is_number_integer();
  else if constexpr (std::is_same_v<T, std::uint64_t>)
    ok = it->is_number_unsigned() || (it->is_number_integer() && it->get<std::int64_t>() >= 0);
  else if constexpr (std::is_same_v<T, double>)
    ok = it->is_number();
  if (ok) {
    try {
      field = it->get<T>();
    } catch (const json::exception&) {
      ok = false;
    }
  }
  if (!ok) bad.push_back(std::string(key) + " has the wrong type");
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {
      "rounds",        "batch_size",   "lr",          "local_epochs",   "lambda_align",
      "gamma",         "l2",           "peers",       "clusters",       "wcp_max_iters",
      "wcp_tol",       "dense_exchange", "dkm_iters", "alpha_mix",      "beta_dist",
      "cfd_sigma",     "cfd_freqs",    "align_rounds", "classes",       "dims",
      "samples",       "spread",       "clients",     "dirichlet_alpha", "test_fraction",
      "hidden",        "delayed_clients", "join_round", "seed",         "threads",
      "label",         "out_dir"};
  std::vector<std::string> bad;
  for (const auto& [key, _] : doc.items())
    if (!known.count(key)) bad.push_back("unknown key \"" + key + "\"");

  RunConfig rc;
  SimConfig& c = rc.sim;
  read(doc, "rounds", c.rounds, bad);
  read(doc, "batch_size", c.batch_size, bad);
  read(doc, "lr", c.lr, bad);
  read(doc, "local_epochs", c.local_epochs, bad);
  read(doc, "lambda_align", c.lambda_align, bad);
  read(doc, "gamma", c.gamma, bad);
  read(doc, "l2", c.l2, bad);
  read(doc, "peers", c.peers, bad);
  read(doc, "clusters", c.clusters, bad);
  read(doc, "wcp_max_iters", c.wcp_max_iters, bad);
  read(doc, "wcp_tol", c.wcp_tol, bad);
  read(doc, "dense_exchange", c.dense_exchange, bad);
  read(doc, "dkm_iters", c.dkm_iters, bad);
  read(doc, "alpha_mix", c.alpha_mix, bad);
  read(doc, "beta_dist", c.beta_dist, bad);
  read(doc, "cfd_sigma", c.cfd_sigma, bad);
  read(doc, "cfd_freqs", c.cfd_freqs, bad);
  if (auto it = doc.find("align_rounds"); it != doc.end() && !it->is_null()) {
    int v = 0;
    read(doc, "align_rounds", v, bad);
    c.align_rounds = v;
  }
  read(doc, "classes", c.classes, bad);
  read(doc, "dims", c.dims, bad);
  read(doc, "samples", c.samples, bad);
  read(doc, "spread", c.spread, bad);
  read(doc, "clients", c.clients, bad);
  read(doc, "dirichlet_alpha", c.dirichlet_alpha, bad);
  read(doc, "test_fraction", c.test_fraction, bad);
  read(doc, "hidden", c.hidden, bad);
  read(doc, "delayed_clients", c.delayed_clients, bad);
  read(doc, "join_round", c.join_round, bad);
  read(doc, "seed", c.seed, bad);
  read(doc, "threads", c.threads, bad);
  read(doc, "label", c.label, bad);
  std::string out = rc.out_dir.string();
  read(doc, "out_dir", out, bad);
  rc.out_dir = out;

  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }
  c.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const SimConfig& c) {
  return json{{"rounds", c.rounds},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"local_epochs", c.local_epochs},
              {"lambda_align", c.lambda_align},
              {"gamma", c.gamma},
              {"l2", c.l2},
              {"peers", c.peers},
              {"clusters", c.clusters},
              {"wcp_max_iters", c.wcp_max_iters},
              {"wcp_tol", c.wcp_tol},
              {"dense_exchange", c.dense_exchange},
              {"dkm_iters", c.dkm_iters},
              {"alpha_mix", c.alpha_mix},
              {"beta_dist", c.beta_dist},
              {"cfd_sigma", c.cfd_sigma},
              {"cfd_freqs", c.cfd_freqs},
              {"align_rounds", c.align_rounds ? json(*c.align_rounds) : json(nullptr)},
              {"classes", c.classes},
              {"dims", c.dims},
              {"samples", c.samples},
              {"spread", c.spread},
              {"clients", c.clients},
              {"dirichlet_alpha", c.dirichlet_alpha},
              {"test_fraction", c.test_fraction},
              {"hidden", c.hidden},
              {"delayed_clients", c.delayed_clients},
              {"join_round", c.join_round},
              {"seed", c.seed},
              {"threads", c.threads},
              {"label", c.label}};
}

}  // namespace dfedcad
