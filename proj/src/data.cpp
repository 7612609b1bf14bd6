#include "dfedcad/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "dfedcad/errors.hpp"

namespace dfedcad {

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (spec.dims < 2) throw ConfigError("synthetic data needs at least 2 dimensions");
  if (spec.samples < static_cast<std::size_t>(spec.classes))
    throw ConfigError("synthetic data needs at least one sample per class");
  if (!(spec.spread >= 0.0)) throw ConfigError("spread must be non-negative");

  Rng rng(spec.seed);
  std::uniform_int_distribution<int> pick(0, spec.classes - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset d;
  d.num_classes = spec.classes;
  d.features = Matrix(spec.samples, spec.dims);
  d.labels.resize(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const int y = i < static_cast<std::size_t>(spec.classes) ? static_cast<int>(i) : pick(rng);
    d.labels[i] = y;
    const double angle = 2.0 * std::numbers::pi * y / spec.classes;
    auto row = d.features.row(i);
    for (std::size_t k = 0; k < spec.dims; ++k) row[k] = spec.spread * noise(rng);
    row[0] += std::cos(angle);
    row[1] += std::sin(angle);
  }
  return d;
}

Partition dirichlet_partition(std::span<const int> labels, int num_classes,
                              std::size_t num_clients, double alpha, Rng& rng) {
  if (num_clients < 1) throw ConfigError("need at least one client");
  if (!(alpha > 0.0)) throw ConfigError("Dirichlet alpha must be positive");
  if (labels.size() < num_clients)
    throw ConfigError("fewer samples than clients; cannot give every client data");

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ShapeError("label out of range");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }

  Partition p;
  p.clients.resize(num_clients);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (const auto& members : by_class) {
    std::vector<double> prop(num_clients);
    for (auto& v : prop) v = gamma(rng);
    if (std::accumulate(prop.begin(), prop.end(), 0.0) <= 0.0) {
      // All draws underflowed; give the whole class to one client.
      std::fill(prop.begin(), prop.end(), 0.0);
      prop[std::uniform_int_distribution<std::size_t>(0, num_clients - 1)(rng)] = 1.0;
    }
    std::discrete_distribution<std::size_t> route(prop.begin(), prop.end());
    for (std::size_t idx : members) p.clients[route(rng)].train.push_back(idx);
  }

  for (auto& c : p.clients) {
    if (!c.train.empty()) continue;
    auto largest = std::max_element(p.clients.begin(), p.clients.end(),
                                     [](const ClientShard& a, const ClientShard& b) {
                                       return a.train.size() < b.train.size();
                                     });
    c.train.push_back(largest->train.back());
    largest->train.pop_back();
  }
  for (auto& c : p.clients) std::sort(c.train.begin(), c.train.end());
  return p;
}

Partition split_train_test(const Partition& partition, std::span<const int> labels,
                           double test_fraction, Rng& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must be in (0, 1)");
  Partition out;
  for (const auto& shard : partition.clients) {
    std::vector<std::size_t> all = shard.train;
    all.insert(all.end(), shard.test.begin(), shard.test.end());
    std::sort(all.begin(), all.end());
    ClientShard res;
    const std::size_t n = all.size();
    if (n < 2) {
      res.train = all;
      res.test_empty_flag = true;
      out.clients.push_back(std::move(res));
      continue;
    }

    // Group by class in first-seen order (indices are sorted, so deterministic).
    std::vector<int> classes;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t idx : all) {
      auto it = std::find(classes.begin(), classes.end(), labels[idx]);
      if (it == classes.end()) {
        classes.push_back(labels[idx]);
        groups.emplace_back();
        it = classes.end() - 1;
      }
      groups[static_cast<std::size_t>(it - classes.begin())].push_back(idx);
    }

    std::size_t total = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
    total = std::clamp<std::size_t>(total, 1, n - 1);

    // Largest-remainder apportionment of `total` over classes.
    std::vector<std::size_t> take(groups.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    const double scale = static_cast<double>(total) / static_cast<double>(n);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double target = static_cast<double>(groups[g].size()) * scale;
      take[g] = static_cast<std::size_t>(std::floor(target));
      assigned += take[g];
      rem.emplace_back(target - std::floor(target), g);
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++take[rem[r].second];

    for (std::size_t g = 0; g < groups.size(); ++g) {
      auto members = groups[g];
      std::shuffle(members.begin(), members.end(), rng);
      res.test.insert(res.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take[g]));
      res.train.insert(res.train.end(), members.begin() + static_cast<std::ptrdiff_t>(take[g]), members.end());
    }
    std::sort(res.train.begin(), res.train.end());
    std::sort(res.test.begin(), res.test.end());
    out.clients.push_back(std::move(res));
  }
  return out;
}

double label_entropy(std::span<const std::size_t> indices, std::span<const int> labels,
                     int num_classes) {
  if (indices.empty()) return 0.0;
  std::vector<double> hist(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t i : indices) hist[static_cast<std::size_t>(labels[i])] += 1.0;
  double h = 0.0;
  for (double c : hist) {
    if (c == 0.0) continue;
    const double p = c / static_cast<double>(indices.size());
    h -= p * std::log(p);
  }
  return h;
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DecodeError(DecodeErrorKind::kTruncated, "dataset file truncated");
  return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
         std::uint32_t{b[3]} << 24;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  put_u32(out, static_cast<std::uint32_t>(data.features.cols()));
  put_u32(out, static_cast<std::uint32_t>(data.num_classes));
  for (double v : data.features.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  for (int y : data.labels) {
    const char b[2] = {static_cast<char>(y), static_cast<char>(y >> 8)};
    out.write(b, 2);
  }
  if (!out) throw ConfigError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  const std::uint32_t m = get_u32(in), d = get_u32(in), c = get_u32(in);
  Dataset out;
  out.num_classes = static_cast<int>(c);
  out.features = Matrix(m, d);
  for (double& v : out.features.data()) v = std::bit_cast<float>(get_u32(in));
  out.labels.resize(m);
  for (int& y : out.labels) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2))
      throw DecodeError(DecodeErrorKind::kTruncated, "dataset file truncated in labels");
    y = b[0] | b[1] << 8;
    if (y >= static_cast<int>(c)) throw DecodeError(DecodeErrorKind::kMalformed, "label >= C");
  }
  return out;
}

}  // namespace dfedcad
