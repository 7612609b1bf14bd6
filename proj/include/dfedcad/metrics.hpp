#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dfedcad {

/// One row per (round, active client).
struct MetricsRow {
  int round = 0;
  std::uint32_t client_id = 0;
  bool delayed = false;
  std::optional<double> acc;  // absent when the client has no test split
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_recv = 0;
  std::uint64_t flops = 0;
  std::optional<double> align_loss;  // mean over batches, only when aligning

  bool operator==(const MetricsRow&) const = default;
};

using MetricsTable = std::vector<MetricsRow>;

inline constexpr const char* kMetricsColumns[] = {"round",      "client_id",  "delayed", "acc",
                                                  "bytes_sent", "bytes_recv", "flops",   "align_loss"};

/// One JSON object per line, fields in kMetricsColumns order.
std::string to_jsonl(const MetricsTable& table);
void write_jsonl(const MetricsTable& table, std::ostream& out);

/// CSV with a header row; absent values are empty cells.
void write_csv(const MetricsTable& table, std::ostream& out);

}  // namespace dfedcad
