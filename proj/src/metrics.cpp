#include "dfedcad/metrics.hpp"

#include <ostream>
#include <sstream>

#include <json.hpp>

namespace dfedcad {

namespace {

nlohmann::ordered_json row_json(const MetricsRow& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["client_id"] = r.client_id;
  j["delayed"] = r.delayed;
  j["acc"] = r.acc ? nlohmann::ordered_json(*r.acc) : nlohmann::ordered_json(nullptr);
  j["bytes_sent"] = r.bytes_sent;
  j["bytes_recv"] = r.bytes_recv;
  j["flops"] = r.flops;
  j["align_loss"] =
      r.align_loss ? nlohmann::ordered_json(*r.align_loss) : nlohmann::ordered_json(nullptr);
  return j;
}

// Same number formatting as the JSON lines.
std::string number(double v) { return nlohmann::json(v).dump(); }

}  // namespace

void write_jsonl(const MetricsTable& table, std::ostream& out) {
  for (const auto& r : table) out << row_json(r).dump() << '\n';
}

std::string to_jsonl(const MetricsTable& table) {
  std::ostringstream s;
  write_jsonl(table, s);
  return s.str();
}

void write_csv(const MetricsTable& table, std::ostream& out) {
  bool first = true;
  for (const char* col : kMetricsColumns) {
    out << (first ? "" : ",") << col;
    first = false;
  }
  out << '\n';
  for (const auto& r : table) {
    out << r.round << ',' << r.client_id << ',' << (r.delayed ? "true" : "false") << ','
        << (r.acc ? number(*r.acc) : "") << ',' << r.bytes_sent << ',' << r.bytes_recv << ','
        << r.flops << ',' << (r.align_loss ? number(*r.align_loss) : "") << '\n';
  }
}

}  // namespace dfedcad
