#include "dfedcad/wire.hpp"

#include <bit>
#include <cstring>
#include <limits>
#include <string>

#include "dfedcad/errors.hpp"

namespace dfedcad::wire {

namespace {

class Writer {
public:
  explicit Writer(Bytes& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void f32(double v) { put_le(std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4); }
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes& out_;
};

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1, "u8")); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2, "u16")); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4, "u32")); }
  double f32() {
    return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(4, "f32"))));
  }
  std::span<const std::uint8_t> raw(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

private:
  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n)
      throw DecodeError(DecodeErrorKind::kTruncated,
                        std::string("stream truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
  }
  std::uint64_t get_le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::size_t packed_bytes(std::size_t count, std::size_t bits) { return (count * bits + 7) / 8; }

void write_header(Writer& w, std::uint8_t version, std::uint32_t client, std::uint32_t round,
                  std::size_t layers) {
  if (layers > std::numeric_limits<std::uint16_t>::max())
    throw ConfigError("too many layers for the wire format");
  for (auto b : kMagic) w.u8(b);
  w.u8(version);
  w.u32(client);
  w.u32(round);
  w.u16(static_cast<std::uint16_t>(layers));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max())
    throw ConfigError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

void write_biases(Writer& w, const std::vector<std::vector<double>>& biases) {
  for (const auto& b : biases) {
    w.u32(checked_u32(b.size(), "bias length"));
    for (double v : b) w.f32(v);
  }
}

std::vector<double> read_bias(Reader& r) {
  const std::uint32_t len = r.u32();
  if (r.remaining() / 4 < len)
    throw DecodeError(DecodeErrorKind::kTruncated, "stream truncated inside bias block");
  std::vector<double> b(len);
  for (auto& v : b) v = r.f32();
  return b;
}

}  // namespace

Bytes pack_indices(std::span<const std::uint16_t> indices, std::size_t bits) {
  Bytes out(packed_bytes(indices.size(), bits), 0);
  std::size_t bitpos = 0;
  for (std::uint16_t idx : indices) {
    for (std::size_t b = 0; b < bits; ++b, ++bitpos)
      if ((idx >> b) & 1u) out[bitpos >> 3] |= static_cast<std::uint8_t>(1u << (bitpos & 7));
  }
  return out;
}

std::vector<std::uint16_t> unpack_indices(std::span<const std::uint8_t> packed, std::size_t count,
                                          std::size_t bits) {
  if (packed.size() < packed_bytes(count, bits))
    throw DecodeError(DecodeErrorKind::kTruncated, "packed index block too short");
  std::vector<std::uint16_t> out(count, 0);
  std::size_t bitpos = 0;
  for (auto& idx : out) {
    for (std::size_t b = 0; b < bits; ++b, ++bitpos)
      if ((packed[bitpos >> 3] >> (bitpos & 7)) & 1u) idx |= static_cast<std::uint16_t>(1u << b);
  }
  return out;
}

std::size_t encoded_size(const CompressedModel& model) {
  std::size_t n = kHeaderBytes;
  for (const auto& l : model.layers)
    n += kLayerMetaBytes + 4 * l.table.size() +
         packed_bytes(l.weight_count(), index_bits(l.table.size()));
  for (const auto& b : model.biases) n += 4 + 4 * b.size();
  return n;
}

Bytes encode(const CompressedModel& model) {
  if (model.biases.size() != model.layers.size())
    throw CorruptionError("bias vector count does not match layer count");
  Bytes out;
  out.reserve(encoded_size(model));
  Writer w(out);
  write_header(w, kVersionClustered, model.client_id, model.round, model.layers.size());
  for (const auto& l : model.layers) {
    const std::size_t k = l.table.size();
    if (k < 2 || k > std::numeric_limits<std::uint16_t>::max())
      throw CorruptionError("centroid table size out of range");
    if (l.table.values[0] != 0.0) throw CorruptionError("centroid 0 must be zero");
    if (l.indices.size() != l.weight_count())
      throw CorruptionError("index count does not match layer shape");
    for (auto idx : l.indices.indices)
      if (idx >= k) throw CorruptionError("centroid index out of range");
    w.u32(checked_u32(l.rows, "rows"));
    w.u32(checked_u32(l.cols, "cols"));
    w.u16(static_cast<std::uint16_t>(k));
    for (double v : l.table.values) w.f32(v);
    w.raw(pack_indices(l.indices.indices, index_bits(k)));
  }
  write_biases(w, model.biases);
  return out;
}

std::uint8_t peek_version(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5)
    throw DecodeError(DecodeErrorKind::kTruncated, "stream shorter than magic + version");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DecodeError(DecodeErrorKind::kBadMagic, "bad magic, expected \"DCAD\"");
  return bytes[4];
}

CompressedModel decode(std::span<const std::uint8_t> bytes) {
  const std::uint8_t version = peek_version(bytes);
  if (version != kVersionClustered)
    throw DecodeError(DecodeErrorKind::kBadVersion,
                      "unsupported version " + std::to_string(version));
  Reader r(bytes);
  r.raw(5, "magic");
  CompressedModel m;
  m.client_id = r.u32();
  m.round = r.u32();
  const std::uint16_t layers = r.u16();
  for (std::uint16_t l = 0; l < layers; ++l) {
    CompressedLayer layer;
    layer.rows = r.u32();
    layer.cols = r.u32();
    const std::uint16_t k = r.u16();
    if (k < 2)
      throw DecodeError(DecodeErrorKind::kMalformed,
                        "layer " + std::to_string(l) + " has K=" + std::to_string(k));
    if (r.remaining() / 4 < k)
      throw DecodeError(DecodeErrorKind::kTruncated, "stream truncated inside centroid table");
    layer.table.values.resize(k);
    for (auto& v : layer.table.values) v = r.f32();
    if (layer.table.values[0] != 0.0)
      throw DecodeError(DecodeErrorKind::kMalformed,
                        "layer " + std::to_string(l) + " centroid 0 is not zero");
    const std::size_t n = layer.weight_count();
    const std::size_t bits = index_bits(k);
    if (n > r.remaining() * 8 / bits)
      throw DecodeError(DecodeErrorKind::kTruncated, "stream truncated inside index block");
    auto packed = r.raw(packed_bytes(n, bits), "index block");
    layer.indices.indices = unpack_indices(packed, n, bits);
    for (auto idx : layer.indices.indices)
      if (idx >= k)
        throw DecodeError(DecodeErrorKind::kIndexOverflow,
                          "layer " + std::to_string(l) + " index " + std::to_string(idx) +
                              " >= K=" + std::to_string(k));
    m.layers.push_back(std::move(layer));
  }
  for (std::uint16_t l = 0; l < layers; ++l) m.biases.push_back(read_bias(r));
  if (r.remaining() != 0)
    throw DecodeError(DecodeErrorKind::kMalformed,
                      std::to_string(r.remaining()) + " trailing bytes after model");
  return m;
}

Bytes encode_dense(const DenseMessage& msg) {
  Bytes out;
  Writer w(out);
  write_header(w, kVersionDense, msg.client_id, msg.round, msg.model.layers.size());
  std::vector<std::vector<double>> biases;
  for (const auto& l : msg.model.layers) {
    w.u32(checked_u32(l.weight.rows(), "rows"));
    w.u32(checked_u32(l.weight.cols(), "cols"));
    for (double v : l.weight.data()) w.f32(v);
    biases.push_back(l.bias);
  }
  write_biases(w, biases);
  return out;
}

DenseMessage decode_dense(std::span<const std::uint8_t> bytes) {
  const std::uint8_t version = peek_version(bytes);
  if (version != kVersionDense)
    throw DecodeError(DecodeErrorKind::kBadVersion,
                      "expected dense stream, got version " + std::to_string(version));
  Reader r(bytes);
  r.raw(5, "magic");
  DenseMessage msg;
  msg.client_id = r.u32();
  msg.round = r.u32();
  const std::uint16_t layers = r.u16();
  for (std::uint16_t l = 0; l < layers; ++l) {
    const std::size_t rows = r.u32(), cols = r.u32();
    if (r.remaining() / 4 < rows * cols)
      throw DecodeError(DecodeErrorKind::kTruncated, "stream truncated inside dense weights");
    Matrix w(rows, cols);
    for (auto& v : w.data()) v = r.f32();
    msg.model.layers.push_back({std::move(w), {}});
  }
  for (auto& layer : msg.model.layers) layer.bias = read_bias(r);
  if (r.remaining() != 0)
    throw DecodeError(DecodeErrorKind::kMalformed, "trailing bytes after dense model");
  return msg;
}

}  // namespace dfedcad::wire
