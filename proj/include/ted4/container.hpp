#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ted4/common.hpp"
#include "ted4/model.hpp"
#include "ted4/range_coder.hpp"

namespace ted4 {

inline constexpr std::array<std::uint8_t, 4> kMagic{'T', 'E', 'D', '4'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kSectionAlign = 32;

enum class SectionId : std::uint32_t { positions = 1, weights = 2, masks = 3, attributes = 4 };
inline constexpr int kSectionCount = 4;

inline const char* section_name(SectionId id) {
  switch (id) {
    case SectionId::positions: return "positions";
    case SectionId::weights: return "weights";
    case SectionId::masks: return "masks";
    case SectionId::attributes: return "attributes";
  }
  return "unknown";
}

struct SectionEntry {
  SectionId id = SectionId::positions;
  std::uint32_t offset = 0;
  std::uint32_t length = 0;
  std::uint32_t crc = 0;
};

/// Fixed-layout header; every field is decoder-visible configuration.
struct ContainerHeader {
  ModelConfig config;
  std::uint32_t anchor_count = 0;
  double lambda_rate = 0.0;  // tag only
  std::array<std::uint32_t, kAttributeTypes> symbol_bound{};
  std::vector<SectionEntry> sections;
  std::size_t size = 0;  // bytes up to and including the header checksum
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

namespace detail {

class ByteWriter {
 public:
  std::vector<std::uint8_t> bytes;

  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const std::uint8_t> b) { bytes.insert(bytes.end(), b.begin(), b.end()); }
  void pad_to(std::size_t align) {
    while (bytes.size() % align) bytes.push_back(0);
  }
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> b, std::string what) : bytes_(b), what_(std::move(what)) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) fail(ErrorKind::format, what_ + " is truncated");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::uint16_t checked_u16(long v, const char* what) {
  require(v >= 0 && v <= 0xFFFF, std::string(what) + " does not fit the container header");
  return static_cast<std::uint16_t>(v);
}

inline std::vector<Mlp*> weight_order(Model& m) {
  std::vector<Mlp*> out{&m.deform.project, &m.deform.deform, &m.decoders.geometry, &m.decoders.appearance, &m.hyper.mlp};
  for (Mlp& n : m.ar.nets) out.push_back(&n);
  return out;
}

/// Visits every transmitted attribute of anchor `a` in stream order. `emit`
/// receives (value reference, mu, sigma, q, type). Feature chunks are
/// conditioned on the values already visited, which the decoder holds too.
template <class Emit>
void visit_attributes(const Model& m, Anchor& a, Emit&& emit) {
  const AnchorDims& d = m.config.dims;
  const HyperOutput h = m.hyper.forward(fp16_position(a));
  const int cs = m.ar.chunk_size();
  for (int k = 0; k < m.ar.chunks; ++k) {
    const ChunkParams p = channel_ar_params(m.ar, h, a.feature(), k);
    for (int c = 0; c < cs; ++c) emit(a.feature()[k * cs + c], p.mu[c], p.sigma(c), h.q[0], AttributeType::feature);
  }
  const auto hyper_emit = [&](std::span<double> values, AttributeType t, int first) {
    const int ti = static_cast<int>(t);
    for (std::size_t j = 0; j < values.size(); ++j) {
      const int e = first + static_cast<int>(j);
      emit(values[j], h.mu[ti][e], h.sigma(t, e), h.q[ti], t);
    }
  };
  for (int s = 0; s < d.offsets; ++s)
    if (a.offset_active(s)) hyper_emit(a.offsets().subspan(3 * s, 3), AttributeType::offsets, 3 * s);
  hyper_emit(a.scaling(), AttributeType::scaling, 0);
  if (a.dynamic()) hyper_emit(a.temporal_feature(), AttributeType::temporal_feature, 0);
  if (codes_activation(m.config)) hyper_emit(a.activation(), AttributeType::activation, 0);
}

inline void write_header_body(ByteWriter& w, const ContainerHeader& h) {
  const ModelConfig& c = h.config;
  w.raw(kMagic);
  w.u16(kFormatVersion);
  w.u16(c.temporal_activation ? 1 : 0);
  w.u32(h.anchor_count);
  w.u16(checked_u16(c.dims.offsets, "K"));
  w.u16(checked_u16(c.dims.feature_dim, "feature dimension"));
  w.u16(checked_u16(c.dims.temporal_dim, "temporal feature dimension"));
  w.u16(checked_u16(c.bank_dim, "bank dimension"));
  w.u16(checked_u16(c.frame_count, "frame count"));
  w.u16(checked_u16(c.deform_hidden, "deformation width"));
  w.u16(checked_u16(c.decoder_hidden, "decoder width"));
  w.u16(checked_u16(c.pe_bands, "encoding bands"));
  w.u16(checked_u16(c.hyper_hidden, "hyperprior width"));
  w.u16(checked_u16(c.ar_chunks, "chunk count"));
  w.u16(checked_u16(c.ar_hidden, "context model width"));
  w.u16(0);
  w.f64(h.lambda_rate);
  w.f64(c.voxel_size);
  w.f64(c.dx_scale);
  for (double v : c.box_min) w.f64(v);
  for (double v : c.box_max) w.f64(v);
  for (double v : c.base_step) w.f64(v);
  for (std::uint32_t s : h.symbol_bound) w.u32(s);
  w.u32(static_cast<std::uint32_t>(h.sections.size()));
  for (const SectionEntry& s : h.sections) {
    w.u32(static_cast<std::uint32_t>(s.id));
    w.u32(s.offset);
    w.u32(s.length);
    w.u32(s.crc);
  }
}

}  // namespace detail

/// Header field size in bytes for `sections` entries (checksum included).
inline std::size_t header_size(std::size_t sections) {
  return 4 + 2 + 2 + 4 + 12 * 2 + 8 * 3 + 8 * 6 + 8 * kAttributeTypes + 4 * kAttributeTypes + 4 + 16 * sections + 4;
}

/// Per-type symbol bound: largest |index| in the model plus 2.
inline std::array<std::uint32_t, kAttributeTypes> symbol_bounds(const Model& q) {
  std::array<long, kAttributeTypes> max_index{};
  Model copy = q;
  for (Anchor& a : copy.anchors.anchors) {
    detail::visit_attributes(copy, a, [&](double& v, double, double, double step, AttributeType t) {
      max_index[static_cast<int>(t)] = std::max(max_index[static_cast<int>(t)], std::abs(quantization_index(v, step)));
    });
  }
  std::array<std::uint32_t, kAttributeTypes> out{};
  for (int t = 0; t < kAttributeTypes; ++t) out[t] = static_cast<std::uint32_t>(std::min(max_index[t] + 2, kMaxSymbolBound));
  return out;
}

/// Serializes a quantized model (see quantize_model). Anchors must already be
/// in canonical order with ids equal to their index.
inline std::vector<std::uint8_t> write_container(const Model& q, double lambda_rate = 0.0) {
  for (std::size_t i = 0; i < q.size(); ++i) {
    require(q.anchors.anchors[i].id == static_cast<int>(i), "container input must be a quantized model");
    if (i > 0) require(!canonical_less(q.anchors.anchors[i], q.anchors.anchors[i - 1]), "anchors are not in canonical order");
  }
  Model m = q;
  ContainerHeader h;
  h.config = m.config;
  h.anchor_count = static_cast<std::uint32_t>(m.size());
  h.lambda_rate = lambda_rate;
  h.symbol_bound = symbol_bounds(m);

  std::vector<std::vector<std::uint8_t>> payload(kSectionCount);
  {
    detail::ByteWriter w;
    for (const Anchor& a : m.anchors.anchors)
      for (double x : a.position()) w.u16(to_half_bits(x));
    payload[0] = std::move(w.bytes);
  }
  {
    detail::ByteWriter w;
    for (Mlp* n : detail::weight_order(m))
      for (double p : n->params()) w.f32(p);
    for (double v : m.bank.values) w.f32(v);
    payload[1] = std::move(w.bytes);
  }
  {
    std::vector<bool> offset_bits, temporal_bits;
    for (const Anchor& a : m.anchors.anchors) {
      for (int s = 0; s < a.dims.offsets; ++s) offset_bits.push_back(a.offset_active(s));
      temporal_bits.push_back(a.dynamic());
    }
    const auto ob = encode_mask(offset_bits), tb = encode_mask(temporal_bits);
    detail::ByteWriter w;
    w.u32(static_cast<std::uint32_t>(ob.size()));
    w.raw(ob);
    w.u32(static_cast<std::uint32_t>(tb.size()));
    w.raw(tb);
    payload[2] = std::move(w.bytes);
  }
  {
    RangeEncoder enc;
    for (Anchor& a : m.anchors.anchors) {
      detail::visit_attributes(m, a, [&](double& v, double mu, double sigma, double step, AttributeType t) {
        const SymbolCdf cdf = build_cdf(mu, sigma, step, h.symbol_bound[static_cast<int>(t)]);
        enc.encode_symbol(quantization_index(v, step), cdf);
      });
    }
    payload[3] = enc.finish();
  }

  std::size_t at = header_size(kSectionCount);
  at = (at + kSectionAlign - 1) / kSectionAlign * kSectionAlign;
  for (int s = 0; s < kSectionCount; ++s) {
    SectionEntry e;
    e.id = static_cast<SectionId>(s + 1);
    e.offset = static_cast<std::uint32_t>(at);
    e.length = static_cast<std::uint32_t>(payload[s].size());
    e.crc = crc32_of(payload[s]);
    h.sections.push_back(e);
    at += payload[s].size();
    at = (at + kSectionAlign - 1) / kSectionAlign * kSectionAlign;
  }
  detail::ByteWriter w;
  detail::write_header_body(w, h);
  w.u32(crc32_of(w.bytes));
  for (int s = 0; s < kSectionCount; ++s) {
    w.pad_to(kSectionAlign);
    require(w.bytes.size() == h.sections[s].offset, "section layout mismatch");
    w.raw(payload[s]);
  }
  return w.bytes;
}

inline ContainerHeader read_header(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "container header");
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) fail(ErrorKind::format, "not a .ted4 container (bad magic)");
  const std::uint16_t version = r.u16();
  if (version != kFormatVersion)
    fail(ErrorKind::format, "unsupported container version " + std::to_string(version));
  ContainerHeader h;
  ModelConfig& c = h.config;
  const std::uint16_t flags = r.u16();
  if (flags > 1) fail(ErrorKind::format, "unknown container flags");
  c.temporal_activation = flags & 1;
  h.anchor_count = r.u32();
  c.dims.offsets = r.u16();
  c.dims.feature_dim = r.u16();
  c.dims.temporal_dim = r.u16();
  c.bank_dim = r.u16();
  c.frame_count = r.u16();
  c.deform_hidden = r.u16();
  c.decoder_hidden = r.u16();
  c.pe_bands = r.u16();
  c.hyper_hidden = r.u16();
  c.ar_chunks = r.u16();
  c.ar_hidden = r.u16();
  r.u16();
  h.lambda_rate = r.f64();
  c.voxel_size = r.f64();
  c.dx_scale = r.f64();
  for (double& v : c.box_min) v = r.f64();
  for (double& v : c.box_max) v = r.f64();
  for (double& v : c.base_step) v = r.f64();
  for (std::uint32_t& s : h.symbol_bound) {
    s = r.u32();
    if (s < 1 || s > kMaxSymbolBound) fail(ErrorKind::format, "symbol bound out of range");
  }
  const std::uint32_t count = r.u32();
  if (count != kSectionCount) fail(ErrorKind::format, "unexpected section count " + std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    SectionEntry e;
    e.id = static_cast<SectionId>(r.u32());
    e.offset = r.u32();
    e.length = r.u32();
    e.crc = r.u32();
    if (e.id != static_cast<SectionId>(i + 1)) fail(ErrorKind::format, "section table out of order");
    h.sections.push_back(e);
  }
  const std::uint32_t stored = crc32_of(bytes.first(r.pos()));
  if (r.u32() != stored) fail(ErrorKind::format, "header checksum mismatch");
  h.size = r.pos();
  const bool dims_ok = c.dims.offsets >= 1 && c.dims.feature_dim >= 1 && c.dims.temporal_dim >= 1 && c.bank_dim >= 1 &&
                       c.frame_count >= 2 && c.frame_count % 2 == 0 && c.ar_chunks >= 1 &&
                       c.dims.feature_dim % c.ar_chunks == 0 && c.deform_hidden >= 1 && c.decoder_hidden >= 1 &&
                       c.hyper_hidden >= 1 && c.ar_hidden >= 1;
  if (!dims_ok) fail(ErrorKind::format, "container header has invalid dimensions");
  for (const SectionEntry& e : h.sections) {
    if (e.offset < h.size || e.offset % kSectionAlign != 0 || static_cast<std::uint64_t>(e.offset) + e.length > bytes.size())
      fail(ErrorKind::format, std::string(section_name(e.id)) + " section is truncated or misplaced");
  }
  return h;
}

inline std::span<const std::uint8_t> section_bytes(std::span<const std::uint8_t> bytes, const SectionEntry& e) {
  auto s = bytes.subspan(e.offset, e.length);
  if (crc32_of(s) != e.crc) fail(ErrorKind::format, std::string(section_name(e.id)) + " section checksum mismatch");
  return s;
}

/// Restores the decoder-visible model. Equal to quantize_model of the encoder input.
inline Model read_container(std::span<const std::uint8_t> bytes, ContainerHeader* header_out = nullptr) {
  const ContainerHeader h = read_header(bytes);
  for (std::size_t s = 0; s + 1 < h.sections.size(); ++s)
    if (h.sections[s].offset + h.sections[s].length > h.sections[s + 1].offset)
      fail(ErrorKind::format, "container sections overlap");
  if (h.anchor_count > 10'000'000u) fail(ErrorKind::format, "anchor count out of range");
  Model m = make_model(h.config, h.anchor_count);
  {
    detail::ByteReader r(section_bytes(bytes, h.sections[0]), "positions section");
    for (Anchor& a : m.anchors.anchors)
      for (double& x : a.position()) x = from_half_bits(r.u16());
    if (!r.done()) fail(ErrorKind::format, "positions section has trailing bytes");
  }
  {
    detail::ByteReader r(section_bytes(bytes, h.sections[1]), "weights section");
    for (Mlp* n : detail::weight_order(m))
      for (double& p : n->params()) p = r.f32();
    for (double& v : m.bank.values) v = r.f32();
    if (!r.done()) fail(ErrorKind::format, "weights section has trailing bytes");
  }
  {
    detail::ByteReader r(section_bytes(bytes, h.sections[2]), "masks section");
    const auto ob = r.take(r.u32());
    const auto tb = r.take(r.u32());
    if (!r.done()) fail(ErrorKind::format, "masks section has trailing bytes");
    const std::size_t k = static_cast<std::size_t>(h.config.dims.offsets);
    const auto offset_bits = decode_mask(ob, m.size() * k);
    const auto temporal_bits = decode_mask(tb, m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      Anchor& a = m.anchors.anchors[i];
      for (std::size_t s = 0; s < k; ++s) a.offset_mask_logits()[s] = offset_bits[i * k + s] ? 1.0 : -1.0;
      a.temporal_mask_logit() = temporal_bits[i] ? 1.0 : -1.0;
    }
  }
  m.hyper.box_min = h.config.box_min;
  m.hyper.box_max = h.config.box_max;
  m.hyper.base_step = h.config.base_step;
  {
    const auto payload = section_bytes(bytes, h.sections[3]);
    RangeDecoder dec(payload);
    for (Anchor& a : m.anchors.anchors) {
      detail::visit_attributes(m, a, [&](double& v, double mu, double sigma, double step, AttributeType t) {
        const SymbolCdf cdf = build_cdf(mu, sigma, step, h.symbol_bound[static_cast<int>(t)]);
        v = step * static_cast<double>(dec.decode_symbol(cdf));
      });
    }
    if (dec.overrun()) fail(ErrorKind::format, "attributes section is truncated");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.anchors.anchors[i].id = static_cast<int>(i);
    if (i > 0 && canonical_less(m.anchors.anchors[i], m.anchors.anchors[i - 1]))
      fail(ErrorKind::format, "anchors are not in canonical order");
  }
  if (header_out) *header_out = h;
  return m;
}

/// Bitwise equality of everything a decoder can observe.
inline bool same_decoder_state(const Model& a, const Model& b) {
  if (!(a.config == b.config) || a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Anchor& x = a.anchors.anchors[i];
    const Anchor& y = b.anchors.anchors[i];
    if (x.id != y.id || x.data.size() != y.data.size()) return false;
    for (std::size_t j = 0; j < x.data.size(); ++j)
      if (std::bit_cast<std::uint64_t>(x.data[j]) != std::bit_cast<std::uint64_t>(y.data[j])) return false;
  }
  Model ca = a, cb = b;
  const auto wa = detail::weight_order(ca), wb = detail::weight_order(cb);
  for (std::size_t n = 0; n < wa.size(); ++n)
    if (wa[n]->params() != wb[n]->params() || wa[n]->widths() != wb[n]->widths()) return false;
  return ca.bank.values == cb.bank.values;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "failed writing " + path.string());
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace ted4
