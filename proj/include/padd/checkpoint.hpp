#pragma once

// Checkpoint file:
//   "PADD" | version u32 | records until end of file
// record:
//   name_len u32 | name (UTF-8) | group u8 | rank u32 | dims u32[rank] | f64[prod(dims)]
// All integers and floats little-endian. The prompt is stored under
// "__prompt__"; the model configuration under "__config__" as a rank-1 record
// [delta, d, n_layers, n_heads, head_hidden, ff_hidden, (kernel, stride, channels)...].

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "padd/binary_io.hpp"
#include "padd/errors.hpp"
#include "padd/model.hpp"

namespace padd {

inline constexpr char kCheckpointMagic[] = "PADD";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kPromptRecord[] = "__prompt__";
inline constexpr char kConfigRecord[] = "__config__";
inline constexpr std::uint8_t kPromptGroupTag = 3;
inline constexpr std::uint8_t kConfigGroupTag = 4;

namespace detail {

inline void write_record(io::ByteWriter& w, const std::string& name, std::uint8_t group, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u8(group);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.storage()) w.f64(v);
}

inline Tensor config_record(const ModelConfig& c) {
  std::vector<double> v = {double(c.delta),     double(c.d),         double(c.n_layers),
                           double(c.n_heads),   double(c.head_hidden), double(c.ff_hidden)};
  for (const auto& cv : c.conv) {
    v.push_back(double(cv.kernel));
    v.push_back(double(cv.stride));
    v.push_back(double(cv.channels));
  }
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

inline ModelConfig config_from_record(const Tensor& t) {
  const auto& v = t.storage();
  if (t.rank() != 1 || v.size() < 9 || (v.size() - 6) % 3 != 0)
    throw FormatError(FormatErrorKind::kCorruptPayload, "malformed __config__ record");
  for (double x : v)
    if (!(x >= 1.0) || x != std::floor(x) || x > 1e9)
      throw FormatError(FormatErrorKind::kCorruptPayload, "non-integral value in __config__ record");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(v[i]); };
  ModelConfig c;
  c.delta = u(0);
  c.d = u(1);
  c.n_layers = u(2);
  c.n_heads = u(3);
  c.head_hidden = u(4);
  c.ff_hidden = u(5);
  c.conv.clear();
  for (std::size_t i = 6; i < v.size(); i += 3) c.conv.push_back({u(i), u(i + 1), u(i + 2)});
  return c;
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(const ParamRegistry& reg) {
  io::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  detail::write_record(w, kConfigRecord, kConfigGroupTag, detail::config_record(reg.config()));
  for (const auto& e : reg.entries()) detail::write_record(w, e.name, static_cast<std::uint8_t>(e.group), e.value);
  if (reg.prompt()) detail::write_record(w, kPromptRecord, kPromptGroupTag, reg.prompt()->values);
  return w.buffer();
}

inline ParamRegistry decode_checkpoint(std::vector<char> bytes) {
  using K = FormatErrorKind;
  io::ByteReader r(std::move(bytes));
  if (r.remaining() < 8) throw FormatError(K::kCorruptHeader, "file shorter than the checkpoint header");
  if (r.bytes(4, K::kCorruptHeader, "magic") != std::string_view(kCheckpointMagic, 4))
    throw FormatError(K::kCorruptHeader, "bad magic (expected PADD)");
  const std::uint32_t version = r.u32(K::kCorruptHeader, "version");
  if (version != kCheckpointVersion)
    throw FormatError(K::kVersionMismatch,
                      "checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));

  bool have_config = false;
  ParamRegistry reg;
  std::optional<Prompt> prompt;
  while (!r.at_end()) {
    const std::uint32_t len = r.u32(K::kTruncatedPayload, "record name length");
    if (len > (1u << 16)) throw FormatError(K::kCorruptPayload, "record name length " + std::to_string(len));
    std::string name = r.bytes(len, K::kTruncatedPayload, "record name");
    const std::uint8_t group = r.u8(K::kTruncatedPayload, "group tag");
    const std::uint32_t rank = r.u32(K::kTruncatedPayload, "rank");
    if (rank == 0 || rank > 8) throw FormatError(K::kCorruptPayload, "rank " + std::to_string(rank) + " for " + name);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32(K::kTruncatedPayload, "dimension");
      if (d == 0) throw FormatError(K::kCorruptPayload, "zero dimension in " + name);
      shape.push_back(d);
    }
    const std::size_t n = numel(shape);
    if (n > r.remaining() / 8) throw FormatError(K::kTruncatedPayload, "values of '" + name + "'");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64(K::kTruncatedPayload, "value");
    Tensor t(std::move(shape), std::move(values));

    if (name == kConfigRecord) {
      if (group != kConfigGroupTag || have_config)
        throw FormatError(K::kCorruptPayload, "unexpected __config__ record");
      ModelConfig c = detail::config_from_record(t);
      try {
        c.validate();
      } catch (const ConfigError& e) {
        throw FormatError(K::kCorruptPayload, e.what());
      }
      reg = ParamRegistry(c);
      have_config = true;
    } else if (!have_config) {
      throw FormatError(K::kCorruptPayload, "first record must be __config__");
    } else if (name == kPromptRecord) {
      if (group != kPromptGroupTag || prompt) throw FormatError(K::kCorruptPayload, "unexpected __prompt__ record");
      prompt = Prompt{std::move(t)};
    } else {
      if (group > static_cast<std::uint8_t>(ParamGroup::kBackendLast))
        throw FormatError(K::kCorruptPayload, "unknown group tag " + std::to_string(group) + " for " + name);
      if (reg.contains(name)) throw FormatError(K::kCorruptPayload, "duplicate record " + name);
      reg.add(std::move(name), std::move(t), static_cast<ParamGroup>(group));
    }
  }
  if (!have_config) throw FormatError(K::kTruncatedPayload, "no records after header");
  // Shapes must agree with a model built from the stored configuration.
  const std::vector<ParamSpec> layout = model_layout(reg.config());
  if (layout.size() != reg.entries().size())
    throw FormatError(K::kCorruptPayload, "parameter set does not match the stored model configuration");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& a = layout[i];
    const auto& b = reg.entries()[i];
    if (a.name != b.name || a.group != b.group || a.shape != b.value.shape())
      throw FormatError(K::kCorruptPayload, "parameter '" + b.name + "' does not match the model configuration");
  }
  if (prompt) {
    try {
      reg.set_prompt(std::move(*prompt));
    } catch (const ShapeError& e) {
      throw FormatError(K::kCorruptPayload, e.what());
    }
  }
  return reg;
}

inline void save_checkpoint(const ParamRegistry& reg, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(reg));
}

inline ParamRegistry load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace padd
