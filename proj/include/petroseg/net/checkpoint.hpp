#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "petroseg/net/segnet.hpp"

namespace petroseg::net {

inline constexpr char kCheckpointMagic[8] = {'P', 'S', 'E', 'G', 'N', 'E', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes_[pos_ + k]) << (8 * k);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(bytes_[pos_ + k]) << (8 * k);
    pos_ += 8;
    return v;
  }

  std::int32_t i32(const char* field) { return static_cast<std::int32_t>(u32(field)); }

  void raw(void* dst, std::size_t n, const char* field) {
    need(n, field);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& what() const { return what_; }

 private:
  void need(std::size_t n, const char* field) {
    if (bytes_.size() - pos_ < n) {
      throw input_error(what_ + ": checkpoint format v" + std::to_string(kCheckpointVersion) +
                        ": truncated while reading " + field + " at byte " + std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Layout: magic, u32 version, u32 node count, per node eight 32-bit fields
/// (op, input, other, in, out, kernel, stride, dilation), u64 parameter
/// count, then parameters as little-endian binary32 in flat order.
inline std::vector<std::uint8_t> encode_checkpoint(const SegNet<float>& net) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(net.nodes().size()));
  for (const auto& n : net.nodes()) {
    detail::put_u32(out, static_cast<std::uint32_t>(n.op));
    for (int v : {n.input, n.other, n.in_channels, n.out_channels, n.kernel, n.stride, n.dilation}) {
      detail::put_u32(out, static_cast<std::uint32_t>(v));
    }
  }
  const std::size_t count = net.parameter_count();
  detail::put_u64(out, count);
  out.reserve(out.size() + 4 * count);
  for (const auto& p : net.all_params()) {
    auto emit = [&](const float* data, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) detail::put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
    };
    emit(p.weight.data(), p.weight.size());
    emit(p.bias.data(), p.bias.size());
  }
  return out;
}

inline SegNet<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                       const std::string& what = "checkpoint") {
  detail::ByteReader in(bytes, what);
  char magic[8];
  in.raw(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw input_error(what + ": not a petroseg checkpoint (bad magic)");
  }
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw input_error(what + ": checkpoint format v" + std::to_string(version) +
                      " is not supported (expected v" + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = in.u32("node count");
  if (count == 0 || count > 4096) throw input_error(what + ": implausible node count " + std::to_string(count));
  std::vector<NodeSpec> nodes(count);
  for (auto& n : nodes) {
    const std::uint32_t op = in.u32("node op");
    if (op > static_cast<std::uint32_t>(OpKind::Upsample)) {
      throw input_error(what + ": unknown node op " + std::to_string(op));
    }
    n.op = static_cast<OpKind>(op);
    n.input = in.i32("node input");
    n.other = in.i32("node other");
    n.in_channels = in.i32("node in_channels");
    n.out_channels = in.i32("node out_channels");
    n.kernel = in.i32("node kernel");
    n.stride = in.i32("node stride");
    n.dilation = in.i32("node dilation");
  }
  SegNet<float> net(std::move(nodes));
  const std::uint64_t params = in.u64("parameter count");
  if (params != net.parameter_count()) {
    throw input_error(what + ": parameter count " + std::to_string(params) +
                      " does not match the layer spec (" + std::to_string(net.parameter_count()) + ")");
  }
  for (auto& p : net.all_params()) {
    auto fill = [&](float* data, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) data[i] = std::bit_cast<float>(in.u32("parameters"));
    };
    fill(p.weight.data(), p.weight.size());
    fill(p.bias.data(), p.bias.size());
  }
  if (in.remaining() != 0) {
    throw input_error(what + ": " + std::to_string(in.remaining()) + " trailing bytes after parameters");
  }
  return net;
}

inline void save_checkpoint(const SegNet<float>& net, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw input_error("cannot write checkpoint '" + path.string() + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw input_error("failed writing checkpoint '" + path.string() + "'");
}

inline SegNet<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw input_error("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace petroseg::net
