/*
 * Copyright 2026 The bdpgan Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Network checkpoint file:
//   "BDPN" | u32 version | u32 layer count |
//   per layer: u32 rows (outputs) | u32 cols (inputs) | u8 activation |
//              rows*cols f64 weights (row-major) | rows f64 biases
// All integers and floats little-endian.

#ifndef BDPGAN_CHECKPOINT_HPP_
#define BDPGAN_CHECKPOINT_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "bdpgan/error.hpp"
#include "bdpgan/nn.hpp"

namespace bdpgan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : b_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw ParseError("truncated checkpoint", pos_);
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_network(const Network& net) {
  std::vector<std::uint8_t> out = {'B', 'D', 'P', 'N'};
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& L : net.layers()) {
    detail::put_u32(out, static_cast<std::uint32_t>(L.out));
    detail::put_u32(out, static_cast<std::uint32_t>(L.in));
    out.push_back(static_cast<std::uint8_t>(L.activation));
    for (double w : L.weights) detail::put_f64(out, w);
    for (double b : L.bias) detail::put_f64(out, b);
  }
  return out;
}

inline Network decode_network(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), "BDPN", 4) != 0) {
    throw ParseError("not a network checkpoint (bad magic)", 0);
  }
  for (int i = 0; i < 4; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint version mismatch: file has " + std::to_string(version) +
                         ", reader supports " + std::to_string(kCheckpointVersion),
                     4);
  }
  const std::uint32_t count = r.u32();
  if (count == 0) throw ParseError("checkpoint has no layers", 8);
  std::vector<DenseLayer> layers;
  for (std::uint32_t l = 0; l < count; ++l) {
    DenseLayer L;
    const std::size_t at = r.pos();
    L.out = r.u32();
    L.in = r.u32();
    const std::uint8_t tag = r.u8();
    if (tag > static_cast<std::uint8_t>(Activation::kRelu)) {
      throw ParseError("unknown activation tag " + std::to_string(tag), at + 8);
    }
    L.activation = static_cast<Activation>(tag);
    r.need((L.in * L.out + L.out) * 8);
    L.weights.resize(L.in * L.out);
    for (double& w : L.weights) w = r.f64();
    L.bias.resize(L.out);
    for (double& b : L.bias) b = r.f64();
    layers.push_back(std::move(L));
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint", r.pos());
  return Network(std::move(layers));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline void save_network(const Network& net, const std::filesystem::path& path) {
  write_file_bytes(path, encode_network(net));
}

inline Network load_network(const std::filesystem::path& path) {
  return decode_network(read_file_bytes(path));
}

}  // namespace bdpgan

#endif  // BDPGAN_CHECKPOINT_HPP_
