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

#ifndef BDPGAN_DATA_HPP_
#define BDPGAN_DATA_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdpgan/checkpoint.hpp"
#include "bdpgan/error.hpp"
#include "bdpgan/rng.hpp"
#include "bdpgan/tensor.hpp"

namespace bdpgan {

struct Dataset {
  Tensor images;  // n x h x w (n x 1 x 2 for toy points)
  std::optional<std::vector<int>> labels;
  std::string name;

  std::size_t size() const { return images.rows(); }
  std::size_t height() const { return images.rank() >= 3 ? images.dim(1) : 1; }
  std::size_t width() const { return images.rank() >= 3 ? images.dim(2) : images.row_size(); }
  std::size_t features() const { return images.row_size(); }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset d{images.gather_rows(indices), std::nullopt, name};
    if (labels) {
      std::vector<int> l;
      l.reserve(indices.size());
      for (std::size_t i : indices) l.push_back((*labels)[i]);
      d.labels = std::move(l);
    }
    return d;
  }

  // n x 1 class ids for the softmax loss.
  Tensor label_tensor() const {
    if (!labels) throw ConfigError("dataset '" + name + "' has no labels");
    Tensor t({labels->size(), 1});
    for (std::size_t i = 0; i < labels->size(); ++i) t[i] = (*labels)[i];
    return t;
  }
};

// ---- IDX container ---------------------------------------------------------

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  if (at + 4 > b.size()) throw ParseError("truncated IDX header", b.size());
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

struct IdxPayload {
  std::vector<std::size_t> dims;
  std::size_t data_offset = 0;
};

inline IdxPayload parse_idx_header(const std::vector<std::uint8_t>& b) {
  const std::uint32_t magic = read_be32(b, 0);
  if (magic != kIdxLabelMagic && magic != 0x00000802 && magic != kIdxImageMagic) {
    throw ParseError("bad IDX magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }(), 0);
  }
  IdxPayload p;
  const std::size_t rank = magic & 0xffu;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint32_t d = read_be32(b, 4 + 4 * i);
    if (d == 0) throw ParseError("IDX dimension " + std::to_string(i) + " is zero", 4 + 4 * i);
    p.dims.push_back(d);
  }
  p.data_offset = 4 + 4 * rank;
  const std::size_t count = Tensor::element_count(p.dims);
  if (b.size() < p.data_offset + count) {
    throw ParseError("truncated IDX payload: expected " + std::to_string(count) +
                         " bytes, found " + std::to_string(b.size() - p.data_offset),
                     b.size());
  }
  if (b.size() > p.data_offset + count) {
    throw ParseError("trailing bytes after IDX payload", p.data_offset + count);
  }
  return p;
}

}  // namespace detail

// Rank-1 files (labels) keep raw byte values; higher ranks are pixels scaled
// by 1/255.
inline Tensor load_idx(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto p = detail::parse_idx_header(bytes);
  const bool pixels = p.dims.size() > 1;
  Tensor t(p.dims);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = bytes[p.data_offset + i];
    t[i] = pixels ? v / 255.0 : v;
  }
  return t;
}

inline std::vector<int> load_idx_labels(const std::filesystem::path& path,
                                        int num_classes) {
  const auto bytes = read_file_bytes(path);
  const auto p = detail::parse_idx_header(bytes);
  if (p.dims.size() != 1) throw ParseError("label file must be rank 1", 0);
  std::vector<int> labels(p.dims[0]);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = bytes[p.data_offset + i];
    if (labels[i] >= num_classes) {
      throw ParseError("label " + std::to_string(labels[i]) + " outside [0, " +
                           std::to_string(num_classes) + ")",
                       p.data_offset + i);
    }
  }
  return labels;
}

inline std::vector<std::uint8_t> encode_idx(const Tensor& t) {
  if (t.rank() == 0 || t.empty()) throw ConfigError("cannot write an empty tensor as IDX");
  if (t.rank() > 3) throw ConfigError("IDX writer supports rank 1 to 3");
  std::vector<std::uint8_t> out;
  detail::put_be32(out, 0x00000800u | static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_be32(out, static_cast<std::uint32_t>(d));
  const bool pixels = t.rank() > 1;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    long b;
    if (pixels) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ConfigError("pixel value " + std::to_string(v) + " at index " +
                          std::to_string(i) + " outside [0, 1]");
      }
      b = std::lround(v * 255.0);
    } else {
      if (v != std::floor(v) || v < 0.0 || v > 255.0) {
        throw ConfigError("label value " + std::to_string(v) + " is not a byte");
      }
      b = static_cast<long>(v);
    }
    out.push_back(static_cast<std::uint8_t>(b));
  }
  return out;
}

inline void write_idx(const Tensor& t, const std::filesystem::path& path) {
  write_file_bytes(path, encode_idx(t));
}

inline void write_idx_labels(std::span<const int> labels, const std::filesystem::path& path) {
  Tensor t({labels.size()});
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = labels[i];
  write_idx(t, path);
}

// `<dir>/<prefix>-images-idx3-ubyte` plus labels, the MNIST file naming.
inline Dataset load_idx_dataset(const std::filesystem::path& dir, const std::string& prefix,
                                int num_classes = 10) {
  Dataset d;
  d.images = load_idx(dir / (prefix + "-images-idx3-ubyte"));
  const auto label_path = dir / (prefix + "-labels-idx1-ubyte");
  if (std::filesystem::exists(label_path)) {
    d.labels = load_idx_labels(label_path, num_classes);
    if (d.labels->size() != d.size()) {
      throw ConfigError("label count " + std::to_string(d.labels->size()) +
                        " does not match image count " + std::to_string(d.size()));
    }
  }
  d.name = prefix;
  return d;
}

inline void save_idx_dataset(const Dataset& d, const std::filesystem::path& dir,
                             const std::string& prefix) {
  std::filesystem::create_directories(dir);
  write_idx(d.images, dir / (prefix + "-images-idx3-ubyte"));
  if (d.labels) write_idx_labels(*d.labels, dir / (prefix + "-labels-idx1-ubyte"));
}

// Default data directory: $BDPGAN_DATA_DIR, else ./data.
inline std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("BDPGAN_DATA_DIR"); env && *env) return env;
  return "data";
}

// ---- Transforms ------------------------------------------------------------

// Counter-clockwise quarter turn of a side x side image.
inline void rotate90_ccw(std::span<const double> in, std::span<double> out, std::size_t side) {
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      out[r * side + c] = in[c * side + (side - 1 - r)];
    }
  }
}

enum class CorruptionKind { kRotate90, kInvert };

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kRotate90;
  double fraction = 0.0;  // independent per-image probability
  std::uint64_t seed = 0;
};

struct CorruptionResult {
  Dataset dataset;
  std::vector<std::size_t> altered;  // ascending indices
  CorruptionKind kind = CorruptionKind::kRotate90;
  std::string rotation_direction = "ccw";
};

inline CorruptionResult corrupt(const Dataset& data, const CorruptionSpec& spec) {
  if (!(spec.fraction >= 0.0 && spec.fraction <= 1.0)) {
    throw ConfigError("corruption fraction must lie in [0, 1]");
  }
  if (spec.kind == CorruptionKind::kRotate90 && data.height() != data.width()) {
    throw ConfigError("rotate90 needs square images, got " + data.images.shape_string());
  }
  CorruptionResult res{data, {}, spec.kind, "ccw"};
  Rng rng(spec.seed, "corrupt");
  std::vector<double> tmp(data.features());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!rng.bernoulli(spec.fraction)) continue;
    res.altered.push_back(i);
    auto img = res.dataset.images.row(i);
    if (spec.kind == CorruptionKind::kRotate90) {
      rotate90_ccw(img, tmp, data.width());
      std::copy(tmp.begin(), tmp.end(), img.begin());
    } else {
      for (double& p : img) p = 1.0 - p;
    }
  }
  return res;
}

// 28x28 -> 4x4 block means (7x7) -> zero padded on the right/bottom to 8x8.
inline Dataset downsample_to_8x8(const Dataset& d) {
  if (d.height() != 28 || d.width() != 28) {
    throw ConfigError("8x8 downsampling expects 28x28 images, got " + d.images.shape_string());
  }
  Dataset out{Tensor({d.size(), 8, 8}), d.labels, d.name + "-8x8"};
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto src = d.images.row(i);
    auto dst = out.images.row(i);
    for (std::size_t br = 0; br < 7; ++br) {
      for (std::size_t bc = 0; bc < 7; ++bc) {
        double s = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
          for (std::size_t c = 0; c < 4; ++c) s += src[(4 * br + r) * 28 + 4 * bc + c];
        }
        dst[br * 8 + bc] = s / 16.0;
      }
    }
  }
  return out;
}

// ---- Toy data --------------------------------------------------------------

using Point2 = std::array<double, 2>;

inline std::vector<Point2> ring_centers(std::size_t modes, double radius) {
  std::vector<Point2> c(modes);
  for (std::size_t k = 0; k < modes; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(modes);
    c[k] = {radius * std::cos(a), radius * std::sin(a)};
  }
  return c;
}

// Mixture of isotropic Gaussians on a regular polygon; label = mode index.
inline Dataset toy_ring(std::size_t n, std::size_t modes, double radius, double stddev,
                        std::uint64_t seed) {
  if (modes < 1) throw ConfigError("toy_ring needs at least one mode");
  if (!(stddev > 0.0)) throw ConfigError("toy_ring stddev must be positive");
  if (n < modes) throw ConfigError("toy_ring needs n >= modes");
  const auto centers = ring_centers(modes, radius);
  Rng rng(seed, "toy_ring");
  Dataset d{Tensor({n, 1, 2}), std::vector<int>(n), "toy_ring"};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rng.index(modes);
    (*d.labels)[i] = static_cast<int>(k);
    d.images[2 * i] = centers[k][0] + stddev * rng.normal();
    d.images[2 * i + 1] = centers[k][1] + stddev * rng.normal();
  }
  return d;
}

// Shuffled disjoint cover with part sizes proportional to `fractions`.
inline std::vector<Dataset> split(const Dataset& d, std::span<const double> fractions,
                                  std::uint64_t seed) {
  if (fractions.empty()) throw ConfigError("split needs at least one fraction");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed, "split");
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<Dataset> parts;
  double cum = 0.0;
  std::size_t begin = 0;
  for (std::size_t p = 0; p < fractions.size(); ++p) {
    cum += fractions[p];
    const std::size_t end = (p + 1 == fractions.size())
                                ? d.size()
                                : static_cast<std::size_t>(std::llround(cum * static_cast<double>(d.size())));
    if (end <= begin) throw ConfigError("split part " + std::to_string(p) + " is empty");
    parts.push_back(d.subset(std::span<const std::size_t>(perm.data() + begin, end - begin)));
    begin = end;
  }
  return parts;
}

}  // namespace bdpgan

#endif  // BDPGAN_DATA_HPP_
