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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "bdpgan/data.hpp"

namespace bdpgan {
namespace {

namespace fs = std::filesystem;

fs::path temp(const std::string& name) { return fs::temp_directory_path() / ("bdpgan_" + name); }

Tensor byte_images(std::size_t n, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, side, side});
  for (double& v : t.data()) v = static_cast<double>(rng.index(256)) / 255.0;
  return t;
}

TEST(Idx, RoundTripIsExact) {
  const Tensor t = byte_images(5, 6, 1);
  const auto path = temp("roundtrip.idx");
  write_idx(t, path);
  EXPECT_EQ(load_idx(path), t);
  const auto bytes = read_file_bytes(path);
  write_idx(load_idx(path), path);
  EXPECT_EQ(read_file_bytes(path), bytes);
  fs::remove(path);
}

TEST(Idx, HeaderIsBigEndian) {
  const auto bytes = encode_idx(byte_images(2, 3, 4));
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes[2], 0x08);
  EXPECT_EQ(bytes[3], 0x03);
  EXPECT_EQ(bytes[7], 2);
  EXPECT_EQ(bytes[11], 3);
  EXPECT_EQ(bytes[15], 3);
}

TEST(Idx, FullPixelStoresByte255) {
  Tensor t({1, 1, 1}, 1.0);
  const auto bytes = encode_idx(t);
  EXPECT_EQ(bytes.back(), 255);
}

TEST(Idx, EmptyTensorRefused) {
  EXPECT_THROW(encode_idx(Tensor()), ConfigError);
}

TEST(Idx, PixelOutOfRangeRefused) {
  Tensor t({1, 2, 2}, 0.5);
  t[3] = 1.5;
  EXPECT_THROW(encode_idx(t), ConfigError);
}

TEST(Idx, BadMagicReportsOffset) {
  auto bytes = encode_idx(byte_images(1, 2, 3));
  bytes[2] = 0x07;
  const auto path = temp("badmagic.idx");
  write_file_bytes(path, bytes);
  try {
    load_idx(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  fs::remove(path);
}

TEST(Idx, TruncatedPayloadReportsOffset) {
  auto bytes = encode_idx(byte_images(2, 4, 3));
  bytes.resize(bytes.size() - 5);
  const auto path = temp("trunc.idx");
  write_file_bytes(path, bytes);
  try {
    load_idx(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), bytes.size());
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  bytes.resize(6);
  write_file_bytes(path, bytes);
  EXPECT_THROW(load_idx(path), ParseError);
  fs::remove(path);
}

TEST(Idx, LabelOutOfRange) {
  const auto path = temp("labels.idx");
  const std::vector<int> labels = {1, 10, 3};
  write_idx_labels(labels, path);
  try {
    load_idx_labels(path, 10);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 9u);  // 8 header bytes + index 1
  }
  EXPECT_EQ(load_idx_labels(path, 11), labels);
  fs::remove(path);
}

TEST(Idx, OfficialMnistTrainingShape) {
  const auto path = default_data_dir() / "train-images-idx3-ubyte";
  if (!fs::exists(path)) GTEST_SKIP() << "MNIST not found at " << path;
  const Tensor t = load_idx(path);
  EXPECT_EQ(t.shape(), (std::vector<std::size_t>{60000, 28, 28}));
  const Dataset test = load_idx_dataset(default_data_dir(), "t10k");
  EXPECT_EQ(test.size(), 10000u);
  ASSERT_TRUE(test.labels.has_value());
}

Dataset small_images(std::size_t n, std::size_t side, std::uint64_t seed) {
  Dataset d{byte_images(n, side, seed), std::vector<int>(n), "small"};
  for (std::size_t i = 0; i < n; ++i) (*d.labels)[i] = static_cast<int>(i % 10);
  return d;
}

TEST(Corrupt, ZeroFractionIsIdentity) {
  const Dataset d = small_images(50, 4, 2);
  const auto r = corrupt(d, {CorruptionKind::kRotate90, 0.0, 7});
  EXPECT_TRUE(r.altered.empty());
  EXPECT_EQ(r.dataset.images, d.images);
  EXPECT_EQ(r.rotation_direction, "ccw");
}

TEST(Corrupt, FourRotationsAreIdentity) {
  const Dataset d = small_images(1, 5, 3);
  std::vector<double> a(d.images.row(0).begin(), d.images.row(0).end()), b(a.size());
  for (int k = 0; k < 4; ++k) {
    rotate90_ccw(a, b, 5);
    std::swap(a, b);
  }
  EXPECT_TRUE(std::equal(a.begin(), a.end(), d.images.row(0).begin()));
}

TEST(Corrupt, RotationIsCounterClockwise) {
  // 2x2: [a b; c d] turns into [b d; a c].
  const std::vector<double> in = {1, 2, 3, 4};
  std::vector<double> out(4);
  rotate90_ccw(in, out, 2);
  EXPECT_EQ(out, (std::vector<double>{2, 4, 1, 3}));
}

TEST(Corrupt, OnlyMaskedImagesChangeAndMultisetPreserved) {
  const Dataset d = small_images(200, 6, 4);
  const auto r = corrupt(d, {CorruptionKind::kRotate90, 0.3, 11});
  const std::set<std::size_t> mask(r.altered.begin(), r.altered.end());
  EXPECT_EQ(r.dataset.size(), d.size());
  EXPECT_EQ(r.dataset.labels, d.labels);
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto a = d.images.row(i);
    auto b = r.dataset.images.row(i);
    if (!mask.count(i)) {
      EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    }
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    EXPECT_EQ(sa, sb);
  }
}

TEST(Corrupt, InvertMapsPixels) {
  const Dataset d = small_images(20, 3, 5);
  const auto r = corrupt(d, {CorruptionKind::kInvert, 1.0, 1});
  EXPECT_EQ(r.altered.size(), 20u);
  for (std::size_t k = 0; k < d.images.size(); ++k) {
    EXPECT_DOUBLE_EQ(r.dataset.images[k], 1.0 - d.images[k]);
  }
}

TEST(Corrupt, MaskSizeWithinBinomialBand) {
  Dataset d{Tensor({10000, 2, 2}), std::nullopt, "zeros"};
  const auto r = corrupt(d, {CorruptionKind::kRotate90, 0.3, 2024});
  const double sd = std::sqrt(10000 * 0.3 * 0.7);
  EXPECT_LE(std::abs(static_cast<double>(r.altered.size()) - 3000.0), 3 * sd);
}

TEST(Corrupt, NonSquareRotationRefused) {
  Dataset d{Tensor({3, 2, 4}), std::nullopt, "wide"};
  EXPECT_THROW(corrupt(d, {CorruptionKind::kRotate90, 0.5, 1}), ConfigError);
}

TEST(Downsample, BlockMeanAndPadding) {
  Dataset d{Tensor({1, 28, 28}, 0.0), std::nullopt, "x"};
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) d.images[r * 28 + c] = 1.0;
  }
  d.images[27 * 28 + 27] = 0.8;
  const Dataset s = downsample_to_8x8(d);
  EXPECT_EQ(s.images.shape(), (std::vector<std::size_t>{1, 8, 8}));
  EXPECT_DOUBLE_EQ(s.images[0], 1.0);
  EXPECT_DOUBLE_EQ(s.images[6 * 8 + 6], 0.8 / 16.0);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(s.images[7 * 8 + k], 0.0);
    EXPECT_EQ(s.images[k * 8 + 7], 0.0);
  }
}

TEST(ToyRing, TinyStdSitsOnCenters) {
  const Dataset d = toy_ring(400, 8, 2.0, 1e-12, 3);
  const auto c = ring_centers(8, 2.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& k = c[static_cast<std::size_t>((*d.labels)[i])];
    EXPECT_LE(std::hypot(d.images[2 * i] - k[0], d.images[2 * i + 1] - k[1]), 1e-9);
  }
}

TEST(ToyRing, LabelHistogramNearUniform) {
  const std::size_t n = 80000;
  const Dataset d = toy_ring(n, 8, 2.0, 0.05, 9);
  std::vector<double> counts(8, 0.0);
  for (int l : *d.labels) counts[static_cast<std::size_t>(l)] += 1.0;
  const double expect = n / 8.0;
  const double sd = std::sqrt(n * (1.0 / 8) * (7.0 / 8));
  for (double c : counts) EXPECT_LE(std::abs(c - expect), 4 * sd);
}

TEST(ToyRing, ZeroRadiusCentersCoincide) {
  for (const auto& c : ring_centers(8, 0.0)) {
    EXPECT_EQ(c[0], 0.0);
    EXPECT_EQ(c[1], 0.0);
  }
}

TEST(ToyRing, Errors) {
  EXPECT_THROW(toy_ring(4, 8, 1.0, 0.1, 1), ConfigError);
  EXPECT_THROW(toy_ring(10, 0, 1.0, 0.1, 1), ConfigError);
  EXPECT_THROW(toy_ring(10, 2, 1.0, 0.0, 1), ConfigError);
}

TEST(Split, IdentityFraction) {
  const Dataset d = small_images(30, 2, 1);
  const double f[] = {1.0};
  const auto parts = split(d, f, 3);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0].size(), 30u);
}

TEST(Split, HalvesAreDisjointCover) {
  Dataset d{Tensor({2000, 1}), std::nullopt, "ids"};
  for (std::size_t i = 0; i < 2000; ++i) d.images[i] = static_cast<double>(i);
  const double f[] = {0.5, 0.5};
  const auto parts = split(d, f, 8);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].size(), 1000u);
  EXPECT_EQ(parts[1].size(), 1000u);
  std::set<double> seen;
  for (const auto& p : parts) {
    for (double v : p.images.data()) EXPECT_TRUE(seen.insert(v).second);
  }
  EXPECT_EQ(seen.size(), 2000u);
}

TEST(Split, DeterministicUnderSeed) {
  const Dataset d = small_images(100, 2, 6);
  const double f[] = {0.3, 0.7};
  const auto a = split(d, f, 42);
  const auto b = split(d, f, 42);
  EXPECT_EQ(a[0].images, b[0].images);
  EXPECT_EQ(a[1].labels, b[1].labels);
}

TEST(Split, Errors) {
  const Dataset d = small_images(10, 2, 6);
  const double bad_sum[] = {0.5, 0.4};
  EXPECT_THROW(split(d, bad_sum, 1), ConfigError);
  const double empty_part[] = {0.99, 0.01};
  EXPECT_THROW(split(d, empty_part, 1), ConfigError);
}

}  // namespace
}  // namespace bdpgan
