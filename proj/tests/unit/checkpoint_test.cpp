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

#include "bdpgan/checkpoint.hpp"

namespace bdpgan {
namespace {

Network sample_net() {
  Rng rng(5);
  const std::size_t sizes[] = {4, 3, 2};
  return Network::dense(sizes, Activation::kSelu, Activation::kTanh, rng);
}

TEST(Checkpoint, RoundTrip) {
  const Network net = sample_net();
  EXPECT_EQ(decode_network(encode_network(net)), net);
}

TEST(Checkpoint, LayoutIsLittleEndian) {
  const auto bytes = encode_network(sample_net());
  ASSERT_GE(bytes.size(), 21u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "BDPN");
  EXPECT_EQ(bytes[4], kCheckpointVersion);
  EXPECT_EQ(bytes[8], 2);   // layer count
  EXPECT_EQ(bytes[12], 3);  // rows (outputs) of layer 0
  EXPECT_EQ(bytes[16], 4);  // cols (inputs) of layer 0
  EXPECT_EQ(bytes[20], static_cast<std::uint8_t>(Activation::kSelu));
  const std::size_t expect = 12 + (9 + 8 * (12 + 3)) + (9 + 8 * (6 + 2));
  EXPECT_EQ(bytes.size(), expect);
}

TEST(Checkpoint, RejectsBadMagic) {
  auto bytes = encode_network(sample_net());
  bytes[0] = 'X';
  EXPECT_THROW(decode_network(bytes), ParseError);
}

TEST(Checkpoint, RejectsVersionMismatch) {
  auto bytes = encode_network(sample_net());
  bytes[4] = 9;
  try {
    decode_network(bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, RejectsTruncationAndTrailingBytes) {
  auto bytes = encode_network(sample_net());
  auto shorter = bytes;
  shorter.pop_back();
  EXPECT_THROW(decode_network(shorter), ParseError);
  bytes.push_back(0);
  EXPECT_THROW(decode_network(bytes), ParseError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "bdpgan_ckpt_test.bdpn";
  save_network(sample_net(), path);
  EXPECT_EQ(load_network(path), sample_net());
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace bdpgan
