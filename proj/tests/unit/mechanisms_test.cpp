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

#include <cmath>

#include "bdpgan/mechanisms.hpp"

namespace bdpgan {
namespace {

TEST(Clip, RescalesThreeFourFive) {
  const std::vector<double> v = {3.0, 4.0};
  const auto out = clip_to_norm(v, 1.0);
  EXPECT_DOUBLE_EQ(out[0], 0.6);
  EXPECT_DOUBLE_EQ(out[1], 0.8);
  EXPECT_LE(l2_norm(out), 1.0);
}

TEST(Clip, ShortVectorAndZeroUnchanged) {
  const std::vector<double> v = {0.1, -0.2};
  EXPECT_EQ(clip_to_norm(v, 1.0), v);
  const std::vector<double> z(5, 0.0);
  EXPECT_EQ(clip_to_norm(z, 0.5), z);
}

TEST(Clip, NormNeverExceedsBound) {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> v(1 + rng.index(300));
    const double scale = std::exp(6.0 * rng.normal());
    for (double& x : v) x = scale * rng.normal();
    const double c = std::exp(3.0 * rng.normal());
    EXPECT_LE(l2_norm(clip_to_norm(v, c)), c);
  }
}

TEST(Clip, IdempotentAndHomogeneous) {
  const std::vector<double> v = {1.5, -2.0, 0.5, 7.0};
  const auto once = clip_to_norm(v, 2.0);
  EXPECT_EQ(clip_to_norm(once, 2.0), once);
  const auto half = clip_to_norm(v, 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(once[i], 2.0 * half[i], 1e-15);
}

TEST(Clip, RejectsNonPositiveBound) {
  EXPECT_THROW(clip_to_norm(std::vector<double>{1.0}, 0.0), ConfigError);
}

TEST(Gaussian, ZeroSigmaIsIdentity) {
  Rng rng(1);
  const std::vector<double> s = {1.0, 2.0, -3.0};
  EXPECT_EQ(gaussian_mechanism(s, {2.0, 0.0}, rng), s);
}

TEST(Gaussian, DeterministicUnderSeed) {
  Rng a(derive_seed(9, "noise", 0)), b(derive_seed(9, "noise", 0));
  const std::vector<double> s(10, 0.5);
  EXPECT_EQ(gaussian_mechanism(s, {1.0, 2.0}, a), gaussian_mechanism(s, {1.0, 2.0}, b));
}

TEST(Gaussian, MomentsMatchAtOneMillionDraws) {
  const MechanismParams p{1.5, 2.0};
  const double sd = p.noise_stddev();
  const std::size_t n = 1000000;
  Rng rng(17);
  std::vector<double> one = {0.25};
  double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = gaussian_mechanism(one, p, rng)[0] - 0.25;
    m1 += z;
    m2 += z * z;
    m3 += z * z * z;
    m4 += z * z * z * z;
  }
  m1 /= n, m2 /= n, m3 /= n, m4 /= n;
  EXPECT_LE(std::abs(m1), 4.0 * sd / 1000.0);
  EXPECT_LE(std::abs(m2 / (sd * sd) - 1.0), 0.01);
  // Skewness sd sqrt(6/n), excess-kurtosis sd sqrt(24/n); 5 sd bands.
  const double var = m2 - m1 * m1;
  EXPECT_LE(std::abs(m3 / std::pow(var, 1.5)), 5 * std::sqrt(6.0 / n));
  EXPECT_LE(std::abs(m4 / (var * var) - 3.0), 5 * std::sqrt(24.0 / n));
}

TEST(Calibrate, ReferenceValue) {
  const auto c = calibrate_sigma(1.0, 1e-5, 1.0);
  // sqrt(2 ln(125000)) evaluated at extended precision.
  const long double ref = std::sqrt(2.0L * std::log(1.25L / 1e-5L));
  EXPECT_NEAR(c.noise_multiplier, static_cast<double>(ref), 1e-12);
  EXPECT_NEAR(c.noise_multiplier, 4.84480, 1e-5);
  EXPECT_TRUE(c.classical_range);
}

TEST(Calibrate, HalvingEpsilonDoublesSigma) {
  EXPECT_DOUBLE_EQ(calibrate_sigma(0.5, 1e-5).noise_multiplier,
                   2.0 * calibrate_sigma(1.0, 1e-5).noise_multiplier);
}

TEST(Calibrate, RejectsDeltaAboveOne) {
  EXPECT_THROW(calibrate_sigma(1.0, 1.25), ConfigError);
  EXPECT_THROW(calibrate_sigma(0.0, 1e-5), ConfigError);
}

TEST(Calibrate, LargeEpsilonWarns) {
  const auto c = calibrate_sigma(2.0, 1e-5);
  EXPECT_FALSE(c.classical_range);
  EXPECT_FALSE(c.warning.empty());
}

TEST(PrivacyLoss, Basics) {
  for (double w : {-3.0, 0.0, 0.7, 10.0}) EXPECT_EQ(privacy_loss(w, 1.0, 1.0, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(privacy_loss(0.5, 0.0, 1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(privacy_loss(0.0, 0.0, 1.0, 1.0), 0.5);
  for (double w : {-1.0, 0.3, 2.5}) {
    EXPECT_DOUBLE_EQ(privacy_loss(w, 0.2, 1.7, 0.9), -privacy_loss(w, 1.7, 0.2, 0.9));
  }
  EXPECT_THROW(privacy_loss(0.0, 0.0, 1.0, 0.0), ConfigError);
}

}  // namespace
}  // namespace bdpgan
