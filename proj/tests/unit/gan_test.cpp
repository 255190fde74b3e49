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

#include "bdpgan/gan.hpp"

namespace bdpgan {
namespace {

constexpr double kRingRadius = 2.0;
constexpr double kRingStd = 0.1;

GanConfig toy_config(std::uint64_t seed) {
  GanConfig c;
  c.image_output = false;
  c.latent_dim = 8;
  c.generator_hidden = {32, 32};
  c.critic_hidden = {32, 32};
  c.generator_steps = 20;
  c.q = 0.02;
  c.samples_per_step = 8;
  c.seed = seed;
  return c;
}

Tensor points(const std::vector<Point2>& pts) {
  Tensor t({pts.size(), 2});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    t.at(i, 0) = pts[i][0];
    t.at(i, 1) = pts[i][1];
  }
  return t;
}

bool within_clip(const Network& net, double w) {
  bool ok = true;
  for (const auto& l : net.layers()) {
    for (double v : l.weights) ok = ok && std::abs(v) <= w;
    for (double v : l.bias) ok = ok && std::abs(v) <= w;
  }
  return ok;
}

TEST(Wgan, OneAccountedUpdatePerCriticStep) {
  const Dataset d = toy_ring(2000, 8, kRingRadius, kRingStd, 1);
  const auto cfg = toy_config(3);
  const auto r = train_wgan(d, cfg);
  ASSERT_TRUE(r.ledger.has_value());
  EXPECT_EQ(r.generator_steps, 20u);
  EXPECT_EQ(r.ledger->iterations() + r.skipped_empty, 20u * cfg.critic_steps);
  EXPECT_EQ(r.critic_real_updates, r.ledger->iterations());
  EXPECT_LE(r.max_contribution, cfg.mechanism.clip_norm);
  EXPECT_LE(r.bdp.epsilon, extract_guarantee(*r.ledger, FixDelta{1e-10}, Track::kWorstCase).epsilon);
}

TEST(Wgan, CriticWeightsStayClipped) {
  const Dataset d = toy_ring(2000, 8, kRingRadius, kRingStd, 1);
  auto cfg = toy_config(4);
  cfg.weight_clip = 0.03;
  WganTrainer t(d, cfg);
  EXPECT_TRUE(within_clip(t.critic(), 0.03));
  for (int s = 0; s < 10; ++s) {
    double loss = 0.0;
    ASSERT_TRUE(t.critic_real_step(loss));
    EXPECT_TRUE(within_clip(t.critic(), 0.03));
    t.critic_fake_step();
    EXPECT_TRUE(within_clip(t.critic(), 0.03));
  }
}

TEST(Wgan, GeneratorStepsLeaveLedgerAlone) {
  const Dataset d = toy_ring(2000, 8, kRingRadius, kRingStd, 1);
  WganTrainer t(d, toy_config(5));
  double loss = 0.0;
  ASSERT_TRUE(t.critic_real_step(loss));
  const PrivacyLedger before = t.accountant()->ledger();
  const Network g0 = t.generator();
  for (int s = 0; s < 5; ++s) t.generator_update();
  EXPECT_TRUE(t.accountant()->ledger() == before);
  EXPECT_FALSE(t.generator() == g0);
}

TEST(Wgan, Deterministic) {
  const Dataset d = toy_ring(2000, 8, kRingRadius, kRingStd, 1);
  const auto a = train_wgan(d, toy_config(6));
  const auto b = train_wgan(d, toy_config(6));
  EXPECT_TRUE(a.generator == b.generator);
  EXPECT_TRUE(a.critic == b.critic);
  EXPECT_TRUE(*a.ledger == *b.ledger);
}

TEST(Wgan, CeilingMarksPartial) {
  const Dataset d = toy_ring(2000, 8, kRingRadius, kRingStd, 1);
  auto cfg = toy_config(7);
  cfg.q = 0.2;
  cfg.mechanism = {1.0, 0.8};
  cfg.generator_steps = 500;
  cfg.epsilon_ceiling = 2.0;
  const auto r = train_wgan(d, cfg);
  EXPECT_TRUE(r.partial);
  EXPECT_LT(r.generator_steps, 500u);
  EXPECT_LE(r.bdp.epsilon, 2.0);
}

TEST(Wgan, RejectsBadConfig) {
  const Dataset d = toy_ring(100, 8, kRingRadius, kRingStd, 1);
  auto cfg = toy_config(0);
  cfg.critic_steps = 0;
  EXPECT_THROW(WganTrainer(d, cfg), ConfigError);
  cfg = toy_config(0);
  cfg.weight_clip = 0.0;
  EXPECT_THROW(WganTrainer(d, cfg), ConfigError);
  cfg = toy_config(0);
  cfg.image_output = true;  // toy points are not pixels
  EXPECT_THROW(WganTrainer(d, cfg), ConfigError);
}

// Non-private reference run: weight clip 0.01, 5000 generator steps, best
// of three seeds covers at least 7 of the 8 modes.
TEST(Wgan, NonPrivateToyRingCoversModes) {
  const Dataset d = toy_ring(100000, 8, kRingRadius, kRingStd, 1);
  const auto centers = ring_centers(8, kRingRadius);
  std::size_t best = 0;
  for (std::uint64_t seed = 0; seed < 3 && best < 7; ++seed) {
    GanConfig cfg = toy_ring_gan_defaults();
    cfg.mechanism = {1e9, 0.0};
    cfg.weight_clip = 0.01;
    cfg.generator_steps = 5000;
    cfg.seed = seed;
    const auto r = train_wgan(d, cfg);
    best = std::max(best, mode_coverage(generate(r.generator, 2000, 99), centers, kRingStd).covered);
  }
  EXPECT_GE(best, 7u);
}

TEST(Generate, ReproducibleAndSeeded) {
  GanConfig cfg;
  cfg.latent_dim = 16;
  cfg.generator_hidden = {32};
  const Network g = make_generator(cfg, 64);
  const auto a = generate(g, 50, 3);
  const auto b = generate(g, 50, 3);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.generator_id, b.generator_id);
  EXPECT_EQ(a.seed, 3u);
  EXPECT_FALSE(generate(g, 50, 4).samples == a.samples);
  EXPECT_THROW(generate(g, 0, 1), ConfigError);
}

TEST(Generate, ImageOutputsInUnitInterval) {
  GanConfig cfg;
  cfg.latent_dim = 4;
  cfg.generator_hidden = {16};
  Network g = make_generator(cfg, 10);
  // Blow up the weights so tanh saturates.
  g.for_each_block([](std::span<double> b) {
    for (double& v : b) v *= 50.0;
  });
  const auto s = generate(g, 500, 1);
  for (double v : s.samples.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Generate, UntrainedToyGeneratorMissesModes) {
  GanConfig cfg = toy_ring_gan_defaults();
  cfg.seed = 0;
  const Network g = make_generator(cfg, 2);
  const auto cov = mode_coverage(generate(g, 2000, 0), ring_centers(8, kRingRadius), kRingStd);
  EXPECT_LE(cov.covered, 3u);
}

TEST(ModeCoverage, SamplesAtCenters) {
  const auto centers = ring_centers(8, 2.0);
  std::vector<Point2> pts;
  for (int r = 0; r < 25; ++r) pts.insert(pts.end(), centers.begin(), centers.end());
  const auto cov = mode_coverage(points(pts), centers, 0.1);
  EXPECT_EQ(cov.covered, 8u);
  for (double f : cov.fractions) EXPECT_DOUBLE_EQ(f, 0.125);
}

TEST(ModeCoverage, SingleCenter) {
  const auto centers = ring_centers(8, 2.0);
  const auto cov = mode_coverage(points(std::vector<Point2>(100, centers[3])), centers, 0.1);
  EXPECT_EQ(cov.covered, 1u);
  EXPECT_DOUBLE_EQ(cov.fractions[3], 1.0);
}

TEST(ModeCoverage, FarRingCoversNothing) {
  const auto centers = ring_centers(8, 2.0);
  std::vector<Point2> pts;
  for (int i = 0; i < 1000; ++i) {
    const double a = 2.0 * M_PI * i / 1000.0;
    pts.push_back({100.0 * std::cos(a), 100.0 * std::sin(a)});
  }
  const auto cov = mode_coverage(points(pts), centers, 0.1);
  EXPECT_EQ(cov.covered, 0u);
  double total = 0.0;
  for (double f : cov.fractions) total += f;
  EXPECT_EQ(total, 0.0);
}

TEST(ModeCoverage, FractionsSumAtMostOne) {
  const auto centers = ring_centers(8, 2.0);
  Rng rng(1);
  Tensor t({3000, 2});
  for (double& v : t.data()) v = 2.0 * rng.normal();
  const auto cov = mode_coverage(t, centers, 0.3);
  double total = 0.0;
  for (double f : cov.fractions) total += f;
  EXPECT_LE(total, 1.0);
}

Network constant_detector(std::size_t inputs, int label) {
  DenseLayer l{inputs, 2, Activation::kIdentity, std::vector<double>(2 * inputs, 0.0),
               {label == 0 ? 1.0 : 0.0, label == 1 ? 1.0 : 0.0}};
  return Network({l});
}

Network three_class_net(std::size_t inputs) {
  Rng rng(1);
  const std::size_t sizes[] = {inputs, 3};
  return Network::dense(sizes, Activation::kIdentity, Activation::kIdentity, rng);
}

TEST(RotationStatistic, ConstantDetectors) {
  Rng rng(2);
  Tensor imgs({40, 4, 4});
  for (double& v : imgs.data()) v = rng.uniform();
  EXPECT_EQ(rotation_statistic(imgs, constant_detector(16, 1)), 1.0);
  EXPECT_EQ(rotation_statistic(imgs, constant_detector(16, 0)), 0.0);
  EXPECT_THROW(rotation_statistic(imgs, three_class_net(16)), DimensionError);
}

TEST(RotationTask, PairsUprightAndRotated) {
  Dataset d{Tensor({1, 2, 2}), std::vector<int>{7}, "t"};
  d.images[0] = 1;
  d.images[1] = 2;
  d.images[2] = 3;
  d.images[3] = 4;
  const Dataset r = rotation_task(d);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ((*r.labels)[0], 0);
  EXPECT_EQ((*r.labels)[1], 1);
  // [[1,2],[3,4]] rotated counter-clockwise is [[2,4],[1,3]].
  const std::vector<double> rot = {2, 4, 1, 3};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.images.row(1)[i], rot[i]);
}

}  // namespace
}  // namespace bdpgan
