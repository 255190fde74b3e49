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
#include <filesystem>
#include <fstream>

#include "bdpgan/pipeline.hpp"

namespace bdpgan {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("bdpgan_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunOptions options(const fs::path& dir) {
  RunOptions o;
  o.out_dir = dir;
  return o;
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST(Config, ParsesCommentsAndWhitespace) {
  const Config c = Config::parse_string(
      "# header\n"
      "dataset = toy_ring   # inline\n"
      "\n"
      "  lr=0.001\n"
      "hidden = 32, 16\n"
      "flag = true\n");
  EXPECT_EQ(c.str("dataset", ""), "toy_ring");
  EXPECT_DOUBLE_EQ(c.real("lr", 0.0), 0.001);
  EXPECT_EQ(c.sizes("hidden", {}), (std::vector<std::size_t>{32, 16}));
  EXPECT_TRUE(c.boolean("flag", false));
  EXPECT_EQ(c.integer("missing", 7u), 7u);
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_text([] { Config::parse_string("a = 1\n\nnot a pair\n"); }).find("line 3"),
            std::string::npos);
  EXPECT_NE(error_text([] { Config::parse_string("a = 1\na = 2\n"); }).find("line 2"),
            std::string::npos);
  const Config c = Config::parse_string("x = 1\nlr = fast\n");
  const std::string e = error_text([&] { c.real("lr", 0.0); });
  EXPECT_NE(e.find("line 2"), std::string::npos);
  EXPECT_THROW(c.require("absent"), ConfigError);
}

TEST(Config, ReportsUnusedKeys) {
  const Config c = Config::parse_string("a = 1\nb = 2\n");
  c.real("a", 0.0);
  EXPECT_EQ(c.unused_keys(), std::vector<std::string>{"b"});
  EXPECT_EQ(c.echo()["a"], "1");
}

TEST(RunDir, LockIsExclusive) {
  const auto dir = scratch_dir("lock");
  {
    RunLock a(dir);
    EXPECT_TRUE(fs::exists(dir / ".lock"));
    EXPECT_THROW(RunLock b(dir), ConfigError);
  }
  EXPECT_FALSE(fs::exists(dir / ".lock"));
  RunLock again(dir);
}

TEST(Pgm, GridDimensionsAndPixels) {
  const auto dir = scratch_dir("pgm");
  Tensor imgs({5, 3, 4});
  for (std::size_t i = 0; i < imgs.size(); ++i) imgs[i] = (i % 7) / 6.0;
  write_pgm_grid(dir / "g.pgm", imgs, 3, 4, 2, 3);
  const PgmImage p = read_pgm(dir / "g.pgm");
  EXPECT_EQ(p.width, 3u * 5u);
  EXPECT_EQ(p.height, 2u * 4u);
  ASSERT_EQ(p.pixels.size(), p.width * p.height);
  // Image 4 sits in row 1, column 1.
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double v = imgs.row(4)[r * 4 + c];
      EXPECT_EQ(p.pixels[(4 + r) * p.width + 5 + c], std::lround(v * 255.0));
    }
  }
  EXPECT_EQ(p.pixels[3 * p.width], 128);          // separator row
  EXPECT_EQ(p.pixels[(4 + 0) * p.width + 14], 128);  // empty sixth cell
}

TEST(Sweep, ParsesAndRejects) {
  EXPECT_EQ(parse_sweep("100, 300,all", 500), (std::vector<std::size_t>{100, 300, 500}));
  EXPECT_THROW(parse_sweep("300,100", 500), ConfigError);
  EXPECT_THROW(parse_sweep("100,600", 500), ConfigError);
  EXPECT_THROW(parse_sweep("ten", 500), ConfigError);
  EXPECT_THROW(parse_sweep("", 500), ConfigError);
}

TEST(Calibrate, Report) {
  const auto r = cmd_calibrate(1.0, 1e-5, 2.0);
  EXPECT_NEAR(r.report["noise_multiplier"].get<double>(), 4.84480, 1e-5);
  EXPECT_NEAR(r.report["noise_stddev"].get<double>(), 2.0 * 4.84480, 2e-5);
  EXPECT_TRUE(r.report["warnings"].empty());
  EXPECT_THROW(cmd_calibrate(1.0, 1.25, 1.0), ConfigError);
}

Config account_config() {
  return Config::parse_string("noise_multiplier = 1.0\nclip_norm = 1.0\nq = 0.01\n"
                              "samples_per_step = 4\ngamma = 1e-6\n");
}

TEST(Account, EmptyLogGivesNoCompositionBound) {
  const auto a = account_norm_log({}, account_config(), 1);
  EXPECT_EQ(a.ledger.iterations(), 0u);
  EXPECT_NEAR(a.bdp.epsilon, -std::log(1e-10) / 32.0, 1e-12);
}

TEST(Account, IdenticalRowsComposeLinearly) {
  const GradientNormSample row{{0.2, 0.9, 0.5, 1.0}, 0};
  const Config cfg = account_config();
  const auto one = account_norm_log({row}, cfg, 1);
  const auto many = account_norm_log(std::vector<GradientNormSample>(40, row), cfg, 1);
  for (std::size_t j = 0; j < 32; ++j) {
    EXPECT_NEAR(many.ledger.bdp_costs()[j], 40 * one.ledger.bdp_costs()[j],
                1e-12 * many.ledger.bdp_costs()[j]);
  }
}

TEST(Account, NormAboveClipIsHardError) {
  const GradientNormSample row{{0.2, 1.5}, 3};
  EXPECT_NE(error_text([&] { account_norm_log({row}, account_config(), 1); }).find("iteration 3"),
            std::string::npos);
}

TEST(Account, PercentileStatement) {
  EXPECT_EQ(markov_percentile(1.0, 1e-10, 1e-5).statement, "(1, 1e-05)-DP except <=1e-05 mass");
  const auto dir = scratch_dir("account");
  {
    std::ofstream log(dir / "norms.csv");
    write_norm_log_header(log, 4);
    for (std::size_t t = 0; t < 10; ++t) write_norm_log_row(log, {{0.1, 0.2, 0.3, 0.4}, t});
  }
  const auto r = cmd_account(dir / "norms.csv", account_config(), options(dir / "out"));
  const auto& g = r.report["guarantees"];
  EXPECT_TRUE(g["private"].get<bool>());
  EXPECT_EQ(g["accounted_iterations"], 10);
  EXPECT_TRUE(g.contains("gamma_spent"));
  EXPECT_TRUE(g["worst_case"].contains("epsilon"));
  EXPECT_EQ(r.report["guarantees"]["percentile_statements"].size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "out" / "replayed_ledger.txt"));
}

Config toy_gan_config(double sigma) {
  std::ostringstream s;
  s << "dataset = toy_ring\ntoy_n = 2000\nlatent_dim = 4\ngenerator_hidden = 16\n"
    << "critic_hidden = 16\ngenerator_steps = 6\nbatch_size = 40\nsamples_per_step = 8\n"
    << "noise_multiplier = " << sigma << "\nclip_norm = 1\n";
  return Config::parse_string(s.str());
}

TEST(TrainGan, NonPrivateRunIsFlagged) {
  const auto dir = scratch_dir("nonprivate");
  const auto r = cmd_train_gan(toy_gan_config(0.0), options(dir));
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.report["mode"], "non-private");
  EXPECT_FALSE(r.report["guarantees"]["private"].get<bool>());
  EXPECT_TRUE(r.report["guarantees"]["bdp"]["epsilon"].is_null());
  EXPECT_FALSE(r.report["warnings"].empty());
  EXPECT_TRUE(fs::exists(dir / "generator.bdpn"));
  EXPECT_FALSE(fs::exists(dir / "ledger.txt"));
}

TEST(TrainGan, NormLogReplayReproducesGuarantees) {
  const auto dir = scratch_dir("replay");
  const Config cfg = toy_gan_config(1.5);
  const auto r = cmd_train_gan(cfg, options(dir / "train"));
  ASSERT_EQ(r.exit_code, 0);
  const auto a = cmd_account(dir / "train" / "norm_log.csv", toy_gan_config(1.5),
                             options(dir / "account"));
  const double e1 = r.report["guarantees"]["bdp"]["epsilon"].get<double>();
  const double e2 = a.report["guarantees"]["bdp"]["epsilon"].get<double>();
  EXPECT_NEAR(e1, e2, 1e-9);
  EXPECT_TRUE(PrivacyLedger::load(dir / "train" / "ledger.txt") ==
              PrivacyLedger::load(dir / "account" / "replayed_ledger.txt"));
  const json report = json::parse(std::ifstream(dir / "train" / "report.json"));
  EXPECT_EQ(report["schema_version"], kReportSchemaVersion);
  EXPECT_TRUE(report["metrics"].contains("modes_covered"));
}

TEST(TrainGan, ConfigErrorsSurface) {
  const auto dir = scratch_dir("badcfg");
  Config c = toy_gan_config(1.0);
  c.set("dataset", "cifar");
  EXPECT_THROW(cmd_train_gan(c, options(dir)), ConfigError);
}

// Fixed generator/annotator pair for the annotate command.
struct AnnotateFixture {
  fs::path dir, gen, ann;
  explicit AnnotateFixture(const std::string& name, int constant_label = -1) {
    dir = scratch_dir(name);
    GanConfig gc;
    gc.latent_dim = 4;
    gc.generator_hidden = {8};
    save_network(make_generator(gc, 16), gen = dir / "g.bdpn");
    Rng rng(3);
    const std::size_t sizes[] = {16, 10};
    Network a = Network::dense(sizes, Activation::kIdentity, Activation::kIdentity, rng);
    if (constant_label >= 0) {
      for (double& w : a.mutable_layers()[0].weights) w = 0.0;
      for (double& b : a.mutable_layers()[0].bias) b = 0.0;
      a.mutable_layers()[0].bias[constant_label] = 1.0;
    }
    save_network(a, ann = dir / "a.bdpn");
  }
  AnnotateRequest request(std::size_t n) const {
    AnnotateRequest r;
    r.generator = gen;
    r.annotator = ann;
    r.n = n;
    r.seed = 5;
    return r;
  }
};

TEST(Annotate, ZeroSamplesRejected) {
  AnnotateFixture f("annotate0");
  EXPECT_THROW(cmd_annotate(f.request(0), options(f.dir / "out")), ConfigError);
}

TEST(Annotate, ConstantAnnotatorWarns) {
  AnnotateFixture f("annotate_const", 4);
  const auto r = cmd_annotate(f.request(50), options(f.dir / "out"));
  EXPECT_EQ(r.report["metrics"]["distinct_labels"], 1);
  EXPECT_EQ(r.report["metrics"]["label_histogram"][4], 50);
  EXPECT_FALSE(r.report["warnings"].empty());
}

TEST(Annotate, OutputRoundTripsThroughIdx) {
  AnnotateFixture f("annotate_idx");
  const auto out = f.dir / "out";
  cmd_annotate(f.request(30), options(out));
  const Dataset d = load_idx_dataset(out, "synthetic");
  ASSERT_EQ(d.size(), 30u);
  EXPECT_EQ(d.height(), 4u);
  const auto batch = generate(load_network(f.gen), 30, 5);
  const auto labels = predict(load_network(f.ann), batch.samples);
  EXPECT_EQ(*d.labels, labels);
  // Pixels are stored as bytes.
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    EXPECT_NEAR(d.images[i], std::round(batch.samples[i] * 255.0) / 255.0, 1e-12);
  }
  const auto bytes = read_file_bytes(out / "synthetic-images-idx3-ubyte");
  EXPECT_EQ(bytes, encode_idx(load_idx(out / "synthetic-images-idx3-ubyte")));
}

TEST(Curve, CsvColumns) {
  const auto dir = scratch_dir("curve");
  const std::vector<CurvePoint> pts = {{100, 0.5, 3, {}}, {200, 0.75, 3, {}}};
  write_curve_csv(dir / "c.csv", pts);
  std::ifstream in(dir / "c.csv");
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_EQ(l1, "budget,mean_accuracy,seed_count");
  EXPECT_EQ(l2, "100,0.5,3");
}

}  // namespace
}  // namespace bdpgan
