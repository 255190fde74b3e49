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

// Experiment commands shared by the CLI and the test harness. Each command
// reads a flat key = value config, writes its artifacts into a locked run
// directory and returns a JSON report.

#ifndef BDPGAN_PIPELINE_HPP_
#define BDPGAN_PIPELINE_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdpgan/accountant.hpp"
#include "bdpgan/checkpoint.hpp"
#include "bdpgan/data.hpp"
#include "bdpgan/dpsgd.hpp"
#include "bdpgan/gan.hpp"
#include "bdpgan/mechanisms.hpp"

namespace bdpgan {

using json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;

// ---- Config ----------------------------------------------------------------

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in) {
    Config c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
      }
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      if (c.values_.count(key)) {
        throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      }
      c.values_[key] = value;
      c.lines_[key] = lineno;
    }
    return c;
  }

  static Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config is missing required key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    return to_real(key, require(key));
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const std::string v = require(key);
    std::uint64_t out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
      throw ConfigError(where(key) + "expected a nonnegative integer for '" + key + "', got '" + v + "'");
    }
    return out;
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const std::string v = require(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(where(key) + "expected true/false for '" + key + "', got '" + v + "'");
  }

  std::optional<double> optional_real(const std::string& key) const {
    if (!has(key)) {
      used_.insert(key);
      return std::nullopt;
    }
    return real(key, 0.0);
  }

  std::vector<std::size_t> sizes(const std::string& key, std::vector<std::size_t> fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    std::vector<std::size_t> out;
    for (const auto& part : split_list(require(key))) {
      std::size_t v = 0;
      auto r = std::from_chars(part.data(), part.data() + part.size(), v);
      if (r.ec != std::errc() || r.ptr != part.data() + part.size()) {
        throw ConfigError(where(key) + "bad list entry '" + part + "' for '" + key + "'");
      }
      out.push_back(v);
    }
    return out;
  }

  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) out.push_back(k);
    }
    return out;
  }

  json echo() const {
    json j = json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  std::string text() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
    return s;
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
      std::size_t end = s.find(',', start);
      if (end == std::string::npos) end = s.size();
      const std::string part = trim(s.substr(start, end - start));
      if (!part.empty()) out.push_back(part);
      start = end + 1;
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::string where(const std::string& key) const {
    auto it = lines_.find(key);
    return it == lines_.end() ? "" : "config line " + std::to_string(it->second) + ": ";
  }

  double to_real(const std::string& key, const std::string& v) const {
    double out = 0.0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
      throw ConfigError(where(key) + "expected a number for '" + key + "', got '" + v + "'");
    }
    return out;
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
  mutable std::set<std::string> used_;
};

// ---- Run directory ---------------------------------------------------------

// Exclusive lock on a run directory, released on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw ConfigError("run directory " + dir.string() + " is locked by another run");
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct RunOptions {
  std::filesystem::path out_dir = "runs/default";
  std::optional<std::uint64_t> seed;    // overrides the config
  std::optional<std::size_t> threads;   // overrides the config
  std::ostream* log = nullptr;
};

// ---- Images ----------------------------------------------------------------

// Binary PGM (P5). Each cell is the image plus a 1-pixel separator on its
// right and bottom edges, so the file is (side+1)*cols wide and
// (side+1)*rows high.
inline void write_pgm_grid(const std::filesystem::path& path, const Tensor& images,
                           std::size_t height, std::size_t width, std::size_t rows,
                           std::size_t cols) {
  if (images.row_size() != height * width) {
    throw DimensionError("grid expects images of " + std::to_string(height * width) + " pixels");
  }
  const std::size_t ch = height + 1, cw = width + 1;
  const std::size_t H = ch * rows, W = cw * cols;
  std::vector<std::uint8_t> pix(H * W, 128);
  for (std::size_t k = 0; k < std::min(images.rows(), rows * cols); ++k) {
    const std::size_t r0 = (k / cols) * ch, c0 = (k % cols) * cw;
    auto img = images.row(k);
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const double v = std::clamp(img[r * width + c], 0.0, 1.0);
        pix[(r0 + r) * W + c0 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << W << " " << H << "\n255\n";
  out.write(reinterpret_cast<const char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

struct PgmImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};

inline PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  PgmImage img;
  in >> magic >> img.width >> img.height >> maxval;
  in.get();
  if (magic != "P5" || maxval != 255) throw ParseError("not a binary 8-bit PGM", 0);
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw ParseError("truncated PGM payload", static_cast<std::size_t>(in.gcount()));
  return img;
}

// ---- Reports ---------------------------------------------------------------

inline json number_or_null(double v) {
  return std::isfinite(v) ? json(v) : json(nullptr);
}

inline json guarantee_json(const PrivacyGuarantee& g) {
  json j;
  j["track"] = std::string(track_name(g.track));
  j["epsilon"] = number_or_null(g.epsilon);
  j["delta"] = g.delta;
  j["achieving_lambda"] = g.achieving_lambda;
  if (g.track == Track::kBayesian) {
    json pairs = json::array();
    for (const auto& p : g.percentile_pairs) {
      pairs.push_back({{"percentile", p.percentile}, {"epsilon", p.epsilon}, {"delta", p.delta}});
    }
    j["percentile_pairs"] = pairs;
  }
  return j;
}

// Both tracks together with the UCB failure mass; never one without the other.
inline json guarantees_json(const std::optional<PrivacyLedger>& ledger, const PrivacyGuarantee& bdp,
                            const PrivacyGuarantee& wc) {
  json j;
  j["private"] = ledger.has_value();
  if (!ledger) j["note"] = "non-private run: noise multiplier is 0, no privacy guarantee";
  j["bdp"] = guarantee_json(bdp);
  j["worst_case"] = guarantee_json(wc);
  j["gamma_spent"] = ledger ? ledger->gamma_spent() : 0.0;
  j["accounted_iterations"] = ledger ? ledger->iterations() : 0;
  if (ledger && std::isfinite(bdp.epsilon) && bdp.delta < 1e-5) {
    j["percentile_statement"] = markov_percentile(bdp.epsilon, bdp.delta, 1e-5).statement;
  }
  return j;
}

inline json report_skeleton(const std::string& command, const Config& cfg, std::uint64_t seed) {
  json r;
  r["schema_version"] = kReportSchemaVersion;
  r["command"] = command;
  r["run_id"] = command + "-" + std::to_string(seed) + "-" +
                std::to_string(hash_name(cfg.text()) & 0xffffffffULL);
  r["seed"] = seed;
  r["config"] = cfg.echo();
  r["artifacts"] = json::object();
  r["metrics"] = json::object();
  r["warnings"] = json::array();
  return r;
}

inline void write_report(const std::filesystem::path& path, json& report,
                         std::chrono::steady_clock::time_point t0) {
  report["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << report.dump(2) << "\n";
}

inline void note_unused(const Config& cfg, json& report) {
  for (const auto& k : cfg.unused_keys()) {
    report["warnings"].push_back("unused config key '" + k + "'");
  }
}

// ---- Config to domain objects ---------------------------------------------

inline std::uint64_t run_seed(const Config& cfg, const RunOptions& opt) {
  return opt.seed ? *opt.seed : cfg.integer("seed", 0);
}

inline std::size_t run_threads(const Config& cfg, const RunOptions& opt) {
  return std::max<std::size_t>(1, opt.threads ? *opt.threads : cfg.integer("threads", 1));
}

inline std::filesystem::path data_dir(const Config& cfg) {
  return cfg.str("data_dir", default_data_dir().string());
}

inline Dataset limit(const Dataset& d, std::size_t n) {
  if (n == 0 || n >= d.size()) return d;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return d.subset(idx);
}

// Images at their stored resolution (28x28 for both MNIST variants).
// `part` is "train" or "test".
inline Dataset load_source(const Config& cfg, const std::string& part) {
  const std::string kind = cfg.str("dataset", "mnist8");
  if (kind == "toy_ring") {
    const std::size_t n = cfg.integer(part == "train" ? "toy_n" : "toy_test_n", part == "train" ? 100000 : 10000);
    const std::uint64_t seed = cfg.integer("toy_seed", 1) + (part == "train" ? 0 : 1);
    return toy_ring(n, cfg.integer("toy_modes", 8), cfg.real("toy_radius", 2.0),
                    cfg.real("toy_std", 0.1), seed);
  }
  if (kind != "mnist" && kind != "mnist8") {
    throw ConfigError("unknown dataset '" + kind + "' (expected mnist, mnist8 or toy_ring)");
  }
  Dataset d = load_idx_dataset(data_dir(cfg), part == "train" ? "train" : "t10k");
  return limit(d, cfg.integer(part == "train" ? "train_limit" : "test_limit", 0));
}

// Source images brought to the working resolution of `dataset`.
inline Dataset to_working(const Config& cfg, const Dataset& source) {
  return cfg.str("dataset", "mnist8") == "mnist8" ? downsample_to_8x8(source) : source;
}

// dataset = mnist | mnist8 | toy_ring.
inline Dataset load_dataset(const Config& cfg, const std::string& part) {
  return to_working(cfg, load_source(cfg, part));
}

inline MechanismParams mechanism_from(const Config& cfg, json* report = nullptr) {
  MechanismParams m;
  m.clip_norm = cfg.real("clip_norm", 1.0);
  if (cfg.has("target_epsilon") || cfg.has("target_delta")) {
    const Calibration c = calibrate_sigma(cfg.real("target_epsilon", 1.0),
                                          cfg.real("target_delta", 1e-5), m.clip_norm);
    m.noise_multiplier = c.noise_multiplier;
    if (report && !c.warning.empty()) (*report)["warnings"].push_back(c.warning);
  } else {
    m.noise_multiplier = cfg.real("noise_multiplier", 0.0);
  }
  m.validate();
  return m;
}

inline std::vector<int> lambda_grid_from(const Config& cfg) {
  const std::size_t max = cfg.integer("lambda_max", 32);
  if (max < 1) throw ConfigError("lambda_max must be at least 1");
  std::vector<int> g(max);
  std::iota(g.begin(), g.end(), 1);
  return g;
}

inline CorruptionSpec corruption_from(const Config& cfg) {
  CorruptionSpec s;
  const std::string kind = cfg.str("corrupt_kind", "rotate90");
  if (kind == "rotate90") s.kind = CorruptionKind::kRotate90;
  else if (kind == "invert") s.kind = CorruptionKind::kInvert;
  else throw ConfigError("unknown corrupt_kind '" + kind + "'");
  s.fraction = cfg.real("corrupt_fraction", 0.0);
  s.seed = cfg.integer("corrupt_seed", 0);
  return s;
}

inline GanConfig gan_config_from(const Config& cfg, const Dataset& train, std::uint64_t seed,
                                 std::size_t threads, json* report = nullptr) {
  GanConfig g;
  g.latent_dim = cfg.integer("latent_dim", 64);
  g.critic_steps = cfg.integer("critic_steps", 5);
  g.weight_clip = cfg.real("weight_clip", 0.01);
  g.generator_hidden = cfg.sizes("generator_hidden", {256, 256});
  g.critic_hidden = cfg.sizes("critic_hidden", {256, 64});
  g.generator_activation = parse_activation(cfg.str("generator_activation", "selu"));
  g.critic_activation = parse_activation(cfg.str("critic_activation", "relu"));
  g.image_output = cfg.str("dataset", "mnist8") != "toy_ring";
  g.generator_steps = cfg.integer("generator_steps", 1000);
  const double batch = cfg.real("batch_size", 64.0);
  g.q = cfg.has("q") ? cfg.real("q", 0.01) : batch / static_cast<double>(train.size());
  g.fake_batch = cfg.integer("fake_batch", 0);
  g.generator_batch = cfg.integer("generator_batch", 0);
  g.mechanism = mechanism_from(cfg, report);
  g.optimizer.rule = cfg.str("optimizer", "rmsprop") == "sgd" ? UpdateRule::kSgd : UpdateRule::kRmsprop;
  g.optimizer.lr = cfg.real("lr", 5e-5);
  g.optimizer.decay = cfg.real("rmsprop_decay", 0.9);
  g.optimizer.eps = cfg.real("rmsprop_eps", 1e-8);
  g.generator_clip = cfg.optional_real("generator_clip");
  g.samples_per_step = cfg.integer("samples_per_step", 64);
  g.gamma = cfg.real("gamma", 0.0);
  g.lambda_grid = lambda_grid_from(cfg);
  g.epsilon_ceiling = cfg.optional_real("epsilon_ceiling");
  g.delta_bdp = cfg.real("delta_bdp", 1e-10);
  g.delta_wc = cfg.real("delta_wc", 1e-5);
  g.seed = seed;
  g.threads = threads;
  g.validate();
  return g;
}

inline ClassifierConfig classifier_config_from(const Config& cfg, const Dataset& train,
                                               std::uint64_t seed, std::size_t threads,
                                               json* report = nullptr) {
  ClassifierConfig c;
  c.hidden = cfg.sizes("classifier_hidden", {200});
  c.activation = parse_activation(cfg.str("classifier_activation", "selu"));
  c.steps = cfg.integer("classifier_steps", 1000);
  const double batch = cfg.real("classifier_batch_size", 256.0);
  c.q = cfg.has("classifier_q") ? cfg.real("classifier_q", 0.01)
                                : batch / static_cast<double>(train.size());
  c.mechanism = mechanism_from(cfg, report);
  c.optimizer.rule = cfg.str("classifier_optimizer", "sgd") == "rmsprop" ? UpdateRule::kRmsprop : UpdateRule::kSgd;
  c.optimizer.lr = cfg.real("classifier_lr", 0.1);
  c.samples_per_step = cfg.integer("samples_per_step", 64);
  c.gamma = cfg.real("gamma", 0.0);
  c.lambda_grid = lambda_grid_from(cfg);
  c.epsilon_ceiling = cfg.optional_real("epsilon_ceiling");
  c.delta_bdp = cfg.real("delta_bdp", 1e-10);
  c.delta_wc = cfg.real("delta_wc", 1e-5);
  c.seed = seed;
  c.threads = threads;
  c.num_classes = cfg.integer("num_classes", 10);
  return c;
}

inline void log_line(const RunOptions& opt, const std::string& s) {
  if (opt.log) *opt.log << s << std::endl;
}

// ---- Commands --------------------------------------------------------------

struct CommandResult {
  json report;
  int exit_code = static_cast<int>(ExitCode::kOk);
};

inline int exit_for(const GanResult& r, const Config& cfg) {
  if (r.diverged) return static_cast<int>(ExitCode::kDivergence);
  if (r.partial && cfg.str("ceiling_action", "stop") == "abort") {
    return static_cast<int>(ExitCode::kPrivacyCeiling);
  }
  return static_cast<int>(ExitCode::kOk);
}

struct TrainedGan {
  GanResult result;
  json summary;
};

// Trains one GAN into `dir`: checkpoints, ledger, norm log, sample grid.
inline TrainedGan train_gan_into(const Dataset& train, const GanConfig& gc,
                                 const std::filesystem::path& dir, const std::string& tag,
                                 const RunOptions& opt, std::size_t grid_side) {
  std::filesystem::create_directories(dir);
  const auto norm_path = dir / (tag + "norm_log.csv");
  std::ofstream norm_log(norm_path, std::ios::trunc);
  GanHooks hooks;
  hooks.norm_log = gc.accounted() ? &norm_log : nullptr;
  hooks.log_every = 100;
  hooks.on_step = [&](const GanLogRow& row) {
    std::ostringstream s;
    s << tag << "step " << row.generator_step << " critic " << row.critic_loss << " generator "
      << row.generator_loss << " bdp_eps " << row.bdp_epsilon << " wc_eps " << row.wc_epsilon;
    log_line(opt, s.str());
  };
  TrainedGan t;
  t.result = train_wgan(train, gc, hooks);
  norm_log.close();
  if (!gc.accounted()) std::filesystem::remove(norm_path);

  const auto gen_path = dir / (tag + "generator.bdpn");
  const auto crit_path = dir / (tag + "critic.bdpn");
  save_network(t.result.generator, gen_path);
  save_network(t.result.critic, crit_path);
  json artifacts;
  artifacts["generator"] = gen_path.string();
  artifacts["critic"] = crit_path.string();
  if (t.result.ledger) {
    const auto ledger_path = dir / (tag + "ledger.txt");
    t.result.ledger->save(ledger_path);
    artifacts["ledger"] = ledger_path.string();
    artifacts["norm_log"] = norm_path.string();
  }
  if (gc.image_output && train.height() == train.width()) {
    const auto grid_path = dir / (tag + "samples.pgm");
    const auto batch = generate(t.result.generator, grid_side * grid_side, gc.seed);
    write_pgm_grid(grid_path, batch.samples, train.height(), train.width(), grid_side, grid_side);
    artifacts["sample_grid"] = grid_path.string();
  }
  t.summary["artifacts"] = artifacts;
  t.summary["guarantees"] = guarantees_json(t.result.ledger, t.result.bdp, t.result.worst_case);
  t.summary["generator_steps"] = t.result.generator_steps;
  t.summary["critic_real_updates"] = t.result.critic_real_updates;
  t.summary["skipped_empty_batches"] = t.result.skipped_empty;
  t.summary["stopped_at_ceiling"] = t.result.partial;
  t.summary["diverged"] = t.result.diverged;
  if (t.result.diverged) t.summary["divergence"] = t.result.divergence;
  t.summary["max_clipped_contribution"] = t.result.max_contribution;
  return t;
}

inline CommandResult cmd_train_gan(const Config& cfg, const RunOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  RunLock lock(opt.out_dir);
  const std::uint64_t seed = run_seed(cfg, opt);
  CommandResult res;
  res.report = report_skeleton("train-gan", cfg, seed);
  const Dataset train = load_dataset(cfg, "train");
  const GanConfig gc = gan_config_from(cfg, train, seed, run_threads(cfg, opt), &res.report);
  const std::size_t grid = cfg.integer("grid_side", 10);
  if (!gc.accounted()) res.report["warnings"].push_back("non-private mode: noise_multiplier = 0");
  TrainedGan t = train_gan_into(train, gc, opt.out_dir, "", opt, grid);
  res.report["mode"] = gc.accounted() ? "private" : "non-private";
  res.report["noise_multiplier"] = gc.mechanism.noise_multiplier;
  res.report["clip_norm"] = gc.mechanism.clip_norm;
  res.report["q"] = gc.q;
  res.report["guarantees"] = t.summary["guarantees"];
  res.report["artifacts"] = t.summary["artifacts"];
  for (const char* k : {"generator_steps", "critic_real_updates", "skipped_empty_batches",
                        "stopped_at_ceiling", "diverged", "max_clipped_contribution"}) {
    res.report["metrics"][k] = t.summary[k];
  }
  if (t.result.diverged) res.report["metrics"]["divergence"] = t.result.divergence;
  if (!gc.image_output) {
    const auto centers = ring_centers(cfg.integer("toy_modes", 8), cfg.real("toy_radius", 2.0));
    const auto batch = generate(t.result.generator, cfg.integer("coverage_samples", 2000), seed + 1);
    const auto cov = mode_coverage(batch, centers, cfg.real("toy_std", 0.1));
    res.report["metrics"]["modes_covered"] = cov.covered;
    res.report["metrics"]["mode_fractions"] = cov.fractions;
  }
  res.exit_code = exit_for(t.result, cfg);
  res.report["exit_code"] = res.exit_code;
  note_unused(cfg, res.report);
  res.report["artifacts"]["report"] = (opt.out_dir / "report.json").string();
  write_report(opt.out_dir / "report.json", res.report, t0);
  return res;
}

struct DetectorStats {
  Network net;
  double fpr = 0.0;  // upright images flagged
  double tpr = 0.0;  // rotated images flagged
};

// Upright-vs-rotated classifier trained on public-side images; rates are
// measured on a disjoint held-out part. Rotation happens at source
// resolution and `working` maps images to what the generators produce.
inline DetectorStats train_rotation_detector(const Dataset& public_images, std::uint64_t seed,
                                             const PlainTrainConfig& base,
                                             const std::function<Dataset(const Dataset&)>& working =
                                                 [](const Dataset& d) { return d; }) {
  const double fr[] = {0.5, 0.5};
  auto parts = split(public_images, fr, derive_seed(seed, "detector-split", 0));
  PlainTrainConfig pc = base;
  pc.num_classes = 2;
  pc.seed = derive_seed(seed, "detector", 0);
  DetectorStats s;
  s.net = train_classifier(working(rotation_task(parts[0])), pc);
  const Dataset& held = parts[1];
  Dataset rotated = held;
  for (std::size_t i = 0; i < held.size(); ++i) {
    rotate90_ccw(held.images.row(i), rotated.images.row(i), held.width());
  }
  s.fpr = rotation_statistic(working(held).images, s.net);
  s.tpr = rotation_statistic(working(rotated).images, s.net);
  return s;
}

inline CommandResult cmd_inspect(const Config& cfg, const RunOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  RunLock lock(opt.out_dir);
  const std::uint64_t seed = run_seed(cfg, opt);
  const std::size_t threads = run_threads(cfg, opt);
  CommandResult res;
  res.report = report_skeleton("inspect", cfg, seed);
  // The bug lives in preprocessing, so it hits source-resolution images
  // before any downsampling.
  const Dataset source_train = load_source(cfg, "train");
  const Dataset source_test = load_source(cfg, "test");
  const Dataset train = to_working(cfg, source_train);
  CorruptionSpec spec = corruption_from(cfg);
  if (!cfg.has("corrupt_seed")) spec.seed = derive_seed(seed, "corrupt", 0);
  CorruptionResult bug = corrupt(source_train, spec);
  bug.dataset = to_working(cfg, bug.dataset);
  res.report["corruption"] = {{"kind", spec.kind == CorruptionKind::kRotate90 ? "rotate90" : "invert"},
                              {"fraction", spec.fraction},
                              {"seed", spec.seed},
                              {"rotation_direction", bug.rotation_direction},
                              {"altered_train_images", bug.altered.size()}};

  const GanConfig gc = gan_config_from(cfg, train, seed, threads, &res.report);
  const std::size_t grid = cfg.integer("grid_side", 10);
  log_line(opt, "training clean GAN");
  TrainedGan clean = train_gan_into(train, gc, opt.out_dir, "clean_", opt, grid);
  log_line(opt, "training bug GAN");
  TrainedGan buggy = train_gan_into(bug.dataset, gc, opt.out_dir, "bug_", opt, grid);

  PlainTrainConfig dc;
  dc.hidden = cfg.sizes("detector_hidden", {64});
  dc.epochs = cfg.integer("detector_epochs", 10);
  dc.min_steps = cfg.integer("detector_min_steps", 2000);
  dc.optimizer.lr = cfg.real("detector_lr", 0.05);
  const DetectorStats det = train_rotation_detector(
      source_test, seed, dc, [&](const Dataset& d) { return to_working(cfg, d); });
  save_network(det.net, opt.out_dir / "detector.bdpn");

  const std::size_t n = cfg.integer("inspect_samples", 2000);
  const auto clean_batch = generate(clean.result.generator, n, derive_seed(seed, "inspect", 0));
  const auto bug_batch = generate(buggy.result.generator, n, derive_seed(seed, "inspect", 1));
  const double f_clean = rotation_statistic(clean_batch, det.net);
  const double f_bug = rotation_statistic(bug_batch, det.net);
  const double margin = cfg.real("signal_margin", 0.10);
  res.report["metrics"] = {{"detector_fpr", det.fpr},
                           {"detector_tpr", det.tpr},
                           {"clean_flagged_fraction", f_clean},
                           {"bug_flagged_fraction", f_bug},
                           {"signal", f_bug - f_clean},
                           {"signal_margin", margin},
                           {"bug_detected", f_bug - f_clean >= margin},
                           {"samples_per_model", n}};
  res.report["clean"] = clean.summary;
  res.report["bug"] = buggy.summary;
  res.report["artifacts"]["clean_grid"] = clean.summary["artifacts"].value("sample_grid", "");
  res.report["artifacts"]["bug_grid"] = buggy.summary["artifacts"].value("sample_grid", "");
  res.report["artifacts"]["detector"] = (opt.out_dir / "detector.bdpn").string();
  res.exit_code = std::max(exit_for(clean.result, cfg), exit_for(buggy.result, cfg));
  res.report["exit_code"] = res.exit_code;
  note_unused(cfg, res.report);
  write_report(opt.out_dir / "report.json", res.report, t0);
  return res;
}

inline CommandResult cmd_train_classifier(const Config& cfg, const RunOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  RunLock lock(opt.out_dir);
  const std::uint64_t seed = run_seed(cfg, opt);
  CommandResult res;
  res.report = report_skeleton("train-classifier", cfg, seed);
  const Dataset train = load_dataset(cfg, "train");
  const Dataset test = load_dataset(cfg, "test");
  const ClassifierConfig cc = classifier_config_from(cfg, train, seed, run_threads(cfg, opt), &res.report);
  std::ofstream train_log(opt.out_dir / "train_log.csv", std::ios::trunc);
  std::ofstream norm_log(opt.out_dir / "classifier_norm_log.csv", std::ios::trunc);
  ClassifierHooks hooks;
  hooks.train_log = &train_log;
  hooks.norm_log = cc.accounted() ? &norm_log : nullptr;
  const ClassifierResult cr = train_private_classifier(train, cc, hooks);
  norm_log.close();
  if (!cc.accounted()) {
    std::filesystem::remove(opt.out_dir / "classifier_norm_log.csv");
    res.report["warnings"].push_back("non-private mode: noise_multiplier = 0");
  }
  save_network(cr.net, opt.out_dir / "classifier.bdpn");
  res.report["artifacts"]["classifier"] = (opt.out_dir / "classifier.bdpn").string();
  res.report["artifacts"]["train_log"] = (opt.out_dir / "train_log.csv").string();
  if (cr.ledger) {
    cr.ledger->save(opt.out_dir / "classifier_ledger.txt");
    res.report["artifacts"]["ledger"] = (opt.out_dir / "classifier_ledger.txt").string();
    res.report["artifacts"]["norm_log"] = (opt.out_dir / "classifier_norm_log.csv").string();
  }
  res.report["mode"] = cc.accounted() ? "private" : "non-private";
  res.report["noise_multiplier"] = cc.mechanism.noise_multiplier;
  res.report["clip_norm"] = cc.mechanism.clip_norm;
  res.report["q"] = cc.q;
  res.report["guarantees"] = guarantees_json(cr.ledger, cr.bdp, cr.worst_case);
  res.report["metrics"] = {{"test_accuracy", evaluate(cr.net, test)},
                           {"steps_applied", cr.steps_applied},
                           {"steps_skipped", cr.steps_skipped},
                           {"stopped_at_ceiling", cr.partial},
                           {"max_clipped_contribution", cr.max_contribution}};
  if (cr.partial && cfg.str("ceiling_action", "stop") == "abort") {
    res.exit_code = static_cast<int>(ExitCode::kPrivacyCeiling);
  }
  res.report["exit_code"] = res.exit_code;
  note_unused(cfg, res.report);
  write_report(opt.out_dir / "report.json", res.report, t0);
  return res;
}

struct AnnotateRequest {
  std::filesystem::path generator;
  std::filesystem::path annotator;
  std::size_t n = 0;
  std::size_t height = 0, width = 0;  // 0: square from the generator width
  std::uint64_t seed = 0;
  std::string prefix = "synthetic";
};

inline CommandResult cmd_annotate(const AnnotateRequest& req, const RunOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  if (req.n == 0) throw ConfigError("annotate needs n >= 1");
  RunLock lock(opt.out_dir);
  const Network gen = load_network(req.generator);
  const Network ann = load_network(req.annotator);
  if (gen.output_dim() != ann.input_dim()) {
    throw DimensionError("generator emits " + std::to_string(gen.output_dim()) +
                         " values but the annotator expects " + std::to_string(ann.input_dim()));
  }
  std::size_t h = req.height, w = req.width;
  if (h == 0 || w == 0) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(gen.output_dim()))));
    if (side * side != gen.output_dim()) throw ConfigError("give image height and width explicitly");
    h = w = side;
  }
  if (h * w != gen.output_dim()) throw ConfigError("image shape does not match generator output");
  CommandResult res;
  Config echo;
  echo.set("generator", req.generator.string());
  echo.set("annotator", req.annotator.string());
  echo.set("n", std::to_string(req.n));
  res.report = report_skeleton("annotate", echo, req.seed);
  const SyntheticBatch batch = generate(gen, req.n, req.seed);
  if (!squashes_output(gen)) {
    throw ConfigError("annotate needs an image generator (tanh output)");
  }
  Dataset d{batch.samples.reshaped({req.n, h, w}), predict(ann, batch.samples), req.prefix};
  save_idx_dataset(d, opt.out_dir, req.prefix);
  std::vector<std::size_t> hist(ann.output_dim(), 0);
  for (int l : *d.labels) ++hist[static_cast<std::size_t>(l)];
  const std::size_t nonzero = static_cast<std::size_t>(std::count_if(hist.begin(), hist.end(), [](std::size_t c) { return c > 0; }));
  if (nonzero <= 1) res.report["warnings"].push_back("degenerate label histogram: all samples got one label");
  res.report["metrics"] = {{"samples", req.n}, {"label_histogram", hist}, {"distinct_labels", nonzero},
                           {"generator_id", batch.generator_id}};
  res.report["artifacts"]["images"] = (opt.out_dir / (req.prefix + "-images-idx3-ubyte")).string();
  res.report["artifacts"]["labels"] = (opt.out_dir / (req.prefix + "-labels-idx1-ubyte")).string();
  write_report(opt.out_dir / "report.json", res.report, t0);
  return res;
}

struct CurvePoint {
  std::size_t budget = 0;
  double mean_accuracy = 0.0;
  std::size_t seeds = 0;
  std::vector<double> accuracies;
};

inline std::vector<std::size_t> parse_sweep(const std::string& text, std::size_t full) {
  std::vector<std::size_t> out;
  for (const auto& part : Config::split_list(text)) {
    if (part == "all") {
      out.push_back(full);
      continue;
    }
    std::size_t v = 0;
    auto r = std::from_chars(part.data(), part.data() + part.size(), v);
    if (r.ec != std::errc() || r.ptr != part.data() + part.size() || v == 0) {
      throw ConfigError("bad budget '" + part + "' in sweep");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty budget sweep");
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i] <= out[i - 1]) throw ConfigError("budget sweep must be strictly ascending");
  }
  if (out.back() > full) {
    throw ConfigError("budget " + std::to_string(out.back()) + " exceeds the " +
                      std::to_string(full) + " labelled synthetic examples");
  }
  return out;
}

// Students trained on the first b examples of a seed-dependent shuffle.
inline std::vector<CurvePoint> student_curve(const Dataset& synthetic, const Dataset& test,
                                             std::span<const std::size_t> budgets,
                                             std::size_t seeds, const PlainTrainConfig& base,
                                             std::uint64_t seed) {
  std::vector<CurvePoint> curve;
  for (std::size_t b : budgets) {
    if (b > synthetic.size()) throw ConfigError("budget exceeds dataset size");
    CurvePoint p;
    p.budget = b;
    p.seeds = seeds;
    for (std::size_t s = 0; s < seeds; ++s) {
      std::vector<std::size_t> perm(synthetic.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(seed, "student-subset", s);
      std::shuffle(perm.begin(), perm.end(), rng.engine());
      perm.resize(b);
      PlainTrainConfig pc = base;
      pc.seed = derive_seed(seed, "student", s);
      const Network net = train_classifier(synthetic.subset(perm), pc);
      p.accuracies.push_back(evaluate(net, test));
    }
    p.mean_accuracy = std::accumulate(p.accuracies.begin(), p.accuracies.end(), 0.0) /
                      static_cast<double>(seeds);
    curve.push_back(std::move(p));
  }
  return curve;
}

inline void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "budget,mean_accuracy,seed_count\n";
  for (const auto& p : curve) out << p.budget << "," << format_double(p.mean_accuracy) << "," << p.seeds << "\n";
}

inline PlainTrainConfig student_config_from(const Config& cfg) {
  PlainTrainConfig pc;
  pc.hidden = cfg.sizes("student_hidden", {200});
  pc.epochs = cfg.integer("student_epochs", 20);
  pc.min_steps = cfg.integer("student_min_steps", 500);
  pc.batch_size = cfg.integer("student_batch_size", 64);
  pc.optimizer.lr = cfg.real("student_lr", 0.05);
  return pc;
}

// Synthetic set from `synthetic_dir`/`synthetic_prefix`; real test set from
// the configured dataset.
inline CommandResult cmd_eval_student(const Config& cfg, const RunOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  RunLock lock(opt.out_dir);
  const std::uint64_t seed = run_seed(cfg, opt);
  CommandResult res;
  res.report = report_skeleton("eval-student", cfg, seed);
  const Dataset synthetic = load_idx_dataset(cfg.require("synthetic_dir"),
                                             cfg.str("synthetic_prefix", "synthetic"));
  if (!synthetic.labels) throw ConfigError("synthetic dataset has no labels");
  const Dataset test = load_dataset(cfg, "test");
  if (test.features() != synthetic.features()) {
    throw DimensionError("synthetic and test images differ in size");
  }
  const auto budgets = parse_sweep(cfg.str("sweep", "100,300,1000,3000,10000,all"), synthetic.size());
  const std::size_t seeds = cfg.integer("student_seeds", 3);
  const auto curve = student_curve(synthetic, test, budgets, seeds, student_config_from(cfg), seed);
  write_curve_csv(opt.out_dir / "student_curve.csv", curve);
  json pts = json::array();
  for (const auto& p : curve) {
    pts.push_back({{"budget", p.budget}, {"mean_accuracy", p.mean_accuracy}, {"accuracies", p.accuracies}});
  }
  res.report["metrics"]["curve"] = pts;
  res.report["artifacts"]["curve_csv"] = (opt.out_dir / "student_curve.csv").string();
  note_unused(cfg, res.report);
  write_report(opt.out_dir / "report.json", res.report, t0);
  return res;
}

struct AccountResult {
  PrivacyLedger ledger;
  PrivacyGuarantee bdp;
  PrivacyGuarantee worst_case;
  std::vector<MarkovBound> statements;
};

// Offline replay of a norm log under the accountant settings in `cfg`.
inline AccountResult account_norm_log(const std::vector<GradientNormSample>& rows, const Config& cfg,
                                      std::size_t planned_default) {
  const double clip = cfg.real("clip_norm", 1.0);
  AccountantConfig ac;
  ac.lambda_grid = lambda_grid_from(cfg);
  ac.sigma = mechanism_from(cfg).noise_multiplier;
  if (!(ac.sigma > 0.0)) throw ConfigError("accounting needs noise_multiplier > 0");
  ac.samples_per_step = cfg.integer("samples_per_step", 64);
  // q and the planned horizon follow the same keys the training commands read.
  const bool classifier = cfg.has("classifier_steps") || cfg.has("classifier_q") ||
                          cfg.has("classifier_batch_size");
  const std::string q_key = classifier ? "classifier_q" : "q";
  const std::string batch_key = classifier ? "classifier_batch_size" : "batch_size";
  if (cfg.has(q_key)) {
    ac.q = cfg.real(q_key, 0.01);
  } else {
    const double n = static_cast<double>(load_dataset(cfg, "train").size());
    ac.q = cfg.real(batch_key, classifier ? 256.0 : 64.0) / n;
  }
  std::size_t planned = planned_default;
  if (cfg.has("planned_iterations")) {
    planned = cfg.integer("planned_iterations", planned_default);
  } else if (classifier) {
    planned = cfg.integer("classifier_steps", 1000);
  } else if (cfg.has("generator_steps")) {
    planned = cfg.integer("generator_steps", 1000) * cfg.integer("critic_steps", 5);
  }
  const double gamma = cfg.real("gamma", 0.0);
  ac.gamma = gamma > 0.0 ? gamma : default_gamma(planned);
  for (const auto& r : rows) {
    for (double v : r.norms) {
      if (v > clip) {
        throw ConfigError("norm " + format_double(v) + " at iteration " + std::to_string(r.iteration) +
                          " exceeds clip norm " + format_double(clip));
      }
    }
  }
  AccountResult a{replay_norm_log(rows, ac, clip), {}, {}, {}};
  a.bdp = extract_guarantee(a.ledger, FixDelta{cfg.real("delta_bdp", 1e-10)}, Track::kBayesian);
  a.worst_case = extract_guarantee(a.ledger, FixDelta{cfg.real("delta_wc", 1e-5)}, Track::kWorstCase);
  for (double t : {1e-5, 1e-3}) {
    if (a.bdp.delta <= t) a.statements.push_back(markov_percentile(a.bdp.epsilon, a.bdp.delta, t));
  }
  return a;
}

inline CommandResult cmd_account(const std::filesystem::path& norm_log, const Config& cfg,
                                 const RunOptions& opt, bool write_files = true) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = read_norm_log(norm_log);
  const AccountResult a = account_norm_log(rows, cfg, std::max<std::size_t>(1, rows.size()));
  CommandResult res;
  res.report = report_skeleton("account", cfg, run_seed(cfg, opt));
  res.report["guarantees"] = guarantees_json(a.ledger, a.bdp, a.worst_case);
  json st = json::array();
  for (const auto& s : a.statements) st.push_back(s.statement);
  res.report["guarantees"]["percentile_statements"] = st;
  res.report["metrics"]["rows"] = rows.size();
  if (write_files) {
    RunLock lock(opt.out_dir);
    a.ledger.save(opt.out_dir / "replayed_ledger.txt");
    res.report["artifacts"]["ledger"] = (opt.out_dir / "replayed_ledger.txt").string();
    write_report(opt.out_dir / "report.json", res.report, t0);
  }
  return res;
}

inline CommandResult cmd_calibrate(double epsilon, double delta, double clip_norm) {
  const Calibration c = calibrate_sigma(epsilon, delta, clip_norm);
  CommandResult res;
  res.report["schema_version"] = kReportSchemaVersion;
  res.report["command"] = "calibrate";
  res.report["epsilon"] = epsilon;
  res.report["delta"] = delta;
  res.report["clip_norm"] = clip_norm;
  res.report["noise_multiplier"] = c.noise_multiplier;
  res.report["noise_stddev"] = c.noise_stddev;
  res.report["warnings"] = json::array();
  if (!c.warning.empty()) res.report["warnings"].push_back(c.warning);
  return res;
}

}  // namespace bdpgan

#endif  // BDPGAN_PIPELINE_HPP_
