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

// Weight-clipped Wasserstein GAN. Only the critic's real-data half-step
// touches private data; it goes through the Gaussian mechanism and the dual
// accountant. Fake half-steps and generator steps are unaccounted.

#ifndef BDPGAN_GAN_HPP_
#define BDPGAN_GAN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdpgan/accountant.hpp"
#include "bdpgan/checkpoint.hpp"
#include "bdpgan/data.hpp"
#include "bdpgan/dpsgd.hpp"
#include "bdpgan/mechanisms.hpp"
#include "bdpgan/nn.hpp"
#include "bdpgan/rng.hpp"

namespace bdpgan {

struct GanConfig {
  std::size_t latent_dim = 64;
  std::size_t critic_steps = 5;
  double weight_clip = 0.01;
  std::vector<std::size_t> generator_hidden = {256, 256};
  std::vector<std::size_t> critic_hidden = {256, 64};
  Activation generator_activation = Activation::kSelu;
  Activation critic_activation = Activation::kRelu;
  bool image_output = true;  // tanh output mapped to [0, 1]; identity otherwise
  std::size_t generator_steps = 1000;
  double q = 0.01;                 // Poisson rate of real critic batches
  std::size_t fake_batch = 0;      // 0: round(q * n)
  std::size_t generator_batch = 0; // 0: as fake_batch
  MechanismParams mechanism{1.0, 1.0};
  OptimizerConfig optimizer{UpdateRule::kRmsprop, 5e-5, 0.9, 1e-8};
  std::optional<double> generator_clip;  // clip the generator gradient norm
  std::size_t samples_per_step = 64;
  double gamma = 0.0;  // 0: 1e-3 / planned accounted steps
  std::vector<int> lambda_grid = default_lambda_grid();
  std::optional<double> epsilon_ceiling;
  double delta_bdp = 1e-10;
  double delta_wc = 1e-5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  bool accounted() const { return mechanism.noise_multiplier > 0.0; }

  void validate() const {
    if (critic_steps < 1) throw ConfigError("critic_steps must be at least 1");
    if (!(weight_clip > 0.0)) throw ConfigError("weight_clip must be positive");
    if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("q must lie in (0, 1]");
    if (generator_steps == 0) throw ConfigError("generator_steps must be positive");
    if (generator_clip && !(*generator_clip > 0.0)) {
      throw ConfigError("generator_clip must be positive");
    }
    mechanism.validate();
  }
};

// ---- Generation ------------------------------------------------------------

// Settings that train on the 2-D ring mixture. Batch rate and mechanism are
// left to the caller.
inline GanConfig toy_ring_gan_defaults() {
  GanConfig c;
  c.image_output = false;
  c.generator_hidden = {64, 64};
  c.critic_hidden = {64, 64};
  c.weight_clip = 0.1;
  c.optimizer.lr = 5e-4;
  c.q = 64.0 / 100000.0;
  return c;
}

struct SyntheticBatch {
  Tensor samples;            // n x output_dim
  std::string generator_id;  // fingerprint of the generator checkpoint
  std::uint64_t seed = 0;
};

inline std::string network_fingerprint(const Network& net) {
  const auto bytes = encode_network(net);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// A tanh output layer marks an image generator; its outputs are mapped
// affinely onto [0, 1].
inline bool squashes_output(const Network& generator) {
  return generator.layers().back().activation == Activation::kTanh;
}

inline Tensor latent_batch(std::size_t n, std::size_t dim, Rng& rng) {
  Tensor z({n, dim});
  for (double& v : z.data()) v = rng.normal();
  return z;
}

inline void squash_in_place(Tensor& t) {
  for (double& v : t.data()) v = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
}

inline SyntheticBatch generate(const Network& generator, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("generate needs n >= 1");
  Rng rng(seed, "latent");
  SyntheticBatch b;
  b.seed = seed;
  b.generator_id = network_fingerprint(generator);
  b.samples = forward(generator, latent_batch(n, generator.input_dim(), rng));
  if (squashes_output(generator)) squash_in_place(b.samples);
  return b;
}

// ---- Metrics ---------------------------------------------------------------

struct ModeCoverage {
  std::size_t covered = 0;
  std::vector<double> fractions;  // per mode, nearest-center assignment
};

// A mode is covered when at least `min_fraction` of the samples lie within
// 3 * stddev of its center. Each sample counts for its nearest center only.
inline ModeCoverage mode_coverage(const Tensor& samples, std::span<const Point2> centers,
                                  double stddev, double min_fraction = 0.02) {
  if (samples.row_size() != 2) throw DimensionError("mode coverage needs 2-D samples");
  ModeCoverage r;
  r.fractions.assign(centers.size(), 0.0);
  const std::size_t n = samples.rows();
  if (n == 0 || centers.empty()) return r;
  const double radius2 = 9.0 * stddev * stddev;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = samples.at(i, 0);
    const double y = samples.at(i, 1);
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double dx = x - centers[k][0];
      const double dy = y - centers[k][1];
      const double d2 = dx * dx + dy * dy;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = k;
      }
    }
    if (best_d2 <= radius2) r.fractions[best] += 1.0;
  }
  for (double& f : r.fractions) {
    f /= static_cast<double>(n);
    if (f >= min_fraction) ++r.covered;
  }
  return r;
}

inline ModeCoverage mode_coverage(const SyntheticBatch& batch, std::span<const Point2> centers,
                                  double stddev) {
  return mode_coverage(batch.samples, centers, stddev);
}

// Class 0 = upright, class 1 = rotated. Returns the fraction labelled 1.
inline double rotation_statistic(const Tensor& samples, const Network& detector) {
  if (samples.rows() == 0) return 0.0;
  if (detector.output_dim() != 2) throw DimensionError("rotation detector needs two outputs");
  const auto labels = predict(detector, samples.reshaped({samples.rows(), samples.row_size()}));
  return static_cast<double>(std::count(labels.begin(), labels.end(), 1)) /
         static_cast<double>(labels.size());
}

inline double rotation_statistic(const SyntheticBatch& batch, const Network& detector) {
  return rotation_statistic(batch.samples, detector);
}

// Every image twice: upright (label 0) and rotated counter-clockwise
// (label 1).
inline Dataset rotation_task(const Dataset& images) {
  if (images.height() != images.width()) throw ConfigError("rotation needs square images");
  const std::size_t n = images.size();
  const std::size_t side = images.width();
  Dataset out{Tensor({2 * n, side, side}), std::vector<int>(2 * n), images.name + "-rotation"};
  for (std::size_t i = 0; i < n; ++i) {
    auto src = images.images.row(i);
    std::copy(src.begin(), src.end(), out.images.row(2 * i).begin());
    rotate90_ccw(src, out.images.row(2 * i + 1), side);
    (*out.labels)[2 * i] = 0;
    (*out.labels)[2 * i + 1] = 1;
  }
  return out;
}

// ---- Training --------------------------------------------------------------

inline Network make_generator(const GanConfig& cfg, std::size_t output_dim) {
  std::vector<std::size_t> sizes = {cfg.latent_dim};
  sizes.insert(sizes.end(), cfg.generator_hidden.begin(), cfg.generator_hidden.end());
  sizes.push_back(output_dim);
  Rng rng(cfg.seed, "generator-init");
  return Network::dense(std::span<const std::size_t>(sizes), cfg.generator_activation,
                        cfg.image_output ? Activation::kTanh : Activation::kIdentity, rng);
}

inline Network make_critic(const GanConfig& cfg, std::size_t input_dim) {
  std::vector<std::size_t> sizes = {input_dim};
  sizes.insert(sizes.end(), cfg.critic_hidden.begin(), cfg.critic_hidden.end());
  sizes.push_back(1);
  Rng rng(cfg.seed, "critic-init");
  Network net = Network::dense(std::span<const std::size_t>(sizes), cfg.critic_activation,
                               Activation::kIdentity, rng);
  return net;
}

inline void clip_weights(Network& net, double w) {
  net.for_each_block([w](std::span<double> block) {
    for (double& v : block) v = std::clamp(v, -w, w);
  });
}

inline bool parameters_finite(Network& net) {
  bool ok = true;
  net.for_each_block([&](std::span<double> block) {
    for (double v : block) ok = ok && std::isfinite(v);
  });
  return ok;
}

struct GeneratorStepResult {
  double loss = 0.0;  // mean of -D(G(z))
  double grad_norm = 0.0;
};

// One generator update through a fixed critic. Reads no real data.
inline GeneratorStepResult generator_step(Network& generator, const Network& critic,
                                          std::size_t batch, const OptimizerConfig& opt,
                                          OptimizerState& state, Rng& latent_rng,
                                          std::optional<double> clip = std::nullopt) {
  const Tensor z = latent_batch(batch, generator.input_dim(), latent_rng);
  const ForwardCache gen = forward_cached(generator, z);
  Tensor fake = gen.output();
  const bool squash = squashes_output(generator);
  if (squash) {
    for (double& v : fake.data()) v = 0.5 * (v + 1.0);
  }
  const ForwardCache crit = forward_cached(critic, fake);
  Tensor out_grad({batch, 1}, -1.0 / static_cast<double>(batch));
  GeneratorStepResult r;
  for (double v : crit.output().data()) r.loss -= v;
  r.loss /= static_cast<double>(batch);
  BackwardResult through = backward(critic, crit, out_grad, true);
  if (squash) {
    for (double& v : through.input_grad.data()) v *= 0.5;
  }
  std::vector<double> g = backward(generator, gen, through.input_grad).param_grad;
  r.grad_norm = l2_norm(g);
  if (clip) clip_in_place(g, *clip);
  optimizer_step(generator, g, opt, state);
  return r;
}

struct GanLogRow {
  std::size_t generator_step = 0;
  double critic_loss = 0.0;  // mean D(fake) - mean D(real) estimate
  double generator_loss = 0.0;
  double bdp_epsilon = 0.0;
  double wc_epsilon = 0.0;
};

struct GanHooks {
  std::ostream* norm_log = nullptr;
  std::function<void(const GanLogRow&)> on_step;
  std::size_t log_every = 100;
};

struct GanResult {
  Network generator;
  Network critic;
  std::optional<PrivacyLedger> ledger;
  PrivacyGuarantee bdp;
  PrivacyGuarantee worst_case;
  std::size_t generator_steps = 0;
  std::size_t critic_real_updates = 0;
  std::size_t skipped_empty = 0;
  bool partial = false;   // stopped at the epsilon ceiling
  bool diverged = false;  // networks hold the last finite state
  std::string divergence;
  double max_contribution = 0.0;
};

class WganTrainer {
 public:
  WganTrainer(const Dataset& real, GanConfig cfg)
      : cfg_(std::move(cfg)),
        real_(&real),
        x_(real.images.reshaped({real.size(), real.features()})),
        batch_rng_(cfg_.seed, "batch"),
        noise_rng_(cfg_.seed, "noise"),
        acct_rng_(cfg_.seed, "accountant"),
        latent_rng_(cfg_.seed, "latent-train") {
    cfg_.validate();
    if (real.size() == 0) throw ConfigError("GAN training needs data");
    if (cfg_.image_output) {
      for (double v : x_.data()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("image GAN expects pixels in [0, 1]");
      }
    }
    generator_ = make_generator(cfg_, real.features());
    critic_ = make_critic(cfg_, real.features());
    clip_weights(critic_, cfg_.weight_clip);
    expected_batch_ = cfg_.q * static_cast<double>(real.size());
    fake_batch_ = cfg_.fake_batch > 0
                      ? cfg_.fake_batch
                      : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(expected_batch_)));
    gen_batch_ = cfg_.generator_batch > 0 ? cfg_.generator_batch : fake_batch_;
    if (cfg_.accounted()) {
      acct_.emplace(accountant_config(cfg_.lambda_grid, cfg_.q, cfg_.mechanism.noise_multiplier,
                                      cfg_.samples_per_step, cfg_.gamma,
                                      cfg_.generator_steps * cfg_.critic_steps),
                    cfg_.mechanism.clip_norm);
    }
  }

  void attach_norm_log(std::ostream* out) {
    if (acct_) acct_->attach_norm_log(out);
  }

  // Real half-step. Returns false when the epsilon ceiling vetoes it.
  bool critic_real_step(double& loss_out) {
    const auto idx = poisson_batch(real_->size(), cfg_.q, batch_rng_);
    const Tensor bx = x_.gather_rows(idx);
    PrivateStepOptions opt;
    opt.loss = Loss::kWassersteinCriticReal;
    opt.mechanism = cfg_.mechanism;
    opt.expected_batch_size = expected_batch_;
    opt.optimizer = cfg_.optimizer;
    opt.threads = cfg_.threads;
    auto account = [&](const Network& current) {
      if (!acct_) return true;
      const auto sample = sample_gradient_norms(current, x_, Tensor(), opt.loss,
                                                cfg_.mechanism.clip_norm, cfg_.samples_per_step,
                                                acct_rng_, acct_->ledger().iterations(),
                                                cfg_.threads);
      PrivacyLedger next = acct_->preview(sample);
      if (cfg_.epsilon_ceiling &&
          extract_guarantee(next, FixDelta{cfg_.delta_bdp}, Track::kBayesian).epsilon >
              *cfg_.epsilon_ceiling) {
        return false;
      }
      acct_->commit(std::move(next), sample);
      return true;
    };
    const StepOutcome o = private_step(critic_, bx, Tensor(), opt, critic_state_, noise_rng_, account);
    if (o.vetoed) return false;
    if (o.skipped_empty) {
      ++result_skipped_;
      return true;
    }
    ++real_updates_;
    max_contribution_ = std::max(max_contribution_, o.max_contribution);
    loss_out = o.mean_loss;
    clip_weights(critic_, cfg_.weight_clip);
    return true;
  }

  // Fake half-step: raw gradient of mean D(G(z)), no mechanism.
  double critic_fake_step() {
    Tensor fake = forward(generator_, latent_batch(fake_batch_, cfg_.latent_dim, latent_rng_));
    if (squashes_output(generator_)) {
      for (double& v : fake.data()) v = 0.5 * (v + 1.0);
    }
    const BatchGradient bg = batch_gradient(critic_, fake, Tensor(), Loss::kWassersteinCriticFake);
    optimizer_step(critic_, bg.grad, cfg_.optimizer, critic_state_);
    clip_weights(critic_, cfg_.weight_clip);
    return bg.loss;
  }

  GeneratorStepResult generator_update() {
    return generator_step(generator_, critic_, gen_batch_, cfg_.optimizer, generator_state_,
                          latent_rng_, cfg_.generator_clip);
  }

  GanResult run(const GanHooks& hooks = {}) {
    GanResult res;
    for (std::size_t s = 0; s < cfg_.generator_steps; ++s) {
      const Network gen_backup = generator_;
      const Network crit_backup = critic_;
      GanLogRow row;
      row.generator_step = s;
      bool stop = false;
      try {
        for (std::size_t c = 0; c < cfg_.critic_steps; ++c) {
          double real_loss = 0.0;
          if (!critic_real_step(real_loss)) {
            res.partial = true;
            stop = true;
            break;
          }
          const double fake_loss = critic_fake_step();
          row.critic_loss = real_loss + fake_loss;
          if (!std::isfinite(row.critic_loss) || !parameters_finite(critic_)) {
            throw NumericError("critic loss is not finite at generator step " + std::to_string(s));
          }
        }
        if (stop) break;
        row.generator_loss = generator_update().loss;
        if (!std::isfinite(row.generator_loss) || !parameters_finite(generator_)) {
          throw NumericError("generator loss is not finite at generator step " + std::to_string(s));
        }
      } catch (const NumericError& e) {
        generator_ = gen_backup;
        critic_ = crit_backup;
        res.diverged = true;
        res.divergence = e.what();
        break;
      }
      ++res.generator_steps;
      if (hooks.on_step && (s % std::max<std::size_t>(1, hooks.log_every) == 0 ||
                            s + 1 == cfg_.generator_steps)) {
        if (acct_) {
          row.bdp_epsilon = extract_guarantee(acct_->ledger(), FixDelta{cfg_.delta_bdp}, Track::kBayesian).epsilon;
          row.wc_epsilon = extract_guarantee(acct_->ledger(), FixDelta{cfg_.delta_wc}, Track::kWorstCase).epsilon;
        } else {
          row.bdp_epsilon = row.wc_epsilon = std::numeric_limits<double>::infinity();
        }
        hooks.on_step(row);
      }
    }
    res.generator = generator_;
    res.critic = critic_;
    res.critic_real_updates = real_updates_;
    res.skipped_empty = result_skipped_;
    res.max_contribution = max_contribution_;
    if (acct_) {
      res.ledger = acct_->ledger();
      res.bdp = extract_guarantee(*res.ledger, FixDelta{cfg_.delta_bdp}, Track::kBayesian);
      res.worst_case = extract_guarantee(*res.ledger, FixDelta{cfg_.delta_wc}, Track::kWorstCase);
    } else {
      res.bdp = non_private_guarantee(Track::kBayesian, cfg_.delta_bdp);
      res.worst_case = non_private_guarantee(Track::kWorstCase, cfg_.delta_wc);
    }
    return res;
  }

  const Network& generator() const { return generator_; }
  const Network& critic() const { return critic_; }
  const GanConfig& config() const { return cfg_; }
  const std::optional<DualAccountant>& accountant() const { return acct_; }

 private:
  GanConfig cfg_;
  const Dataset* real_;
  Tensor x_;
  Network generator_;
  Network critic_;
  OptimizerState critic_state_;
  OptimizerState generator_state_;
  Rng batch_rng_;
  Rng noise_rng_;
  Rng acct_rng_;
  Rng latent_rng_;
  std::optional<DualAccountant> acct_;
  double expected_batch_ = 0.0;
  std::size_t fake_batch_ = 1;
  std::size_t gen_batch_ = 1;
  std::size_t real_updates_ = 0;
  std::size_t result_skipped_ = 0;
  double max_contribution_ = 0.0;
};

inline GanResult train_wgan(const Dataset& real, const GanConfig& cfg, const GanHooks& hooks = {}) {
  WganTrainer trainer(real, cfg);
  trainer.attach_norm_log(hooks.norm_log);
  return trainer.run(hooks);
}

}  // namespace bdpgan

#endif  // BDPGAN_GAN_HPP_
