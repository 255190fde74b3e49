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

// Differentially private training: Poisson batch, per-example clip, sum,
// Gaussian noise, divide by the expected batch size, optimizer step. The
// dual accountant observes every applied step.

#ifndef BDPGAN_DPSGD_HPP_
#define BDPGAN_DPSGD_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "bdpgan/accountant.hpp"
#include "bdpgan/data.hpp"
#include "bdpgan/mechanisms.hpp"
#include "bdpgan/nn.hpp"
#include "bdpgan/parallel.hpp"
#include "bdpgan/rng.hpp"

namespace bdpgan {

// Each index enters independently with probability q. Gaps between
// selected indices are geometric, so the cost is O(q n).
inline std::vector<std::size_t> poisson_batch(std::size_t n, double q, Rng& rng) {
  std::vector<std::size_t> idx;
  if (!(q > 0.0)) return idx;
  if (q >= 1.0) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  std::geometric_distribution<std::size_t> gap(q);
  for (std::size_t i = gap(rng.engine()); i < n; i += gap(rng.engine()) + 1) idx.push_back(i);
  return idx;
}

struct ClippedSum {
  std::vector<double> sum;
  std::vector<double> norms;  // per-example norms before clipping
  double mean_loss = 0.0;
  double max_contribution = 0.0;  // largest clipped norm, re-measured
};

// Sum over examples of per-example gradients clipped to `clip_norm`. Throws
// if any clipped contribution exceeds the bound.
inline ClippedSum clipped_gradient_sum(const Network& net, const Tensor& x, const Tensor& y,
                                       Loss loss, double clip_norm, std::size_t threads = 1) {
  const std::size_t n = x.rows();
  const std::size_t P = net.parameter_count();
  check_input_width(net, x.row_size());
  check_labels(net, x, y, loss);
  ClippedSum out;
  out.sum.assign(P, 0.0);
  out.norms.assign(n, 0.0);
  if (n == 0) return out;

  const std::size_t chunks = chunk_count(n);
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, chunks));
  std::vector<ExampleBackprop> bps(workers, ExampleBackprop(net));
  std::vector<std::vector<double>> grads(workers, std::vector<double>(P));
  std::vector<std::vector<double>> partial(workers == 1 ? 1 : chunks, std::vector<double>(P));
  std::vector<double> losses(n), clipped(n);

  auto work = [&](std::size_t w, std::size_t c, std::size_t begin, std::size_t end) {
    auto& acc = partial[workers == 1 ? 0 : c];
    std::fill(acc.begin(), acc.end(), 0.0);
    auto& g = grads[w];
    for (std::size_t i = begin; i < end; ++i) {
      losses[i] = bps[w].gradient(x.row(i), label_row(y, i), loss, g);
      if (!std::isfinite(losses[i])) {
        throw NumericError("non-finite loss at example " + std::to_string(i));
      }
      out.norms[i] = clip_in_place(g, clip_norm);
      clipped[i] = l2_norm(g);
      detail::axpy(1.0, g.data(), acc.data(), P);
    }
    if (workers == 1) detail::axpy(1.0, acc.data(), out.sum.data(), P);
  };
  parallel_chunks(n, workers, work);
  if (workers > 1) {
    for (const auto& acc : partial) detail::axpy(1.0, acc.data(), out.sum.data(), P);
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.mean_loss += losses[i];
    out.max_contribution = std::max(out.max_contribution, clipped[i]);
  }
  out.mean_loss /= static_cast<double>(n);
  if (out.max_contribution > clip_norm) {
    throw NumericError("clipped contribution norm " + std::to_string(out.max_contribution) +
                       " exceeds clip bound " + std::to_string(clip_norm));
  }
  return out;
}

// Norms min(||g_i||, C) of m per-example gradients, points drawn uniformly
// with replacement from (x, y).
inline GradientNormSample sample_gradient_norms(const Network& net, const Tensor& x,
                                                const Tensor& y, Loss loss, double clip_norm,
                                                std::size_t m, Rng& rng, std::size_t iteration,
                                                std::size_t threads = 1) {
  std::vector<std::size_t> idx(m);
  for (auto& i : idx) i = rng.index(x.rows());
  const Tensor xs = x.gather_rows(idx);
  const Tensor ys = y.rows() == 0 ? Tensor() : y.gather_rows(idx);
  GradientNormSample s;
  s.iteration = iteration;
  s.norms.assign(m, 0.0);
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, chunk_count(m)));
  std::vector<ExampleBackprop> bps(workers, ExampleBackprop(net));
  std::vector<std::vector<double>> grads(workers, std::vector<double>(net.parameter_count()));
  parallel_chunks(m, workers, [&](std::size_t w, std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      bps[w].gradient(xs.row(i), label_row(ys, i), loss, grads[w]);
      s.norms[i] = std::min(l2_norm(grads[w]), clip_norm);
    }
  });
  return s;
}

// Couples the sample-based estimator, the worst-case costs and the ledger.
class DualAccountant {
 public:
  DualAccountant(const AccountantConfig& config, double clip_norm)
      : estimator_(config, clip_norm), ledger_(config), wc_(worst_case_costs(config)) {}

  // Ledger as it would be after accounting `sample`.
  PrivacyLedger preview(const GradientNormSample& sample) const {
    PrivacyLedger l = ledger_;
    l.update(estimator_.costs(sample), wc_);
    return l;
  }

  void commit(PrivacyLedger next, const GradientNormSample& sample) {
    ledger_ = std::move(next);
    if (norm_log_) write_norm_log_row(*norm_log_, sample);
  }

  void record(const GradientNormSample& sample) { commit(preview(sample), sample); }

  void attach_norm_log(std::ostream* out) {
    norm_log_ = out;
    if (out) write_norm_log_header(*out, ledger_.config().samples_per_step);
  }

  const PrivacyLedger& ledger() const { return ledger_; }
  const CostEstimator& estimator() const { return estimator_; }
  double clip_norm() const { return estimator_.clip_norm(); }

 private:
  CostEstimator estimator_;
  PrivacyLedger ledger_;
  std::vector<double> wc_;
  std::ostream* norm_log_ = nullptr;
};

struct PrivateStepOptions {
  Loss loss = Loss::kSoftmaxCrossEntropy;
  MechanismParams mechanism;
  double expected_batch_size = 1.0;  // q * n
  OptimizerConfig optimizer;
  std::size_t threads = 1;
};

struct StepOutcome {
  bool applied = false;
  bool skipped_empty = false;
  bool vetoed = false;
  std::size_t batch_size = 0;
  double mean_loss = 0.0;
  double max_contribution = 0.0;
};

// One private update. `account(net)` runs with the pre-update parameters
// after the noisy gradient is formed; returning false vetoes the update.
template <typename Account>
StepOutcome private_step(Network& net, const Tensor& batch, const Tensor& labels,
                         const PrivateStepOptions& opt, OptimizerState& state, Rng& noise_rng,
                         Account&& account) {
  StepOutcome r;
  r.batch_size = batch.rows();
  if (batch.rows() == 0) {
    r.skipped_empty = true;
    return r;
  }
  opt.mechanism.validate();
  if (!(opt.expected_batch_size > 0.0)) throw ConfigError("expected batch size must be positive");
  ClippedSum cs = clipped_gradient_sum(net, batch, labels, opt.loss, opt.mechanism.clip_norm,
                                       opt.threads);
  r.mean_loss = cs.mean_loss;
  r.max_contribution = cs.max_contribution;
  add_gaussian_noise(cs.sum, opt.mechanism, noise_rng);
  const double inv = 1.0 / opt.expected_batch_size;
  for (double& g : cs.sum) g *= inv;
  if (!account(static_cast<const Network&>(net))) {
    r.vetoed = true;
    return r;
  }
  optimizer_step(net, cs.sum, opt.optimizer, state);
  r.applied = true;
  return r;
}

inline StepOutcome private_step(Network& net, const Tensor& batch, const Tensor& labels,
                                const PrivateStepOptions& opt, OptimizerState& state,
                                Rng& noise_rng) {
  return private_step(net, batch, labels, opt, state, noise_rng, [](const Network&) { return true; });
}

// Fraction of argmax predictions equal to the label.
inline double evaluate(const Network& net, const Dataset& test) {
  if (!test.labels) throw ConfigError("evaluation needs a labelled dataset");
  if (test.size() == 0) return 0.0;
  std::size_t correct = 0;
  constexpr std::size_t kBlock = 512;
  for (std::size_t b = 0; b < test.size(); b += kBlock) {
    const std::size_t e = std::min(test.size(), b + kBlock);
    std::vector<std::size_t> idx(e - b);
    std::iota(idx.begin(), idx.end(), b);
    const Tensor out = forward(net, test.images.gather_rows(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto row = out.row(i);
      const auto arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (arg == (*test.labels)[b + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

inline std::vector<int> predict(const Network& net, const Tensor& inputs) {
  std::vector<int> labels;
  constexpr std::size_t kBlock = 512;
  for (std::size_t b = 0; b < inputs.rows(); b += kBlock) {
    const std::size_t e = std::min(inputs.rows(), b + kBlock);
    std::vector<std::size_t> idx(e - b);
    std::iota(idx.begin(), idx.end(), b);
    const Tensor out = forward(net, inputs.gather_rows(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto row = out.row(i);
      labels.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return labels;
}

// ---- Private classifier ----------------------------------------------------

struct TrainLogRow {
  std::size_t step = 0;
  double loss = 0.0;
  std::size_t batch_size = 0;
  double bdp_epsilon = 0.0;
  double wc_epsilon = 0.0;
  double wall_seconds = 0.0;
};

inline void write_train_log_header(std::ostream& out) {
  out << "step,loss,batch_size,bdp_epsilon,wc_epsilon,wall_seconds\n";
}

inline void write_train_log_row(std::ostream& out, const TrainLogRow& r) {
  out << r.step << "," << format_double(r.loss) << "," << r.batch_size << ","
      << format_double(r.bdp_epsilon) << "," << format_double(r.wc_epsilon) << ","
      << format_double(r.wall_seconds) << "\n";
}

struct ClassifierConfig {
  std::vector<std::size_t> hidden = {200};
  Activation activation = Activation::kSelu;
  std::size_t steps = 1000;        // Poisson steps (budget)
  double q = 0.01;
  MechanismParams mechanism{1.0, 1.0};
  OptimizerConfig optimizer{UpdateRule::kSgd, 0.1, 0.9, 1e-8};
  std::size_t samples_per_step = 64;  // accountant m
  double gamma = 0.0;                 // 0: 1e-3 / steps
  std::vector<int> lambda_grid = default_lambda_grid();
  std::optional<double> epsilon_ceiling;  // Bayesian epsilon at delta_bdp
  double delta_bdp = 1e-10;
  double delta_wc = 1e-5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t num_classes = 10;
  bool accounted() const { return mechanism.noise_multiplier > 0.0; }
};

inline AccountantConfig accountant_config(const std::vector<int>& grid, double q, double sigma,
                                          std::size_t m, double gamma, std::size_t planned) {
  AccountantConfig a;
  a.lambda_grid = grid;
  a.q = q;
  a.sigma = sigma;
  a.samples_per_step = m;
  a.gamma = gamma > 0.0 ? gamma : default_gamma(planned);
  return a;
}

inline PrivacyGuarantee non_private_guarantee(Track track, double delta) {
  PrivacyGuarantee g;
  g.track = track;
  g.delta = delta;
  g.epsilon = std::numeric_limits<double>::infinity();
  return g;
}

struct ClassifierResult {
  Network net;
  PrivacyGuarantee bdp;
  PrivacyGuarantee worst_case;
  std::optional<PrivacyLedger> ledger;  // absent in non-private mode
  bool partial = false;                 // stopped at the epsilon ceiling
  std::size_t steps_applied = 0;
  std::size_t steps_skipped = 0;
  double max_contribution = 0.0;
};

struct ClassifierHooks {
  std::ostream* train_log = nullptr;
  std::ostream* norm_log = nullptr;
  std::function<void(std::size_t step, const Network&)> on_step;
};

inline ClassifierResult train_private_classifier(const Dataset& train, const ClassifierConfig& cfg,
                                                 const ClassifierHooks& hooks = {}) {
  if (!train.labels) throw ConfigError("private classifier needs a labelled dataset");
  if (!(cfg.q > 0.0 && cfg.q <= 1.0)) throw ConfigError("q must lie in (0, 1]");
  if (cfg.steps == 0) throw ConfigError("step budget must be positive");
  cfg.mechanism.validate();

  std::vector<std::size_t> sizes = {train.features()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(cfg.num_classes);
  Rng init_rng(cfg.seed, "init");
  ClassifierResult res;
  res.net = Network::dense(std::span<const std::size_t>(sizes), cfg.activation,
                           Activation::kIdentity, init_rng);

  const Tensor& x = train.images;
  const Tensor y = train.label_tensor();
  Rng batch_rng(cfg.seed, "batch");
  Rng noise_rng(cfg.seed, "noise");
  Rng acct_rng(cfg.seed, "accountant");

  std::optional<DualAccountant> acct;
  if (cfg.accounted()) {
    acct.emplace(accountant_config(cfg.lambda_grid, cfg.q, cfg.mechanism.noise_multiplier,
                                   cfg.samples_per_step, cfg.gamma, cfg.steps),
                 cfg.mechanism.clip_norm);
    acct->attach_norm_log(hooks.norm_log);
  }
  if (hooks.train_log) write_train_log_header(*hooks.train_log);

  PrivateStepOptions opt;
  opt.loss = Loss::kSoftmaxCrossEntropy;
  opt.mechanism = cfg.mechanism;
  opt.expected_batch_size = cfg.q * static_cast<double>(train.size());
  opt.optimizer = cfg.optimizer;
  opt.threads = cfg.threads;
  OptimizerState state;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto idx = poisson_batch(train.size(), cfg.q, batch_rng);
    const Tensor bx = x.gather_rows(idx);
    const Tensor by = y.gather_rows(idx);
    auto account = [&](const Network& current) {
      if (!acct) return true;
      const auto sample = sample_gradient_norms(current, x, y, opt.loss, cfg.mechanism.clip_norm,
                                                cfg.samples_per_step, acct_rng,
                                                acct->ledger().iterations(), cfg.threads);
      PrivacyLedger next = acct->preview(sample);
      if (cfg.epsilon_ceiling &&
          extract_guarantee(next, FixDelta{cfg.delta_bdp}, Track::kBayesian).epsilon >
              *cfg.epsilon_ceiling) {
        return false;
      }
      acct->commit(std::move(next), sample);
      return true;
    };
    const StepOutcome o = private_step(res.net, bx, by, opt, state, noise_rng, account);
    if (o.vetoed) {
      res.partial = true;
      break;
    }
    if (o.skipped_empty) {
      ++res.steps_skipped;
      continue;
    }
    ++res.steps_applied;
    res.max_contribution = std::max(res.max_contribution, o.max_contribution);
    if (hooks.train_log) {
      TrainLogRow row;
      row.step = step;
      row.loss = o.mean_loss;
      row.batch_size = o.batch_size;
      if (acct) {
        row.bdp_epsilon = extract_guarantee(acct->ledger(), FixDelta{cfg.delta_bdp}, Track::kBayesian).epsilon;
        row.wc_epsilon = extract_guarantee(acct->ledger(), FixDelta{cfg.delta_wc}, Track::kWorstCase).epsilon;
      } else {
        row.bdp_epsilon = row.wc_epsilon = std::numeric_limits<double>::infinity();
      }
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      write_train_log_row(*hooks.train_log, row);
    }
    if (hooks.on_step) hooks.on_step(step, res.net);
  }

  if (acct) {
    res.ledger = acct->ledger();
    res.bdp = extract_guarantee(*res.ledger, FixDelta{cfg.delta_bdp}, Track::kBayesian);
    res.worst_case = extract_guarantee(*res.ledger, FixDelta{cfg.delta_wc}, Track::kWorstCase);
  } else {
    res.bdp = non_private_guarantee(Track::kBayesian, cfg.delta_bdp);
    res.worst_case = non_private_guarantee(Track::kWorstCase, cfg.delta_wc);
  }
  return res;
}

// ---- Plain (non-private) training -----------------------------------------

struct PlainTrainConfig {
  std::vector<std::size_t> hidden = {200};
  Activation activation = Activation::kSelu;
  std::size_t num_classes = 10;
  std::size_t batch_size = 64;
  std::size_t min_steps = 500;  // at least this many updates
  std::size_t epochs = 10;
  OptimizerConfig optimizer{UpdateRule::kSgd, 0.05, 0.9, 1e-8};
  std::uint64_t seed = 0;
};

// Minibatch training on shuffled epochs; runs max(epochs, enough epochs to
// reach min_steps) passes.
inline Network train_classifier(const Dataset& train, const PlainTrainConfig& cfg) {
  if (!train.labels) throw ConfigError("classifier training needs labels");
  if (train.size() == 0) throw ConfigError("classifier training needs data");
  std::vector<std::size_t> sizes = {train.features()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(cfg.num_classes);
  Rng init_rng(cfg.seed, "init");
  Network net = Network::dense(std::span<const std::size_t>(sizes), cfg.activation,
                               Activation::kIdentity, init_rng);
  const Tensor y = train.label_tensor();
  Rng rng(cfg.seed, "shuffle");
  OptimizerState state;
  const std::size_t bs = std::min(cfg.batch_size, train.size());
  const std::size_t per_epoch = (train.size() + bs - 1) / bs;
  const std::size_t epochs = std::max(cfg.epochs, (cfg.min_steps + per_epoch - 1) / per_epoch);
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    for (std::size_t b = 0; b < train.size(); b += bs) {
      std::span<const std::size_t> idx(perm.data() + b, std::min(bs, train.size() - b));
      const auto bg = batch_gradient(net, train.images.gather_rows(idx), y.gather_rows(idx),
                                     Loss::kSoftmaxCrossEntropy);
      optimizer_step(net, bg.grad, cfg.optimizer, state);
    }
  }
  return net;
}

}  // namespace bdpgan

#endif  // BDPGAN_DPSGD_HPP_
