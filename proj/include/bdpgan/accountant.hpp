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

// Dual privacy accountant.
//
// Each accounted iteration contributes a per-order cost c_t(lambda) to two
// running sums: a Bayesian track estimated from sampled gradient-difference
// norms, and a worst-case track evaluated at the clipping bound. Guarantees
// come from log(delta) <= sum_t c_t(lambda) - lambda * epsilon, minimised
// over the lambda grid.
//
// Distances are measured in units of the clip norm C, since the mechanism
// noise has standard deviation C * sigma; a norm d enters the moment
// exponent as (d / C)^2 / (2 sigma^2).

#ifndef BDPGAN_ACCOUNTANT_HPP_
#define BDPGAN_ACCOUNTANT_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bdpgan/error.hpp"

namespace bdpgan {

enum class Side { kLeft, kRight };

inline std::vector<int> default_lambda_grid() {
  std::vector<int> g(32);
  std::iota(g.begin(), g.end(), 1);
  return g;
}

struct AccountantConfig {
  std::vector<int> lambda_grid = default_lambda_grid();
  double q = 0.01;                  // Poisson inclusion probability
  double sigma = 1.0;               // noise multiplier
  std::size_t samples_per_step = 64;  // m
  double gamma = 1e-7;              // UCB failure mass per iteration

  void validate() const {
    if (lambda_grid.empty()) throw ConfigError("lambda grid must be nonempty");
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
      if (lambda_grid[i] < 1) throw ConfigError("lambda orders must be positive");
      if (i > 0 && lambda_grid[i] <= lambda_grid[i - 1]) {
        throw ConfigError("lambda grid must be strictly ascending");
      }
    }
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("q must lie in (0, 1]");
    if (!(sigma > 0.0) || std::isinf(sigma)) {
      throw ConfigError("accountant needs a finite positive noise multiplier");
    }
    if (samples_per_step < 2) throw ConfigError("accountant needs m >= 2 samples per step");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
  }
};

// gamma = 1e-3 / T for a run planned to last T accounted iterations.
inline double default_gamma(std::size_t planned_iterations) {
  return 1e-3 / static_cast<double>(std::max<std::size_t>(planned_iterations, 1));
}

// ---- Binomial moments ------------------------------------------------------

inline double log_binomial_pmf(int n, int k, double q) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (q == 0.0) return k == 0 ? 0.0 : kNegInf;
  if (q == 1.0) return k == n ? 0.0 : kNegInf;
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
         k * std::log(q) + (n - k) * std::log1p(-q);
}

inline double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

// Precomputed log pmf terms and exponent coefficients for one (lambda, side):
// log E_{k ~ B(n, q)} exp(coef_k * d^2) with n = lambda + 1, coef = (k^2 - k)/(2 sigma^2)
// on the left and n = lambda, coef = (k^2 + k)/(2 sigma^2) on the right.
class MomentTerms {
 public:
  MomentTerms(int lambda, double q, double sigma, Side side) {
    if (lambda < 1) throw ConfigError("moment order lambda must be >= 1");
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("q must lie in [0, 1]");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    const int n = side == Side::kLeft ? lambda + 1 : lambda;
    for (int k = 0; k <= n; ++k) {
      const double lp = log_binomial_pmf(n, k, q);
      if (!std::isfinite(lp)) continue;
      const double kk = static_cast<double>(k);
      const double e = side == Side::kLeft ? kk * kk - kk : kk * kk + kk;
      log_pmf_.push_back(lp);
      coef_.push_back(e / (2.0 * sigma * sigma));
    }
    buf_.resize(log_pmf_.size());
  }

  double log_moment(double d) const {
    const double d2 = d * d;
    // log(1 + sum_k p_k (e^{c_k d^2} - 1)) is exact at d = 0 and keeps full
    // precision for small d; fall back to log-sum-exp when e^{c_k d^2}
    // would overflow.
    if (coef_.back() * d2 < 700.0) {
      double s = 0.0;
      for (std::size_t i = 0; i < log_pmf_.size(); ++i) {
        s += std::exp(log_pmf_[i]) * std::expm1(coef_[i] * d2);
      }
      return std::log1p(s);
    }
    for (std::size_t i = 0; i < log_pmf_.size(); ++i) buf_[i] = log_pmf_[i] + coef_[i] * d2;
    return log_sum_exp(buf_);
  }

 private:
  std::vector<double> log_pmf_;
  std::vector<double> coef_;
  mutable std::vector<double> buf_;
};

// log E_{k ~ B(.)}[exp(.)] for one order and side, by exact log-space summation.
inline double binomial_moment(int lambda, double q, double sigma, double d, Side side) {
  if (!(d >= 0.0)) throw ConfigError("distance d must be nonnegative");
  return MomentTerms(lambda, q, sigma, side).log_moment(d);
}

// Worst case: point mass at the clip bound (d = C, i.e. one clip unit).
inline double worst_case_cost(int lambda, double q, double sigma, double clip_norm = 1.0) {
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  return std::max(binomial_moment(lambda, q, sigma, 1.0, Side::kLeft),
                  binomial_moment(lambda, q, sigma, 1.0, Side::kRight));
}

inline std::vector<double> worst_case_costs(const AccountantConfig& config) {
  std::vector<double> c;
  for (int lambda : config.lambda_grid) {
    c.push_back(worst_case_cost(lambda, config.q, config.sigma));
  }
  return c;
}

// ---- Sample-based cost -----------------------------------------------------

struct GradientNormSample {
  std::vector<double> norms;  // ||g_t - g'_t|| per sampled point, <= C
  std::size_t iteration = 0;
};

// Maurer-Pontil empirical Bernstein upper bound on the mean of m i.i.d.
// values supported on an interval of width `range`, at failure level gamma.
inline double empirical_bernstein_ucb(std::span<const double> x, double range, double gamma) {
  const double m = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= m;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= (m - 1.0);
  const double log_term = std::log(2.0 / gamma);
  return mean + std::sqrt(2.0 * var * log_term / m) + 7.0 * range * log_term / (3.0 * (m - 1.0));
}

struct SideEstimate {
  double log_mean = 0.0;  // log of the sample mean of per-point moments
  double log_ucb = 0.0;   // log of the clamped upper confidence bound
  double rel_std_error = 0.0;  // standard error of the mean / mean
};

struct OrderEstimate {
  int lambda = 0;
  SideEstimate left;
  SideEstimate right;
  double cost = 0.0;  // max(left.log_ucb, right.log_ucb)
};

// Estimates E_x[E_k[...]] for each order and side from one norm sample.
// Per-point moments live in [1, B] with B the moment at d = C; the bound is
// computed on moments divided by B so nothing overflows, and the UCB is
// clamped to B. Each of the 2 * |grid| bounds runs at gamma / (2 |grid|).
class CostEstimator {
 public:
  CostEstimator(const AccountantConfig& config, double clip_norm)
      : config_(config), clip_norm_(clip_norm) {
    config_.validate();
    if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
    for (int lambda : config_.lambda_grid) {
      left_.emplace_back(lambda, config_.q, config_.sigma, Side::kLeft);
      right_.emplace_back(lambda, config_.q, config_.sigma, Side::kRight);
    }
  }

  const AccountantConfig& config() const { return config_; }
  double clip_norm() const { return clip_norm_; }

  std::vector<OrderEstimate> estimate(const GradientNormSample& sample) const {
    const auto& norms = sample.norms;
    if (norms.size() < 2) {
      throw ConfigError("sample-based cost needs m >= 2 norms; use the worst-case track");
    }
    std::vector<double> d(norms.size());
    for (std::size_t i = 0; i < norms.size(); ++i) {
      if (!(norms[i] >= 0.0) || norms[i] > clip_norm_) {
        throw ConfigError("gradient norm " + std::to_string(norms[i]) +
                          " violates the clip bound " + std::to_string(clip_norm_));
      }
      d[i] = norms[i] / clip_norm_;
    }
    const double gamma_each =
        config_.gamma / (2.0 * static_cast<double>(config_.lambda_grid.size()));
    std::vector<OrderEstimate> out;
    std::vector<double> u(d.size());
    for (std::size_t j = 0; j < config_.lambda_grid.size(); ++j) {
      OrderEstimate e;
      e.lambda = config_.lambda_grid[j];
      e.left = estimate_side(left_[j], d, u, gamma_each);
      e.right = estimate_side(right_[j], d, u, gamma_each);
      e.cost = std::max(e.left.log_ucb, e.right.log_ucb);
      out.push_back(e);
    }
    return out;
  }

  std::vector<double> costs(const GradientNormSample& sample) const {
    std::vector<double> c;
    for (const auto& e : estimate(sample)) c.push_back(e.cost);
    return c;
  }

 private:
  static SideEstimate estimate_side(const MomentTerms& terms, std::span<const double> d,
                                    std::vector<double>& u, double gamma) {
    const double log_bound = terms.log_moment(1.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      u[i] = std::exp(terms.log_moment(d[i]) - log_bound);
    }
    const double m = static_cast<double>(u.size());
    double mean = 0.0;
    for (double v : u) mean += v;
    mean /= m;
    double var = 0.0;
    for (double v : u) var += (v - mean) * (v - mean);
    var /= (m - 1.0);
    // moments >= 1, so u >= 1/B
    const double range = -std::expm1(-log_bound);
    // A sample with no spread is taken at face value.
    const bool constant = std::all_of(d.begin(), d.end(), [&](double v) { return v == d[0]; });
    const double ucb = constant ? mean : std::min(1.0, empirical_bernstein_ucb(u, range, gamma));
    SideEstimate s;
    s.log_mean = log_bound + std::log(mean);
    s.log_ucb = std::max(0.0, log_bound + std::log(ucb));
    if (constant) s.log_mean = s.log_ucb = terms.log_moment(d[0]);
    s.log_ucb = std::min(s.log_ucb, log_bound);
    s.rel_std_error = std::sqrt(var / m) / mean;
    return s;
  }

  AccountantConfig config_;
  double clip_norm_;
  std::vector<MomentTerms> left_;
  std::vector<MomentTerms> right_;
};

inline std::vector<double> cost_from_samples(const GradientNormSample& sample,
                                             const AccountantConfig& config,
                                             double clip_norm) {
  return CostEstimator(config, clip_norm).costs(sample);
}

// ---- Ledger ----------------------------------------------------------------

enum class Track { kBayesian, kWorstCase };

inline std::string_view track_name(Track t) {
  return t == Track::kBayesian ? "bdp" : "worst_case";
}

class PrivacyLedger {
 public:
  PrivacyLedger() : PrivacyLedger(AccountantConfig{}) {}
  explicit PrivacyLedger(AccountantConfig config) : config_(std::move(config)) {
    config_.validate();
    bdp_.assign(config_.lambda_grid.size(), 0.0);
    wc_.assign(config_.lambda_grid.size(), 0.0);
  }

  const AccountantConfig& config() const { return config_; }
  const std::vector<double>& bdp_costs() const { return bdp_; }
  const std::vector<double>& wc_costs() const { return wc_; }
  const std::vector<double>& costs(Track t) const { return t == Track::kBayesian ? bdp_ : wc_; }
  std::size_t iterations() const { return iterations_; }
  double gamma_spent() const { return gamma_spent_; }

  void update(std::span<const double> bdp_cost, std::span<const double> wc_cost) {
    if (bdp_cost.size() != bdp_.size() || wc_cost.size() != wc_.size()) {
      throw ConfigError("cost vector does not match the ledger's lambda grid (" +
                        std::to_string(bdp_.size()) + " orders)");
    }
    for (std::size_t j = 0; j < bdp_.size(); ++j) {
      if (!(bdp_cost[j] >= 0.0) || !(wc_cost[j] >= 0.0)) {
        throw NumericError("privacy costs must be finite and nonnegative");
      }
    }
    for (std::size_t j = 0; j < bdp_.size(); ++j) {
      bdp_[j] += bdp_cost[j];
      wc_[j] += wc_cost[j];
    }
    ++iterations_;
    gamma_spent_ += config_.gamma;
  }

  std::string serialize() const;
  static PrivacyLedger parse(const std::string& text);

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << serialize();
  }

  static PrivacyLedger load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  friend bool operator==(const PrivacyLedger& a, const PrivacyLedger& b) {
    return a.config_.lambda_grid == b.config_.lambda_grid && a.config_.q == b.config_.q &&
           a.config_.sigma == b.config_.sigma &&
           a.config_.samples_per_step == b.config_.samples_per_step &&
           a.config_.gamma == b.config_.gamma && a.bdp_ == b.bdp_ && a.wc_ == b.wc_ &&
           a.iterations_ == b.iterations_ && a.gamma_spent_ == b.gamma_spent_;
  }

 private:
  AccountantConfig config_;
  std::vector<double> bdp_;
  std::vector<double> wc_;
  std::size_t iterations_ = 0;
  double gamma_spent_ = 0.0;
};

inline PrivacyLedger ledger_update(PrivacyLedger ledger, std::span<const double> bdp_cost,
                                   std::span<const double> wc_cost) {
  ledger.update(bdp_cost, wc_cost);
  return ledger;
}

// Shortest round-trip decimal text for a double.
inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ParseError("expected a number, got '" + std::string(s) + "'", line);
  }
  return v;
}

// Text checkpoint:
//   bdpgan-ledger 1
//   q / sigma / samples / gamma / iterations / gamma_spent lines
//   lambdas <count>
//   <lambda> <sum bdp> <sum wc>   (one line per order)
inline std::string PrivacyLedger::serialize() const {
  std::ostringstream o;
  o << "bdpgan-ledger 1\n";
  o << "q " << format_double(config_.q) << "\n";
  o << "sigma " << format_double(config_.sigma) << "\n";
  o << "samples " << config_.samples_per_step << "\n";
  o << "gamma " << format_double(config_.gamma) << "\n";
  o << "iterations " << iterations_ << "\n";
  o << "gamma_spent " << format_double(gamma_spent_) << "\n";
  o << "lambdas " << config_.lambda_grid.size() << "\n";
  for (std::size_t j = 0; j < bdp_.size(); ++j) {
    o << config_.lambda_grid[j] << " " << format_double(bdp_[j]) << " "
      << format_double(wc_[j]) << "\n";
  }
  return o.str();
}

inline PrivacyLedger PrivacyLedger::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto next = [&](std::string_view key) -> std::string {
    if (!std::getline(in, line)) throw ParseError("ledger ends before '" + std::string(key) + "'", lineno);
    ++lineno;
    std::istringstream ls(line);
    std::string k, v;
    ls >> k >> v;
    if (k != key) throw ParseError("expected '" + std::string(key) + "', got '" + k + "'", lineno);
    return v;
  };
  if (next("bdpgan-ledger") != "1") throw ParseError("unsupported ledger version", 1);
  AccountantConfig c;
  c.q = parse_double(next("q"), lineno);
  c.sigma = parse_double(next("sigma"), lineno);
  c.samples_per_step = static_cast<std::size_t>(parse_double(next("samples"), lineno));
  c.gamma = parse_double(next("gamma"), lineno);
  const auto iterations = static_cast<std::size_t>(parse_double(next("iterations"), lineno));
  const double gamma_spent = parse_double(next("gamma_spent"), lineno);
  const auto count = static_cast<std::size_t>(parse_double(next("lambdas"), lineno));
  c.lambda_grid.clear();
  std::vector<double> bdp, wc;
  for (std::size_t j = 0; j < count; ++j) {
    if (!std::getline(in, line)) throw ParseError("ledger truncated in lambda table", lineno);
    ++lineno;
    std::istringstream ls(line);
    std::string a, b, w;
    ls >> a >> b >> w;
    c.lambda_grid.push_back(static_cast<int>(parse_double(a, lineno)));
    bdp.push_back(parse_double(b, lineno));
    wc.push_back(parse_double(w, lineno));
  }
  PrivacyLedger l(c);
  l.bdp_ = std::move(bdp);
  l.wc_ = std::move(wc);
  l.iterations_ = iterations;
  l.gamma_spent_ = gamma_spent;
  return l;
}

// ---- Guarantees ------------------------------------------------------------

// a / b evaluated on the shortest decimal forms of both operands, so that
// decimal inputs give decimal answers (1e-10 / 1e-5 is exactly 1e-5).
inline double decimal_quotient(double a, double b) {
  auto split = [](double v, double& mant, int& exp10) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific);
    std::string_view s(buf, static_cast<std::size_t>(r.ptr - buf));
    const auto e = s.find('e');
    std::from_chars(s.data(), s.data() + e, mant);
    const char* p = s.data() + e + 1;
    if (*p == '+') ++p;
    std::from_chars(p, s.data() + s.size(), exp10);
  };
  double ma = 0.0, mb = 0.0;
  int ea = 0, eb = 0;
  split(a, ma, ea);
  split(b, mb, eb);
  double mq = 0.0;
  int eq = 0;
  split(ma / mb, mq, eq);
  char out[64];
  auto r = std::to_chars(out, out + sizeof out, mq, std::chars_format::scientific);
  std::string text(out, r.ptr);
  text = text.substr(0, text.find('e')) + "e" + std::to_string(eq + ea - eb);
  double v = 0.0;
  std::from_chars(text.data(), text.data() + text.size(), v);
  return v;
}

struct MarkovBound {
  double epsilon = 0.0;
  double delta_target = 0.0;
  double violating_mass = 0.0;  // bound on Pr_x[(eps, delta_target)-DP fails]
  std::string statement;
};

// E_x[Delta(eps, x)] <= delta_mu implies Pr_x[Delta(eps, x) > t] <= delta_mu / t.
inline MarkovBound markov_percentile(double epsilon, double delta_mu, double delta_target) {
  if (!(delta_mu > 0.0 && delta_mu < 1.0)) throw ConfigError("delta_mu must lie in (0, 1)");
  if (!(delta_target > 0.0 && delta_target < 1.0)) {
    throw ConfigError("target delta must lie in (0, 1)");
  }
  if (delta_target < delta_mu) {
    throw ConfigError("target delta below delta_mu gives a vacuous bound");
  }
  MarkovBound b;
  b.epsilon = epsilon;
  b.delta_target = delta_target;
  b.violating_mass = std::min(1.0, decimal_quotient(delta_mu, delta_target));
  std::ostringstream s;
  s << "(" << format_double(epsilon) << ", " << format_double(delta_target)
    << ")-DP except <=" << format_double(b.violating_mass) << " mass";
  b.statement = s.str();
  return b;
}

struct PercentilePair {
  double percentile = 0.0;  // p: fraction of the data distribution covered
  double epsilon = 0.0;
  double delta = 0.0;       // delta_mu / (1 - p)
};

struct PrivacyGuarantee {
  double epsilon = 0.0;
  double delta = 0.0;
  Track track = Track::kBayesian;
  int achieving_lambda = 0;
  std::vector<PercentilePair> percentile_pairs;  // Bayesian track only
};

struct FixEpsilon { double value; };
struct FixDelta { double value; };

inline std::vector<PercentilePair> percentile_pairs(double epsilon, double delta_mu,
                                                    std::span<const double> percentiles) {
  std::vector<PercentilePair> out;
  for (double p : percentiles) {
    const double d = delta_mu / (1.0 - p);
    if (d < 1.0) out.push_back({p, epsilon, d});
  }
  return out;
}

inline constexpr double kDefaultPercentiles[] = {0.9, 0.99, 0.999, 0.99999};

inline PrivacyGuarantee extract_guarantee(const PrivacyLedger& ledger, FixDelta fix, Track track) {
  if (!(fix.value > 0.0 && fix.value < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  const auto& grid = ledger.config().lambda_grid;
  const auto& sums = ledger.costs(track);
  PrivacyGuarantee g;
  g.track = track;
  g.delta = fix.value;
  g.epsilon = std::numeric_limits<double>::infinity();
  const double log_delta = std::log(fix.value);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double eps = (sums[j] - log_delta) / grid[j];
    if (eps < g.epsilon) {
      g.epsilon = eps;
      g.achieving_lambda = grid[j];
    }
  }
  if (track == Track::kBayesian) g.percentile_pairs = percentile_pairs(g.epsilon, g.delta, kDefaultPercentiles);
  return g;
}

inline PrivacyGuarantee extract_guarantee(const PrivacyLedger& ledger, FixEpsilon fix, Track track) {
  if (!(fix.value >= 0.0)) throw ConfigError("epsilon must be nonnegative");
  const auto& grid = ledger.config().lambda_grid;
  const auto& sums = ledger.costs(track);
  PrivacyGuarantee g;
  g.track = track;
  g.epsilon = fix.value;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double v = sums[j] - grid[j] * fix.value;
    if (v < best) {
      best = v;
      g.achieving_lambda = grid[j];
    }
  }
  g.delta = std::min(1.0, std::exp(best));
  if (track == Track::kBayesian && g.delta > 0.0 && g.delta < 1.0) {
    g.percentile_pairs = percentile_pairs(g.epsilon, g.delta, kDefaultPercentiles);
  }
  return g;
}

// ---- Norm logs -------------------------------------------------------------

// CSV: header "iteration,norm_1,...,norm_m", then one row per accounted step.
inline void write_norm_log_header(std::ostream& out, std::size_t m) {
  out << "iteration";
  for (std::size_t i = 1; i <= m; ++i) out << ",norm_" << i;
  out << "\n";
}

inline void write_norm_log_row(std::ostream& out, const GradientNormSample& s) {
  out << s.iteration;
  for (double v : s.norms) out << "," << format_double(v);
  out << "\n";
}

inline std::vector<GradientNormSample> read_norm_log(std::istream& in) {
  std::vector<GradientNormSample> rows;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) return rows;
  ++lineno;
  if (line.rfind("iteration", 0) != 0) throw ParseError("norm log must start with a header row", 1);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    GradientNormSample s;
    std::size_t start = 0;
    bool first = true;
    while (start <= line.size()) {
      std::size_t end = line.find(',', start);
      if (end == std::string::npos) end = line.size();
      std::string_view field(line.data() + start, end - start);
      const double v = parse_double(field, lineno);
      if (first) {
        s.iteration = static_cast<std::size_t>(v);
        first = false;
      } else {
        s.norms.push_back(v);
      }
      start = end + 1;
    }
    rows.push_back(std::move(s));
  }
  return rows;
}

inline std::vector<GradientNormSample> read_norm_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_norm_log(in);
}

// Rebuilds a ledger from logged norms.
inline PrivacyLedger replay_norm_log(std::span<const GradientNormSample> rows,
                                     const AccountantConfig& config, double clip_norm) {
  PrivacyLedger ledger(config);
  const CostEstimator est(config, clip_norm);
  const auto wc = worst_case_costs(config);
  for (const auto& row : rows) ledger.update(est.costs(row), wc);
  return ledger;
}

}  // namespace bdpgan

#endif  // BDPGAN_ACCOUNTANT_HPP_
