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

#ifndef BDPGAN_MECHANISMS_HPP_
#define BDPGAN_MECHANISMS_HPP_

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bdpgan/error.hpp"
#include "bdpgan/rng.hpp"
#include "bdpgan/tensor.hpp"

namespace bdpgan {

// Clip norm C (L2, gradient units) and noise multiplier sigma; the added
// noise has standard deviation C * sigma per coordinate.
struct MechanismParams {
  double clip_norm = 1.0;
  double noise_multiplier = 0.0;

  double noise_stddev() const {
    return noise_multiplier == 0.0 ? 0.0 : clip_norm * noise_multiplier;
  }

  void validate() const {
    if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
    if (!(noise_multiplier >= 0.0) || std::isinf(noise_multiplier)) {
      throw ConfigError("noise multiplier must be finite and nonnegative");
    }
  }
};

// Scales v in place so that ||v|| <= C. The final norm is re-measured and,
// if rounding left it above C, shrunk by a relative step that doubles each
// pass (eps, 2 eps, 4 eps, ...). Returns the norm before clipping.
inline double clip_in_place(std::span<double> v, double clip_norm) {
  const double norm = l2_norm(v);
  if (norm <= clip_norm) return norm;
  const double scale = clip_norm / norm;
  for (double& x : v) x *= scale;
  double shrink = std::numeric_limits<double>::epsilon();
  for (double after = l2_norm(v); after > clip_norm; after = l2_norm(v)) {
    for (double& x : v) x *= 1.0 - shrink;
    shrink *= 2.0;
  }
  return norm;
}

inline std::vector<double> clip_to_norm(std::span<const double> v, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  std::vector<double> out(v.begin(), v.end());
  clip_in_place(out, clip_norm);
  return out;
}

inline void add_gaussian_noise(std::span<double> sum, const MechanismParams& params, Rng& rng) {
  const double sd = params.noise_stddev();
  if (sd == 0.0) return;
  for (double& x : sum) x += sd * rng.normal();
}

// sum + N(0, C^2 sigma^2 I).
inline std::vector<double> gaussian_mechanism(std::span<const double> sum,
                                              const MechanismParams& params, Rng& rng) {
  params.validate();
  std::vector<double> out(sum.begin(), sum.end());
  add_gaussian_noise(out, params, rng);
  return out;
}

struct Calibration {
  double noise_multiplier = 0.0;  // sigma for C = 1
  double noise_stddev = 0.0;      // C * sigma
  bool classical_range = true;    // false when epsilon > 1
  std::string warning;
};

// Classical Gaussian-mechanism calibration, sigma = sqrt(2 ln(1.25/delta)) / eps.
inline Calibration calibrate_sigma(double epsilon, double delta, double clip_norm = 1.0) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  Calibration c;
  c.noise_multiplier = std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
  c.noise_stddev = clip_norm * c.noise_multiplier;
  if (epsilon > 1.0) {
    c.classical_range = false;
    c.warning = "epsilon > 1: the classical Gaussian calibration is only proven for epsilon <= 1";
  }
  return c;
}

// log N(w; mean_a, s) - log N(w; mean_b, s) for a one-dimensional Gaussian
// mechanism.
inline double privacy_loss(double w, double mean_a, double mean_b, double noise_std) {
  if (!(noise_std > 0.0)) throw ConfigError("noise stddev must be positive");
  const double ra = w - mean_a;
  const double rb = w - mean_b;
  return (rb * rb - ra * ra) / (2.0 * noise_std * noise_std);
}

}  // namespace bdpgan

#endif  // BDPGAN_MECHANISMS_HPP_
