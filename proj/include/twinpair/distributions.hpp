#pragma once

// Photon-number distributions of the twin beam in front of the detector.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "twinpair/count_dist.hpp"
#include "twinpair/errors.hpp"

namespace twinpair {

/// Mandel-Rice component: `modes` equally populated modes with
/// `mean_per_mode` photons (or photon pairs) each.
struct ModeParams {
  double modes = 1.0;
  double mean_per_mode = 0.0;

  void validate() const {
    if (!(modes > 0.0) || !std::isfinite(modes))
      throw ParameterError("mode number must be positive, got " +
                           std::to_string(modes));
    if (!(mean_per_mode >= 0.0) || !std::isfinite(mean_per_mode))
      throw ParameterError("mean per mode must be non-negative, got " +
                           std::to_string(mean_per_mode));
  }

  double mean() const noexcept { return modes * mean_per_mode; }
};

struct TwinBeamParams {
  ModeParams paired;
  ModeParams noise_signal;
  ModeParams noise_idler;

  void validate() const {
    paired.validate();
    noise_signal.validate();
    noise_idler.validate();
  }
};

/// Mandel-Rice probability of n photons, evaluated in log space.
inline double mandel_rice(std::size_t n, const ModeParams& params) {
  params.validate();
  const double m = params.modes;
  const double b = params.mean_per_mode;
  if (b == 0.0) return n == 0 ? 1.0 : 0.0;
  const double nn = double(n);
  const double log_p = std::lgamma(nn + m) - std::lgamma(nn + 1.0) -
                       std::lgamma(m) + nn * std::log(b) -
                       (nn + m) * std::log1p(b);
  return std::exp(log_p);
}

/// Mandel-Rice vector on 0..n_max. Throws TruncationError (with a suggested
/// n_max) when the tail beyond n_max carries more than `eps`.
inline CountDist component_dist(const ModeParams& params, std::size_t n_max,
                                double eps = kTruncationTolerance) {
  params.validate();
  std::vector<double> p(n_max + 1);
  const double ratio = params.mean_per_mode / (1.0 + params.mean_per_mode);
  // Upward recurrence from the vacuum term; re-anchored on the log-space value
  // every 64 steps to bound the accumulated rounding.
  p[0] = mandel_rice(0, params);
  for (std::size_t n = 1; n <= n_max; ++n)
    p[n] = n % 64 == 0 ? mandel_rice(n, params)
                       : p[n - 1] * (params.modes + double(n - 1)) / double(n) * ratio;
  double total = 0.0;
  for (double v : p) total += v;
  const double tail = 1.0 - total;
  if (tail > eps) {
    // Geometric tail estimate to suggest a working truncation.
    std::size_t suggestion = n_max + 1;
    if (ratio > 0.0 && ratio < 1.0)
      suggestion = n_max + 1 +
                   std::size_t(std::ceil(std::log(eps / tail) / std::log(ratio)));
    throw TruncationError("tail mass " + std::to_string(tail) +
                              " exceeds tolerance at n_max=" +
                              std::to_string(n_max),
                          std::max(suggestion, 2 * n_max));
  }
  return CountDist(std::move(p));
}

/// Mandel-Rice vector with n_max found by doubling from 64 (cap 4096).
inline CountDist component_dist(const ModeParams& params,
                                double eps = kTruncationTolerance) {
  params.validate();
  std::size_t n_max = 64;
  for (;;) {
    try {
      return component_dist(params, n_max, eps);
    } catch (const TruncationError&) {
      if (n_max >= 4096) throw;
      n_max = std::min<std::size_t>(2 * n_max, 4096);
    }
  }
}

/// Joint photon-number distribution p(n_s, n_i) as the two-fold convolution
/// of the paired and the two noise components.
inline JointCountDist joint_photon_dist(const CountDist& paired,
                                        const CountDist& noise_signal,
                                        const CountDist& noise_idler) {
  JointCountDist out(paired.size() + noise_signal.size() - 1,
                     paired.size() + noise_idler.size() - 1);
  for (std::size_t n = 0; n < paired.size(); ++n) {
    const double pp = paired[n];
    if (pp == 0.0) continue;
    for (std::size_t a = 0; a < noise_signal.size(); ++a) {
      const double ps = pp * noise_signal[a];
      if (ps == 0.0) continue;
      for (std::size_t b = 0; b < noise_idler.size(); ++b)
        out.at(n + a, n + b) += ps * noise_idler[b];
    }
  }
  return out;
}

inline JointCountDist joint_photon_dist(const TwinBeamParams& params,
                                        double eps = kTruncationTolerance) {
  params.validate();
  return joint_photon_dist(component_dist(params.paired, eps / 3),
                           component_dist(params.noise_signal, eps / 3),
                           component_dist(params.noise_idler, eps / 3));
}

inline JointCountDist joint_photon_dist(const TwinBeamParams& params,
                                        std::size_t n_max,
                                        double eps = kTruncationTolerance) {
  params.validate();
  return joint_photon_dist(component_dist(params.paired, n_max, eps / 3),
                           component_dist(params.noise_signal, n_max, eps / 3),
                           component_dist(params.noise_idler, n_max, eps / 3));
}

}  // namespace twinpair
