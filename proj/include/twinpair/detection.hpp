#pragma once

// Camera response and the photocount distributions of the beam components:
// genuine pairs, pairs with one photon lost, noise fields, and the split of
// genuine pairs by partial coverage of the correlated area.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "twinpair/count_dist.hpp"
#include "twinpair/detail/big_float.hpp"
#include "twinpair/distributions.hpp"
#include "twinpair/errors.hpp"

namespace twinpair {

/// Tail mass dropped when trimming derived photocount vectors.
inline constexpr double kTrimTolerance = 1e-14;

struct DetectorParams {
  std::uint64_t pixels = 6500;
  double eta_signal = 0.228;
  double eta_idler = 0.223;
  double dark_signal = 0.2 / 6500;
  double dark_idler = 0.2 / 6500;

  void validate() const {
    if (pixels < 1) throw ParameterError("detector.pixels must be >= 1");
    auto check_eta = [](double eta, const char* name) {
      if (!(eta >= 0.0 && eta <= 1.0))
        throw ParameterError(std::string(name) + " must lie in [0,1]");
    };
    auto check_dark = [](double d, const char* name) {
      if (!(d >= 0.0 && d < 1.0))
        throw ParameterError(std::string(name) + " must lie in [0,1)");
    };
    check_eta(eta_signal, "detector.eta_signal");
    check_eta(eta_idler, "detector.eta_idler");
    check_dark(dark_signal, "detector.dark_signal");
    check_dark(dark_idler, "detector.dark_idler");
  }
};

enum class ProfileKind { Flat, Gaussian2D, Gaussian1D };

/// Shape of the correlated area. `extent` is m_c in pixels: pi R^2 for the
/// two-dimensional Gaussian, 2X for the one-dimensional cut.
struct CorrelationProfile {
  ProfileKind kind = ProfileKind::Gaussian2D;
  double extent = 250.0;

  void validate() const {
    if (!(extent > 0.0) || !std::isfinite(extent))
      throw ParameterError("profile.extent must be positive");
  }
};

// ---------------------------------------------------------------------------
// Binomial thinning

/// C(c_src, c) eta^c (1-eta)^(c_src-c); zero for c > c_src.
inline double binomial_thin(std::size_t c, std::size_t c_src, double eta) {
  if (c > c_src) return 0.0;
  if (eta <= 0.0) return c == 0 ? 1.0 : 0.0;
  if (eta >= 1.0) return c == c_src ? 1.0 : 0.0;
  const double n = double(c_src);
  const double k = double(c);
  const std::size_t m = std::min(c, c_src - c);
  double log_choose = 0.0;
  if (m <= 256) {
    // lgamma differences lose ~1e-12 at n ~ 1e4; the short sum does not.
    for (std::size_t j = 0; j < m; ++j) log_choose += std::log((n - double(j)) / double(j + 1));
  } else {
    log_choose = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
  }
  return std::exp(log_choose + k * std::log(eta) + (n - k) * std::log1p(-eta));
}

// ---------------------------------------------------------------------------
// Detection response T(c, n; eta, D, N)

namespace detail {

inline double log2_choose(double n, double k) {
  return (std::lgamma(n + 1.0) - std::lgamma(k + 1.0) -
          std::lgamma(n - k + 1.0)) /
         std::log(2.0);
}

/// Alternating l-sum in double precision with Neumaier compensation.
inline double response_sum_double(std::size_t c, std::size_t n, double eta,
                                  double dark, std::uint64_t pixels) {
  const double big_n = double(pixels);
  const double inv_keep = 1.0 / (1.0 - dark);
  double sum = 0.0, comp = 0.0;
  double choose = 1.0;     // C(c, l)
  double dark_pow = 1.0;   // (1-D)^(-l)
  for (std::size_t l = 0; l <= c; ++l) {
    const double base = (1.0 - eta) + double(l) * eta / big_n;
    double term = choose * dark_pow * std::pow(base, double(n));
    if (l % 2 == 1) term = -term;
    const double t = sum + term;
    comp += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
    sum = t;
    choose = choose * double(c - l) / double(l + 1);
    dark_pow *= inv_keep;
  }
  sum += comp;
  const double log_pref = std::lgamma(big_n + 1.0) - std::lgamma(double(c) + 1.0) -
                          std::lgamma(big_n - double(c) + 1.0) +
                          big_n * std::log1p(-dark);
  const double value = std::exp(log_pref) * sum;
  return (c % 2 == 1) ? -value : value;
}

/// Same sum carried out in MPFR at `bits` of precision.
inline double response_sum_extended(std::size_t c, std::size_t n, double eta,
                                    double dark, std::uint64_t pixels,
                                    mpfr_prec_t bits) {
  using detail::BigFloat;
  BigFloat one_minus_eta(bits), step(bits), inv_keep(bits), keep(bits);
  BigFloat eta_b(eta, bits), dark_b(dark, bits);
  mpfr_ui_sub(one_minus_eta.get(), 1, eta_b.get(), MPFR_RNDN);
  mpfr_div_ui(step.get(), eta_b.get(), static_cast<unsigned long>(pixels), MPFR_RNDN);
  mpfr_ui_sub(keep.get(), 1, dark_b.get(), MPFR_RNDN);
  mpfr_ui_div(inv_keep.get(), 1, keep.get(), MPFR_RNDN);

  BigFloat sum(bits), choose(1.0, bits), dark_pow(1.0, bits), base(bits),
      term(bits);
  for (std::size_t l = 0; l <= c; ++l) {
    mpfr_mul_ui(base.get(), step.get(), static_cast<unsigned long>(l), MPFR_RNDN);
    mpfr_add(base.get(), base.get(), one_minus_eta.get(), MPFR_RNDN);
    mpfr_pow_ui(term.get(), base.get(), static_cast<unsigned long>(n), MPFR_RNDN);
    mpfr_mul(term.get(), term.get(), choose.get(), MPFR_RNDN);
    mpfr_mul(term.get(), term.get(), dark_pow.get(), MPFR_RNDN);
    if (l % 2 == 1)
      mpfr_sub(sum.get(), sum.get(), term.get(), MPFR_RNDN);
    else
      mpfr_add(sum.get(), sum.get(), term.get(), MPFR_RNDN);
    mpfr_mul_ui(choose.get(), choose.get(), static_cast<unsigned long>(c - l), MPFR_RNDN);
    mpfr_div_ui(choose.get(), choose.get(), static_cast<unsigned long>(l + 1), MPFR_RNDN);
    mpfr_mul(dark_pow.get(), dark_pow.get(), inv_keep.get(), MPFR_RNDN);
  }
  // Prefactor C(N, c) (1-D)^N.
  BigFloat pref(1.0, bits);
  for (std::size_t k = 0; k < c; ++k) {
    mpfr_mul_ui(pref.get(), pref.get(), static_cast<unsigned long>(pixels - k), MPFR_RNDN);
    mpfr_div_ui(pref.get(), pref.get(), static_cast<unsigned long>(k + 1), MPFR_RNDN);
  }
  BigFloat keep_pow(bits);
  mpfr_pow_ui(keep_pow.get(), keep.get(), static_cast<unsigned long>(pixels), MPFR_RNDN);
  mpfr_mul(pref.get(), pref.get(), keep_pow.get(), MPFR_RNDN);
  mpfr_mul(sum.get(), sum.get(), pref.get(), MPFR_RNDN);
  if (c % 2 == 1) mpfr_neg(sum.get(), sum.get(), MPFR_RNDN);
  return sum.to_double();
}

}  // namespace detail

/// Probability of c fired pixels out of N for a field of n photons, detection
/// efficiency eta and mean dark count D per pixel, from the alternating sum
/// over l = 0..c. The sum cancels catastrophically once C(N,c) 2^c outgrows
/// double precision; such cases are routed to an MPFR evaluation whose
/// precision is sized from that bound.
inline double detection_response(std::size_t c, std::size_t n, double eta,
                                 double dark, std::uint64_t pixels) {
  if (pixels < 1) throw ParameterError("pixel count must be >= 1");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("eta must lie in [0,1]");
  if (!(dark >= 0.0 && dark < 1.0)) throw ParameterError("dark mean must lie in [0,1)");
  if (c > pixels) throw ParameterError("count exceeds pixel number");
  // Without dark counts the l-sum is the c-th finite difference of a degree-n
  // polynomial in l and vanishes identically.
  if (dark == 0.0 && c > n) return 0.0;

  const double dc = double(c);
  const double log2_mag = detail::log2_choose(double(pixels), dc) + dc +
                          std::log2(dc + 1.0) +
                          double(pixels - c) * std::log2(1.0 - dark);
  // Absolute rounding error of the double sum is about 2^(log2_mag - 52).
  double value;
  if (log2_mag < 2.0) {
    value = detail::response_sum_double(c, n, eta, dark, pixels);
  } else {
    const auto bits = static_cast<mpfr_prec_t>(std::ceil(std::max(log2_mag, 0.0)) + 96);
    value = detail::response_sum_extended(c, n, eta, dark, pixels, bits);
  }
  if (value < 0.0) {
    if (value >= -1e-12) return 0.0;
    throw NumericalError("detection response negative at c=" + std::to_string(c) +
                         ", n=" + std::to_string(n));
  }
  return value;
}

// ---------------------------------------------------------------------------
// Photocount distributions

/// Photocount distribution sum_n T(c, n; eta, D, N) p(n), evaluated through
/// the pixel-occupancy recursion: detected photons land uniformly on N pixels
/// and the remaining N - j pixels fire dark counts independently.
inline CountDist photocount_dist(const CountDist& photons, double eta,
                                 double dark, std::uint64_t pixels) {
  if (pixels < 1) throw ParameterError("pixel count must be >= 1");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("eta must lie in [0,1]");
  if (!(dark >= 0.0 && dark < 1.0)) throw ParameterError("dark mean must lie in [0,1)");
  const double big_n = double(pixels);
  const std::size_t n_max = photons.n_max();
  const std::size_t j_cap = std::size_t(std::min<std::uint64_t>(n_max, pixels));

  // occupied[j]: probability of j occupied pixels after the current photon number.
  std::vector<double> occupied(j_cap + 1, 0.0), next(j_cap + 1, 0.0);
  std::vector<double> mixture(j_cap + 1, 0.0);
  occupied[0] = 1.0;
  std::size_t top = 0;
  for (std::size_t n = 0;; ++n) {
    const double pn = photons[n];
    for (std::size_t j = 0; j <= top; ++j) mixture[j] += pn * occupied[j];
    if (n == n_max) break;
    const std::size_t new_top = std::min(top + 1, j_cap);
    std::fill(next.begin(), next.begin() + new_top + 1, 0.0);
    for (std::size_t j = 0; j <= top; ++j) {
      const double q = occupied[j];
      if (q == 0.0) continue;
      const double hit_new = eta * (big_n - double(j)) / big_n;
      next[j] += q * (1.0 - hit_new);
      if (j + 1 <= new_top) next[j + 1] += q * hit_new;
    }
    occupied.swap(next);
    top = new_top;
  }

  if (dark == 0.0) return CountDist(std::move(mixture)).trimmed(kTrimTolerance);

  // Dark counts on the N - j idle pixels. The excess k is cut where the
  // Binomial(N, D) tail drops below the trimming tolerance.
  std::size_t k_max = 1;
  {
    double tail = 1.0;
    for (std::size_t k = 0; k <= std::size_t(std::min<std::uint64_t>(pixels, 100000)); ++k) {
      tail -= binomial_thin(k, std::size_t(pixels), dark);
      k_max = k;
      if (tail < kTrimTolerance * 1e-3) break;
    }
  }
  std::vector<double> out(std::min<std::uint64_t>(j_cap + k_max, pixels) + 1, 0.0);
  for (std::size_t j = 0; j <= j_cap; ++j) {
    if (mixture[j] == 0.0) continue;
    const std::size_t idle = std::size_t(pixels - j);
    for (std::size_t k = 0; k <= std::min(k_max, idle); ++k)
      out[j + k] += mixture[j] * binomial_thin(k, idle, dark);
  }
  return CountDist(std::move(out)).trimmed(kTrimTolerance);
}

/// N m_c as a pixel count, rounded to the nearest integer >= 1.
inline std::uint64_t effective_pixels(std::uint64_t pixels, double extent) {
  const double v = std::round(double(pixels) * extent);
  return v < 1.0 ? 1 : std::uint64_t(v);
}

/// Genuine paired counts: efficiency eta_s eta_i, no dark counts, N m_c pixels.
inline CountDist genuine_pair_dist(const CountDist& paired_photons,
                                   const DetectorParams& det, double extent) {
  det.validate();
  return photocount_dist(paired_photons, det.eta_signal * det.eta_idler, 0.0,
                         effective_pixels(det.pixels, extent));
}

/// Pairs with only the signal (first) or only the idler (second) photon detected.
inline std::pair<CountDist, CountDist> broken_pair_dists(
    const CountDist& paired_photons, const DetectorParams& det, double extent) {
  det.validate();
  const auto pixels = effective_pixels(det.pixels, extent);
  return {photocount_dist(paired_photons, det.eta_signal * (1.0 - det.eta_idler), 0.0, pixels),
          photocount_dist(paired_photons, det.eta_idler * (1.0 - det.eta_signal), 0.0, pixels)};
}

/// Probability that the partner of a genuine paired count falls inside a
/// detection area of m_d pixels.
inline double coverage_probability(double m_d, const CorrelationProfile& profile) {
  profile.validate();
  if (m_d <= 0.0) return 0.0;
  const double x = m_d / profile.extent;
  switch (profile.kind) {
    case ProfileKind::Flat:
      return std::min(x, 1.0);
    case ProfileKind::Gaussian2D:
      return -std::expm1(-x);
    case ProfileKind::Gaussian1D:
      return std::erf(x);
  }
  return 0.0;
}

/// Splits genuine paired counts into those kept inside the detection area
/// (first) and those broken into two single counts (second).
inline std::pair<CountDist, CountDist> split_genuine_pairs(const CountDist& genuine,
                                                           double eta_d) {
  if (!(eta_d >= 0.0 && eta_d <= 1.0))
    throw ParameterError("coverage probability must lie in [0,1]");
  std::vector<double> kept(genuine.size(), 0.0), broken(genuine.size(), 0.0);
  for (std::size_t src = 0; src < genuine.size(); ++src) {
    const double w = genuine[src];
    if (w == 0.0) continue;
    for (std::size_t c = 0; c <= src; ++c) {
      kept[c] += binomial_thin(c, src, eta_d) * w;
      broken[c] += binomial_thin(c, src, 1.0 - eta_d) * w;
    }
  }
  return {CountDist(std::move(kept)), CountDist(std::move(broken))};
}

inline CountDist noise_count_dist(const CountDist& noise_photons, double eta,
                                  double dark, std::uint64_t pixels) {
  return photocount_dist(noise_photons, eta, dark, pixels);
}

/// Unpaired counts of one strip: broken-pair singles plus noise counts.
inline CountDist unpaired_component_dist(const CountDist& broken,
                                         const CountDist& noise) {
  return convolve(broken, noise);
}

/// Joint distribution of all counts outside paired detection areas. Broken
/// genuine pairs add one count to both strips.
inline JointCountDist joint_unpaired_dist(const CountDist& broken_genuine,
                                          const CountDist& signal,
                                          const CountDist& idler) {
  JointCountDist out(broken_genuine.size() + signal.size() - 1,
                     broken_genuine.size() + idler.size() - 1);
  for (std::size_t p = 0; p < broken_genuine.size(); ++p) {
    const double wp = broken_genuine[p];
    if (wp == 0.0) continue;
    for (std::size_t s = 0; s < signal.size(); ++s) {
      const double ws = wp * signal[s];
      if (ws == 0.0) continue;
      for (std::size_t i = 0; i < idler.size(); ++i) out.at(p + s, p + i) += ws * idler[i];
    }
  }
  return out;
}

/// Photocount distributions of the five beam components.
struct ComponentCountDists {
  CountDist genuine_pairs;
  CountDist broken_signal;
  CountDist broken_idler;
  CountDist noise_signal;
  CountDist noise_idler;
};

inline ComponentCountDists component_count_dists(const TwinBeamParams& beam,
                                                 const DetectorParams& det,
                                                 const CorrelationProfile& profile,
                                                 double eps = kTruncationTolerance) {
  beam.validate();
  det.validate();
  profile.validate();
  // Each photon vector gets a share of the budget so composites stay within eps.
  const double share = eps / 16;
  const CountDist pp = component_dist(beam.paired, share);
  auto [bs, bi] = broken_pair_dists(pp, det, profile.extent);
  return ComponentCountDists{
      genuine_pair_dist(pp, det, profile.extent), std::move(bs), std::move(bi),
      noise_count_dist(component_dist(beam.noise_signal, share), det.eta_signal,
                       det.dark_signal, det.pixels),
      noise_count_dist(component_dist(beam.noise_idler, share), det.eta_idler,
                       det.dark_idler, det.pixels)};
}

}  // namespace twinpair
