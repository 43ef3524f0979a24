#pragma once

// Overall joint photocount distributions built from genuine, accidental and
// unpaired counts, their noise-reduced variants, and scalar statistics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "twinpair/count_dist.hpp"
#include "twinpair/detection.hpp"
#include "twinpair/distributions.hpp"
#include "twinpair/pairing.hpp"

namespace twinpair {

/// Unnormalized mixtures f_p^reg(c_p - c') f_p^acc(c') f_si^acc(.,.;c') summed
/// over c', one per total paired count c_p. Entry c_p divided by F_p(c_p) is
/// the unpaired distribution conditioned on c_p identified pairs.
inline std::vector<JointCountDist> unpaired_by_total_pairs(const CountDist& genuine,
                                                           const AccidentalPairing& acc) {
  std::size_t rows = 1, cols = 1;
  for (std::size_t a = 0; a < acc.conditional_unpaired.size(); ++a)
    if (const auto* j = acc.conditional(a)) {
      rows = std::max(rows, j->rows());
      cols = std::max(cols, j->cols());
    }
  const std::size_t total = genuine.size() + acc.conditional_unpaired.size();
  std::vector<JointCountDist> out(total, JointCountDist(rows, cols));
  for (std::size_t a = 0; a < acc.conditional_unpaired.size(); ++a) {
    const auto* j = acc.conditional(a);
    if (!j) continue;
    const double wa = acc.pair_dist[a];
    for (std::size_t g = 0; g < genuine.size(); ++g) {
      const double w = wa * genuine[g];
      if (w == 0.0) continue;
      auto& m = out[a + g];
      for (std::size_t s = 0; s < j->rows(); ++s)
        for (std::size_t i = 0; i < j->cols(); ++i) m.at(s, i) += w * (*j)(s, i);
    }
  }
  while (out.size() > 1 && out.back().mass() == 0.0) out.pop_back();
  return out;
}

namespace detail {

/// Places each mixture at offset (c_p, c_p): paired counts appear in both strips.
inline JointCountDist shift_and_sum(const std::vector<JointCountDist>& by_pairs) {
  std::size_t rows = 1, cols = 1;
  for (std::size_t c = 0; c < by_pairs.size(); ++c) {
    rows = std::max(rows, by_pairs[c].rows() + c);
    cols = std::max(cols, by_pairs[c].cols() + c);
  }
  JointCountDist out(rows, cols);
  for (std::size_t c = 0; c < by_pairs.size(); ++c) {
    const auto& m = by_pairs[c];
    for (std::size_t s = 0; s < m.rows(); ++s)
      for (std::size_t i = 0; i < m.cols(); ++i) out.at(s + c, i + c) += m(s, i);
  }
  return out;
}

/// Binomial thinning of both axes with retention probability eta.
inline JointCountDist thin_both(const JointCountDist& m, double eta) {
  JointCountDist rows_done(m.rows(), m.cols());
  for (std::size_t src = 0; src < m.rows(); ++src) {
    const auto pmf = binomial_pmf(src, eta);
    for (std::size_t k = 0; k <= src; ++k) {
      if (pmf[k] == 0.0) continue;
      for (std::size_t i = 0; i < m.cols(); ++i) rows_done.at(k, i) += pmf[k] * m(src, i);
    }
  }
  JointCountDist out(m.rows(), m.cols());
  for (std::size_t src = 0; src < m.cols(); ++src) {
    const auto pmf = binomial_pmf(src, eta);
    for (std::size_t k = 0; k <= src; ++k) {
      if (pmf[k] == 0.0) continue;
      for (std::size_t s = 0; s < m.rows(); ++s) out.at(s, k) += pmf[k] * rows_done(s, src);
    }
  }
  return out;
}

}  // namespace detail

/// F(c_s, c_i): genuine and accidental paired counts plus the unpaired counts
/// left after accidental pairing.
inline JointCountDist overall_joint(const CountDist& genuine, const AccidentalPairing& acc) {
  return detail::shift_and_sum(unpaired_by_total_pairs(genuine, acc));
}

/// F_p: all paired counts, genuine and accidental.
inline CountDist paired_dist(const CountDist& genuine, const CountDist& accidental) {
  return convolve(genuine, accidental);
}

/// F_si(d_s, d_i): unpaired counts mixed over the accidental-pair number.
inline JointCountDist unpaired_joint(const AccidentalPairing& acc) {
  std::size_t rows = 1, cols = 1;
  for (std::size_t a = 0; a < acc.conditional_unpaired.size(); ++a)
    if (const auto* j = acc.conditional(a)) {
      rows = std::max(rows, j->rows());
      cols = std::max(cols, j->cols());
    }
  JointCountDist out(rows, cols);
  for (std::size_t a = 0; a < acc.conditional_unpaired.size(); ++a) {
    const auto* j = acc.conditional(a);
    if (!j) continue;
    const double w = acc.pair_dist[a];
    for (std::size_t s = 0; s < j->rows(); ++s)
      for (std::size_t i = 0; i < j->cols(); ++i) out.at(s, i) += w * (*j)(s, i);
  }
  return out;
}

inline std::pair<CountDist, CountDist> unpaired_marginals(const AccidentalPairing& acc) {
  const auto j = unpaired_joint(acc);
  return {j.marginal_signal(), j.marginal_idler()};
}

struct ReducedDists {
  JointCountDist joint;           // F^red
  JointCountDist unpaired_joint;  // F_si^red
  CountDist unpaired_signal;      // F_s^red
  CountDist unpaired_idler;       // F_i^red
};

/// Noise-reduced distributions: unpaired counts are kept only when they fall
/// into the detection areas around the c_p identified paired counts, i.e. each
/// survives with probability eta_f(c_p; m_d).
inline ReducedDists reduced_dists(const CountDist& genuine, const AccidentalPairing& acc,
                                  double m_d, std::uint64_t pixels) {
  auto by_pairs = unpaired_by_total_pairs(genuine, acc);
  for (std::size_t c = 0; c < by_pairs.size(); ++c)
    by_pairs[c] = detail::thin_both(by_pairs[c], coverage_fraction(c, m_d, pixels));
  ReducedDists out{detail::shift_and_sum(by_pairs), JointCountDist(), CountDist(), CountDist()};
  std::size_t rows = 1, cols = 1;
  for (const auto& m : by_pairs) {
    rows = std::max(rows, m.rows());
    cols = std::max(cols, m.cols());
  }
  JointCountDist unpaired(rows, cols);
  for (const auto& m : by_pairs)
    for (std::size_t s = 0; s < m.rows(); ++s)
      for (std::size_t i = 0; i < m.cols(); ++i) unpaired.at(s, i) += m(s, i);
  out.unpaired_signal = unpaired.marginal_signal();
  out.unpaired_idler = unpaired.marginal_idler();
  out.unpaired_joint = std::move(unpaired);
  return out;
}

/// Scalar characteristics of a joint photocount distribution.
struct ScalarStats {
  double mean_s = 0.0;
  double mean_i = 0.0;
  double mean_pairs = std::numeric_limits<double>::quiet_NaN();
  double rel_var_s = 0.0;
  double rel_var_i = 0.0;
  double rel_var_cp = std::numeric_limits<double>::quiet_NaN();
  double rel_var_ds = std::numeric_limits<double>::quiet_NaN();
  double covariance = std::numeric_limits<double>::quiet_NaN();  // C
  double sub_shot_noise = std::numeric_limits<double>::quiet_NaN();  // R
  bool covariance_defined = false;
};

inline ScalarStats scalar_stats(const JointCountDist& joint) {
  const auto m = joint.moments();
  ScalarStats out;
  out.mean_s = m.mean_s;
  out.mean_i = m.mean_i;
  out.rel_var_s = m.mean_s > 0 ? m.var_s / (m.mean_s * m.mean_s) : std::nan("");
  out.rel_var_i = m.mean_i > 0 ? m.var_i / (m.mean_i * m.mean_i) : std::nan("");
  out.covariance = covariance_coefficient(m);
  out.covariance_defined = !std::isnan(out.covariance);
  const double total = m.mean_s + m.mean_i;
  if (total > 0.0) out.sub_shot_noise = (m.var_s + m.var_i - 2.0 * m.cov) / total;
  return out;
}

/// Everything the model predicts at one detection-area size.
struct ModelOutputs {
  double m_d = 0.0;
  CountDist genuine;        // f_p^reg
  CountDist broken_genuine; // f~_si
  AccidentalPairing accidental;
  JointCountDist overall_joint;   // F
  CountDist paired;               // F_p
  JointCountDist unpaired_joint;  // F_si
  CountDist unpaired_signal;      // F_s
  CountDist unpaired_idler;       // F_i
  ReducedDists reduced;
  std::vector<JointCountDist> unpaired_by_pairs;

  /// Unpaired joint distribution conditioned on c_p identified pairs.
  std::optional<JointCountDist> conditional_unpaired(std::size_t c_p) const {
    if (c_p >= unpaired_by_pairs.size()) return std::nullopt;
    const double w = unpaired_by_pairs[c_p].mass();
    if (w <= kConditionalFloor) return std::nullopt;
    JointCountDist out(unpaired_by_pairs[c_p].rows(), unpaired_by_pairs[c_p].cols());
    for (std::size_t s = 0; s < out.rows(); ++s)
      for (std::size_t i = 0; i < out.cols(); ++i) out.at(s, i) = unpaired_by_pairs[c_p](s, i) / w;
    return out;
  }

  ScalarStats stats() const {
    auto st = scalar_stats(overall_joint);
    st.mean_pairs = paired.mean();
    st.rel_var_cp = paired.relative_variance();
    st.rel_var_ds = unpaired_signal.relative_variance();
    return st;
  }
};

/// Evaluates the full model for one parameter set over any number of m_d.
class ModelEvaluator {
 public:
  ModelEvaluator(const TwinBeamParams& beam, const DetectorParams& det,
                 const CorrelationProfile& profile, PairingModel model,
                 double eps = kTruncationTolerance)
      : det_(det),
        profile_(profile),
        model_(model),
        components_(component_count_dists(beam, det, profile, eps)),
        signal_(unpaired_component_dist(components_.broken_signal, components_.noise_signal)
                    .trimmed(kTrimTolerance)),
        idler_(unpaired_component_dist(components_.broken_idler, components_.noise_idler)
                   .trimmed(kTrimTolerance)) {}

  const ComponentCountDists& components() const noexcept { return components_; }
  const DetectorParams& detector() const noexcept { return det_; }
  const CorrelationProfile& profile() const noexcept { return profile_; }
  PairingModel pairing_model() const noexcept { return model_; }

  /// Unpaired counts of each strip before splitting genuine pairs (f_s, f_i).
  const CountDist& unpaired_signal_component() const noexcept { return signal_; }
  const CountDist& unpaired_idler_component() const noexcept { return idler_; }

  ModelOutputs evaluate(double m_d) const {
    ModelOutputs out;
    out.m_d = m_d;
    const double eta_d = coverage_probability(m_d, profile_);
    auto [kept, broken] = split_genuine_pairs(components_.genuine_pairs, eta_d);
    out.genuine = kept.trimmed(kTrimTolerance);
    out.broken_genuine = broken.trimmed(kTrimTolerance);
    const auto f_si = joint_unpaired_dist(out.broken_genuine, signal_, idler_).trimmed(1e-300);
    out.accidental = accidental_pair_dist(f_si, m_d, det_.pixels, model_);
    out.unpaired_by_pairs = unpaired_by_total_pairs(out.genuine, out.accidental);
    out.overall_joint = detail::shift_and_sum(out.unpaired_by_pairs);
    out.paired = paired_dist(out.genuine, out.accidental.pair_dist);
    out.unpaired_joint = unpaired_joint(out.accidental);
    out.unpaired_signal = out.unpaired_joint.marginal_signal();
    out.unpaired_idler = out.unpaired_joint.marginal_idler();
    out.reduced = reduced_dists(out.genuine, out.accidental, m_d, det_.pixels);
    return out;
  }

 private:
  DetectorParams det_;
  CorrelationProfile profile_;
  PairingModel model_;
  ComponentCountDists components_;
  CountDist signal_;
  CountDist idler_;
};

}  // namespace twinpair
