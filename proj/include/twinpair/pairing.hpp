#pragma once

// Random (accidental) pairing of signal and idler counts inside detection
// areas: strip coverage, idler-side overlap correction, basic and refined
// pairing probabilities, and the accidental-pair decomposition of a joint
// distribution of unpaired counts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "twinpair/count_dist.hpp"
#include "twinpair/detection.hpp"
#include "twinpair/errors.hpp"

namespace twinpair {

enum class PairingModel { Basic, Refined };

inline const char* to_string(PairingModel model) noexcept {
  return model == PairingModel::Basic ? "basic" : "refined";
}

/// Relative strip area covered by detection areas of m_d pixels drawn around
/// c_s randomly placed counts: 1 - (1 - m_d/N)^c_s.
inline double coverage_fraction(std::size_t c_s, double m_d, std::uint64_t pixels) {
  if (pixels < 1) throw ParameterError("pixel count must be >= 1");
  if (!(m_d >= 0.0)) throw ParameterError("detection area must be non-negative");
  if (m_d > double(pixels))
    throw ParameterError("detection area " + std::to_string(m_d) +
                         " exceeds strip of " + std::to_string(pixels) + " pixels");
  const double s = m_d / double(pixels);
  if (c_s == 0 || s == 0.0) return 0.0;
  if (s == 1.0) return 1.0;
  return -std::expm1(double(c_s) * std::log1p(-s));
}

/// Overlap correction eta_g(c_i; c_s) of the refined pairing model. Defined
/// as 1 where the reference area vanishes (c_s = 0 or c_i = 0).
inline double overlap_correction(std::size_t c_i, std::size_t c_s) {
  if (c_s == 0 || c_i == 0) return 1.0;
  const double covered =
      c_s == 1 ? 1.0 : -std::expm1(double(c_i) * std::log1p(-1.0 / double(c_s)));
  const double reference = double(std::min(c_s, c_i)) / double(c_s);
  return covered / reference;
}

namespace detail {

/// Binomial pmf over k = 0..n, recurred outward from the mode.
inline std::vector<double> binomial_pmf(std::size_t n, double p) {
  std::vector<double> out(n + 1, 0.0);
  if (p <= 0.0) {
    out[0] = 1.0;
    return out;
  }
  if (p >= 1.0) {
    out[n] = 1.0;
    return out;
  }
  const std::size_t mode = std::min(n, std::size_t(std::floor(double(n + 1) * p)));
  out[mode] = binomial_thin(mode, n, p);
  const double odds = p / (1.0 - p);
  for (std::size_t k = mode; k < n; ++k)
    out[k + 1] = out[k] * double(n - k) / double(k + 1) * odds;
  for (std::size_t k = mode; k > 0; --k)
    out[k - 1] = out[k] * double(k) / double(n - k + 1) / odds;
  return out;
}

/// Folds the distribution of matched idler counts into pairing counts:
/// c_p < c_s keeps its own weight, c_p = c_s absorbs the saturated tail.
inline std::vector<double> saturate(const std::vector<double>& matched,
                                    std::size_t c_s, std::size_t c_i) {
  const std::size_t top = std::min(c_s, c_i);
  std::vector<double> out(top + 1, 0.0);
  for (std::size_t k = 0; k < matched.size() && k <= c_i; ++k) {
    if (k < c_s)
      out[k] = matched[k];
    else
      out[c_s] += matched[k];  // only reached when c_s <= c_i
  }
  return out;
}

}  // namespace detail

/// Probability that c_s signal and c_i idler counts at random positions form
/// c_p accidental pairs in detection areas of m_d pixels.
inline double pairing_probability(std::size_t c_p, std::size_t c_s, std::size_t c_i,
                                  double m_d, std::uint64_t pixels, PairingModel model) {
  if (c_p > std::min(c_s, c_i)) return 0.0;
  const double eta_f = coverage_fraction(c_s, m_d, pixels);
  // Probability of k matched idler counts before saturation at c_s.
  auto matched = [&](std::size_t k) {
    if (model == PairingModel::Basic) return binomial_thin(k, c_i, eta_f);
    double q = 0.0;
    for (std::size_t inside = k; inside <= c_i; ++inside)
      q += binomial_thin(k, inside, overlap_correction(inside, c_s)) *
           binomial_thin(inside, c_i, eta_f);
    return q;
  };
  if (c_p < c_s) return matched(c_p);
  double tail = 0.0;  // c_p == c_s <= c_i
  for (std::size_t k = c_s; k <= c_i; ++k) tail += matched(k);
  return tail;
}

/// P(c_p | c_s, c_i) for every c_s < rows and c_i < cols at fixed m_d.
class PairingTable {
 public:
  PairingTable(std::size_t rows, std::size_t cols, double m_d, std::uint64_t pixels,
               PairingModel model)
      : rows_(rows), cols_(cols), m_d_(m_d), pixels_(pixels), model_(model) {
    offsets_.reserve(rows * cols + 1);
    offsets_.push_back(0);
    for (std::size_t s = 0; s < rows; ++s)
      for (std::size_t i = 0; i < cols; ++i)
        offsets_.push_back(offsets_.back() + std::min(s, i) + 1);
    values_.assign(offsets_.back(), 0.0);

    for (std::size_t s = 0; s < rows; ++s) {
      const double eta_f = coverage_fraction(s, m_d, pixels);
      // Binomial vectors of the overlap step, one per number of idler counts
      // inside the covered area (independent of the total idler count).
      std::vector<std::vector<double>> overlap;
      if (model == PairingModel::Refined) {
        overlap.reserve(cols);
        for (std::size_t inside = 0; inside < cols; ++inside)
          overlap.push_back(detail::binomial_pmf(inside, overlap_correction(inside, s)));
      }
      for (std::size_t i = 0; i < cols; ++i) {
        const std::vector<double> covered = detail::binomial_pmf(i, eta_f);
        std::vector<double> matched;
        if (model == PairingModel::Basic) {
          matched = covered;
        } else {
          matched.assign(i + 1, 0.0);
          for (std::size_t inside = 0; inside <= i; ++inside) {
            const double w = covered[inside];
            if (w == 0.0) continue;
            const auto& inner = overlap[inside];
            for (std::size_t k = 0; k <= inside; ++k) matched[k] += w * inner[k];
          }
        }
        const auto folded = detail::saturate(matched, s, i);
        std::copy(folded.begin(), folded.end(), values_.begin() + offsets_[s * cols + i]);
      }
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double m_d() const noexcept { return m_d_; }
  std::uint64_t pixels() const noexcept { return pixels_; }
  PairingModel model() const noexcept { return model_; }

  double operator()(std::size_t c_p, std::size_t c_s, std::size_t c_i) const {
    if (c_s >= rows_ || c_i >= cols_)
      throw std::out_of_range("pairing table index outside cached range");
    if (c_p > std::min(c_s, c_i)) return 0.0;
    return values_[offsets_[c_s * cols_ + c_i] + c_p];
  }

  /// P(. | c_s, c_i) over c_p = 0..min(c_s, c_i).
  std::span<const double> row(std::size_t c_s, std::size_t c_i) const {
    const std::size_t k = c_s * cols_ + c_i;
    return {values_.data() + offsets_[k], offsets_[k + 1] - offsets_[k]};
  }

 private:
  std::size_t rows_, cols_;
  double m_d_;
  std::uint64_t pixels_;
  PairingModel model_;
  std::vector<std::size_t> offsets_;
  std::vector<double> values_;
};

/// Conditionals below this accidental-pair probability are not stored.
inline constexpr double kConditionalFloor = 1e-12;

/// Accidental pairs and the unpaired counts left behind, conditioned on the
/// number of accidental pairs.
struct AccidentalPairing {
  CountDist pair_dist;
  std::vector<std::optional<JointCountDist>> conditional_unpaired;
  double m_d = 0.0;

  const JointCountDist* conditional(std::size_t c_p) const noexcept {
    if (c_p >= conditional_unpaired.size() || !conditional_unpaired[c_p]) return nullptr;
    return &*conditional_unpaired[c_p];
  }
  CountDist conditional_signal(std::size_t c_p) const {
    const auto* j = conditional(c_p);
    if (!j) throw AnalysisError("conditional undefined for c_p=" + std::to_string(c_p));
    return j->marginal_signal();
  }
  CountDist conditional_idler(std::size_t c_p) const {
    const auto* j = conditional(c_p);
    if (!j) throw AnalysisError("conditional undefined for c_p=" + std::to_string(c_p));
    return j->marginal_idler();
  }
};

inline AccidentalPairing accidental_pair_dist(const JointCountDist& unpaired,
                                              const PairingTable& table) {
  if (table.rows() < unpaired.rows() || table.cols() < unpaired.cols())
    throw ParameterError("pairing table smaller than the joint distribution");
  const std::size_t top = std::min(unpaired.rows(), unpaired.cols());
  std::vector<double> pairs(top, 0.0);
  std::vector<JointCountDist> cond;
  cond.reserve(top);
  for (std::size_t c = 0; c < top; ++c)
    cond.emplace_back(unpaired.rows() - c, unpaired.cols() - c);

  for (std::size_t s = 0; s < unpaired.rows(); ++s)
    for (std::size_t i = 0; i < unpaired.cols(); ++i) {
      const double f = unpaired(s, i);
      if (f == 0.0) continue;
      const auto p = table.row(s, i);
      for (std::size_t c = 0; c < p.size(); ++c) {
        const double w = p[c] * f;
        if (w == 0.0) continue;
        pairs[c] += w;
        cond[c].at(s - c, i - c) += w;
      }
    }

  AccidentalPairing out;
  out.m_d = table.m_d();
  out.conditional_unpaired.resize(top);
  for (std::size_t c = 0; c < top; ++c) {
    if (pairs[c] <= kConditionalFloor) continue;
    JointCountDist j(cond[c].rows(), cond[c].cols());
    for (std::size_t s = 0; s < j.rows(); ++s)
      for (std::size_t i = 0; i < j.cols(); ++i) j.at(s, i) = cond[c](s, i) / pairs[c];
    out.conditional_unpaired[c] = j.trimmed(0.0);
  }
  out.pair_dist = CountDist(std::move(pairs)).trimmed(0.0);
  return out;
}

inline AccidentalPairing accidental_pair_dist(const JointCountDist& unpaired, double m_d,
                                              std::uint64_t pixels, PairingModel model) {
  const PairingTable table(unpaired.rows(), unpaired.cols(), m_d, pixels, model);
  return accidental_pair_dist(unpaired, table);
}

/// Rebuilds the joint distribution the pairing started from (sum over
/// accidental pairs of the shifted conditionals).
inline JointCountDist reconstruct_joint(const AccidentalPairing& acc) {
  std::size_t rows = 1, cols = 1;
  for (std::size_t c = 0; c < acc.conditional_unpaired.size(); ++c)
    if (const auto* j = acc.conditional(c)) {
      rows = std::max(rows, j->rows() + c);
      cols = std::max(cols, j->cols() + c);
    }
  JointCountDist out(rows, cols);
  for (std::size_t c = 0; c < acc.conditional_unpaired.size(); ++c) {
    const auto* j = acc.conditional(c);
    if (!j) continue;
    const double w = acc.pair_dist[c];
    for (std::size_t s = 0; s < j->rows(); ++s)
      for (std::size_t i = 0; i < j->cols(); ++i) out.at(s + c, i + c) += w * (*j)(s, i);
  }
  return out;
}

}  // namespace twinpair
