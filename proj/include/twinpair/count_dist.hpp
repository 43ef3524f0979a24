#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "twinpair/errors.hpp"

namespace twinpair {

/// Default tail-mass tolerance for truncated probability vectors.
inline constexpr double kTruncationTolerance = 1e-10;

/// Truncated probability vector over photon or photocount numbers 0..n_max.
class CountDist {
 public:
  CountDist() : probs_{1.0} {}
  explicit CountDist(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) probs_.push_back(0.0);
  }

  static CountDist delta(std::size_t k) {
    std::vector<double> p(k + 1, 0.0);
    p[k] = 1.0;
    return CountDist(std::move(p));
  }

  std::size_t size() const noexcept { return probs_.size(); }
  std::size_t n_max() const noexcept { return probs_.size() - 1; }

  /// Probability of n; zero outside the stored support.
  double operator[](std::size_t n) const noexcept {
    return n < probs_.size() ? probs_[n] : 0.0;
  }
  double& at(std::size_t n) { return probs_.at(n); }

  std::span<const double> probs() const noexcept { return probs_; }

  double mass() const noexcept {
    return std::accumulate(probs_.begin(), probs_.end(), 0.0);
  }

  double mean() const noexcept {
    double m = 0.0;
    for (std::size_t n = 0; n < probs_.size(); ++n) m += double(n) * probs_[n];
    return m;
  }

  double second_moment() const noexcept {
    double m = 0.0;
    for (std::size_t n = 0; n < probs_.size(); ++n)
      m += double(n) * double(n) * probs_[n];
    return m;
  }

  double variance() const noexcept {
    const double m = mean();
    return second_moment() - m * m;
  }

  /// (<x^2> - <x>^2) / <x>^2; NaN for a zero mean.
  double relative_variance() const noexcept {
    const double m = mean();
    return m > 0.0 ? variance() / (m * m) : std::nan("");
  }

  /// Drops trailing entries whose combined mass is below `tail_eps`.
  CountDist trimmed(double tail_eps) const {
    std::size_t keep = probs_.size();
    double tail = 0.0;
    while (keep > 1 && tail + probs_[keep - 1] < tail_eps) {
      tail += probs_[keep - 1];
      --keep;
    }
    return CountDist(std::vector<double>(probs_.begin(), probs_.begin() + keep));
  }

  /// Throws when an entry leaves [0,1] or the mass leaves [1 - eps, 1].
  void check(double eps = kTruncationTolerance) const {
    for (double p : probs_)
      if (!(p >= 0.0 && p <= 1.0 + 1e-12))
        throw NumericalError("count distribution entry outside [0,1]");
    const double m = mass();
    if (m < 1.0 - eps || m > 1.0 + 1e-9)
      throw NumericalError("count distribution mass " + std::to_string(m) +
                           " outside tolerance");
  }

 private:
  std::vector<double> probs_;
};

/// Discrete convolution (distribution of the sum of independent counts).
inline CountDist convolve(const CountDist& a, const CountDist& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return CountDist(std::move(out));
}

struct JointMoments {
  double mean_s = 0.0;
  double mean_i = 0.0;
  double var_s = 0.0;
  double var_i = 0.0;
  double cov = 0.0;
  double cross = 0.0;  // <c_s c_i>
  double second_s = 0.0;
  double second_i = 0.0;
};

/// Truncated joint probability matrix indexed by (signal, idler) counts.
class JointCountDist {
 public:
  JointCountDist() : JointCountDist(1, 1) { data_[0] = 1.0; }
  JointCountDist(std::size_t rows, std::size_t cols)
      : rows_(std::max<std::size_t>(rows, 1)),
        cols_(std::max<std::size_t>(cols, 1)),
        data_(rows_ * cols_, 0.0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double operator()(std::size_t s, std::size_t i) const noexcept {
    return (s < rows_ && i < cols_) ? data_[s * cols_ + i] : 0.0;
  }
  double& at(std::size_t s, std::size_t i) {
    if (s >= rows_ || i >= cols_) throw std::out_of_range("JointCountDist::at");
    return data_[s * cols_ + i];
  }

  std::span<const double> data() const noexcept { return data_; }

  double mass() const noexcept {
    return std::accumulate(data_.begin(), data_.end(), 0.0);
  }

  CountDist marginal_signal() const {
    std::vector<double> p(rows_, 0.0);
    for (std::size_t s = 0; s < rows_; ++s)
      for (std::size_t i = 0; i < cols_; ++i) p[s] += data_[s * cols_ + i];
    return CountDist(std::move(p));
  }

  CountDist marginal_idler() const {
    std::vector<double> p(cols_, 0.0);
    for (std::size_t s = 0; s < rows_; ++s)
      for (std::size_t i = 0; i < cols_; ++i) p[i] += data_[s * cols_ + i];
    return CountDist(std::move(p));
  }

  /// Moments normalized by the stored mass.
  JointMoments moments() const noexcept {
    JointMoments m;
    double total = 0.0;
    for (std::size_t s = 0; s < rows_; ++s)
      for (std::size_t i = 0; i < cols_; ++i) {
        const double p = data_[s * cols_ + i];
        total += p;
        m.mean_s += p * double(s);
        m.mean_i += p * double(i);
        m.second_s += p * double(s) * double(s);
        m.second_i += p * double(i) * double(i);
        m.cross += p * double(s) * double(i);
      }
    if (total <= 0.0) return JointMoments{};
    m.mean_s /= total;
    m.mean_i /= total;
    m.second_s /= total;
    m.second_i /= total;
    m.cross /= total;
    m.var_s = m.second_s - m.mean_s * m.mean_s;
    m.var_i = m.second_i - m.mean_i * m.mean_i;
    m.cov = m.cross - m.mean_s * m.mean_i;
    return m;
  }

  /// Shrinks to the smallest rectangle holding all entries above `floor`.
  JointCountDist trimmed(double floor = 0.0) const {
    std::size_t r = 1, c = 1;
    for (std::size_t s = 0; s < rows_; ++s)
      for (std::size_t i = 0; i < cols_; ++i)
        if (data_[s * cols_ + i] > floor) {
          r = std::max(r, s + 1);
          c = std::max(c, i + 1);
        }
    JointCountDist out(r, c);
    for (std::size_t s = 0; s < r; ++s)
      for (std::size_t i = 0; i < c; ++i) out.at(s, i) = (*this)(s, i);
    return out;
  }

  void check(double eps = kTruncationTolerance) const {
    for (double p : data_)
      if (!(p >= 0.0 && p <= 1.0 + 1e-12))
        throw NumericalError("joint distribution entry outside [0,1]");
    const double m = mass();
    if (m < 1.0 - eps || m > 1.0 + 1e-9)
      throw NumericalError("joint distribution mass " + std::to_string(m) +
                           " outside tolerance");
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

/// Normalized correlation coefficient of the count fluctuations; NaN when a
/// marginal variance vanishes.
inline double covariance_coefficient(const JointMoments& m) noexcept {
  const double denom = m.var_s * m.var_i;
  return denom > 0.0 ? m.cov / std::sqrt(denom) : std::nan("");
}

}  // namespace twinpair
