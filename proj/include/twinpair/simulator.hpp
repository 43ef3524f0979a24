#pragma once

// Monte Carlo two-strip frames and the spatial software pairing that turns
// frames into paired / unpaired count histograms over a sweep of detection
// areas.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "twinpair/count_dist.hpp"
#include "twinpair/detection.hpp"
#include "twinpair/distributions.hpp"
#include "twinpair/errors.hpp"

namespace twinpair {

/// What happens to an idler photon whose offset leaves the strip.
enum class BoundaryPolicy { Wrap, Clip, Discard };

/// Signal pixel -> corresponding idler pixel.
enum class StripMapping { Identity, MirrorX };

struct Pixel {
  std::int32_t x = 0;
  std::int32_t y = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

struct StripGeometry {
  std::uint32_t width = 100;
  std::uint32_t height = 65;
  StripMapping mapping = StripMapping::Identity;
  BoundaryPolicy boundary = BoundaryPolicy::Wrap;
  /// Detection areas are rows of m_d pixels along x instead of discs.
  bool one_dim = false;

  std::uint64_t pixels() const noexcept { return std::uint64_t(width) * height; }

  void validate() const {
    if (width < 1 || height < 1) throw ParameterError("geometry width and height must be >= 1");
  }

  bool contains(Pixel p) const noexcept {
    return p.x >= 0 && p.y >= 0 && p.x < std::int32_t(width) && p.y < std::int32_t(height);
  }

  Pixel corresponding(Pixel signal) const noexcept {
    if (mapping == StripMapping::MirrorX) return {std::int32_t(width) - 1 - signal.x, signal.y};
    return signal;
  }

  /// Displacement b - a, taken as the minimal image on a torus when wrapping.
  std::pair<std::int64_t, std::int64_t> displacement(Pixel a, Pixel b) const noexcept {
    std::int64_t dx = std::int64_t(b.x) - a.x;
    std::int64_t dy = std::int64_t(b.y) - a.y;
    if (boundary == BoundaryPolicy::Wrap) {
      const std::int64_t w = width, h = height;
      dx = ((dx % w) + w) % w;
      dy = ((dy % h) + h) % h;
      if (2 * dx > w) dx -= w;
      if (2 * dy > h) dy -= h;
    }
    return {dx, dy};
  }
};

/// Detection area around a corresponding point: the largest lattice disc
/// (dx^2 + dy^2 <= k) holding at most m_d pixels, or in one-dimensional mode
/// the row segment |dx| <= h with 2h + 1 <= m_d. The nominal radius
/// sqrt(m_d / pi) (half-length m_d / 2) is met exactly when m_d is a lattice
/// count, see effective_detection_area.
class DetectionArea {
 public:
  DetectionArea() = default;
  DetectionArea(double m_d, bool one_dim) : m_d_(m_d), one_dim_(one_dim) {
    if (!(m_d >= 0.0)) throw ParameterError("detection area must be non-negative");
    if (m_d < 1.0) return;
    if (one_dim) {
      limit_ = std::int64_t(std::floor((m_d - 1.0) / 2.0));
      pixels_ = std::uint64_t(2 * limit_ + 1);
      return;
    }
    // Any disc with at most m_d points has radius below sqrt(m_d) + 1.
    const auto r = std::int64_t(std::ceil(std::sqrt(m_d))) + 1;
    std::vector<std::int64_t> d2;
    for (std::int64_t dx = -r; dx <= r; ++dx)
      for (std::int64_t dy = -r; dy <= r; ++dy)
        if (dx * dx + dy * dy <= r * r) d2.push_back(dx * dx + dy * dy);
    std::sort(d2.begin(), d2.end());
    std::size_t n = 0;
    while (n < d2.size()) {
      std::size_t next = n;
      while (next < d2.size() && d2[next] == d2[n]) ++next;
      if (double(next) > m_d) break;
      limit_ = d2[n];
      n = next;
    }
    pixels_ = n;
  }

  double m_d() const noexcept { return m_d_; }
  bool one_dim() const noexcept { return one_dim_; }
  /// Number of lattice pixels inside the area (on an unbounded lattice).
  std::uint64_t lattice_pixels() const noexcept { return pixels_; }

  bool contains(std::int64_t dx, std::int64_t dy) const noexcept {
    if (limit_ < 0) return false;
    if (one_dim_) return dy == 0 && std::llabs(dx) <= limit_;
    return dx * dx + dy * dy <= limit_;
  }

 private:
  double m_d_ = 0.0;
  bool one_dim_ = false;
  std::int64_t limit_ = -1;
  std::uint64_t pixels_ = 0;
};

/// Largest detection area the strip can hold without wrapping onto itself.
inline double max_detection_area(const StripGeometry& g) {
  if (g.one_dim) return double(g.width);
  const double r = 0.5 * double(std::min(g.width, g.height));
  return std::numbers::pi * r * r;
}

/// Pixel count of the area induced by m_d; the model is evaluated at this
/// value so that model and histograms refer to the same number of pixels.
/// Idempotent.
inline double effective_detection_area(double m_d, const StripGeometry& g) {
  return double(DetectionArea(m_d, g.one_dim).lattice_pixels());
}

struct Frame {
  std::uint64_t frame_id = 0;
  std::vector<Pixel> signal;
  std::vector<Pixel> idler;
};

struct PairingResult {
  std::size_t paired = 0;
  std::size_t unpaired_signal = 0;
  std::size_t unpaired_idler = 0;
  std::vector<std::pair<Pixel, Pixel>> pair_list;
  /// Unpaired counts lying inside the detection areas around paired counts.
  std::size_t reduced_signal = 0;
  std::size_t reduced_idler = 0;
};

// ---------------------------------------------------------------------------
// Frame generation

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;
}

inline double standard_normal(std::mt19937_64& rng) {
  // Box-Muller; one variate per call keeps the stream layout simple.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::size_t sample_cdf(const std::vector<double>& cdf, double u) {
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(std::size_t(it - cdf.begin()), cdf.size() - 1);
}

inline std::vector<double> cumulative(const CountDist& d) {
  std::vector<double> cdf(d.size());
  double acc = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) cdf[n] = acc += d[n];
  cdf.back() = std::max(cdf.back(), 1.0);
  return cdf;
}

inline std::mt19937_64 frame_stream(std::uint64_t seed, std::uint64_t frame_id) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(frame_id),
                    std::uint32_t(frame_id >> 32), 0x7470u};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Samples frames for one parameter set. Each frame draws from its own random
/// stream derived from (seed, frame_id), so ensembles do not depend on the
/// order or the thread in which frames are generated.
class FrameGenerator {
 public:
  FrameGenerator(const TwinBeamParams& beam, const DetectorParams& det,
                 const CorrelationProfile& profile, const StripGeometry& geometry)
      : det_(det), profile_(profile), geometry_(geometry) {
    beam.validate();
    det.validate();
    profile.validate();
    geometry.validate();
    if (geometry.pixels() != det.pixels)
      throw ParameterError("geometry width*height (" + std::to_string(geometry.pixels()) +
                           ") differs from detector.pixels (" + std::to_string(det.pixels) + ")");
    paired_cdf_ = detail::cumulative(component_dist(beam.paired));
    noise_signal_cdf_ = detail::cumulative(component_dist(beam.noise_signal));
    noise_idler_cdf_ = detail::cumulative(component_dist(beam.noise_idler));
    dark_signal_cdf_ = dark_cdf(det.dark_signal);
    dark_idler_cdf_ = dark_cdf(det.dark_idler);
  }

  const StripGeometry& geometry() const noexcept { return geometry_; }

  Frame operator()(std::uint64_t seed, std::uint64_t frame_id) const {
    auto rng = detail::frame_stream(seed, frame_id);
    Frame f;
    f.frame_id = frame_id;

    const std::size_t pairs = detail::sample_cdf(paired_cdf_, detail::uniform01(rng));
    for (std::size_t k = 0; k < pairs; ++k) {
      const Pixel s = uniform_pixel(rng);
      const auto [dx, dy] = offset(rng);
      const bool det_s = detail::uniform01(rng) < det_.eta_signal;
      const bool det_i = detail::uniform01(rng) < det_.eta_idler;
      if (det_s) f.signal.push_back(s);
      const Pixel c = geometry_.corresponding(s);
      if (auto i = place({c.x + dx, c.y + dy}); i && det_i) f.idler.push_back(*i);
    }
    add_noise(rng, noise_signal_cdf_, det_.eta_signal, f.signal);
    add_noise(rng, noise_idler_cdf_, det_.eta_idler, f.idler);
    add_dark(rng, dark_signal_cdf_, f.signal);
    add_dark(rng, dark_idler_cdf_, f.idler);
    for (auto* strip : {&f.signal, &f.idler}) {
      std::sort(strip->begin(), strip->end());
      strip->erase(std::unique(strip->begin(), strip->end()), strip->end());
    }
    return f;
  }

 private:
  std::vector<double> dark_cdf(double dark) const {
    std::vector<double> p;
    double tail = 1.0;
    for (std::size_t k = 0; k <= det_.pixels; ++k) {
      const double v = binomial_thin(k, std::size_t(det_.pixels), dark);
      p.push_back(v);
      tail -= v;
      if (tail < 1e-15) break;
    }
    return detail::cumulative(CountDist(std::move(p)));
  }

  Pixel uniform_pixel(std::mt19937_64& rng) const {
    const auto x = std::int32_t(detail::uniform01(rng) * geometry_.width);
    const auto y = std::int32_t(detail::uniform01(rng) * geometry_.height);
    return {x, y};
  }

  std::pair<std::int32_t, std::int32_t> offset(std::mt19937_64& rng) const {
    const double m_c = profile_.extent;
    switch (profile_.kind) {
      case ProfileKind::Gaussian2D: {
        // t ~ exp(-rho^2 / R^2) with pi R^2 = m_c: each axis has sigma R / sqrt(2).
        const double sigma = std::sqrt(m_c / std::numbers::pi / 2.0);
        const double dx = sigma * detail::standard_normal(rng);
        const double dy = sigma * detail::standard_normal(rng);
        return {std::int32_t(std::lround(dx)), std::int32_t(std::lround(dy))};
      }
      case ProfileKind::Flat: {
        const double radius = std::sqrt(m_c / std::numbers::pi);
        const double rho = radius * std::sqrt(detail::uniform01(rng));
        const double phi = 2.0 * std::numbers::pi * detail::uniform01(rng);
        return {std::int32_t(std::lround(rho * std::cos(phi))),
                std::int32_t(std::lround(rho * std::sin(phi)))};
      }
      case ProfileKind::Gaussian1D: {
        // t_x ~ exp(-dx^2 / X^2) with 2X = m_c.
        const double sigma = m_c / 2.0 / std::numbers::sqrt2;
        return {std::int32_t(std::lround(sigma * detail::standard_normal(rng))), 0};
      }
    }
    return {0, 0};
  }

  std::optional<Pixel> place(Pixel p) const {
    if (geometry_.contains(p)) return p;
    const std::int32_t w = std::int32_t(geometry_.width), h = std::int32_t(geometry_.height);
    switch (geometry_.boundary) {
      case BoundaryPolicy::Wrap:
        return Pixel{((p.x % w) + w) % w, ((p.y % h) + h) % h};
      case BoundaryPolicy::Clip:
        return Pixel{std::clamp(p.x, 0, w - 1), std::clamp(p.y, 0, h - 1)};
      case BoundaryPolicy::Discard:
        return std::nullopt;
    }
    return std::nullopt;
  }

  void add_noise(std::mt19937_64& rng, const std::vector<double>& cdf, double eta,
                 std::vector<Pixel>& strip) const {
    const std::size_t n = detail::sample_cdf(cdf, detail::uniform01(rng));
    for (std::size_t k = 0; k < n; ++k) {
      const Pixel p = uniform_pixel(rng);
      if (detail::uniform01(rng) < eta) strip.push_back(p);
    }
  }

  void add_dark(std::mt19937_64& rng, const std::vector<double>& cdf,
                std::vector<Pixel>& strip) const {
    const std::size_t n = detail::sample_cdf(cdf, detail::uniform01(rng));
    std::vector<Pixel> fired;
    while (fired.size() < n) {
      const Pixel p = uniform_pixel(rng);
      if (std::find(fired.begin(), fired.end(), p) == fired.end()) fired.push_back(p);
    }
    strip.insert(strip.end(), fired.begin(), fired.end());
  }

  DetectorParams det_;
  CorrelationProfile profile_;
  StripGeometry geometry_;
  std::vector<double> paired_cdf_, noise_signal_cdf_, noise_idler_cdf_;
  std::vector<double> dark_signal_cdf_, dark_idler_cdf_;
};

inline Frame generate_frame(const TwinBeamParams& beam, const DetectorParams& det,
                            const CorrelationProfile& profile, const StripGeometry& geometry,
                            std::uint64_t seed, std::uint64_t frame_id = 0) {
  return FrameGenerator(beam, det, profile, geometry)(seed, frame_id);
}

/// Frames 0..count-1 of one ensemble, generated on up to `threads` workers.
inline std::vector<Frame> generate_frames(const FrameGenerator& gen, std::uint64_t seed,
                                          std::uint64_t count, unsigned threads = 1) {
  std::vector<Frame> frames(count);
  threads = std::max(1u, std::min<unsigned>(threads, unsigned(std::max<std::uint64_t>(count, 1))));
  auto work = [&](unsigned t) {
    for (std::uint64_t k = t; k < count; k += threads) frames[k] = gen(seed, k);
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work, t);
  work(0);
  for (auto& th : pool) th.join();
  return frames;
}

// ---------------------------------------------------------------------------
// Pairing

/// All (signal, idler) candidate pairs of a frame, nearest first. Ties are
/// broken lexicographically on signal then idler coordinates.
class FrameCandidates {
 public:
  FrameCandidates(const Frame& frame, const StripGeometry& geometry, double max_m_d)
      : FrameCandidates(frame, geometry, DetectionArea(max_m_d, geometry.one_dim)) {}

  FrameCandidates(const Frame& frame, const StripGeometry& geometry, const DetectionArea& widest)
      : frame_(&frame), geometry_(geometry) {
    for (std::uint32_t s = 0; s < frame.signal.size(); ++s) {
      const Pixel c = geometry.corresponding(frame.signal[s]);
      for (std::uint32_t i = 0; i < frame.idler.size(); ++i) {
        const auto [dx, dy] = geometry.displacement(c, frame.idler[i]);
        if (!widest.contains(dx, dy)) continue;
        candidates_.push_back({dx * dx + dy * dy, s, i, dx, dy});
      }
    }
    std::sort(candidates_.begin(), candidates_.end(), [&](const Candidate& a, const Candidate& b) {
      return std::tie(a.dist2, frame.signal[a.s], frame.idler[a.i]) <
             std::tie(b.dist2, frame.signal[b.s], frame.idler[b.i]);
    });
  }

  PairingResult pair(double m_d) const { return pair(DetectionArea(m_d, geometry_.one_dim)); }

  /// Greedy one-to-one matching inside the given detection area.
  PairingResult pair(const DetectionArea& area) const {
    const Frame& f = *frame_;
    std::vector<char> used_s(f.signal.size(), 0), used_i(f.idler.size(), 0);
    PairingResult r;
    for (const auto& c : candidates_) {
      if (!area.contains(c.dx, c.dy)) continue;
      if (used_s[c.s] || used_i[c.i]) continue;
      used_s[c.s] = used_i[c.i] = 1;
      r.pair_list.emplace_back(f.signal[c.s], f.idler[c.i]);
    }
    r.paired = r.pair_list.size();
    r.unpaired_signal = f.signal.size() - r.paired;
    r.unpaired_idler = f.idler.size() - r.paired;
    // Unpaired counts near identified pairs: signal side around the paired
    // signal counts, idler side around their corresponding points.
    for (std::size_t s = 0; s < f.signal.size(); ++s) {
      if (used_s[s]) continue;
      for (const auto& [ps, pi] : r.pair_list) {
        const auto [dx, dy] = geometry_.displacement(ps, f.signal[s]);
        if (area.contains(dx, dy)) {
          ++r.reduced_signal;
          break;
        }
      }
    }
    for (std::size_t i = 0; i < f.idler.size(); ++i) {
      if (used_i[i]) continue;
      for (const auto& [ps, pi] : r.pair_list) {
        const auto [dx, dy] = geometry_.displacement(geometry_.corresponding(ps), f.idler[i]);
        if (area.contains(dx, dy)) {
          ++r.reduced_idler;
          break;
        }
      }
    }
    return r;
  }

 private:
  struct Candidate {
    std::int64_t dist2;
    std::uint32_t s, i;
    std::int64_t dx, dy;
  };
  const Frame* frame_;
  StripGeometry geometry_;
  std::vector<Candidate> candidates_;
};

inline PairingResult pair_counts(const Frame& frame, double m_d, const StripGeometry& geometry) {
  return FrameCandidates(frame, geometry, m_d).pair(m_d);
}

// ---------------------------------------------------------------------------
// Histograms

/// Dense frame-count table over (c_p, d_s, d_i).
class CountCube {
 public:
  CountCube() = default;

  void add(std::size_t p, std::size_t s, std::size_t i, double w = 1.0) {
    if (p >= dp_ || s >= ds_ || i >= di_)
      grow(std::max(dp_, p + 1), std::max(ds_, s + 1), std::max(di_, i + 1));
    data_[index(p, s, i)] += w;
  }

  void merge(const CountCube& other, double w = 1.0) {
    if (other.dp_ > dp_ || other.ds_ > ds_ || other.di_ > di_)
      grow(std::max(dp_, other.dp_), std::max(ds_, other.ds_), std::max(di_, other.di_));
    for (std::size_t p = 0; p < other.dp_; ++p)
      for (std::size_t s = 0; s < other.ds_; ++s)
        for (std::size_t i = 0; i < other.di_; ++i)
          data_[index(p, s, i)] += w * other.data_[other.index(p, s, i)];
  }

  double operator()(std::size_t p, std::size_t s, std::size_t i) const noexcept {
    return (p < dp_ && s < ds_ && i < di_) ? data_[index(p, s, i)] : 0.0;
  }

  std::size_t pairs_extent() const noexcept { return dp_; }
  std::size_t signal_extent() const noexcept { return ds_; }
  std::size_t idler_extent() const noexcept { return di_; }

  double total() const noexcept {
    double t = 0.0;
    for (double v : data_) t += v;
    return t;
  }

  template <class F>
  void for_each(F&& f) const {
    for (std::size_t p = 0; p < dp_; ++p)
      for (std::size_t s = 0; s < ds_; ++s)
        for (std::size_t i = 0; i < di_; ++i)
          if (const double v = data_[index(p, s, i)]; v != 0.0) f(p, s, i, v);
  }

 private:
  std::size_t index(std::size_t p, std::size_t s, std::size_t i) const noexcept {
    return (p * ds_ + s) * di_ + i;
  }

  void grow(std::size_t dp, std::size_t ds, std::size_t di) {
    std::vector<double> next(dp * ds * di, 0.0);
    for (std::size_t p = 0; p < dp_; ++p)
      for (std::size_t s = 0; s < ds_; ++s)
        for (std::size_t i = 0; i < di_; ++i)
          next[(p * ds + s) * di + i] = data_[index(p, s, i)];
    data_.swap(next);
    dp_ = dp;
    ds_ = ds;
    di_ = di;
  }

  std::size_t dp_ = 0, ds_ = 0, di_ = 0;
  std::vector<double> data_;
};

/// Histograms of one detection-area size, kept per contiguous block of frames
/// so that errors can be estimated by resampling blocks.
class HistogramSet {
 public:
  HistogramSet() = default;
  HistogramSet(double m_d, std::size_t blocks) : m_d_(m_d), full_(blocks), reduced_(blocks) {}

  double m_d() const noexcept { return m_d_; }
  std::size_t blocks() const noexcept { return full_.size(); }

  void record(std::size_t block, const PairingResult& r, bool reduced = true) {
    full_.at(block).add(r.paired, r.unpaired_signal, r.unpaired_idler);
    if (reduced) reduced_.at(block).add(r.paired, r.reduced_signal, r.reduced_idler);
  }

  CountCube& full_block(std::size_t b) { return full_.at(b); }
  CountCube& reduced_block(std::size_t b) { return reduced_.at(b); }
  const CountCube& full_block(std::size_t b) const { return full_.at(b); }
  const CountCube& reduced_block(std::size_t b) const { return reduced_.at(b); }

  void merge(const HistogramSet& other) {
    if (other.blocks() != blocks()) throw ParameterError("histogram block counts differ");
    for (std::size_t b = 0; b < blocks(); ++b) {
      full_[b].merge(other.full_[b]);
      reduced_[b].merge(other.reduced_[b]);
    }
  }

  /// Single-block set with block b counted weights[b] times.
  HistogramSet weighted(std::span<const double> weights) const {
    HistogramSet out(m_d_, 1);
    for (std::size_t b = 0; b < blocks(); ++b) {
      if (weights[b] == 0.0) continue;
      out.full_[0].merge(full_[b], weights[b]);
      out.reduced_[0].merge(reduced_[b], weights[b]);
    }
    return out;
  }

  CountCube full() const {
    CountCube c;
    for (const auto& b : full_) c.merge(b);
    return c;
  }
  CountCube reduced() const {
    CountCube c;
    for (const auto& b : reduced_) c.merge(b);
    return c;
  }

  double frames() const { return full().total(); }

  /// Frame counts over (c_s, c_i) = (c_p + d_s, c_p + d_i).
  JointCountDist joint_counts() const {
    const auto c = full();
    JointCountDist out(c.pairs_extent() + c.signal_extent(), c.pairs_extent() + c.idler_extent());
    c.for_each([&](auto p, auto s, auto i, double v) { out.at(p + s, p + i) += v; });
    return out;
  }
  CountDist paired_counts() const {
    const auto c = full();
    std::vector<double> out(std::max<std::size_t>(c.pairs_extent(), 1), 0.0);
    c.for_each([&](auto p, auto, auto, double v) { out[p] += v; });
    return CountDist(std::move(out));
  }
  JointCountDist unpaired_counts() const { return project(full(), std::nullopt); }
  JointCountDist conditional_unpaired_counts(std::size_t c_p) const { return project(full(), c_p); }
  JointCountDist reduced_unpaired_counts() const { return project(reduced(), std::nullopt); }
  JointCountDist reduced_conditional_counts(std::size_t c_p) const { return project(reduced(), c_p); }

  /// Normalized versions (divided by the number of frames in the family).
  JointCountDist joint() const { return normalized(joint_counts()); }
  CountDist paired() const {
    auto c = paired_counts();
    const double t = c.mass();
    std::vector<double> p(c.probs().begin(), c.probs().end());
    for (auto& v : p) v /= t;
    return CountDist(std::move(p));
  }
  JointCountDist unpaired_joint() const { return normalized(unpaired_counts()); }
  JointCountDist reduced_unpaired_joint() const { return normalized(reduced_unpaired_counts()); }
  std::optional<JointCountDist> conditional_unpaired(std::size_t c_p) const {
    auto c = conditional_unpaired_counts(c_p);
    if (c.mass() <= 0.0) return std::nullopt;
    return normalized(c);
  }

 private:
  static JointCountDist project(const CountCube& c, std::optional<std::size_t> only_pairs) {
    JointCountDist out(c.signal_extent(), c.idler_extent());
    c.for_each([&](auto p, auto s, auto i, double v) {
      if (!only_pairs || *only_pairs == p) out.at(s, i) += v;
    });
    return out;
  }
  static JointCountDist normalized(const JointCountDist& counts) {
    const double t = counts.mass();
    JointCountDist out(counts.rows(), counts.cols());
    if (t <= 0.0) return out;
    for (std::size_t s = 0; s < counts.rows(); ++s)
      for (std::size_t i = 0; i < counts.cols(); ++i) out.at(s, i) = counts(s, i) / t;
    return out;
  }

  double m_d_ = 0.0;
  std::vector<CountCube> full_;
  std::vector<CountCube> reduced_;
};

/// Runs the pairing on every frame for every m_d of the grid. Frames are split
/// into `blocks` contiguous blocks; results do not depend on `threads`. The
/// reduced tables stay empty unless `reduced` is set.
inline std::vector<HistogramSet> sweep_and_accumulate(std::span<const Frame> frames,
                                                      std::span<const double> m_d_grid,
                                                      const StripGeometry& geometry,
                                                      bool reduced = true,
                                                      std::size_t blocks = 20,
                                                      unsigned threads = 1) {
  if (frames.empty()) throw ParameterError("empty frame source");
  if (m_d_grid.empty()) throw ParameterError("empty detection-area grid");
  blocks = std::max<std::size_t>(1, std::min<std::size_t>(blocks, frames.size()));
  std::vector<DetectionArea> areas;
  for (double m : m_d_grid) areas.emplace_back(m, geometry.one_dim);
  const DetectionArea widest(*std::max_element(m_d_grid.begin(), m_d_grid.end()), geometry.one_dim);
  threads = std::max(1u, std::min<unsigned>(threads, unsigned(frames.size())));

  auto make_sets = [&] {
    std::vector<HistogramSet> sets;
    for (double m : m_d_grid) sets.emplace_back(m, blocks);
    return sets;
  };
  // Each worker owns a contiguous range of frames; integer counts make the
  // merge order irrelevant.
  std::vector<std::vector<HistogramSet>> partial(threads);
  auto work = [&](unsigned t) {
    auto sets = make_sets();
    const std::size_t lo = frames.size() * t / threads, hi = frames.size() * (t + 1) / threads;
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t block = k * blocks / frames.size();
      const FrameCandidates cand(frames[k], geometry, widest);
      for (std::size_t g = 0; g < m_d_grid.size(); ++g) sets[g].record(block, cand.pair(areas[g]), reduced);
    }
    partial[t] = std::move(sets);
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work, t);
  work(0);
  for (auto& th : pool) th.join();

  auto out = std::move(partial[0]);
  for (unsigned t = 1; t < threads; ++t)
    for (std::size_t g = 0; g < out.size(); ++g) out[g].merge(partial[t][g]);
  return out;
}

}  // namespace twinpair
