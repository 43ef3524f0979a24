#pragma once

// Experimental pipeline on pairing histograms: accidental-pair estimate from
// unpaired counts, covariance zero crossing, genuine-pair curve, correlation
// profile by differentiation, Gaussian extent fit and Klyshko efficiencies,
// with block-bootstrap errors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "twinpair/composite.hpp"
#include "twinpair/count_dist.hpp"
#include "twinpair/detection.hpp"
#include "twinpair/errors.hpp"
#include "twinpair/pairing.hpp"
#include "twinpair/simulator.hpp"

namespace twinpair {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SweepCurves {
  std::vector<double> m_d_grid;
  std::vector<double> mean_pairs;    // <c_p>
  std::vector<double> mean_acc;      // <c_p>^acc,exp
  std::vector<double> mean_genuine;  // <c_p>^reg,exp
  std::vector<double> rel_var_pairs;
  std::vector<double> mean_unpaired_s, mean_unpaired_i;
  std::vector<double> cov_unpaired;  // C_dd
  std::map<std::size_t, std::vector<double>> cov_unpaired_conditional;
  std::vector<double> klyshko_s, klyshko_i;          // <c_p> / <c_i>, <c_p> / <c_s>
  std::vector<double> klyshko_reg_s, klyshko_reg_i;  // genuine pairs only
  std::vector<double> reduced_mean_s, reduced_mean_i, reduced_cov;

  /// Every curve under a stable file-friendly name.
  std::vector<std::pair<std::string, const std::vector<double>*>> named() const {
    std::vector<std::pair<std::string, const std::vector<double>*>> out = {
        {"mean_pairs", &mean_pairs},
        {"mean_acc", &mean_acc},
        {"mean_genuine", &mean_genuine},
        {"rel_var_pairs", &rel_var_pairs},
        {"mean_unpaired_s", &mean_unpaired_s},
        {"mean_unpaired_i", &mean_unpaired_i},
        {"cov_unpaired", &cov_unpaired},
        {"klyshko_s", &klyshko_s},
        {"klyshko_i", &klyshko_i},
        {"klyshko_reg_s", &klyshko_reg_s},
        {"klyshko_reg_i", &klyshko_reg_i},
        {"reduced_mean_s", &reduced_mean_s},
        {"reduced_mean_i", &reduced_mean_i},
        {"reduced_cov", &reduced_cov},
    };
    for (const auto& [c_p, v] : cov_unpaired_conditional)
      out.emplace_back("cov_unpaired_cp" + std::to_string(c_p), &v);
    return out;
  }
};

struct ProfileEstimate {
  std::vector<double> m_d_grid;
  std::vector<double> t_app;
  double fitted_extent = kNaN;
  double m_d0 = kNaN;
  double fit_residual = kNaN;
  double integral = kNaN;  // trapezoid of t_app over the grid
};

// ---------------------------------------------------------------------------
// Elementary operations

/// Accidental pairs expected at m_d from unpaired counts recorded at a fixed
/// reference extent.
inline CountDist estimate_accidental_from_data(const JointCountDist& unpaired, double m_d,
                                               std::uint64_t pixels, PairingModel model) {
  if (unpaired.rows() == 0 || unpaired.cols() == 0 || !(unpaired.mass() > 0.0))
    throw AnalysisError("empty unpaired-count histogram");
  return accidental_pair_dist(unpaired, m_d, pixels, model).pair_dist;
}

/// First positive-to-negative crossing, linearly interpolated.
inline double find_md0(std::span<const double> m_d, std::span<const double> cov) {
  if (m_d.size() != cov.size()) throw AnalysisError("grid and curve lengths differ");
  for (std::size_t k = 0; k + 1 < m_d.size(); ++k) {
    const double a = cov[k], b = cov[k + 1];
    if (std::isnan(a) || std::isnan(b)) continue;
    if (a > 0.0 && b <= 0.0) {
      if (b == 0.0) return m_d[k + 1];
      return m_d[k] + (m_d[k + 1] - m_d[k]) * a / (a - b);
    }
  }
  throw AnalysisError("correlated area not resolved on grid");
}

/// Genuine pairs normalized to their value at the normalization extent
/// (taken from the grid, interpolated linearly when off-grid).
inline std::vector<double> genuine_curve(const SweepCurves& sweep, double normalize_at) {
  const auto& g = sweep.m_d_grid;
  if (g.empty()) throw AnalysisError("empty sweep");
  if (normalize_at < g.front() || normalize_at > g.back())
    throw AnalysisError("normalization extent outside the grid");
  std::vector<double> genuine(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) genuine[k] = sweep.mean_pairs[k] - sweep.mean_acc[k];
  const auto hi = std::size_t(std::lower_bound(g.begin(), g.end(), normalize_at) - g.begin());
  double ref = genuine[hi];
  if (g[hi] != normalize_at) {
    const double w = (normalize_at - g[hi - 1]) / (g[hi] - g[hi - 1]);
    ref = (1.0 - w) * genuine[hi - 1] + w * genuine[hi];
  }
  if (!(ref > 0.0)) throw AnalysisError("no genuine pairs at the normalization extent");
  for (auto& v : genuine) v /= ref;
  return genuine;
}

/// Derivative of the normalized genuine curve: central differences inside the
/// grid, one-sided at its ends. `smoothing` > 0 averages over a symmetric
/// window of that half-width (in grid points) afterwards.
inline ProfileEstimate profile_from_curve(std::span<const double> m_d, std::span<const double> curve,
                                          std::size_t smoothing = 0) {
  const std::size_t n = m_d.size();
  if (n < 3) throw AnalysisError("profile needs at least 3 grid points");
  if (curve.size() != n) throw AnalysisError("grid and curve lengths differ");
  ProfileEstimate out;
  out.m_d_grid.assign(m_d.begin(), m_d.end());
  out.t_app.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t lo = k == 0 ? 0 : k - 1, hi = k + 1 == n ? k : k + 1;
    out.t_app[k] = (curve[hi] - curve[lo]) / (m_d[hi] - m_d[lo]);
  }
  if (smoothing > 0) {
    std::vector<double> s(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t lo = k >= smoothing ? k - smoothing : 0;
      const std::size_t hi = std::min(n - 1, k + smoothing);
      double acc = 0.0;
      for (std::size_t j = lo; j <= hi; ++j) acc += out.t_app[j];
      s[k] = acc / double(hi - lo + 1);
    }
    out.t_app = std::move(s);
  }
  out.integral = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k)
    out.integral += 0.5 * (out.t_app[k] + out.t_app[k + 1]) * (m_d[k + 1] - m_d[k]);
  return out;
}

/// Normalized genuine-pair curve of a profile with extent m_c: the coverage
/// probability of a detection area of m_d pixels.
inline double gaussian_curve(double m_d, double m_c, ProfileKind kind) {
  if (kind == ProfileKind::Gaussian1D) return std::erf(m_d / m_c);
  if (kind == ProfileKind::Flat) return std::min(m_d / m_c, 1.0);
  return -std::expm1(-m_d / m_c);
}

inline double gaussian_profile(double m_d, double m_c, ProfileKind kind) {
  if (kind == ProfileKind::Gaussian1D)
    return 2.0 / (std::sqrt(std::numbers::pi) * m_c) * std::exp(-(m_d * m_d) / (m_c * m_c));
  if (kind == ProfileKind::Flat) return m_d < m_c ? 1.0 / m_c : 0.0;
  return std::exp(-m_d / m_c) / m_c;
}

struct ExtentFit {
  double m_c = kNaN;
  double residual = kNaN;  // RMS deviation over the fit window
  std::size_t points = 0;
};

/// One-parameter least squares of the profile's coverage curve to a
/// normalized genuine curve over m_d <= window: logarithmic scan, golden
/// section inside the best bracket, then one parabolic step.
inline ExtentFit fit_gaussian_extent(std::span<const double> m_d, std::span<const double> curve,
                                     ProfileKind kind, double window) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t k = 0; k < m_d.size(); ++k)
    if (m_d[k] <= window && std::isfinite(curve[k])) pts.emplace_back(m_d[k], curve[k]);
  if (pts.size() < 2) throw AnalysisError("fewer than 2 points inside the fit window");
  auto sse = [&](double m_c) {
    double s = 0.0;
    for (const auto& [x, y] : pts) {
      const double r = gaussian_curve(x, m_c, kind) - y;
      s += r * r;
    }
    return s;
  };

  const double lo = pts.front().first * 1e-2, hi = pts.back().first * 1e2;
  constexpr int kScan = 241;
  std::vector<double> xs(kScan), fs(kScan);
  std::size_t best = 0;
  for (int k = 0; k < kScan; ++k) {
    xs[k] = lo * std::pow(hi / lo, double(k) / (kScan - 1));
    fs[k] = sse(xs[k]);
    if (fs[k] < fs[best]) best = std::size_t(k);
  }
  if (best == 0 || best + 1 == std::size_t(kScan)) {
    std::ostringstream trace;
    trace << "extent fit did not converge; scan minimum at boundary m_c=" << xs[best]
          << " (scan " << lo << ".." << hi << ", sse " << fs[best] << ")";
    throw AnalysisError(trace.str());
  }

  double a = xs[best - 1], b = xs[best + 1];
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = sse(c), fd = sse(d);
  for (int it = 0; it < 200 && (b - a) > 1e-10 * (a + b); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = sse(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = sse(d);
    }
  }
  double x = 0.5 * (a + b), fx = sse(x);
  // Parabola through the last bracket; kept only if it improves the sum.
  {
    const double h = std::max(1e-6 * x, b - a);
    const double x0 = x - h, x2 = x + h, f0 = sse(x0), f2 = sse(x2);
    const double denom = f0 - 2.0 * fx + f2;
    if (denom > 0.0) {
      const double xp = x + 0.5 * h * (f0 - f2) / denom;
      if (xp > 0.0) {
        const double fp = sse(xp);
        if (fp < fx) {
          x = xp;
          fx = fp;
        }
      }
    }
  }
  return {x, std::sqrt(fx / double(pts.size())), pts.size()};
}

/// Klyshko ratios: eta_s = <c_p>/<c_i>, eta_i = <c_p>/<c_s>.
inline std::pair<std::vector<double>, std::vector<double>> klyshko_efficiency(
    std::span<const double> mean_pairs, double mean_counts_i, double mean_counts_s) {
  if (!(mean_counts_i > 0.0) || !(mean_counts_s > 0.0))
    throw AnalysisError("zero mean count in a strip");
  std::vector<double> s(mean_pairs.size()), i(mean_pairs.size());
  for (std::size_t k = 0; k < mean_pairs.size(); ++k) {
    s[k] = mean_pairs[k] / mean_counts_i;
    i[k] = mean_pairs[k] / mean_counts_s;
  }
  return {s, i};
}

/// Linear interpolation of a grid curve (clamped to the grid ends).
inline double interpolate(std::span<const double> m_d, std::span<const double> v, double x) {
  if (m_d.empty()) return kNaN;
  if (x <= m_d.front()) return v.front();
  if (x >= m_d.back()) return v.back();
  const auto hi = std::size_t(std::lower_bound(m_d.begin(), m_d.end(), x) - m_d.begin());
  const double w = (x - m_d[hi - 1]) / (m_d[hi] - m_d[hi - 1]);
  return (1.0 - w) * v[hi - 1] + w * v[hi];
}

// ---------------------------------------------------------------------------
// Full pipeline

struct AnalysisOptions {
  std::uint64_t pixels = 6500;
  PairingModel model = PairingModel::Refined;
  ProfileKind kind = ProfileKind::Gaussian2D;
  std::optional<double> md0;           // default: covariance zero crossing
  std::optional<double> normalize_at;  // default: largest grid extent
  double fit_window_factor = 2.0;      // fit over m_d <= factor * m_d^0
  std::size_t smoothing = 0;
  std::vector<std::size_t> conditional_pairs = {0, 1, 2};
  std::size_t replicates = 200;
  std::uint64_t seed = 1;
};

struct AnalysisResult {
  SweepCurves curves;
  ProfileEstimate profile;
  std::vector<double> genuine_normalized;
  double normalize_at = kNaN;
  bool genuine_decreasing_at_norm = false;
  std::map<std::string, double> scalars;
};

struct AnalysisReport {
  AnalysisResult value;
  /// Bootstrap standard errors, keyed like the curves / scalars of `value`.
  std::map<std::string, std::vector<double>> curve_errors;
  std::map<std::string, double> scalar_errors;
  std::size_t replicates_used = 0;
  std::size_t replicates_failed = 0;
};

namespace detail {

inline JointCountDist blend(const JointCountDist& a, const JointCountDist& b, double w) {
  JointCountDist out(std::max(a.rows(), b.rows()), std::max(a.cols(), b.cols()));
  for (std::size_t s = 0; s < out.rows(); ++s)
    for (std::size_t i = 0; i < out.cols(); ++i) out.at(s, i) = (1.0 - w) * a(s, i) + w * b(s, i);
  return out;
}

/// Pairing tables per grid point, built once for the largest histogram extent.
class TableCache {
 public:
  TableCache(std::span<const double> grid, std::size_t rows, std::size_t cols,
             std::uint64_t pixels, PairingModel model) {
    for (double m : grid) tables_.emplace_back(rows, cols, m, pixels, model);
  }
  const PairingTable& operator[](std::size_t k) const { return tables_[k]; }

 private:
  std::vector<PairingTable> tables_;
};

inline AnalysisResult analyze_merged(const std::vector<HistogramSet>& sets,
                                     const AnalysisOptions& opt, const TableCache& tables) {
  AnalysisResult r;
  auto& c = r.curves;
  const std::size_t n = sets.size();
  std::vector<JointCountDist> unpaired(n);
  for (const auto& h : sets) c.m_d_grid.push_back(h.m_d());

  const auto joint = sets.front().joint();
  const auto global = scalar_stats(joint);
  r.scalars["mean_s"] = global.mean_s;
  r.scalars["mean_i"] = global.mean_i;
  r.scalars["C"] = global.covariance;
  r.scalars["R"] = global.sub_shot_noise;

  for (auto cp : opt.conditional_pairs) c.cov_unpaired_conditional[cp];
  for (std::size_t k = 0; k < n; ++k) {
    const auto p = sets[k].paired();
    unpaired[k] = sets[k].unpaired_joint();
    const auto m = unpaired[k].moments();
    c.mean_pairs.push_back(p.mean());
    c.rel_var_pairs.push_back(p.relative_variance());
    c.mean_unpaired_s.push_back(m.mean_s);
    c.mean_unpaired_i.push_back(m.mean_i);
    c.cov_unpaired.push_back(covariance_coefficient(m));
    for (auto& [cp, v] : c.cov_unpaired_conditional) {
      const auto cond = sets[k].conditional_unpaired(cp);
      v.push_back(cond ? covariance_coefficient(cond->moments()) : kNaN);
    }
    const auto red = sets[k].reduced_unpaired_joint().moments();
    c.reduced_mean_s.push_back(red.mean_s);
    c.reduced_mean_i.push_back(red.mean_i);
    c.reduced_cov.push_back(covariance_coefficient(red));
  }
  std::tie(c.klyshko_s, c.klyshko_i) =
      klyshko_efficiency(c.mean_pairs, global.mean_i, global.mean_s);

  const double md0 = opt.md0 ? *opt.md0 : find_md0(c.m_d_grid, c.cov_unpaired);
  r.scalars["m_d0"] = md0;

  // Unpaired counts at m_d^0, interpolated between the bracketing histograms.
  JointCountDist reference;
  if (md0 <= c.m_d_grid.front()) {
    reference = unpaired.front();
  } else if (md0 >= c.m_d_grid.back()) {
    reference = unpaired.back();
  } else {
    const auto hi = std::size_t(std::lower_bound(c.m_d_grid.begin(), c.m_d_grid.end(), md0) -
                                c.m_d_grid.begin());
    const double w = (md0 - c.m_d_grid[hi - 1]) / (c.m_d_grid[hi] - c.m_d_grid[hi - 1]);
    reference = blend(unpaired[hi - 1], unpaired[hi], w);
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double acc = accidental_pair_dist(reference, tables[k]).pair_dist.mean();
    c.mean_acc.push_back(acc);
    c.mean_genuine.push_back(c.mean_pairs[k] - acc);
  }
  std::tie(c.klyshko_reg_s, c.klyshko_reg_i) =
      klyshko_efficiency(c.mean_genuine, global.mean_i, global.mean_s);

  r.normalize_at = opt.normalize_at ? *opt.normalize_at : c.m_d_grid.back();
  r.genuine_normalized = genuine_curve(c, r.normalize_at);
  if (n >= 2 && r.normalize_at == c.m_d_grid.back())
    r.genuine_decreasing_at_norm = c.mean_genuine[n - 1] < c.mean_genuine[n - 2];

  r.profile = profile_from_curve(c.m_d_grid, r.genuine_normalized, opt.smoothing);
  r.profile.m_d0 = md0;
  const auto fit = fit_gaussian_extent(c.m_d_grid, r.genuine_normalized, opt.kind,
                                       opt.fit_window_factor * md0);
  r.profile.fitted_extent = fit.m_c;
  r.profile.fit_residual = fit.residual;
  r.scalars["m_c"] = fit.m_c;
  r.scalars["fit_residual"] = fit.residual;
  r.scalars["profile_integral"] = r.profile.integral;

  // Klyshko estimates at the zero crossing, and the maxima of the
  // genuine-pair ratios just above it.
  r.scalars["eta_s0"] = interpolate(c.m_d_grid, c.klyshko_s, md0);
  r.scalars["eta_i0"] = interpolate(c.m_d_grid, c.klyshko_i, md0);
  double reg_s = interpolate(c.m_d_grid, c.klyshko_reg_s, md0);
  double reg_i = interpolate(c.m_d_grid, c.klyshko_reg_i, md0);
  for (std::size_t k = 0; k < n; ++k)
    if (c.m_d_grid[k] >= md0 && c.m_d_grid[k] <= 2.0 * md0) {
      reg_s = std::max(reg_s, c.klyshko_reg_s[k]);
      reg_i = std::max(reg_i, c.klyshko_reg_i[k]);
    }
  r.scalars["eta_s_reg_max"] = reg_s;
  r.scalars["eta_i_reg_max"] = reg_i;
  return r;
}

}  // namespace detail

/// Runs the pipeline on the full data and on block-bootstrap replicates.
/// `sets` must share one block layout and be ordered by increasing m_d.
inline AnalysisReport analyze(const std::vector<HistogramSet>& sets, const AnalysisOptions& opt) {
  if (sets.empty()) throw AnalysisError("no histograms to analyze");
  const std::size_t blocks = sets.front().blocks();
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (sets[k].blocks() != blocks) throw AnalysisError("histograms have different block layouts");
    if (k > 0 && !(sets[k].m_d() > sets[k - 1].m_d()))
      throw AnalysisError("histogram extents not strictly increasing");
  }

  std::vector<double> grid;
  std::size_t rows = 1, cols = 1;
  std::vector<HistogramSet> merged;
  const std::vector<double> ones(blocks, 1.0);
  for (const auto& h : sets) {
    grid.push_back(h.m_d());
    merged.push_back(h.weighted(ones));
    const auto u = merged.back().unpaired_counts();
    rows = std::max(rows, u.rows());
    cols = std::max(cols, u.cols());
  }
  const detail::TableCache tables(grid, rows, cols, opt.pixels, opt.model);

  AnalysisReport report;
  report.value = detail::analyze_merged(merged, opt, tables);

  // Block bootstrap: resample blocks with replacement and rerun everything.
  std::map<std::string, std::vector<double>> sum, sum2;
  std::map<std::string, std::vector<std::size_t>> count;
  auto accumulate = [&](const std::string& key, const std::vector<double>& v) {
    auto& s = sum[key];
    auto& s2 = sum2[key];
    auto& cnt = count[key];
    s.resize(v.size(), 0.0);
    s2.resize(v.size(), 0.0);
    cnt.resize(v.size(), 0);
    for (std::size_t k = 0; k < v.size(); ++k)
      if (std::isfinite(v[k])) {
        s[k] += v[k];
        s2[k] += v[k] * v[k];
        ++cnt[k];
      }
  };
  auto collect = [&](const AnalysisResult& r) {
    for (const auto& [name, v] : r.curves.named()) accumulate(name, *v);
    accumulate("genuine_normalized", r.genuine_normalized);
    accumulate("profile", r.profile.t_app);
    for (const auto& [name, v] : r.scalars) accumulate("scalar:" + name, {v});
  };

  std::mt19937_64 rng(opt.seed);
  std::vector<double> weights(blocks);
  if (blocks >= 2) {
    for (std::size_t rep = 0; rep < opt.replicates; ++rep) {
      std::fill(weights.begin(), weights.end(), 0.0);
      for (std::size_t b = 0; b < blocks; ++b)
        weights[std::min(blocks - 1, std::size_t(detail::uniform01(rng) * double(blocks)))] += 1.0;
      std::vector<HistogramSet> resampled;
      for (const auto& h : sets) resampled.push_back(h.weighted(weights));
      try {
        collect(detail::analyze_merged(resampled, opt, tables));
        ++report.replicates_used;
      } catch (const AnalysisError&) {
        ++report.replicates_failed;
      }
    }
  }

  for (const auto& [key, s] : sum) {
    std::vector<double> se(s.size(), kNaN);
    for (std::size_t k = 0; k < s.size(); ++k) {
      const auto m = double(count[key][k]);
      if (m < 2) continue;
      const double mean = s[k] / m;
      se[k] = std::sqrt(std::max(0.0, (sum2[key][k] / m - mean * mean) * m / (m - 1.0)));
    }
    if (key.rfind("scalar:", 0) == 0)
      report.scalar_errors[key.substr(7)] = se.front();
    else
      report.curve_errors[key] = std::move(se);
  }
  return report;
}

/// Model curves over a grid in the same layout as the empirical ones, with
/// the accidental estimate taken from the model's own accidental pairs.
inline SweepCurves model_curves(const ModelEvaluator& ev, std::span<const double> grid,
                                std::vector<std::size_t> conditional_pairs = {0, 1, 2}) {
  SweepCurves c;
  c.m_d_grid.assign(grid.begin(), grid.end());
  for (auto cp : conditional_pairs) c.cov_unpaired_conditional[cp];
  for (double m : grid) {
    const auto o = ev.evaluate(m);
    const auto st = o.stats();
    const auto u = o.unpaired_joint.moments();
    const auto red = o.reduced.unpaired_joint.moments();
    c.mean_pairs.push_back(st.mean_pairs);
    c.mean_acc.push_back(o.accidental.pair_dist.mean());
    c.mean_genuine.push_back(o.genuine.mean());
    c.rel_var_pairs.push_back(st.rel_var_cp);
    c.mean_unpaired_s.push_back(u.mean_s);
    c.mean_unpaired_i.push_back(u.mean_i);
    c.cov_unpaired.push_back(covariance_coefficient(u));
    for (auto& [cp, v] : c.cov_unpaired_conditional) {
      const auto cond = o.conditional_unpaired(cp);
      v.push_back(cond ? covariance_coefficient(cond->moments()) : kNaN);
    }
    c.klyshko_s.push_back(st.mean_pairs / st.mean_i);
    c.klyshko_i.push_back(st.mean_pairs / st.mean_s);
    c.klyshko_reg_s.push_back(o.genuine.mean() / st.mean_i);
    c.klyshko_reg_i.push_back(o.genuine.mean() / st.mean_s);
    c.reduced_mean_s.push_back(red.mean_s);
    c.reduced_mean_i.push_back(red.mean_i);
    c.reduced_cov.push_back(covariance_coefficient(red));
  }
  return c;
}

}  // namespace twinpair
