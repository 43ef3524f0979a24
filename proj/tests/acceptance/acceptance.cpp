// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Seeds are fixed: 1 for the two-dimensional ensemble, 2 for the 1D one.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>

#include "twinpair/twinpair.hpp"

using namespace twinpair;

namespace {

const TwinBeamParams kPaperBeam{{280.0, 0.032}, {0.009, 8.2}, {0.033, 4.7}};
constexpr std::size_t kFrames = 100000;

int failures = 0;

void report(int id, bool ok, const std::string& what) {
  std::printf("[%s] %d %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double covered_by_recursion(std::size_t c, double s) {
  double total = 0.0;
  for (std::size_t k = 0; k < c; ++k) total += s * (1.0 - total);
  return total;
}

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0, worst_tail = 0.0;
  for (std::uint64_t N : {16u, 100u, 6500u})
    for (double eta : {0.0, 0.228, 1.0})
      for (double D : {0.0, 0.2 / double(N)})
        for (std::size_t n = 0; n <= 50; ++n) {
          // c > n + K needs more than K dark counts: P <= (N D)^(K+1) / (K+1)!.
          constexpr std::size_t K = 60;
          const std::size_t top = std::size_t(std::min<std::uint64_t>(N, n + K));
          double total = 0.0;
          for (std::size_t c = 0; c <= top; ++c) total += detection_response(c, n, eta, D, N);
          const double tail = top == N ? 0.0 : std::exp((K + 1) * std::log(N * D) - std::lgamma(K + 2.0));
          worst = std::max(worst, std::abs(total - 1.0));
          worst_tail = std::max(worst_tail, tail);
        }
  const double t = seconds_since(t0);
  report(1, worst + worst_tail <= 1e-9 && t < 10.0,
         fmt("detection-response normalization: max |sum-1| = %.2e, omitted tail <= %.1e, %.1f s", worst,
             worst_tail, t));
}

void criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (auto model : {PairingModel::Basic, PairingModel::Refined}) {
    const ModelEvaluator ev(kPaperBeam, DetectorParams{}, CorrelationProfile{}, model);
    for (double m_d : {50.0, 290.0, 1000.0}) {
      const auto out = ev.evaluate(m_d);
      const auto f = joint_unpaired_dist(out.broken_genuine, ev.unpaired_signal_component(),
                                         ev.unpaired_idler_component());
      const auto rebuilt = reconstruct_joint(accidental_pair_dist(f, m_d, 6500, model));
      for (std::size_t s = 0; s < std::max(f.rows(), rebuilt.rows()); ++s)
        for (std::size_t i = 0; i < std::max(f.cols(), rebuilt.cols()); ++i)
          worst = std::max(worst, std::abs(rebuilt(s, i) - f(s, i)));
    }
  }
  const double t = seconds_since(t0);
  report(2, worst <= 1e-10 && t < 60.0, fmt("reconstruction identity: max deviation %.2e, %.1f s", worst, t));
}

void criterion3() {
  double worst = 0.0;
  for (auto model : {PairingModel::Basic, PairingModel::Refined})
    for (double frac : {0.0, 0.05, 0.5, 1.0})
      for (std::size_t c_s = 0; c_s <= 12; ++c_s)
        for (std::size_t c_i = 0; c_i <= 12; ++c_i) {
          double total = 0.0;
          for (std::size_t c_p = 0; c_p <= 12; ++c_p)
            total += pairing_probability(c_p, c_s, c_i, frac * 6500.0, 6500, model);
          worst = std::max(worst, std::abs(total - 1.0));
        }
  report(3, worst <= 1e-12, fmt("pairing-probability normalization: max |sum-1| = %.2e", worst));
}

void criterion4() {
  double worst_f = 0.0, worst_g = 0.0;
  for (double s : {0.0, 1e-3, 0.05, 0.5, 0.9, 1.0})
    for (std::size_t c = 0; c <= 64; ++c)
      worst_f = std::max(worst_f, std::abs(coverage_fraction(c, s * 6500.0, 6500) - covered_by_recursion(c, s)));
  for (std::size_t c_s = 1; c_s <= 64; ++c_s)
    for (std::size_t c_i = 0; c_i <= 64; ++c_i) {
      const double reference = double(std::min(c_s, c_i)) / double(c_s);
      const double closed = c_i == 0 ? 0.0 : overlap_correction(c_i, c_s) * reference;
      worst_g = std::max(worst_g, std::abs(closed - covered_by_recursion(c_i, 1.0 / double(c_s))));
    }
  report(4, std::max(worst_f, worst_g) <= 1e-12,
         fmt("closed forms vs recursions: eta_f %.2e, eta~ %.2e", worst_f, worst_g));
}

struct Ensemble {
  std::vector<double> grid;
  std::vector<HistogramSet> sets;
  AnalysisReport report;
  double seconds = 0.0;
};

Ensemble run_ensemble(const CorrelationProfile& profile, const StripGeometry& g, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Ensemble e;
  e.grid = default_grid(g);
  const FrameGenerator gen(kPaperBeam, DetectorParams{}, profile, g);
  const auto frames = generate_frames(gen, seed, kFrames);
  e.sets = sweep_and_accumulate(frames, e.grid, g, true, 20);
  AnalysisOptions opt;
  opt.kind = profile.kind;
  e.report = analyze(e.sets, opt);
  e.seconds = seconds_since(t0);
  return e;
}

void criteria5to7(const Ensemble& e) {
  const auto& r = e.report;
  const auto& c = r.value.curves;
  const auto& s = r.value.scalars;
  auto se = [&](const char* name) { return r.scalar_errors.at(name); };

  // 5: model vs simulation on the grid.
  const ModelEvaluator ev(kPaperBeam, DetectorParams{}, CorrelationProfile{}, PairingModel::Refined);
  const auto model = model_curves(ev, e.grid);
  double z_cp = 0.0, z_ds = 0.0, z_cdd = 0.0;
  double at_cp = 0.0, at_ds = 0.0, at_cdd = 0.0;
  auto track = [&](const char* name, const std::vector<double>& emp, const std::vector<double>& mod, double& worst,
                   double& where) {
    const auto& err = r.curve_errors.at(name);
    for (std::size_t k = 0; k < e.grid.size(); ++k) {
      const double z = std::abs(emp[k] - mod[k]) / err[k];
      if (!(z <= worst)) {
        worst = z;
        where = e.grid[k];
      }
    }
  };
  track("mean_pairs", c.mean_pairs, model.mean_pairs, z_cp, at_cp);
  track("mean_unpaired_s", c.mean_unpaired_s, model.mean_unpaired_s, z_ds, at_ds);
  track("cov_unpaired", c.cov_unpaired, model.cov_unpaired, z_cdd, at_cdd);
  report(5, std::max({z_cp, z_ds, z_cdd}) < 3.0 && e.seconds < 600.0,
         fmt("model vs simulation (%zu points, %zu frames, %.0f s): max |z| <c_p> %.2f at %g, <d_s> %.2f at %g, "
             "C_dd %.2f at %g",
             e.grid.size(), kFrames, e.seconds, z_cp, at_cp, z_ds, at_ds, z_cdd, at_cdd));

  // 6: correlated area.
  const double m_c = s.at("m_c"), md0 = s.at("m_d0");
  report(6, std::abs(m_c / 250.0 - 1.0) <= 0.15 && std::abs(md0 / 290.0 - 1.0) <= 0.20,
         fmt("correlated area: m_c = %.1f +- %.1f (250 +- 15%%), m_d0 = %.1f +- %.1f (290 +- 20%%)", m_c, se("m_c"),
             md0, se("m_d0")));

  // 7: Klyshko efficiencies, maximum of the genuine-pair ratio above m_d^0.
  const double es = s.at("eta_s_reg_max"), ei = s.at("eta_i_reg_max");
  report(7, std::abs(es / 0.228 - 1.0) <= 0.10 && std::abs(ei / 0.223 - 1.0) <= 0.10,
         fmt("Klyshko efficiencies: eta_s = %.4f +- %.4f (0.228 +- 10%%), eta_i = %.4f +- %.4f (0.223 +- 10%%); "
             "at m_d0: %.4f, %.4f",
             es, se("eta_s_reg_max"), ei, se("eta_i_reg_max"), s.at("eta_s0"), s.at("eta_i0")));
}

void criterion9(const Ensemble& e) {
  const auto& c = e.report.value.curves;
  const double red1000 = interpolate(e.grid, c.reduced_mean_s, 1000.0);
  const double red3000 = interpolate(e.grid, c.reduced_mean_s, 3000.0);
  double small_cov = 0.0;
  std::size_t small_points = 0;
  for (std::size_t k = 0; k < e.grid.size() && e.grid[k] <= 30.0; ++k) {
    if (std::isfinite(c.reduced_cov[k])) small_cov = std::max(small_cov, std::abs(c.reduced_cov[k]));
    ++small_points;
  }
  const double large_cov = std::abs(interpolate(e.grid, c.reduced_cov, 1000.0));
  report(9, red1000 <= 0.6 * red3000 && small_points > 0 && small_cov < 0.1 * large_cov,
         fmt("noise reduction: <d_s>red %.4f at 1000 vs %.4f at 3000 (ratio %.2f); |C_dd red| <= %.4f for m_d <= 30 "
             "vs %.4f at 1000",
             red1000, red3000, red1000 / red3000, small_cov, large_cov));
}

void criterion8() {
  const ModelEvaluator ev(kPaperBeam, DetectorParams{}, CorrelationProfile{}, PairingModel::Refined);
  const auto st = ev.evaluate(290.0).stats();
  const bool ok = std::abs(st.covariance / 0.22 - 1.0) <= 0.15 && std::abs(st.sub_shot_noise / 0.80 - 1.0) <= 0.15 &&
                  std::abs(st.mean_s / 2.01 - 1.0) <= 0.15;
  report(8, ok, fmt("model scalars: C = %.4f (0.22 +- 15%%), R = %.4f (0.80 +- 15%%), <c_s> = %.4f (2.01 +- 15%%)",
                    st.covariance, st.sub_shot_noise, st.mean_s));
}

void criterion10() {
  CorrelationProfile profile{ProfileKind::Gaussian1D, 20.0};
  StripGeometry g;
  g.one_dim = true;
  const auto e = run_ensemble(profile, g, 2);
  const auto& r = e.report;
  const auto& t = r.value.profile.t_app;
  const auto& err = r.curve_errors.at("profile");
  double worst = 0.0, where = 0.0;
  for (std::size_t k = 0; k < e.grid.size(); ++k) {
    const double z = std::abs(t[k] - gaussian_profile(e.grid[k], 20.0, ProfileKind::Gaussian1D)) / err[k];
    if (!(z <= worst)) {
      worst = z;
      where = e.grid[k];
    }
  }
  const double m_c = r.value.scalars.at("m_c");
  report(10, std::abs(m_c / 20.0 - 1.0) <= 0.15 && worst < 3.0,
         fmt("1D mode (%zu points, %.0f s): m_c = %.2f +- %.2f (20 +- 15%%), max |t_x - analytic| = %.2f SE at %g",
             e.grid.size(), e.seconds, m_c, r.scalar_errors.at("m_c"), worst, where));
}

void criterion11() {
  const auto grid = default_grid(StripGeometry{});
  const ModelEvaluator basic(kPaperBeam, DetectorParams{}, CorrelationProfile{}, PairingModel::Basic);
  const ModelEvaluator refined(kPaperBeam, DetectorParams{}, CorrelationProfile{}, PairingModel::Refined);
  double min_gap = INFINITY;
  for (double m : grid)
    min_gap = std::min(min_gap, basic.evaluate(m).accidental.pair_dist.mean() -
                                    refined.evaluate(m).accidental.pair_dist.mean());
  report(11, min_gap >= 0.0, fmt("basic vs refined accidentals: min(basic - refined) = %.3e over %zu points", min_gap,
                                 grid.size()));
}

void criterion12() {
  const StripGeometry g;
  const FrameGenerator gen(kPaperBeam, DetectorParams{}, CorrelationProfile{}, g);
  const auto grid = default_grid(g);
  auto run = [&](unsigned threads) {
    const auto frames = generate_frames(gen, 1, 5000, threads);
    std::ostringstream fs, hs;
    io::write_frames(fs, frames);
    for (const auto& h : sweep_and_accumulate(frames, grid, g, true, 20, threads)) io::write_histogram(hs, h, {});
    return std::make_pair(fs.str(), hs.str());
  };
  const auto a = run(1), b = run(1), c = run(4);
  const bool ok = a == b && a == c;
  report(12, ok, fmt("determinism: frames and histograms byte-identical across runs and 1/4 threads (%zu + %zu bytes)",
                     a.first.size(), a.second.size()));
}

}  // namespace

int main() {
  try {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    const auto e = run_ensemble(CorrelationProfile{}, StripGeometry{}, 1);
    criteria5to7(e);
    criterion8();
    criterion9(e);
    criterion10();
    criterion11();
    criterion12();
  } catch (const std::exception& ex) {
    std::printf("[FAIL] aborted: %s\n", ex.what());
    return 2;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
