#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "twinpair/io.hpp"
#include "twinpair/simulator.hpp"

using namespace twinpair;

namespace {

const TwinBeamParams kPaperBeam{{280.0, 0.032}, {0.009, 8.2}, {0.033, 4.7}};

// Maximum bipartite matching by exhaustive search over signal assignments.
std::size_t maximum_matching(const Frame& f, const StripGeometry& g, const DetectionArea& area) {
  std::vector<char> used(f.idler.size(), 0);
  std::function<std::size_t(std::size_t)> best = [&](std::size_t s) -> std::size_t {
    if (s == f.signal.size()) return 0;
    std::size_t top = best(s + 1);
    const Pixel c = g.corresponding(f.signal[s]);
    for (std::size_t i = 0; i < f.idler.size(); ++i) {
      if (used[i]) continue;
      const auto [dx, dy] = g.displacement(c, f.idler[i]);
      if (!area.contains(dx, dy)) continue;
      used[i] = 1;
      top = std::max(top, 1 + best(s + 1));
      used[i] = 0;
    }
    return top;
  };
  return best(0);
}

std::string serialize(const std::vector<HistogramSet>& sets) {
  std::ostringstream os;
  for (const auto& h : sets) io::write_histogram(os, h, {});
  return os.str();
}

}  // namespace

TEST(Geometry, WrappedDisplacementIsMinimalImage) {
  const StripGeometry g;
  EXPECT_EQ(g.displacement({0, 0}, {99, 64}), std::make_pair(std::int64_t(-1), std::int64_t(-1)));
  EXPECT_EQ(g.displacement({10, 10}, {13, 6}), std::make_pair(std::int64_t(3), std::int64_t(-4)));
  StripGeometry clip = g;
  clip.boundary = BoundaryPolicy::Clip;
  EXPECT_EQ(clip.displacement({0, 0}, {99, 64}), std::make_pair(std::int64_t(99), std::int64_t(64)));
  StripGeometry mirror = g;
  mirror.mapping = StripMapping::MirrorX;
  EXPECT_EQ(mirror.corresponding({0, 5}), (Pixel{99, 5}));
}

TEST(DetectionArea, LatticeDiscs) {
  // Shells of the square lattice: 1, 5, 9, 13, 21, 25, 29, 37, ...
  EXPECT_EQ(DetectionArea(0.0, false).lattice_pixels(), 0u);
  EXPECT_EQ(DetectionArea(1.0, false).lattice_pixels(), 1u);
  EXPECT_EQ(DetectionArea(4.9, false).lattice_pixels(), 1u);
  EXPECT_EQ(DetectionArea(5.0, false).lattice_pixels(), 5u);
  EXPECT_EQ(DetectionArea(12.0, false).lattice_pixels(), 9u);
  EXPECT_EQ(DetectionArea(20.0, false).lattice_pixels(), 13u);
  EXPECT_EQ(DetectionArea(21.0, false).lattice_pixels(), 21u);
  EXPECT_EQ(DetectionArea(6.0, true).lattice_pixels(), 5u);
  EXPECT_EQ(DetectionArea(7.0, true).lattice_pixels(), 7u);
  const DetectionArea a(13.0, false);
  EXPECT_TRUE(a.contains(2, 0));
  EXPECT_TRUE(a.contains(1, 1));
  EXPECT_FALSE(a.contains(2, 1));
  EXPECT_THROW(DetectionArea(-1.0, false), ParameterError);
}

TEST(DetectionArea, CountsMatchContainsAndAreIdempotent) {
  for (bool one_dim : {false, true}) {
    StripGeometry g;
    g.one_dim = one_dim;
    for (double m = 0.5; m < 3400.0; m *= 1.05) {
      const DetectionArea a(m, one_dim);
      EXPECT_LE(double(a.lattice_pixels()), m);
      const double e = effective_detection_area(m, g);
      EXPECT_EQ(effective_detection_area(e, g), e) << m;
      if (one_dim || m > 400.0) continue;
      std::uint64_t n = 0;
      for (int dx = -30; dx <= 30; ++dx)
        for (int dy = -30; dy <= 30; ++dy) n += a.contains(dx, dy);
      EXPECT_EQ(n, a.lattice_pixels());
    }
  }
}

TEST(FrameGenerator, EmptyWithoutLightOrDarkCounts) {
  DetectorParams det;
  det.eta_signal = det.eta_idler = 0.0;
  det.dark_signal = det.dark_idler = 0.0;
  const TwinBeamParams vacuum{{280.0, 0.032}, {1.0, 0.0}, {1.0, 0.0}};
  const FrameGenerator gen(vacuum, det, CorrelationProfile{}, StripGeometry{});
  for (std::uint64_t k = 0; k < 200; ++k) {
    const auto f = gen(3, k);
    EXPECT_TRUE(f.signal.empty());
    EXPECT_TRUE(f.idler.empty());
  }
}

TEST(FrameGenerator, DarkCountMean) {
  const TwinBeamParams dark_only{{280.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}};
  const FrameGenerator gen(dark_only, DetectorParams{}, CorrelationProfile{}, StripGeometry{});
  const auto frames = generate_frames(gen, 11, 10000);
  double s = 0.0, i = 0.0;
  for (const auto& f : frames) {
    s += double(f.signal.size());
    i += double(f.idler.size());
  }
  // Binomial(6500, 0.2/6500) per strip: variance 0.2 (1 - 0.2/6500).
  const double sigma = std::sqrt(0.2 / 10000.0);
  EXPECT_NEAR(s / 10000.0, 0.2, 3 * sigma);
  EXPECT_NEAR(i / 10000.0, 0.2, 3 * sigma);
}

TEST(FrameGenerator, CountsStayOnDistinctPixelsInsideStrip) {
  const StripGeometry g;
  const FrameGenerator gen(kPaperBeam, DetectorParams{}, CorrelationProfile{}, g);
  for (std::uint64_t k = 0; k < 500; ++k) {
    const auto f = gen(5, k);
    for (const auto* strip : {&f.signal, &f.idler}) {
      EXPECT_TRUE(std::is_sorted(strip->begin(), strip->end()));
      EXPECT_EQ(std::adjacent_find(strip->begin(), strip->end()), strip->end());
      for (const auto& p : *strip) EXPECT_TRUE(g.contains(p));
    }
  }
}

TEST(FrameGenerator, RejectsPixelMismatch) {
  StripGeometry g;
  g.width = 10;
  EXPECT_THROW(FrameGenerator(kPaperBeam, DetectorParams{}, CorrelationProfile{}, g), ParameterError);
}

TEST(FrameGenerator, IndependentOfThreadCount) {
  const FrameGenerator gen(kPaperBeam, DetectorParams{}, CorrelationProfile{}, StripGeometry{});
  const auto a = generate_frames(gen, 9, 300, 1), b = generate_frames(gen, 9, 300, 3);
  std::ostringstream sa, sb;
  io::write_frames(sa, a);
  io::write_frames(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_NE(sa.str().size(), 0u);
  // Different seeds give different ensembles.
  std::ostringstream sc;
  io::write_frames(sc, generate_frames(gen, 10, 300, 1));
  EXPECT_NE(sa.str(), sc.str());
}

TEST(PairCounts, TrivialCases) {
  const StripGeometry g;
  Frame f{0, {{10, 10}}, {{10, 10}}};
  auto r = pair_counts(f, 0.0, g);
  EXPECT_EQ(r.paired, 0u);
  EXPECT_EQ(r.unpaired_signal, 1u);
  EXPECT_EQ(r.unpaired_idler, 1u);
  r = pair_counts(f, 1.0, g);
  EXPECT_EQ(r.paired, 1u);
  EXPECT_EQ(r.unpaired_signal + r.unpaired_idler, 0u);
  // Neighbour at distance 1 needs the 5-pixel disc.
  f.idler = {{11, 10}};
  EXPECT_EQ(pair_counts(f, 4.0, g).paired, 0u);
  EXPECT_EQ(pair_counts(f, 5.0, g).paired, 1u);
  // Across the wrapped edge.
  f = {0, {{0, 0}}, {{99, 64}}};
  EXPECT_EQ(pair_counts(f, 9.0, g).paired, 1u);
}

TEST(PairCounts, GreedyPrefersNearestAndReducedCountsNearPairs) {
  const StripGeometry g;
  // One signal count, two idler candidates: the nearer one is taken.
  Frame f{0, {{20, 20}}, {{22, 20}, {21, 20}}};
  const auto r = pair_counts(f, 50.0, g);
  ASSERT_EQ(r.paired, 1u);
  EXPECT_EQ(r.pair_list[0].second, (Pixel{21, 20}));
  EXPECT_EQ(r.reduced_idler, 1u);
  EXPECT_EQ(r.reduced_signal, 0u);
  // A far unpaired count is not reduced.
  f.idler = {{21, 20}, {60, 50}};
  EXPECT_EQ(pair_counts(f, 50.0, g).reduced_idler, 0u);
}

TEST(PairCounts, GreedyCloseToMaximumMatching) {
  // Simulated frames with at most 6 counts per strip; areas up to 1000 pixels.
  const StripGeometry g;
  const FrameGenerator gen(kPaperBeam, DetectorParams{}, CorrelationProfile{}, g);
  for (double m : {29.0, 290.0, 1000.0}) {
    const DetectionArea area(m, false);
    int equal = 0, trials = 0;
    for (std::uint64_t k = 0; k < 4000; ++k) {
      const auto f = gen(77, k);
      if (f.signal.size() > 6 || f.idler.size() > 6) continue;
      ++trials;
      const auto greedy = FrameCandidates(f, g, area).pair(area).paired;
      const auto best = maximum_matching(f, g, area);
      ASSERT_LE(greedy, best);
      ASSERT_LE(best - greedy, 1u);
      if (best > 0) {
        EXPECT_GE(greedy, 1u);
      }
      equal += greedy == best;
    }
    EXPECT_GE(double(equal) / trials, 0.95) << m;
  }
}

TEST(Sweep, ConservationMonotonicityAndMarginals) {
  const StripGeometry g;
  const FrameGenerator gen(kPaperBeam, DetectorParams{}, CorrelationProfile{}, g);
  const auto frames = generate_frames(gen, 21, 400);
  const std::vector<double> grid{0.0, 5.0, 37.0, 290.0, 1000.0, 3300.0};
  for (const auto& f : frames) {
    const FrameCandidates cand(f, g, grid.back());
    std::size_t last = 0;
    for (double m : grid) {
      const auto r = cand.pair(m);
      EXPECT_EQ(r.paired + r.unpaired_signal, f.signal.size());
      EXPECT_EQ(r.paired + r.unpaired_idler, f.idler.size());
      EXPECT_LE(r.reduced_signal, r.unpaired_signal);
      EXPECT_LE(r.reduced_idler, r.unpaired_idler);
      EXPECT_GE(r.paired, last);
      last = r.paired;
      const auto direct = pair_counts(f, m, g);
      EXPECT_EQ(direct.paired, r.paired);
    }
  }
  const auto sets = sweep_and_accumulate(frames, grid, g, true, 7);
  ASSERT_EQ(sets.size(), grid.size());
  const auto ref = sets[0].joint().marginal_signal();
  for (const auto& h : sets) {
    EXPECT_EQ(h.frames(), 400.0);
    EXPECT_EQ(h.reduced().total(), 400.0);
    EXPECT_EQ(h.blocks(), 7u);
    const auto m = h.joint().marginal_signal();
    for (std::size_t c = 0; c < std::max(m.size(), ref.size()); ++c) EXPECT_NEAR(m[c], ref[c], 1e-15);
  }
  // Unit weights reproduce the pooled tables.
  const std::vector<double> ones(7, 1.0);
  const auto pooled = sets[3].weighted(ones);
  EXPECT_EQ(serialize({pooled}), serialize({[&] {
              HistogramSet one(sets[3].m_d(), 1);
              one.full_block(0) = sets[3].full();
              one.reduced_block(0) = sets[3].reduced();
              return one;
            }()}));
}

TEST(Sweep, SingleFrameAndErrors) {
  const StripGeometry g;
  const std::vector<Frame> one{{0, {{1, 1}, {5, 5}}, {{1, 2}}}};
  const std::vector<double> grid{1.0, 9.0};
  const auto sets = sweep_and_accumulate(one, grid, g);
  ASSERT_EQ(sets.size(), 2u);
  EXPECT_EQ(sets[0].frames(), 1.0);
  EXPECT_EQ(sets[1].frames(), 1.0);
  EXPECT_EQ(sets[0].paired_counts()[0], 1.0);
  EXPECT_EQ(sets[1].paired_counts()[1], 1.0);
  EXPECT_EQ(sets[1].blocks(), 1u);
  EXPECT_THROW(sweep_and_accumulate(std::span<const Frame>(), grid, g), ParameterError);
  EXPECT_THROW(sweep_and_accumulate(one, std::span<const double>(), g), ParameterError);
  // Without the reduced flag the reduced tables stay empty.
  EXPECT_EQ(sweep_and_accumulate(one, grid, g, false)[1].reduced().total(), 0.0);
}

TEST(Sweep, IndependentOfThreadCount) {
  const StripGeometry g;
  const FrameGenerator gen(kPaperBeam, DetectorParams{}, CorrelationProfile{}, g);
  const auto frames = generate_frames(gen, 8, 500);
  const std::vector<double> grid{13.0, 250.0, 2000.0};
  EXPECT_EQ(serialize(sweep_and_accumulate(frames, grid, g, true, 20, 1)),
            serialize(sweep_and_accumulate(frames, grid, g, true, 20, 4)));
}

TEST(Sweep, OneDimensionalRows) {
  StripGeometry g;
  g.one_dim = true;
  const Frame f{0, {{10, 3}}, {{12, 3}, {10, 4}}};
  EXPECT_EQ(pair_counts(f, 3.0, g).paired, 0u);
  const auto r = pair_counts(f, 5.0, g);
  EXPECT_EQ(r.paired, 1u);
  EXPECT_EQ(r.pair_list[0].second, (Pixel{12, 3}));
}
