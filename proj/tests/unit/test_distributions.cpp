#include <gtest/gtest.h>

#include <cmath>

#include "twinpair/distributions.hpp"

using namespace twinpair;

namespace {

// Direct product form of the Mandel-Rice pmf, independent of the log-gamma
// route: prod_{k<n} (M + k) / (k + 1) * B^n / (1 + B)^(n + M).
double mandel_rice_product(std::size_t n, double M, double B) {
  long double v = std::pow(1.0L + B, -(long double)M);
  for (std::size_t k = 0; k < n; ++k) v *= (M + k) / (k + 1.0L) * B / (1.0L + B);
  return double(v);
}

}  // namespace

TEST(MandelRice, VacuumTermIsPowerOfOnePlusB) {
  for (double M : {0.009, 1.0, 280.0})
    for (double B : {0.0, 0.032, 8.2})
      EXPECT_NEAR(mandel_rice(0, {M, B}), std::pow(1.0 + B, -M), 1e-15);
}

TEST(MandelRice, GeometricSingleMode) { EXPECT_NEAR(mandel_rice(1, {1.0, 1.0}), 0.25, 1e-15); }

TEST(MandelRice, HighPrecisionReferenceValues) {
  // 40-digit evaluation of the Gamma ratio (M = 280, B = 0.032).
  const ModeParams p{280.0, 0.032};
  EXPECT_NEAR(mandel_rice(0, p) / 1.4780351366549114567e-4, 1.0, 1e-12);
  EXPECT_NEAR(mandel_rice(1, p) / 1.283255312444574288e-3, 1.0, 1e-12);
  EXPECT_NEAR(mandel_rice(3, p) / 1.6295129294110202628e-2, 1.0, 1e-12);
  EXPECT_NEAR(mandel_rice(10, p) / 1.162052880092211951e-1, 1.0, 1e-12);
  EXPECT_NEAR(mandel_rice(20, p) / 6.9857579802255073842e-4, 1.0, 1e-12);
}

TEST(MandelRice, MatchesProductFormOverRange) {
  for (std::size_t n = 0; n <= 20; ++n)
    EXPECT_NEAR(mandel_rice(n, {280.0, 0.032}) / mandel_rice_product(n, 280.0, 0.032), 1.0, 1e-12) << n;
}

TEST(MandelRice, RejectsInvalidParameters) {
  EXPECT_THROW(mandel_rice(1, {0.0, 1.0}), ParameterError);
  EXPECT_THROW(mandel_rice(1, {1.0, -0.1}), ParameterError);
}

TEST(ComponentDist, GeometricTruncation) {
  const auto d = component_dist({1.0, 1.0}, 40, 1e-10);
  ASSERT_EQ(d.size(), 41u);
  for (std::size_t n = 0; n <= 40; ++n) EXPECT_NEAR(d[n], std::ldexp(1.0, -int(n) - 1), 1e-16);
  EXPECT_NEAR(d.mass(), 1.0 - std::ldexp(1.0, -41), 1e-15);
}

TEST(ComponentDist, TooSmallNMaxSuggestsLarger) {
  try {
    component_dist({1.0, 1.0}, 10, 1e-10);
    FAIL() << "expected TruncationError";
  } catch (const TruncationError& e) {
    EXPECT_GT(e.suggested_n_max(), 10u);
    EXPECT_NO_THROW(component_dist({1.0, 1.0}, e.suggested_n_max(), 1e-10));
  }
}

TEST(ComponentDist, NoiseSignalLocalizedAtZero) {
  const auto d = component_dist({0.009, 8.2});
  EXPECT_GT(d[0], 0.97);
}

TEST(ComponentDist, VacuumIsDelta) {
  const auto d = component_dist({5.0, 0.0});
  EXPECT_EQ(d[0], 1.0);
  for (std::size_t n = 1; n < d.size(); ++n) EXPECT_EQ(d[n], 0.0);
}

TEST(ComponentDist, MeanAndMassIdentities) {
  for (const ModeParams p : {ModeParams{280.0, 0.032}, ModeParams{0.009, 8.2}, ModeParams{0.033, 4.7},
                             ModeParams{3.5, 2.0}}) {
    const auto d = component_dist(p);
    EXPECT_GE(d.mass(), 1.0 - kTruncationTolerance);
    EXPECT_LE(d.mass(), 1.0 + 1e-12);
    EXPECT_NEAR(d.mean() / (p.modes * p.mean_per_mode), 1.0, 1e-6);
  }
}

TEST(JointPhotonDist, NoNoiseIsDiagonal) {
  const TwinBeamParams beam{{280.0, 0.032}, {0.009, 0.0}, {0.033, 0.0}};
  const auto j = joint_photon_dist(beam);
  const auto pp = component_dist(beam.paired);
  for (std::size_t s = 0; s < j.rows(); ++s)
    for (std::size_t i = 0; i < j.cols(); ++i)
      EXPECT_NEAR(j(s, i), s == i ? pp[s] : 0.0, 1e-15);
}

TEST(JointPhotonDist, NoPairsIsProduct) {
  const TwinBeamParams beam{{280.0, 0.0}, {0.5, 2.0}, {1.5, 0.7}};
  const auto j = joint_photon_dist(beam);
  const auto ps = component_dist(beam.noise_signal), pi = component_dist(beam.noise_idler);
  for (std::size_t s = 0; s < j.rows(); ++s)
    for (std::size_t i = 0; i < j.cols(); ++i) EXPECT_NEAR(j(s, i), ps[s] * pi[i], 1e-15);
}

TEST(JointPhotonDist, MarginalIsConvolutionAndMeansAdd) {
  const TwinBeamParams beam{{280.0, 0.032}, {0.009, 8.2}, {0.033, 4.7}};
  const auto pp = component_dist(beam.paired), ps = component_dist(beam.noise_signal),
             pi = component_dist(beam.noise_idler);
  const auto j = joint_photon_dist(pp, ps, pi);
  const auto marginal = j.marginal_signal();
  const auto conv = convolve(pp, ps);
  for (std::size_t n = 0; n < std::max(marginal.size(), conv.size()); ++n)
    EXPECT_NEAR(marginal[n], conv[n], 1e-12);
  EXPECT_NEAR(marginal.mean(), 280.0 * 0.032 + 0.009 * 8.2, 1e-6);
}
