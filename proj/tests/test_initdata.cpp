#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mmch/energy.hpp"
#include "mmch/error.hpp"
#include "mmch/grid.hpp"
#include "mmch/initdata.hpp"

using namespace mmch;

TEST(InitData, ParsesShapes) {
  const auto a = parse_shape("interval(0, 1)");
  EXPECT_EQ(a.kind, Shape::Kind::Interval);
  EXPECT_EQ(a.dim(), 1);
  const auto b = parse_shape("intervals(-0.3,0.5,0.3,0.5)");
  EXPECT_EQ(b.components(), 2);
  EXPECT_NEAR(b.centroid()[0], 0.0, 1e-15);
  const auto c = parse_shape("disk(0,0,0.5641895835477563)");
  EXPECT_EQ(c.dim(), 2);
  EXPECT_NEAR(c.measure(), 1.0, 1e-12);
  EXPECT_EQ(parse_shape(c.describe()).params, c.params);
}

TEST(InitData, RejectsBadShapes) {
  EXPECT_THROW(parse_shape("interval(0,2)"), ParameterError);
  EXPECT_THROW(parse_shape("intervals(0,0.5,0.2,0.5)"), ParameterError);
  EXPECT_THROW(parse_shape("square(0,1)"), ParameterError);
  EXPECT_THROW(parse_shape("interval(0,1x)"), ParameterError);
  EXPECT_THROW(parse_shape("interval(0,1"), ParameterError);
  EXPECT_THROW(parse_shape("disk(0,0,0.5641895835477563,1)"), ParameterError);
}

TEST(InitData, SignedDistance) {
  const auto s = Shape::interval(0.2, 1.0);
  EXPECT_DOUBLE_EQ(signed_distance(s, {0.2, 0.0}), -0.5);
  EXPECT_DOUBLE_EQ(signed_distance(s, {1.0, 0.0}), 0.3);
  const auto d = Shape::disk(0.0, 0.0, 1.0 / std::sqrt(std::numbers::pi));
  EXPECT_NEAR(signed_distance(d, {3.0, 4.0}), 5.0 - 1.0 / std::sqrt(std::numbers::pi), 1e-15);
}

TEST(InitData, ProfileSolvesEquipartitionOde) {
  // q' = sqrt(2 W(q)) for the sqrt2 scale
  for (double z : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    const double d = 1e-5;
    const double dq = (optimal_profile(z + d, ProfileScale::Sqrt2) - optimal_profile(z - d, ProfileScale::Sqrt2)) / (2 * d);
    EXPECT_NEAR(dq, std::sqrt(2.0 * w_eval(optimal_profile(z, ProfileScale::Sqrt2))), 1e-9);
  }
  EXPECT_DOUBLE_EQ(optimal_profile(0.0), 0.5);
  EXPECT_GE(optimal_profile(-800.0), 0.0);
}

TEST(InitData, UnitMassAndBounds) {
  const auto g = GridSpec::line(512, -1.5, 3.0);
  const auto wp = well_prepared(Shape::interval(0.0, 1.0), 0.05, g);
  EXPECT_NEAR(integrate(wp.u), 1.0, 1e-13);
  EXPECT_NEAR(wp.raw_mass, 1.0, 1e-9);
  EXPECT_GT(wp.a, 0.5);
  EXPECT_LT(wp.a, 2.0);
  for (double x : wp.u.values()) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0 + 1e-9);
  }
}

TEST(InitData, RejectsUnresolvedOrCrowded) {
  const auto g = GridSpec::line(64, -1.5, 3.0);
  EXPECT_THROW(well_prepared(Shape::interval(0.0, 1.0), 0.01, g), ParameterError);
  const auto tight = GridSpec::line(2048, -0.6, 1.2);
  EXPECT_THROW(well_prepared(Shape::interval(0.0, 1.0), 0.05, tight), ParameterError);
  EXPECT_THROW(well_prepared(Shape::interval(0.0, 1.0), 0.05, GridSpec::square(64, -1.5, 3.0)), ParameterError);
}

TEST(InitData, EnergyNearTwoSurfaceTensionsIn1D) {
  const auto g = GridSpec::line(2048, -1.5, 3.0);
  const auto wp = well_prepared(Shape::interval(0.0, 1.0), 0.02, g);
  const double sigma = std::numbers::sqrt2 / 12.0;
  EXPECT_NEAR(energy(wp.u, 0.02), 2.0 * sigma, 0.01 * 2.0 * sigma);
}

TEST(InitData, RingMarginBoundsTail) {
  for (auto p : {ProfileScale::Paper, ProfileScale::Sqrt2}) {
    EXPECT_LE(optimal_profile(-ring_margin(0.03, p) / 0.03, p), 1e-6);
  }
}
