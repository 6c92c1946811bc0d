#include "ecmid/recovery.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ecmid;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

} // namespace

TEST(PhysicalToTf, ReferenceBattery)
{
    const TfCoeffs tf = physical_to_tf(kReferenceBattery);
    EXPECT_NEAR(tf.a1, 0.065555555555555556, 1e-16);
    EXPECT_NEAR(tf.a2, 5.5555555555555556e-4, 1e-18);
    EXPECT_DOUBLE_EQ(tf.b0, 0.06);
    EXPECT_NEAR(tf.b1, 0.0058, 1e-16);
    EXPECT_NEAR(tf.b2, 6.1111111111111111e-5, 1e-19);
}

TEST(TildeToTf, RoundTripReferenceBattery)
{
    const TfCoeffs tf = physical_to_tf(kReferenceBattery);
    for (const double nu : {1e-3, 0.1, 1.0}) {
        const TildeCoeffs t = tf_to_tilde(tf, nu);
        const TfCoeffs back = tilde_to_tf(t.a, t.b, nu);
        EXPECT_LT(rel(back.a1, tf.a1), 1e-10) << nu;
        EXPECT_LT(rel(back.a2, tf.a2), 1e-10) << nu;
        EXPECT_LT(rel(back.b0, tf.b0), 1e-10) << nu;
        EXPECT_LT(rel(back.b1, tf.b1), 1e-10) << nu;
        EXPECT_LT(rel(back.b2, tf.b2), 1e-10) << nu;
    }
}

TEST(TildeToTf, FixedPointAtZeroDenominator)
{
    const TfCoeffs tf = tilde_to_tf(Eigen::Vector2d(2.0, 1.0), Eigen::Vector3d(1.0, 2.0, 1.0), 0.5);
    EXPECT_NEAR(tf.a1, 0.0, 1e-12);
    EXPECT_NEAR(tf.a2, 0.0, 1e-12);
    EXPECT_TRUE(tf.negative_coefficient);
}

TEST(TildeToTf, InvertsSlowCutoffExample)
{
    const double nu = 1e-3;
    const double a0 = 4.91e-4;
    const Eigen::Vector2d at(-1.1091111111111111e-3 / a0, 6.2211111111111111e-4 / a0);
    const TfCoeffs tf = tilde_to_tf(at, Eigen::Vector3d(1.0, 1.0, 1.0), nu);
    EXPECT_NEAR(tf.a1, 0.065555555555555556, 1e-12);
    EXPECT_NEAR(tf.a2, 5.5555555555555556e-4, 1e-14);
}

TEST(TfToPhysical, ReferenceBattery)
{
    const PhysicalEstimate est = tf_to_physical(physical_to_tf(kReferenceBattery));
    EXPECT_LT(rel(est.params.r0, 0.06), 1e-9);
    EXPECT_LT(rel(est.params.r1, 0.03), 1e-9);
    EXPECT_LT(rel(est.params.r2, 0.02), 1e-9);
    EXPECT_LT(rel(est.params.c1, 600.0), 1e-9);
    EXPECT_LT(rel(est.params.c2, 5000.0), 1e-9);
    EXPECT_FALSE(est.non_physical);
}

TEST(TfToPhysical, CellTimeConstantsFromPublishedParameters)
{
    const EcmParams cell{0.0648, 0.0105, 0.0158, 147.9061, 1958.39, 1.0};
    const PhysicalEstimate est = tf_to_physical(physical_to_tf(cell));
    EXPECT_NEAR(est.tau1, 1.553, 1e-3);
    EXPECT_NEAR(est.tau2, 30.94, 1e-2);
}

TEST(TfToPhysical, EqualTimeConstantsConsistent)
{
    const EcmParams p{0.05, 0.01, 0.02, 1000.0, 500.0, 1.0};
    const PhysicalEstimate est = tf_to_physical(physical_to_tf(p));
    EXPECT_NEAR(est.tau1, 10.0, 1e-6);
    EXPECT_NEAR(est.tau2, 10.0, 1e-6);
    EXPECT_TRUE(est.degenerate_split);
    EXPECT_FALSE(est.non_physical);
    EXPECT_NEAR(est.params.r1 + est.params.r2, 0.03, 1e-12);
}

TEST(TfToPhysical, EqualTimeConstantsInconsistent)
{
    TfCoeffs tf = physical_to_tf(EcmParams{0.05, 0.01, 0.02, 1000.0, 500.0, 1.0});
    tf.b1 *= 1.5;
    const PhysicalEstimate est = tf_to_physical(tf);
    EXPECT_TRUE(est.degenerate_split);
    EXPECT_TRUE(est.non_physical);
}

TEST(TfToPhysical, FlagsNonPhysicalWithoutClipping)
{
    TfCoeffs tf = physical_to_tf(kReferenceBattery);
    tf.b2 = 0.5 * tf.b0 * tf.a2;  // R1 + R2 < 0
    const PhysicalEstimate est = tf_to_physical(tf);
    EXPECT_TRUE(est.non_physical);
    EXPECT_LT(est.params.r1 + est.params.r2, 0.0);
}

TEST(TfToPhysical, ComplexPoles)
{
    TfCoeffs tf;
    tf.a1 = 1.0;
    tf.a2 = 1.0;
    try {
        (void)tf_to_physical(tf);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ComplexTimeConstants);
    }
}

TEST(TimeConstants, ReferenceBattery)
{
    const auto [t1, t2] = time_constants(physical_to_tf(kReferenceBattery));
    EXPECT_NEAR(t1, 18.0, 1e-10);
    EXPECT_NEAR(t2, 100.0, 1e-10);
}

TEST(TimeConstants, DoubleRoot)
{
    TfCoeffs tf;
    tf.a1 = 2.0;
    tf.a2 = 1.0;
    const auto [t1, t2] = time_constants(tf);
    EXPECT_DOUBLE_EQ(t1, 1.0);
    EXPECT_DOUBLE_EQ(t2, 1.0);
}

TEST(TimeConstants, FactorableQuadratic)
{
    TfCoeffs tf;
    tf.a1 = 3.0;
    tf.a2 = 2.0;
    const auto [t1, t2] = time_constants(tf);
    EXPECT_DOUBLE_EQ(t1, 0.5);
    EXPECT_DOUBLE_EQ(t2, 1.0);
}

TEST(Recovery, RandomRoundTrip)
{
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> logu(-3.0, 1.0);
    int done = 0;
    while (done < 1000) {
        EcmParams p;
        p.r0 = std::pow(10.0, logu(rng) - 1.0);
        p.r1 = std::pow(10.0, logu(rng) - 1.0);
        p.r2 = std::pow(10.0, logu(rng) - 1.0);
        p.c1 = std::pow(10.0, logu(rng) + 3.0);
        p.c2 = std::pow(10.0, logu(rng) + 3.0);
        const double ratio = p.tau1() / p.tau2();
        if (ratio > 0.9 && ratio < 1.0 / 0.9) {
            continue;
        }
        if (p.tau1() > p.tau2()) {
            std::swap(p.r1, p.r2);
            std::swap(p.c1, p.c2);
        }
        // A cut-off between the two poles keeps the map well conditioned.
        const double nu = 1.0 / std::sqrt(p.tau1() * p.tau2());
        const TildeCoeffs t = tf_to_tilde(physical_to_tf(p), nu);
        const TfCoeffs tf = tilde_to_tf(t.a, t.b, nu);
        const PhysicalEstimate est = tf_to_physical(tf);
        ASSERT_FALSE(est.non_physical);
        EXPECT_LT(rel(est.params.r0, p.r0), 1e-8);
        EXPECT_LT(rel(est.params.r1, p.r1), 1e-8);
        EXPECT_LT(rel(est.params.r2, p.r2), 1e-8);
        EXPECT_LT(rel(est.params.c1, p.c1), 1e-8);
        EXPECT_LT(rel(est.params.c2, p.c2), 1e-8);
        EXPECT_LE(est.tau1, est.tau2);
        EXPECT_EQ(est.params.r0, tf.b0);
        ++done;
    }
}
