#include "ecmid/laguerre.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

using namespace ecmid;
using cplx = std::complex<double>;

namespace {

// Continuous step responses of L0, L1, L2 at x = nu t.
double step_response(int k, double x)
{
    const double e = std::exp(-x);
    switch (k) {
    case 0: return 2.0 * (1.0 - e);
    case 1: return -2.0 + 2.0 * e + 4.0 * x * e;
    default: return 2.0 - 2.0 * e - 4.0 * x * x * e;
    }
}

} // namespace

TEST(TfEval, DcGains)
{
    EXPECT_NEAR(std::abs(tf_eval(0, 0.3, 0.0) - cplx(2.0)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(tf_eval(1, 0.3, 0.0) - cplx(-2.0)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(tf_eval(2, 0.3, 0.0) - cplx(2.0)), 0.0, 1e-15);
}

TEST(TfEval, StrictlyProper)
{
    EXPECT_LT(std::abs(tf_eval(0, 1.0, cplx(0.0, 1e9))), 1e-8);
}

TEST(TfEval, PoleIsAnError)
{
    try {
        (void)tf_eval(0, 2.0, cplx(-2.0, 0.0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PoleEvaluation);
    }
}

TEST(CoeffTransform, ZeroPolynomialCollapses)
{
    const LagCoeffs c = coeff_transform(0.0, 0.0, 1.0, 0.0, 0.0, 1.0);
    EXPECT_DOUBLE_EQ(c.abar[0], 1.0);
    EXPECT_DOUBLE_EQ(c.abar[1], 2.0);
    EXPECT_DOUBLE_EQ(c.abar[2], 1.0);
}

TEST(CoeffTransform, ReferenceBatteryAtSlowCutoff)
{
    const double a1 = 1.0 / 18.0 + 1.0 / 100.0;
    const double a2 = 1.0 / 1800.0;
    const LagCoeffs c = coeff_transform(a1, a2, 0.06, 0.0, 0.0, 1e-3);
    EXPECT_NEAR(c.abar[0], 4.91e-4, 1e-15);
    EXPECT_NEAR(c.abar[1], -1.1091111111111111e-3, 1e-15);
    EXPECT_NEAR(c.abar[2], 6.2211111111111111e-4, 1e-15);
}

TEST(CoeffTransform, NumeratorOnlyB0)
{
    const LagCoeffs c = coeff_transform(0.0, 0.0, 1.0, 0.0, 0.0, 2.0);
    EXPECT_DOUBLE_EQ(c.bbar[0], 4.0);
    EXPECT_DOUBLE_EQ(c.bbar[1], 8.0);
    EXPECT_DOUBLE_EQ(c.bbar[2], 4.0);
}

TEST(CoeffTransform, DegenerateWhenCutoffIsABatteryPole)
{
    // nu^2 - a1 nu + a2 = 0 for nu = 1, a1 = 2, a2 = 1.
    try {
        (void)coeff_transform(2.0, 1.0, 1.0, 0.0, 0.0, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DegenerateBank);
    }
}

TEST(CoeffTransform, RationalFunctionIdentity)
{
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::uniform_real_distribution<double> pos(0.01, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        const double nu = pos(rng);
        const double a1 = pos(rng);
        const double a2 = pos(rng);
        const cplx s(u(rng), u(rng));
        const LagCoeffs c = coeff_transform(a1, a2, 0.0, 0.0, 0.0, nu);
        const cplx lhs = c.abar[0] * tf_eval(2, nu, s) + c.abar[1] * tf_eval(1, nu, s) + c.abar[2] * tf_eval(0, nu, s);
        const cplx rhs = 4.0 * nu * nu * (s * s + a1 * s + a2) * 2.0 * nu / std::pow(s + nu, 3);
        EXPECT_LT(std::abs(lhs - rhs), 1e-10 * std::abs(rhs)) << "trial " << trial;
    }
}

TEST(Discretize, PoleAtSlowCutoff)
{
    EXPECT_NEAR(discretize(1e-3, 1.0).pole(), 0.999000499833375, 1e-15);
}

TEST(Discretize, PreconditionOnNuTs)
{
    EXPECT_THROW((void)discretize(20.0, 1.0), Error);
}

TEST(Discretize, StepResponseMatchesContinuousFilters)
{
    for (const double nu : {1e-3, 0.1, 2.0}) {
        const double ts = 0.5;
        const LaguerreBank bank = discretize(nu, ts);
        const Eigen::Index n = 4000;
        const Eigen::MatrixX3d y = filter_signal(bank, Eigen::VectorXd::Ones(n));
        for (Eigen::Index j = 0; j < n; ++j) {
            const double x = nu * ts * static_cast<double>(j);
            for (int k = 0; k < 3; ++k) {
                const double exact = step_response(k, x);
                EXPECT_NEAR(y(j, k), exact, 1e-10 * std::max(std::abs(exact), 1.0))
                    << "nu " << nu << " sample " << j << " L" << k;
            }
        }
    }
}

TEST(FilterSignal, DcGains)
{
    const LaguerreBank bank = discretize(1.0, 0.1);
    const Eigen::MatrixX3d y = filter_signal(bank, Eigen::VectorXd::Ones(1000));
    EXPECT_NEAR(y(999, 0), 2.0, 1e-10);
    EXPECT_NEAR(y(999, 1), -2.0, 1e-10);
    EXPECT_NEAR(y(999, 2), 2.0, 1e-10);
}

TEST(FilterSignal, ZeroInZeroOut)
{
    const Eigen::MatrixX3d y = filter_signal(discretize(0.1, 1.0), Eigen::VectorXd::Zero(50));
    EXPECT_TRUE(y.isZero(0.0));
}

TEST(FilterSignal, ImpulseMatchesFirstOrderLag)
{
    // A unit sample held for one interval: L0 output is
    // 2 (1 - e^{-nu ts}) e^{-nu ts (j-1)} for j >= 1.
    const double nu = 0.05;
    const double ts = 1.0;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(300);
    x[0] = 1.0;
    const Eigen::MatrixX3d y = filter_signal(discretize(nu, ts), x);
    EXPECT_EQ(y(0, 0), 0.0);
    const double e = std::exp(-nu * ts);
    for (Eigen::Index j = 1; j < 300; ++j) {
        const double exact = 2.0 * (1.0 - e) * std::pow(e, static_cast<double>(j - 1));
        EXPECT_NEAR(y(j, 0), exact, 1e-10 * exact);
    }
}

TEST(FilterSignal, Linear)
{
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    Eigen::VectorXd a(2000), b(2000);
    for (Eigen::Index j = 0; j < 2000; ++j) {
        a[j] = g(rng);
        b[j] = g(rng);
    }
    const LaguerreBank bank = discretize(0.1, 1.0);
    for (const Hold hold : {Hold::Zero, Hold::First}) {
        const Eigen::MatrixX3d lhs = filter_signal(bank, (1.5 * a - 0.25 * b).eval(), hold);
        const Eigen::MatrixX3d rhs = 1.5 * filter_signal(bank, a, hold) - 0.25 * filter_signal(bank, b, hold);
        EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(FilterSignal, FirstOrderHoldIsExactForRamps)
{
    // L0 of the ramp t: 2 (t - (1 - e^{-nu t}) / nu).
    const double nu = 0.2;
    const double ts = 0.7;
    const Eigen::Index n = 200;
    const Eigen::VectorXd ramp = Eigen::VectorXd::LinSpaced(n, 0.0, ts * static_cast<double>(n - 1));
    const Eigen::MatrixX3d y = filter_signal(discretize(nu, ts), ramp, Hold::First);
    for (Eigen::Index j = 0; j + 1 < n; ++j) {
        const double t = ramp[j];
        const double exact = 2.0 * (t - (1.0 - std::exp(-nu * t)) / nu);
        EXPECT_NEAR(y(j, 0), exact, 1e-10 * std::max(exact, 1.0));
    }
}

TEST(FilterSignal, StableOnLongInputs)
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd x(1000000);
    for (auto& v : x) {
        v = u(rng);
    }
    const Eigen::MatrixX3d y = filter_signal(discretize(1e-3, 1.0), x);
    EXPECT_TRUE(y.allFinite());
    // |L_k| is bounded by the l1 norm of the impulse responses, at most 2 + 4 + 4.
    EXPECT_LT(y.cwiseAbs().maxCoeff(), 10.0);
}

TEST(FilterSignal, EmptyInput)
{
    try {
        (void)filter_signal(discretize(0.1, 1.0), Eigen::VectorXd());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
    }
}

TEST(BurnIn, RuleAndCap)
{
    EXPECT_EQ(burn_in_rows(0.1, 1.0, 3600), 50);
    EXPECT_EQ(burn_in_rows(1e-3, 1.0, 3600), 720);
}
