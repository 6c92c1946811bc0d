#pragma once

// Laguerre filter bank L_k(s) = 2nu/(s+nu) * ((s-nu)/(s+nu))^k, k = 0, 1, 2.
//
// The three filters share one 3-state cascade: a first-order lag 2nu/(s+nu)
// followed by two all-pass sections. With x1 = L0 u, x2 = L0 x1 and
// x3 = L0 (x1 - x2) the outputs are
//
//   L0 u = x1,   L1 u = x1 - x2,   L2 u = x1 - x2 - x3,
//
// and the state matrix is A = -nu I + N with N strictly lower triangular
// (N^3 = 0), so exp(A t) = e^{-nu t} (I + N t + N^2 t^2 / 2) in closed form.

#include "ecmid/error.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <string>

namespace ecmid {

inline constexpr int kLaguerreOrder = 2;

/// Continuous-time gain of L_k at complex frequency s.
inline std::complex<double> tf_eval(int k, double nu, std::complex<double> s)
{
    require(k >= 0, ErrorCode::InvalidArgument, "filter index must be >= 0");
    require(nu > 0.0, ErrorCode::InvalidArgument, "nu must be > 0");
    const std::complex<double> den = s + nu;
    require(std::abs(den) > 0.0, ErrorCode::PoleEvaluation, "evaluation at the pole s = -nu");
    return (2.0 * nu / den) * std::pow((s - nu) / den, k);
}

/// Coefficients of the transfer function rewritten on the Laguerre basis.
struct LagCoeffs {
    std::array<double, 3> abar{};
    std::array<double, 3> bbar{};
};

inline LagCoeffs coeff_transform(double a1, double a2, double b0, double b1, double b2, double nu)
{
    require(nu > 0.0, ErrorCode::InvalidArgument, "nu must be > 0");
    const double nu2 = nu * nu;
    LagCoeffs c;
    c.abar = {nu2 - a1 * nu + a2, 2.0 * nu2 - 2.0 * a2, nu2 + a1 * nu + a2};
    c.bbar = {b0 * nu2 - b1 * nu + b2, 2.0 * b0 * nu2 - 2.0 * b2, b0 * nu2 + b1 * nu + b2};
    const double scale = std::max({nu2, std::abs(a1 * nu), std::abs(a2)});
    require(std::abs(c.abar[0]) > 1e-14 * scale, ErrorCode::DegenerateBank,
            "abar0 = nu^2 - a1 nu + a2 vanishes: nu coincides with a pole of the battery model");
    return c;
}

namespace detail {

/// J_n = int_0^T tau^n e^{-nu tau} dtau for n = 0..3.
inline std::array<double, 4> exp_moments(double nu, double T)
{
    std::array<double, 4> J{};
    const double x = nu * T;
    if (x < 1.0) {
        // Alternating series; the first term dominates for x < 1.
        for (int n = 0; n < 4; ++n) {
            double term = 1.0;  // (-x)^k / k!
            double sum = 0.0;
            for (int k = 0; k < 60; ++k) {
                const double contrib = term / static_cast<double>(n + k + 1);
                sum += contrib;
                if (std::abs(contrib) < 1e-18 * std::abs(sum)) {
                    break;
                }
                term *= -x / static_cast<double>(k + 1);
            }
            J[n] = std::pow(T, n + 1) * sum;
        }
        return J;
    }
    // J_n = n!/nu^{n+1} (1 - e^{-x} sum_{k<=n} x^k/k!)
    const double e = std::exp(-x);
    double partial = 0.0;
    double term = 1.0;
    double factorial = 1.0;
    for (int n = 0; n < 4; ++n) {
        if (n > 0) {
            factorial *= n;
            term *= x / n;
        }
        partial += term;
        J[n] = factorial / std::pow(nu, n + 1) * (1.0 - e * partial);
    }
    return J;
}

} // namespace detail

/// Discrete realization of the cascade at sampling interval ts.
///
/// Zero-order hold: x[j+1] = Ad x[j] + Bd u[j].
/// First-order hold (u linear between samples):
///   x[j+1] = Ad x[j] + (Bd - W) u[j] + W u[j+1].
/// Outputs are read before the update, so y[j] = C x[j] with x[0] = 0.
struct LaguerreBank {
    double nu = 0.0;
    double ts = 0.0;
    Eigen::Matrix3d Ad;
    Eigen::Vector3d Bd;
    Eigen::Vector3d W;
    /// Row k maps the state to L_k u.
    Eigen::Matrix3d C;

    [[nodiscard]] double pole() const noexcept { return std::exp(-nu * ts); }

    /// Continuous-time realization (A, B) of the cascade.
    static Eigen::Matrix3d continuous_a(double nu)
    {
        Eigen::Matrix3d A;
        A << -nu, 0.0, 0.0, 2.0 * nu, -nu, 0.0, 2.0 * nu, -2.0 * nu, -nu;
        return A;
    }
    static Eigen::Vector3d continuous_b(double nu) { return Eigen::Vector3d(2.0 * nu, 0.0, 0.0); }
    static Eigen::Matrix3d output_matrix()
    {
        Eigen::Matrix3d C;
        C << 1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, -1.0;
        return C;
    }
};

inline LaguerreBank discretize(double nu, double ts)
{
    require(nu > 0.0 && ts > 0.0, ErrorCode::InvalidArgument, "nu and ts must be > 0");
    require(nu * ts < 10.0, ErrorCode::InvalidArgument, "nu * ts must be < 10");
    const double e = std::exp(-nu * ts);
    const double nu2 = nu * nu;
    const double nu3 = nu2 * nu;

    Eigen::Matrix3d N = Eigen::Matrix3d::Zero();
    N(1, 0) = 2.0 * nu;
    N(2, 0) = 2.0 * nu;
    N(2, 1) = -2.0 * nu;
    const Eigen::Matrix3d N2 = N * N;

    LaguerreBank bank;
    bank.nu = nu;
    bank.ts = ts;
    bank.Ad = e * (Eigen::Matrix3d::Identity() + N * ts + 0.5 * ts * ts * N2);

    // B = (2nu, 0, 0): N B = (0, 4nu^2, 4nu^2), N^2 B = (0, 0, -8nu^3).
    const auto J = detail::exp_moments(nu, ts);
    bank.Bd = Eigen::Vector3d(2.0 * nu * J[0], 4.0 * nu2 * J[1], 4.0 * nu2 * J[1] - 4.0 * nu3 * J[2]);
    const Eigen::Vector3d K1(2.0 * nu * J[1], 4.0 * nu2 * J[2], 4.0 * nu2 * J[2] - 4.0 * nu3 * J[3]);
    bank.W = bank.Bd - K1 / ts;
    bank.C = LaguerreBank::output_matrix();
    return bank;
}

/// How a sampled signal behaves between samples when filtered.
enum class Hold {
    Zero,   ///< piecewise constant (exact for ZOH inputs)
    First,  ///< piecewise linear between consecutive samples
};

/// Filters x through L0, L1, L2 from rest. Column k of the result is [L_k x].
template <class Derived>
Eigen::MatrixX3d filter_signal(const LaguerreBank& bank, const Eigen::MatrixBase<Derived>& x, Hold hold = Hold::Zero)
{
    const Eigen::Index n = x.size();
    require(n > 0, ErrorCode::EmptyInput, "cannot filter an empty signal");
    Eigen::MatrixX3d out(n, 3);
    Eigen::Vector3d state = Eigen::Vector3d::Zero();
    const Eigen::Vector3d b_now = hold == Hold::Zero ? bank.Bd : Eigen::Vector3d(bank.Bd - bank.W);
    for (Eigen::Index j = 0; j < n; ++j) {
        out.row(j) = (bank.C * state).transpose();
        state = bank.Ad * state + b_now * x[j];
        if (hold == Hold::First) {
            // The last sample is held flat beyond the record.
            state += bank.W * (j + 1 < n ? x[j + 1] : x[j]);
        }
    }
    return out;
}

/// Rows at the start of a record dominated by the unknown initial filter
/// and battery states: ceil(5 / (nu ts)), at most 20% of the record.
inline Eigen::Index burn_in_rows(double nu, double ts, Eigen::Index record_length)
{
    const double wanted = std::ceil(5.0 / (nu * ts));
    const auto cap = static_cast<Eigen::Index>(std::floor(0.2 * static_cast<double>(record_length)));
    return std::min<Eigen::Index>(cap, static_cast<Eigen::Index>(wanted));
}

} // namespace ecmid
