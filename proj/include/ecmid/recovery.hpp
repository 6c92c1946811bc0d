#pragma once

// Back-transformation from Laguerre-normalized coefficients to the battery
// transfer function G(s) = (b0 s^2 + b1 s + b2) / (s^2 + a1 s + a2) and on to
// the physical circuit values.

#include "ecmid/ecm_sim.hpp"
#include "ecmid/error.hpp"
#include "ecmid/laguerre.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <utility>

namespace ecmid {

struct TfCoeffs {
    double a1 = 0.0;
    double a2 = 0.0;
    double b0 = 0.0;
    double b1 = 0.0;
    double b2 = 0.0;
    /// Set when a1 or a2 came out <= 0 (an unstable or marginal model).
    bool negative_coefficient = false;
};

/// Coefficients normalized by abar0: a_tilde = (abar1, abar2)/abar0,
/// b_tilde = (bbar0, bbar1, bbar2)/abar0.
struct TildeCoeffs {
    Eigen::Vector2d a;
    Eigen::Vector3d b;
};

inline TfCoeffs physical_to_tf(const EcmParams& p)
{
    validate(p);
    const double inv1 = 1.0 / p.tau1();
    const double inv2 = 1.0 / p.tau2();
    TfCoeffs tf;
    tf.a1 = inv1 + inv2;
    tf.a2 = inv1 * inv2;
    tf.b0 = p.r0;
    tf.b1 = p.r0 * tf.a1 + 1.0 / p.c1 + 1.0 / p.c2;
    tf.b2 = (p.r0 + p.r1 + p.r2) * tf.a2;
    return tf;
}

inline TildeCoeffs normalize(const LagCoeffs& c)
{
    const double a0 = c.abar[0];
    return TildeCoeffs{Eigen::Vector2d(c.abar[1] / a0, c.abar[2] / a0),
                       Eigen::Vector3d(c.bbar[0] / a0, c.bbar[1] / a0, c.bbar[2] / a0)};
}

inline TildeCoeffs tf_to_tilde(const TfCoeffs& tf, double nu)
{
    return normalize(coeff_transform(tf.a1, tf.a2, tf.b0, tf.b1, tf.b2, nu));
}

/// Inverts the Laguerre coefficient map. The a_tilde relations are linear in
/// (a1, a2):
///   -at1 nu a1 + (at1 + 2) a2 = (2 - at1) nu^2
///   -(at2 + 1) nu a1 + (at2 - 1) a2 = (1 - at2) nu^2
/// after which bbar = b_tilde * abar0 and (b0, b1, b2) follow in closed form.
inline TfCoeffs tilde_to_tf(const Eigen::Vector2d& a_tilde, const Eigen::Vector3d& b_tilde, double nu)
{
    require(nu > 0.0, ErrorCode::InvalidArgument, "nu must be > 0");
    const double nu2 = nu * nu;
    const double at1 = a_tilde[0];
    const double at2 = a_tilde[1];

    const double m11 = -at1 * nu;
    const double m12 = at1 + 2.0;
    const double m21 = -(at2 + 1.0) * nu;
    const double m22 = at2 - 1.0;
    const double r1 = (2.0 - at1) * nu2;
    const double r2 = (1.0 - at2) * nu2;
    const double det = m11 * m22 - m12 * m21;
    const double scale = std::max(std::abs(m11 * m22), std::abs(m12 * m21));
    require(scale > 0.0 && std::abs(det) > 1e-13 * scale, ErrorCode::SingularSystem,
            "a_tilde does not determine (a1, a2) at this nu");

    TfCoeffs tf;
    tf.a1 = (r1 * m22 - m12 * r2) / det;
    tf.a2 = (m11 * r2 - r1 * m21) / det;

    const double abar0 = nu2 - tf.a1 * nu + tf.a2;
    const Eigen::Vector3d bbar = b_tilde * abar0;
    tf.b0 = (bbar[0] + bbar[1] + bbar[2]) / (4.0 * nu2);
    tf.b1 = (bbar[2] - bbar[0]) / (2.0 * nu);
    tf.b2 = (bbar[0] - bbar[1] + bbar[2]) / 4.0;
    tf.negative_coefficient = !(tf.a1 > 0.0) || !(tf.a2 > 0.0);
    return tf;
}

/// Ascending time constants 1/p for the roots p of x^2 - a1 x + a2.
inline std::pair<double, double> time_constants(const TfCoeffs& tf)
{
    const double disc = tf.a1 * tf.a1 - 4.0 * tf.a2;
    require(disc >= -1e-12 * tf.a1 * tf.a1, ErrorCode::ComplexTimeConstants,
            "a1^2 - 4 a2 < 0: the identified poles are complex");
    require(tf.a2 != 0.0 && tf.a1 != 0.0, ErrorCode::ComplexTimeConstants, "a pole sits at the origin");
    const double root = std::sqrt(std::max(disc, 0.0));
    // Larger-magnitude root first, the other from the product a2.
    const double p_big = 0.5 * (tf.a1 + std::copysign(root, tf.a1));
    const double p_small = tf.a2 / p_big;
    double t_a = 1.0 / p_big;
    double t_b = 1.0 / p_small;
    if (t_a > t_b) {
        std::swap(t_a, t_b);
    }
    return {t_a, t_b};
}

struct PhysicalEstimate {
    /// capacity_ah is left at 0: it is not observable from G(s).
    EcmParams params{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    double tau1 = 0.0;
    double tau2 = 0.0;
    /// Some resistance or capacitance came out <= 0 or non-finite.
    bool non_physical = false;
    /// tau1 == tau2: the branch split is not identifiable and was set evenly.
    bool degenerate_split = false;
    bool negative_coefficient = false;
};

/// Physical values from G(s). The fast pole is assigned to (R1, C1) and the
/// slow pole to (R2, C2). Non-physical results are flagged, never clipped.
inline PhysicalEstimate tf_to_physical(const TfCoeffs& tf)
{
    const auto [tau1, tau2] = time_constants(tf);
    PhysicalEstimate est;
    est.tau1 = tau1;
    est.tau2 = tau2;
    est.negative_coefficient = tf.negative_coefficient;

    const double r0 = tf.b0;
    const double r_sum = tf.b2 / tf.a2 - r0;        // R1 + R2
    const double c_inv_sum = tf.b1 - r0 * tf.a1;    // R1/tau1 + R2/tau2
    const double p1 = 1.0 / tau1;
    const double p2 = 1.0 / tau2;
    double r1 = 0.0;
    double r2 = 0.0;
    if (std::abs(p1 - p2) <= 1e-9 * p1) {
        est.degenerate_split = true;
        const bool consistent = std::abs(c_inv_sum - r_sum * p1) <= 1e-9 * std::max(std::abs(c_inv_sum), 1e-300);
        r1 = r2 = 0.5 * r_sum;
        est.non_physical = !consistent;
    } else {
        r1 = (c_inv_sum - r_sum * p2) / (p1 - p2);
        r2 = r_sum - r1;
    }
    est.params.r0 = r0;
    est.params.r1 = r1;
    est.params.r2 = r2;
    est.params.c1 = tau1 / r1;
    est.params.c2 = tau2 / r2;
    const std::array<double, 5> values{r0, r1, r2, est.params.c1, est.params.c2};
    for (double v : values) {
        if (!std::isfinite(v) || v <= 0.0) {
            est.non_physical = true;
        }
    }
    return est;
}

} // namespace ecmid
