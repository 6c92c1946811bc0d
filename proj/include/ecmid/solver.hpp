#pragma once

// Rank + L1 regularized least squares
//
//   min  ||y - Pi phi - F vec(M)||^2 + lambda1 ||P||_* + lambda2 ||Dg3 gamma||_1,
//   P  = [ M       a~ ]
//        [ gamma^T  1 ]
//
// solved by ADMM with splitting variables Z = P and w = Dg3 gamma. The
// regression columns are normalized, so the iteration runs on u = S x with
// S the column scales; P and Dg3 gamma are affine maps of u.

#include "ecmid/error.hpp"
#include "ecmid/regression.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace ecmid {

struct SolverSettings {
    int max_iters = 5000;
    double abs_tol = 1e-8;
    double rel_tol = 1e-6;
    /// Initial penalty; adapted by residual balancing every `adapt_every`
    /// iterations when primal and dual residuals differ by more than `mu`.
    double rho = 1.0;
    double mu = 10.0;
    double tau_incr = 2.0;
    int adapt_every = 10;
    /// Newton refinement on the face (zero pattern of Dg3 gamma, smooth
    /// nuclear norm) found by the iteration; kept only if it lowers the
    /// objective.
    bool polish = true;
    /// Over-relaxation factor in (0, 2); 1 is plain ADMM.
    double relaxation = 1.0;
    /// Adapted penalties stay within [rho * rho_range_min, rho * rho_range_max].
    double rho_range_min = 1e-4;
    double rho_range_max = 1e4;
    /// Replace a~ and gamma by the leading singular pair of P.
    bool rank_one_projection = false;
    /// Re-estimate (b~, gamma) with a~ fixed and M = a~ gamma^T enforced
    /// exactly. The relaxed problem leaves directions that trade the OCV
    /// against the current terms almost free, so without this step b~ and
    /// gamma are poorly determined even when a~ is accurate.
    bool consistency_refit = true;
    /// Receives one line per iteration (iteration, objective, residuals).
    std::function<void(const std::string&)> trace_sink;
};

struct Diagnostics {
    /// Lowest objective seen up to each iteration (non-increasing).
    std::vector<double> objective;
    /// Objective of the iterate produced at each iteration.
    std::vector<double> raw_objective;
    std::vector<double> primal_residual;
    std::vector<double> dual_residual;
    int iterations = 0;
    bool converged = false;
    /// The final point came from the Newton refinement.
    bool polished = false;
    Eigen::VectorXd p_singular_values;
    /// Objective of the returned solution of the relaxed problem.
    double final_objective = std::numeric_limits<double>::quiet_NaN();
    /// Residual norm after the consistency refit (if it ran).
    double refit_residual = std::numeric_limits<double>::quiet_NaN();
};

struct Solution {
    Eigen::Vector2d a_tilde = Eigen::Vector2d::Zero();
    Eigen::Vector3d b_tilde = Eigen::Vector3d::Zero();
    Eigen::VectorXd gamma;
    /// 2 x h bilinear block.
    Eigen::MatrixXd M;
    /// Raw solution of the relaxed problem before any post-processing.
    Eigen::VectorXd phi;
    Eigen::VectorXd vec_m;
    Diagnostics diagnostics;
};

/// Singular-value soft thresholding U max(S - t, 0) V^T.
inline Eigen::MatrixXd prox_nuclear(const Eigen::MatrixXd& X, double t)
{
    require(t >= 0.0, ErrorCode::InvalidArgument, "threshold must be >= 0");
    require(X.allFinite(), ErrorCode::SvdFailure, "non-finite matrix");
    if (t == 0.0 || X.size() == 0) {
        return X;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    require(svd.info() == Eigen::Success, ErrorCode::SvdFailure, "SVD did not converge");
    const Eigen::VectorXd shrunk = (svd.singularValues().array() - t).max(0.0).matrix();
    return svd.matrixU() * shrunk.asDiagonal() * svd.matrixV().transpose();
}

/// Elementwise soft thresholding sign(x) max(|x| - t, 0).
inline Eigen::VectorXd prox_l1(const Eigen::VectorXd& x, double t)
{
    require(t >= 0.0, ErrorCode::InvalidArgument, "threshold must be >= 0");
    return x.array().sign() * (x.array().abs() - t).max(0.0);
}

inline double nuclear_norm(const Eigen::MatrixXd& X)
{
    return Eigen::JacobiSVD<Eigen::MatrixXd>(X).singularValues().sum();
}

/// P = [[M, a~], [gamma^T, 1]] from raw unknowns.
inline Eigen::MatrixXd structured_p(const Eigen::Vector2d& a_tilde, const Eigen::VectorXd& gamma,
                                    const Eigen::MatrixXd& M)
{
    const auto h = gamma.size();
    Eigen::MatrixXd P(3, h + 1);
    P.topLeftCorner(2, h) = M;
    P.topRightCorner(2, 1) = a_tilde;
    P.bottomLeftCorner(1, h) = gamma.transpose();
    P(2, h) = 1.0;
    return P;
}

/// Objective of the relaxed problem at raw unknowns (phi, vec(M)).
inline double objective(const IdProblem& prob, const IdConfig& cfg, const Eigen::VectorXd& phi,
                        const Eigen::VectorXd& vec_m)
{
    const auto h = prob.h;
    const Eigen::VectorXd gamma = phi.tail(h);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> M(vec_m.data(), 2,
                                                                                                      h);
    double value = residual(prob, phi, vec_m).squaredNorm();
    if (cfg.lambda1 > 0.0) {
        value += cfg.lambda1 * nuclear_norm(structured_p(phi.head<2>(), gamma, M));
    }
    if (cfg.lambda2 > 0.0) {
        value += cfg.lambda2 * (prob.dg3 * gamma).lpNorm<1>();
    }
    return value;
}

namespace detail {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Entry (row, col) of the 3 x (h+1) matrix P equals u[index] / scale.
struct PEntry {
    Eigen::Index row;
    Eigen::Index col;
    Eigen::Index index;
    double scale;
};

/// min ||y - A u||^2 + l1 ||Q(u) + E||_* + l2 ||R u||_1 over u, where Q
/// places selected (rescaled) entries of u into a p_rows x p_cols matrix and
/// E holds the constant entries.
struct SplitProblem {
    const Eigen::MatrixXd* A = nullptr;
    const Eigen::VectorXd* y = nullptr;
    Eigen::Index p_rows = 0;
    Eigen::Index p_cols = 0;
    std::vector<PEntry> p_entries;
    Eigen::MatrixXd p_const;
    double lambda1 = 0.0;
    /// R already folds in the column scaling; zero rows removed.
    Eigen::MatrixXd R;
    double lambda2 = 0.0;
};

struct SplitResult {
    Eigen::VectorXd u;
    Diagnostics diag;
};

inline Eigen::MatrixXd apply_q(const SplitProblem& sp, const Eigen::VectorXd& u)
{
    Eigen::MatrixXd P = sp.p_const;
    for (const auto& e : sp.p_entries) {
        P(e.row, e.col) += u[e.index] / e.scale;
    }
    return P;
}

inline Eigen::VectorXd apply_qt(const SplitProblem& sp, const Eigen::MatrixXd& X, Eigen::Index n)
{
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (const auto& e : sp.p_entries) {
        out[e.index] += X(e.row, e.col) / e.scale;
    }
    return out;
}

/// Installs R scaled to unit spectral norm, with lambda2 rescaled so that
/// lambda2 ||R u||_1 is unchanged. Keeps the w-block on the scale of the
/// normalized data term, which the penalty adaptation assumes.
inline void normalize_l1_block(SplitProblem& sp, const Eigen::MatrixXd& R)
{
    if (R.rows() == 0) {
        sp.R = R;
        return;
    }
    const double norm = Eigen::JacobiSVD<Eigen::MatrixXd>(R).singularValues()(0);
    require(std::isfinite(norm) && norm > 0.0, ErrorCode::NumericalFailure, "degenerate difference block");
    sp.R = R / norm;
    sp.lambda2 *= norm;
}

inline double split_objective(const SplitProblem& sp, const Eigen::VectorXd& u)
{
    double value = (*sp.y - *sp.A * u).squaredNorm();
    if (sp.lambda1 > 0.0) {
        value += sp.lambda1 * nuclear_norm(apply_q(sp, u));
    }
    if (sp.lambda2 > 0.0 && sp.R.rows() > 0) {
        value += sp.lambda2 * (sp.R * u).lpNorm<1>();
    }
    return value;
}

/// Gradient of ||Q(u) + E||_* where P = Q(u) + E has full row rank.
inline std::optional<Eigen::VectorXd> nuclear_gradient(const SplitProblem& sp, const Eigen::VectorXd& u)
{
    const Eigen::MatrixXd P = apply_q(sp, u);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(P, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (!(sv.minCoeff() > 1e-9 * sv.maxCoeff())) {
        return std::nullopt;  // not differentiable
    }
    return apply_qt(sp, svd.matrixU() * svd.matrixV().transpose(), u.size());
}

/// Newton refinement on the face selected by the ADMM iterate: rows of R u
/// that the L1 prox set to zero are held at zero, the others keep their
/// sign, and the nuclear norm is treated as smooth (P of full row rank).
/// The step is accepted only through a line search on the true objective.
/// Returns false when the face is not smooth or no progress was made.
inline bool polish(const SplitProblem& sp, const Eigen::MatrixXd& AtA, const Eigen::VectorXd& Aty,
                   Eigen::VectorXd& u, const Eigen::VectorXd& w)
{
    const Eigen::Index n = u.size();
    const bool use_p = sp.lambda1 > 0.0;
    const bool use_w = w.size() > 0;

    std::vector<Eigen::Index> zero_rows;
    std::vector<Eigen::Index> free_rows;
    Eigen::VectorXd sign_free;
    if (use_w) {
        std::vector<double> signs;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            if (w[i] == 0.0) {
                zero_rows.push_back(i);
            } else {
                free_rows.push_back(i);
                signs.push_back(w[i] > 0.0 ? 1.0 : -1.0);
            }
        }
        sign_free = Eigen::Map<Eigen::VectorXd>(signs.data(), static_cast<Eigen::Index>(signs.size()));
    }

    // Basis N of the null space of the held rows; u moves as u + N z.
    Eigen::MatrixXd N = Eigen::MatrixXd::Identity(n, n);
    if (!zero_rows.empty()) {
        const Eigen::MatrixXd Rz = sp.R(zero_rows, Eigen::all);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(Rz, Eigen::ComputeFullV | Eigen::ComputeThinU);
        svd.setThreshold(1e-10);
        const Eigen::Index rank = svd.rank();
        N = svd.matrixV().rightCols(n - rank);
        // Project onto the face.
        u -= svd.solve(Rz * u);
    }
    if (N.cols() == 0) {
        return false;
    }
    Eigen::VectorXd l1_linear = Eigen::VectorXd::Zero(n);
    if (use_w && !free_rows.empty()) {
        l1_linear = sp.lambda2 * sp.R(free_rows, Eigen::all).transpose() * sign_free;
    }

    const auto gradient = [&](const Eigen::VectorXd& x) -> std::optional<Eigen::VectorXd> {
        Eigen::VectorXd g = 2.0 * (AtA * x - Aty) + l1_linear;
        if (use_p) {
            const auto gn = nuclear_gradient(sp, x);
            if (!gn) {
                return std::nullopt;
            }
            g += sp.lambda1 * *gn;
        }
        return g;
    };

    double f = split_objective(sp, u);
    bool improved = false;
    for (int iter = 0; iter < 30; ++iter) {
        const auto g = gradient(u);
        if (!g) {
            break;
        }
        const Eigen::VectorXd gz = N.transpose() * *g;
        Eigen::MatrixXd H = 2.0 * N.transpose() * AtA * N;
        if (use_p) {
            // Central differences of the nuclear-norm gradient along N.
            const double eps = 1e-6 * std::max(1.0, u.lpNorm<Eigen::Infinity>());
            Eigen::MatrixXd Hn(n, N.cols());
            bool ok = true;
            for (Eigen::Index j = 0; j < N.cols() && ok; ++j) {
                const auto gp = nuclear_gradient(sp, u + eps * N.col(j));
                const auto gm = nuclear_gradient(sp, u - eps * N.col(j));
                ok = gp && gm;
                if (ok) {
                    Hn.col(j) = (*gp - *gm) / (2.0 * eps);
                }
            }
            if (!ok) {
                break;
            }
            Eigen::MatrixXd Hz = N.transpose() * Hn;
            H += sp.lambda1 * 0.5 * (Hz + Hz.transpose());
        }
        H.diagonal().array() += 1e-14 * std::max(H.diagonal().maxCoeff(), 1e-300);
        Eigen::VectorXd dz = -H.ldlt().solve(gz);
        if (!dz.allFinite() || gz.dot(dz) >= 0.0) {
            dz = -gz;
        }
        const Eigen::VectorXd du = N * dz;
        const double slope = gz.dot(dz);
        double t = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 50; ++ls) {
            const Eigen::VectorXd trial = u + t * du;
            const double ft = split_objective(sp, trial);
            if (std::isfinite(ft) && ft <= f + 1e-4 * t * slope) {
                const double drop = f - ft;
                u = trial;
                f = ft;
                accepted = true;
                improved = improved || drop > 0.0;
                break;
            }
            t *= 0.5;
        }
        if (!accepted || std::abs(t * slope) <= 1e-16 * std::abs(f)) {
            break;
        }
    }
    return improved;
}

inline SplitResult run_admm(const SplitProblem& sp, const Eigen::VectorXd& u0, const SolverSettings& settings)
{
    require(settings.abs_tol > 0.0 && settings.rel_tol > 0.0, ErrorCode::InvalidArgument, "tolerances must be > 0");
    const Eigen::MatrixXd& A = *sp.A;
    const Eigen::VectorXd& y = *sp.y;
    const Eigen::Index n = A.cols();
    const bool use_p = sp.lambda1 > 0.0;
    const bool use_w = sp.lambda2 > 0.0 && sp.R.rows() > 0;

    SplitResult result;
    Diagnostics& diag = result.diag;

    const Eigen::MatrixXd AtA = A.transpose() * A;
    const Eigen::VectorXd Aty = A.transpose() * y;

    if (!use_p && !use_w) {
        // Plain least squares, minimum-norm where rank deficient.
        result.u = A.completeOrthogonalDecomposition().solve(y);
        diag.converged = true;
        const double obj = split_objective(sp, result.u);
        diag.objective.push_back(obj);
        diag.raw_objective.push_back(obj);
        diag.final_objective = obj;
        return result;
    }

    Eigen::VectorXd qtq = Eigen::VectorXd::Zero(n);
    for (const auto& e : sp.p_entries) {
        qtq[e.index] += 1.0 / (e.scale * e.scale);
    }
    const Eigen::MatrixXd RtR = use_w ? Eigen::MatrixXd(sp.R.transpose() * sp.R) : Eigen::MatrixXd::Zero(n, n);
    // Small proximal term keeps the u-system definite when M is unpenalized;
    // it is centred on the previous iterate so fixed points are unchanged.
    const double prox_weight = 1e-10 * std::max(AtA.diagonal().maxCoeff(), 1.0);

    double rho1 = settings.rho;
    double rho2 = settings.rho;
    const double alpha = settings.relaxation;
    require(alpha > 0.0 && alpha < 2.0, ErrorCode::InvalidArgument, "relaxation must lie in (0, 2)");
    const double rho_min = settings.rho * settings.rho_range_min;
    const double rho_max = settings.rho * settings.rho_range_max;
    Eigen::LDLT<Eigen::MatrixXd> kkt;
    const auto factor = [&] {
        Eigen::MatrixXd K = 2.0 * AtA;
        K.diagonal().array() += prox_weight;
        if (use_p) {
            K.diagonal() += rho1 * qtq;
        }
        if (use_w) {
            K += rho2 * RtR;
        }
        kkt.compute(K);
        require(kkt.info() == Eigen::Success, ErrorCode::NumericalFailure, "factorization failed");
    };
    factor();

    Eigen::VectorXd u = u0;
    Eigen::MatrixXd Z = use_p ? apply_q(sp, u) : Eigen::MatrixXd();
    Eigen::MatrixXd U1 = use_p ? Eigen::MatrixXd::Zero(sp.p_rows, sp.p_cols) : Eigen::MatrixXd();
    Eigen::VectorXd w = use_w ? Eigen::VectorXd(sp.R * u) : Eigen::VectorXd();
    Eigen::VectorXd U2 = use_w ? Eigen::VectorXd::Zero(sp.R.rows()) : Eigen::VectorXd();

    Eigen::VectorXd best_u = u;
    double best = split_objective(sp, u);
    const auto p_dim = static_cast<double>(sp.p_rows * sp.p_cols + (use_w ? sp.R.rows() : 0));

    for (int it = 1; it <= settings.max_iters; ++it) {
        Eigen::VectorXd rhs = 2.0 * Aty + prox_weight * u;
        if (use_p) {
            rhs += rho1 * apply_qt(sp, Z - sp.p_const - U1, n);
        }
        if (use_w) {
            rhs += rho2 * sp.R.transpose() * (w - U2);
        }
        u = kkt.solve(rhs);
        if (!u.allFinite()) {
            fail(ErrorCode::NumericalFailure, "iterate became non-finite at iteration " + std::to_string(it));
        }

        double r1 = 0.0;
        double s1 = 0.0;
        double r2 = 0.0;
        double s2 = 0.0;
        double primal_scale = 0.0;
        double dual_scale = 0.0;
        if (use_p) {
            const Eigen::MatrixXd Qu = apply_q(sp, u);
            const Eigen::MatrixXd Z_old = Z;
            const Eigen::MatrixXd Qr = alpha * Qu + (1.0 - alpha) * Z_old;
            Z = prox_nuclear(Qr + U1, sp.lambda1 / rho1);
            U1 += Qr - Z;
            r1 = (Qu - Z).norm();
            s1 = rho1 * apply_qt(sp, Z - Z_old, n).norm();
            primal_scale = std::max({primal_scale, Qu.norm(), Z.norm()});
            dual_scale = std::max(dual_scale, rho1 * apply_qt(sp, U1, n).norm());
        }
        if (use_w) {
            const Eigen::VectorXd Ru = sp.R * u;
            const Eigen::VectorXd w_old = w;
            const Eigen::VectorXd Rr = alpha * Ru + (1.0 - alpha) * w_old;
            w = prox_l1(Rr + U2, sp.lambda2 / rho2);
            U2 += Rr - w;
            r2 = (Ru - w).norm();
            s2 = rho2 * (sp.R.transpose() * (w - w_old)).norm();
            primal_scale = std::max({primal_scale, Ru.norm(), w.norm()});
            dual_scale = std::max(dual_scale, rho2 * (sp.R.transpose() * U2).norm());
        }

        const double obj = split_objective(sp, u);
        if (!std::isfinite(obj)) {
            fail(ErrorCode::NumericalFailure, "objective became non-finite at iteration " + std::to_string(it));
        }
        if (obj < best) {
            best = obj;
            best_u = u;
        }
        const double primal = std::hypot(r1, r2);
        const double dual = std::hypot(s1, s2);
        diag.raw_objective.push_back(obj);
        diag.objective.push_back(best);
        diag.primal_residual.push_back(primal);
        diag.dual_residual.push_back(dual);
        diag.iterations = it;
        if (settings.trace_sink) {
            settings.trace_sink("iter=" + std::to_string(it) + " objective=" + std::to_string(obj) +
                                " primal=" + std::to_string(primal) + " dual=" + std::to_string(dual) +
                                " rho1=" + std::to_string(rho1) + " rho2=" + std::to_string(rho2));
        }

        const double eps_primal = settings.abs_tol * std::sqrt(p_dim) + settings.rel_tol * primal_scale;
        const double eps_dual = settings.abs_tol * std::sqrt(static_cast<double>(n)) + settings.rel_tol * dual_scale;
        if (primal <= eps_primal && dual <= eps_dual) {
            diag.converged = true;
            break;
        }

        if (it % settings.adapt_every == 0) {
            bool changed = false;
            const auto balance = [&](double r, double s, double& rho, auto& scaled_dual) {
                if (r > settings.mu * s && rho * settings.tau_incr <= rho_max) {
                    rho *= settings.tau_incr;
                    scaled_dual /= settings.tau_incr;
                    changed = true;
                } else if (s > settings.mu * r && rho / settings.tau_incr >= rho_min) {
                    rho /= settings.tau_incr;
                    scaled_dual *= settings.tau_incr;
                    changed = true;
                }
            };
            if (use_p) {
                balance(r1, s1, rho1, U1);
            }
            if (use_w) {
                balance(r2, s2, rho2, U2);
            }
            if (changed) {
                factor();
            }
        }
    }
    // The last iterate is kept when it is (numerically) as good as the best.
    const double last = diag.raw_objective.empty() ? best : diag.raw_objective.back();
    result.u = last <= best * (1.0 + 1e-12) ? u : best_u;
    diag.final_objective = std::min(last, best);
    if (settings.polish) {
        Eigen::VectorXd polished = result.u;
        if (polish(sp, AtA, Aty, polished, use_w ? w : Eigen::VectorXd())) {
            const double value = split_objective(sp, polished);
            if (value < diag.final_objective) {
                result.u = polished;
                diag.final_objective = value;
                diag.polished = true;
            }
        }
    }
    return result;
}

} // namespace detail

/// Warm start: least squares on Pi alone (M = 0), then M = a~ gamma^T.
inline Eigen::VectorXd warm_start(const IdProblem& prob)
{
    const Eigen::VectorXd phi_scaled = prob.pi.colPivHouseholderQr().solve(prob.y);
    const Eigen::VectorXd phi = phi_scaled.cwiseQuotient(prob.pi_scale);
    const auto h = prob.h;
    Eigen::VectorXd u(prob.phi_size() + 2 * h);
    u.head(prob.phi_size()) = phi_scaled;
    for (int r = 0; r < 2; ++r) {
        u.segment(prob.phi_size() + r * h, h) =
            (phi[r] * phi.tail(h)).cwiseProduct(prob.f_scale.segment(r * h, h));
    }
    return u;
}

/// Consistent re-estimate of (b~, gamma) for a fixed a~: with M = a~ gamma^T
/// the data equation is linear in (b~, gamma):
///   y + a~1 Pi_0 + a~2 Pi_1 = Pi_b b~ + (Pi_g + a~1 F_1 + a~2 F_2) gamma.
/// The L1 term on Dg3 gamma is kept; the nuclear term is constant here.
inline std::pair<Eigen::Vector3d, Eigen::VectorXd> refit_given_a(const IdProblem& prob, const IdConfig& cfg,
                                                                 const Eigen::Vector2d& a_tilde,
                                                                 const SolverSettings& settings, double* residual_norm)
{
    const auto h = prob.h;
    const Eigen::MatrixXd pi = prob.pi_raw();
    const Eigen::MatrixXd f = prob.f_raw();
    Eigen::MatrixXd A(prob.rows(), 3 + h);
    A.leftCols(3) = pi.middleCols(2, 3);
    A.rightCols(h) = pi.rightCols(h) + a_tilde[0] * f.leftCols(h) + a_tilde[1] * f.rightCols(h);
    const Eigen::VectorXd target = prob.y - pi.leftCols(2) * a_tilde;

    Eigen::VectorXd scale = A.colwise().norm().transpose();
    for (Eigen::Index c = 0; c < scale.size(); ++c) {
        if (!(scale[c] > 0.0)) {
            scale[c] = 1.0;
        }
    }
    const Eigen::MatrixXd As = A * scale.cwiseInverse().asDiagonal();

    detail::SplitProblem sp;
    sp.A = &As;
    sp.y = &target;
    sp.lambda2 = cfg.lambda2;
    if (cfg.lambda2 > 0.0) {
        Eigen::MatrixXd R = Eigen::MatrixXd::Zero(prob.dg3.rows(), 3 + h);
        R.rightCols(h) = prob.dg3 * scale.tail(h).cwiseInverse().asDiagonal();
        std::vector<Eigen::Index> keep;
        for (Eigen::Index r = 0; r < R.rows(); ++r) {
            if (R.row(r).squaredNorm() > 0.0) {
                keep.push_back(r);
            }
        }
        detail::normalize_l1_block(sp, R(keep, Eigen::all));
    }
    const Eigen::VectorXd u0 = As.colPivHouseholderQr().solve(target);
    const auto res = detail::run_admm(sp, u0, settings);
    const Eigen::VectorXd x = res.u.cwiseQuotient(scale);
    if (residual_norm != nullptr) {
        *residual_norm = (target - A * x).norm();
    }
    return {x.head<3>(), x.tail(h)};
}

/// Best rank-one approximation of P rescaled so its bottom-right entry is 1;
/// refined a~ is its last column (top two entries), gamma its last row.
inline std::pair<Eigen::Vector2d, Eigen::VectorXd> extract_rank_one(const Eigen::MatrixXd& P, bool enabled,
                                                                   double min_gap = 1e3)
{
    const auto h = P.cols() - 1;
    if (!enabled) {
        return {P.topRightCorner(2, 1), P.bottomLeftCorner(1, h).transpose()};
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(P, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    require(s.size() < 2 || s[0] >= min_gap * s[1], ErrorCode::DegenerateP,
            "P is not close to rank one (sigma1/sigma2 = " + std::to_string(s[0] / s[1]) + ")");
    Eigen::MatrixXd P1 = s[0] * svd.matrixU().col(0) * svd.matrixV().col(0).transpose();
    require(std::abs(P1(2, h)) > 0.0, ErrorCode::DegenerateP, "leading singular pair has a zero corner");
    P1 /= P1(2, h);
    return {P1.topRightCorner(2, 1), P1.bottomLeftCorner(1, h).transpose()};
}

inline Solution solve(const IdProblem& prob, const IdConfig& cfg, const SolverSettings& settings = {},
                      const std::optional<Eigen::VectorXd>& start = std::nullopt)
{
    validate(cfg);
    const auto h = prob.h;
    const Eigen::Index n_phi = prob.phi_size();
    const Eigen::Index n = n_phi + 2 * h;

    Eigen::MatrixXd A(prob.rows(), n);
    A.leftCols(n_phi) = prob.pi;
    A.rightCols(2 * h) = prob.f;
    Eigen::VectorXd scale(n);
    scale << prob.pi_scale, prob.f_scale;

    detail::SplitProblem sp;
    sp.A = &A;
    sp.y = &prob.y;
    sp.lambda1 = cfg.lambda1;
    sp.lambda2 = cfg.lambda2;
    sp.p_rows = 3;
    sp.p_cols = h + 1;
    sp.p_const = Eigen::MatrixXd::Zero(3, h + 1);
    sp.p_const(2, h) = 1.0;
    if (cfg.lambda1 > 0.0) {
        for (int r = 0; r < 2; ++r) {
            sp.p_entries.push_back({r, h, r, scale[r]});
            for (int c = 0; c < h; ++c) {
                const Eigen::Index idx = n_phi + r * h + c;
                sp.p_entries.push_back({r, c, idx, scale[idx]});
            }
        }
        for (int c = 0; c < h; ++c) {
            sp.p_entries.push_back({2, c, 5 + c, scale[5 + c]});
        }
    }
    if (cfg.lambda2 > 0.0) {
        Eigen::MatrixXd R = Eigen::MatrixXd::Zero(prob.dg3.rows(), n);
        R.middleCols(5, h) = prob.dg3 * scale.segment(5, h).cwiseInverse().asDiagonal();
        std::vector<Eigen::Index> keep;
        for (Eigen::Index r = 0; r < R.rows(); ++r) {
            if (R.row(r).squaredNorm() > 0.0) {
                keep.push_back(r);
            }
        }
        detail::normalize_l1_block(sp, R(keep, Eigen::all));
    }

    const Eigen::VectorXd u0 = start ? *start : warm_start(prob);
    auto res = detail::run_admm(sp, u0, settings);

    Solution sol;
    sol.diagnostics = std::move(res.diag);
    const Eigen::VectorXd x = res.u.cwiseQuotient(scale);
    sol.phi = x.head(n_phi);
    sol.vec_m = x.tail(2 * h);
    sol.a_tilde = sol.phi.head<2>();
    sol.b_tilde = sol.phi.segment<3>(2);
    sol.gamma = sol.phi.tail(h);
    sol.M = Eigen::Map<const detail::RowMajorMatrix>(sol.vec_m.data(), 2, h);

    const Eigen::MatrixXd P = structured_p(sol.a_tilde, sol.gamma, sol.M);
    sol.diagnostics.p_singular_values = Eigen::JacobiSVD<Eigen::MatrixXd>(P).singularValues();

    if (settings.rank_one_projection) {
        std::tie(sol.a_tilde, sol.gamma) = extract_rank_one(P, true);
    }
    if (settings.consistency_refit) {
        double res_norm = 0.0;
        std::tie(sol.b_tilde, sol.gamma) = refit_given_a(prob, cfg, sol.a_tilde, settings, &res_norm);
        sol.diagnostics.refit_residual = res_norm;
        sol.M = sol.a_tilde * sol.gamma.transpose();
    }
    require(sol.a_tilde.allFinite() && sol.b_tilde.allFinite() && sol.gamma.allFinite(), ErrorCode::NumericalFailure,
            "solution contains non-finite values");
    return sol;
}

} // namespace ecmid
