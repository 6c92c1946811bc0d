#pragma once

// Cubic B-spline basis on a knot vector over SOC.
//
// Indexing is zero-based: with knots t_0 <= ... <= t_{h+3}, basis g_i
// (i = 0..h-1) is supported on [t_i, t_{i+4}), and the full basis is a
// partition of unity on [t_3, t_h].

#include "ecmid/error.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <array>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

namespace ecmid {

inline constexpr int kSplineDegree = 3;

class KnotVector {
public:
    KnotVector() = default;

    explicit KnotVector(std::vector<double> knots) : knots_(std::move(knots))
    {
        require(knots_.size() >= 8, ErrorCode::InvalidArgument, "a cubic basis needs at least 8 knots (h >= 4)");
        for (std::size_t k = 1; k < knots_.size(); ++k) {
            require(knots_[k] >= knots_[k - 1], ErrorCode::InvalidArgument, "knots must be non-decreasing");
        }
        require(lower() < upper(), ErrorCode::InvalidArgument, "knot vector has an empty support");
    }

    /// Clamped knots: `breakpoints` uniformly spaced values from lo to hi
    /// (ends included), with both ends repeated 4 times. h = breakpoints + 2.
    static KnotVector clamped_uniform(double lo, double hi, int breakpoints)
    {
        require(breakpoints >= 2, ErrorCode::InvalidArgument, "need at least 2 breakpoints");
        require(hi > lo, ErrorCode::InvalidArgument, "spline range must be non-empty");
        std::vector<double> t;
        t.reserve(static_cast<std::size_t>(breakpoints) + 6);
        t.insert(t.end(), 3, lo);
        for (int k = 0; k < breakpoints; ++k) {
            t.push_back(k + 1 == breakpoints ? hi : lo + (hi - lo) * k / (breakpoints - 1));
        }
        t.insert(t.end(), 3, hi);
        return KnotVector(std::move(t));
    }

    /// Unclamped uniform knots start, start+step, ..., count knots.
    static KnotVector uniform(double start, double step, int count)
    {
        std::vector<double> t(static_cast<std::size_t>(count));
        for (int k = 0; k < count; ++k) {
            t[static_cast<std::size_t>(k)] = start + step * k;
        }
        return KnotVector(std::move(t));
    }

    [[nodiscard]] const std::vector<double>& knots() const noexcept { return knots_; }
    [[nodiscard]] double operator[](std::size_t k) const noexcept { return knots_[k]; }
    /// Number of basis functions.
    [[nodiscard]] int h() const noexcept { return static_cast<int>(knots_.size()) - 4; }
    [[nodiscard]] double lower() const noexcept { return knots_[3]; }
    [[nodiscard]] double upper() const noexcept { return knots_[knots_.size() - 4]; }

    [[nodiscard]] bool in_support(double z) const noexcept
    {
        const double slack = 1e-12 * (upper() - lower());
        return z >= lower() - slack && z <= upper() + slack;
    }

    /// Index s with t_s <= z < t_{s+1}, restricted to non-empty spans inside
    /// the support; the right end maps to the last non-empty span.
    [[nodiscard]] int span(double z) const
    {
        require(in_support(z), ErrorCode::OutOfSupport,
                "z = " + std::to_string(z) + " outside [" + std::to_string(lower()) + ", " +
                    std::to_string(upper()) + "]");
        const int last = h() - 1;
        int s = 3;
        while (s < last && !(z < knots_[static_cast<std::size_t>(s) + 1])) {
            ++s;
        }
        while (s > 3 && knots_[static_cast<std::size_t>(s)] == knots_[static_cast<std::size_t>(s) + 1]) {
            --s;
        }
        return s;
    }

private:
    std::vector<double> knots_;
};

namespace detail {

/// 0/0 := 0 for the recursion weights.
inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

/// Basis values of every degree 0..3 at z, by the de Boor-Cox recursion.
/// table[p][i] = g_{i,p}(z) for i = 0 .. (knots - p - 2).
inline std::array<std::vector<double>, 4> basis_table(const KnotVector& kv, double z)
{
    const int s = kv.span(z);
    const auto& t = kv.knots();
    const int nk = static_cast<int>(t.size());
    std::array<std::vector<double>, 4> table;
    table[0].assign(static_cast<std::size_t>(nk - 1), 0.0);
    // The indicator of the located span stands in for t_i <= z < t_{i+1};
    // it differs only at the right end, where the closed interval is used.
    table[0][static_cast<std::size_t>(s)] = 1.0;
    for (int p = 1; p <= kSplineDegree; ++p) {
        auto& cur = table[static_cast<std::size_t>(p)];
        const auto& prev = table[static_cast<std::size_t>(p - 1)];
        cur.assign(static_cast<std::size_t>(nk - p - 1), 0.0);
        for (int i = 0; i < nk - p - 1; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            const double left = safe_ratio(z - t[ui], t[ui + p] - t[ui]) * prev[ui];
            const double right = safe_ratio(t[ui + p + 1] - z, t[ui + p + 1] - t[ui + 1]) * prev[ui + 1];
            cur[ui] = left + right;
        }
    }
    return table;
}

/// d-th derivative of g_{i,p} from the recursive derivative formula.
inline double basis_derivative(const std::array<std::vector<double>, 4>& table, const std::vector<double>& t, int i,
                               int p, int d)
{
    if (d == 0) {
        return table[static_cast<std::size_t>(p)][static_cast<std::size_t>(i)];
    }
    const auto ui = static_cast<std::size_t>(i);
    const double a = safe_ratio(p, t[ui + p] - t[ui]);
    const double b = safe_ratio(p, t[ui + p + 1] - t[ui + 1]);
    double value = 0.0;
    if (a != 0.0) {
        value += a * basis_derivative(table, t, i, p - 1, d - 1);
    }
    if (b != 0.0) {
        value -= b * basis_derivative(table, t, i + 1, p - 1, d - 1);
    }
    return value;
}

} // namespace detail

/// g_i(z) for i = 0..h-1; at most 4 entries are nonzero.
inline Eigen::VectorXd eval_basis(const KnotVector& kv, double z)
{
    const auto table = detail::basis_table(kv, z);
    return Eigen::Map<const Eigen::VectorXd>(table[3].data(), kv.h());
}

/// d-th derivative (d = 1..3) of every basis function at z. The third
/// derivative is piecewise constant and right-continuous at interior knots.
inline Eigen::VectorXd eval_deriv(const KnotVector& kv, double z, int d)
{
    require(d >= 1 && d <= kSplineDegree, ErrorCode::BadOrder, "derivative order must be 1, 2 or 3");
    const auto table = detail::basis_table(kv, z);
    Eigen::VectorXd out(kv.h());
    for (int i = 0; i < kv.h(); ++i) {
        out[i] = detail::basis_derivative(table, kv.knots(), i, kSplineDegree, d);
    }
    return out;
}

/// Row j holds eval_basis(kv, soc[j]).
inline Eigen::MatrixXd design_matrix(const KnotVector& kv, const Eigen::VectorXd& soc)
{
    Eigen::MatrixXd G(soc.size(), kv.h());
    for (Eigen::Index j = 0; j < soc.size(); ++j) {
        if (!kv.in_support(soc[j])) {
            fail(ErrorCode::OutOfSupport, "sample " + std::to_string(j) + " has soc " + std::to_string(soc[j]) +
                                              " outside the spline support");
        }
        G.row(j) = eval_basis(kv, soc[j]).transpose();
    }
    return G;
}

/// Third-derivative basis rows at non-decreasing soc values.
inline Eigen::MatrixXd third_deriv_matrix(const KnotVector& kv, const Eigen::VectorXd& soc_sorted)
{
    for (Eigen::Index j = 1; j < soc_sorted.size(); ++j) {
        require(soc_sorted[j] >= soc_sorted[j - 1], ErrorCode::UnsortedInput,
                "soc must be non-decreasing (index " + std::to_string(j) + ")");
    }
    Eigen::MatrixXd G3(soc_sorted.size(), kv.h());
    for (Eigen::Index j = 0; j < soc_sorted.size(); ++j) {
        G3.row(j) = eval_deriv(kv, soc_sorted[j], 3).transpose();
    }
    return G3;
}

/// (m-1) x m forward-difference matrix with rows e_i - e_{i+1}.
inline Eigen::SparseMatrix<double> diff_matrix(Eigen::Index m)
{
    require(m >= 2, ErrorCode::TooSmall, "difference matrix needs m >= 2");
    Eigen::SparseMatrix<double> D(m - 1, m);
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(static_cast<std::size_t>(2 * (m - 1)));
    for (Eigen::Index i = 0; i + 1 < m; ++i) {
        entries.emplace_back(i, i, 1.0);
        entries.emplace_back(i, i + 1, -1.0);
    }
    D.setFromTriplets(entries.begin(), entries.end());
    return D;
}

/// OCV curve v(z) = sum_i gamma_i g_i(z).
struct SplineCurve {
    KnotVector basis;
    Eigen::VectorXd gamma;

    [[nodiscard]] double operator()(double z) const { return eval_basis(basis, z).dot(gamma); }
    [[nodiscard]] double derivative(double z, int d) const { return eval_deriv(basis, z, d).dot(gamma); }

    /// Two-row CSV: "knots,..." then "gamma,...".
    void write_csv(std::ostream& out) const
    {
        out.precision(17);
        out << "knots";
        for (double t : basis.knots()) {
            out << ',' << t;
        }
        out << "\ngamma";
        for (double g : gamma) {
            out << ',' << g;
        }
        out << '\n';
    }

    /// Dense `soc,ocv_v` table of `points` samples across the support.
    void write_table(std::ostream& out, int points = 201) const
    {
        out.precision(10);
        out << "soc,ocv_v\n";
        for (int k = 0; k < points; ++k) {
            const double z = basis.lower() + (basis.upper() - basis.lower()) * k / (points - 1);
            out << z << ',' << (*this)(z) << '\n';
        }
    }
};

/// Least-squares control points reproducing f at the given soc samples.
template <class Fn>
Eigen::VectorXd fit_control_points(const KnotVector& kv, const Eigen::VectorXd& soc, Fn&& f)
{
    const Eigen::MatrixXd G = design_matrix(kv, soc);
    Eigen::VectorXd target(soc.size());
    for (Eigen::Index j = 0; j < soc.size(); ++j) {
        target[j] = f(soc[j]);
    }
    return G.colPivHouseholderQr().solve(target);
}

} // namespace ecmid
