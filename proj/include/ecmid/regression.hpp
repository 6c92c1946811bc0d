#pragma once

// Assembly of the Laguerre-filtered data equation
//
//   [L2 v] = Pi phi + F vec(M),
//   Pi  = [ -[L1 v], -[L0 v], [L2 i], [L1 i], [L0 i], [L2 g_1] .. [L2 g_h] ]
//   F   = [ [L1 g_1] .. [L1 g_h], [L0 g_1] .. [L0 g_h] ]
//   phi = [ a~1, a~2, b~0, b~1, b~2, gamma_1 .. gamma_h ]
//
// where vec(M) stacks the rows of M = a~ gamma^T, so the consistent solution
// has vec(M) = a~ (x) gamma.

#include "ecmid/bspline.hpp"
#include "ecmid/error.hpp"
#include "ecmid/laguerre.hpp"
#include "ecmid/signals.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace ecmid {

enum class BurnIn {
    Auto,   ///< burn_in_rows(nu, ts, n)
    None,
    Fixed,  ///< IdConfig::burn_in_rows
};

/// Inter-sample model for the measured voltage.
enum class VoltageHold {
    /// Voltage held constant between samples, like the current.
    Zero,
    /// v - r0_hint * i is linear between samples while r0_hint * i stays
    /// piecewise constant; spline signals are then linear between samples
    /// as well. Reduces the half-sample lag of the held voltage.
    SplitFirst,
};

struct IdConfig {
    /// Laguerre cut-off, rad/s. Must stay away from the battery poles
    /// 1/tau1 and 1/tau2, where abar0 vanishes.
    double nu = 0.1;
    /// Breakpoints of the clamped OCV spline (h = knot_count + 2).
    int knot_count = 21;
    double lambda1 = 1e-8;
    double lambda2 = 0.0;
    BurnIn burn_in = BurnIn::Auto;
    Eigen::Index burn_in_rows = 0;
    VoltageHold hold = VoltageHold::Zero;
    double r0_hint = 0.0;
};

inline void validate(const IdConfig& cfg)
{
    require(std::isfinite(cfg.nu) && cfg.nu > 0.0, ErrorCode::InvalidArgument, "nu must be > 0");
    require(cfg.lambda1 >= 0.0 && cfg.lambda2 >= 0.0, ErrorCode::InvalidArgument, "lambdas must be >= 0");
    require(cfg.knot_count >= 2, ErrorCode::InvalidArgument, "knot_count must be >= 2");
    require(cfg.burn_in_rows >= 0, ErrorCode::InvalidArgument, "burn_in_rows must be >= 0");
}

struct IdProblem {
    double nu = 0.0;
    int h = 0;
    /// Target [L2 v] on unmasked rows.
    Eigen::VectorXd y;
    /// Column-normalized Pi and F; Pi_raw = pi * diag(pi_scale).
    Eigen::MatrixXd pi;
    Eigen::MatrixXd f;
    Eigen::VectorXd pi_scale;
    Eigen::VectorXd f_scale;
    /// D * G3 over the sorted unmasked soc values, unscaled.
    Eigen::MatrixXd dg3;
    /// One entry per record sample; true where the row was excluded.
    std::vector<bool> burn_mask;
    /// Record sample index of every regression row.
    std::vector<Eigen::Index> row_index;

    [[nodiscard]] Eigen::Index rows() const noexcept { return y.size(); }
    [[nodiscard]] Eigen::Index phi_size() const noexcept { return 5 + h; }
    [[nodiscard]] Eigen::MatrixXd pi_raw() const { return pi * pi_scale.asDiagonal(); }
    [[nodiscard]] Eigen::MatrixXd f_raw() const { return f * f_scale.asDiagonal(); }
};

/// Clamped uniform knots over the soc range actually visited by `rec`.
inline KnotVector knots_for(const SampledRecord& rec, int knot_count)
{
    require(rec.soc.has_value(), ErrorCode::MissingSoc, "record has no soc");
    const double lo = rec.soc->minCoeff();
    const double hi = rec.soc->maxCoeff();
    require(hi > lo, ErrorCode::InvalidRecord, "soc is constant over the record; the OCV curve is not identifiable");
    return KnotVector::clamped_uniform(lo, hi, knot_count);
}

inline Eigen::Index masked_rows(const IdConfig& cfg, double ts, Eigen::Index n)
{
    switch (cfg.burn_in) {
    case BurnIn::Auto: return burn_in_rows(cfg.nu, ts, n);
    case BurnIn::None: return 0;
    case BurnIn::Fixed: return std::min(cfg.burn_in_rows, n - 1);
    }
    return 0;
}

inline IdProblem assemble(const SampledRecord& rec, const KnotVector& kv, const IdConfig& cfg)
{
    validate(cfg);
    validate(rec);
    require(rec.soc.has_value(), ErrorCode::MissingSoc, "record has no soc; run coulomb_count first");

    const Eigen::Index n = rec.size();
    const int h = kv.h();
    const LaguerreBank bank = discretize(cfg.nu, rec.ts);
    const Hold smooth_hold = cfg.hold == VoltageHold::Zero ? Hold::Zero : Hold::First;

    Eigen::MatrixX3d fv;
    const Eigen::MatrixX3d fi = filter_signal(bank, rec.current, Hold::Zero);
    if (cfg.hold == VoltageHold::Zero) {
        fv = filter_signal(bank, rec.voltage, Hold::Zero);
    } else {
        const Eigen::VectorXd smooth = rec.voltage - cfg.r0_hint * rec.current;
        fv = filter_signal(bank, smooth, Hold::First) + cfg.r0_hint * fi;
    }
    const Eigen::MatrixXd G = design_matrix(kv, *rec.soc);

    const Eigen::Index burn = masked_rows(cfg, rec.ts, n);
    const Eigen::Index m = n - burn;
    require(m >= 2, ErrorCode::InvalidRecord, "record too short after burn-in");

    IdProblem prob;
    prob.nu = cfg.nu;
    prob.h = h;
    prob.burn_mask.assign(static_cast<std::size_t>(n), false);
    std::fill(prob.burn_mask.begin(), prob.burn_mask.begin() + burn, true);
    prob.row_index.resize(static_cast<std::size_t>(m));
    for (Eigen::Index r = 0; r < m; ++r) {
        prob.row_index[static_cast<std::size_t>(r)] = burn + r;
    }

    prob.y = fv.col(2).tail(m);
    Eigen::MatrixXd pi(m, 5 + h);
    Eigen::MatrixXd f(m, 2 * h);
    pi.col(0) = -fv.col(1).tail(m);
    pi.col(1) = -fv.col(0).tail(m);
    pi.col(2) = fi.col(2).tail(m);
    pi.col(3) = fi.col(1).tail(m);
    pi.col(4) = fi.col(0).tail(m);
    for (int i = 0; i < h; ++i) {
        const Eigen::MatrixX3d fg = filter_signal(bank, G.col(i), smooth_hold);
        pi.col(5 + i) = fg.col(2).tail(m);
        f.col(i) = fg.col(1).tail(m);
        f.col(h + i) = fg.col(0).tail(m);
    }

    require(prob.y.allFinite() && pi.allFinite() && f.allFinite(), ErrorCode::NumericalFailure,
            "non-finite entries in the filtered data");

    const auto normalize_columns = [](Eigen::MatrixXd& mat, Eigen::VectorXd& scale, const char* block) {
        scale = mat.colwise().norm().transpose();
        const double largest = scale.maxCoeff();
        for (Eigen::Index c = 0; c < mat.cols(); ++c) {
            if (!(scale[c] > 1e-13 * largest) || scale[c] == 0.0) {
                fail(ErrorCode::DegenerateColumn, std::string(block) + " column " + std::to_string(c) +
                                                      " is identically zero on the regression rows");
            }
            mat.col(c) /= scale[c];
        }
    };
    normalize_columns(pi, prob.pi_scale, "Pi");
    normalize_columns(f, prob.f_scale, "F");
    prob.pi = std::move(pi);
    prob.f = std::move(f);

    // Third-derivative differences over sorted unmasked soc.
    Eigen::VectorXd z = rec.soc->tail(m);
    std::sort(z.data(), z.data() + z.size());
    const Eigen::MatrixXd g3 = third_deriv_matrix(kv, z);
    prob.dg3 = g3.topRows(m - 1) - g3.bottomRows(m - 1);
    return prob;
}

/// Unscaled residual y - Pi phi - F vec(M) for raw (unscaled) unknowns.
inline Eigen::VectorXd residual(const IdProblem& prob, const Eigen::VectorXd& phi, const Eigen::VectorXd& vec_m)
{
    return prob.y - prob.pi * (prob.pi_scale.cwiseProduct(phi)) - prob.f * (prob.f_scale.cwiseProduct(vec_m));
}

namespace detail {

inline void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                             const std::vector<std::string>& comments = {})
{
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorCode::InvalidArgument, "cannot write " + path.string());
    for (const auto& c : comments) {
        out << "# " << c << '\n';
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            out << (c > 0 ? "," : "") << format_double(m(r, c));
        }
        out << '\n';
    }
}

inline Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::EmptyFile, "cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_skippable(line)) {
            continue;
        }
        std::vector<double> row;
        for (const auto field : split_fields(line)) {
            row.push_back(parse_double(field, line_no));
        }
        require(rows.empty() || row.size() == rows.front().size(), ErrorCode::ParseError,
                path.string() + " line " + std::to_string(line_no) + ": ragged row");
        rows.push_back(std::move(row));
    }
    require(!rows.empty(), ErrorCode::EmptyFile, path.string() + " holds no data");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    return m;
}

} // namespace detail

/// Writes the problem as a directory of plain CSV matrices, all unscaled:
///   y.csv (m x 1), pi.csv (m x (5+h)), f.csv (m x 2h), dg3.csv ((m-1) x h),
///   rows.csv (record sample index of every row) and meta.csv (nu, h).
/// The unknowns are phi = [a~1, a~2, b~0, b~1, b~2, gamma] and vec(M) (row-wise).
inline void write_bundle(const std::filesystem::path& dir, const IdProblem& prob,
                         const std::vector<std::string>& comments = {})
{
    std::filesystem::create_directories(dir);
    detail::write_matrix_csv(dir / "y.csv", prob.y, comments);
    detail::write_matrix_csv(dir / "pi.csv", prob.pi_raw(), comments);
    detail::write_matrix_csv(dir / "f.csv", prob.f_raw(), comments);
    detail::write_matrix_csv(dir / "dg3.csv", prob.dg3, comments);
    Eigen::VectorXd rows(static_cast<Eigen::Index>(prob.row_index.size()));
    for (std::size_t k = 0; k < prob.row_index.size(); ++k) {
        rows[static_cast<Eigen::Index>(k)] = static_cast<double>(prob.row_index[k]);
    }
    detail::write_matrix_csv(dir / "rows.csv", rows, comments);
    Eigen::RowVector2d meta(prob.nu, prob.h);
    detail::write_matrix_csv(dir / "meta.csv", meta, comments);
}

inline IdProblem read_bundle(const std::filesystem::path& dir)
{
    IdProblem prob;
    const Eigen::MatrixXd meta = detail::read_matrix_csv(dir / "meta.csv");
    require(meta.size() == 2, ErrorCode::ParseError, "meta.csv must hold nu,h");
    prob.nu = meta(0);
    prob.h = static_cast<int>(meta(1));
    prob.y = detail::read_matrix_csv(dir / "y.csv").col(0);
    Eigen::MatrixXd pi = detail::read_matrix_csv(dir / "pi.csv");
    Eigen::MatrixXd f = detail::read_matrix_csv(dir / "f.csv");
    prob.dg3 = detail::read_matrix_csv(dir / "dg3.csv");
    const Eigen::VectorXd rows = detail::read_matrix_csv(dir / "rows.csv").col(0);
    require(pi.rows() == prob.y.size() && f.rows() == prob.y.size() && pi.cols() == 5 + prob.h &&
                f.cols() == 2 * prob.h && prob.dg3.cols() == prob.h,
            ErrorCode::ParseError, "bundle matrices have inconsistent shapes");
    for (double r : rows) {
        prob.row_index.push_back(static_cast<Eigen::Index>(r));
    }
    prob.pi_scale = pi.colwise().norm().transpose();
    prob.f_scale = f.colwise().norm().transpose();
    require((prob.pi_scale.array() > 0.0).all() && (prob.f_scale.array() > 0.0).all(), ErrorCode::DegenerateColumn,
            "bundle holds an all-zero column");
    prob.pi = pi * prob.pi_scale.cwiseInverse().asDiagonal();
    prob.f = f * prob.f_scale.cwiseInverse().asDiagonal();
    return prob;
}

} // namespace ecmid
