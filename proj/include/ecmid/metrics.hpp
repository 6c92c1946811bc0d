#pragma once

// End-to-end identification, model scoring (RMSE, VAF), regularization grid
// search and the Monte Carlo harness.

#include "ecmid/bspline.hpp"
#include "ecmid/ecm_sim.hpp"
#include "ecmid/error.hpp"
#include "ecmid/recovery.hpp"
#include "ecmid/regression.hpp"
#include "ecmid/signals.hpp"
#include "ecmid/solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace ecmid {

inline double rmse(const Eigen::VectorXd& v, const Eigen::VectorXd& v_hat)
{
    require(v.size() == v_hat.size(), ErrorCode::LengthMismatch, "sequences differ in length");
    require(v.size() >= 1, ErrorCode::LengthMismatch, "empty sequences");
    return std::sqrt((v - v_hat).squaredNorm() / static_cast<double>(v.size()));
}

/// Variance accounted for, in percent.
inline double vaf(const Eigen::VectorXd& v, const Eigen::VectorXd& v_hat)
{
    require(v.size() == v_hat.size(), ErrorCode::LengthMismatch, "sequences differ in length");
    require(v.size() >= 2, ErrorCode::LengthMismatch, "need at least 2 samples");
    const auto variance = [](const Eigen::VectorXd& x) { return (x.array() - x.mean()).square().sum(); };
    const double signal = variance(v);
    require(signal > 0.0, ErrorCode::ZeroVariance, "measured signal has zero variance");
    return (1.0 - variance(v - v_hat) / signal) * 100.0;
}

inline OcvFunction as_ocv(const SplineCurve& curve)
{
    return OcvFunction{[curve](double z) { return curve(z); }, curve.basis.lower(), curve.basis.upper()};
}

/// Noise-free forward simulation with identified quantities along a given
/// soc trajectory.
inline Eigen::VectorXd predict_voltage(const EcmParams& params, const SplineCurve& ocv, const Eigen::VectorXd& current,
                                       const Eigen::VectorXd& soc, double ts)
{
    require(current.size() == soc.size(), ErrorCode::LengthMismatch, "current and soc lengths differ");
    EcmParams p = params;
    if (!(p.capacity_ah > 0.0)) {
        p.capacity_ah = 1.0;  // unused here: soc is given
    }
    validate(p);
    const Eigen::VectorXd dynamic = rc_voltages(p, current, ts);
    Eigen::VectorXd out(current.size());
    for (Eigen::Index j = 0; j < current.size(); ++j) {
        require(ocv.basis.in_support(soc[j]), ErrorCode::SocRangeExceeded,
                "soc " + std::to_string(soc[j]) + " leaves the identified OCV support");
        out[j] = dynamic[j] + p.r0 * current[j] + ocv(std::clamp(soc[j], ocv.basis.lower(), ocv.basis.upper()));
    }
    return out;
}

/// Forward simulation of identified parameters and spline OCV from initial
/// soc z0, with soc Coulomb-counted using params.capacity_ah.
inline Eigen::VectorXd simulate_identified(const EcmParams& params, const SplineCurve& ocv,
                                           const SampledRecord& current, double z0)
{
    SimConfig cfg;
    cfg.initial_soc = z0;
    return simulate(params, as_ocv(ocv), current, cfg).voltage;
}

struct IdentifyOptions {
    IdConfig id;
    SolverSettings solver;
    /// Re-assembly passes with the split first-order voltage hold, each using
    /// the previous pass's R0. 0 keeps the plain zero-order hold.
    int hold_passes = 2;
};

struct IdResult {
    KnotVector knots;
    Solution solution;
    TfCoeffs tf;
    PhysicalEstimate physical;
    SplineCurve ocv;
    /// Problem of the final pass.
    IdProblem problem;
    int passes = 0;
};

inline IdResult identify(const SampledRecord& rec, const IdentifyOptions& opts)
{
    require(rec.soc.has_value(), ErrorCode::MissingSoc, "record has no soc; provide it or an initial soc");
    IdResult out;
    out.knots = knots_for(rec, opts.id.knot_count);
    IdConfig cfg = opts.id;
    cfg.hold = VoltageHold::Zero;
    for (int pass = 0; pass <= opts.hold_passes; ++pass) {
        if (pass > 0) {
            const double r0 = out.physical.params.r0;
            if (!(std::isfinite(r0) && r0 > 0.0)) {
                break;
            }
            cfg.hold = VoltageHold::SplitFirst;
            cfg.r0_hint = r0;
        }
        out.problem = assemble(rec, out.knots, cfg);
        out.solution = solve(out.problem, cfg, opts.solver);
        out.tf = tilde_to_tf(out.solution.a_tilde, out.solution.b_tilde, cfg.nu);
        out.physical = tf_to_physical(out.tf);
        out.passes = pass + 1;
    }
    out.ocv = SplineCurve{out.knots, out.solution.gamma};
    return out;
}

struct FitReport {
    double rmse = 0.0;
    double vaf = 0.0;
    /// RMSE against a noise-free reference, when one is available.
    std::optional<double> rmse_clean;
    Eigen::Index n_samples = 0;
    bool converged = false;
    EcmParams params{};
    double tau1 = 0.0;
    double tau2 = 0.0;
    bool non_physical = false;
    bool negative_coefficient = false;
    TfCoeffs tf{};
    SplineCurve ocv;
    Eigen::VectorXd predicted;
};

/// Scores an identification on `rec`, skipping the burn-in rows.
inline FitReport evaluate(const SampledRecord& rec, const IdResult& id, double capacity_ah,
                          const std::optional<Eigen::VectorXd>& clean_voltage = std::nullopt)
{
    FitReport rep;
    rep.params = id.physical.params;
    rep.params.capacity_ah = capacity_ah;
    rep.tau1 = id.physical.tau1;
    rep.tau2 = id.physical.tau2;
    rep.non_physical = id.physical.non_physical;
    rep.negative_coefficient = id.physical.negative_coefficient;
    rep.tf = id.tf;
    rep.ocv = id.ocv;
    rep.converged = id.solution.diagnostics.converged;
    require(!rep.non_physical, ErrorCode::NonPhysical, "identified parameters are not physical");

    rep.predicted = predict_voltage(rep.params, id.ocv, rec.current, *rec.soc, rec.ts);
    const Eigen::Index first = id.problem.row_index.empty() ? 0 : id.problem.row_index.front();
    const Eigen::Index count = rec.size() - first;
    rep.n_samples = count;
    rep.rmse = rmse(rec.voltage.tail(count), rep.predicted.tail(count));
    rep.vaf = vaf(rec.voltage.tail(count), rep.predicted.tail(count));
    if (clean_voltage) {
        rep.rmse_clean = rmse(clean_voltage->tail(count), rep.predicted.tail(count));
    }
    return rep;
}

namespace detail {

/// Runs task(k) for k in [0, count) on up to `jobs` threads.
template <class Task>
void parallel_for(std::size_t count, unsigned jobs, Task&& task)
{
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(count)));
    if (jobs <= 1) {
        for (std::size_t k = 0; k < count; ++k) {
            task(k);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (unsigned t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
            for (std::size_t k = next++; k < count; k = next++) {
                task(k);
            }
        });
    }
    for (auto& th : pool) {
        th.join();
    }
}

} // namespace detail

struct GridSpec {
    std::vector<double> lambda1;
    std::vector<double> lambda2;

    static std::vector<double> log_space(double lo, double hi, int count)
    {
        require(lo > 0.0 && hi >= lo && count >= 1, ErrorCode::InvalidArgument, "bad log-space bounds");
        std::vector<double> out(static_cast<std::size_t>(count));
        for (int k = 0; k < count; ++k) {
            out[static_cast<std::size_t>(k)] =
                count == 1 ? lo : std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * k / (count - 1));
        }
        return out;
    }
};

struct GridCell {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    bool ok = false;
    std::string error;
    double rmse = std::numeric_limits<double>::quiet_NaN();
    double vaf = std::numeric_limits<double>::quiet_NaN();
    std::optional<FitReport> report;
};

struct GridResult {
    std::vector<GridCell> table;
    std::size_t best = 0;

    [[nodiscard]] const GridCell& best_cell() const { return table.at(best); }
};

/// Scores every (lambda1, lambda2) pair by in-sample RMSE. The minimum wins;
/// ties go to the larger lambda1, then the larger lambda2.
inline GridResult grid_search(const SampledRecord& rec, const GridSpec& grid, const IdentifyOptions& opts,
                              double capacity_ah, unsigned jobs = 1)
{
    require(!grid.lambda1.empty() && !grid.lambda2.empty(), ErrorCode::InvalidArgument, "grid is empty");
    for (double l : grid.lambda1) {
        require(l >= 0.0, ErrorCode::InvalidArgument, "lambda1 candidates must be >= 0");
    }
    for (double l : grid.lambda2) {
        require(l >= 0.0, ErrorCode::InvalidArgument, "lambda2 candidates must be >= 0");
    }
    GridResult result;
    for (double l1 : grid.lambda1) {
        for (double l2 : grid.lambda2) {
            GridCell cell;
            cell.lambda1 = l1;
            cell.lambda2 = l2;
            result.table.push_back(cell);
        }
    }
    detail::parallel_for(result.table.size(), jobs, [&](std::size_t k) {
        GridCell& cell = result.table[k];
        IdentifyOptions local = opts;
        local.id.lambda1 = cell.lambda1;
        local.id.lambda2 = cell.lambda2;
        try {
            const IdResult id = identify(rec, local);
            FitReport rep = evaluate(rec, id, capacity_ah);
            cell.rmse = rep.rmse;
            cell.vaf = rep.vaf;
            cell.ok = std::isfinite(rep.rmse);
            cell.report = std::move(rep);
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
    });

    bool found = false;
    for (std::size_t k = 0; k < result.table.size(); ++k) {
        const GridCell& c = result.table[k];
        if (!c.ok) {
            continue;
        }
        if (!found) {
            result.best = k;
            found = true;
            continue;
        }
        const GridCell& b = result.table[result.best];
        const bool better = c.rmse < b.rmse ||
                            (c.rmse == b.rmse && (c.lambda1 > b.lambda1 ||
                                                  (c.lambda1 == b.lambda1 && c.lambda2 > b.lambda2)));
        if (better) {
            result.best = k;
        }
    }
    require(found, ErrorCode::AllSolvesFailed, "every grid cell failed");
    return result;
}

struct ParameterStats {
    std::string name;
    double truth = 0.0;
    double mean = 0.0;
    double stddev = 0.0;
};

struct MonteCarloResult {
    std::vector<std::optional<FitReport>> runs;
    std::vector<std::string> failures;
    std::vector<ParameterStats> stats;
    /// OCV band on a common soc grid: mean and standard deviation per point.
    Eigen::VectorXd band_soc;
    Eigen::VectorXd band_mean;
    Eigen::VectorXd band_std;
    Eigen::VectorXd band_truth;
    double vaf_mean = 0.0;
    double rmse_mean = 0.0;

    [[nodiscard]] std::size_t succeeded() const
    {
        return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const auto& r) { return r.has_value(); }));
    }
};

struct MonteCarloSetup {
    EcmParams truth = kReferenceBattery;
    double initial_soc = 0.9;
    double noise_std = 1e-4;
    int n_runs = 20;
    std::uint64_t base_seed = 1;
    int band_points = 101;
};

/// Identification on n_runs independent noise realizations (seed base + k)
/// of the same drive profile.
inline MonteCarloResult monte_carlo(const MonteCarloSetup& setup, const OcvFunction& ocv, const SampledRecord& profile,
                                    const IdentifyOptions& opts, unsigned jobs = 1)
{
    require(setup.n_runs >= 1, ErrorCode::InvalidArgument, "n_runs must be >= 1");
    MonteCarloResult mc;
    const auto n = static_cast<std::size_t>(setup.n_runs);
    mc.runs.resize(n);
    std::vector<std::string> errors(n);

    SimConfig clean_cfg;
    clean_cfg.initial_soc = setup.initial_soc;
    const SampledRecord clean = simulate(setup.truth, ocv, profile, clean_cfg);

    detail::parallel_for(n, jobs, [&](std::size_t k) {
        SimConfig cfg = clean_cfg;
        cfg.noise_std = setup.noise_std;
        cfg.seed = setup.base_seed + k;
        try {
            const SampledRecord rec = simulate(setup.truth, ocv, profile, cfg);
            const IdResult id = identify(rec, opts);
            mc.runs[k] = evaluate(rec, id, setup.truth.capacity_ah, clean.voltage);
        } catch (const std::exception& e) {
            errors[k] = e.what();
        }
    });
    for (std::size_t k = 0; k < n; ++k) {
        if (!mc.runs[k]) {
            mc.failures.push_back("run " + std::to_string(k) + ": " + errors[k]);
        }
    }
    const std::size_t ok = mc.succeeded();
    if (ok == 0) {
        return mc;
    }

    const auto stat = [&](const std::string& name, double truth, auto get) {
        double sum = 0.0;
        for (const auto& r : mc.runs) {
            if (r) {
                sum += get(*r);
            }
        }
        const double mean = sum / static_cast<double>(ok);
        double ss = 0.0;
        for (const auto& r : mc.runs) {
            if (r) {
                ss += (get(*r) - mean) * (get(*r) - mean);
            }
        }
        const double sd = ok > 1 ? std::sqrt(ss / static_cast<double>(ok - 1)) : 0.0;
        mc.stats.push_back({name, truth, mean, sd});
        return mean;
    };
    const EcmParams& t = setup.truth;
    stat("r0", t.r0, [](const FitReport& r) { return r.params.r0; });
    stat("r1", t.r1, [](const FitReport& r) { return r.params.r1; });
    stat("r2", t.r2, [](const FitReport& r) { return r.params.r2; });
    stat("c1", t.c1, [](const FitReport& r) { return r.params.c1; });
    stat("c2", t.c2, [](const FitReport& r) { return r.params.c2; });
    stat("tau1", t.tau1(), [](const FitReport& r) { return r.tau1; });
    stat("tau2", t.tau2(), [](const FitReport& r) { return r.tau2; });
    mc.vaf_mean = stat("vaf", 100.0, [](const FitReport& r) { return r.vaf; });
    mc.rmse_mean = stat("rmse", 0.0, [](const FitReport& r) { return r.rmse; });

    // Every run shares the soc trajectory, hence the knot vector.
    const KnotVector& kv = std::find_if(mc.runs.begin(), mc.runs.end(), [](const auto& r) { return r.has_value(); })
                               ->value()
                               .ocv.basis;
    const int pts = std::max(2, setup.band_points);
    mc.band_soc.resize(pts);
    mc.band_mean = Eigen::VectorXd::Zero(pts);
    mc.band_std = Eigen::VectorXd::Zero(pts);
    mc.band_truth.resize(pts);
    for (int p = 0; p < pts; ++p) {
        const double z = kv.lower() + (kv.upper() - kv.lower()) * p / (pts - 1);
        mc.band_soc[p] = z;
        mc.band_truth[p] = ocv(z);
        double sum = 0.0;
        double sq = 0.0;
        for (const auto& r : mc.runs) {
            if (r) {
                const double v = r->ocv(z);
                sum += v;
                sq += v * v;
            }
        }
        const double mean = sum / static_cast<double>(ok);
        mc.band_mean[p] = mean;
        mc.band_std[p] = ok > 1 ? std::sqrt(std::max(0.0, (sq - static_cast<double>(ok) * mean * mean) /
                                                             static_cast<double>(ok - 1)))
                                : 0.0;
    }
    return mc;
}

} // namespace ecmid
