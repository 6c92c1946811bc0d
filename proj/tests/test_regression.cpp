#include "ecmid/ecm_sim.hpp"
#include "ecmid/recovery.hpp"
#include "ecmid/regression.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace ecmid;

namespace {

struct Simulated {
    SampledRecord rec;
    EcmParams params;
};

/// Reference battery on the surrogate drive cycle, soc 0.9 -> 0.2.
Simulated reference_run(double ts, double noise = 0.0)
{
    const SampledRecord prof = gen_drive_cycle(3600, ts, 7, 2.0);
    EcmParams p = kReferenceBattery;
    p.capacity_ah = -prof.current.sum() * ts / 3600.0 / 0.7;
    SimConfig sc;
    sc.initial_soc = 0.9;
    sc.noise_std = noise;
    sc.seed = 5;
    return {simulate(p, reference_ocv(), prof, sc), p};
}

/// ||y - Pi phi* - F vec(a~ gamma*^T)||_inf / ||y||_inf at the true parameters.
double true_parameter_residual(const Simulated& sim, int knot_count, const IdConfig& cfg)
{
    const KnotVector kv = knots_for(sim.rec, knot_count);
    const IdProblem prob = assemble(sim.rec, kv, cfg);
    const Eigen::VectorXd zs = Eigen::VectorXd::LinSpaced(4000, kv.lower(), kv.upper());
    const Eigen::VectorXd gamma = fit_control_points(kv, zs, ocv_sim_curve);
    const TildeCoeffs t = tf_to_tilde(physical_to_tf(sim.params), cfg.nu);
    Eigen::VectorXd phi(5 + kv.h());
    phi << t.a, t.b, gamma;
    Eigen::VectorXd vec_m(2 * kv.h());
    vec_m << t.a[0] * gamma, t.a[1] * gamma;
    return residual(prob, phi, vec_m).lpNorm<Eigen::Infinity>() / prob.y.lpNorm<Eigen::Infinity>();
}

} // namespace

TEST(Assemble, UnexcitedRecordHasDegenerateColumns)
{
    SampledRecord rec;
    rec.ts = 1.0;
    rec.current = Eigen::VectorXd::Zero(400);
    rec.voltage = Eigen::VectorXd::Constant(400, 3.7);
    rec.soc = Eigen::VectorXd::Constant(400, 0.5);
    try {
        (void)assemble(rec, KnotVector::clamped_uniform(0.4, 0.6, 5), IdConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DegenerateColumn);
        EXPECT_NE(std::string(e.what()).find("Pi column 2"), std::string::npos) << e.what();
    }
}

TEST(Assemble, TrueParametersSatisfyTheDataEquation)
{
    // Split hold with the true R0 at a fine sampling interval.
    const Simulated sim = reference_run(0.1);
    IdConfig cfg;
    cfg.hold = VoltageHold::SplitFirst;
    cfg.r0_hint = sim.params.r0;
    EXPECT_LT(true_parameter_residual(sim, 41, cfg), 1e-6);
}

TEST(Assemble, ZeroHoldResidualShrinksWithSamplingInterval)
{
    // Holding the voltage flat lags it by half a sample, an O(ts) error.
    IdConfig cfg;
    const double coarse = true_parameter_residual(reference_run(1.0), 41, cfg);
    const double fine = true_parameter_residual(reference_run(0.1), 41, cfg);
    EXPECT_LT(fine, 0.2 * coarse);
    IdConfig split = cfg;
    split.hold = VoltageHold::SplitFirst;
    split.r0_hint = kReferenceBattery.r0;
    EXPECT_LT(true_parameter_residual(reference_run(1.0), 41, split), 0.1 * coarse);
}

TEST(Assemble, ShapesAndRowCount)
{
    const Simulated sim = reference_run(1.0);
    const KnotVector kv = knots_for(sim.rec, 21);
    IdConfig cfg;
    const IdProblem prob = assemble(sim.rec, kv, cfg);
    const Eigen::Index burn = burn_in_rows(cfg.nu, 1.0, sim.rec.size());
    EXPECT_EQ(prob.rows(), sim.rec.size() - burn);
    EXPECT_EQ(prob.pi.cols(), 5 + kv.h());
    EXPECT_EQ(prob.f.cols(), 2 * kv.h());
    EXPECT_EQ(prob.dg3.rows(), prob.rows() - 1);
    EXPECT_EQ(prob.dg3.cols(), kv.h());
    EXPECT_EQ(std::count(prob.burn_mask.begin(), prob.burn_mask.end(), true), burn);
    EXPECT_EQ(prob.row_index.front(), burn);
    EXPECT_TRUE((prob.pi_scale.array() > 0.0).all());
    EXPECT_TRUE((prob.f_scale.array() > 0.0).all());
    EXPECT_NEAR(prob.pi.colwise().norm().maxCoeff(), 1.0, 1e-12);
    EXPECT_TRUE(prob.pi.allFinite() && prob.f.allFinite() && prob.y.allFinite());

    IdConfig none = cfg;
    none.burn_in = BurnIn::None;
    EXPECT_EQ(assemble(sim.rec, kv, none).rows(), sim.rec.size());
    IdConfig fixed = cfg;
    fixed.burn_in = BurnIn::Fixed;
    fixed.burn_in_rows = 123;
    EXPECT_EQ(assemble(sim.rec, kv, fixed).rows(), sim.rec.size() - 123);
}

TEST(Assemble, ScalingIsInvertible)
{
    const Simulated sim = reference_run(1.0, 1e-4);
    const IdProblem prob = assemble(sim.rec, knots_for(sim.rec, 6), IdConfig{});
    const Eigen::VectorXd scaled = prob.pi.colPivHouseholderQr().solve(prob.y).cwiseQuotient(prob.pi_scale);
    const Eigen::VectorXd raw = prob.pi_raw().colPivHouseholderQr().solve(prob.y);
    EXPECT_LT((scaled - raw).norm(), 1e-8 * raw.norm());
}

TEST(Assemble, BilinearColumnsAreRowWise)
{
    const Simulated sim = reference_run(1.0);
    const KnotVector kv = knots_for(sim.rec, 6);
    const IdProblem prob = assemble(sim.rec, kv, IdConfig{});
    const Eigen::MatrixXd f = prob.f_raw();
    const Eigen::MatrixXd pi = prob.pi_raw();
    // Column h + i of F is [L0 g_i]; column 5 + i of Pi is [L2 g_i]; the
    // three blocks share DC gains 2, -2, 2 on a slowly varying soc.
    const int h = kv.h();
    for (int i = 0; i < h; ++i) {
        const double c1 = f.col(i).dot(pi.col(5 + i)) / (f.col(i).norm() * pi.col(5 + i).norm());
        const double c0 = f.col(h + i).dot(pi.col(5 + i)) / (f.col(h + i).norm() * pi.col(5 + i).norm());
        EXPECT_LT(c1, -0.5) << i;
        EXPECT_GT(c0, 0.5) << i;
    }
}

TEST(Assemble, RequiresSoc)
{
    Simulated sim = reference_run(1.0);
    const KnotVector kv = knots_for(sim.rec, 6);
    sim.rec.soc.reset();
    EXPECT_THROW((void)assemble(sim.rec, kv, IdConfig{}), Error);
}

TEST(Bundle, RoundTrip)
{
    const Simulated sim = reference_run(1.0);
    const IdProblem prob = assemble(sim.rec, knots_for(sim.rec, 6), IdConfig{});
    const auto dir = std::filesystem::temp_directory_path() / "ecmid_bundle_roundtrip";
    std::filesystem::remove_all(dir);
    write_bundle(dir, prob, {"test"});
    const IdProblem back = read_bundle(dir);
    EXPECT_EQ(back.h, prob.h);
    EXPECT_DOUBLE_EQ(back.nu, prob.nu);
    EXPECT_EQ(back.y, prob.y);
    EXPECT_LT((back.pi_raw() - prob.pi_raw()).cwiseAbs().maxCoeff(), 1e-15 * prob.pi_raw().cwiseAbs().maxCoeff());
    EXPECT_LT((back.f_raw() - prob.f_raw()).cwiseAbs().maxCoeff(), 1e-15 * prob.f_raw().cwiseAbs().maxCoeff());
    EXPECT_EQ(back.dg3, prob.dg3);
    EXPECT_EQ(back.row_index, prob.row_index);
    std::filesystem::remove_all(dir);
}
