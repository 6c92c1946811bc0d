#pragma once

// Second-order equivalent circuit model: exact zero-order-hold simulation,
// the reference OCV curve and a synthetic urban drive-cycle generator.

#include "ecmid/error.hpp"
#include "ecmid/signals.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>

namespace ecmid {

/// R0 in series with two RC branches (R1||C1 fast, R2||C2 slow).
struct EcmParams {
    double r0 = 0.06;
    double r1 = 0.03;
    double r2 = 0.02;
    double c1 = 600.0;
    double c2 = 5000.0;
    double capacity_ah = 2.0;

    [[nodiscard]] double tau1() const noexcept { return r1 * c1; }
    [[nodiscard]] double tau2() const noexcept { return r2 * c2; }
};

/// Parameters of the simulated reference battery used throughout the tests.
inline constexpr EcmParams kReferenceBattery{0.06, 0.03, 0.02, 600.0, 5000.0, 2.0};

inline void validate(const EcmParams& p)
{
    const std::array<double, 6> values{p.r0, p.r1, p.r2, p.c1, p.c2, p.capacity_ah};
    for (double v : values) {
        require(std::isfinite(v) && v > 0.0, ErrorCode::InvalidParams, "circuit values must be finite and > 0");
    }
    require(std::isfinite(p.tau1()) && std::isfinite(p.tau2()), ErrorCode::InvalidParams,
            "time constants must be finite");
}

struct OcvFunction {
    std::function<double(double)> eval;
    double z_lo = 0.0;
    double z_hi = 1.0;

    double operator()(double z) const { return eval(z); }
};

/// 3 + 0.03 (1.5 - z)^-4 + 0.1 ln(z + 0.01), finite for z in (-0.01, 1.5).
inline double ocv_sim_curve(double z)
{
    require(z > -0.01 && z < 1.5, ErrorCode::DomainError,
            "reference OCV curve is defined on (-0.01, 1.5), got " + std::to_string(z));
    const double d = 1.5 - z;
    return 3.0 + 0.03 / (d * d * d * d) + 0.1 * std::log(z + 0.01);
}

inline OcvFunction reference_ocv() { return OcvFunction{&ocv_sim_curve, 0.0, 1.0}; }

struct SimConfig {
    double noise_std = 0.0;
    std::uint64_t seed = 0;
    double initial_soc = 0.5;
    double v1_init = 0.0;
    double v2_init = 0.0;
};

/// Portable N(0,1) stream: mt19937_64 words (whose sequence the standard
/// fixes), mapped to (0,1] with 53-bit resolution, then Box-Muller. Both
/// Box-Muller outputs are used in turn.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

    double next()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Per-step ZOH coefficients of one RC branch: v+ = decay v + gain i.
struct RcStep {
    double decay;
    double gain;

    static RcStep make(double r, double c, double ts)
    {
        const double x = ts / (r * c);
        // 1 - e^{-x} via expm1 keeps full precision for short steps.
        return RcStep{std::exp(-x), -r * std::expm1(-x)};
    }
};

/// Noise-free branch voltages v1+v2 at each sample for a ZOH current.
inline Eigen::VectorXd rc_voltages(const EcmParams& p, const Eigen::VectorXd& current, double ts,
                                   double v1_init = 0.0, double v2_init = 0.0)
{
    const RcStep b1 = RcStep::make(p.r1, p.c1, ts);
    const RcStep b2 = RcStep::make(p.r2, p.c2, ts);
    Eigen::VectorXd out(current.size());
    double v1 = v1_init;
    double v2 = v2_init;
    for (Eigen::Index j = 0; j < current.size(); ++j) {
        out[j] = v1 + v2;
        v1 = b1.decay * v1 + b1.gain * current[j];
        v2 = b2.decay * v2 + b2.gain * current[j];
    }
    return out;
}

/// Terminal voltage of the ECM driven by `current.current` (ZOH). The
/// returned record carries the input current, the simulated voltage and the
/// Coulomb-counted soc.
inline SampledRecord simulate(const EcmParams& params, const OcvFunction& ocv, const SampledRecord& current,
                              const SimConfig& cfg)
{
    validate(params);
    require(cfg.noise_std >= 0.0 && std::isfinite(cfg.noise_std), ErrorCode::InvalidArgument,
            "noise_std must be >= 0");
    require(current.ts > 0.0 && current.size() >= 1, ErrorCode::InvalidRecord, "empty current profile");

    SampledRecord out;
    try {
        out = coulomb_count(current, BatteryMeta{params.capacity_ah, cfg.initial_soc});
    } catch (const Error& e) {
        if (e.code() == ErrorCode::SocOutOfRange) {
            fail(ErrorCode::SocRangeExceeded, e.what());
        }
        throw;
    }
    const Eigen::VectorXd& soc = *out.soc;
    const Eigen::VectorXd dynamic = rc_voltages(params, current.current, current.ts, cfg.v1_init, cfg.v2_init);

    GaussianStream noise(cfg.seed);
    out.voltage.resize(current.size());
    for (Eigen::Index j = 0; j < current.size(); ++j) {
        const double z = soc[j];
        require(z >= ocv.z_lo && z <= ocv.z_hi, ErrorCode::SocRangeExceeded,
                "soc " + std::to_string(z) + " at sample " + std::to_string(j) + " leaves the OCV range");
        const double v_oc = ocv(z);
        require(std::isfinite(v_oc), ErrorCode::NonFiniteOcv, "OCV evaluated to a non-finite value");
        double v = dynamic[j] + params.r0 * current.current[j] + v_oc;
        if (cfg.noise_std > 0.0) {
            v += cfg.noise_std * noise.next();
        }
        out.voltage[j] = v;
    }
    return out;
}

/// Surrogate urban drive cycle. Piecewise-constant segments of 1-60 s; each
/// segment either rests at 0 A (10%) or draws level = -0.3 A + U(-0.7 A, 0.7 A),
/// a zero-mean burst around a discharge bias, so |i| <= amplitude always and
/// the cycle drains the battery on average.
inline SampledRecord gen_drive_cycle(double duration_s, double ts, std::uint64_t seed, double amplitude_a)
{
    require(ts > 0.0 && duration_s >= 10.0 * ts, ErrorCode::InvalidArgument, "duration must be at least 10 ts");
    require(amplitude_a >= 0.0, ErrorCode::InvalidArgument, "amplitude must be >= 0");
    const auto n = static_cast<Eigen::Index>(std::llround(duration_s / ts));

    GaussianStream rng(seed);
    SampledRecord rec;
    rec.ts = ts;
    rec.t0 = 0.0;
    rec.current = Eigen::VectorXd::Zero(n);
    rec.voltage = Eigen::VectorXd::Zero(n);
    Eigen::Index j = 0;
    while (j < n) {
        const double seconds = 1.0 + std::floor(rng.uniform() * 60.0);
        const auto len = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(seconds / ts)));
        double level = 0.0;
        if (rng.uniform() >= 0.1) {
            level = amplitude_a * (-0.3 + 0.7 * (2.0 * rng.uniform() - 1.0));
        }
        const Eigen::Index end = std::min(n, j + len);
        rec.current.segment(j, end - j).setConstant(level);
        j = end;
    }
    return rec;
}

} // namespace ecmid
