// ecmid: battery equivalent-circuit identification from current/voltage logs.
//
//   ecmid simulate   --config run.ini --out sim.csv
//   ecmid identify   --config run.ini --data log.csv --out results/
//   ecmid tune       --config run.ini --data log.csv --out results/
//   ecmid montecarlo --config run.ini --out results/
//
// Exit codes: 0 success, 2 usage or configuration, 3 data, 4 numerical.

#include "ecmid/config.hpp"
#include "ecmid/metrics.hpp"
#include "ecmid/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4 };

struct Options {
    std::string config;
    std::string data;
    std::string out;
    unsigned jobs = 0;
    bool verbose = false;
    std::optional<std::uint64_t> seed;
    std::string dump_problem;
};

int exit_code(ecmid::ErrorCode code)
{
    using ecmid::ErrorCode;
    switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidParams:
        return kConfig;
    case ErrorCode::MissingColumn:
    case ErrorCode::NonMonotonicTime:
    case ErrorCode::NonUniformSampling:
    case ErrorCode::EmptyFile:
    case ErrorCode::ParseError:
    case ErrorCode::InvalidRecord:
    case ErrorCode::SocOutOfRange:
    case ErrorCode::MissingSoc:
    case ErrorCode::SocRangeExceeded:
    case ErrorCode::NonFiniteOcv:
    case ErrorCode::DomainError:
    case ErrorCode::OutOfSupport:
    case ErrorCode::DegenerateColumn:
    case ErrorCode::LengthMismatch:
    case ErrorCode::ZeroVariance:
    case ErrorCode::EmptyInput:
        return kData;
    default:
        return kNumerical;
    }
}

std::string header_line(const ecmid::RunConfig& cfg)
{
    return std::string("ecmid ") + ecmid::kVersion + " config " + cfg.hash();
}

/// Writes through a temporary sibling and renames it into place.
template <class Writer>
void write_atomic(const fs::path& path, Writer&& write)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            ecmid::fail(ecmid::ErrorCode::ConfigError, "cannot write " + tmp.string());
        }
        write(out);
        out.flush();
        if (!out) {
            ecmid::fail(ecmid::ErrorCode::ConfigError, "write failed for " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

void write_json(const fs::path& path, const ecmid::RunConfig& cfg, ordered_json body)
{
    ordered_json doc;
    doc["header"] = header_line(cfg);
    for (auto& [k, v] : body.items()) {
        doc[k] = v;
    }
    write_atomic(path, [&](std::ostream& out) { out << doc.dump(2) << '\n'; });
}

ordered_json params_json(const ecmid::EcmParams& p)
{
    return ordered_json{{"r0_ohm", p.r0}, {"r1_ohm", p.r1}, {"r2_ohm", p.r2}, {"c1_f", p.c1}, {"c2_f", p.c2}};
}

ordered_json report_json(const ecmid::IdResult& id, const ecmid::FitReport& rep, const ecmid::RunConfig& cfg)
{
    const auto& d = id.solution.diagnostics;
    ordered_json j;
    j["params"] = params_json(rep.params);
    j["tau1_s"] = rep.tau1;
    j["tau2_s"] = rep.tau2;
    j["rmse_v"] = rep.rmse;
    j["vaf_pct"] = rep.vaf;
    if (rep.rmse_clean) {
        j["rmse_clean_v"] = *rep.rmse_clean;
    }
    j["n_samples"] = rep.n_samples;
    j["flags"] = {{"converged", rep.converged},
                  {"non_physical", rep.non_physical},
                  {"negative_coefficient", rep.negative_coefficient},
                  {"degenerate_split", id.physical.degenerate_split}};
    j["transfer_function"] = {{"a1", rep.tf.a1}, {"a2", rep.tf.a2}, {"b0", rep.tf.b0}, {"b1", rep.tf.b1},
                              {"b2", rep.tf.b2}};
    j["a_tilde"] = {id.solution.a_tilde[0], id.solution.a_tilde[1]};
    j["b_tilde"] = {id.solution.b_tilde[0], id.solution.b_tilde[1], id.solution.b_tilde[2]};
    j["solver"] = {{"iterations", d.iterations},
                   {"objective", d.final_objective},
                   {"refit_residual", d.refit_residual},
                   {"hold_passes_run", id.passes}};
    j["settings"] = {{"nu", cfg.nu}, {"knot_count", cfg.knot_count}, {"lambda1", cfg.lambda1},
                     {"lambda2", cfg.lambda2}};
    j["ocv_spline"] = {{"knots", id.knots.knots()},
                       {"gamma", std::vector<double>(id.ocv.gamma.data(), id.ocv.gamma.data() + id.ocv.gamma.size())}};
    return j;
}

void write_ocv_table(const fs::path& path, const ecmid::SplineCurve& curve, const ecmid::RunConfig& cfg)
{
    write_atomic(path, [&](std::ostream& out) {
        out << "# " << header_line(cfg) << '\n';
        curve.write_table(out);
    });
}

ecmid::SampledRecord make_profile(const ecmid::RunConfig& cfg)
{
    if (cfg.profile == "step") {
        const auto n = static_cast<Eigen::Index>(std::llround(cfg.duration_s / cfg.ts));
        ecmid::SampledRecord rec;
        rec.ts = cfg.ts;
        rec.current = Eigen::VectorXd::Zero(n);
        rec.voltage = Eigen::VectorXd::Zero(n);
        const auto start = std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(std::llround(60.0 / cfg.ts)));
        rec.current.tail(n - start).setConstant(-cfg.amplitude_a);
        return rec;
    }
    return ecmid::gen_drive_cycle(cfg.duration_s, cfg.ts, cfg.seed, cfg.amplitude_a);
}

ecmid::RunConfig load(const Options& opt)
{
    ecmid::RunConfig cfg = opt.config.empty() ? ecmid::RunConfig{} : ecmid::load_config(opt.config);
    if (opt.seed) {
        cfg.seed = *opt.seed;
    }
    if (!opt.data.empty()) {
        cfg.data = opt.data;
    }
    if (!opt.out.empty()) {
        cfg.out = opt.out;
    }
    return cfg;
}

unsigned job_count(const Options& opt)
{
    return opt.jobs > 0 ? opt.jobs : std::max(1u, std::thread::hardware_concurrency());
}

ecmid::IdentifyOptions identify_options(const ecmid::RunConfig& cfg, const Options& opt)
{
    auto o = cfg.identify_options();
    if (opt.verbose) {
        o.solver.trace_sink = [](const std::string& line) { std::cerr << line << '\n'; };
    }
    return o;
}

/// Loads the data file and makes sure it carries soc.
ecmid::SampledRecord load_record(const ecmid::RunConfig& cfg)
{
    ecmid::require(!cfg.data.empty(), ecmid::ErrorCode::ConfigError, "no data file: pass --data or set io.data");
    ecmid::SampledRecord rec = ecmid::load_csv(fs::path(cfg.data), cfg.schema);
    if (!rec.has_soc()) {
        ecmid::require(cfg.initial_soc.has_value(), ecmid::ErrorCode::ConfigError,
                       "the data has no '" + cfg.schema.soc_col +
                           "' column: set battery.initial_soc (and battery.capacity_ah) so soc can be "
                           "Coulomb-counted");
        rec = ecmid::coulomb_count(rec, ecmid::BatteryMeta{cfg.battery.capacity_ah, *cfg.initial_soc});
    }
    return rec;
}

fs::path require_out(const ecmid::RunConfig& cfg)
{
    ecmid::require(!cfg.out.empty(), ecmid::ErrorCode::ConfigError, "no output path: pass --out or set io.out");
    return fs::path(cfg.out);
}

void print_summary(const ecmid::FitReport& rep)
{
    std::printf("R0 = %.6g ohm\nR1 = %.6g ohm   C1 = %.6g F   tau1 = %.5g s\n"
                "R2 = %.6g ohm   C2 = %.6g F   tau2 = %.5g s\n",
                rep.params.r0, rep.params.r1, rep.params.c1, rep.tau1, rep.params.r2, rep.params.c2, rep.tau2);
    std::printf("RMSE = %.4g mV   VAF = %.4f %%   samples = %lld%s%s\n", rep.rmse * 1e3, rep.vaf,
                static_cast<long long>(rep.n_samples), rep.converged ? "" : "   [solver not converged]",
                rep.negative_coefficient ? "   [negative coefficient]" : "");
}

int cmd_simulate(const Options& opt)
{
    const ecmid::RunConfig cfg = load(opt);
    const fs::path out = require_out(cfg);
    const ecmid::SampledRecord profile = make_profile(cfg);
    ecmid::SimConfig sc;
    sc.initial_soc = cfg.initial_soc.value_or(0.9);
    sc.noise_std = cfg.noise_std;
    sc.seed = cfg.seed;
    const ecmid::SampledRecord rec = ecmid::simulate(cfg.battery, ecmid::reference_ocv(), profile, sc);

    write_atomic(out, [&](std::ostream& os) { ecmid::write_csv(os, rec, cfg.schema, {header_line(cfg)}); });

    ordered_json truth;
    truth["params"] = params_json(cfg.battery);
    truth["capacity_ah"] = cfg.battery.capacity_ah;
    truth["tau1_s"] = cfg.battery.tau1();
    truth["tau2_s"] = cfg.battery.tau2();
    truth["initial_soc"] = sc.initial_soc;
    truth["noise_std_v"] = sc.noise_std;
    truth["seed"] = sc.seed;
    truth["ocv"] = "3 + 0.03 (1.5 - z)^-4 + 0.1 ln(z + 0.01)";
    fs::path truth_path = out;
    truth_path += ".truth.json";
    write_json(truth_path, cfg, truth);

    fs::path table = out;
    table += ".ocv.csv";
    write_atomic(table, [&](std::ostream& os) {
        os << "# " << header_line(cfg) << '\n' << "soc,ocv_v\n";
        os.precision(10);
        const double lo = rec.soc->minCoeff();
        const double hi = rec.soc->maxCoeff();
        for (int k = 0; k <= 200; ++k) {
            const double z = lo + (hi - lo) * k / 200.0;
            os << z << ',' << ecmid::ocv_sim_curve(z) << '\n';
        }
    });
    std::printf("wrote %lld samples to %s (soc %.4f -> %.4f)\n", static_cast<long long>(rec.size()),
                out.string().c_str(), (*rec.soc)[0], (*rec.soc)[rec.size() - 1]);
    return kOk;
}

int cmd_identify(const Options& opt)
{
    const ecmid::RunConfig cfg = load(opt);
    const fs::path out = require_out(cfg);
    const ecmid::SampledRecord rec = load_record(cfg);
    const ecmid::IdResult id = ecmid::identify(rec, identify_options(cfg, opt));
    if (!opt.dump_problem.empty()) {
        ecmid::write_bundle(opt.dump_problem, id.problem, {header_line(cfg)});
    }
    const ecmid::FitReport rep = ecmid::evaluate(rec, id, cfg.battery.capacity_ah);

    write_json(out / "report.json", cfg, report_json(id, rep, cfg));
    write_ocv_table(out / "ocv.csv", id.ocv, cfg);
    write_atomic(out / "prediction.csv", [&](std::ostream& os) {
        os << "# " << header_line(cfg) << '\n' << "time_s,voltage_v,predicted_v\n";
        for (Eigen::Index j = 0; j < rec.size(); ++j) {
            os << ecmid::detail::format_double(rec.time(j)) << ',' << ecmid::detail::format_double(rec.voltage[j])
               << ',' << ecmid::detail::format_double(rep.predicted[j]) << '\n';
        }
    });
    print_summary(rep);
    return kOk;
}

int cmd_tune(const Options& opt)
{
    const ecmid::RunConfig cfg = load(opt);
    const fs::path out = require_out(cfg);
    ecmid::require(!cfg.lambda1_grid.empty() && !cfg.lambda2_grid.empty(), ecmid::ErrorCode::ConfigError,
                   "solver.lambda1_grid and solver.lambda2_grid must each list at least one value");
    const ecmid::SampledRecord rec = load_record(cfg);
    const ecmid::GridSpec grid{cfg.lambda1_grid, cfg.lambda2_grid};
    const ecmid::GridResult result =
        ecmid::grid_search(rec, grid, identify_options(cfg, opt), cfg.battery.capacity_ah, job_count(opt));

    write_atomic(out / "grid.csv", [&](std::ostream& os) {
        os << "# " << header_line(cfg) << '\n' << "lambda1,lambda2,ok,rmse_v,vaf_pct,best,error\n";
        for (std::size_t k = 0; k < result.table.size(); ++k) {
            const auto& c = result.table[k];
            std::string err = c.error;
            std::replace(err.begin(), err.end(), ',', ';');
            os << ecmid::detail::format_double(c.lambda1) << ',' << ecmid::detail::format_double(c.lambda2) << ','
               << (c.ok ? 1 : 0) << ',' << ecmid::detail::format_double(c.rmse) << ','
               << ecmid::detail::format_double(c.vaf) << ',' << (k == result.best ? 1 : 0) << ',' << err << '\n';
        }
    });
    const auto& best = result.best_cell();
    ecmid::RunConfig best_cfg = cfg;
    best_cfg.lambda1 = best.lambda1;
    best_cfg.lambda2 = best.lambda2;
    auto local = identify_options(best_cfg, opt);
    const ecmid::IdResult id = ecmid::identify(rec, local);
    write_json(out / "report.json", cfg, report_json(id, *best.report, best_cfg));
    write_ocv_table(out / "ocv.csv", id.ocv, cfg);
    std::printf("best cell: lambda1 = %g, lambda2 = %g\n", best.lambda1, best.lambda2);
    print_summary(*best.report);
    return kOk;
}

int cmd_montecarlo(const Options& opt)
{
    const ecmid::RunConfig cfg = load(opt);
    const fs::path out = require_out(cfg);
    ecmid::MonteCarloSetup setup;
    setup.truth = cfg.battery;
    setup.initial_soc = cfg.initial_soc.value_or(0.9);
    setup.noise_std = cfg.noise_std;
    setup.n_runs = cfg.runs;
    setup.base_seed = cfg.seed;
    const ecmid::SampledRecord profile = make_profile(cfg);
    const ecmid::MonteCarloResult mc =
        ecmid::monte_carlo(setup, ecmid::reference_ocv(), profile, identify_options(cfg, opt), job_count(opt));

    write_atomic(out / "runs.csv", [&](std::ostream& os) {
        os << "# " << header_line(cfg) << '\n'
           << "run,seed,ok,r0_ohm,r1_ohm,r2_ohm,c1_f,c2_f,tau1_s,tau2_s,rmse_v,rmse_clean_v,vaf_pct\n";
        for (std::size_t k = 0; k < mc.runs.size(); ++k) {
            os << k << ',' << setup.base_seed + k << ',';
            if (const auto& r = mc.runs[k]) {
                using ecmid::detail::format_double;
                os << "1," << format_double(r->params.r0) << ',' << format_double(r->params.r1) << ','
                   << format_double(r->params.r2) << ',' << format_double(r->params.c1) << ','
                   << format_double(r->params.c2) << ',' << format_double(r->tau1) << ',' << format_double(r->tau2)
                   << ',' << format_double(r->rmse) << ',' << format_double(r->rmse_clean.value_or(NAN)) << ','
                   << format_double(r->vaf) << '\n';
            } else {
                os << "0,,,,,,,,,,\n";
            }
        }
    });
    write_atomic(out / "stats.csv", [&](std::ostream& os) {
        os << "# " << header_line(cfg) << '\n' << "quantity,truth,mean,std,rel_error\n";
        for (const auto& s : mc.stats) {
            using ecmid::detail::format_double;
            const double rel = s.truth != 0.0 ? (s.mean - s.truth) / s.truth : NAN;
            os << s.name << ',' << format_double(s.truth) << ',' << format_double(s.mean) << ','
               << format_double(s.stddev) << ',' << format_double(rel) << '\n';
        }
    });
    if (mc.band_soc.size() > 0) {
        write_atomic(out / "ocv_band.csv", [&](std::ostream& os) {
            os << "# " << header_line(cfg) << '\n' << "soc,truth_v,mean_v,lower_2sigma_v,upper_2sigma_v\n";
            os.precision(10);
            for (Eigen::Index p = 0; p < mc.band_soc.size(); ++p) {
                os << mc.band_soc[p] << ',' << mc.band_truth[p] << ',' << mc.band_mean[p] << ','
                   << mc.band_mean[p] - 2.0 * mc.band_std[p] << ',' << mc.band_mean[p] + 2.0 * mc.band_std[p] << '\n';
            }
        });
    }
    for (std::size_t k = 0; k < mc.runs.size(); ++k) {
        if (const auto& r = mc.runs[k]) {
            ordered_json j;
            j["run"] = k;
            j["seed"] = setup.base_seed + k;
            j["params"] = params_json(r->params);
            j["tau1_s"] = r->tau1;
            j["tau2_s"] = r->tau2;
            j["rmse_v"] = r->rmse;
            j["rmse_clean_v"] = r->rmse_clean.value_or(NAN);
            j["vaf_pct"] = r->vaf;
            j["converged"] = r->converged;
            char name[32];
            std::snprintf(name, sizeof(name), "run_%03zu.json", k);
            write_json(out / "runs" / name, cfg, j);
        }
    }
    std::printf("%zu/%d runs succeeded; mean VAF = %.4f %%, mean RMSE = %.4g mV\n", mc.succeeded(), cfg.runs,
                mc.vaf_mean, mc.rmse_mean * 1e3);
    for (const auto& f : mc.failures) {
        std::fprintf(stderr, "%s\n", f.c_str());
    }
    for (const auto& s : mc.stats) {
        std::printf("%-5s truth %-12.6g mean %-12.6g std %.3g\n", s.name.c_str(), s.truth, s.mean, s.stddev);
    }
    return mc.succeeded() > 0 ? kOk : kNumerical;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Battery equivalent-circuit identification from current/voltage data"};
    app.set_version_flag("--version", std::string(ecmid::kVersion));
    app.require_subcommand(1);
    Options opt;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "run configuration file (INI)");
        sub->add_option("--out", opt.out, "output file (simulate) or directory");
        sub->add_option("--jobs", opt.jobs, "worker threads for tune/montecarlo (default: all cores)");
        sub->add_flag("--verbose", opt.verbose, "stream solver iterations to stderr");
        sub->add_option("--seed", opt.seed, "override experiment.seed");
    };
    auto* sim = app.add_subcommand("simulate", "simulate the reference battery on a drive profile");
    common(sim);
    auto* idf = app.add_subcommand("identify", "identify parameters and OCV curve from a log");
    common(idf);
    idf->add_option("--data", opt.data, "input CSV");
    idf->add_option("--dump-problem", opt.dump_problem, "write the assembled regression problem to this directory");
    auto* tune = app.add_subcommand("tune", "grid search over lambda1 x lambda2");
    common(tune);
    tune->add_option("--data", opt.data, "input CSV");
    auto* mc = app.add_subcommand("montecarlo", "identification over repeated noise realizations");
    common(mc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (sim->parsed()) {
            return cmd_simulate(opt);
        }
        if (idf->parsed()) {
            return cmd_identify(opt);
        }
        if (tune->parsed()) {
            return cmd_tune(opt);
        }
        return cmd_montecarlo(opt);
    } catch (const ecmid::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(e.code());
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNumerical;
    }
}
