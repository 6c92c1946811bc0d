#pragma once

// Sectioned key-value run configuration (INI syntax) for the command-line
// tool. Every key is optional; unknown sections and keys are rejected.

#include "ecmid/ecm_sim.hpp"
#include "ecmid/error.hpp"
#include "ecmid/metrics.hpp"
#include "ecmid/regression.hpp"
#include "ecmid/signals.hpp"
#include "ecmid/solver.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <functional>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ecmid {

struct RunConfig {
    // [battery]
    EcmParams battery = kReferenceBattery;
    std::optional<double> initial_soc;

    // [filter]
    double nu = 0.1;
    BurnIn burn_in = BurnIn::Auto;
    Eigen::Index burn_in_rows = 0;
    bool split_hold = true;
    int hold_passes = 2;

    // [spline]
    int knot_count = 21;

    // [solver]
    double lambda1 = 1e-8;
    double lambda2 = 0.0;
    std::vector<double> lambda1_grid{1e-9, 1e-8, 1e-7};
    std::vector<double> lambda2_grid{0.0, 1e-8, 1e-6};
    int max_iters = 5000;
    double abs_tol = 1e-8;
    double rel_tol = 1e-6;
    double rho = 1.0;
    bool rank_one = false;
    bool refit = true;

    // [io]
    CsvSchema schema;
    std::string data;
    std::string out;

    // [experiment]
    std::uint64_t seed = 1;
    int runs = 20;
    double noise_std = 1e-4;
    double duration_s = 3600.0;
    double ts = 1.0;
    double amplitude_a = 2.0;
    std::string profile = "drive";

    [[nodiscard]] IdentifyOptions identify_options() const
    {
        IdentifyOptions o;
        o.id.nu = nu;
        o.id.knot_count = knot_count;
        o.id.lambda1 = lambda1;
        o.id.lambda2 = lambda2;
        o.id.burn_in = burn_in;
        o.id.burn_in_rows = burn_in_rows;
        o.hold_passes = split_hold ? hold_passes : 0;
        o.solver.max_iters = max_iters;
        o.solver.abs_tol = abs_tol;
        o.solver.rel_tol = rel_tol;
        o.solver.rho = rho;
        o.solver.rank_one_projection = rank_one;
        o.solver.consistency_refit = refit;
        return o;
    }

    /// Canonical `section.key = value` listing of every setting except the
    /// output path, so the same run written elsewhere hashes the same.
    [[nodiscard]] std::string canonical() const;

    /// FNV-1a 64-bit hash of canonical(), as 16 hex digits.
    [[nodiscard]] std::string hash() const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : canonical()) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << h;
        return os.str();
    }
};

namespace detail {

inline std::string join_doubles(const std::vector<double>& v)
{
    std::string out;
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (k > 0) {
            out += ',';
        }
        out += format_double(v[k]);
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& text)
{
    const std::string t(trim(text));
    if (t == "true" || t == "1" || t == "yes" || t == "on") {
        return true;
    }
    if (t == "false" || t == "0" || t == "no" || t == "off") {
        return false;
    }
    fail(ErrorCode::ConfigError, key + ": expected a boolean, got '" + text + "'");
}

inline double parse_number(const std::string& key, const std::string& text)
{
    try {
        return parse_double(trim(text), 0);
    } catch (const Error&) {
        fail(ErrorCode::ConfigError, key + ": expected a number, got '" + text + "'");
    }
}

inline long long parse_integer(const std::string& key, const std::string& text)
{
    const double v = parse_number(key, text);
    require(std::floor(v) == v && std::abs(v) < 9.0e15, ErrorCode::ConfigError,
            key + ": expected an integer, got '" + text + "'");
    return static_cast<long long>(v);
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text)
{
    std::vector<double> out;
    for (const auto field : split_fields(text)) {
        if (!field.empty()) {
            out.push_back(parse_number(key, std::string(field)));
        }
    }
    return out;
}

} // namespace detail

inline std::string RunConfig::canonical() const
{
    using detail::format_double;
    std::ostringstream os;
    const auto b = [](bool v) { return v ? "true" : "false"; };
    os << "battery.capacity_ah = " << format_double(battery.capacity_ah) << '\n'
       << "battery.initial_soc = " << (initial_soc ? format_double(*initial_soc) : "") << '\n'
       << "battery.r0 = " << format_double(battery.r0) << '\n'
       << "battery.r1 = " << format_double(battery.r1) << '\n'
       << "battery.r2 = " << format_double(battery.r2) << '\n'
       << "battery.c1 = " << format_double(battery.c1) << '\n'
       << "battery.c2 = " << format_double(battery.c2) << '\n'
       << "filter.nu = " << format_double(nu) << '\n'
       << "filter.burn_in = "
       << (burn_in == BurnIn::Auto ? "auto" : burn_in == BurnIn::None ? "none" : std::to_string(burn_in_rows)) << '\n'
       << "filter.hold = " << (split_hold ? "split" : "zero") << '\n'
       << "filter.hold_passes = " << hold_passes << '\n'
       << "spline.knot_count = " << knot_count << '\n'
       << "solver.lambda1 = " << format_double(lambda1) << '\n'
       << "solver.lambda2 = " << format_double(lambda2) << '\n'
       << "solver.lambda1_grid = " << detail::join_doubles(lambda1_grid) << '\n'
       << "solver.lambda2_grid = " << detail::join_doubles(lambda2_grid) << '\n'
       << "solver.max_iters = " << max_iters << '\n'
       << "solver.abs_tol = " << format_double(abs_tol) << '\n'
       << "solver.rel_tol = " << format_double(rel_tol) << '\n'
       << "solver.rho = " << format_double(rho) << '\n'
       << "solver.rank_one = " << b(rank_one) << '\n'
       << "solver.refit = " << b(refit) << '\n'
       << "io.time_col = " << schema.time_col << '\n'
       << "io.current_col = " << schema.current_col << '\n'
       << "io.voltage_col = " << schema.voltage_col << '\n'
       << "io.soc_col = " << schema.soc_col << '\n'
       << "io.flip_current_sign = " << b(schema.flip_current_sign) << '\n'
       << "io.resample = " << b(schema.resample) << '\n'
       << "io.data = " << data << '\n'
       << "experiment.seed = " << seed << '\n'
       << "experiment.runs = " << runs << '\n'
       << "experiment.noise_std = " << format_double(noise_std) << '\n'
       << "experiment.duration_s = " << format_double(duration_s) << '\n'
       << "experiment.ts = " << format_double(ts) << '\n'
       << "experiment.amplitude_a = " << format_double(amplitude_a) << '\n'
       << "experiment.profile = " << profile << '\n';
    return os.str();
}

inline void validate(const RunConfig& c)
{
    const auto need = [](bool ok, const std::string& msg) { require(ok, ErrorCode::ConfigError, msg); };
    need(c.battery.capacity_ah > 0.0, "battery.capacity_ah must be > 0");
    need(!c.initial_soc || (*c.initial_soc >= 0.0 && *c.initial_soc <= 1.0), "battery.initial_soc must lie in [0, 1]");
    need(c.battery.r0 > 0.0 && c.battery.r1 > 0.0 && c.battery.r2 > 0.0, "battery resistances must be > 0");
    need(c.battery.c1 > 0.0 && c.battery.c2 > 0.0, "battery capacitances must be > 0");
    need(c.nu > 0.0, "filter.nu must be > 0");
    need(c.hold_passes >= 0, "filter.hold_passes must be >= 0");
    need(c.knot_count >= 2, "spline.knot_count must be >= 2");
    need(c.lambda1 >= 0.0 && c.lambda2 >= 0.0, "solver.lambda1 and solver.lambda2 must be >= 0");
    need(c.max_iters >= 1, "solver.max_iters must be >= 1");
    need(c.abs_tol > 0.0 && c.rel_tol > 0.0, "solver tolerances must be > 0");
    need(c.rho > 0.0, "solver.rho must be > 0");
    need(c.runs >= 1, "experiment.runs must be >= 1");
    need(c.noise_std >= 0.0, "experiment.noise_std must be >= 0");
    need(c.ts > 0.0 && c.duration_s >= 10.0 * c.ts, "experiment.duration_s must be at least 10 * experiment.ts");
    need(c.amplitude_a >= 0.0, "experiment.amplitude_a must be >= 0");
    need(c.profile == "drive" || c.profile == "step", "experiment.profile must be 'drive' or 'step'");
}

inline RunConfig parse_config(std::istream& in)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        fail(ErrorCode::ConfigError, std::string("config: ") + e.what());
    }

    RunConfig c;
    using Setter = std::function<void(const std::string& key, const std::string& value)>;
    const auto num = [](double& dst) -> Setter {
        return [&dst](const std::string& k, const std::string& v) { dst = detail::parse_number(k, v); };
    };
    const auto boolean = [](bool& dst) -> Setter {
        return [&dst](const std::string& k, const std::string& v) { dst = detail::parse_bool(k, v); };
    };
    const auto integer = [](int& dst) -> Setter {
        return [&dst](const std::string& k, const std::string& v) {
            dst = static_cast<int>(detail::parse_integer(k, v));
        };
    };
    const auto text = [](std::string& dst) -> Setter {
        return [&dst](const std::string&, const std::string& v) { dst = std::string(detail::trim(v)); };
    };
    const auto list = [](std::vector<double>& dst) -> Setter {
        return [&dst](const std::string& k, const std::string& v) { dst = detail::parse_list(k, v); };
    };

    const std::map<std::string, std::map<std::string, Setter>> schema{
        {"battery",
         {{"capacity_ah", num(c.battery.capacity_ah)},
          {"initial_soc", [&](const std::string& k, const std::string& v) {
               if (!detail::trim(v).empty()) {
                   c.initial_soc = detail::parse_number(k, v);
               }
           }},
          {"r0", num(c.battery.r0)},
          {"r1", num(c.battery.r1)},
          {"r2", num(c.battery.r2)},
          {"c1", num(c.battery.c1)},
          {"c2", num(c.battery.c2)}}},
        {"filter",
         {{"nu", num(c.nu)},
          {"burn_in", [&](const std::string& k, const std::string& v) {
               const std::string t(detail::trim(v));
               if (t == "auto") {
                   c.burn_in = BurnIn::Auto;
               } else if (t == "none") {
                   c.burn_in = BurnIn::None;
               } else {
                   c.burn_in = BurnIn::Fixed;
                   c.burn_in_rows = detail::parse_integer(k, t);
               }
           }},
          {"hold", [&](const std::string& k, const std::string& v) {
               const std::string t(detail::trim(v));
               require(t == "split" || t == "zero", ErrorCode::ConfigError, k + ": expected 'split' or 'zero'");
               c.split_hold = t == "split";
           }},
          {"hold_passes", integer(c.hold_passes)}}},
        {"spline", {{"knot_count", integer(c.knot_count)}}},
        {"solver",
         {{"lambda1", num(c.lambda1)},
          {"lambda2", num(c.lambda2)},
          {"lambda1_grid", list(c.lambda1_grid)},
          {"lambda2_grid", list(c.lambda2_grid)},
          {"max_iters", integer(c.max_iters)},
          {"abs_tol", num(c.abs_tol)},
          {"rel_tol", num(c.rel_tol)},
          {"rho", num(c.rho)},
          {"rank_one", boolean(c.rank_one)},
          {"refit", boolean(c.refit)}}},
        {"io",
         {{"time_col", text(c.schema.time_col)},
          {"current_col", text(c.schema.current_col)},
          {"voltage_col", text(c.schema.voltage_col)},
          {"soc_col", text(c.schema.soc_col)},
          {"flip_current_sign", boolean(c.schema.flip_current_sign)},
          {"resample", boolean(c.schema.resample)},
          {"data", text(c.data)},
          {"out", text(c.out)}}},
        {"experiment",
         {{"seed", [&](const std::string& k, const std::string& v) {
               const long long s = detail::parse_integer(k, v);
               require(s >= 0, ErrorCode::ConfigError, k + " must be >= 0");
               c.seed = static_cast<std::uint64_t>(s);
           }},
          {"runs", integer(c.runs)},
          {"noise_std", num(c.noise_std)},
          {"duration_s", num(c.duration_s)},
          {"ts", num(c.ts)},
          {"amplitude_a", num(c.amplitude_a)},
          {"profile", text(c.profile)}}},
    };

    for (const auto& [section, body] : tree) {
        const auto sec = schema.find(section);
        if (sec == schema.end()) {
            fail(ErrorCode::ConfigError, body.empty() ? "config: key '" + section + "' outside any section"
                                                      : "config: unknown section [" + section + "]");
        }
        for (const auto& [key, node] : body) {
            const auto setter = sec->second.find(key);
            require(setter != sec->second.end(), ErrorCode::ConfigError,
                    "config: unknown key '" + key + "' in [" + section + "]");
            setter->second(section + "." + key, node.get_value<std::string>());
        }
    }
    validate(c);
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::ConfigError, "cannot open config file " + path.string());
    return parse_config(in);
}

} // namespace ecmid
